//! Backward adjoint recursion and gradient assembly.
//!
//! For a minibatch of size B with per-sample residual r = y_L - F(ξ), the
//! adjoint λ runs the terminal-value recursion
//!
//! ```text
//! λ_L = 0,
//! λ_{l-1} = λ_l + h βₗᵀ λ_l + (h/B) Aᵀ(r ⊙ αₗ ⊙ σ'(A xₗ)),   l = L..1,
//! ```
//!
//! and the loss gradients on the parameter grid are
//!
//! ```text
//! G[α]ₗ = (1/B) Σ_k r⁽ᵏ⁾ ⊙ σ(A xₗ⁽ᵏ⁾),
//! G[β]ₗ = Σ_k λₗ⁽ᵏ⁾ (xₗ⁽ᵏ⁾)ᵀ,
//! G[γ]ₗ = Σ_k λₗ⁽ᵏ⁾.
//! ```
//!
//! The loss is the halved mean squared error (1/(2B)) Σ |y_L - F|², the
//! convention under which these formulas are the exact gradients (per unit
//! of depth time; see [`crate::gradcheck`] for the precise functional).
//!
//! [`general_adjoint_gradient`] is the same machinery for an arbitrary
//! right-hand side f(t, x, ω) with output matrix P and input matrix Q.

use crate::error::{Error, Result};
use crate::forward::Trajectory;
use crate::linalg::Mat;
use crate::model::{hadamard, Gradients, OdeNetSpec, ParamPath};

/// Per-sample adjoint states λₗ ∈ ℝⁿ for l = 0..L.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointPath {
    pub lambda: Vec<Vec<f64>>,
}

fn guard(v: &[f64], step: usize) -> Result<()> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::Divergence {
            step,
            sample: None,
            batch: None,
            epoch: None,
        });
    }
    Ok(())
}

pub fn adjoint_backward(
    spec: &OdeNetSpec,
    params: &ParamPath,
    traj: &Trajectory,
    residual: &[f64],
    batch_size: usize,
) -> Result<AdjointPath> {
    let steps = spec.steps();
    let (n, m) = (spec.input_dim(), spec.output_dim());
    if traj.x.len() != steps + 1 {
        return Err(Error::Shape(format!(
            "trajectory has {} states, expected {}",
            traj.x.len(),
            steps + 1
        )));
    }
    if residual.len() != m {
        return Err(Error::Shape(format!(
            "residual has length {}, expected {m}",
            residual.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::EmptyBatch("batch_size must be >= 1".into()));
    }
    let h = spec.step_size();
    let a = spec.readout();
    let act = spec.activation();
    let scale = h / batch_size as f64;

    let mut lambda = vec![vec![0.0f64; n]; steps + 1];
    for l in (1..=steps).rev() {
        let lam_l = lambda[l].clone();
        let drift = params.beta[l].matvec_transpose(&lam_l);
        let sig_prime = act.apply_deriv(&a.matvec(&traj.x[l]));
        let source_m = hadamard(residual, &hadamard(&params.alpha[l], &sig_prime)?)?;
        let source = a.matvec_transpose(&source_m);
        let prev = &mut lambda[l - 1];
        for i in 0..n {
            prev[i] = lam_l[i] + h * drift[i] + scale * source[i];
        }
        guard(prev, l - 1)?;
    }
    Ok(AdjointPath { lambda })
}

/// Halved mean squared error: (1/(2B)) Σ_k |pred_k - target_k|².
pub fn minibatch_loss(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyBatch("loss over an empty batch".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut acc = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::Shape("prediction/target length mismatch".into()));
        }
        for (a, b) in p.iter().zip(t) {
            let d = a - b;
            acc += d * d;
        }
    }
    Ok(acc / (2.0 * predictions.len() as f64))
}

/// Assemble minibatch gradients from per-sample trajectories, adjoints, and
/// residuals. Samples are reduced in index order.
pub fn assemble_gradients(
    spec: &OdeNetSpec,
    params: &ParamPath,
    trajs: &[Trajectory],
    adjoints: &[AdjointPath],
    residuals: &[Vec<f64>],
    batch_size: usize,
) -> Result<Gradients> {
    if trajs.len() != batch_size || adjoints.len() != batch_size || residuals.len() != batch_size {
        return Err(Error::Shape(format!(
            "batch_size {batch_size} but got {}/{}/{} trajectories/adjoints/residuals",
            trajs.len(),
            adjoints.len(),
            residuals.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::EmptyBatch("gradient of an empty batch".into()));
    }
    let steps = spec.steps();
    let n = spec.input_dim();
    let a = spec.readout();
    let act = spec.activation();
    let inv_b = 1.0 / batch_size as f64;

    let mut grads = Gradients::zeros_like(params);
    for k in 0..batch_size {
        let traj = &trajs[k];
        let adj = &adjoints[k];
        let res = &residuals[k];
        if traj.x.len() != steps + 1 || adj.lambda.len() != steps + 1 {
            return Err(Error::Shape(format!("sample {k} has wrong grid length")));
        }
        for l in 0..=steps {
            let xl = &traj.x[l];
            let sig = act.apply(&a.matvec(xl));
            let ga = &mut grads.g_alpha[l];
            for (g, (r, s)) in ga.iter_mut().zip(res.iter().zip(&sig)) {
                *g += inv_b * r * s;
            }
            let lam = &adj.lambda[l];
            let gb = grads.g_beta[l].data_mut();
            for i in 0..n {
                let li = lam[i];
                if li != 0.0 {
                    let row = &mut gb[i * n..(i + 1) * n];
                    for (g, xj) in row.iter_mut().zip(xl) {
                        *g += li * xj;
                    }
                }
            }
            for (g, li) in grads.g_gamma[l].iter_mut().zip(lam) {
                *g += li;
            }
        }
    }
    Ok(grads)
}

/// Right-hand side of a generic parameterized ODE x' = f(t, x, ω) together
/// with its Jacobians. Jacobian layout: entry (i, j) is ∂f_i/∂(arg)_j.
pub trait OdeRhs: Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn f(&self, t: f64, x: &[f64], w: &[f64]) -> Vec<f64>;
    fn jac_x(&self, t: f64, x: &[f64], w: &[f64]) -> Mat;
    fn jac_w(&self, t: f64, x: &[f64], w: &[f64]) -> Mat;
}

/// A generic ODE model: state dimension N, parameter dimension r, output
/// matrix P (m×N), input matrix Q (N×n), and the parameter path ω sampled on
/// the grid (L+1 vectors of length r).
pub struct GeneralOdeProblem {
    pub rhs: Box<dyn OdeRhs>,
    pub p: Mat,
    pub q: Mat,
    pub omega: Vec<Vec<f64>>,
}

impl GeneralOdeProblem {
    fn check_shapes(&self, steps: usize) -> Result<()> {
        let big_n = self.rhs.state_dim();
        let r = self.rhs.param_dim();
        if self.p.cols() != big_n {
            return Err(Error::Shape(format!(
                "P has {} columns, state dimension is {big_n}",
                self.p.cols()
            )));
        }
        if self.q.rows() != big_n {
            return Err(Error::Shape(format!(
                "Q has {} rows, state dimension is {big_n}",
                self.q.rows()
            )));
        }
        if self.omega.len() != steps + 1 {
            return Err(Error::Shape(format!(
                "omega has {} samples, expected {}",
                self.omega.len(),
                steps + 1
            )));
        }
        for (l, w) in self.omega.iter().enumerate() {
            if w.len() != r {
                return Err(Error::Shape(format!(
                    "omega[{l}] has length {}, expected {r}",
                    w.len()
                )));
            }
        }
        Ok(())
    }

    fn checked_f(&self, t: f64, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let out = self.rhs.f(t, x, w);
        if out.len() != self.rhs.state_dim() {
            return Err(Error::Shape(format!(
                "rhs callback returned length {}, declared state dimension {}",
                out.len(),
                self.rhs.state_dim()
            )));
        }
        Ok(out)
    }

    fn checked_jac_x(&self, t: f64, x: &[f64], w: &[f64]) -> Result<Mat> {
        let big_n = self.rhs.state_dim();
        let j = self.rhs.jac_x(t, x, w);
        if j.rows() != big_n || j.cols() != big_n {
            return Err(Error::Shape(format!(
                "jac_x callback returned {}x{}, declared {big_n}x{big_n}",
                j.rows(),
                j.cols()
            )));
        }
        Ok(j)
    }

    fn checked_jac_w(&self, t: f64, x: &[f64], w: &[f64]) -> Result<Mat> {
        let big_n = self.rhs.state_dim();
        let r = self.rhs.param_dim();
        let j = self.rhs.jac_w(t, x, w);
        if j.rows() != big_n || j.cols() != r {
            return Err(Error::Shape(format!(
                "jac_w callback returned {}x{}, declared {big_n}x{r}",
                j.rows(),
                j.cols()
            )));
        }
        Ok(j)
    }
}

/// Euler states of the generic problem, x₀ = Qξ.
pub fn general_forward(
    problem: &GeneralOdeProblem,
    xi: &[f64],
    t_horizon: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    problem.check_shapes(steps)?;
    if xi.len() != problem.q.cols() {
        return Err(Error::Shape(format!(
            "input has dimension {}, Q expects {}",
            xi.len(),
            problem.q.cols()
        )));
    }
    let h = t_horizon / steps as f64;
    let mut x = Vec::with_capacity(steps + 1);
    x.push(problem.q.matvec(xi));
    for l in 0..steps {
        let t = l as f64 * h;
        let fx = problem.checked_f(t, &x[l], &problem.omega[l])?;
        let next: Vec<f64> = x[l].iter().zip(&fx).map(|(a, b)| a + h * b).collect();
        guard(&next, l + 1)?;
        x.push(next);
    }
    Ok(x)
}

/// Adjoint gradient of the halved terminal loss ½|P x(T) - target|² with
/// respect to ω, on the grid: solves the terminal-value adjoint recursion
/// λ_L = Pᵀ(P x_L - target), λ_{l-1} = λ_l + h ∇ₓfᵀ(t_l, x_l, ω_l) λ_l and
/// returns g_l = ∇_ω fᵀ(t_l, x_l, ω_l) λ_l for l = 0..L.
pub fn general_adjoint_gradient(
    problem: &GeneralOdeProblem,
    xi: &[f64],
    target: &[f64],
    t_horizon: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if target.len() != problem.p.rows() {
        return Err(Error::Shape(format!(
            "target has dimension {}, P produces {}",
            target.len(),
            problem.p.rows()
        )));
    }
    let x = general_forward(problem, xi, t_horizon, steps)?;
    let h = t_horizon / steps as f64;

    let y_last = problem.p.matvec(&x[steps]);
    let residual: Vec<f64> = y_last.iter().zip(target).map(|(a, b)| a - b).collect();
    let mut lambda = problem.p.matvec_transpose(&residual);

    let mut grads = vec![Vec::new(); steps + 1];
    for l in (0..=steps).rev() {
        let t = l as f64 * h;
        let jw = problem.checked_jac_w(t, &x[l], &problem.omega[l])?;
        grads[l] = jw.matvec_transpose(&lambda);
        if l > 0 {
            let jx = problem.checked_jac_x(t, &x[l], &problem.omega[l])?;
            let pull = jx.matvec_transpose(&lambda);
            for (li, p) in lambda.iter_mut().zip(&pull) {
                *li += h * p;
            }
            guard(&lambda, l - 1)?;
        }
    }
    Ok(grads)
}

/// The specific model expressed as a generic problem on the stacked state
/// (x, y) ∈ ℝⁿ⁺ᵐ with ω_l = (α_l, vec β_l, γ_l), P = [0 I_m], Q = [I_n; 0].
pub struct StackedOdeRhs {
    n: usize,
    m: usize,
    a: Mat,
    activation: crate::activation::Activation,
}

impl StackedOdeRhs {
    fn split<'w>(&self, w: &'w [f64]) -> (&'w [f64], &'w [f64], &'w [f64]) {
        let n = self.n;
        let m = self.m;
        (&w[..m], &w[m..m + n * n], &w[m + n * n..m + n * n + n])
    }
}

impl OdeRhs for StackedOdeRhs {
    fn state_dim(&self) -> usize {
        self.n + self.m
    }

    fn param_dim(&self) -> usize {
        self.m + self.n * self.n + self.n
    }

    fn f(&self, _t: f64, z: &[f64], w: &[f64]) -> Vec<f64> {
        let (alpha, beta, gamma) = self.split(w);
        let x = &z[..self.n];
        let mut out = Vec::with_capacity(self.n + self.m);
        for i in 0..self.n {
            let mut acc = gamma[i];
            let row = &beta[i * self.n..(i + 1) * self.n];
            for (b, xj) in row.iter().zip(x) {
                acc += b * xj;
            }
            out.push(acc);
        }
        let ax = self.a.matvec(x);
        for i in 0..self.m {
            out.push(alpha[i] * self.activation.eval(ax[i]));
        }
        out
    }

    fn jac_x(&self, _t: f64, z: &[f64], w: &[f64]) -> Mat {
        let (alpha, beta, _) = self.split(w);
        let x = &z[..self.n];
        let big_n = self.n + self.m;
        let mut j = Mat::zeros(big_n, big_n);
        for i in 0..self.n {
            for k in 0..self.n {
                j.set(i, k, beta[i * self.n + k]);
            }
        }
        let ax = self.a.matvec(x);
        for i in 0..self.m {
            let c = alpha[i] * self.activation.deriv(ax[i]);
            for k in 0..self.n {
                j.set(self.n + i, k, c * self.a.get(i, k));
            }
        }
        j
    }

    fn jac_w(&self, _t: f64, z: &[f64], _w: &[f64]) -> Mat {
        let x = &z[..self.n];
        let (n, m) = (self.n, self.m);
        let big_n = n + m;
        let r = m + n * n + n;
        let mut j = Mat::zeros(big_n, r);
        // x-rows: ∂(βx+γ)_i/∂β_{ik} = x_k, ∂/∂γ_i = 1.
        for i in 0..n {
            for k in 0..n {
                j.set(i, m + i * n + k, x[k]);
            }
            j.set(i, m + n * n + i, 1.0);
        }
        // y-rows: ∂(α ⊙ σ(Ax))_i/∂α_i = σ(Ax)_i.
        let ax = self.a.matvec(x);
        for i in 0..m {
            j.set(n + i, i, self.activation.eval(ax[i]));
        }
        j
    }
}

/// Build the stacked-state generic problem equivalent to `(spec, params)`.
/// With batch size 1 its adjoint gradients coincide with
/// [`assemble_gradients`] up to roundoff.
pub fn stacked_ode_problem(spec: &OdeNetSpec, params: &ParamPath) -> GeneralOdeProblem {
    let (n, m) = (spec.input_dim(), spec.output_dim());
    let mut p = Mat::zeros(m, n + m);
    for i in 0..m {
        p.set(i, n + i, 1.0);
    }
    let mut q = Mat::zeros(n + m, n);
    for i in 0..n {
        q.set(i, i, 1.0);
    }
    let omega = params
        .alpha
        .iter()
        .zip(params.beta.iter().zip(&params.gamma))
        .map(|(a, (b, g))| {
            let mut w = Vec::with_capacity(m + n * n + n);
            w.extend_from_slice(a);
            w.extend_from_slice(b.data());
            w.extend_from_slice(g);
            w
        })
        .collect();
    GeneralOdeProblem {
        rhs: Box::new(StackedOdeRhs {
            n,
            m,
            a: spec.readout().clone(),
            activation: spec.activation(),
        }),
        p,
        q,
        omega,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::forward::euler_forward;

    fn scalar_spec(steps: usize, act: Activation) -> OdeNetSpec {
        OdeNetSpec::new(1, 1, Mat::from_rows(&[vec![1.0]]), 1.0, steps, act).unwrap()
    }

    fn hand_example() -> (OdeNetSpec, ParamPath, Trajectory) {
        // n = m = 1, A = [1], L = 2, h = 0.5, relu, alpha = 1, beta = 0,
        // xi = 1, F = 0: x = 1 throughout, y_L = 1, residual = 1.
        let spec = scalar_spec(2, Activation::Relu);
        let mut params = ParamPath::zeros(&spec);
        for a in params.alpha.iter_mut() {
            a[0] = 1.0;
        }
        let traj = euler_forward(&spec, &params, &[1.0]).unwrap();
        (spec, params, traj)
    }

    #[test]
    fn hand_adjoint_recursion() {
        let (spec, params, traj) = hand_example();
        let adj = adjoint_backward(&spec, &params, &traj, &[1.0], 1).unwrap();
        assert_eq!(adj.lambda, vec![vec![1.0], vec![0.5], vec![0.0]]);
    }

    #[test]
    fn zero_residual_means_zero_adjoint_and_gradients() {
        let (spec, params, traj) = hand_example();
        let adj = adjoint_backward(&spec, &params, &traj, &[0.0], 1).unwrap();
        assert!(adj.lambda.iter().all(|l| l[0] == 0.0));
        let grads = assemble_gradients(
            &spec,
            &params,
            &[traj.clone()],
            &[adj],
            &[vec![0.0]],
            1,
        )
        .unwrap();
        assert!(grads.g_alpha.iter().all(|g| g[0] == 0.0));
        assert!(grads.g_beta.iter().all(|g| g.frobenius() == 0.0));
        assert!(grads.g_gamma.iter().all(|g| g[0] == 0.0));
    }

    #[test]
    fn zero_beta_matches_absent_drift() {
        let (spec, params, traj) = hand_example();
        let lam = adjoint_backward(&spec, &params, &traj, &[1.0], 1).unwrap();
        let mut scaled = params.clone();
        for b in scaled.beta.iter_mut() {
            *b = b.scale(0.0);
        }
        let lam2 = adjoint_backward(&spec, &scaled, &traj, &[1.0], 1).unwrap();
        assert_eq!(lam, lam2);
    }

    #[test]
    fn hand_gradient_assembly() {
        let (spec, params, traj) = hand_example();
        let adj = adjoint_backward(&spec, &params, &traj, &[1.0], 1).unwrap();
        let grads =
            assemble_gradients(&spec, &params, &[traj], &[adj], &[vec![1.0]], 1).unwrap();
        assert_eq!(
            grads.g_gamma,
            vec![vec![1.0], vec![0.5], vec![0.0]]
        );
        for (l, expect) in [(0usize, 1.0), (1, 0.5), (2, 0.0)] {
            assert_eq!(grads.g_beta[l].get(0, 0), expect);
        }
        assert_eq!(grads.g_alpha, vec![vec![1.0], vec![1.0], vec![1.0]]);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(
            minibatch_loss(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(),
            0.0
        );
        assert_eq!(minibatch_loss(&[vec![1.0]], &[vec![0.0]]).unwrap(), 0.5);
        // residual norms 1 and 2 over two samples: (1 + 4) / 4
        assert_eq!(
            minibatch_loss(&[vec![1.0], vec![2.0]], &[vec![0.0], vec![0.0]]).unwrap(),
            1.25
        );
        assert!(minibatch_loss(&[], &[]).is_err());
    }

    #[test]
    fn residual_scaling_scales_gradients_exactly() {
        let a = Mat::from_rows(&[vec![0.8, -0.4], vec![0.1, 1.2]]);
        let spec = OdeNetSpec::new(2, 2, a, 1.0, 6, Activation::Tanh).unwrap();
        let mut params = ParamPath::constant(&spec, 0.3);
        for (l, b) in params.beta.iter_mut().enumerate() {
            b.set(0, 1, -0.2 + 0.01 * l as f64);
        }
        let xi = vec![0.5, -0.7];
        let traj = euler_forward(&spec, &params, &xi).unwrap();
        let res = vec![0.4, -0.9];
        // powers of two keep the scaling bitwise exact
        let res2: Vec<f64> = res.iter().map(|r| 2.0 * r).collect();
        let g1 = {
            let adj = adjoint_backward(&spec, &params, &traj, &res, 1).unwrap();
            assemble_gradients(&spec, &params, &[traj.clone()], &[adj], &[res.clone()], 1).unwrap()
        };
        let g2 = {
            let adj = adjoint_backward(&spec, &params, &traj, &res2, 1).unwrap();
            assemble_gradients(&spec, &params, &[traj], &[adj], &[res2], 1).unwrap()
        };
        for l in 0..g1.len() {
            for i in 0..2 {
                assert_eq!(g2.g_alpha[l][i], 2.0 * g1.g_alpha[l][i]);
                assert_eq!(g2.g_gamma[l][i], 2.0 * g1.g_gamma[l][i]);
            }
            for (x, y) in g1.g_beta[l].data().iter().zip(g2.g_beta[l].data()) {
                assert_eq!(*y, 2.0 * x);
            }
        }
    }

    #[test]
    fn batch_gradients_are_sums_and_means_of_solo_terms() {
        let spec = scalar_spec(4, Activation::Sigmoid);
        let mut params = ParamPath::constant(&spec, 0.5);
        for g in params.gamma.iter_mut() {
            g[0] = -0.1;
        }
        let xis = [vec![0.3], vec![-1.1]];
        let targets = [vec![0.2], vec![0.9]];

        let mut solo = Vec::new();
        for (xi, t) in xis.iter().zip(&targets) {
            let traj = euler_forward(&spec, &params, xi).unwrap();
            let res: Vec<f64> = traj.y.last().unwrap().iter().zip(t).map(|(y, f)| y - f).collect();
            // per-sample quantities at batch size 1
            let adj = adjoint_backward(&spec, &params, &traj, &res, 1).unwrap();
            let g = assemble_gradients(&spec, &params, &[traj], &[adj], &[res], 1).unwrap();
            solo.push(g);
        }

        let mut trajs = Vec::new();
        let mut adjs = Vec::new();
        let mut ress = Vec::new();
        for (xi, t) in xis.iter().zip(&targets) {
            let traj = euler_forward(&spec, &params, xi).unwrap();
            let res: Vec<f64> = traj.y.last().unwrap().iter().zip(t).map(|(y, f)| y - f).collect();
            let adj = adjoint_backward(&spec, &params, &traj, &res, 2).unwrap();
            trajs.push(traj);
            adjs.push(adj);
            ress.push(res);
        }
        let batched = assemble_gradients(&spec, &params, &trajs, &adjs, &ress, 2).unwrap();

        for l in 0..batched.len() {
            // alpha averages, beta/gamma sum; the per-sample lambda already
            // carries the 1/B factor, so summing the halved solo terms works.
            let want_alpha = 0.5 * (solo[0].g_alpha[l][0] + solo[1].g_alpha[l][0]);
            assert!((batched.g_alpha[l][0] - want_alpha).abs() < 1e-15);
            let want_gamma = 0.5 * (solo[0].g_gamma[l][0] + solo[1].g_gamma[l][0]);
            assert!((batched.g_gamma[l][0] - want_gamma).abs() < 1e-15);
            let want_beta = 0.5 * (solo[0].g_beta[l].get(0, 0) + solo[1].g_beta[l].get(0, 0));
            assert!((batched.g_beta[l].get(0, 0) - want_beta).abs() < 1e-15);
        }
    }

    #[test]
    fn general_problem_with_zero_residual_has_zero_gradient() {
        let spec = scalar_spec(3, Activation::Tanh);
        let params = ParamPath::constant(&spec, 0.4);
        let problem = stacked_ode_problem(&spec, &params);
        let xi = [0.8];
        let x = general_forward(&problem, &xi, 1.0, 3).unwrap();
        let y = problem.p.matvec(x.last().unwrap());
        let grads = general_adjoint_gradient(&problem, &xi, &y, 1.0, 3).unwrap();
        assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn constant_field_hand_solve() {
        // f(t, x, omega) = omega with N = r: lambda is constant
        // Pᵀ(P x_L - target) and every g_l equals it.
        struct ConstField(usize);
        impl OdeRhs for ConstField {
            fn state_dim(&self) -> usize {
                self.0
            }
            fn param_dim(&self) -> usize {
                self.0
            }
            fn f(&self, _t: f64, _x: &[f64], w: &[f64]) -> Vec<f64> {
                w.to_vec()
            }
            fn jac_x(&self, _t: f64, _x: &[f64], _w: &[f64]) -> Mat {
                Mat::zeros(self.0, self.0)
            }
            fn jac_w(&self, _t: f64, _x: &[f64], _w: &[f64]) -> Mat {
                Mat::identity(self.0)
            }
        }
        let n = 2;
        let steps = 4;
        let problem = GeneralOdeProblem {
            rhs: Box::new(ConstField(n)),
            p: Mat::identity(n),
            q: Mat::identity(n),
            omega: vec![vec![0.3, -0.2]; steps + 1],
        };
        let xi = [1.0, 2.0];
        let target = [0.0, 0.0];
        let x = general_forward(&problem, &xi, 1.0, steps).unwrap();
        let expected: Vec<f64> = x[steps].iter().zip(&target).map(|(a, b)| a - b).collect();
        let grads = general_adjoint_gradient(&problem, &xi, &target, 1.0, steps).unwrap();
        for g in &grads {
            for (gi, ei) in g.iter().zip(&expected) {
                assert!((gi - ei).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stacked_problem_reproduces_assembled_gradients() {
        let a = Mat::from_rows(&[vec![0.6, -0.3, 0.2], vec![0.1, 0.9, -0.5]]);
        let spec = OdeNetSpec::new(3, 2, a, 1.3, 7, Activation::Sigmoid).unwrap();
        let mut params = ParamPath::constant(&spec, 0.25);
        for (l, b) in params.beta.iter_mut().enumerate() {
            b.set(2, 0, -0.4 + 0.03 * l as f64);
            b.set(1, 2, 0.2);
        }
        let xi = vec![0.4, -0.2, 0.7];
        let target = vec![0.1, -0.6];

        let traj = euler_forward(&spec, &params, &xi).unwrap();
        let res: Vec<f64> = traj
            .y
            .last()
            .unwrap()
            .iter()
            .zip(&target)
            .map(|(y, f)| y - f)
            .collect();
        let adj = adjoint_backward(&spec, &params, &traj, &res, 1).unwrap();
        let grads = assemble_gradients(&spec, &params, &[traj], &[adj], &[res], 1).unwrap();

        let problem = stacked_ode_problem(&spec, &params);
        let general = general_adjoint_gradient(
            &problem,
            &xi,
            &target,
            spec.t_horizon(),
            spec.steps(),
        )
        .unwrap();

        let (n, m) = (3, 2);
        for l in 0..=spec.steps() {
            let w = &general[l];
            for i in 0..m {
                let rel = (w[i] - grads.g_alpha[l][i]).abs()
                    / grads.g_alpha[l][i].abs().max(1e-12);
                assert!(rel <= 1e-10, "alpha[{l}][{i}]");
            }
            for i in 0..n * n {
                let rel = (w[m + i] - grads.g_beta[l].data()[i]).abs()
                    / grads.g_beta[l].data()[i].abs().max(1e-12);
                assert!(rel <= 1e-10, "beta[{l}][{i}]");
            }
            for i in 0..n {
                let rel = (w[m + n * n + i] - grads.g_gamma[l][i]).abs()
                    / grads.g_gamma[l][i].abs().max(1e-12);
                assert!(rel <= 1e-10, "gamma[{l}][{i}]");
            }
        }
    }

    #[test]
    fn callback_shape_violations_are_caught() {
        struct BadRhs;
        impl OdeRhs for BadRhs {
            fn state_dim(&self) -> usize {
                2
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn f(&self, _t: f64, _x: &[f64], _w: &[f64]) -> Vec<f64> {
                vec![0.0; 3] // wrong length
            }
            fn jac_x(&self, _t: f64, _x: &[f64], _w: &[f64]) -> Mat {
                Mat::zeros(2, 2)
            }
            fn jac_w(&self, _t: f64, _x: &[f64], _w: &[f64]) -> Mat {
                Mat::zeros(2, 1)
            }
        }
        let problem = GeneralOdeProblem {
            rhs: Box::new(BadRhs),
            p: Mat::identity(2),
            q: Mat::identity(2),
            omega: vec![vec![0.0]; 3],
        };
        assert!(matches!(
            general_forward(&problem, &[0.0, 0.0], 1.0, 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn permuting_the_batch_permutes_nothing() {
        let spec = scalar_spec(5, Activation::Tanh);
        let params = ParamPath::constant(&spec, 0.3);
        let xis = [vec![0.1], vec![0.5], vec![-0.4]];
        let ts = [vec![0.3], vec![-0.2], vec![0.6]];
        let grads_of = |order: &[usize]| {
            let mut trajs = Vec::new();
            let mut adjs = Vec::new();
            let mut ress = Vec::new();
            for &k in order {
                let traj = euler_forward(&spec, &params, &xis[k]).unwrap();
                let res: Vec<f64> = traj
                    .y
                    .last()
                    .unwrap()
                    .iter()
                    .zip(&ts[k])
                    .map(|(y, f)| y - f)
                    .collect();
                adjs.push(adjoint_backward(&spec, &params, &traj, &res, 3).unwrap());
                trajs.push(traj);
                ress.push(res);
            }
            assemble_gradients(&spec, &params, &trajs, &adjs, &ress, 3).unwrap()
        };
        let g1 = grads_of(&[0, 1, 2]);
        let g2 = grads_of(&[2, 0, 1]);
        for l in 0..g1.len() {
            assert!((g1.g_alpha[l][0] - g2.g_alpha[l][0]).abs() < 1e-15);
            assert!((g1.g_gamma[l][0] - g2.g_gamma[l][0]).abs() < 1e-15);
        }
    }
}
