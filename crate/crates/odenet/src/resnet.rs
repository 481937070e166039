//! Discrete residual network: forward recursion and backpropagation.
//!
//! The specific architecture mirrors the continuous model but applies the
//! readout to the post-update state:
//!
//! ```text
//! x⁽ˡ⁾ = x⁽ˡ⁻¹⁾ + β⁽ˡ⁾x⁽ˡ⁻¹⁾ + γ⁽ˡ⁾,
//! y⁽ˡ⁾ = y⁽ˡ⁻¹⁾ + α⁽ˡ⁾ ⊙ σ(A x⁽ˡ⁾),        l = 1..L,
//! ```
//!
//! which is the form the exact shallow-net compiler in [`crate::uap`]
//! targets. Layers are indexed 1..L in the recursions above and stored
//! 0-based, so `alpha[i]` holds α⁽ⁱ⁺¹⁾.
//!
//! Backpropagation is provided for the general residual system
//! x⁽ˡ⁺¹⁾ = x⁽ˡ⁾ + f⁽ˡ⁾(x⁽ˡ⁾, ω⁽ˡ⁾) with output P x⁽ᴸ⁾ and halved
//! minibatch loss; it is the exact chain rule on the discrete recursion,
//! so finite differences agree with it to roundoff.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::hadamard;

/// Parameters of the specific residual architecture. `depth()` layers, each
/// carrying α⁽ˡ⁾ ∈ ℝᵐ, β⁽ˡ⁾ ∈ ℝⁿˣⁿ, γ⁽ˡ⁾ ∈ ℝⁿ, plus the shared readout A
/// and activation.
#[derive(Clone, Debug)]
pub struct ResNetParams {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Mat>,
    pub gamma: Vec<Vec<f64>>,
    pub a: Mat,
    pub activation: Activation,
}

impl ResNetParams {
    pub fn depth(&self) -> usize {
        self.alpha.len()
    }

    pub fn input_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.input_dim(), self.output_dim());
        let depth = self.depth();
        if self.beta.len() != depth || self.gamma.len() != depth {
            return Err(Error::Shape(format!(
                "{} alpha / {} beta / {} gamma layers",
                depth,
                self.beta.len(),
                self.gamma.len()
            )));
        }
        for l in 0..depth {
            if self.alpha[l].len() != m {
                return Err(Error::Shape(format!("alpha[{l}] has wrong length")));
            }
            if self.beta[l].rows() != n || self.beta[l].cols() != n {
                return Err(Error::Shape(format!("beta[{l}] has wrong shape")));
            }
            if self.gamma[l].len() != n {
                return Err(Error::Shape(format!("gamma[{l}] has wrong length")));
            }
            if self.alpha[l].iter().any(|v| !v.is_finite())
                || !self.beta[l].is_finite()
                || self.gamma[l].iter().any(|v| !v.is_finite())
            {
                return Err(Error::InvalidArgument(format!("layer {l} not finite")));
            }
        }
        Ok(())
    }
}

fn guard(v: &[f64], step: usize) -> Result<()> {
    if v.iter().any(|c| !c.is_finite() || c.abs() > 1e100) {
        return Err(Error::Divergence {
            step,
            sample: None,
            batch: None,
            epoch: None,
        });
    }
    Ok(())
}

/// All states x⁽⁰⁾..x⁽ᴸ⁾ and outputs y⁽⁰⁾..y⁽ᴸ⁾; the prediction is y⁽ᴸ⁾.
pub fn resnet_forward(
    params: &ResNetParams,
    xi: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    params.validate()?;
    let n = params.input_dim();
    if xi.len() != n {
        return Err(Error::Shape(format!(
            "input has dimension {}, network expects {n}",
            xi.len()
        )));
    }
    let mut xs = Vec::with_capacity(params.depth() + 1);
    let mut ys = Vec::with_capacity(params.depth() + 1);
    xs.push(xi.to_vec());
    ys.push(vec![0.0; params.output_dim()]);
    for l in 0..params.depth() {
        let prev = &xs[l];
        let drift = params.beta[l].matvec(prev);
        let mut x_next = prev.clone();
        for ((x, d), g) in x_next.iter_mut().zip(&drift).zip(&params.gamma[l]) {
            *x += d + g;
        }
        guard(&x_next, l + 1)?;
        // readout reads the post-update state
        let sig = params.activation.apply(&params.a.matvec(&x_next));
        let inc = hadamard(&params.alpha[l], &sig)?;
        let mut y_next = ys[l].clone();
        for (y, dy) in y_next.iter_mut().zip(&inc) {
            *y += dy;
        }
        guard(&y_next, l + 1)?;
        xs.push(x_next);
        ys.push(y_next);
    }
    Ok((xs, ys))
}

pub fn resnet_predict(params: &ResNetParams, xi: &[f64]) -> Result<Vec<f64>> {
    let (_, ys) = resnet_forward(params, xi)?;
    Ok(ys.into_iter().next_back().expect("depth+1 outputs"))
}

/// Per-layer residual map f⁽ˡ⁾(x, ω⁽ˡ⁾) with its Jacobians. Jacobian layout:
/// entry (i, j) is ∂f_i/∂(arg)_j.
pub trait LayerMap: Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self, layer: usize) -> usize;
    fn f(&self, layer: usize, x: &[f64], w: &[f64]) -> Vec<f64>;
    fn jac_x(&self, layer: usize, x: &[f64], w: &[f64]) -> Mat;
    fn jac_w(&self, layer: usize, x: &[f64], w: &[f64]) -> Mat;
}

/// General residual system: depth L, per-layer maps and parameters, output
/// matrix P (m×N) and input matrix Q (N×n).
pub struct GeneralResNetProblem {
    pub layers: Box<dyn LayerMap>,
    pub depth: usize,
    pub p: Mat,
    pub q: Mat,
    pub omega: Vec<Vec<f64>>,
}

impl GeneralResNetProblem {
    fn check_shapes(&self) -> Result<()> {
        let big_n = self.layers.state_dim();
        if self.p.cols() != big_n || self.q.rows() != big_n {
            return Err(Error::Shape(format!(
                "P is {}x{} and Q is {}x{}, state dimension is {big_n}",
                self.p.rows(),
                self.p.cols(),
                self.q.rows(),
                self.q.cols()
            )));
        }
        if self.omega.len() != self.depth {
            return Err(Error::Shape(format!(
                "{} parameter vectors for depth {}",
                self.omega.len(),
                self.depth
            )));
        }
        for (l, w) in self.omega.iter().enumerate() {
            if w.len() != self.layers.param_dim(l) {
                return Err(Error::Shape(format!(
                    "omega[{l}] has length {}, layer declares {}",
                    w.len(),
                    self.layers.param_dim(l)
                )));
            }
        }
        Ok(())
    }

    fn checked_f(&self, layer: usize, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let out = self.layers.f(layer, x, w);
        if out.len() != self.layers.state_dim() {
            return Err(Error::Shape(format!(
                "layer {layer} map returned length {}",
                out.len()
            )));
        }
        Ok(out)
    }
}

/// States x⁽⁰⁾..x⁽ᴸ⁾ of the general system, x⁽⁰⁾ = Qξ.
pub fn general_resnet_forward(
    problem: &GeneralResNetProblem,
    xi: &[f64],
) -> Result<Vec<Vec<f64>>> {
    problem.check_shapes()?;
    if xi.len() != problem.q.cols() {
        return Err(Error::Shape(format!(
            "input has dimension {}, Q expects {}",
            xi.len(),
            problem.q.cols()
        )));
    }
    let mut xs = Vec::with_capacity(problem.depth + 1);
    xs.push(problem.q.matvec(xi));
    for l in 0..problem.depth {
        let fx = problem.checked_f(l, &xs[l], &problem.omega[l])?;
        let next: Vec<f64> = xs[l].iter().zip(&fx).map(|(a, b)| a + b).collect();
        guard(&next, l + 1)?;
        xs.push(next);
    }
    Ok(xs)
}

/// Halved minibatch loss of the general system:
/// (1/(2B)) Σ_k |P x⁽ᴸ'ᵏ⁾ - target_k|².
pub fn resnet_loss(
    problem: &GeneralResNetProblem,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch("loss over an empty batch".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape("inputs/targets length mismatch".into()));
    }
    let mut acc = 0.0;
    for (xi, t) in inputs.iter().zip(targets) {
        let xs = general_resnet_forward(problem, xi)?;
        let y = problem.p.matvec(xs.last().unwrap());
        for (a, b) in y.iter().zip(t) {
            let d = a - b;
            acc += d * d;
        }
    }
    Ok(acc / (2.0 * inputs.len() as f64))
}

/// Single-sample backward recursion with the batch divisor applied to the
/// terminal condition:
///
/// ```text
/// λ⁽ᴸ⁾ = (1/B) Pᵀ(P x⁽ᴸ⁾ - target),
/// λ⁽ˡ⁾ = λ⁽ˡ⁺¹⁾ + ∇ₓf⁽ˡ⁾ᵀ λ⁽ˡ⁺¹⁾,
/// ∂e/∂ω⁽ˡ⁾ contribution = ∇_ω f⁽ˡ⁾ᵀ λ⁽ˡ⁺¹⁾,     l = L-1..0.
/// ```
pub fn resnet_backprop_sample(
    problem: &GeneralResNetProblem,
    xi: &[f64],
    target: &[f64],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    if batch_size == 0 {
        return Err(Error::EmptyBatch("batch_size must be >= 1".into()));
    }
    if target.len() != problem.p.rows() {
        return Err(Error::Shape(format!(
            "target has dimension {}, P produces {}",
            target.len(),
            problem.p.rows()
        )));
    }
    let xs = general_resnet_forward(problem, xi)?;
    let y = problem.p.matvec(&xs[problem.depth]);
    let inv_b = 1.0 / batch_size as f64;
    let residual: Vec<f64> = y.iter().zip(target).map(|(a, b)| inv_b * (a - b)).collect();
    let mut lambda = problem.p.matvec_transpose(&residual);

    let mut grads = vec![Vec::new(); problem.depth];
    for l in (0..problem.depth).rev() {
        let jw = problem.layers.jac_w(l, &xs[l], &problem.omega[l]);
        if jw.rows() != problem.layers.state_dim()
            || jw.cols() != problem.layers.param_dim(l)
        {
            return Err(Error::Shape(format!("layer {l} jac_w has wrong shape")));
        }
        grads[l] = jw.matvec_transpose(&lambda);
        let jx = problem.layers.jac_x(l, &xs[l], &problem.omega[l]);
        if jx.rows() != problem.layers.state_dim() || jx.cols() != problem.layers.state_dim() {
            return Err(Error::Shape(format!("layer {l} jac_x has wrong shape")));
        }
        let pull = jx.matvec_transpose(&lambda);
        for (li, p) in lambda.iter_mut().zip(&pull) {
            *li += p;
        }
        guard(&lambda, l)?;
    }
    Ok(grads)
}

/// Minibatch gradient: per-sample recursions summed in index order.
pub fn resnet_backprop(
    problem: &GeneralResNetProblem,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch("backprop over an empty batch".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape("inputs/targets length mismatch".into()));
    }
    let b = inputs.len();
    let mut total: Vec<Vec<f64>> = (0..problem.depth)
        .map(|l| vec![0.0; problem.layers.param_dim(l)])
        .collect();
    for (k, (xi, t)) in inputs.iter().zip(targets).enumerate() {
        let g = resnet_backprop_sample(problem, xi, t, b).map_err(|e| e.with_sample(k))?;
        for (tot, gi) in total.iter_mut().zip(&g) {
            for (a, b) in tot.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    Ok(total)
}

/// The specific architecture as a general problem on the stacked state
/// (x, y) ∈ ℝⁿ⁺ᵐ with ω⁽ˡ⁾ = (α⁽ˡ⁾, vec β⁽ˡ⁾, γ⁽ˡ⁾). Forward states and the
/// prediction P x⁽ᴸ⁾ coincide with [`resnet_forward`]; its backprop therefore
/// differentiates the same loss.
pub struct StackedResNetLayers {
    n: usize,
    m: usize,
    a: Mat,
    activation: Activation,
}

impl StackedResNetLayers {
    fn split<'w>(&self, w: &'w [f64]) -> (&'w [f64], &'w [f64], &'w [f64]) {
        let (n, m) = (self.n, self.m);
        (&w[..m], &w[m..m + n * n], &w[m + n * n..m + n * n + n])
    }

    /// u = x + βx + γ, the post-update state the readout sees.
    fn post_state(&self, x: &[f64], beta: &[f64], gamma: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut u = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = x[i] + gamma[i];
            let row = &beta[i * n..(i + 1) * n];
            for (b, xj) in row.iter().zip(x) {
                acc += b * xj;
            }
            u.push(acc);
        }
        u
    }
}

impl LayerMap for StackedResNetLayers {
    fn state_dim(&self) -> usize {
        self.n + self.m
    }

    fn param_dim(&self, _layer: usize) -> usize {
        self.m + self.n * self.n + self.n
    }

    fn f(&self, _layer: usize, z: &[f64], w: &[f64]) -> Vec<f64> {
        let (alpha, beta, gamma) = self.split(w);
        let x = &z[..self.n];
        let u = self.post_state(x, beta, gamma);
        let mut out = Vec::with_capacity(self.n + self.m);
        for i in 0..self.n {
            out.push(u[i] - x[i]);
        }
        let au = self.a.matvec(&u);
        for i in 0..self.m {
            out.push(alpha[i] * self.activation.eval(au[i]));
        }
        out
    }

    fn jac_x(&self, _layer: usize, z: &[f64], w: &[f64]) -> Mat {
        let (alpha, beta, gamma) = self.split(w);
        let x = &z[..self.n];
        let (n, m) = (self.n, self.m);
        let mut j = Mat::zeros(n + m, n + m);
        for i in 0..n {
            for k in 0..n {
                j.set(i, k, beta[i * n + k]);
            }
        }
        // ∂y-increment/∂x = diag(α ⊙ σ'(Au)) A (I + β)
        let u = self.post_state(x, beta, gamma);
        let au = self.a.matvec(&u);
        for i in 0..m {
            let c = alpha[i] * self.activation.deriv(au[i]);
            for k in 0..n {
                // (A (I + β))_{ik} = A_{ik} + Σ_j A_{ij} β_{jk}
                let mut aik = self.a.get(i, k);
                for jj in 0..n {
                    aik += self.a.get(i, jj) * beta[jj * n + k];
                }
                j.set(n + i, k, c * aik);
            }
        }
        j
    }

    fn jac_w(&self, _layer: usize, z: &[f64], w: &[f64]) -> Mat {
        let (alpha, beta, gamma) = self.split(w);
        let x = &z[..self.n];
        let (n, m) = (self.n, self.m);
        let r = m + n * n + n;
        let mut j = Mat::zeros(n + m, r);
        for i in 0..n {
            for k in 0..n {
                j.set(i, m + i * n + k, x[k]);
            }
            j.set(i, m + n * n + i, 1.0);
        }
        let u = self.post_state(x, beta, gamma);
        let au = self.a.matvec(&u);
        for i in 0..m {
            let si = self.activation.eval(au[i]);
            j.set(n + i, i, si);
            // y-increment also depends on β and γ through u
            let c = alpha[i] * self.activation.deriv(au[i]);
            for jj in 0..n {
                let aij = self.a.get(i, jj);
                if aij == 0.0 {
                    continue;
                }
                for k in 0..n {
                    let cur = j.get(n + i, m + jj * n + k);
                    j.set(n + i, m + jj * n + k, cur + c * aij * x[k]);
                }
                let cur = j.get(n + i, m + n * n + jj);
                j.set(n + i, m + n * n + jj, cur + c * aij);
            }
        }
        j
    }
}

pub fn stacked_resnet_problem(params: &ResNetParams) -> GeneralResNetProblem {
    let (n, m) = (params.input_dim(), params.output_dim());
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
    GeneralResNetProblem {
        layers: Box::new(StackedResNetLayers {
            n,
            m,
            a: params.a.clone(),
            activation: params.activation,
        }),
        depth: params.depth(),
        p,
        q,
        omega,
    }
}
