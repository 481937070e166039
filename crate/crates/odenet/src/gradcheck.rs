//! Brute-force gradient verification by central finite differences.
//!
//! The adjoint-assembled gradients are stated per unit of depth time on the
//! full parameter grid l = 0..L. The scalar functional whose exact partial
//! derivatives they are (after multiplying by the step size h) is the halved
//! minibatch error of the output quadrature carried through the final grid
//! node, i.e. [`crate::forward::predict_full_grid`] rather than the plain
//! prediction y_L; y_L itself never consumes the l = L parameter sample, so
//! its derivative with respect to that sample is identically zero and its
//! derivatives with respect to β, γ lag the assembled ones by one grid index
//! (an O(h) discretization offset, checked separately at a loose tolerance
//! by [`check_adjoint_consistency`]).
//!
//! [`check_adjoint`] therefore differentiates [`full_grid_loss`] entry by
//! entry, rescales by 1/h, and compares against the assembled gradients.
//! Any sign error, transpose slip, or index shift in the adjoint recursion
//! breaks that agreement at O(1), so the check is sharp even though it is
//! also exact.
//!
//! For the residual network the backward recursion is the plain chain rule
//! on the layer maps, and [`check_resnet_backprop`] compares against finite
//! differences of [`crate::resnet::resnet_loss`] with no scaling at all.

use crate::adjoint::{adjoint_backward, assemble_gradients, minibatch_loss};
use crate::error::{Error, Result};
use crate::forward::{batch_forward, predict_full_grid};
use crate::model::{Gradients, OdeNetSpec, ParamPath};
use crate::resnet::{resnet_backprop, resnet_loss, GeneralResNetProblem};
use crate::rng::Rng;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Half-width of the |A x| band around activation kinks inside which
/// β/γ comparisons are skipped for non-smooth activations.
pub const KINK_BAND: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Alpha,
    Beta,
    Gamma,
    /// Flattened per-layer parameters of a general residual problem.
    Omega,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Alpha => write!(f, "alpha"),
            Family::Beta => write!(f, "beta"),
            Family::Gamma => write!(f, "gamma"),
            Family::Omega => write!(f, "omega"),
        }
    }
}

/// Index of one scalar parameter entry: grid (or layer) position plus the
/// row/column within the family container (`col` is 0 for vectors).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntryRef {
    pub family: Family,
    pub grid: usize,
    pub row: usize,
    pub col: usize,
}

impl std::fmt::Display for EntryRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}][{},{}]", self.family, self.grid, self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Mismatch {
    pub entry: EntryRef,
    pub analytic: f64,
    pub numeric: f64,
    /// |analytic - numeric| minus the allowed tolerance; positive = failed.
    pub excess: f64,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub pass: bool,
    pub checked: usize,
    pub skipped: usize,
    pub failed: usize,
    pub max_abs_diff: f64,
    /// Worst entries by tolerance excess, largest first (at most ten).
    pub worst: Vec<Mismatch>,
}

impl CompareReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{}: {} entries checked, {} skipped, {} failed, max |analytic-numeric| = {:.3e}\n",
            if self.pass { "PASS" } else { "FAIL" },
            self.checked,
            self.skipped,
            self.failed,
            self.max_abs_diff
        );
        for w in &self.worst {
            s.push_str(&format!(
                "  {}: analytic {:+.9e} numeric {:+.9e} (excess {:+.3e})\n",
                w.entry, w.analytic, w.numeric, w.excess
            ));
        }
        s
    }
}

/// Central finite differences of `lossfn` with respect to every scalar
/// parameter entry, all others held fixed.
pub fn fd_gradient<F>(lossfn: F, params: &ParamPath, step: f64) -> Result<Gradients>
where
    F: Fn(&ParamPath) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("fd step must be positive".into()));
    }
    let mut work = params.clone();
    let mut grads = Gradients::zeros_like(params);
    let len = params.len();
    for l in 0..len {
        for i in 0..params.alpha[l].len() {
            let base = params.alpha[l][i];
            work.alpha[l][i] = base + step;
            let up = lossfn(&work)?;
            work.alpha[l][i] = base - step;
            let down = lossfn(&work)?;
            work.alpha[l][i] = base;
            grads.g_alpha[l][i] = (up - down) / (2.0 * step);
        }
        for idx in 0..params.beta[l].data().len() {
            let base = params.beta[l].data()[idx];
            work.beta[l].data_mut()[idx] = base + step;
            let up = lossfn(&work)?;
            work.beta[l].data_mut()[idx] = base - step;
            let down = lossfn(&work)?;
            work.beta[l].data_mut()[idx] = base;
            grads.g_beta[l].data_mut()[idx] = (up - down) / (2.0 * step);
        }
        for i in 0..params.gamma[l].len() {
            let base = params.gamma[l][i];
            work.gamma[l][i] = base + step;
            let up = lossfn(&work)?;
            work.gamma[l][i] = base - step;
            let down = lossfn(&work)?;
            work.gamma[l][i] = base;
            grads.g_gamma[l][i] = (up - down) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Grid indices whose β/γ comparisons are unreliable because some later
/// step's |A x| has a component inside the kink band. α entries are never
/// masked: the output readout is continuous and perturbing α does not move
/// the state.
#[derive(Clone, Debug)]
pub struct KinkMask {
    /// `check_beta_gamma[l]` is true when β/γ entries at grid index l are
    /// comparable.
    pub check_beta_gamma: Vec<bool>,
}

/// Build the mask for the given batch, or `None` when σ is smooth.
pub fn kink_mask(
    spec: &OdeNetSpec,
    params: &ParamPath,
    inputs: &[Vec<f64>],
) -> Result<Option<KinkMask>> {
    if spec.activation().is_smooth() {
        return Ok(None);
    }
    let steps = spec.steps();
    let trajs = batch_forward(spec, params, inputs)?;
    let mut tainted = vec![false; steps + 1];
    for traj in &trajs {
        for (l, x) in traj.x.iter().enumerate() {
            let ax = spec.readout().matvec(x);
            if ax.iter().any(|c| c.abs() < KINK_BAND) {
                tainted[l] = true;
            }
        }
    }
    // β/γ at index l influence (and are influenced through) states at
    // indices strictly greater than l.
    let mut check = vec![true; steps + 1];
    let mut later_taint = false;
    for l in (0..=steps).rev() {
        check[l] = !later_taint;
        later_taint = later_taint || tainted[l];
    }
    Ok(Some(KinkMask {
        check_beta_gamma: check,
    }))
}

fn tolerance_excess(a: f64, n: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    (a - n).abs() - (abs_tol + rel_tol * a.abs().max(n.abs()))
}

/// Per-entry comparison with |a-n| ≤ abs_tol + rel_tol·max(|a|, |n|),
/// optionally skipping masked β/γ grid indices.
pub fn compare_gradients_masked(
    analytic: &Gradients,
    numeric: &Gradients,
    rel_tol: f64,
    abs_tol: f64,
    mask: Option<&KinkMask>,
) -> Result<CompareReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::Shape("gradient grids of different length".into()));
    }
    let mut report = CompareReport {
        pass: true,
        checked: 0,
        skipped: 0,
        failed: 0,
        max_abs_diff: 0.0,
        worst: Vec::new(),
    };
    let mut entries: Vec<Mismatch> = Vec::new();
    let mut push = |entry: EntryRef, a: f64, n: f64, report: &mut CompareReport| {
        let excess = tolerance_excess(a, n, rel_tol, abs_tol);
        report.checked += 1;
        report.max_abs_diff = report.max_abs_diff.max((a - n).abs());
        if excess > 0.0 {
            report.failed += 1;
            report.pass = false;
        }
        entries.push(Mismatch {
            entry,
            analytic: a,
            numeric: n,
            excess,
        });
    };
    for l in 0..analytic.len() {
        if analytic.g_alpha[l].len() != numeric.g_alpha[l].len()
            || analytic.g_gamma[l].len() != numeric.g_gamma[l].len()
            || analytic.g_beta[l].rows() != numeric.g_beta[l].rows()
            || analytic.g_beta[l].cols() != numeric.g_beta[l].cols()
        {
            return Err(Error::Shape(format!("gradient shapes differ at index {l}")));
        }
        for (i, (&a, &n)) in analytic.g_alpha[l]
            .iter()
            .zip(&numeric.g_alpha[l])
            .enumerate()
        {
            push(
                EntryRef {
                    family: Family::Alpha,
                    grid: l,
                    row: i,
                    col: 0,
                },
                a,
                n,
                &mut report,
            );
        }
        let bg_ok = mask.map_or(true, |m| m.check_beta_gamma[l]);
        if !bg_ok {
            report.skipped +=
                analytic.g_beta[l].data().len() + analytic.g_gamma[l].len();
            continue;
        }
        let cols = analytic.g_beta[l].cols();
        for (idx, (&a, &n)) in analytic.g_beta[l]
            .data()
            .iter()
            .zip(numeric.g_beta[l].data())
            .enumerate()
        {
            push(
                EntryRef {
                    family: Family::Beta,
                    grid: l,
                    row: idx / cols,
                    col: idx % cols,
                },
                a,
                n,
                &mut report,
            );
        }
        for (i, (&a, &n)) in analytic.g_gamma[l]
            .iter()
            .zip(&numeric.g_gamma[l])
            .enumerate()
        {
            push(
                EntryRef {
                    family: Family::Gamma,
                    grid: l,
                    row: i,
                    col: 0,
                },
                a,
                n,
                &mut report,
            );
        }
    }
    entries.sort_by(|a, b| b.excess.partial_cmp(&a.excess).unwrap());
    report.worst = entries.into_iter().take(10).collect();
    Ok(report)
}

pub fn compare_gradients(
    analytic: &Gradients,
    numeric: &Gradients,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<CompareReport> {
    compare_gradients_masked(analytic, numeric, rel_tol, abs_tol, None)
}

/// Halved minibatch error of the full-grid output quadrature.
pub fn full_grid_loss(
    spec: &OdeNetSpec,
    params: &ParamPath,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<f64> {
    let trajs = batch_forward(spec, params, inputs)?;
    let preds: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| predict_full_grid(spec, params, t))
        .collect();
    minibatch_loss(&preds, targets)
}

/// Halved minibatch error of the plain prediction y_L.
pub fn plain_loss(
    spec: &OdeNetSpec,
    params: &ParamPath,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<f64> {
    let trajs = batch_forward(spec, params, inputs)?;
    let preds: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| t.y.last().expect("nonempty trajectory").clone())
        .collect();
    minibatch_loss(&preds, targets)
}

/// Adjoint-assembled gradients of [`full_grid_loss`]: forward pass,
/// full-grid residuals, backward recursion, assembly.
pub fn adjoint_gradients_full_grid(
    spec: &OdeNetSpec,
    params: &ParamPath,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<Gradients> {
    if inputs.len() != targets.len() {
        return Err(Error::Shape("inputs/targets length mismatch".into()));
    }
    let b = inputs.len();
    let trajs = batch_forward(spec, params, inputs)?;
    let residuals: Vec<Vec<f64>> = trajs
        .iter()
        .zip(targets)
        .map(|(t, f)| {
            predict_full_grid(spec, params, t)
                .iter()
                .zip(f)
                .map(|(y, t)| y - t)
                .collect()
        })
        .collect();
    let mut adjoints = Vec::with_capacity(b);
    for (k, (traj, res)) in trajs.iter().zip(&residuals).enumerate() {
        adjoints
            .push(adjoint_backward(spec, params, traj, res, b).map_err(|e| e.with_sample(k))?);
    }
    assemble_gradients(spec, params, &trajs, &adjoints, &residuals, b)
}

fn scale_gradients(g: &mut Gradients, s: f64) {
    for a in g.g_alpha.iter_mut() {
        for v in a.iter_mut() {
            *v *= s;
        }
    }
    for b in g.g_beta.iter_mut() {
        for v in b.data_mut().iter_mut() {
            *v *= s;
        }
    }
    for c in g.g_gamma.iter_mut() {
        for v in c.iter_mut() {
            *v *= s;
        }
    }
}

/// Full adjoint verification: every entry of the assembled gradients against
/// central finite differences of [`full_grid_loss`], rescaled by 1/h onto the
/// per-unit-time convention; β/γ entries near activation kinks are skipped
/// for non-smooth σ.
pub fn check_adjoint(
    spec: &OdeNetSpec,
    params: &ParamPath,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    fd_step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<CompareReport> {
    let analytic = adjoint_gradients_full_grid(spec, params, inputs, targets)?;
    let mut numeric = fd_gradient(
        |p| full_grid_loss(spec, p, inputs, targets),
        params,
        fd_step,
    )?;
    scale_gradients(&mut numeric, 1.0 / spec.step_size());
    let mask = kink_mask(spec, params, inputs)?;
    compare_gradients_masked(&analytic, &numeric, rel_tol, abs_tol, mask.as_ref())
}

/// Discretization-consistency check of the training-path gradients: the same
/// assembled formulas evaluated with plain y_L residuals, against finite
/// differences of [`plain_loss`]. The two differ by one grid index in the
/// β/γ recursions, so agreement is only O(h); `slack` is the allowed
/// relative deviation (e.g. a small multiple of h).
pub fn check_adjoint_consistency(
    spec: &OdeNetSpec,
    params: &ParamPath,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    fd_step: f64,
    slack: f64,
) -> Result<CompareReport> {
    let b = inputs.len();
    let trajs = batch_forward(spec, params, inputs)?;
    let residuals: Vec<Vec<f64>> = trajs
        .iter()
        .zip(targets)
        .map(|(t, f)| {
            t.y.last()
                .expect("nonempty trajectory")
                .iter()
                .zip(f)
                .map(|(y, t)| y - t)
                .collect()
        })
        .collect();
    let mut adjoints = Vec::with_capacity(b);
    for (traj, res) in trajs.iter().zip(&residuals) {
        adjoints.push(adjoint_backward(spec, params, traj, res, b)?);
    }
    let analytic = assemble_gradients(spec, params, &trajs, &adjoints, &residuals, b)?;
    let mut numeric = fd_gradient(|p| plain_loss(spec, p, inputs, targets), params, fd_step)?;
    scale_gradients(&mut numeric, 1.0 / spec.step_size());
    let mask = kink_mask(spec, params, inputs)?;
    compare_gradients_masked(&analytic, &numeric, slack, slack, mask.as_ref())
}

/// Central finite differences of [`resnet_loss`] with respect to every
/// per-layer parameter entry of a general residual problem.
pub fn fd_layer_gradients(
    problem: &mut GeneralResNetProblem,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("fd step must be positive".into()));
    }
    let depth = problem.depth;
    let mut grads: Vec<Vec<f64>> = (0..depth)
        .map(|l| vec![0.0; problem.omega[l].len()])
        .collect();
    for l in 0..depth {
        for i in 0..problem.omega[l].len() {
            let base = problem.omega[l][i];
            problem.omega[l][i] = base + step;
            let up = resnet_loss(problem, inputs, targets)?;
            problem.omega[l][i] = base - step;
            let down = resnet_loss(problem, inputs, targets)?;
            problem.omega[l][i] = base;
            grads[l][i] = (up - down) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Compare flattened per-layer gradients with the same tolerance rule as
/// [`compare_gradients`].
pub fn compare_layer_gradients(
    analytic: &[Vec<f64>],
    numeric: &[Vec<f64>],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<CompareReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::Shape("layer gradient counts differ".into()));
    }
    let mut report = CompareReport {
        pass: true,
        checked: 0,
        skipped: 0,
        failed: 0,
        max_abs_diff: 0.0,
        worst: Vec::new(),
    };
    let mut entries = Vec::new();
    for (l, (ga, gn)) in analytic.iter().zip(numeric).enumerate() {
        if ga.len() != gn.len() {
            return Err(Error::Shape(format!("layer {l} gradient lengths differ")));
        }
        for (i, (&a, &n)) in ga.iter().zip(gn).enumerate() {
            let excess = tolerance_excess(a, n, rel_tol, abs_tol);
            report.checked += 1;
            report.max_abs_diff = report.max_abs_diff.max((a - n).abs());
            if excess > 0.0 {
                report.failed += 1;
                report.pass = false;
            }
            entries.push(Mismatch {
                entry: EntryRef {
                    family: Family::Omega,
                    grid: l,
                    row: i,
                    col: 0,
                },
                analytic: a,
                numeric: n,
                excess,
            });
        }
    }
    entries.sort_by(|a, b| b.excess.partial_cmp(&a.excess).unwrap());
    report.worst = entries.into_iter().take(10).collect();
    Ok(report)
}

/// Residual-network backprop against finite differences of its own loss.
/// The backward recursion is the exact chain rule, so no rescaling and no
/// grid bookkeeping are involved.
pub fn check_resnet_backprop(
    problem: &mut GeneralResNetProblem,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    fd_step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<CompareReport> {
    let analytic = resnet_backprop(problem, inputs, targets)?;
    let numeric = fd_layer_gradients(problem, inputs, targets, fd_step)?;
    compare_layer_gradients(&analytic, &numeric, rel_tol, abs_tol)
}

/// Seeded random verification instance: orthonormal-row readout, normal
/// parameters scaled to keep trajectories tame, normal inputs and targets.
pub fn random_instance(
    n: usize,
    m: usize,
    steps: usize,
    samples: usize,
    t_horizon: f64,
    activation: crate::activation::Activation,
    seed: u64,
) -> (OdeNetSpec, ParamPath, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = Rng::seed_from(seed);
    let a = crate::linalg::random_orthonormal_rows(&mut rng, m, n);
    let spec = OdeNetSpec::new(n, m, a, t_horizon, steps, activation)
        .expect("orthonormal rows have full rank");
    let mut params = ParamPath::zeros(&spec);
    let bscale = 0.5 / (n as f64).sqrt();
    for l in 0..=steps {
        for v in params.alpha[l].iter_mut() {
            *v = 0.5 * rng.normal();
        }
        for v in params.beta[l].data_mut() {
            *v = bscale * rng.normal();
        }
        for v in params.gamma[l].iter_mut() {
            *v = 0.5 * rng.normal();
        }
    }
    let inputs: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..m).map(|_| rng.normal()).collect())
        .collect();
    (spec, params, inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::activation::Activation;
    use crate::resnet::stacked_resnet_problem;
    use crate::resnet::ResNetParams;

    fn tiny_spec() -> (OdeNetSpec, ParamPath) {
        let spec = OdeNetSpec::new(
            1,
            1,
            Mat::from_rows(&[vec![1.0]]),
            1.0,
            2,
            Activation::Tanh,
        )
        .unwrap();
        let params = ParamPath::constant(&spec, 1.0);
        (spec, params)
    }

    fn sum_entries(p: &ParamPath, f: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for l in 0..p.len() {
            acc += p.alpha[l].iter().sum::<f64>() * f(0);
            acc += p.beta[l].data().iter().sum::<f64>() * f(1);
            acc += p.gamma[l].iter().sum::<f64>() * f(2);
        }
        acc
    }

    #[test]
    fn fd_of_constant_is_zero() {
        let (_, params) = tiny_spec();
        let g = fd_gradient(|_| Ok(1.234), &params, 1e-5).unwrap();
        assert!(g.g_alpha.iter().all(|a| a.iter().all(|&v| v == 0.0)));
        assert!(g.g_beta.iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
        assert!(g.g_gamma.iter().all(|c| c.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn fd_of_sum_of_squares_is_two() {
        let (_, params) = tiny_spec();
        let lossfn = |p: &ParamPath| {
            Ok(sum_entries_sq(p))
        };
        fn sum_entries_sq(p: &ParamPath) -> f64 {
            let mut acc = 0.0;
            for l in 0..p.len() {
                acc += p.alpha[l].iter().map(|v| v * v).sum::<f64>();
                acc += p.beta[l].data().iter().map(|v| v * v).sum::<f64>();
                acc += p.gamma[l].iter().map(|v| v * v).sum::<f64>();
            }
            acc
        }
        let g = fd_gradient(lossfn, &params, 1e-5).unwrap();
        for l in 0..g.len() {
            assert!((g.g_alpha[l][0] - 2.0).abs() < 1e-9);
            assert!((g.g_beta[l].get(0, 0) - 2.0).abs() < 1e-9);
            assert!((g.g_gamma[l][0] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fd_of_linear_is_exact() {
        let (_, params) = tiny_spec();
        // no truncation term on an affine function, so a larger step only
        // reduces the cancellation noise
        let g = fd_gradient(|p| Ok(sum_entries(p, |fam| fam as f64 + 1.0)), &params, 1e-2)
            .unwrap();
        for l in 0..g.len() {
            assert!((g.g_alpha[l][0] - 1.0).abs() < 1e-10);
            assert!((g.g_beta[l].get(0, 0) - 2.0).abs() < 1e-10);
            assert!((g.g_gamma[l][0] - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn compare_tolerance_arithmetic() {
        let (_, params) = tiny_spec();
        let mut a = Gradients::zeros_like(&params);
        let mut n = Gradients::zeros_like(&params);
        // identical passes
        let r = compare_gradients(&a, &n, 1e-4, 1e-7).unwrap();
        assert!(r.pass);

        // 1.0 vs 1.00005 passes at rel 1e-4
        a.g_alpha[0][0] = 1.0;
        n.g_alpha[0][0] = 1.00005;
        let r = compare_gradients(&a, &n, 1e-4, 1e-7).unwrap();
        assert!(r.pass);

        // 0 vs 1e-6 fails at abs 1e-7 and is located
        a.g_alpha[0][0] = 0.0;
        n.g_alpha[0][0] = 1e-6;
        let r = compare_gradients(&a, &n, 1e-4, 1e-7).unwrap();
        assert!(!r.pass);
        assert_eq!(r.failed, 1);
        let worst = &r.worst[0];
        assert_eq!(worst.entry.family, Family::Alpha);
        assert_eq!((worst.entry.grid, worst.entry.row), (0, 0));
    }

    #[test]
    fn adjoint_matches_fd_on_random_smooth_instances() {
        for (i, &act) in [Activation::Tanh, Activation::Sigmoid].iter().enumerate() {
            for seed in 0..4u64 {
                let (spec, params, inputs, targets) =
                    random_instance(3, 2, 9, 3, 1.0, act, 1000 * (i as u64 + 1) + seed);
                let report =
                    check_adjoint(&spec, &params, &inputs, &targets, FD_STEP, 1e-4, 1e-7)
                        .unwrap();
                assert!(report.pass, "{act} seed {seed}:\n{}", report.render());
                assert_eq!(report.skipped, 0);
            }
        }
    }

    #[test]
    fn training_gradients_are_consistent_at_order_h() {
        let (spec, params, inputs, targets) =
            random_instance(3, 2, 20, 3, 1.0, Activation::Tanh, 77);
        // slack of a few h: the recursions differ by one grid index
        let slack = 6.0 * spec.step_size();
        let report =
            check_adjoint_consistency(&spec, &params, &inputs, &targets, FD_STEP, slack)
                .unwrap();
        assert!(report.pass, "{}", report.render());
    }

    #[test]
    fn fd_step_sensitivity_shows_quadratic_truncation() {
        let (spec, params, inputs, targets) =
            random_instance(2, 1, 6, 2, 1.0, Activation::Tanh, 4242);
        let discrepancy = |step: f64| {
            let analytic =
                adjoint_gradients_full_grid(&spec, &params, &inputs, &targets).unwrap();
            let mut numeric =
                fd_gradient(|p| full_grid_loss(&spec, p, &inputs, &targets), &params, step)
                    .unwrap();
            scale_gradients(&mut numeric, 1.0 / spec.step_size());
            let report = compare_gradients(&analytic, &numeric, 0.0, f64::INFINITY).unwrap();
            report.max_abs_diff
        };
        let coarse = discrepancy(1e-3);
        let fine = discrepancy(1e-4);
        // quadratic truncation: 10x smaller step gives ~100x less error
        // while both sit above the roundoff floor
        assert!(fine < coarse / 4.0, "coarse {coarse}, fine {fine}");
        // at 1e-5 cancellation noise may dominate, but stays tiny
        assert!(discrepancy(1e-5) < 1e-9);
    }

    #[test]
    fn relu_instances_skip_kink_neighborhoods_and_pass() {
        for seed in 0..6u64 {
            let (spec, params, inputs, targets) =
                random_instance(3, 2, 8, 3, 1.0, Activation::Relu, 31_000 + seed);
            let report =
                check_adjoint(&spec, &params, &inputs, &targets, FD_STEP, 1e-4, 1e-7).unwrap();
            assert!(report.pass, "seed {seed}:\n{}", report.render());
        }
    }

    #[test]
    fn kink_mask_skips_entries_without_failing_them() {
        // Steer the state through the kink exactly: x_l = -0.5 + l/8, which
        // crosses zero at l = 4. Entries at earlier grid indices are
        // masked, later ones are checked, and the whole report passes.
        let spec = OdeNetSpec::new(
            1,
            1,
            Mat::from_rows(&[vec![1.0]]),
            1.0,
            8,
            Activation::Relu,
        )
        .unwrap();
        let mut params = ParamPath::zeros(&spec);
        for l in 0..=8 {
            params.alpha[l][0] = 0.8;
            params.gamma[l][0] = 1.0;
        }
        let inputs = vec![vec![-0.5]];
        let targets = vec![vec![0.3]];
        let mask = kink_mask(&spec, &params, &inputs).unwrap().unwrap();
        assert!(!mask.check_beta_gamma[0]);
        assert!(!mask.check_beta_gamma[3]);
        assert!(mask.check_beta_gamma[4]);
        assert!(mask.check_beta_gamma[8]);
        let report =
            check_adjoint(&spec, &params, &inputs, &targets, FD_STEP, 1e-4, 1e-7).unwrap();
        assert!(report.pass, "{}", report.render());
        assert!(report.skipped > 0);
    }

    #[test]
    fn resnet_backprop_matches_fd() {
        let mut rng = Rng::seed_from(88);
        for _ in 0..3 {
            let n = 3;
            let m = 2;
            let depth = 4;
            let a = crate::linalg::random_orthonormal_rows(&mut rng, m, n);
            let params = ResNetParams {
                alpha: (0..depth)
                    .map(|_| (0..m).map(|_| 0.5 * rng.normal()).collect())
                    .collect(),
                beta: (0..depth)
                    .map(|_| {
                        Mat::from_vec(n, n, (0..n * n).map(|_| 0.2 * rng.normal()).collect())
                    })
                    .collect(),
                gamma: (0..depth)
                    .map(|_| (0..n).map(|_| 0.3 * rng.normal()).collect())
                    .collect(),
                a,
                activation: Activation::Tanh,
            };
            let mut problem = stacked_resnet_problem(&params);
            let inputs: Vec<Vec<f64>> =
                (0..3).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
            let targets: Vec<Vec<f64>> =
                (0..3).map(|_| (0..m).map(|_| rng.normal()).collect()).collect();
            let report = check_resnet_backprop(
                &mut problem,
                &inputs,
                &targets,
                FD_STEP,
                1e-4,
                1e-7,
            )
            .unwrap();
            assert!(report.pass, "{}", report.render());
        }
    }
}
