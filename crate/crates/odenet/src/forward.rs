//! Explicit Euler simulation of the coupled state/output system.
//!
//! One step of size h = T/L advances
//!
//! ```text
//! x_{l+1} = x_l + h (β_l x_l + γ_l),
//! y_{l+1} = y_l + h (α_l ⊙ σ(A x_l)),       l = 0..L-1,
//! ```
//!
//! so the output increment reads the state at the left endpoint of each
//! step. The prediction is y_L.

use crate::error::{Error, Result};
use crate::model::{hadamard, OdeNetSpec, ParamPath};
use rayon::prelude::*;

/// Abort threshold for the state guard; beyond this the run is declared
/// divergent with the offending step index instead of overflowing to inf.
const DIVERGENCE_BOUND: f64 = 1e100;

/// Per-sample forward states: x has L+1 entries in ℝⁿ, y has L+1 entries in
/// ℝᵐ, with x₀ = ξ and y₀ = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

fn guard(v: &[f64], step: usize) -> Result<()> {
    for &c in v {
        if !c.is_finite() || c.abs() > DIVERGENCE_BOUND {
            return Err(Error::Divergence {
                step,
                sample: None,
                batch: None,
                epoch: None,
            });
        }
    }
    Ok(())
}

pub fn euler_forward(spec: &OdeNetSpec, params: &ParamPath, xi: &[f64]) -> Result<Trajectory> {
    params.validate(spec)?;
    if xi.len() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "input has dimension {}, spec expects {}",
            xi.len(),
            spec.input_dim()
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }

    let steps = spec.steps();
    let h = spec.step_size();
    let act = spec.activation();
    let a = spec.readout();

    let mut x = Vec::with_capacity(steps + 1);
    let mut y = Vec::with_capacity(steps + 1);
    x.push(xi.to_vec());
    y.push(vec![0.0; spec.output_dim()]);

    for l in 0..steps {
        let xl = &x[l];
        let drift = params.beta[l].matvec(xl);
        let mut x_next = xl.clone();
        for ((xn, dr), g) in x_next.iter_mut().zip(&drift).zip(&params.gamma[l]) {
            *xn += h * (dr + g);
        }
        guard(&x_next, l + 1)?;

        let sig = act.apply(&a.matvec(xl));
        let inc = hadamard(&params.alpha[l], &sig)?;
        let mut y_next = y[l].clone();
        for (yn, dy) in y_next.iter_mut().zip(&inc) {
            *yn += h * dy;
        }
        guard(&y_next, l + 1)?;

        x.push(x_next);
        y.push(y_next);
    }
    Ok(Trajectory { x, y })
}

/// Elementwise [`euler_forward`] over a batch. Samples are independent, so
/// they are evaluated in parallel; output order (and every bit of every
/// result) is identical to sequential evaluation. Errors carry the sample
/// index.
pub fn batch_forward(
    spec: &OdeNetSpec,
    params: &ParamPath,
    batch: &[Vec<f64>],
) -> Result<Vec<Trajectory>> {
    batch
        .par_iter()
        .enumerate()
        .map(|(k, xi)| euler_forward(spec, params, xi).map_err(|e| e.with_sample(k)))
        .collect()
}

/// Final output y_L.
pub fn predict(spec: &OdeNetSpec, params: &ParamPath, xi: &[f64]) -> Result<Vec<f64>> {
    let traj = euler_forward(spec, params, xi)?;
    Ok(traj.y.last().expect("trajectory has L+1 entries").clone())
}

/// Output accumulated over the full parameter grid: y_L + h·(α_L ⊙ σ(A x_L)).
///
/// The plain prediction y_L never consumes the grid sample at l = L, while
/// the assembled gradient formulas are defined on all L+1 samples. This sum
/// is the functional whose exact derivatives (scaled by 1/h) those formulas
/// are, which is what finite-difference verification differentiates.
pub fn predict_full_grid(spec: &OdeNetSpec, params: &ParamPath, traj: &Trajectory) -> Vec<f64> {
    let last = spec.steps();
    let h = spec.step_size();
    let sig = spec.activation().apply(&spec.readout().matvec(&traj.x[last]));
    traj.y[last]
        .iter()
        .zip(params.alpha[last].iter().zip(&sig))
        .map(|(y, (a, s))| y + h * a * s)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::linalg::Mat;
    use crate::rng::Rng;

    fn scalar_spec(steps: usize, act: Activation) -> OdeNetSpec {
        OdeNetSpec::new(1, 1, Mat::from_rows(&[vec![1.0]]), 1.0, steps, act).unwrap()
    }

    /// Smooth parameter path sampled from low-order trig polynomials, for
    /// convergence studies that need the same underlying α(t), β(t), γ(t)
    /// at several grid resolutions.
    fn smooth_params(spec: &OdeNetSpec, seed: u64) -> ParamPath {
        let mut rng = Rng::seed_from(seed);
        let (n, m, len) = (spec.input_dim(), spec.output_dim(), spec.steps() + 1);
        let t = spec.t_horizon();
        let coef = |rng: &mut Rng| (rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5);
        let mut alpha_c = Vec::new();
        for _ in 0..m {
            alpha_c.push(coef(&mut rng));
        }
        let mut beta_c = Vec::new();
        for _ in 0..n * n {
            beta_c.push(coef(&mut rng));
        }
        let mut gamma_c = Vec::new();
        for _ in 0..n {
            gamma_c.push(coef(&mut rng));
        }
        let eval = |(a, b, c): (f64, f64, f64), tl: f64| {
            a + b * (2.0 * std::f64::consts::PI * tl / t).sin()
                + c * (2.0 * std::f64::consts::PI * tl / t).cos()
        };
        let mut path = ParamPath::zeros(spec);
        for l in 0..len {
            let tl = l as f64 * spec.step_size();
            for (i, &c) in alpha_c.iter().enumerate() {
                path.alpha[l][i] = eval(c, tl);
            }
            for (i, &c) in beta_c.iter().enumerate() {
                path.beta[l].data_mut()[i] = eval(c, tl);
            }
            for (i, &c) in gamma_c.iter().enumerate() {
                path.gamma[l][i] = eval(c, tl);
            }
        }
        path
    }

    #[test]
    fn hand_euler_recursion() {
        // n = m = 1, A = [1], T = 1, L = 2 (h = 0.5), relu, alpha = 1,
        // beta = gamma = 0, xi = 1: x stays at 1, y climbs by 0.5 per step.
        let spec = scalar_spec(2, Activation::Relu);
        let mut params = ParamPath::zeros(&spec);
        for a in params.alpha.iter_mut() {
            a[0] = 1.0;
        }
        let traj = euler_forward(&spec, &params, &[1.0]).unwrap();
        assert_eq!(traj.x, vec![vec![1.0], vec![1.0], vec![1.0]]);
        assert_eq!(traj.y, vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert_eq!(predict(&spec, &params, &[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_output_weight_means_zero_output() {
        let spec = scalar_spec(4, Activation::Tanh);
        let mut params = ParamPath::zeros(&spec);
        for b in params.beta.iter_mut() {
            b.set(0, 0, 0.7);
        }
        for g in params.gamma.iter_mut() {
            g[0] = -0.3;
        }
        let traj = euler_forward(&spec, &params, &[2.0]).unwrap();
        assert!(traj.y.iter().all(|y| y[0] == 0.0));
    }

    #[test]
    fn frozen_dynamics_keep_state() {
        let spec = scalar_spec(5, Activation::Sigmoid);
        let mut params = ParamPath::zeros(&spec);
        for a in params.alpha.iter_mut() {
            a[0] = 2.0;
        }
        let traj = euler_forward(&spec, &params, &[1.5]).unwrap();
        assert!(traj.x.iter().all(|x| x[0] == 1.5));
    }

    #[test]
    fn affinity_of_the_state_flow() {
        let a = Mat::from_rows(&[vec![0.3, -1.0, 0.5], vec![1.0, 0.2, 0.0]]);
        let spec = OdeNetSpec::new(3, 2, a, 1.0, 12, Activation::Tanh).unwrap();
        let params = smooth_params(&spec, 11);
        let xi1 = vec![0.4, -0.8, 1.2];
        let xi2 = vec![-1.0, 0.3, 0.9];
        let t1 = euler_forward(&spec, &params, &xi1).unwrap();
        let t2 = euler_forward(&spec, &params, &xi2).unwrap();
        for &theta in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            let mix: Vec<f64> = xi1
                .iter()
                .zip(&xi2)
                .map(|(u, v)| theta * u + (1.0 - theta) * v)
                .collect();
            let tm = euler_forward(&spec, &params, &mix).unwrap();
            for l in 0..=spec.steps() {
                for i in 0..3 {
                    let expect = theta * t1.x[l][i] + (1.0 - theta) * t2.x[l][i];
                    assert!(
                        (tm.x[l][i] - expect).abs() <= 1e-12,
                        "affinity violated at l={l}, i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn output_is_additive_in_alpha() {
        let spec = scalar_spec(8, Activation::Tanh);
        let mut params = smooth_params(&spec, 5);
        let y1 = predict(&spec, &params, &[0.7]).unwrap();
        for a in params.alpha.iter_mut() {
            a[0] *= 2.0;
        }
        let y2 = predict(&spec, &params, &[0.7]).unwrap();
        assert_eq!(y2[0], 2.0 * y1[0]);
    }

    #[test]
    fn euler_error_halves_as_steps_double() {
        // First-order convergence of y_L(T) under grid refinement for a
        // fixed smooth parameter path.
        let make = |steps: usize| {
            let a = Mat::from_rows(&[vec![1.0, -0.5]]);
            let spec = OdeNetSpec::new(2, 1, a, 1.0, steps, Activation::Tanh).unwrap();
            let params = smooth_params(&spec, 99);
            predict(&spec, &params, &[0.6, -0.4]).unwrap()[0]
        };
        let ys: Vec<f64> = [16usize, 32, 64, 128, 256].iter().map(|&l| make(l)).collect();
        let diffs: Vec<f64> = ys.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for pair in diffs.windows(2) {
            let ratio = pair[1] / pair[0];
            assert!(
                (0.35..=0.65).contains(&ratio),
                "refinement ratio {ratio} outside [0.35, 0.65]: {diffs:?}"
            );
        }
    }

    #[test]
    fn batched_results_match_solo_runs_bitwise() {
        let a = Mat::from_rows(&[vec![0.5, 0.5]]);
        let spec = OdeNetSpec::new(2, 1, a, 1.0, 6, Activation::Sigmoid).unwrap();
        let params = smooth_params(&spec, 21);
        let batch = vec![vec![0.1, 0.9], vec![-0.4, 0.2], vec![2.0, -1.0]];
        let results = batch_forward(&spec, &params, &batch).unwrap();
        for (xi, got) in batch.iter().zip(&results) {
            let solo = euler_forward(&spec, &params, xi).unwrap();
            assert_eq!(&solo, got);
        }
        assert!(batch_forward(&spec, &params, &[]).unwrap().is_empty());
    }

    #[test]
    fn divergence_names_the_step() {
        let spec = scalar_spec(400, Activation::Identity);
        let mut params = ParamPath::zeros(&spec);
        for b in params.beta.iter_mut() {
            b.set(0, 0, 1e90);
        }
        let err = euler_forward(&spec, &params, &[1.0]).unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step >= 1),
            other => panic!("expected divergence, got {other}"),
        }
        let err = batch_forward(&spec, &params, &[vec![0.0], vec![1.0]]).unwrap_err();
        match err {
            Error::Divergence { sample, .. } => assert_eq!(sample, Some(1)),
            other => panic!("expected divergence with sample, got {other}"),
        }
    }

    #[test]
    fn full_grid_output_adds_one_terminal_increment() {
        let spec = scalar_spec(2, Activation::Relu);
        let mut params = ParamPath::zeros(&spec);
        for a in params.alpha.iter_mut() {
            a[0] = 1.0;
        }
        let traj = euler_forward(&spec, &params, &[1.0]).unwrap();
        let full = predict_full_grid(&spec, &params, &traj);
        // y_2 = 1.0 plus h * alpha_2 * sigma(x_2) = 0.5
        assert_eq!(full, vec![1.5]);
    }
}
