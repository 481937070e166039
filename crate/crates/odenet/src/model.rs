//! Architecture description and parameter containers.
//!
//! The continuous-depth model evolves a hidden state x ∈ ℝⁿ by an affine
//! flow and accumulates an output y ∈ ℝᵐ through a fixed readout matrix A:
//!
//! ```text
//! x'(t) = β(t) x(t) + γ(t),          x(0) = ξ,
//! y'(t) = α(t) ⊙ σ(A x(t)),          y(0) = 0,
//! ```
//!
//! integrated on [0, T] with L explicit Euler steps of size h = T/L. The
//! design parameters α, β, γ are stored sampled on the full grid t = l·h for
//! l = 0..L, i.e. L+1 samples per family, even though a forward pass only
//! consumes indices 0..L-1; gradients are produced on the same grid and stay
//! index-aligned with the parameters they differentiate.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Default relative tolerance for numerical rank checks: pivots at or below
/// `RANK_TOL · ‖A‖_F` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Numerical rank of `a`: Gaussian elimination with partial pivoting,
/// zeroing pivots at or below `tol · ‖a‖_F`.
pub fn check_rank(a: &Mat, tol: f64) -> usize {
    a.rank(tol * a.frobenius())
}

/// Componentwise (Hadamard) product.
pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "hadamard of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Static architecture: dimensions, readout matrix, horizon, step count,
/// activation. Immutable after construction; all invariants checked here.
#[derive(Clone, Debug)]
pub struct OdeNetSpec {
    n: usize,
    m: usize,
    a: Mat,
    t_horizon: f64,
    steps: usize,
    activation: Activation,
}

impl OdeNetSpec {
    pub fn new(
        n: usize,
        m: usize,
        a: Mat,
        t_horizon: f64,
        steps: usize,
        activation: Activation,
    ) -> Result<OdeNetSpec> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        if m > n {
            return Err(Error::InvalidArgument(format!(
                "output dimension m = {m} must not exceed input dimension n = {n}"
            )));
        }
        if a.rows() != m || a.cols() != n {
            return Err(Error::Shape(format!(
                "A is {}x{}, expected {m}x{n}",
                a.rows(),
                a.cols()
            )));
        }
        if !a.is_finite() {
            return Err(Error::InvalidArgument("A contains non-finite entries".into()));
        }
        let rank = check_rank(&a, RANK_TOL);
        if rank != m {
            return Err(Error::RankDeficient {
                what: "readout matrix A".into(),
                expected: m,
                got: rank,
            });
        }
        if !(t_horizon > 0.0) || !t_horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time horizon T = {t_horizon} must be positive and finite"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("step count L must be >= 1".into()));
        }
        Ok(OdeNetSpec {
            n,
            m,
            a,
            t_horizon,
            steps,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn output_dim(&self) -> usize {
        self.m
    }

    pub fn readout(&self) -> &Mat {
        &self.a
    }

    pub fn t_horizon(&self) -> f64 {
        self.t_horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.t_horizon / self.steps as f64
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Design parameters sampled on the time grid: αₗ ∈ ℝᵐ, βₗ ∈ ℝⁿˣⁿ, γₗ ∈ ℝⁿ
/// for l = 0..L (L+1 samples each).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPath {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Mat>,
    pub gamma: Vec<Vec<f64>>,
}

impl ParamPath {
    pub fn zeros(spec: &OdeNetSpec) -> ParamPath {
        ParamPath::constant(spec, 0.0)
    }

    /// Every entry of every family set to `value`.
    pub fn constant(spec: &OdeNetSpec, value: f64) -> ParamPath {
        let len = spec.steps() + 1;
        let (n, m) = (spec.input_dim(), spec.output_dim());
        ParamPath {
            alpha: vec![vec![value; m]; len],
            beta: vec![Mat::from_vec(n, n, vec![value; n * n]); len],
            gamma: vec![vec![value; n]; len],
        }
    }

    /// Number of grid samples (L + 1).
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn validate(&self, spec: &OdeNetSpec) -> Result<()> {
        let len = spec.steps() + 1;
        let (n, m) = (spec.input_dim(), spec.output_dim());
        if self.alpha.len() != len || self.beta.len() != len || self.gamma.len() != len {
            return Err(Error::Shape(format!(
                "parameter path has {}/{}/{} samples, expected {len} for each family",
                self.alpha.len(),
                self.beta.len(),
                self.gamma.len()
            )));
        }
        for (l, a) in self.alpha.iter().enumerate() {
            if a.len() != m {
                return Err(Error::Shape(format!("alpha[{l}] has length {}", a.len())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("alpha[{l}] not finite")));
            }
        }
        for (l, b) in self.beta.iter().enumerate() {
            if b.rows() != n || b.cols() != n {
                return Err(Error::Shape(format!(
                    "beta[{l}] is {}x{}",
                    b.rows(),
                    b.cols()
                )));
            }
            if !b.is_finite() {
                return Err(Error::InvalidArgument(format!("beta[{l}] not finite")));
            }
        }
        for (l, g) in self.gamma.iter().enumerate() {
            if g.len() != n {
                return Err(Error::Shape(format!("gamma[{l}] has length {}", g.len())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("gamma[{l}] not finite")));
            }
        }
        Ok(())
    }

    /// Frobenius norms of the per-family differences, each family taken over
    /// the concatenation of all its grid samples. Used by the stopping rule.
    pub fn family_deltas(&self, other: &ParamPath) -> Result<(f64, f64, f64)> {
        if self.len() != other.len() {
            return Err(Error::Shape("parameter paths of different length".into()));
        }
        let mut da = 0.0;
        for (a, b) in self.alpha.iter().zip(&other.alpha) {
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                da += d * d;
            }
        }
        let mut db = 0.0;
        for (a, b) in self.beta.iter().zip(&other.beta) {
            for (x, y) in a.data().iter().zip(b.data()) {
                let d = x - y;
                db += d * d;
            }
        }
        let mut dg = 0.0;
        for (a, b) in self.gamma.iter().zip(&other.gamma) {
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                dg += d * d;
            }
        }
        Ok((da.sqrt(), db.sqrt(), dg.sqrt()))
    }
}

/// Loss gradients on the same grid and with the same shapes as the
/// [`ParamPath`] they differentiate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub g_alpha: Vec<Vec<f64>>,
    pub g_beta: Vec<Mat>,
    pub g_gamma: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamPath) -> Gradients {
        Gradients {
            g_alpha: params.alpha.iter().map(|a| vec![0.0; a.len()]).collect(),
            g_beta: params
                .beta
                .iter()
                .map(|b| Mat::zeros(b.rows(), b.cols()))
                .collect(),
            g_gamma: params.gamma.iter().map(|g| vec![0.0; g.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.g_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_alpha.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec() -> OdeNetSpec {
        OdeNetSpec::new(
            1,
            1,
            Mat::from_rows(&[vec![1.0]]),
            1.0,
            2,
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn spec_rejects_bad_shapes() {
        let a = Mat::from_rows(&[vec![1.0, 0.0]]);
        assert!(OdeNetSpec::new(2, 1, a.clone(), 1.0, 4, Activation::Tanh).is_ok());
        // m > n
        assert!(OdeNetSpec::new(1, 2, a.transpose(), 1.0, 4, Activation::Tanh).is_err());
        // rank-deficient A
        let bad = Mat::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert!(matches!(
            OdeNetSpec::new(2, 2, bad, 1.0, 4, Activation::Tanh),
            Err(Error::RankDeficient { .. })
        ));
        // bad horizon / steps
        let a1 = Mat::from_rows(&[vec![1.0]]);
        assert!(OdeNetSpec::new(1, 1, a1.clone(), 0.0, 4, Activation::Tanh).is_err());
        assert!(OdeNetSpec::new(1, 1, a1, 1.0, 0, Activation::Tanh).is_err());
    }

    #[test]
    fn step_size_is_t_over_l() {
        let spec = unit_spec();
        assert_eq!(spec.step_size(), 0.5);
    }

    #[test]
    fn hadamard_examples() {
        assert_eq!(
            hadamard(&[1.0, 2.0], &[3.0, 4.0]).unwrap(),
            vec![3.0, 8.0]
        );
        assert_eq!(
            hadamard(&[0.0, 0.0], &[5.0, 7.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let a = [0.25, -3.5, 9.0];
        assert_eq!(hadamard(&a, &[1.0, 1.0, 1.0]).unwrap(), a.to_vec());
        assert!(hadamard(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn check_rank_examples() {
        assert_eq!(check_rank(&Mat::identity(2), 1e-12), 2);
        let dep = Mat::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(check_rank(&dep, 1e-12), 1);
        let wide = Mat::from_rows(&[vec![1.0, 0.0, 0.0]]);
        assert_eq!(check_rank(&wide, 1e-12), 1);
    }

    #[test]
    fn param_path_shape_validation() {
        let spec = unit_spec();
        let p = ParamPath::zeros(&spec);
        assert_eq!(p.len(), 3);
        assert!(p.validate(&spec).is_ok());

        let mut short = p.clone();
        short.alpha.pop();
        assert!(short.validate(&spec).is_err());

        let mut nan = p.clone();
        nan.gamma[1][0] = f64::NAN;
        assert!(nan.validate(&spec).is_err());
    }

    #[test]
    fn family_deltas_are_frobenius_norms() {
        let spec = unit_spec();
        let zero = ParamPath::zeros(&spec);
        let one = ParamPath::constant(&spec, 1.0);
        let (da, db, dg) = one.family_deltas(&zero).unwrap();
        // three grid samples of a single scalar each
        let expect = 3.0f64.sqrt();
        assert!((da - expect).abs() < 1e-15);
        assert!((db - expect).abs() < 1e-15);
        assert!((dg - expect).abs() < 1e-15);
    }
}
