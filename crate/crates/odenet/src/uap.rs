//! Exact compilation of shallow ridge networks into residual parameters.
//!
//! A shallow net G(ξ) = Σ_l α⁽ˡ⁾ ⊙ σ(C⁽ˡ⁾ξ + d⁽ˡ⁾) is rewritten, one ridge
//! unit at a time, into units whose weight matrices have full rank m
//! ([`expand_full_rank`]); each full-rank C is then factored through the
//! fixed readout A as C = AP with det P > 0 ([`factor_through_a`]) and its
//! bias lifted to q = Aᵀ(AAᵀ)⁻¹d so that Aq = d ([`lift_bias`]). Setting
//!
//! ```text
//! β⁽ˡ⁾ = (P⁽ˡ⁾ - P⁽ˡ⁻¹⁾)(P⁽ˡ⁻¹⁾)⁻¹,  γ⁽ˡ⁾ = q⁽ˡ⁾ - q⁽ˡ⁻¹⁾ - β⁽ˡ⁾q⁽ˡ⁻¹⁾,
//! P⁽⁰⁾ = I, q⁽⁰⁾ = 0,
//! ```
//!
//! drives the residual trunk through x⁽ˡ⁾ = P⁽ˡ⁾ξ + q⁽ˡ⁾ exactly, so the
//! depth-L' network reproduces G(ξ) to machine precision — no approximation
//! is involved ([`compile_resnet`]).
//!
//! [`compile_odenet_pwc`] emits the same data as a piecewise-constant
//! parameter path on [0, T]: the exact integral of the resulting piecewise
//! integrand equals G(ξ), while a left-endpoint quadrature at finite step
//! size recovers it to O(h).

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::{complete_with_standard_basis, cond_estimate, Mat};
use crate::model::{check_rank, hadamard, RANK_TOL};
use crate::resnet::ResNetParams;

/// Conditioning threshold above which completions trigger a warning.
const COND_WARN: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct ShallowUnit {
    pub alpha: Vec<f64>,
    pub c: Mat,
    pub d: Vec<f64>,
}

/// Ridge-function sum G(ξ) = Σ_l α⁽ˡ⁾ ⊙ σ(C⁽ˡ⁾ξ + d⁽ˡ⁾).
#[derive(Clone, Debug)]
pub struct ShallowNet {
    pub units: Vec<ShallowUnit>,
    pub activation: Activation,
    pub n: usize,
    pub m: usize,
}

impl ShallowNet {
    pub fn validate(&self) -> Result<()> {
        for (u, unit) in self.units.iter().enumerate() {
            if unit.alpha.len() != self.m
                || unit.d.len() != self.m
                || unit.c.rows() != self.m
                || unit.c.cols() != self.n
            {
                return Err(Error::Shape(format!("unit {u} has inconsistent shapes")));
            }
            if unit.alpha.iter().any(|v| !v.is_finite())
                || unit.d.iter().any(|v| !v.is_finite())
                || !unit.c.is_finite()
            {
                return Err(Error::InvalidArgument(format!("unit {u} not finite")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for unit in &self.units {
            let mut arg = unit.c.matvec(xi);
            for (a, d) in arg.iter_mut().zip(&unit.d) {
                *a += d;
            }
            let sig = self.activation.apply(&arg);
            for (o, (al, s)) in out.iter_mut().zip(unit.alpha.iter().zip(&sig)) {
                *o += al * s;
            }
        }
        out
    }

    /// Text format: header `shallow n m L activation`, then per unit three
    /// whitespace-separated lines: α (m floats), C (m·n floats row-major),
    /// d (m floats).
    pub fn parse(text: &str, path: &str) -> Result<ShallowNet> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            message: "empty shallow net file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "shallow" {
            return Err(Error::Parse {
                path: path.into(),
                line: hline,
                message: "header must be `shallow n m L activation`".into(),
            });
        }
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: hline,
                message: format!("bad {what} `{s}`"),
            })
        };
        let n = parse_usize(fields[1], "n")?;
        let m = parse_usize(fields[2], "m")?;
        let l = parse_usize(fields[3], "L")?;
        let activation: Activation = fields[4].parse().map_err(|e| Error::Parse {
            path: path.into(),
            line: hline,
            message: format!("{e}"),
        })?;

        let mut floats_line = |count: usize, what: &str| -> Result<Vec<f64>> {
            let (lno, line) = lines.next().ok_or_else(|| Error::Parse {
                path: path.into(),
                line: hline,
                message: format!("missing {what} line"),
            })?;
            let vals: Result<Vec<f64>> = line
                .split_whitespace()
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        path: path.into(),
                        line: lno,
                        message: format!("bad float `{s}` in {what}"),
                    })
                })
                .collect();
            let vals = vals?;
            if vals.len() != count {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lno,
                    message: format!("{what} has {} values, expected {count}", vals.len()),
                });
            }
            Ok(vals)
        };

        let mut units = Vec::with_capacity(l);
        for u in 0..l {
            let alpha = floats_line(m, &format!("alpha of unit {u}"))?;
            let c = Mat::from_vec(m, n, floats_line(m * n, &format!("C of unit {u}"))?);
            let d = floats_line(m, &format!("d of unit {u}"))?;
            units.push(ShallowUnit { alpha, c, d });
        }
        let net = ShallowNet {
            units,
            activation,
            n,
            m,
        };
        net.validate().map_err(|e| Error::Parse {
            path: path.into(),
            line: hline,
            message: format!("{e}"),
        })?;
        Ok(net)
    }

    pub fn format(&self) -> String {
        let mut s = format!(
            "shallow {} {} {} {}\n",
            self.n,
            self.m,
            self.units.len(),
            self.activation
        );
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for unit in &self.units {
            s.push_str(&join(&unit.alpha));
            s.push('\n');
            s.push_str(&join(unit.c.data()));
            s.push('\n');
            s.push_str(&join(&unit.d));
            s.push('\n');
        }
        s
    }
}

/// Rewrite one ridge unit into m units whose weight matrices each have full
/// rank m: unit l keeps row l of C and copies component l of α and d; the
/// remaining rows are completed with standard basis vectors (largest
/// Gram-Schmidt rejection first). For square matrices the last appended row
/// is sign-flipped if needed so that det > 0. The sum of the returned units
/// evaluates identically to the input unit.
pub fn expand_full_rank(alpha: &[f64], c: &Mat, d: &[f64]) -> Result<Vec<ShallowUnit>> {
    let m = c.rows();
    let n = c.cols();
    if alpha.len() != m || d.len() != m {
        return Err(Error::Shape(format!(
            "alpha/d have lengths {}/{}, C has {m} rows",
            alpha.len(),
            d.len()
        )));
    }
    for row in 0..m {
        if c.row(row).iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroRow { unit: None, row });
        }
    }
    let mut out = Vec::with_capacity(m);
    for l in 0..m {
        let keep = c.row(l);
        let appended = complete_with_standard_basis(&[keep], n, m - 1)?;
        // Rows of the expanded matrix: row l is kept, others take the
        // appended basis vectors in order.
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut append_iter = appended.into_iter();
        for row in 0..m {
            if row == l {
                rows.push(keep.to_vec());
            } else {
                rows.push(append_iter.next().expect("m-1 appended rows"));
            }
        }
        let mut c_tilde = Mat::from_rows(&rows);
        // For square matrices with at least one appended row, flip the last
        // appended row if needed so det > 0. A 1x1 matrix has no appended
        // row to flip; its sign is reconciled against A by the factorization
        // step instead.
        if m == n && m >= 2 {
            let det = c_tilde.det();
            if det == 0.0 {
                return Err(Error::RankDeficient {
                    what: format!("expanded matrix for row {l}"),
                    expected: m,
                    got: check_rank(&c_tilde, RANK_TOL),
                });
            }
            if det < 0.0 {
                let flip = if l == m - 1 { m - 2 } else { m - 1 };
                for v in c_tilde.row_mut(flip) {
                    *v = -*v;
                }
            }
        }
        let got = check_rank(&c_tilde, RANK_TOL);
        if got != m {
            return Err(Error::RankDeficient {
                what: format!("expanded matrix for row {l}"),
                expected: m,
                got,
            });
        }
        let mut alpha_tilde = vec![0.0; m];
        let mut d_tilde = vec![0.0; m];
        alpha_tilde[l] = alpha[l];
        d_tilde[l] = d[l];
        out.push(ShallowUnit {
            alpha: alpha_tilde,
            c: c_tilde,
            d: d_tilde,
        });
    }
    Ok(out)
}

fn complete_positive_det(b: &Mat, what: &str) -> Result<Mat> {
    let (m, n) = (b.rows(), b.cols());
    let rows_ref: Vec<&[f64]> = (0..m).map(|i| b.row(i)).collect();
    let appended = complete_with_standard_basis(&rows_ref, n, n - m)?;
    let mut rows: Vec<Vec<f64>> = (0..m).map(|i| b.row(i).to_vec()).collect();
    rows.extend(appended);
    let mut full = Mat::from_rows(&rows);
    let det = full.det();
    if det == 0.0 {
        return Err(Error::RankDeficient {
            what: what.into(),
            expected: n,
            got: check_rank(&full, RANK_TOL),
        });
    }
    if det < 0.0 {
        for v in full.row_mut(n - 1) {
            *v = -*v;
        }
    }
    let cond = cond_estimate(&full);
    if cond > COND_WARN {
        log::warn!("completion of {what} is ill-conditioned (cond ~ {cond:.3e})");
    }
    Ok(full)
}

/// Factor C through A: returns P with AP = C and det P > 0. For square
/// inputs P = A⁻¹C, which requires matching determinant signs; for m < n
/// both matrices are completed to invertible square matrices with positive
/// determinants and P = Ã⁻¹C̃.
pub fn factor_through_a(a: &Mat, c: &Mat) -> Result<Mat> {
    let (m, n) = (a.rows(), a.cols());
    if c.rows() != m || c.cols() != n {
        return Err(Error::Shape(format!(
            "A is {m}x{n} but C is {}x{}",
            c.rows(),
            c.cols()
        )));
    }
    let rank_a = check_rank(a, RANK_TOL);
    if rank_a != m {
        return Err(Error::RankDeficient {
            what: "A".into(),
            expected: m,
            got: rank_a,
        });
    }
    let rank_c = check_rank(c, RANK_TOL);
    if rank_c != m {
        return Err(Error::RankDeficient {
            what: "C".into(),
            expected: m,
            got: rank_c,
        });
    }
    let p = if m == n {
        let det_a = a.det();
        let det_c = c.det();
        if (det_a > 0.0) != (det_c > 0.0) {
            return Err(Error::DetSignMismatch {
                unit: None,
                sign_a: if det_a > 0.0 { 1 } else { -1 },
                sign_c: if det_c > 0.0 { 1 } else { -1 },
            });
        }
        let a_inv = a.inverse()?;
        a_inv.matmul(c)
    } else {
        let a_full = complete_positive_det(a, "A")?;
        let c_full = complete_positive_det(c, "C")?;
        let a_inv = a_full.inverse()?;
        a_inv.matmul(&c_full)
    };
    // postconditions
    let residual = a.matmul(&p).sub(c).frobenius();
    let scale = c.frobenius().max(f64::MIN_POSITIVE);
    if residual > 1e-10 * scale {
        return Err(Error::Singular(format!(
            "factorization residual {residual:.3e} exceeds 1e-10 x ||C||"
        )));
    }
    if p.det() <= 0.0 {
        return Err(Error::Singular("factor has non-positive determinant".into()));
    }
    Ok(p)
}

/// Minimum-norm preimage q = Aᵀ(AAᵀ)⁻¹d, so that Aq = d.
pub fn lift_bias(a: &Mat, d: &[f64]) -> Result<Vec<f64>> {
    let m = a.rows();
    if d.len() != m {
        return Err(Error::Shape(format!(
            "d has length {}, A has {m} rows",
            d.len()
        )));
    }
    let rank_a = check_rank(a, RANK_TOL);
    if rank_a != m {
        return Err(Error::RankDeficient {
            what: "A".into(),
            expected: m,
            got: rank_a,
        });
    }
    let gram = a.matmul(&a.transpose());
    let z = gram.solve(d)?;
    let q = a.matvec_transpose(&z);
    let back = a.matvec(&q);
    let err: f64 = back
        .iter()
        .zip(d)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    if err > 1e-12 * scale {
        return Err(Error::Singular(format!(
            "bias lift residual {err:.3e} exceeds tolerance"
        )));
    }
    Ok(q)
}

/// Per-unit factorizations shared by both compilation targets.
fn factor_units(net: &ShallowNet, a: &Mat) -> Result<Vec<(Vec<f64>, Mat, Vec<f64>)>> {
    net.validate()?;
    let m = a.rows();
    if net.m != m || net.n != a.cols() {
        return Err(Error::Shape(format!(
            "net is {}->{} but A is {}x{}",
            net.n,
            net.m,
            a.rows(),
            a.cols()
        )));
    }
    let rank_a = check_rank(a, RANK_TOL);
    if rank_a != m {
        return Err(Error::RankDeficient {
            what: "A".into(),
            expected: m,
            got: rank_a,
        });
    }
    let mut factored = Vec::new();
    for (u, unit) in net.units.iter().enumerate() {
        let expanded =
            expand_full_rank(&unit.alpha, &unit.c, &unit.d).map_err(|e| e.with_unit(u))?;
        for sub in expanded {
            let p = factor_through_a(a, &sub.c).map_err(|e| e.with_unit(u))?;
            let q = lift_bias(a, &sub.d).map_err(|e| e.with_unit(u))?;
            factored.push((sub.alpha, p, q));
        }
    }
    Ok(factored)
}

/// Compile the shallow net into residual parameters of depth m·L whose
/// forward pass reproduces G(ξ) exactly.
pub fn compile_resnet(net: &ShallowNet, a: &Mat) -> Result<ResNetParams> {
    let factored = factor_units(net, a)?;
    let n = net.n;
    let mut alpha = Vec::with_capacity(factored.len());
    let mut beta = Vec::with_capacity(factored.len());
    let mut gamma = Vec::with_capacity(factored.len());
    let mut p_prev = Mat::identity(n);
    let mut q_prev = vec![0.0; n];
    for (al, p, q) in factored {
        let p_prev_inv = p_prev.inverse()?;
        let b = p.sub(&p_prev).matmul(&p_prev_inv);
        let bq = b.matvec(&q_prev);
        let g: Vec<f64> = q
            .iter()
            .zip(q_prev.iter().zip(&bq))
            .map(|(qn, (qp, bqp))| qn - qp - bqp)
            .collect();
        alpha.push(al);
        beta.push(b);
        gamma.push(g);
        p_prev = p;
        q_prev = q;
    }
    Ok(ResNetParams {
        alpha,
        beta,
        gamma,
        a: a.clone(),
        activation: net.activation,
    })
}

/// How the unit weights of a shallow net relate to its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightForm {
    /// G(ξ) = Σ α⁽ˡ⁾ ⊙ σ(...): the emitted path absorbs a factor L'/T into
    /// α(t) so the exact integral over [0, T] still equals G.
    Sum,
    /// G(ξ) = (T/L') Σ α⁽ˡ⁾ ⊙ σ(...): weights already carry the mean factor
    /// and are emitted unchanged.
    Mean,
}

/// Piecewise-constant parameter path on [0, T]: on [t_{l-1}, t_l) the output
/// weight is α⁽ˡ⁾ and the state is x(t) = P⁽ˡ⁾ξ + q⁽ˡ⁾ with det P⁽ˡ⁾ > 0.
#[derive(Clone, Debug)]
pub struct PwConstantPath {
    /// L'+1 breakpoints, 0 = t_0 < … < t_{L'} = T.
    pub breakpoints: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub p: Vec<Mat>,
    pub q: Vec<Vec<f64>>,
}

impl PwConstantPath {
    pub fn intervals(&self) -> usize {
        self.alpha.len()
    }

    pub fn t_horizon(&self) -> f64 {
        *self.breakpoints.last().expect("at least two breakpoints")
    }

    /// Exact integral ∫ α(t) ⊙ σ(A(P(t)ξ + q(t))) dt: each interval
    /// contributes its constant integrand times its length.
    pub fn eval_exact(&self, a: &Mat, activation: Activation, xi: &[f64]) -> Result<Vec<f64>> {
        let m = a.rows();
        let mut out = vec![0.0; m];
        for l in 0..self.intervals() {
            let width = self.breakpoints[l + 1] - self.breakpoints[l];
            let mut x = self.p[l].matvec(xi);
            for (xv, qv) in x.iter_mut().zip(&self.q[l]) {
                *xv += qv;
            }
            let sig = activation.apply(&a.matvec(&x));
            let term = hadamard(&self.alpha[l], &sig)?;
            for (o, t) in out.iter_mut().zip(&term) {
                *o += width * t;
            }
        }
        Ok(out)
    }

    /// Left-endpoint quadrature of the same integrand with `steps` uniform
    /// steps; converges to the exact integral at O(h).
    pub fn eval_euler(
        &self,
        a: &Mat,
        activation: Activation,
        xi: &[f64],
        steps: usize,
    ) -> Result<Vec<f64>> {
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        let t = self.t_horizon();
        let h = t / steps as f64;
        let m = a.rows();
        let mut out = vec![0.0; m];
        let mut interval = 0;
        for s in 0..steps {
            let tl = s as f64 * h;
            while interval + 1 < self.intervals() && tl >= self.breakpoints[interval + 1] {
                interval += 1;
            }
            let mut x = self.p[interval].matvec(xi);
            for (xv, qv) in x.iter_mut().zip(&self.q[interval]) {
                *xv += qv;
            }
            let sig = activation.apply(&a.matvec(&x));
            let term = hadamard(&self.alpha[interval], &sig)?;
            for (o, v) in out.iter_mut().zip(&term) {
                *o += h * v;
            }
        }
        Ok(out)
    }
}

/// Compile the shallow net into a piecewise-constant path on [0, T] with
/// uniform breakpoints whose exact integral reproduces G(ξ).
pub fn compile_odenet_pwc(
    net: &ShallowNet,
    a: &Mat,
    t_horizon: f64,
    form: WeightForm,
) -> Result<PwConstantPath> {
    if !(t_horizon > 0.0) || !t_horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time horizon {t_horizon} must be positive"
        )));
    }
    let factored = factor_units(net, a)?;
    let n = net.n;
    if factored.is_empty() {
        // canonical zero path: one interval with alpha = 0 integrates to 0
        return Ok(PwConstantPath {
            breakpoints: vec![0.0, t_horizon],
            alpha: vec![vec![0.0; net.m]],
            p: vec![Mat::identity(n)],
            q: vec![vec![0.0; n]],
        });
    }
    let count = factored.len();
    let scale = match form {
        WeightForm::Sum => count as f64 / t_horizon,
        WeightForm::Mean => 1.0,
    };
    let breakpoints = (0..=count)
        .map(|l| l as f64 * t_horizon / count as f64)
        .collect();
    let mut alpha = Vec::with_capacity(count);
    let mut p = Vec::with_capacity(count);
    let mut q = Vec::with_capacity(count);
    for (al, pl, ql) in factored {
        alpha.push(al.iter().map(|v| v * scale).collect());
        if pl.det() <= 0.0 {
            return Err(Error::Singular(
                "piecewise state matrix has non-positive determinant".into(),
            ));
        }
        p.push(pl);
        q.push(ql);
    }
    Ok(PwConstantPath {
        breakpoints,
        alpha,
        p,
        q,
    })
}
