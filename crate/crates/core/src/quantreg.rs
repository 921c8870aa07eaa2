//! Linear quantile regression.
//!
//! `fit` minimizes `sum_i rho_tau(y_i - a - x_i'b)` with a primal-dual
//! interior-point method applied to the bounded dual linear program
//!
//! ```text
//! max y'd   s.t.  Z'd = (1 - tau) Z'1,   0 <= d <= 1,      Z = [1, X]
//! ```
//!
//! (the Frisch-Newton formulation). Each iteration solves one `q x q`
//! normal-equation system with `q = k + 1`, so the cost is linear in the
//! number of observations. Mehrotra predictor-corrector steps are used.
//!
//! After the interior-point phase the solution is pushed to a vertex: the
//! `q` observations with the smallest absolute residuals (subject to linear
//! independence) are interpolated exactly and the vertex is kept when it is
//! no worse than the interior-point iterate. The vertex's dual multipliers
//! certify optimality and reveal non-unique optima.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A quantile level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub const MEDIAN: QuantileLevel = QuantileLevel(0.5);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::Domain(format!("quantile level {tau} outside (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

impl fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Check function `u * (tau - 1{u < 0})`.
pub fn quantile_loss(u: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if u < 0.0 {
        u * (t - 1.0)
    } else {
        u * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality-gap tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFitResult {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Quantile loss at the returned coefficients, original units.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `y - intercept - X coefficients`; exactly zero on interpolated observations.
    pub residuals: Vec<f64>,
    /// Observations interpolated by the returned vertex, if a vertex was returned.
    pub basis: Option<Vec<usize>>,
    /// The optimum is a face; the returned point is one of several minimizers.
    pub non_unique: bool,
}

const STEP_FRACTION: f64 = 0.99995;
const RANK_TOL: f64 = 1e-10;

/// Standardized design `[1, (x - mean) / sd]` plus the transform back.
struct Standardized {
    z: DMatrix<f64>,
    y: Vec<f64>,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn standardize(y: &[f64], x: &DMatrix<f64>) -> Result<Standardized> {
    let (m, k) = x.shape();
    let mf = m as f64;
    let mut x_mean = Vec::with_capacity(k);
    let mut x_sd = Vec::with_capacity(k);
    for c in 0..k {
        let col = x.column(c);
        let mean = col.iter().sum::<f64>() / mf;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mf;
        let sd = var.sqrt();
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(sd > 1e-12 * scale.max(f64::MIN_POSITIVE)) || sd == 0.0 {
            return Err(Error::SingularDesign {
                equation: None,
                message: format!("regressor column {c} is constant"),
            });
        }
        x_mean.push(mean);
        x_sd.push(sd);
    }
    let y_mean = y.iter().sum::<f64>() / mf;
    let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / mf).sqrt();
    let y_abs = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let y_scale = if y_sd > 1e-14 * y_abs.max(f64::MIN_POSITIVE) { y_sd } else { 1.0 };

    let z = DMatrix::from_fn(m, k + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            (x[(i, c - 1)] - x_mean[c - 1]) / x_sd[c - 1]
        }
    });
    let ys = y.iter().map(|v| (v - y_mean) / y_scale).collect();
    Ok(Standardized {
        z,
        y: ys,
        x_mean,
        x_sd,
        y_mean,
        y_scale,
    })
}

fn check_rank(z: &DMatrix<f64>) -> Result<()> {
    let sv = z.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, &v| a.max(v));
    let min = sv.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if !(max > 0.0) || min / max < RANK_TOL {
        return Err(Error::SingularDesign {
            equation: None,
            message: format!(
                "design is rank deficient (condition estimate {:.3e})",
                if min > 0.0 { max / min } else { f64::INFINITY }
            ),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective_of(residuals: &[f64], tau: QuantileLevel) -> f64 {
    residuals.iter().map(|&u| quantile_loss(u, tau)).sum()
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let q = m.nrows();
    let base = (m.trace() / q as f64).abs().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-14 * base;
    for _ in 0..8 {
        let mut r = m.clone();
        for i in 0..q {
            r[(i, i)] += ridge;
        }
        if let Some(ch) = r.cholesky() {
            return Some(ch.solve(rhs));
        }
        ridge *= 100.0;
    }
    m.clone().lu().solve(rhs)
}

/// Largest step in `[0, 1]` keeping `v + alpha * dv` positive (with the
/// usual fraction-to-boundary damping).
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (x, dx) in v.iter().zip(dv) {
        if *dx < 0.0 {
            alpha = alpha.min(-x / dx);
        }
    }
    (STEP_FRACTION * alpha).min(1.0)
}

struct InteriorPoint {
    beta: DVector<f64>,
    dual: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Frisch-Newton iterations on the standardized problem.
fn interior_point(z: &DMatrix<f64>, y: &[f64], tau: f64, opts: &SolverOptions) -> InteriorPoint {
    let (m, q) = z.shape();
    let zt = z.transpose();
    let c: Vec<f64> = y.iter().map(|v| -v).collect();
    let ones = DVector::from_element(m, 1.0);
    let b: DVector<f64> = &zt * &ones * (1.0 - tau);
    let b_norm = b.amax();
    let c_norm = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    // primal: x in [0, 1] with slack s = 1 - x; dual: (yd, z, w)
    let mut x = vec![1.0 - tau; m];
    let mut s = vec![tau; m];

    let ztz = &zt * z;
    let cvec = DVector::from_column_slice(&c);
    let mut yd = solve_spd(&ztz, &(&zt * &cvec)).unwrap_or_else(|| DVector::zeros(q));
    let fitted = z * &yd;
    let mut zd = vec![0.0; m];
    let mut wd = vec![0.0; m];
    const INIT_EPS: f64 = 1e-6;
    for i in 0..m {
        let r = c[i] - fitted[i];
        if r.abs() < INIT_EPS {
            zd[i] = r.max(0.0) + INIT_EPS;
            wd[i] = (-r).max(0.0) + INIT_EPS;
        } else {
            zd[i] = r.max(0.0);
            wd[i] = (-r).max(0.0);
        }
    }
    // a zero entry would stall the first step
    for i in 0..m {
        if zd[i] == 0.0 {
            zd[i] = INIT_EPS;
            wd[i] += INIT_EPS;
        } else if wd[i] == 0.0 {
            wd[i] = INIT_EPS;
            zd[i] += INIT_EPS;
        }
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut dx = vec![0.0; m];
    let mut dz = vec![0.0; m];
    let mut dw = vec![0.0; m];
    let mut t = vec![0.0; m];
    let mut qd = vec![0.0; m];
    let mut sig_x = vec![0.0; m];
    let mut sig_s = vec![0.0; m];

    loop {
        let gap = dot(&x, &zd) + dot(&s, &wd);
        let pobj = dot(&c, &x);
        let xv = DVector::from_column_slice(&x);
        let rp: DVector<f64> = &b - &zt * &xv;
        let aty = z * &yd;
        let rd: Vec<f64> = (0..m).map(|i| c[i] - aty[i] - zd[i] + wd[i]).collect();
        let rp_ok = rp.amax() <= 1e-9 * (1.0 + b_norm);
        let rd_ok = rd.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= 1e-9 * (1.0 + c_norm);
        if gap <= opts.tol * (1.0 + pobj.abs()) && rp_ok && rd_ok {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter || !gap.is_finite() {
            break;
        }
        iterations += 1;

        for i in 0..m {
            qd[i] = 1.0 / (zd[i] / x[i] + wd[i] / s[i]);
        }
        let mut zq = z.clone();
        for (i, mut row) in zq.row_iter_mut().enumerate() {
            row *= qd[i];
        }
        let normal = &zt * &zq;

        // Solves the Newton system for given complementarity targets and
        // returns dy; fills dx, dz, dw.
        let mut newton = |sig_x: &[f64], sig_s: &[f64], dx: &mut [f64], dz: &mut [f64], dw: &mut [f64]| {
            for i in 0..m {
                t[i] = rd[i] - sig_x[i] / x[i] + sig_s[i] / s[i];
            }
            let qt = DVector::from_iterator(m, (0..m).map(|i| qd[i] * t[i]));
            let rhs = &rp + &zt * &qt;
            let dy = solve_spd(&normal, &rhs).unwrap_or_else(|| DVector::zeros(q));
            let ady = z * &dy;
            for i in 0..m {
                dx[i] = qd[i] * (ady[i] - t[i]);
                dz[i] = (sig_x[i] - zd[i] * dx[i]) / x[i];
                dw[i] = (sig_s[i] + wd[i] * dx[i]) / s[i];
            }
            dy
        };

        // predictor
        for i in 0..m {
            sig_x[i] = -x[i] * zd[i];
            sig_s[i] = -s[i] * wd[i];
        }
        let _ = newton(&sig_x, &sig_s, &mut dx, &mut dz, &mut dw);
        let ds: Vec<f64> = dx.iter().map(|v| -v).collect();
        let ap = max_step(&x, &dx).min(max_step(&s, &ds));
        let ad = max_step(&zd, &dz).min(max_step(&wd, &dw));
        let mut mu_aff = 0.0;
        for i in 0..m {
            mu_aff += (x[i] + ap * dx[i]) * (zd[i] + ad * dz[i])
                + (s[i] + ap * ds[i]) * (wd[i] + ad * dw[i]);
        }
        let sigma = (mu_aff / gap).clamp(0.0, 1.0).powi(3);
        let mu = sigma * gap / (2 * m) as f64;

        // corrector
        for i in 0..m {
            sig_x[i] = mu - x[i] * zd[i] - dx[i] * dz[i];
            sig_s[i] = mu - s[i] * wd[i] - ds[i] * dw[i];
        }
        let dy = newton(&sig_x, &sig_s, &mut dx, &mut dz, &mut dw);
        let ds: Vec<f64> = dx.iter().map(|v| -v).collect();
        let ap = max_step(&x, &dx).min(max_step(&s, &ds));
        let ad = max_step(&zd, &dz).min(max_step(&wd, &dw));
        for i in 0..m {
            x[i] += ap * dx[i];
            s[i] += ap * ds[i];
            zd[i] += ad * dz[i];
            wd[i] += ad * dw[i];
        }
        yd += dy * ad;
    }

    InteriorPoint {
        beta: -yd,
        dual: x,
        iterations,
        converged,
    }
}

struct Vertex {
    beta: DVector<f64>,
    basis: Vec<usize>,
    /// All basic dual multipliers lie in `[tau - 1, tau]`.
    optimal: bool,
    non_unique: bool,
}

/// Interpolates the `q` observations closest to the interior-point fit and
/// checks the resulting vertex against the dual feasibility conditions.
fn crossover(z: &DMatrix<f64>, y: &[f64], tau: f64, ip: &InteriorPoint) -> Option<Vertex> {
    let (m, q) = z.shape();
    let fitted = z * &ip.beta;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        (y[a] - fitted[a])
            .abs()
            .total_cmp(&(y[b] - fitted[b]).abs())
            .then(a.cmp(&b))
    });

    // greedy row selection with modified Gram-Schmidt
    let mut basis = Vec::with_capacity(q);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(q);
    for &i in &order {
        if basis.len() == q {
            break;
        }
        let row: DVector<f64> = z.row(i).transpose();
        let norm0 = row.norm();
        let mut v = row;
        for o in &ortho {
            let p = v.dot(o);
            v -= o * p;
        }
        let nv = v.norm();
        if nv > 1e-8 * norm0 {
            ortho.push(v / nv);
            basis.push(i);
        }
    }
    if basis.len() < q {
        return None;
    }
    let zb = z.select_rows(basis.iter());
    let yb = DVector::from_iterator(q, basis.iter().map(|&i| y[i]));
    let lu = zb.clone().lu();
    let beta = lu.solve(&yb)?;

    // dual multipliers d_i = a_i - (1 - tau) must satisfy Z'd = 0
    let fitted = z * &beta;
    let in_basis = {
        let mut f = vec![false; m];
        for &i in &basis {
            f[i] = true;
        }
        f
    };
    let mut rhs = DVector::zeros(q);
    for i in 0..m {
        if in_basis[i] {
            continue;
        }
        let r = y[i] - fitted[i];
        let d = if r > 0.0 {
            tau
        } else if r < 0.0 {
            tau - 1.0
        } else {
            (ip.dual[i] - (1.0 - tau)).clamp(tau - 1.0, tau)
        };
        rhs -= z.row(i).transpose() * d;
    }
    let d_basis = zb.transpose().lu().solve(&rhs)?;
    let eps = 1e-9;
    let optimal = d_basis
        .iter()
        .all(|&d| d >= tau - 1.0 - eps && d <= tau + eps);
    let non_unique = optimal
        && d_basis
            .iter()
            .any(|&d| (d - tau).abs() <= 1e-7 || (d - (tau - 1.0)).abs() <= 1e-7);
    Some(Vertex {
        beta,
        basis,
        optimal,
        non_unique,
    })
}

/// Fits the `tau`-quantile regression of `y` on `[1, x]`.
///
/// `x` is `m x k` (no intercept column); `k` may be zero. Non-convergence
/// within `opts.max_iter` is reported through `converged = false`.
pub fn fit(
    y: &[f64],
    x: &DMatrix<f64>,
    tau: QuantileLevel,
    opts: &SolverOptions,
) -> Result<QuantileFitResult> {
    let (m, k) = x.shape();
    if y.len() != m {
        return Err(Error::InvalidInput(format!(
            "response has {} rows, design has {m}",
            y.len()
        )));
    }
    if m <= k + 1 {
        return Err(Error::InsufficientData(format!(
            "{m} observations for {} parameters",
            k + 1
        )));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in regression data".into()));
    }
    let st = standardize(y, x)?;
    check_rank(&st.z)?;

    let t = tau.value();
    let ip = interior_point(&st.z, &st.y, t, opts);
    let ip_resid: Vec<f64> = {
        let f = &st.z * &ip.beta;
        (0..m).map(|i| st.y[i] - f[i]).collect()
    };
    let ip_obj = objective_of(&ip_resid, tau);

    let mut beta_std = ip.beta.clone();
    let mut basis = None;
    let mut non_unique = false;
    let mut converged = ip.converged;
    if let Some(v) = crossover(&st.z, &st.y, t, &ip) {
        let f = &st.z * &v.beta;
        let v_resid: Vec<f64> = (0..m).map(|i| st.y[i] - f[i]).collect();
        let v_obj = objective_of(&v_resid, tau);
        if v.optimal || v_obj <= ip_obj * (1.0 + 1e-9) + 1e-12 {
            converged |= v.optimal;
            non_unique = v.non_unique;
            beta_std = v.beta;
            basis = Some(v.basis);
        }
    }

    // back to original units
    let coefficients: Vec<f64> = (0..k)
        .map(|c| st.y_scale * beta_std[c + 1] / st.x_sd[c])
        .collect();
    let intercept = st.y_mean + st.y_scale * beta_std[0]
        - coefficients
            .iter()
            .zip(&st.x_mean)
            .map(|(b, mu)| b * mu)
            .sum::<f64>();
    let mut residuals: Vec<f64> = (0..m)
        .map(|i| {
            y[i] - intercept
                - coefficients
                    .iter()
                    .enumerate()
                    .map(|(c, b)| b * x[(i, c)])
                    .sum::<f64>()
        })
        .collect();
    match &basis {
        Some(b) => {
            for &i in b {
                residuals[i] = 0.0;
            }
        }
        None => {
            // interior-point limit: snap numerically-zero residuals
            let scale = st.y_scale * 1e-9;
            for r in residuals.iter_mut() {
                if r.abs() <= scale {
                    *r = 0.0;
                }
            }
        }
    }
    let objective = objective_of(&residuals, tau);

    Ok(QuantileFitResult {
        intercept,
        coefficients,
        objective,
        iterations: ip.iterations,
        converged,
        residuals,
        basis,
        non_unique,
    })
}
