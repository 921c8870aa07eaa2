//! Moving-average representation and generalized forecast-error variance
//! decomposition of a fitted QVAR.
//!
//! The decomposition uses the residual covariance directly (no Cholesky
//! ordering), so raw rows need not sum to one; the normalized matrix divides
//! each row by its sum.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qvar::QvarModel;
use crate::quantreg::QuantileLevel;

pub const DEFAULT_HORIZON: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct QvmaCoefficients {
    /// `A_0 .. A_{H-1}`.
    pub matrices: Vec<DMatrix<f64>>,
}

impl QvmaCoefficients {
    pub fn horizon(&self) -> usize {
        self.matrices.len()
    }
}

/// `A_0 = I`, `A_j = sum_{i=1}^{min(j,p)} B_i A_{j-i}`.
pub fn qvma_from_lags(lag_matrices: &[DMatrix<f64>], horizon: usize) -> Result<QvmaCoefficients> {
    if horizon == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    let n = lag_matrices
        .first()
        .map(|b| b.nrows())
        .ok_or_else(|| Error::InvalidInput("model has no lag matrices".into()))?;
    let mut a: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    a.push(DMatrix::identity(n, n));
    for j in 1..horizon {
        let mut acc = DMatrix::zeros(n, n);
        for i in 1..=j.min(lag_matrices.len()) {
            acc += &lag_matrices[i - 1] * &a[j - i];
        }
        a.push(acc);
    }
    Ok(QvmaCoefficients { matrices: a })
}

pub fn qvma(model: &QvarModel, horizon: usize) -> Result<QvmaCoefficients> {
    qvma_from_lags(&model.lag_matrices, horizon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FevdMatrix {
    /// Unnormalized shares, row `j` = target, column `k` = shock source.
    pub raw: DMatrix<f64>,
    /// Row-normalized shares.
    pub normalized: DMatrix<f64>,
    pub horizon: usize,
    pub tau: QuantileLevel,
    pub asset_order: Vec<String>,
}

/// JSON form: `{tau, horizon, assets, normalized}` with row-major nesting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FevdRecord {
    pub tau: QuantileLevel,
    pub horizon: usize,
    pub assets: Vec<String>,
    pub normalized: Vec<Vec<f64>>,
}

impl FevdMatrix {
    /// Wraps an already-normalized matrix; `raw` is set equal to it.
    pub fn from_normalized(
        normalized: DMatrix<f64>,
        tau: QuantileLevel,
        horizon: usize,
        asset_order: Vec<String>,
    ) -> Result<Self> {
        let n = asset_order.len();
        if normalized.shape() != (n, n) {
            return Err(Error::InvalidInput(format!(
                "FEVD matrix is {:?}, expected {n}x{n}",
                normalized.shape()
            )));
        }
        for (j, row) in normalized.row_iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0 && *v <= 1.0 + 1e-12)) {
                return Err(Error::InvalidInput(format!("row {j} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput(format!("row {j} sums to {s}, not 1")));
            }
        }
        Ok(Self {
            raw: normalized.clone(),
            normalized,
            horizon,
            tau,
            asset_order,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.asset_order.len()
    }

    pub fn to_record(&self) -> FevdRecord {
        FevdRecord {
            tau: self.tau,
            horizon: self.horizon,
            assets: self.asset_order.clone(),
            normalized: self
                .normalized
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_record(rec: &FevdRecord) -> Result<Self> {
        let n = rec.assets.len();
        if rec.normalized.len() != n || rec.normalized.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("FEVD record is not square".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rec.normalized[i][j]);
        Self::from_normalized(m, rec.tau, rec.horizon, rec.assets.clone())
    }
}

impl Serialize for FevdMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

/// Generalized decomposition from explicit lag matrices and covariance.
pub fn generalized_fevd_from(
    lag_matrices: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
    horizon: usize,
    tau: QuantileLevel,
    asset_order: &[String],
) -> Result<FevdMatrix> {
    let n = sigma.nrows();
    if sigma.shape() != (n, n) || asset_order.len() != n {
        return Err(Error::InvalidInput("covariance shape does not match assets".into()));
    }
    let max_var = sigma.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for k in 0..n {
        let v = sigma[(k, k)];
        if !(v > 1e-14 * max_var) || !v.is_finite() {
            return Err(Error::DegenerateVariance(format!(
                "residual variance of `{}` is {v}",
                asset_order[k]
            )));
        }
    }
    let ma = qvma_from_lags(lag_matrices, horizon)?;
    let mut num = DMatrix::<f64>::zeros(n, n);
    let mut den = vec![0.0; n];
    for a in &ma.matrices {
        let p = a * sigma;
        for j in 0..n {
            let mut d = 0.0;
            for k in 0..n {
                num[(j, k)] += p[(j, k)] * p[(j, k)];
                d += p[(j, k)] * a[(j, k)];
            }
            den[j] += d;
        }
    }
    let mut raw = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            raw[(j, k)] = num[(j, k)] / sigma[(k, k)] / den[j];
        }
    }
    let mut normalized = raw.clone();
    for j in 0..n {
        let s: f64 = raw.row(j).iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateVariance(format!(
                "decomposition row of `{}` sums to {s}",
                asset_order[j]
            )));
        }
        for k in 0..n {
            normalized[(j, k)] = raw[(j, k)] / s;
        }
    }
    Ok(FevdMatrix {
        raw,
        normalized,
        horizon,
        tau,
        asset_order: asset_order.to_vec(),
    })
}

pub fn generalized_fevd(model: &QvarModel, horizon: usize) -> Result<FevdMatrix> {
    generalized_fevd_from(
        &model.lag_matrices,
        &model.sigma,
        horizon,
        model.spec.tau,
        &model.asset_order,
    )
}
