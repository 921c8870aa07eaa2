//! Quantile VAR(p): equation-by-equation quantile regressions on lagged levels
//! of the difference series, plus the residual covariance used by the
//! variance decomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantreg::{self, QuantileLevel, SolverOptions};
use crate::timeseries::BalancedPanel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QvarSpec {
    pub lags: usize,
    pub tau: QuantileLevel,
}

impl QvarSpec {
    pub fn new(lags: usize, tau: QuantileLevel) -> Result<Self> {
        if lags == 0 {
            return Err(Error::InvalidInput("lag order must be at least 1".into()));
        }
        Ok(Self { lags, tau })
    }
}

impl Default for QvarSpec {
    fn default() -> Self {
        Self {
            lags: 1,
            tau: QuantileLevel::MEDIAN,
        }
    }
}

/// Non-fatal conditions met while fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub psd_repaired: bool,
    pub non_converged: Vec<usize>,
    pub non_unique: Vec<usize>,
    pub spectral_radius: f64,
}

impl FitDiagnostics {
    pub fn unstable(&self) -> bool {
        self.spectral_radius >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QvarModel {
    pub spec: QvarSpec,
    /// Intercept of each equation.
    pub intercepts: DVector<f64>,
    /// `lag_matrices[i]` multiplies `Y_{t-i-1}`; row `j` is equation `j`.
    pub lag_matrices: Vec<DMatrix<f64>>,
    /// `(T - p) x n`; empty when the model was built from known parameters.
    pub residuals: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub asset_order: Vec<String>,
    pub diagnostics: FitDiagnostics,
}

impl QvarModel {
    /// Assembles a model from given parameters (no residuals).
    pub fn from_parameters(
        spec: QvarSpec,
        intercepts: DVector<f64>,
        lag_matrices: Vec<DMatrix<f64>>,
        sigma: DMatrix<f64>,
        asset_order: Vec<String>,
    ) -> Result<Self> {
        let n = asset_order.len();
        if lag_matrices.len() != spec.lags {
            return Err(Error::InvalidInput(format!(
                "{} lag matrices for lag order {}",
                lag_matrices.len(),
                spec.lags
            )));
        }
        if lag_matrices.iter().any(|b| b.shape() != (n, n))
            || sigma.shape() != (n, n)
            || intercepts.len() != n
        {
            return Err(Error::InvalidInput(format!(
                "parameter shapes inconsistent with {n} assets"
            )));
        }
        let mut model = Self {
            spec,
            intercepts,
            lag_matrices,
            residuals: DMatrix::zeros(0, n),
            sigma,
            asset_order,
            diagnostics: FitDiagnostics::default(),
        };
        model.diagnostics.spectral_radius = stability_check(&model);
        Ok(model)
    }

    pub fn n_assets(&self) -> usize {
        self.asset_order.len()
    }
}

/// Block companion matrix `[[B_1 .. B_p], [I 0]]` of size `np x np`.
pub fn companion_matrix(lag_matrices: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = lag_matrices.len();
    let n = lag_matrices.first().map_or(0, |b| b.nrows());
    let mut c = DMatrix::zeros(n * p, n * p);
    for (i, b) in lag_matrices.iter().enumerate() {
        c.view_mut((0, i * n), (n, n)).copy_from(b);
    }
    for i in n..n * p {
        c[(i, i - n)] = 1.0;
    }
    c
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |a, z| a.max(z.norm()))
}

/// Spectral radius of the companion matrix; `>= 1` means the fitted
/// dynamics are not stable.
pub fn stability_check(model: &QvarModel) -> f64 {
    spectral_radius(&companion_matrix(&model.lag_matrices))
}

/// Sample covariance (divisor `rows - 1`), symmetrized.
pub fn residual_covariance(residuals: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = residuals.shape();
    let means: Vec<f64> = (0..n)
        .map(|j| residuals.column(j).iter().sum::<f64>() / m as f64)
        .collect();
    let centered = DMatrix::from_fn(m, n, |i, j| residuals[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    (&cov + cov.transpose()) * 0.5
}

/// Clips negative eigenvalues when the smallest one falls below
/// `-1e-10 * trace`. Returns whether a repair happened.
pub fn repair_psd(sigma: &mut DMatrix<f64>) -> bool {
    let trace = sigma.trace();
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if min >= -1e-10 * trace.abs() {
        return false;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    *sigma = (&rebuilt + rebuilt.transpose()) * 0.5;
    true
}

/// Stacked lag regressors `[Y_{t-1}, ..., Y_{t-p}]` for `t = p..T-1`.
pub fn lagged_design(data: &DMatrix<f64>, lags: usize) -> DMatrix<f64> {
    let (t, n) = data.shape();
    DMatrix::from_fn(t - lags, n * lags, |r, c| {
        let lag = c / n + 1;
        data[(r + lags - lag, c % n)]
    })
}

pub fn fit_qvar(panel: &BalancedPanel, spec: QvarSpec) -> Result<QvarModel> {
    fit_qvar_with(panel, spec, &SolverOptions::default())
}

pub fn fit_qvar_with(
    panel: &BalancedPanel,
    spec: QvarSpec,
    opts: &SolverOptions,
) -> Result<QvarModel> {
    let data = panel.data();
    let (t, n) = data.shape();
    let p = spec.lags;
    if p == 0 {
        return Err(Error::InvalidInput("lag order must be at least 1".into()));
    }
    if t <= p || t - p <= n * p + 1 {
        return Err(Error::InsufficientData(format!(
            "{t} observations cannot identify a {n}-asset QVAR({p}); need T - p > {}",
            n * p + 1
        )));
    }
    let design = lagged_design(data, p);
    let rows = t - p;

    let fits: Vec<Result<quantreg::QuantileFitResult>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let y: Vec<f64> = (p..t).map(|r| data[(r, j)]).collect();
            quantreg::fit(&y, &design, spec.tau, opts).map_err(|e| match e {
                Error::SingularDesign { message, .. } => Error::SingularDesign {
                    equation: Some(j),
                    message: format!("{} ({})", message, panel.assets()[j].id),
                },
                other => other,
            })
        })
        .collect();

    let mut intercepts = DVector::zeros(n);
    let mut lag_matrices = vec![DMatrix::zeros(n, n); p];
    let mut residuals = DMatrix::zeros(rows, n);
    let mut diagnostics = FitDiagnostics::default();
    for (j, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        intercepts[j] = fit.intercept;
        for (c, b) in fit.coefficients.iter().enumerate() {
            lag_matrices[c / n][(j, c % n)] = *b;
        }
        for (r, e) in fit.residuals.iter().enumerate() {
            residuals[(r, j)] = *e;
        }
        if !fit.converged {
            diagnostics.non_converged.push(j);
        }
        if fit.non_unique {
            diagnostics.non_unique.push(j);
        }
    }
    let mut sigma = residual_covariance(&residuals);
    diagnostics.psd_repaired = repair_psd(&mut sigma);
    diagnostics.spectral_radius = spectral_radius(&companion_matrix(&lag_matrices));

    Ok(QvarModel {
        spec,
        intercepts,
        lag_matrices,
        residuals,
        sigma,
        asset_order: panel.asset_ids(),
        diagnostics,
    })
}
