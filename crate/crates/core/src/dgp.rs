//! Synthetic VAR panels with known parameters.
//!
//! Innovations are `sigma^{1/2} z` with `z` standard normal or a
//! multivariate Student-t (one chi-square mixing draw shared by all assets,
//! which gives tail dependence), rescaled so the innovation covariance is
//! `sigma`. An optional common shock multiplier scales the innovation at
//! time `t` by `clamp(1 - gamma * f_{t-1}, 0.2, 5)`, where `f` is the
//! cross-sectional mean of the standardized lagged values: volatility rises
//! after joint declines, so the lower-tail conditional quantiles load on
//! every lagged series.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fevd::FevdMatrix;
use crate::quantreg::QuantileLevel;
use crate::qvar::{companion_matrix, spectral_radius};
use crate::timeseries::{parse_instant, AssetMeta, Category, DeviationPanel};

/// Observations simulated and discarded before the returned sample.
pub const BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Innovations {
    #[default]
    Gaussian,
    StudentT { df: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommonShock {
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub lags: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSwitch {
    /// First output row generated under the new regime.
    pub switch_time: usize,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub regime: Regime,
    pub innovations: Innovations,
    /// Number of difference observations returned.
    pub length: usize,
    pub seed: u64,
    pub regime_switch: Option<RegimeSwitch>,
    pub common_shock: Option<CommonShock>,
    pub assets: Vec<AssetMeta>,
    pub start: NaiveDateTime,
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

fn default_assets(n: usize) -> Vec<AssetMeta> {
    (1..=n)
        .map(|i| AssetMeta::new(format!("S{i}"), Category::FiatBacked))
        .collect()
}

impl DgpSpec {
    /// Single-regime Gaussian spec with default asset labels.
    pub fn new(lags: Vec<DMatrix<f64>>, sigma: DMatrix<f64>, length: usize, seed: u64) -> Self {
        let n = sigma.nrows();
        Self {
            regime: Regime { lags, sigma },
            innovations: Innovations::Gaussian,
            length,
            seed,
            regime_switch: None,
            common_shock: None,
            assets: default_assets(n),
            start: default_start(),
        }
    }

    pub fn with_innovations(mut self, innovations: Innovations) -> Self {
        self.innovations = innovations;
        self
    }

    pub fn with_common_shock(mut self, gamma: f64) -> Self {
        self.common_shock = Some(CommonShock { gamma });
        self
    }

    pub fn with_regime_switch(mut self, switch_time: usize, lags: Vec<DMatrix<f64>>, sigma: DMatrix<f64>) -> Self {
        self.regime_switch = Some(RegimeSwitch {
            switch_time,
            regime: Regime { lags, sigma },
        });
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_assets(mut self, assets: Vec<AssetMeta>) -> Self {
        self.assets = assets;
        self
    }

    pub fn n(&self) -> usize {
        self.regime.sigma.nrows()
    }

    pub fn lags(&self) -> usize {
        self.regime.lags.len()
    }

    /// The post-switch regime as a single-regime spec.
    pub fn post_switch(&self) -> Option<DgpSpec> {
        self.regime_switch.as_ref().map(|rs| DgpSpec {
            regime: rs.regime.clone(),
            regime_switch: None,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Spec("n must be at least 1".into()));
        }
        if self.assets.len() != n {
            return Err(Error::Spec(format!("{} asset labels for n = {n}", self.assets.len())));
        }
        if self.length == 0 {
            return Err(Error::Spec("T must be at least 1".into()));
        }
        if let Innovations::StudentT { df } = self.innovations {
            if !(df > 2.0) {
                return Err(Error::Spec(format!("Student-t df = {df} must exceed 2")));
            }
        }
        validate_regime(&self.regime, n, self.lags(), "")?;
        if let Some(rs) = &self.regime_switch {
            if rs.switch_time >= self.length {
                return Err(Error::Spec(format!(
                    "switch_time {} outside sample of length {}",
                    rs.switch_time, self.length
                )));
            }
            validate_regime(&rs.regime, n, self.lags(), "post-switch ")?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DgpSpecFile =
            serde_json::from_str(text).map_err(|e| Error::Spec(format!("spec JSON: {e}")))?;
        let spec = file.into_spec()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DgpSpecFile::from_spec(self)).expect("spec serializes")
    }
}

fn validate_regime(r: &Regime, n: usize, p: usize, which: &str) -> Result<()> {
    if p == 0 || r.lags.len() != p {
        return Err(Error::Spec(format!("{which}regime needs p >= 1 lag matrices matching p")));
    }
    if r.lags.iter().any(|b| b.shape() != (n, n)) || r.sigma.shape() != (n, n) {
        return Err(Error::Spec(format!("{which}matrices must be {n}x{n}")));
    }
    if r.lags.iter().chain(std::iter::once(&r.sigma)).any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::Spec(format!("{which}parameters must be finite")));
    }
    let asym = (&r.sigma - r.sigma.transpose()).amax();
    if asym > 1e-12 * r.sigma.amax().max(1.0) {
        return Err(Error::Spec(format!("{which}sigma is not symmetric")));
    }
    let eig = SymmetricEigen::new(r.sigma.clone());
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if min < -1e-10 * r.sigma.trace().abs() {
        return Err(Error::Spec(format!("{which}sigma is not positive semidefinite")));
    }
    let radius = spectral_radius(&companion_matrix(&r.lags));
    if radius >= 1.0 {
        return Err(Error::Spec(format!(
            "{which}dynamics are not stable (companion spectral radius {radius:.6})"
        )));
    }
    Ok(())
}

fn sqrt_psd(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sigma.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Generates the panel. The returned differences are the simulated `Y_t`;
/// deviation levels are their cumulative sums starting from zero, one day
/// apart from `spec.start`.
pub fn simulate(spec: &DgpSpec) -> Result<DeviationPanel> {
    spec.validate()?;
    let n = spec.n();
    let p = spec.lags();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let roots = (
        sqrt_psd(&spec.regime.sigma),
        spec.regime_switch.as_ref().map(|rs| sqrt_psd(&rs.regime.sigma)),
    );
    let scales: Vec<f64> = (0..n)
        .map(|j| {
            let v = spec.regime.sigma[(j, j)];
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let chi = match spec.innovations {
        Innovations::StudentT { df } => Some((df, ChiSquared::new(df).map_err(|e| Error::Spec(e.to_string()))?)),
        Innovations::Gaussian => None,
    };

    let total = BURN_IN + spec.length;
    // history[0] is Y_{t-1}
    let mut history: Vec<DVector<f64>> = vec![DVector::zeros(n); p];
    let mut out = DMatrix::zeros(spec.length, n);
    for step in 0..total {
        let post = spec
            .regime_switch
            .as_ref()
            .filter(|rs| step >= BURN_IN + rs.switch_time);
        let (regime, root) = match post {
            Some(rs) => (&rs.regime, roots.1.as_ref().expect("post-switch root")),
            None => (&spec.regime, &roots.0),
        };

        let mut z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        if let Some((df, dist)) = &chi {
            let w: f64 = dist.sample(&mut rng);
            z *= ((df - 2.0) / w).sqrt();
        }
        let mut eps = root * z;
        if let Some(cs) = spec.common_shock {
            let f = history[0]
                .iter()
                .zip(&scales)
                .map(|(y, s)| y / s)
                .sum::<f64>()
                / n as f64;
            eps *= (1.0 - cs.gamma * f).clamp(0.2, 5.0);
        }
        let mut y = eps;
        for (b, lagged) in regime.lags.iter().zip(&history) {
            y += b * lagged;
        }
        history.rotate_right(1);
        history[0] = y.clone();
        if step >= BURN_IN {
            out.row_mut(step - BURN_IN).copy_from(&y.transpose());
        }
    }

    let mut levels = DMatrix::zeros(spec.length + 1, n);
    for t in 0..spec.length {
        for j in 0..n {
            levels[(t + 1, j)] = levels[(t, j)] + out[(t, j)];
        }
    }
    let timestamps = (0..=spec.length as i64)
        .map(|d| spec.start + Duration::days(d))
        .collect();
    DeviationPanel::from_deviations(timestamps, spec.assets.clone(), levels)
}

/// Population decomposition of the (single-regime) spec.
///
/// Moving-average matrices are read off powers of the companion matrix
/// rather than the lag recursion used by the estimator, so the two routes
/// share no code beyond the formula itself.
pub fn theoretical_fevd(spec: &DgpSpec, horizon: usize) -> Result<FevdMatrix> {
    if spec.regime_switch.is_some() {
        return Err(Error::Spec(
            "theoretical decomposition needs a single-regime spec (use post_switch())".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    spec.validate()?;
    let n = spec.n();
    let sigma = &spec.regime.sigma;
    let companion = companion_matrix(&spec.regime.lags);
    let np = companion.nrows();
    let mut power = DMatrix::<f64>::identity(np, np);
    let mut num = vec![vec![0.0; n]; n];
    let mut den = vec![0.0; n];
    for _ in 0..horizon {
        let a = power.view((0, 0), (n, n)).into_owned();
        let a_sigma = &a * sigma;
        for j in 0..n {
            for k in 0..n {
                num[j][k] += a_sigma[(j, k)].powi(2);
            }
            den[j] += (0..n).map(|k| a_sigma[(j, k)] * a[(j, k)]).sum::<f64>();
        }
        power = &companion * power;
    }
    let raw = DMatrix::from_fn(n, n, |j, k| num[j][k] / sigma[(k, k)] / den[j]);
    let normalized = DMatrix::from_fn(n, n, |j, k| raw[(j, k)] / raw.row(j).sum());
    Ok(FevdMatrix {
        raw,
        normalized,
        horizon,
        tau: QuantileLevel::MEDIAN,
        asset_order: spec.assets.iter().map(|a| a.id.clone()).collect(),
    })
}

/// On-disk JSON layout of [`DgpSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpecFile {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "B", alias = "b")]
    pub b: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default)]
    pub dist: Innovations,
    #[serde(rename = "T", alias = "t")]
    pub t: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime_switch: Option<RegimeSwitchFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_shock: Option<CommonShock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assets: Option<Vec<AssetMeta>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSwitchFile {
    pub switch_time: usize,
    #[serde(rename = "B", alias = "b")]
    pub b: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
}

fn to_matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Spec(format!("{what} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl DgpSpecFile {
    fn lag_list(b: &[Vec<Vec<f64>>], n: usize, p: usize) -> Result<Vec<DMatrix<f64>>> {
        if b.len() != p {
            return Err(Error::Spec(format!("{} lag matrices given for p = {p}", b.len())));
        }
        b.iter().map(|m| to_matrix(m, n, "B")).collect()
    }

    pub fn into_spec(self) -> Result<DgpSpec> {
        let n = self.n;
        let lags = Self::lag_list(&self.b, n, self.p)?;
        let sigma = to_matrix(&self.sigma, n, "sigma")?;
        let regime_switch = self
            .regime_switch
            .map(|rs| -> Result<RegimeSwitch> {
                Ok(RegimeSwitch {
                    switch_time: rs.switch_time,
                    regime: Regime {
                        lags: Self::lag_list(&rs.b, n, self.p)?,
                        sigma: to_matrix(&rs.sigma, n, "post-switch sigma")?,
                    },
                })
            })
            .transpose()?;
        let start = match self.start {
            Some(s) => parse_instant(&s).ok_or_else(|| Error::Spec(format!("bad start date `{s}`")))?,
            None => default_start(),
        };
        Ok(DgpSpec {
            regime: Regime { lags, sigma },
            innovations: self.dist,
            length: self.t,
            seed: self.seed,
            regime_switch,
            common_shock: self.common_shock,
            assets: self.assets.unwrap_or_else(|| default_assets(n)),
            start,
        })
    }

    pub fn from_spec(spec: &DgpSpec) -> Self {
        Self {
            n: spec.n(),
            p: spec.lags(),
            b: spec.regime.lags.iter().map(to_nested).collect(),
            sigma: to_nested(&spec.regime.sigma),
            dist: spec.innovations,
            t: spec.length,
            seed: spec.seed,
            regime_switch: spec.regime_switch.as_ref().map(|rs| RegimeSwitchFile {
                switch_time: rs.switch_time,
                b: rs.regime.lags.iter().map(to_nested).collect(),
                sigma: to_nested(&rs.regime.sigma),
            }),
            common_shock: spec.common_shock,
            assets: Some(spec.assets.clone()),
            start: Some(crate::timeseries::format_instant(&spec.start)),
        }
    }
}
