//! Event studies: volatility-adjusted correlation changes and synthetic
//! control counterfactuals with placebo inference.

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{Duration, NaiveDateTime};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fevd::generalized_fevd;
use crate::quantreg::QuantileLevel;
use crate::qvar::{fit_qvar, QvarSpec};
use crate::spillover::{indices, to_percent};
use crate::timeseries::{balanced_window, format_instant, parse_instant, AssetMeta, Category, DeviationPanel};

/// One-sided 5% critical value of the standard normal.
pub const Z_CRIT_5PCT: f64 = 1.644_853_626_951_472_2;
pub const MIN_WINDOW_OBS: usize = 10;
pub const DEFAULT_PROXY_WINDOW: usize = 24;
pub const DEFAULT_CALM_DAYS: i64 = 30;

/// `rho / sqrt(1 + delta (1 - rho^2))`.
pub fn fr_adjust(rho_crisis: f64, delta: f64) -> Result<f64> {
    if !(delta > -1.0) {
        return Err(Error::Domain(format!("variance ratio change delta = {delta} must exceed -1")));
    }
    if !(rho_crisis.abs() <= 1.0) {
        return Err(Error::Domain(format!("correlation {rho_crisis} outside [-1, 1]")));
    }
    Ok(rho_crisis / (1.0 + delta * (1.0 - rho_crisis * rho_crisis)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWindowSpec {
    pub name: String,
    pub affected: String,
    pub event_time: NaiveDateTime,
    /// Inclusive bounds on difference timestamps.
    pub calm: (NaiveDateTime, NaiveDateTime),
    pub crisis: (NaiveDateTime, NaiveDateTime),
    /// Synthetic-control donor pool; `None` lets the caller pick.
    pub donors: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct EventFile {
    #[serde(default)]
    name: Option<String>,
    affected: String,
    event_time: String,
    #[serde(default)]
    calm: Option<[String; 2]>,
    crisis: [String; 2],
    #[serde(default)]
    donors: Option<Vec<String>>,
}

fn instant(s: &str, field: &str) -> Result<NaiveDateTime> {
    parse_instant(s).ok_or_else(|| Error::InvalidInput(format!("{field}: cannot parse `{s}` as a timestamp")))
}

impl EventWindowSpec {
    pub fn new(
        affected: impl Into<String>,
        event_time: NaiveDateTime,
        calm: (NaiveDateTime, NaiveDateTime),
        crisis: (NaiveDateTime, NaiveDateTime),
    ) -> Result<Self> {
        let affected = affected.into();
        let spec = Self {
            name: affected.clone(),
            affected,
            event_time,
            calm,
            crisis,
            donors: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (cs, ce) = self.calm;
        let (ks, ke) = self.crisis;
        if cs > ce || ks > ke {
            return Err(Error::InvalidInput("window start after its end".into()));
        }
        if ce >= ks {
            return Err(Error::InvalidInput(format!(
                "calm window (ends {}) must precede crisis window (starts {})",
                format_instant(&ce),
                format_instant(&ks)
            )));
        }
        Ok(())
    }

    /// Parses `{name, affected, event_time, calm: [s, e], crisis: [s, e], donors}`.
    /// Without `calm`, the 30 days before the event are used.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: EventFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("event JSON: {e}")))?;
        let event_time = instant(&f.event_time, "event_time")?;
        let calm = match &f.calm {
            Some([s, e]) => (instant(s, "calm")?, instant(e, "calm")?),
            None => (
                event_time - Duration::days(DEFAULT_CALM_DAYS),
                event_time - Duration::seconds(1),
            ),
        };
        let crisis = (instant(&f.crisis[0], "crisis")?, instant(&f.crisis[1], "crisis")?);
        let spec = Self {
            name: f.name.unwrap_or_else(|| f.affected.clone()),
            affected: f.affected,
            event_time,
            calm,
            crisis,
            donors: f.donors,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrResult {
    pub target: String,
    pub rho_calm: f64,
    pub rho_crisis: f64,
    pub delta: f64,
    pub rho_adj: f64,
    pub delta_rho_adj: f64,
    pub significant: bool,
    pub z_stat: f64,
    pub n_calm: usize,
    pub n_crisis: usize,
}

impl FrResult {
    pub fn delta_rho_raw(&self) -> f64 {
        self.rho_crisis - self.rho_calm
    }
}

fn window_rows(panel: &DeviationPanel, (start, end): (NaiveDateTime, NaiveDateTime)) -> Vec<usize> {
    panel
        .diff_timestamps()
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= start && **t <= end)
        .map(|(i, _)| i)
        .collect()
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn fisher_z(r: f64) -> f64 {
    r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh()
}

/// Calm-vs-crisis correlation of each target with the affected asset,
/// adjusted for the affected asset's variance change.
pub fn fr_test(panel: &DeviationPanel, spec: &EventWindowSpec, targets: &[&str]) -> Result<Vec<FrResult>> {
    spec.validate()?;
    let a = panel
        .asset_index(&spec.affected)
        .ok_or_else(|| Error::Alignment(format!("affected asset `{}` not in panel", spec.affected)))?;
    let diffs = panel.diffs();
    let calm_rows = window_rows(panel, spec.calm);
    let crisis_rows = window_rows(panel, spec.crisis);

    let own = |rows: &[usize], label: &str| -> Result<f64> {
        let x: Vec<f64> = rows.iter().map(|&t| diffs[(t, a)]).filter(|v| v.is_finite()).collect();
        if x.len() < MIN_WINDOW_OBS {
            return Err(Error::InsufficientData(format!(
                "{label} window has {} finite observations of `{}`, need {MIN_WINDOW_OBS}",
                x.len(),
                spec.affected
            )));
        }
        let v = sample_variance(&x);
        if !(v > 0.0) {
            return Err(Error::DegenerateVariance(format!(
                "`{}` is constant in the {label} window",
                spec.affected
            )));
        }
        Ok(v)
    };
    let delta = own(&crisis_rows, "crisis")? / own(&calm_rows, "calm")? - 1.0;

    targets
        .iter()
        .map(|&target| {
            let j = panel
                .asset_index(target)
                .ok_or_else(|| Error::Alignment(format!("target `{target}` not in panel")))?;
            let pairs = |rows: &[usize], label: &str| -> Result<(f64, usize)> {
                let (x, y): (Vec<f64>, Vec<f64>) = rows
                    .iter()
                    .map(|&t| (diffs[(t, a)], diffs[(t, j)]))
                    .filter(|(u, v)| u.is_finite() && v.is_finite())
                    .unzip();
                if x.len() < MIN_WINDOW_OBS {
                    return Err(Error::InsufficientData(format!(
                        "{label} window has {} aligned observations for `{}`/`{target}`, need {MIN_WINDOW_OBS}",
                        x.len(),
                        spec.affected
                    )));
                }
                let r = pearson(&x, &y).ok_or_else(|| {
                    Error::DegenerateVariance(format!("constant series in the {label} window for `{target}`"))
                })?;
                Ok((r, x.len()))
            };
            let (rho_calm, n_calm) = pairs(&calm_rows, "calm")?;
            let (rho_crisis, n_crisis) = pairs(&crisis_rows, "crisis")?;
            let rho_adj = fr_adjust(rho_crisis, delta)?;
            let se = (1.0 / (n_calm as f64 - 3.0) + 1.0 / (n_crisis as f64 - 3.0)).sqrt();
            let z_stat = (fisher_z(rho_adj) - fisher_z(rho_calm)) / se;
            Ok(FrResult {
                target: target.to_string(),
                rho_calm,
                rho_crisis,
                delta,
                rho_adj,
                delta_rho_adj: rho_adj - rho_calm,
                significant: z_stat > Z_CRIT_5PCT,
                z_stat,
                n_calm,
                n_crisis,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryContagion {
    pub category: Category,
    pub mean_delta_rho_adj: f64,
    pub targets: usize,
}

/// Mean adjusted correlation change per target category, in category order.
pub fn category_contagion(results: &[FrResult], meta: &[AssetMeta]) -> Result<Vec<CategoryContagion>> {
    let mut groups: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    for r in results {
        let cat = meta
            .iter()
            .find(|m| m.id == r.target)
            .ok_or_else(|| Error::Alignment(format!("target `{}` has no category", r.target)))?
            .category;
        groups.entry(cat).or_default().push(r.delta_rho_adj);
    }
    Ok(groups
        .into_iter()
        .map(|(category, v)| CategoryContagion {
            category,
            mean_delta_rho_adj: v.iter().sum::<f64>() / v.len() as f64,
            targets: v.len(),
        })
        .collect())
}

/// Least squares over the probability simplex: `min |y - X w|` with
/// `w >= 0`, `sum w = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

/// Euclidean projection onto `{w >= 0, sum w = 1}` (sort-based).
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn objective(y: &DVector<f64>, x: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (y - x * w).norm_squared()
}

/// Equality-constrained least squares on the support of `w`, kept only if
/// it stays feasible and does not raise the objective.
fn polish(y: &DVector<f64>, x: &DMatrix<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1e-9).collect();
    let s = support.len();
    let xs = x.select_columns(support.iter());
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    kkt.view_mut((0, 0), (s, s)).copy_from(&(xs.transpose() * &xs * 2.0));
    for i in 0..s {
        kkt[(i, s)] = 1.0;
        kkt[(s, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs.rows_mut(0, s).copy_from(&(xs.transpose() * y * 2.0));
    rhs[s] = 1.0;
    let sol = kkt.svd(true, true).solve(&rhs, 1e-13).ok()?;
    if sol.rows(0, s).iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return None;
    }
    let mut out = DVector::zeros(w.len());
    for (k, &i) in support.iter().enumerate() {
        out[i] = sol[k];
    }
    let total = out.sum();
    out /= total;
    (objective(y, x, &out) <= objective(y, x, w)).then_some(out)
}

pub fn simplex_least_squares(y: &DVector<f64>, x: &DMatrix<f64>, opts: SimplexOptions) -> DVector<f64> {
    let d = x.ncols();
    let gram = x.transpose() * x;
    let xty = x.transpose() * y;
    let lip = SymmetricEigen::new(gram.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &v| a.max(v))
        * 2.0;
    let mut w = DVector::from_element(d, 1.0 / d as f64);
    if d == 1 || lip <= 0.0 {
        return w;
    }
    let step = 1.0 / lip;
    let mut z = w.clone();
    let mut t = 1.0_f64;
    for _ in 0..opts.max_iter {
        let grad = (&gram * &z - &xty) * 2.0;
        let next = project_simplex(&(&z - grad * step));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let change = (&next - &w).amax();
        z = &next + (&next - &w) * ((t - 1.0) / t_next);
        w = next;
        t = t_next;
        if change < opts.tol {
            break;
        }
    }
    polish(y, x, &w).unwrap_or(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticControlResult {
    pub treated: String,
    pub donors: Vec<String>,
    pub weights: Vec<f64>,
    pub pre_rmse: f64,
    /// Mean treated-minus-synthetic gap over the event window.
    pub effect: f64,
    /// Effect obtained when each donor in turn is treated as the unit.
    pub placebo_effects: Vec<f64>,
    pub p_value: f64,
    pub paths: SyntheticPaths,
}

/// Observed and synthetic outcomes from the start of the pre window to the
/// end of the event window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPaths {
    pub start: usize,
    pub treated: Vec<f64>,
    pub synthetic: Vec<f64>,
}

struct Fit {
    weights: DVector<f64>,
    pre_rmse: f64,
    effect: f64,
    synthetic: Vec<f64>,
}

fn fit_unit(
    outcomes: &BTreeMap<String, Vec<f64>>,
    treated: &str,
    donors: &[String],
    pre: &Range<usize>,
    event: &Range<usize>,
) -> Fit {
    let span = pre.start.min(event.start)..pre.end.max(event.end);
    let y_pre = DVector::from_iterator(pre.len(), outcomes[treated][pre.clone()].iter().copied());
    let x_pre = DMatrix::from_fn(pre.len(), donors.len(), |i, d| outcomes[&donors[d]][pre.start + i]);
    let weights = simplex_least_squares(&y_pre, &x_pre, SimplexOptions::default());
    let synth_at = |t: usize| -> f64 { donors.iter().zip(weights.iter()).map(|(d, w)| w * outcomes[d][t]).sum() };
    let pre_rmse = (objective(&y_pre, &x_pre, &weights) / pre.len() as f64).sqrt();
    let effect = event.clone().map(|t| outcomes[treated][t] - synth_at(t)).sum::<f64>() / event.len() as f64;
    Fit {
        pre_rmse,
        effect,
        synthetic: span.map(synth_at).collect(),
        weights,
    }
}

/// Share of `{effect} ∪ placebos` at least as large as `effect` in absolute value.
pub fn placebo_p_value(effect: f64, placebos: &[f64]) -> f64 {
    let at_least = 1 + placebos.iter().filter(|p| p.abs() >= effect.abs()).count();
    at_least as f64 / (placebos.len() + 1) as f64
}

pub fn synth_control(
    outcomes: &BTreeMap<String, Vec<f64>>,
    treated: &str,
    donors: &[String],
    pre: Range<usize>,
    event: Range<usize>,
) -> Result<SyntheticControlResult> {
    if donors.len() < 2 {
        return Err(Error::DonorPool(format!(
            "synthetic control needs at least 2 donors, got {}",
            donors.len()
        )));
    }
    if donors.iter().any(|d| d == treated) {
        return Err(Error::DonorPool(format!("treated unit `{treated}` is in its own donor pool")));
    }
    if pre.len() < donors.len() {
        return Err(Error::InsufficientData(format!(
            "pre window has {} observations for {} donors",
            pre.len(),
            donors.len()
        )));
    }
    if event.is_empty() {
        return Err(Error::InsufficientData("event window is empty".into()));
    }
    let span = pre.start.min(event.start)..pre.end.max(event.end);
    for id in donors.iter().map(String::as_str).chain(std::iter::once(treated)) {
        let series = outcomes
            .get(id)
            .ok_or_else(|| Error::Alignment(format!("no outcome series for `{id}`")))?;
        if series.len() < span.end {
            return Err(Error::Alignment(format!("outcome series for `{id}` is too short")));
        }
        if pre.clone().chain(event.clone()).any(|t| !series[t].is_finite()) {
            return Err(Error::InvalidInput(format!("outcome series for `{id}` has gaps in the windows")));
        }
    }

    let main = fit_unit(outcomes, treated, donors, &pre, &event);
    let placebo_effects: Vec<f64> = donors
        .par_iter()
        .map(|d| {
            let pool: Vec<String> = donors.iter().filter(|o| *o != d).cloned().collect();
            fit_unit(outcomes, d, &pool, &pre, &event).effect
        })
        .collect();
    Ok(SyntheticControlResult {
        treated: treated.to_string(),
        donors: donors.to_vec(),
        weights: main.weights.iter().copied().collect(),
        pre_rmse: main.pre_rmse,
        effect: main.effect,
        p_value: placebo_p_value(main.effect, &placebo_effects),
        placebo_effects,
        paths: SyntheticPaths {
            start: span.start,
            treated: outcomes[treated][span].to_vec(),
            synthetic: main.synthetic,
        },
    })
}

/// Rolling mean of absolute deviation changes over the trailing `window`
/// differences (finite values only); aligned with `diff_timestamps`, `NaN`
/// until a full window is available.
pub fn spillover_proxy(panel: &DeviationPanel, window: usize) -> BTreeMap<String, Vec<f64>> {
    let diffs = panel.diffs();
    let t_len = diffs.nrows();
    panel
        .assets()
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let series = (0..t_len)
                .map(|t| {
                    if window == 0 || t + 1 < window {
                        return f64::NAN;
                    }
                    let vals: Vec<f64> = (t + 1 - window..=t)
                        .map(|s| diffs[(s, j)])
                        .filter(|v| v.is_finite())
                        .collect();
                    if vals.is_empty() {
                        f64::NAN
                    } else {
                        vals.iter().map(|v| v.abs()).sum::<f64>() / vals.len() as f64
                    }
                })
                .collect();
            (a.id.clone(), series)
        })
        .collect()
}

/// Contiguous difference-row range stamped inside `[start, end]`.
pub fn row_range(panel: &DeviationPanel, (start, end): (NaiveDateTime, NaiveDateTime)) -> Range<usize> {
    let ts = panel.diff_timestamps();
    let lo = ts.partition_point(|t| *t < start);
    let hi = ts.partition_point(|t| *t <= end);
    lo..hi.max(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpillover {
    /// Percent.
    pub pre_total: f64,
    /// Percent.
    pub during_total: f64,
    /// Percentage points.
    pub delta: f64,
}

/// Median-QVAR total spillover on the calm and crisis windows.
pub fn event_spillover_delta(
    panel: &DeviationPanel,
    spec: &EventWindowSpec,
    assets: &[&str],
    lags: usize,
    horizon: usize,
) -> Result<EventSpillover> {
    let qspec = QvarSpec::new(lags, QuantileLevel::MEDIAN)?;
    let total = |w: (NaiveDateTime, NaiveDateTime)| -> Result<f64> {
        let bp = balanced_window(panel, assets, w.0, w.1, 1)?;
        let model = fit_qvar(&bp, qspec)?;
        Ok(to_percent(indices(&generalized_fevd(&model, horizon)?).total))
    };
    let pre_total = total(spec.calm)?;
    let during_total = total(spec.crisis)?;
    Ok(EventSpillover {
        pre_total,
        during_total,
        delta: during_total - pre_total,
    })
}
