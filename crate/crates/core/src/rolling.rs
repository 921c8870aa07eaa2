//! Fixed-length rolling windows over the difference series, each run through
//! fit → decomposition → indices at every requested quantile.

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fevd::generalized_fevd;
use crate::quantreg::QuantileLevel;
use crate::qvar::{fit_qvar, QvarSpec};
use crate::spillover::{indices, to_percent, SpilloverIndices};
use crate::timeseries::{format_instant, BalancedPanel};

pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_STEP: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window: usize,
    pub step: usize,
    /// Inclusive `(start, end)` row indices.
    pub windows: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn plan(observations: usize, window: usize, step: usize) -> Result<WindowPlan> {
    if window == 0 {
        return Err(Error::Plan("window length must be at least 1".into()));
    }
    if step == 0 {
        return Err(Error::Plan("step must be at least 1".into()));
    }
    if window > observations {
        return Err(Error::Plan(format!(
            "window length {window} exceeds the {observations} available observations"
        )));
    }
    let count = (observations - window) / step + 1;
    let windows = (0..count).map(|i| (i * step, i * step + window - 1)).collect();
    Ok(WindowPlan { window, step, windows })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowFlags {
    pub unstable: bool,
    pub psd_repaired: bool,
    pub non_converged: bool,
    /// Error kind when the estimate failed.
    pub error: Option<String>,
}

impl WindowFlags {
    pub fn is_clean(&self) -> bool {
        *self == WindowFlags::default()
    }

    /// Compact `;`-separated rendering, empty when clean.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.unstable {
            parts.push("unstable".to_string());
        }
        if self.psd_repaired {
            parts.push("psd_repaired".to_string());
        }
        if self.non_converged {
            parts.push("non_converged".to_string());
        }
        if let Some(e) = &self.error {
            parts.push(format!("error:{e}"));
        }
        parts.join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub tau: QuantileLevel,
    pub indices: Option<SpilloverIndices>,
    pub flags: WindowFlags,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub start: usize,
    pub end: usize,
    pub anchor: NaiveDateTime,
    /// One entry per requested spec, in request order.
    pub estimates: Vec<WindowEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingResult {
    pub plan: WindowPlan,
    pub horizon: usize,
    pub assets: Vec<String>,
    pub windows: Vec<WindowResult>,
}

fn estimate(panel: &BalancedPanel, spec: QvarSpec, horizon: usize) -> WindowEstimate {
    let outcome = fit_qvar(panel, spec).and_then(|model| {
        let fevd = generalized_fevd(&model, horizon)?;
        Ok((model.diagnostics, indices(&fevd)))
    });
    match outcome {
        Ok((diag, idx)) => WindowEstimate {
            tau: spec.tau,
            indices: Some(idx),
            flags: WindowFlags {
                unstable: diag.unstable(),
                psd_repaired: diag.psd_repaired,
                non_converged: !diag.non_converged.is_empty(),
                error: None,
            },
            message: None,
        },
        Err(e) => WindowEstimate {
            tau: spec.tau,
            indices: None,
            flags: WindowFlags {
                error: Some(e.kind().to_string()),
                ..WindowFlags::default()
            },
            message: Some(e.to_string()),
        },
    }
}

/// Evaluates a single window; `run` is this mapped over the plan.
pub fn run_window(
    panel: &BalancedPanel,
    window: (usize, usize),
    specs: &[QvarSpec],
    horizon: usize,
) -> Result<WindowResult> {
    let (start, end) = window;
    if start > end || end >= panel.len() {
        return Err(Error::Plan(format!(
            "window [{start}, {end}] outside panel of {} observations",
            panel.len()
        )));
    }
    let sub = panel.rows(start, end);
    let estimates = specs.iter().map(|&s| estimate(&sub, s, horizon)).collect();
    Ok(WindowResult {
        start,
        end,
        anchor: panel.timestamps()[end],
        estimates,
    })
}

pub fn run(
    panel: &BalancedPanel,
    plan: &WindowPlan,
    specs: &[QvarSpec],
    horizon: usize,
) -> Result<RollingResult> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("no quantile specs requested".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    if let Some(&(_, last)) = plan.windows.last() {
        if last >= panel.len() {
            return Err(Error::Plan(format!(
                "plan reaches observation {last} but the panel has {}",
                panel.len()
            )));
        }
    }
    let windows = plan
        .windows
        .par_iter()
        .map(|&w| run_window(panel, w, specs, horizon))
        .collect::<Result<Vec<_>>>()?;
    let any_ok = windows
        .iter()
        .flat_map(|w| &w.estimates)
        .any(|e| e.indices.is_some());
    if !any_ok {
        let first = windows
            .iter()
            .flat_map(|w| &w.estimates)
            .find_map(|e| e.message.clone())
            .unwrap_or_else(|| "empty plan".into());
        return Err(Error::Run(format!(
            "all {} windows failed (first failure: {first})",
            windows.len()
        )));
    }
    Ok(RollingResult {
        plan: plan.clone(),
        horizon,
        assets: panel.asset_ids(),
        windows,
    })
}

impl RollingResult {
    pub fn header(&self) -> String {
        let mut cols = vec!["anchor_date".to_string(), "tau".into(), "total".into()];
        for prefix in ["from", "to", "net"] {
            cols.extend(self.assets.iter().map(|a| format!("{prefix}_{a}")));
        }
        cols.push("flags".into());
        cols.join(",")
    }

    /// One row per window and quantile, values in percent; failed cells are
    /// left empty.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        let blanks = 1 + 3 * self.assets.len();
        for w in &self.windows {
            for e in &w.estimates {
                let mut row = vec![format_instant(&w.anchor), e.tau.to_string()];
                match &e.indices {
                    Some(idx) => {
                        row.push(to_percent(idx.total).to_string());
                        for v in idx.from_.iter().chain(&idx.to).chain(&idx.net) {
                            row.push(to_percent(*v).to_string());
                        }
                    }
                    None => row.extend(std::iter::repeat_n(String::new(), blanks)),
                }
                row.push(e.flags.label());
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }

    /// Line-chart friendly series: per quantile, aligned arrays of anchor
    /// dates, totals and per-asset net values (`null` where a window failed).
    pub fn plot_series(&self) -> serde_json::Value {
        use serde_json::{json, Value};
        let dates: Vec<String> = self.windows.iter().map(|w| format_instant(&w.anchor)).collect();
        let n_specs = self.windows.first().map_or(0, |w| w.estimates.len());
        let series: Vec<Value> = (0..n_specs)
            .map(|k| {
                let tau = self.windows[0].estimates[k].tau;
                let cell = |f: &dyn Fn(&SpilloverIndices) -> f64| -> Vec<Value> {
                    self.windows
                        .iter()
                        .map(|w| match &w.estimates[k].indices {
                            Some(i) => json!(to_percent(f(i))),
                            None => Value::Null,
                        })
                        .collect()
                };
                let net: serde_json::Map<String, Value> = self
                    .assets
                    .iter()
                    .enumerate()
                    .map(|(j, a)| (a.clone(), Value::Array(cell(&|i| i.net[j]))))
                    .collect();
                let flags: Vec<String> =
                    self.windows.iter().map(|w| w.estimates[k].flags.label()).collect();
                json!({ "tau": tau, "total": cell(&|i| i.total), "net": net, "flags": flags })
            })
            .collect();
        json!({
            "window": self.plan.window,
            "step": self.plan.step,
            "horizon": self.horizon,
            "assets": self.assets,
            "anchor_dates": dates,
            "series": series,
        })
    }
}
