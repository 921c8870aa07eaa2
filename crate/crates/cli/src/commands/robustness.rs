use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::json;
use spill_core::fevd::generalized_fevd;
use spill_core::qvar::fit_qvar;
use spill_core::spillover::{indices, to_percent};
use spill_core::{QuantileLevel, QvarModel, QvarSpec};

use crate::config::{load_panel, validate_quantiles, Format, Grid, ResolvedConfig};
use crate::emit::{num, pct1, Emitter};
use crate::{CliError, ModelArgs, RobustnessArgs};

pub const DEFAULT_LAG_GRID: [usize; 3] = [1, 2, 3];
pub const DEFAULT_HORIZON_GRID: [usize; 4] = [5, 10, 15, 20];
pub const DEFAULT_QUANTILE_SETS: [[f64; 3]; 3] = [[0.01, 0.5, 0.99], [0.05, 0.5, 0.95], [0.1, 0.5, 0.9]];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("config validation: {}", msg.into()))
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| usage(format!("cannot parse `{s}` in {what}"))))
        .collect()
}

fn parse_sets(raw: &str) -> Result<Vec<Vec<f64>>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|set| {
            set.split('/')
                .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("cannot parse quantile set `{set}`"))))
                .collect()
        })
        .collect()
}

fn resolve_grid(args: &RobustnessArgs, cfg: &ResolvedConfig, block: Option<crate::config::GridBlock>) -> Result<Grid, CliError> {
    let block = block.unwrap_or_default();
    let lags = match &args.lags {
        Some(s) => parse_list(s, "--lags")?,
        None => block.lags.unwrap_or_else(|| DEFAULT_LAG_GRID.to_vec()),
    };
    let horizons = match &args.horizons {
        Some(s) => parse_list(s, "--horizons")?,
        None => block.horizons.unwrap_or_else(|| DEFAULT_HORIZON_GRID.to_vec()),
    };
    let quantile_sets = match &args.quantile_sets {
        Some(s) => parse_sets(s)?,
        None => block.quantile_sets.unwrap_or_else(|| {
            if cfg.quantiles.len() == 3 {
                DEFAULT_QUANTILE_SETS.iter().map(|s| s.to_vec()).collect()
            } else {
                vec![cfg.quantiles.clone()]
            }
        }),
    };
    for (name, empty) in [
        ("lag", lags.is_empty()),
        ("horizon", horizons.is_empty()),
        ("quantile-set", quantile_sets.is_empty()),
    ] {
        if empty {
            return Err(usage(format!("robustness grid: {name} list is empty")));
        }
    }
    if lags.contains(&0) || horizons.contains(&0) {
        return Err(usage("robustness grid: lag orders and horizons must be at least 1"));
    }
    for set in &quantile_sets {
        validate_quantiles(set)?;
        if set.len() != cfg.quantiles.len() {
            return Err(usage(format!(
                "robustness grid: quantile set {set:?} has {} levels, baseline has {}",
                set.len(),
                cfg.quantiles.len()
            )));
        }
    }
    Ok(Grid {
        lags,
        horizons,
        quantile_sets,
    })
}

/// One table row: a specification evaluated at a list of quantiles.
struct Row {
    panel: &'static str,
    label: String,
    lags: usize,
    horizon: usize,
    taus: Vec<f64>,
}

fn rows(cfg: &ResolvedConfig, grid: &Grid) -> Vec<(Option<String>, Vec<Row>)> {
    let base = |tag: bool| if tag { " (baseline)" } else { "" };
    let fmt_set = |s: &[f64]| s.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("/");
    let mut sections = Vec::new();
    if grid.lags != [cfg.lags] {
        let r = grid
            .lags
            .iter()
            .map(|&p| Row {
                panel: "A",
                label: format!("p = {p}{}", base(p == cfg.lags)),
                lags: p,
                horizon: cfg.horizon,
                taus: cfg.quantiles.clone(),
            })
            .collect();
        sections.push((Some(format!("Panel A: Lag Order (H = {})", cfg.horizon)), r));
    }
    if grid.horizons != [cfg.horizon] {
        let r = grid
            .horizons
            .iter()
            .map(|&h| Row {
                panel: "B",
                label: format!("H = {h}{}", base(h == cfg.horizon)),
                lags: cfg.lags,
                horizon: h,
                taus: cfg.quantiles.clone(),
            })
            .collect();
        sections.push((Some(format!("Panel B: Forecast Horizon (p = {})", cfg.lags)), r));
    }
    if grid.quantile_sets != [cfg.quantiles.clone()] {
        let r = grid
            .quantile_sets
            .iter()
            .map(|s| Row {
                panel: "C",
                label: format!("tau in {{{}}}{}", fmt_set(s), base(*s == cfg.quantiles)),
                lags: cfg.lags,
                horizon: cfg.horizon,
                taus: s.clone(),
            })
            .collect();
        sections.push((
            Some(format!("Panel C: Quantile Choice (p = {}, H = {})", cfg.lags, cfg.horizon)),
            r,
        ));
    }
    if sections.is_empty() {
        sections.push((
            None,
            vec![Row {
                panel: "baseline",
                label: format!("p = {}, H = {} (baseline)", cfg.lags, cfg.horizon),
                lags: cfg.lags,
                horizon: cfg.horizon,
                taus: cfg.quantiles.clone(),
            }],
        ));
    }
    sections
}

type Cell = Result<f64, String>;
type Section = (Option<String>, Vec<(Row, Vec<Cell>)>);

fn quoted(field: &str) -> String {
    if field.contains([',', '"']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn run(args: &RobustnessArgs) -> Result<(), CliError> {
    let (mut cfg, file) = ResolvedConfig::resolve(&args.common, &ModelArgs::default())?;
    let grid = resolve_grid(args, &cfg, file.robustness)?;
    cfg.robustness = Some(grid.clone());
    let sections = rows(&cfg, &grid);

    let data = load_panel(&cfg)?;
    let panel = data.balanced()?;

    // one fit per (lag order, quantile); horizons reuse it
    let mut keys: Vec<(usize, u64)> = sections
        .iter()
        .flat_map(|(_, rs)| rs.iter())
        .flat_map(|r| r.taus.iter().map(move |t| (r.lags, t.to_bits())))
        .collect();
    keys.sort();
    keys.dedup();
    let fits: BTreeMap<(usize, u64), Result<QvarModel, String>> = keys
        .par_iter()
        .map(|&(p, bits)| {
            let tau = QuantileLevel::new(f64::from_bits(bits)).expect("validated");
            let fit = QvarSpec::new(p, tau)
                .and_then(|s| fit_qvar(&panel, s))
                .map_err(|e| format!("{}: {e}", e.kind()));
            ((p, bits), fit)
        })
        .collect();

    let cell = |p: usize, h: usize, tau: f64| -> Cell {
        let model = fits[&(p, tau.to_bits())].as_ref().map_err(Clone::clone)?;
        let fevd = generalized_fevd(model, h).map_err(|e| format!("{}: {e}", e.kind()))?;
        Ok(to_percent(indices(&fevd).total))
    };
    let table: Vec<Section> = sections
        .into_iter()
        .map(|(title, rs)| {
            let evaluated = rs
                .into_iter()
                .map(|r| {
                    let cells = r.taus.iter().map(|&t| cell(r.lags, r.horizon, t)).collect();
                    (r, cells)
                })
                .collect();
            (title, evaluated)
        })
        .collect();

    let mut out = Emitter::new(&cfg.out, &cfg, cfg.timestamp)?;
    if cfg.emits(Format::Csv) {
        let mut body = String::from("panel,specification,lags,horizon,tau,total,flag\n");
        for (_, rs) in &table {
            for (r, cells) in rs {
                for (t, c) in r.taus.iter().zip(cells) {
                    let (value, flag) = match c {
                        Ok(v) => (num(*v), String::new()),
                        Err(e) => (String::new(), format!("error:{}", e.split(':').next().unwrap_or("error"))),
                    };
                    body.push_str(&format!("{},{},{},{},{t},{value},{flag}\n", r.panel, quoted(&r.label), r.lags, r.horizon));
                }
            }
        }
        out.table("robustness.csv", &body)?;
    }
    out.table("robustness.txt", &render(&cfg, &table, panel.len(), data.assets.len()))?;
    if cfg.emits(Format::Json) {
        let cells: Vec<_> = table
            .iter()
            .flat_map(|(_, rs)| rs.iter())
            .flat_map(|(r, cells)| {
                r.taus.iter().zip(cells).map(move |(t, c)| {
                    json!({"panel": r.panel, "specification": r.label, "lags": r.lags, "horizon": r.horizon,
                           "tau": t, "total": c.as_ref().ok(), "error": c.as_ref().err()})
                })
            })
            .collect();
        out.json("robustness.json", json!({"cells": cells}))?;
    }
    Ok(())
}

/// Wide layout: one line per specification, one column per quantile
/// position, values in percent with one decimal.
fn render(cfg: &ResolvedConfig, table: &[Section], obs: usize, n: usize) -> String {
    let width = table
        .iter()
        .flat_map(|(_, rs)| rs.iter().map(|(r, _)| r.label.len()))
        .chain(std::iter::once("Specification".len()))
        .max()
        .unwrap_or(0)
        + 2;
    let col = 12;
    let mut s = String::from("Robustness of total spillover index (%)\n");
    s.push_str(&format!("{:<width$}", "Specification"));
    for t in &cfg.quantiles {
        s.push_str(&format!("{:>col$}", format!("tau = {t:.2}")));
    }
    s.push('\n');
    let rule = "-".repeat(width + col * cfg.quantiles.len());
    let mut failures = Vec::new();
    for (title, rs) in table {
        s.push_str(&rule);
        s.push('\n');
        if let Some(t) = title {
            s.push_str(t);
            s.push('\n');
        }
        for (r, cells) in rs {
            s.push_str(&format!("{:<width$}", r.label));
            for (t, c) in r.taus.iter().zip(cells) {
                match c {
                    Ok(v) => s.push_str(&format!("{:>col$}", pct1(*v))),
                    Err(e) => {
                        s.push_str(&format!("{:>col$}", "n/a"));
                        failures.push(format!("{} at tau = {t}: {e}", r.label));
                    }
                }
            }
            s.push('\n');
        }
    }
    s.push_str(&rule);
    s.push('\n');
    let set = cfg.quantiles.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("/");
    s.push_str(&format!(
        "Baseline: p = {}, H = {}, tau in {{{set}}}; {obs} observations, {n} assets.\n",
        cfg.lags, cfg.horizon
    ));
    for f in failures {
        s.push_str(&format!("n/a: {f}\n"));
    }
    s
}
