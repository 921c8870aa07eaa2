use serde_json::json;
use spill_core::spillover::{category_flows, indices, network, pairwise_deltas, relative, to_percent, SpilloverIndices};
use spill_core::AssetMeta;

use super::{estimate_all, tail_positions, Estimate};
use crate::config::{load_panel, Format, ResolvedConfig};
use crate::emit::{num, Emitter};
use crate::{module_error, CliError, FitArgs};

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let (mut cfg, _) = ResolvedConfig::resolve(&args.common, &args.model)?;
    if let Some(t) = args.edge_threshold {
        if !(t >= 0.0) {
            return Err(CliError::Usage(format!("config validation: edge threshold {t} must be nonnegative")));
        }
        cfg.edge_threshold = t;
    }
    if let Some(k) = args.top_k {
        cfg.top_k = k;
    }
    let data = load_panel(&cfg)?;
    let panel = data.balanced()?;
    let taus = cfg.quantile_levels();
    let estimates = estimate_all(&panel, cfg.lags, &taus, cfg.horizon)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Emitter::new(&cfg.out, &cfg, cfg.timestamp)?;
    let mut all_indices = Vec::new();
    for (tau, est) in taus.iter().zip(&estimates) {
        let idx = indices(&est.fevd);
        if cfg.emits(Format::Json) {
            out.json(&format!("fevd_tau{tau}.json"), fevd_json(est, &panel))?;
            let edges = network(&est.fevd, cfg.edge_threshold).map_err(|e| module_error("spillover", e))?;
            let nodes: Vec<_> = data
                .assets
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    json!({"id": a.id, "category": a.category, "from": to_percent(idx.from_[j]),
                           "to": to_percent(idx.to[j]), "net": to_percent(idx.net[j])})
                })
                .collect();
            out.json(
                &format!("network_tau{tau}.json"),
                json!({"tau": tau, "threshold": cfg.edge_threshold, "nodes": nodes, "edges": edges}),
            )?;
            let flows = category_flows(&est.fevd, &data.assets).map_err(|e| module_error("spillover", e))?;
            out.json(&format!("flows_tau{tau}.json"), json!({"tau": tau, "flows": flows}))?;
        }
        if cfg.emits(Format::Csv) {
            out.table(&format!("indices_tau{tau}.csv"), &indices_csv(&idx, &data.assets))?;
        }
        all_indices.push(idx);
    }

    if let (Some((lo, mid, hi)), true) = (tail_positions(&taus), cfg.emits(Format::Csv)) {
        let rel = relative(&all_indices[lo], &all_indices[mid], &all_indices[hi])
            .map_err(|e| module_error("spillover", e))?;
        let mut body = String::from("side,tau,asset,from,to,net\n");
        for (side, k, d) in [("lower", lo, &rel.left), ("upper", hi, &rel.right)] {
            for (j, a) in rel.assets.iter().enumerate() {
                body.push_str(&format!(
                    "{side},{},{a},{},{},{}\n",
                    taus[k],
                    num(to_percent(d.from_[j])),
                    num(to_percent(d.to[j])),
                    num(to_percent(d.net[j]))
                ));
            }
            let dt = to_percent(all_indices[k].total - all_indices[mid].total);
            body.push_str(&format!("{side},{},TOTAL,{},{},\n", taus[k], num(dt), num(dt)));
        }
        out.table("relative.csv", &body)?;

        let mut body = String::from("side,tau,rank,source,target,delta\n");
        for (side, k) in [("lower", lo), ("upper", hi)] {
            let ranked = pairwise_deltas(&estimates[k].fevd, &estimates[mid].fevd, cfg.top_k)
                .map_err(|e| module_error("spillover", e))?;
            for (r, p) in ranked.iter().enumerate() {
                body.push_str(&format!("{side},{},{},{},{},{}\n", taus[k], r + 1, p.source, p.target, num(p.delta)));
            }
        }
        out.table("pairwise_deltas.csv", &body)?;
    }
    Ok(())
}

fn fevd_json(est: &Estimate, panel: &spill_core::BalancedPanel) -> serde_json::Value {
    let rows = |m: &spill_core::nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let ids = &est.fevd.asset_order;
    let d = &est.model.diagnostics;
    json!({
        "tau": est.fevd.tau,
        "horizon": est.fevd.horizon,
        "assets": ids,
        "normalized": rows(&est.fevd.normalized),
        "raw": rows(&est.fevd.raw),
        "observations": panel.len(),
        "dropped_rows": panel.dropped(),
        "diagnostics": {
            "spectral_radius": d.spectral_radius,
            "unstable": d.unstable(),
            "psd_repaired": d.psd_repaired,
            "non_converged": d.non_converged.iter().map(|&j| &ids[j]).collect::<Vec<_>>(),
            "non_unique": d.non_unique.iter().map(|&j| &ids[j]).collect::<Vec<_>>(),
        },
    })
}

/// Per-asset FROM/TO/NET in percent, then a `TOTAL` row of column means
/// (FROM and TO means both equal the total index).
pub(crate) fn indices_csv(idx: &SpilloverIndices, meta: &[AssetMeta]) -> String {
    let mut body = String::from("asset,category,from,to,net\n");
    for (j, id) in idx.assets.iter().enumerate() {
        let cat = meta.iter().find(|m| &m.id == id).map(|m| m.category.to_string()).unwrap_or_default();
        body.push_str(&format!(
            "{id},{cat},{},{},{}\n",
            num(to_percent(idx.from_[j])),
            num(to_percent(idx.to[j])),
            num(to_percent(idx.net[j]))
        ));
    }
    let n = idx.assets.len() as f64;
    let mean = |v: &[f64]| to_percent(v.iter().sum::<f64>() / n);
    body.push_str(&format!(
        "TOTAL,,{},{},{}\n",
        num(to_percent(idx.total)),
        num(mean(&idx.to)),
        num(mean(&idx.net))
    ));
    body
}
