use serde_json::json;
use spill_core::contagion::{
    category_contagion, event_spillover_delta, fr_test, row_range, spillover_proxy, synth_control,
    EventWindowSpec, DEFAULT_PROXY_WINDOW,
};
use spill_core::timeseries::format_instant;

use crate::config::{load_panel, Format, ResolvedConfig};
use crate::emit::{num, pct1, signed1, Emitter};
use crate::{module_error, CliError, EventArgs};

pub fn run(args: &EventArgs) -> Result<(), CliError> {
    let (mut cfg, file) = ResolvedConfig::resolve(&args.common, &args.model)?;
    let event_path = args
        .event
        .clone()
        .or(file.event)
        .ok_or_else(|| CliError::Usage("config validation: no event spec (set `event` or pass --event)".into()))?;
    let proxy_window = args.proxy_window.or(file.proxy_window).unwrap_or(DEFAULT_PROXY_WINDOW);
    if proxy_window == 0 {
        return Err(CliError::Usage("config validation: proxy_window must be at least 1".into()));
    }
    cfg.event = Some(event_path.clone());
    cfg.proxy_window = Some(proxy_window);

    let text = std::fs::read_to_string(&event_path)
        .map_err(|e| CliError::Usage(format!("contagion: cannot read event spec {}: {e}", event_path.display())))?;
    let event = EventWindowSpec::from_json(&text)
        .map_err(|e| CliError::Usage(format!("contagion: {}: {e}", event_path.display())))?;

    let data = load_panel(&cfg)?;
    let panel = &data.deviations;
    let affected = panel
        .assets()
        .iter()
        .find(|a| a.id == event.affected)
        .cloned()
        .ok_or_else(|| {
            CliError::Usage(format!(
                "contagion: affected asset `{}` is not a column of {}",
                event.affected,
                cfg.input.display()
            ))
        })?;
    let targets: Vec<&str> = data.ids().into_iter().filter(|id| *id != affected.id).collect();
    let mut out = Emitter::new(&cfg.out, &cfg, cfg.timestamp)?;

    let fr = fr_test(panel, &event, &targets).map_err(|e| module_error("contagion", e))?;
    let categories = category_contagion(&fr, &data.assets).map_err(|e| module_error("contagion", e))?;
    if cfg.emits(Format::Csv) {
        let mut body = String::from("target,category,rho_calm,rho_crisis,delta,rho_adj,delta_rho_adj,z_stat,significant\n");
        for r in &fr {
            let cat = data.assets.iter().find(|a| a.id == r.target).map(|a| a.category.to_string()).unwrap_or_default();
            body.push_str(&format!(
                "{},{cat},{},{},{},{},{},{},{}\n",
                r.target,
                num(r.rho_calm),
                num(r.rho_crisis),
                num(r.delta),
                num(r.rho_adj),
                num(r.delta_rho_adj),
                num(r.z_stat),
                r.significant
            ));
        }
        out.table("fr_table.csv", &body)?;
        let mut body = String::from("category,targets,mean_delta_rho_adj\n");
        for c in &categories {
            body.push_str(&format!("{},{},{}\n", c.category, c.targets, num(c.mean_delta_rho_adj)));
        }
        out.table("category_contagion.csv", &body)?;
    }

    // synthetic control failures are reported in its own artifact
    let donors: Vec<String> = event.donors.clone().unwrap_or_else(|| {
        data.assets
            .iter()
            .filter(|a| a.id != affected.id && !a.category.is_anchor())
            .map(|a| a.id.clone())
            .collect()
    });
    let pre = row_range(panel, event.calm);
    let during = row_range(panel, event.crisis);
    let proxy = spillover_proxy(panel, proxy_window);
    let synth = synth_control(&proxy, &affected.id, &donors, pre.clone(), during.clone());
    if cfg.emits(Format::Json) {
        let dates = panel.diff_timestamps();
        let mut doc = json!({
            "event": event.name,
            "treated": affected.id,
            "outcome": "trailing mean absolute change in peg deviation (bp)",
            "proxy_window": proxy_window,
            "pre_rows": [pre.start, pre.end],
            "event_rows": [during.start, during.end],
        });
        match &synth {
            Ok(r) => {
                let path_dates: Vec<String> = (r.paths.start..r.paths.start + r.paths.treated.len())
                    .map(|t| format_instant(&dates[t]))
                    .collect();
                doc["donors"] = json!(r.donors);
                doc["weights"] = json!(r.weights);
                doc["pre_rmse"] = json!(r.pre_rmse);
                doc["effect"] = json!(r.effect);
                doc["placebo_effects"] = json!(r.placebo_effects);
                doc["p_value"] = json!(r.p_value);
                doc["paths"] = json!({"dates": path_dates, "treated": r.paths.treated, "synthetic": r.paths.synthetic});
            }
            Err(e) => {
                doc["donors"] = json!(donors);
                doc["error"] = json!({"kind": e.kind(), "message": e.to_string()});
            }
        }
        out.json("synth_control.json", doc)?;
    }

    let mut system: Vec<&str> = data.ids();
    if !system.contains(&affected.id.as_str()) {
        system.push(&affected.id);
    }
    let spill = event_spillover_delta(panel, &event, &system, cfg.lags, cfg.horizon)
        .map_err(|e| module_error("contagion", e))?;
    if cfg.emits(Format::Csv) {
        let body = format!(
            "event,affected,mechanism,pre_event,during,delta\n{},{},{},{},{},{}\n",
            event.name,
            affected.id,
            affected.category,
            pct1(spill.pre_total),
            pct1(spill.during_total),
            signed1(spill.delta)
        );
        out.table("event_spillover.csv", &body)?;
    }
    if cfg.emits(Format::Json) {
        out.json(
            "event_spillover.json",
            json!({"event": event.name, "affected": affected.id, "mechanism": affected.category,
                   "pre_total": spill.pre_total, "during_total": spill.during_total, "delta": spill.delta,
                   "fr": fr, "category_contagion": categories}),
        )?;
    }
    Ok(())
}
