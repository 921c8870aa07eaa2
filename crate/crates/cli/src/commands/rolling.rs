use spill_core::rolling::{plan, run as run_windows, DEFAULT_STEP, DEFAULT_WINDOW};
use spill_core::QvarSpec;

use crate::config::{load_panel, Format, ResolvedConfig, RollingSettings};
use crate::emit::Emitter;
use crate::{module_error, CliError, RollingArgs};

pub fn run(args: &RollingArgs) -> Result<(), CliError> {
    let (mut cfg, file) = ResolvedConfig::resolve(&args.common, &args.model)?;
    let block = file.rolling.unwrap_or_default();
    let settings = RollingSettings {
        window: args.window.or(block.window).unwrap_or(DEFAULT_WINDOW),
        step: args.step.or(block.step).unwrap_or(DEFAULT_STEP),
    };
    cfg.rolling = Some(settings.clone());

    let data = load_panel(&cfg)?;
    let panel = data.balanced()?;
    let windows = plan(panel.len(), settings.window, settings.step).map_err(|e| module_error("rolling", e))?;
    let specs = cfg
        .quantile_levels()
        .into_iter()
        .map(|tau| QvarSpec::new(cfg.lags, tau))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| module_error("qvar", e))?;
    let result = run_windows(&panel, &windows, &specs, cfg.horizon).map_err(|e| module_error("rolling", e))?;

    let mut out = Emitter::new(&cfg.out, &cfg, cfg.timestamp)?;
    if cfg.emits(Format::Csv) {
        out.table("rolling.csv", &result.to_csv())?;
    }
    if cfg.emits(Format::Json) {
        out.json("rolling_plot.json", result.plot_series())?;
    }
    Ok(())
}
