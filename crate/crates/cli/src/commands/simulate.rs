use std::collections::BTreeMap;

use serde_json::json;
use spill_core::dgp::{simulate, DgpSpec, DgpSpecFile};
use spill_core::timeseries::{write_csv, AnchorTransform};

use crate::{module_error, CliError, SimulateArgs};

/// Writes the simulated panel as prices; the spec is embedded as a comment.
pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Usage(format!("dgp: cannot read spec {}: {e}", args.spec.display())))?;
    let mut spec = DgpSpec::from_json(&text)
        .map_err(|e| CliError::Usage(format!("dgp: {}: {e}", args.spec.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let panel = simulate(&spec).map_err(|e| module_error("dgp", e))?;
    let prices = panel.to_price_panel(AnchorTransform::LogReturn);

    let mut comments = Vec::new();
    if !args.no_timestamp {
        comments.push(format!("generated: {}", chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ")));
    }
    let spec_json = serde_json::to_string(&DgpSpecFile::from_spec(&spec)).expect("spec serializes");
    comments.push(format!("dgp: {spec_json}"));

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("output: cannot create {}: {e}", parent.display())))?;
    }
    let mut buf = Vec::new();
    write_csv(&prices, &mut buf, &comments).map_err(|e| module_error("timeseries", e))?;
    std::fs::write(&args.out, buf)
        .map_err(|e| CliError::Runtime(format!("output: cannot write {}: {e}", args.out.display())))?;

    if let Some(meta_path) = &args.metadata_out {
        let meta: BTreeMap<&str, _> = spec
            .assets
            .iter()
            .map(|a| (a.id.as_str(), json!({"category": a.category})))
            .collect();
        let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        text.push('\n');
        std::fs::write(meta_path, text)
            .map_err(|e| CliError::Runtime(format!("output: cannot write {}: {e}", meta_path.display())))?;
    }
    Ok(())
}
