//! Run configuration: a JSON file, overridden field by field by flags, and
//! validated into a [`ResolvedConfig`] that is embedded in every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spill_core::timeseries::{
    balanced, load_csv, load_metadata, to_deviations_with, AnchorTransform, AssetMeta, ColumnSchema,
    DeviationPanel,
};
use spill_core::{BalancedPanel, Error, QuantileLevel};

use crate::{CliError, CommonArgs, ModelArgs};

pub const DEFAULT_QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];
pub const DEFAULT_LAGS: usize = 1;
pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_OUT: &str = "spill-out";
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollingBlock {
    pub window: Option<usize>,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub lags: Option<Vec<usize>>,
    pub horizons: Option<Vec<usize>>,
    pub quantile_sets: Option<Vec<Vec<f64>>>,
}

/// The config file as written; every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub assets: Option<Vec<String>>,
    pub quantiles: Option<Vec<f64>>,
    pub lags: Option<usize>,
    pub horizon: Option<usize>,
    pub rolling: Option<RollingBlock>,
    pub event: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub emit: Option<Vec<Format>>,
    pub edge_threshold: Option<f64>,
    pub top_k: Option<usize>,
    pub anchor_transform: Option<AnchorTransform>,
    pub resample_seconds: Option<i64>,
    pub proxy_window: Option<usize>,
    pub timestamp: Option<bool>,
    pub robustness: Option<GridBlock>,
}

impl RunConfig {
    /// Reads `path`, rebasing relative paths inside it onto the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config: cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config: {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input, &mut cfg.metadata, &mut cfg.event, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RollingSettings {
    pub window: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub lags: Vec<usize>,
    pub horizons: Vec<usize>,
    pub quantile_sets: Vec<Vec<f64>>,
}

/// Validated settings of one run.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub input: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assets: Option<Vec<String>>,
    pub quantiles: Vec<f64>,
    pub lags: usize,
    pub horizon: usize,
    pub out: PathBuf,
    pub emit: Vec<Format>,
    pub anchor_transform: AnchorTransform,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_seconds: Option<i64>,
    pub edge_threshold: f64,
    pub top_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rolling: Option<RollingSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robustness: Option<Grid>,
    #[serde(skip)]
    pub timestamp: bool,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("config validation: {}", msg.into()))
}

pub fn validate_quantiles(q: &[f64]) -> Result<Vec<QuantileLevel>, CliError> {
    if q.is_empty() {
        return Err(invalid("quantile list is empty"));
    }
    let levels = q
        .iter()
        .map(|&t| QuantileLevel::new(t).map_err(|_| invalid(format!("quantile {t} is outside (0, 1)"))))
        .collect::<Result<Vec<_>, _>>()?;
    if q.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!("quantiles {q:?} must be strictly increasing")));
    }
    Ok(levels)
}

impl ResolvedConfig {
    pub fn resolve(common: &CommonArgs, model: &ModelArgs) -> Result<(Self, RunConfig), CliError> {
        let file = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let input = common
            .input
            .clone()
            .or_else(|| file.input.clone())
            .ok_or_else(|| invalid("no input panel (set `input` or pass --input)"))?;
        let quantiles = model
            .quantiles
            .clone()
            .or_else(|| file.quantiles.clone())
            .unwrap_or_else(|| DEFAULT_QUANTILES.to_vec());
        validate_quantiles(&quantiles)?;
        let lags = model.lags.or(file.lags).unwrap_or(DEFAULT_LAGS);
        if lags == 0 {
            return Err(invalid("lag order must be at least 1"));
        }
        let horizon = model.horizon.or(file.horizon).unwrap_or(DEFAULT_HORIZON);
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        let mut emit = common
            .emit
            .clone()
            .or_else(|| file.emit.clone())
            .unwrap_or_else(|| vec![Format::Csv, Format::Json]);
        emit.sort();
        emit.dedup();
        if emit.is_empty() {
            return Err(invalid("no output formats selected"));
        }
        let edge_threshold = file.edge_threshold.unwrap_or(spill_core::spillover::DEFAULT_EDGE_THRESHOLD);
        if !(edge_threshold >= 0.0) {
            return Err(invalid(format!("edge threshold {edge_threshold} must be nonnegative")));
        }
        let resample_seconds = common.resample_seconds.or(file.resample_seconds);
        if matches!(resample_seconds, Some(s) if s <= 0) {
            return Err(invalid("resample_seconds must be positive"));
        }
        let assets = common.assets.clone().or_else(|| file.assets.clone());
        if matches!(&assets, Some(a) if a.is_empty()) {
            return Err(invalid("asset subset is empty"));
        }
        let cfg = ResolvedConfig {
            input,
            metadata: common.metadata.clone().or_else(|| file.metadata.clone()),
            assets,
            quantiles,
            lags,
            horizon,
            out: common
                .out
                .clone()
                .or_else(|| file.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            emit,
            anchor_transform: file.anchor_transform.unwrap_or_default(),
            resample_seconds,
            edge_threshold,
            top_k: file.top_k.unwrap_or(DEFAULT_TOP_K),
            rolling: None,
            event: None,
            proxy_window: None,
            robustness: None,
            timestamp: !common.no_timestamp && file.timestamp.unwrap_or(true),
        };
        Ok((cfg, file))
    }

    pub fn quantile_levels(&self) -> Vec<QuantileLevel> {
        self.quantiles
            .iter()
            .map(|&t| QuantileLevel::new(t).expect("validated"))
            .collect()
    }

    pub fn emits(&self, f: Format) -> bool {
        self.emit.contains(&f)
    }
}

/// Deviation panel restricted to the configured assets.
pub struct LoadedPanel {
    pub deviations: DeviationPanel,
    pub assets: Vec<AssetMeta>,
}

impl LoadedPanel {
    pub fn ids(&self) -> Vec<&str> {
        self.assets.iter().map(|a| a.id.as_str()).collect()
    }

    pub fn balanced(&self) -> Result<BalancedPanel, CliError> {
        balanced(&self.deviations, &self.ids(), 1).map_err(|e| crate::module_error("timeseries", e))
    }
}

pub fn load_panel(cfg: &ResolvedConfig) -> Result<LoadedPanel, CliError> {
    let schema = match &cfg.metadata {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "timeseries: metadata file {} not found",
                    path.display()
                )));
            }
            ColumnSchema::from_metadata(
                load_metadata(path).map_err(|e| crate::module_error("timeseries", e))?,
            )
        }
        None => ColumnSchema::default(),
    };
    if !cfg.input.is_file() {
        return Err(CliError::Usage(format!(
            "timeseries: input file {} not found",
            cfg.input.display()
        )));
    }
    let mut prices = load_csv(&cfg.input, &schema).map_err(|e| match e {
        Error::Io { .. } => CliError::Usage(format!("timeseries: {e}")),
        e => CliError::Runtime(format!("timeseries: {}: {e}", cfg.input.display())),
    })?;
    if let Some(secs) = cfg.resample_seconds {
        prices = prices
            .resample_last(secs)
            .map_err(|e| crate::module_error("timeseries", e))?;
    }
    let deviations = to_deviations_with(&prices, cfg.anchor_transform);
    let assets = match &cfg.assets {
        Some(ids) => ids
            .iter()
            .map(|id| {
                deviations
                    .assets()
                    .iter()
                    .find(|a| &a.id == id)
                    .cloned()
                    .ok_or_else(|| {
                        CliError::Usage(format!(
                            "config validation: asset `{id}` is not a column of {}",
                            cfg.input.display()
                        ))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => deviations.assets().to_vec(),
    };
    Ok(LoadedPanel { deviations, assets })
}
