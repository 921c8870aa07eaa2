//! Price panels, peg deviations and balanced estimation windows.
//!
//! Prices are quoted in USD. Stablecoins are transformed into basis-point
//! deviations from the $1 peg, `(price - 1) * 10000`, and the estimation
//! input is the first difference of those deviations. Non-stablecoin
//! anchors (Bitcoin, a dollar index) have no peg; by default they enter as
//! log-returns scaled to basis points, see [`AnchorTransform`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Basis points per unit of price.
pub const BP: f64 = 10_000.0;

/// Stabilization mechanism of an asset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(alias = "fiat_backed", alias = "fiat-backed")]
    FiatBacked,
    #[serde(alias = "crypto_collateralized", alias = "crypto-collateralized")]
    CryptoCollateralized,
    #[serde(alias = "algorithmic")]
    Algorithmic,
    #[serde(alias = "crypto_anchor", alias = "crypto-anchor")]
    CryptoAnchor,
    #[serde(alias = "fiat_anchor", alias = "fiat-anchor")]
    FiatAnchor,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::FiatBacked,
        Category::CryptoCollateralized,
        Category::Algorithmic,
        Category::CryptoAnchor,
        Category::FiatAnchor,
    ];

    /// Anchors are the non-stablecoin reference assets.
    pub fn is_anchor(self) -> bool {
        matches!(self, Category::CryptoAnchor | Category::FiatAnchor)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::FiatBacked => "FiatBacked",
            Category::CryptoCollateralized => "CryptoCollateralized",
            Category::Algorithmic => "Algorithmic",
            Category::CryptoAnchor => "CryptoAnchor",
            Category::FiatAnchor => "FiatAnchor",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown asset category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetMeta {
    pub id: String,
    pub category: Category,
}

impl AssetMeta {
    pub fn new(id: impl Into<String>, category: Category) -> Self {
        Self {
            id: id.into(),
            category,
        }
    }
}

fn check_asset_ids(assets: &[AssetMeta]) -> Result<()> {
    let mut seen = HashSet::new();
    for a in assets {
        if a.id.trim().is_empty() {
            return Err(Error::InvalidInput("asset id must be nonempty".into()));
        }
        if !seen.insert(a.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate asset id `{}`", a.id)));
        }
    }
    Ok(())
}

fn check_increasing(timestamps: &[NaiveDateTime]) -> Result<()> {
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::InvalidInput(format!(
                "timestamps must be strictly increasing (row {} = {}, row {} = {})",
                i,
                format_instant(&w[0]),
                i + 1,
                format_instant(&w[1])
            )));
        }
    }
    Ok(())
}

/// Parses `YYYY-MM-DD`, ISO-8601/RFC 3339 timestamps, or integer epoch seconds.
pub fn parse_instant(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_time(NaiveTime::MIN));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit() || b == b'-') {
        if let Ok(secs) = s.parse::<i64>() {
            return DateTime::from_timestamp(secs, 0).map(|t| t.naive_utc());
        }
    }
    None
}

/// Dates at midnight print as `YYYY-MM-DD`, everything else as `YYYY-MM-DDTHH:MM:SS`.
pub fn format_instant(t: &NaiveDateTime) -> String {
    if t.time() == NaiveTime::MIN {
        t.format("%Y-%m-%d").to_string()
    } else {
        t.format("%Y-%m-%dT%H:%M:%S").to_string()
    }
}

/// Timestamp-aligned prices, `T` rows by `n` assets. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    timestamps: Vec<NaiveDateTime>,
    assets: Vec<AssetMeta>,
    values: DMatrix<f64>,
}

impl PricePanel {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        assets: Vec<AssetMeta>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if assets.is_empty() {
            return Err(Error::InvalidInput("panel has zero assets".into()));
        }
        check_asset_ids(&assets)?;
        check_increasing(&timestamps)?;
        if values.nrows() != timestamps.len() || values.ncols() != assets.len() {
            return Err(Error::InvalidInput(format!(
                "value matrix is {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                timestamps.len(),
                assets.len()
            )));
        }
        Ok(Self {
            timestamps,
            assets,
            values,
        })
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn assets(&self) -> &[AssetMeta] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Keeps the last finite price of each asset within consecutive buckets of
    /// `period_secs` seconds (e.g. minute data to hourly). Each bucket is
    /// labelled by its last observed timestamp.
    pub fn resample_last(&self, period_secs: i64) -> Result<PricePanel> {
        if period_secs <= 0 {
            return Err(Error::InvalidInput("resampling period must be positive".into()));
        }
        let n = self.assets.len();
        let mut stamps: Vec<NaiveDateTime> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut current: Option<i64> = None;
        for (t, ts) in self.timestamps.iter().enumerate() {
            let bucket = ts.and_utc().timestamp().div_euclid(period_secs);
            if current != Some(bucket) {
                current = Some(bucket);
                stamps.push(*ts);
                rows.push(vec![f64::NAN; n]);
            }
            let row = rows.last_mut().expect("bucket row");
            *stamps.last_mut().expect("bucket stamp") = *ts;
            for (j, v) in row.iter_mut().enumerate() {
                let x = self.values[(t, j)];
                if x.is_finite() {
                    *v = x;
                }
            }
        }
        let values = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        PricePanel::new(stamps, self.assets.clone(), values)
    }
}

/// Column selection for [`load_csv`]: which asset columns to read, in order,
/// with their categories.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColumnSchema {
    /// Explicit asset list; `None` reads every non-date column.
    pub assets: Option<Vec<AssetMeta>>,
    /// Category lookup used when `assets` is `None`.
    pub categories: BTreeMap<String, Category>,
    /// Category for columns absent from `categories`.
    pub default_category: Option<Category>,
}

impl ColumnSchema {
    pub fn explicit(assets: Vec<AssetMeta>) -> Self {
        Self {
            assets: Some(assets),
            ..Self::default()
        }
    }

    pub fn from_metadata(categories: BTreeMap<String, Category>) -> Self {
        Self {
            assets: None,
            categories,
            default_category: None,
        }
    }
}

#[derive(Deserialize)]
struct MetaEntry {
    category: Category,
}

/// Reads the JSON metadata sidecar: `{"USDT": {"category": "FiatBacked"}, ...}`.
pub fn load_metadata(path: &Path) -> Result<BTreeMap<String, Category>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_metadata(&text)
}

pub fn parse_metadata(text: &str) -> Result<BTreeMap<String, Category>> {
    let raw: BTreeMap<String, MetaEntry> = serde_json::from_str(text)
        .map_err(|e| Error::ingest(None, format!("metadata: {e}")))?;
    Ok(raw.into_iter().map(|(k, v)| (k, v.category)).collect())
}

pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<PricePanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_csv(file, schema)
}

/// Writes `panel` in the layout [`read_csv`] accepts, after one `# ` line per
/// comment. Missing values are written as empty cells.
pub fn write_csv<W: Write>(panel: &PricePanel, mut writer: W, comments: &[String]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: "<csv output>".into(),
        message: e.to_string(),
    };
    for c in comments {
        for line in c.lines() {
            writeln!(writer, "# {line}").map_err(io)?;
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let header = std::iter::once("timestamp").chain(panel.assets.iter().map(|a| a.id.as_str()));
    let csv_err = |e: csv::Error| Error::Io {
        path: "<csv output>".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(csv_err)?;
    for (t, ts) in panel.timestamps.iter().enumerate() {
        let mut row = vec![format_instant(ts)];
        row.extend(panel.values.row(t).iter().map(|v| if v.is_finite() { v.to_string() } else { String::new() }));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

/// Parses a price panel. The first column holds timestamps; lines starting
/// with `#` are comments.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::ingest(Some(1), e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::ingest(Some(1), "no asset columns in header"));
    }

    let header_index: BTreeMap<&str, usize> = headers
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, h)| (h, i))
        .collect();

    let assets: Vec<AssetMeta> = match &schema.assets {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .skip(1)
            .map(|h| {
                let category = schema
                    .categories
                    .get(h)
                    .copied()
                    .or(schema.default_category)
                    .unwrap_or(Category::FiatBacked);
                AssetMeta::new(h, category)
            })
            .collect(),
    };
    if assets.is_empty() {
        return Err(Error::ingest(None, "zero assets selected"));
    }
    check_asset_ids(&assets).map_err(|e| Error::ingest(Some(1), e.to_string()))?;
    let columns: Vec<usize> = assets
        .iter()
        .map(|a| {
            header_index
                .get(a.id.as_str())
                .copied()
                .ok_or_else(|| Error::ingest(Some(1), format!("column `{}` not in header", a.id)))
        })
        .collect::<Result<_>>()?;

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::ingest(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize);
        let raw_ts = record.get(0).unwrap_or("");
        let ts = parse_instant(raw_ts)
            .ok_or_else(|| Error::ingest(line, format!("unparseable timestamp `{raw_ts}`")))?;
        if let Some(prev) = timestamps.last() {
            if ts == *prev {
                return Err(Error::ingest(
                    line,
                    format!("duplicate timestamp {}", format_instant(&ts)),
                ));
            }
            if ts < *prev {
                return Err(Error::ingest(
                    line,
                    format!("timestamp {} out of order", format_instant(&ts)),
                ));
            }
        }
        timestamps.push(ts);
        for &c in &columns {
            let cell = record.get(c).unwrap_or("").trim();
            let v = if cell.is_empty()
                || cell.eq_ignore_ascii_case("na")
                || cell.eq_ignore_ascii_case("nan")
            {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Error::ingest(line, format!("non-numeric value `{cell}` in column {c}"))
                })?
            };
            cells.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::ingest(None, "empty panel: no data rows"));
    }
    let n = assets.len();
    let values = DMatrix::from_row_slice(timestamps.len(), n, &cells);
    PricePanel::new(timestamps, assets, values).map_err(|e| Error::ingest(None, e.to_string()))
}

/// How anchor assets (no $1 peg) are transformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorTransform {
    /// Level `ln(price) * 10000`, so differences are log-returns in basis points.
    #[default]
    LogReturn,
    /// Same peg transform as the stablecoins.
    Peg,
}

/// Peg deviations (T x n, basis points) and their first differences
/// ((T-1) x n). `diffs` row `t` is stamped with `timestamps[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationPanel {
    timestamps: Vec<NaiveDateTime>,
    assets: Vec<AssetMeta>,
    deviations: DMatrix<f64>,
    diffs: DMatrix<f64>,
}

impl DeviationPanel {
    /// Builds a panel from deviation levels; differences are derived.
    pub fn from_deviations(
        timestamps: Vec<NaiveDateTime>,
        assets: Vec<AssetMeta>,
        deviations: DMatrix<f64>,
    ) -> Result<Self> {
        if timestamps.is_empty() {
            return Err(Error::InvalidInput("deviation panel is empty".into()));
        }
        // reuse the shape and ordering checks
        let checked = PricePanel::new(timestamps, assets, deviations)?;
        let (timestamps, assets, deviations) = (checked.timestamps, checked.assets, checked.values);
        let t = deviations.nrows();
        let n = deviations.ncols();
        let diffs = DMatrix::from_fn(t.saturating_sub(1), n, |i, j| {
            deviations[(i + 1, j)] - deviations[(i, j)]
        });
        Ok(Self {
            timestamps,
            assets,
            deviations,
            diffs,
        })
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    /// Timestamps attached to the rows of [`Self::diffs`].
    pub fn diff_timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps[1..]
    }

    pub fn assets(&self) -> &[AssetMeta] {
        &self.assets
    }

    pub fn deviations(&self) -> &DMatrix<f64> {
        &self.deviations
    }

    pub fn diffs(&self) -> &DMatrix<f64> {
        &self.diffs
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.id == id)
    }

    /// Inverse of the peg transform, `deviation / 10000 + 1`.
    pub fn implied_prices(&self) -> DMatrix<f64> {
        self.deviations.map(|d| d / BP + 1.0)
    }

    /// Prices that reproduce this panel under `to_deviations_with(_, anchors)`.
    pub fn to_price_panel(&self, anchors: AnchorTransform) -> PricePanel {
        let values = DMatrix::from_fn(self.deviations.nrows(), self.deviations.ncols(), |t, j| {
            let d = self.deviations[(t, j)];
            if anchors == AnchorTransform::LogReturn && self.assets[j].category.is_anchor() {
                (d / BP).exp()
            } else {
                d / BP + 1.0
            }
        });
        PricePanel::new(self.timestamps.clone(), self.assets.clone(), values)
            .expect("deviation panel invariants carry over")
    }
}

pub fn to_deviations(panel: &PricePanel) -> DeviationPanel {
    to_deviations_with(panel, AnchorTransform::default())
}

pub fn to_deviations_with(panel: &PricePanel, anchors: AnchorTransform) -> DeviationPanel {
    let values = panel.values();
    let deviations = DMatrix::from_fn(values.nrows(), values.ncols(), |t, j| {
        let p = values[(t, j)];
        let as_log = anchors == AnchorTransform::LogReturn && panel.assets[j].category.is_anchor();
        if !p.is_finite() {
            f64::NAN
        } else if as_log {
            if p > 0.0 {
                p.ln() * BP
            } else {
                f64::NAN
            }
        } else {
            (p - 1.0) * BP
        }
    });
    DeviationPanel::from_deviations(panel.timestamps.clone(), panel.assets.clone(), deviations)
        .expect("price panel invariants carry over")
}

/// Complete-case difference series for a fixed asset set: the direct QVAR input.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPanel {
    timestamps: Vec<NaiveDateTime>,
    assets: Vec<AssetMeta>,
    data: DMatrix<f64>,
    dropped: usize,
}

impl BalancedPanel {
    /// Wraps an already-complete matrix (rows are observations).
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        assets: Vec<AssetMeta>,
        data: DMatrix<f64>,
    ) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("balanced panel contains non-finite values".into()));
        }
        let checked = PricePanel::new(timestamps, assets, data)?;
        Ok(Self {
            timestamps: checked.timestamps,
            assets: checked.assets,
            data: checked.values,
            dropped: 0,
        })
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn assets(&self) -> &[AssetMeta] {
        &self.assets
    }

    pub fn asset_ids(&self) -> Vec<String> {
        self.assets.iter().map(|a| a.id.clone()).collect()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Rows removed because at least one selected asset was missing.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.id == id)
    }

    /// Rows `start..=end` (inclusive), as used by rolling windows.
    pub fn rows(&self, start: usize, end: usize) -> BalancedPanel {
        assert!(start <= end && end < self.len(), "row range out of bounds");
        BalancedPanel {
            timestamps: self.timestamps[start..=end].to_vec(),
            assets: self.assets.clone(),
            data: self.data.rows(start, end - start + 1).into_owned(),
            dropped: 0,
        }
    }

    /// Reorders or subsets the columns.
    pub fn select(&self, ids: &[&str]) -> Result<BalancedPanel> {
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.asset_index(id)
                    .ok_or_else(|| Error::Alignment(format!("asset `{id}` not in panel")))
            })
            .collect::<Result<_>>()?;
        Ok(BalancedPanel {
            timestamps: self.timestamps.clone(),
            assets: idx.iter().map(|&j| self.assets[j].clone()).collect(),
            data: self.data.select_columns(idx.iter()),
            dropped: self.dropped,
        })
    }
}

/// Restricts `panel` to `assets` and to difference rows stamped inside
/// `[start, end]`, dropping every row where any selected asset is missing.
pub fn balanced_window(
    panel: &DeviationPanel,
    assets: &[&str],
    start: NaiveDateTime,
    end: NaiveDateTime,
    min_rows: usize,
) -> Result<BalancedPanel> {
    if assets.is_empty() {
        return Err(Error::InvalidInput("asset subset is empty".into()));
    }
    if start >= end {
        return Err(Error::InvalidInput(format!(
            "window start {} must precede end {}",
            format_instant(&start),
            format_instant(&end)
        )));
    }
    let cols: Vec<usize> = assets
        .iter()
        .map(|id| {
            panel
                .asset_index(id)
                .ok_or_else(|| Error::Alignment(format!("asset `{id}` not in panel")))
        })
        .collect::<Result<_>>()?;

    let diffs = panel.diffs();
    let mut keep = Vec::new();
    let mut in_range = 0usize;
    for (t, ts) in panel.diff_timestamps().iter().enumerate() {
        if *ts < start || *ts > end {
            continue;
        }
        in_range += 1;
        if cols.iter().all(|&j| diffs[(t, j)].is_finite()) {
            keep.push(t);
        }
    }
    if keep.len() < min_rows.max(1) {
        return Err(Error::InsufficientData(format!(
            "balanced window has {} complete rows, need at least {}",
            keep.len(),
            min_rows.max(1)
        )));
    }
    let data = DMatrix::from_fn(keep.len(), cols.len(), |i, k| diffs[(keep[i], cols[k])]);
    Ok(BalancedPanel {
        timestamps: keep.iter().map(|&t| panel.diff_timestamps()[t]).collect(),
        assets: cols.iter().map(|&j| panel.assets()[j].clone()).collect(),
        data,
        dropped: in_range - keep.len(),
    })
}

/// Full-sample variant of [`balanced_window`].
pub fn balanced(panel: &DeviationPanel, assets: &[&str], min_rows: usize) -> Result<BalancedPanel> {
    let ts = panel.diff_timestamps();
    if ts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "panel has {} difference rows",
            ts.len()
        )));
    }
    balanced_window(panel, assets, ts[0], ts[ts.len() - 1], min_rows)
}
