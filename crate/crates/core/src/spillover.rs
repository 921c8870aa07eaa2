//! Directional, net and total spillover indices, tail-relative indices,
//! pairwise rankings, network edges and category flows.
//!
//! All values are fractions in `[0, 1]`; conversion to percent happens only
//! in [`to_percent`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fevd::FevdMatrix;
use crate::quantreg::QuantileLevel;
use crate::timeseries::{AssetMeta, Category};

/// Default minimum pairwise share for network emission (one percentage point).
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.01;

/// The single fraction-to-percent conversion used by reporting code.
pub fn to_percent(x: f64) -> f64 {
    x * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverIndices {
    pub tau: QuantileLevel,
    pub assets: Vec<String>,
    /// Received from others (row off-diagonal sums).
    #[serde(rename = "from")]
    pub from_: Vec<f64>,
    /// Transmitted to others (column off-diagonal sums).
    pub to: Vec<f64>,
    pub net: Vec<f64>,
    pub total: f64,
}

pub fn indices(fevd: &FevdMatrix) -> SpilloverIndices {
    let m = &fevd.normalized;
    let n = fevd.n_assets();
    let mut from_ = vec![0.0; n];
    let mut to = vec![0.0; n];
    let mut off = 0.0;
    for j in 0..n {
        for k in 0..n {
            if j != k {
                from_[j] += m[(j, k)];
                to[k] += m[(j, k)];
                off += m[(j, k)];
            }
        }
    }
    let net = to.iter().zip(&from_).map(|(t, f)| t - f).collect();
    SpilloverIndices {
        tau: fevd.tau,
        assets: fevd.asset_order.clone(),
        from_,
        to,
        net,
        total: off / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDelta {
    #[serde(rename = "from")]
    pub from_: Vec<f64>,
    pub to: Vec<f64>,
    pub net: Vec<f64>,
}

impl DirectionalDelta {
    fn between(tail: &SpilloverIndices, median: &SpilloverIndices) -> Self {
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self {
            from_: diff(&tail.from_, &median.from_),
            to: diff(&tail.to, &median.to),
            net: diff(&tail.net, &median.net),
        }
    }
}

/// Tail-minus-median indices: `left` uses the lower tail, `right` the upper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeSpillover {
    pub assets: Vec<String>,
    pub left: DirectionalDelta,
    pub right: DirectionalDelta,
}

pub fn relative(
    lower: &SpilloverIndices,
    median: &SpilloverIndices,
    upper: &SpilloverIndices,
) -> Result<RelativeSpillover> {
    if lower.assets != median.assets || upper.assets != median.assets {
        return Err(Error::Alignment(
            "spillover indices have different asset orders".into(),
        ));
    }
    Ok(RelativeSpillover {
        assets: median.assets.clone(),
        left: DirectionalDelta::between(lower, median),
        right: DirectionalDelta::between(upper, median),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub source: String,
    pub target: String,
    /// Percentage points.
    pub delta: f64,
}

fn check_aligned(a: &FevdMatrix, b: &FevdMatrix) -> Result<()> {
    if a.asset_order != b.asset_order {
        return Err(Error::Alignment("FEVD matrices have different asset orders".into()));
    }
    if a.horizon != b.horizon {
        return Err(Error::Alignment(format!(
            "FEVD horizons differ ({} vs {})",
            a.horizon, b.horizon
        )));
    }
    Ok(())
}

/// Ranks `tail - median` pairwise shares (source -> target), descending,
/// ties broken by `(source, target)`.
pub fn pairwise_deltas(tail: &FevdMatrix, median: &FevdMatrix, top_k: usize) -> Result<Vec<PairDelta>> {
    check_aligned(tail, median)?;
    let n = tail.n_assets();
    let ids = &tail.asset_order;
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for source in 0..n {
        for target in 0..n {
            if source == target {
                continue;
            }
            let d = tail.normalized[(target, source)] - median.normalized[(target, source)];
            out.push(PairDelta {
                source: ids[source].clone(),
                target: ids[target].clone(),
                delta: to_percent(d),
            });
        }
    }
    out.sort_by(|a, b| {
        b.delta
            .total_cmp(&a.delta)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.target.cmp(&b.target))
    });
    out.truncate(top_k);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
    pub net_weight: f64,
}

/// Directed edges `source -> target` whose share of the target's variance is
/// at least `threshold`, ordered by source then target.
pub fn network(fevd: &FevdMatrix, threshold: f64) -> Result<Vec<NetworkEdge>> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidInput(format!("edge threshold {threshold} is negative")));
    }
    let m = &fevd.normalized;
    let ids = &fevd.asset_order;
    let n = fevd.n_assets();
    let mut edges = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s == t || m[(t, s)] < threshold {
                continue;
            }
            edges.push(NetworkEdge {
                source: ids[s].clone(),
                target: ids[t].clone(),
                weight: m[(t, s)],
                net_weight: m[(t, s)] - m[(s, t)],
            });
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFlow {
    #[serde(rename = "from")]
    pub from_category: Category,
    #[serde(rename = "to")]
    pub to_category: Category,
    pub flow: f64,
}

/// Off-diagonal mass aggregated by (source category -> target category),
/// one entry for every ordered pair of categories present.
pub fn category_flows(fevd: &FevdMatrix, meta: &[AssetMeta]) -> Result<Vec<CategoryFlow>> {
    let cats: Vec<Category> = fevd
        .asset_order
        .iter()
        .map(|id| {
            meta.iter()
                .find(|m| &m.id == id)
                .map(|m| m.category)
                .ok_or_else(|| Error::Alignment(format!("no category for asset `{id}`")))
        })
        .collect::<Result<_>>()?;
    let mut present: Vec<Category> = cats.clone();
    present.sort();
    present.dedup();
    let mut flows: BTreeMap<(Category, Category), f64> = BTreeMap::new();
    for &a in &present {
        for &b in &present {
            flows.insert((a, b), 0.0);
        }
    }
    let n = fevd.n_assets();
    for j in 0..n {
        for k in 0..n {
            if j != k {
                *flows.get_mut(&(cats[k], cats[j])).expect("pair present") += fevd.normalized[(j, k)];
            }
        }
    }
    Ok(flows
        .into_iter()
        .map(|((from_category, to_category), flow)| CategoryFlow {
            from_category,
            to_category,
            flow,
        })
        .collect())
}
