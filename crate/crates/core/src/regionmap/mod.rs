//! Per-parameter relative change across fine-tuning runs, and the Top/Bottom
//! regions and dimensions derived from it.

mod density;
mod dims;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::model::{
    entry_shape_for, read_container, write_container, Container, ContainerHeader, Layout, ManifestEntry, ParamStore,
    FORMAT_VERSION,
};
use crate::numkernel::Rng;

pub use density::vicinity_density;
pub use dims::{
    dimension_scores, mask_matrix, select_dimensions, DimGroup, DimRef, DimensionSet, GroupScores, Tier,
};

pub const VARIATION_MAGIC: &[u8; 8] = b"RGNVAR1\0";
pub const DEFAULT_VARIATION_EPS: f64 = 1e-8;

/// `|tuned − base| / (|base| + eps)` for every scalar, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationMap {
    pub values: Vec<f32>,
    pub eps: f64,
}

pub fn relative_variation(base: &ParamStore, tuned: &ParamStore, eps: f64) -> Result<VariationMap> {
    base.check_compatible(tuned)?;
    let values = base
        .flat_values()
        .zip(tuned.flat_values())
        .map(|(b, t)| ((t - b).abs() / (b.abs() + eps)) as f32)
        .collect::<Vec<_>>();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(base.layout().address(i).to_string(), "non-finite relative variation"));
    }
    Ok(VariationMap { values, eps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateVariation {
    pub vmax: Vec<f32>,
    pub vmin: Vec<f32>,
    pub run_ids: Vec<String>,
}

impl AggregateVariation {
    pub fn k(&self) -> usize {
        self.run_ids.len()
    }

    pub fn len(&self) -> usize {
        self.vmax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vmax.is_empty()
    }
}

/// Elementwise max and min over `K ≥ 2` runs.
pub fn aggregate_runs(maps: &[VariationMap], run_ids: &[String]) -> Result<AggregateVariation> {
    if maps.len() < 2 {
        return Err(Error::Input(format!("aggregation needs at least 2 runs, got {}", maps.len())));
    }
    if run_ids.len() != maps.len() {
        return Err(Error::Input("one run id per variation map required".into()));
    }
    let n = maps[0].values.len();
    if let Some(m) = maps.iter().find(|m| m.values.len() != n) {
        return Err(Error::format("variation", format!("map of {} entries, expected {n}", m.values.len())));
    }
    let mut vmax = maps[0].values.clone();
    let mut vmin = maps[0].values.clone();
    for m in &maps[1..] {
        for ((hi, lo), &v) in vmax.iter_mut().zip(vmin.iter_mut()).zip(&m.values) {
            *hi = hi.max(v);
            *lo = lo.min(v);
        }
    }
    Ok(AggregateVariation { vmax, vmin, run_ids: run_ids.to_vec() })
}

/// Fractions of scalars with `vmax < θ` (stable in every run) and `vmin > θ`
/// (changed in every run).
pub fn threshold_proportions(agg: &AggregateVariation, theta: f64) -> Result<(f64, f64)> {
    if !(theta > 0.0) {
        return Err(Error::Input(format!("threshold {theta} must be positive")));
    }
    if agg.is_empty() {
        return Err(Error::Input("empty aggregate".into()));
    }
    let below = agg.vmax.iter().filter(|&&v| f64::from(v) < theta).count();
    let above = agg.vmin.iter().filter(|&&v| f64::from(v) > theta).count();
    let n = agg.len() as f64;
    Ok((below as f64 / n, above as f64 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Top,
    Bottom,
    Random,
}

impl RegionKind {
    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Top => "top",
            RegionKind::Bottom => "bottom",
            RegionKind::Random => "random",
        }
    }
}

/// Statistic a Top/Bottom ranking sorts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankKey {
    /// Bottom ranks by `vmax`, Top by `vmin`.
    Consistent,
    Max,
    Min,
}

impl RankKey {
    fn values<'a>(self, agg: &'a AggregateVariation, which: RegionKind) -> &'a [f32] {
        match (self, which) {
            (RankKey::Max, _) | (RankKey::Consistent, RegionKind::Bottom) => &agg.vmax,
            _ => &agg.vmin,
        }
    }
}

/// Number of scalars for a perturbation ratio, `round(r · total)`.
pub fn ratio_count(ratio: f64, total: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Input(format!("ratio {ratio} outside (0, 1]")));
    }
    Ok(((ratio * total as f64).round() as usize).clamp(1, total))
}

fn check_count(n: usize, total: usize) -> Result<()> {
    if n == 0 || n > total {
        return Err(Error::Input(format!("region size {n} outside 1..={total}")));
    }
    Ok(())
}

/// Which tensors Top/Bottom selection may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionScope {
    /// Every trainable tensor.
    #[default]
    All,
    /// Everything except the token embedding and output head.
    NoEmbeddings,
}

impl RegionScope {
    /// Eligible flat indices, or `None` when every index is.
    pub fn candidates(self, layout: &Layout) -> Option<Vec<usize>> {
        match self {
            RegionScope::All => None,
            RegionScope::NoEmbeddings => Some(
                layout
                    .slots()
                    .iter()
                    .filter(|s| !matches!(s.kind, crate::model::Kind::Embed | crate::model::Kind::LmHead))
                    .flat_map(|s| s.offset..s.offset + s.len())
                    .collect(),
            ),
        }
    }
}

/// Indices of the `n` smallest (bottom) or largest (top) keys; ties go to the
/// lower canonical index.
pub fn select_by_key(keys: &[f32], n: usize, which: RegionKind) -> Result<BitMask> {
    select_among(keys, (0..keys.len() as u32).collect(), n, which)
}

fn select_among(keys: &[f32], mut order: Vec<u32>, n: usize, which: RegionKind) -> Result<BitMask> {
    check_count(n, order.len())?;
    let cmp = |a: &u32, b: &u32| {
        let (ka, kb) = (keys[*a as usize], keys[*b as usize]);
        let c = match which {
            RegionKind::Top => kb.total_cmp(&ka),
            _ => ka.total_cmp(&kb),
        };
        c.then(a.cmp(b))
    };
    if n < order.len() {
        order.select_nth_unstable_by(n - 1, cmp);
    }
    Ok(BitMask::from_indices(keys.len(), order[..n].iter().map(|&i| i as usize)))
}

pub fn select_region(agg: &AggregateVariation, n: usize, which: RegionKind) -> Result<BitMask> {
    select_region_by(agg, n, which, RankKey::Consistent)
}

pub fn select_region_by(agg: &AggregateVariation, n: usize, which: RegionKind, key: RankKey) -> Result<BitMask> {
    if which == RegionKind::Random {
        return Err(Error::Input("random regions come from random_region".into()));
    }
    select_by_key(key.values(agg, which), n, which)
}

/// Top/Bottom selection restricted to the tensors of `scope`.
pub fn select_region_in(
    agg: &AggregateVariation,
    layout: &Layout,
    n: usize,
    which: RegionKind,
    key: RankKey,
    scope: RegionScope,
) -> Result<BitMask> {
    match scope.candidates(layout) {
        None => select_region_by(agg, n, which, key),
        Some(c) => {
            if which == RegionKind::Random {
                return Err(Error::Input("random regions come from random_region".into()));
            }
            if agg.len() != layout.total() {
                return Err(Error::Dimension(format!("aggregate of {} for {} parameters", agg.len(), layout.total())));
            }
            select_among(key.values(agg, which), c.into_iter().map(|i| i as u32).collect(), n, which)
        }
    }
}

/// `n` scalars uniformly without replacement.
pub fn random_region(total: usize, n: usize, seed: u64) -> Result<BitMask> {
    check_count(n, total)?;
    let mut rng = Rng::new(seed).split("random_region");
    Ok(BitMask::from_indices(total, rand::seq::index::sample(&mut rng, total, n)))
}

/// Provenance stored alongside a region mask.
pub fn region_metadata(
    which: RegionKind,
    n: usize,
    ratio: Option<f64>,
    key: RankKey,
    source: &str,
    seed: Option<u64>,
) -> BTreeMap<String, serde_json::Value> {
    let mut m = BTreeMap::new();
    m.insert("kind".into(), serde_json::json!(which.name()));
    m.insert("n".into(), serde_json::json!(n));
    if let Some(r) = ratio {
        m.insert("ratio".into(), serde_json::json!(r));
    }
    if which != RegionKind::Random {
        m.insert("rank_key".into(), serde_json::to_value(key).expect("enum serializes"));
    }
    m.insert("source".into(), serde_json::json!(source));
    if let Some(s) = seed {
        m.insert("seed".into(), serde_json::json!(s));
    }
    m
}

fn f32_container(
    layout: &Layout,
    arrays: &[(&str, &[f32])],
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<Container> {
    let mut entries = Vec::new();
    let mut payloads = Vec::new();
    for (suffix, values) in arrays {
        if values.len() != layout.total() {
            return Err(Error::Dimension(format!("{} values for {} parameters", values.len(), layout.total())));
        }
        for (i, s) in layout.slots().iter().enumerate() {
            entries.push(ManifestEntry {
                name: format!("{}.{suffix}", s.name()),
                dtype: "f32".into(),
                shape: entry_shape_for(layout, i),
                byte_offset: 0,
            });
            payloads.push(values[s.offset..s.offset + s.len()].iter().flat_map(|v| v.to_le_bytes()).collect());
        }
    }
    let header = ContainerHeader { format_version: FORMAT_VERSION, config: None, tensors: entries, init_fingerprint: None, metadata };
    Container::new(header, payloads)
}

fn read_f32_arrays(layout: &Layout, c: &Container, suffixes: &[&str]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::new();
    for suffix in suffixes {
        let mut values = Vec::with_capacity(layout.total());
        for s in layout.slots() {
            let name = format!("{}.{suffix}", s.name());
            let idx = c.find(&name).ok_or_else(|| Error::format(&name, "missing from variation file"))?;
            let t = c.f32_tensor(idx)?;
            if t.len() != s.len() {
                return Err(Error::format(&name, format!("{} values, expected {}", t.len(), s.len())));
            }
            values.extend(t);
        }
        out.push(values);
    }
    Ok(out)
}

impl VariationMap {
    pub fn save(&self, layout: &Layout, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("eps".into(), serde_json::json!(self.eps));
        write_container(path, VARIATION_MAGIC, &f32_container(layout, &[("var", &self.values)], meta)?)
    }

    pub fn load(layout: &Layout, path: &Path) -> Result<Self> {
        let c = read_container(path, VARIATION_MAGIC)?;
        let eps = c.header.metadata.get("eps").and_then(|v| v.as_f64()).unwrap_or(DEFAULT_VARIATION_EPS);
        let values = read_f32_arrays(layout, &c, &["var"])?.remove(0);
        Ok(Self { values, eps })
    }
}

impl AggregateVariation {
    pub fn save(&self, layout: &Layout, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("k".into(), serde_json::json!(self.k()));
        meta.insert("run_ids".into(), serde_json::json!(self.run_ids));
        write_container(path, VARIATION_MAGIC, &f32_container(layout, &[("vmax", &self.vmax), ("vmin", &self.vmin)], meta)?)
    }

    pub fn load(layout: &Layout, path: &Path) -> Result<Self> {
        let c = read_container(path, VARIATION_MAGIC)?;
        let run_ids: Vec<String> = c
            .header
            .metadata
            .get("run_ids")
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()?
            .ok_or_else(|| Error::format("metadata", "aggregate file lists no run ids"))?;
        let mut arrays = read_f32_arrays(layout, &c, &["vmax", "vmin"])?;
        let vmin = arrays.pop().expect("two arrays");
        let vmax = arrays.pop().expect("two arrays");
        Ok(Self { vmax, vmin, run_ids })
    }
}
