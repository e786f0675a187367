//! Auditable, exactly reversible edits of checkpoint scalars.
//!
//! Perturbed values are rounded to `f32`, the persisted precision, so a
//! perturbed store survives a save/load cycle unchanged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};
use crate::mask::BitMask;
use crate::model::{Axis, Kind, LayerRef, Layout, ParamAddress, ParamStore};
use crate::numkernel::Rng;
use crate::regionmap::{DimGroup, DimensionSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPolicy {
    /// Standard deviation of the targeted tensor's current values.
    PerTensorStd,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    GaussReinit { sigma: SigmaPolicy },
    Scale { c: f64 },
    /// Copy values from a reference checkpoint, typically the step-0 one.
    ResetInit { reference: String },
    Zero,
}

impl Mode {
    pub fn gauss() -> Self {
        Mode::GaussReinit { sigma: SigmaPolicy::PerTensorStd }
    }

    pub fn label(&self) -> String {
        match self {
            Mode::GaussReinit { sigma: SigmaPolicy::PerTensorStd } => "gauss_reinit".into(),
            Mode::GaussReinit { sigma: SigmaPolicy::Fixed(s) } => format!("gauss_reinit_sigma{s}"),
            Mode::Scale { c } => format!("scale{c}"),
            Mode::ResetInit { .. } => "reset_init".into(),
            Mode::Zero => "zero".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Mode::Scale { c } if !c.is_finite() || c == 1.0 => {
                Err(Error::Input(format!("scale factor {c} is not a perturbation")))
            }
            Mode::GaussReinit { sigma: SigmaPolicy::Fixed(s) } if !(s >= 0.0) || !s.is_finite() => {
                Err(Error::Input(format!("sigma {s} is invalid")))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    /// `gauss_reinit`, `gauss_reinit:<sigma>`, `scale:<c>`, `zero`, `reset_init[:<reference>]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Input(format!("mode '{s}' needs a value")))?
                .parse()
                .map_err(|_| Error::Input(format!("bad number in mode '{s}'")))
        };
        let mode = match name {
            "gauss_reinit" | "gauss" => match arg {
                None => Mode::gauss(),
                Some(_) => Mode::GaussReinit { sigma: SigmaPolicy::Fixed(num(arg)?) },
            },
            "scale" => Mode::Scale { c: num(arg)? },
            "zero" => Mode::Zero,
            "reset_init" => Mode::ResetInit { reference: arg.unwrap_or("init").to_string() },
            _ => return Err(Error::Input(format!("unknown perturbation mode '{s}'"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Scatter(BitMask),
    Dims(DimensionSet),
    Scalar(ParamAddress),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub mode: Mode,
    pub target: Target,
    pub seed: u64,
}

impl PerturbationSpec {
    /// JSON description stored in the audit log. Scatter masks are summarized
    /// by size since the audit entries list every address.
    pub fn snapshot(&self) -> serde_json::Value {
        let target = match &self.target {
            Target::Scatter(m) => serde_json::json!({ "scatter": { "n": m.popcount() } }),
            Target::Dims(d) => serde_json::json!({ "dims": d }),
            Target::Scalar(a) => serde_json::json!({ "scalar": a.to_string() }),
        };
        serde_json::json!({ "mode": self.mode, "target": target, "seed": self.seed })
    }
}

/// Which axis of each projection a dimension study perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisSetting {
    /// attn.o rows, attn.q/k/v columns, ffn.down columns.
    Mixed,
    /// attn.o rows and attn.q/k/v columns: both head-partitioned.
    Head,
    /// attn.o columns and attn.q/k/v rows: both on the residual stream.
    Residual,
}

impl AxisSetting {
    pub const ALL: [AxisSetting; 3] = [AxisSetting::Mixed, AxisSetting::Head, AxisSetting::Residual];

    pub fn name(self) -> &'static str {
        match self {
            AxisSetting::Mixed => "mixed",
            AxisSetting::Head => "head",
            AxisSetting::Residual => "residual",
        }
    }

    /// Dimension groups for every block layer.
    pub fn groups(self, n_layers: usize) -> Vec<DimGroup> {
        let (o_axis, qkv_axis) = match self {
            AxisSetting::Mixed | AxisSetting::Head => (Axis::Row, Axis::Col),
            AxisSetting::Residual => (Axis::Col, Axis::Row),
        };
        let mut out = Vec::new();
        for l in 0..n_layers {
            let layer = LayerRef::Block(l);
            out.push(DimGroup::new(layer, Kind::AttnO, o_axis));
            for kind in [Kind::AttnQ, Kind::AttnK, Kind::AttnV] {
                out.push(DimGroup::new(layer, kind, qkv_axis));
            }
            if self == AxisSetting::Mixed {
                out.push(DimGroup::new(layer, Kind::FfnDown, Axis::Col));
            }
        }
        out
    }
}

/// Expand dimensions into sorted, deduplicated flat indices.
pub fn resolve_dims_target(dims: &DimensionSet, layout: &Layout) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for d in &dims.entries {
        let g = d.group;
        if g.kind.is_norm() {
            return Err(Error::Input(format!("{} has no row/column axis", g.kind.name())));
        }
        let s = layout.slot(g.layer, g.kind)?;
        let extent = if g.axis == Axis::Row { s.rows } else { s.cols };
        if d.index >= extent {
            return Err(Error::Input(format!("dimension {} outside {} of extent {extent}", d.index, g.label())));
        }
        match g.axis {
            Axis::Row => out.extend((0..s.cols).map(|c| s.offset + d.index * s.cols + c)),
            Axis::Col => out.extend((0..s.rows).map(|r| s.offset + r * s.cols + d.index)),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn resolve(target: &Target, layout: &Layout) -> Result<Vec<usize>> {
    match target {
        Target::Scatter(m) => {
            if m.len() != layout.total() {
                return Err(Error::Dimension(format!("mask of {} bits for {} parameters", m.len(), layout.total())));
            }
            Ok(m.ones_iter().collect())
        }
        Target::Dims(d) => resolve_dims_target(d, layout),
        Target::Scalar(a) => Ok(vec![layout.flat_index(a)?]),
    }
}

fn tensor_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub addr: ParamAddress,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditLog {
    pub spec: serde_json::Value,
    pub source_fp: String,
    pub result_fp: String,
    pub entries: Vec<AuditEntry>,
}

#[derive(Serialize, Deserialize)]
struct AuditEntryJson {
    addr: String,
    before: String,
    after: String,
}

#[derive(Serialize, Deserialize)]
struct AuditLogJson {
    spec: serde_json::Value,
    source_fp: String,
    result_fp: String,
    entries: Vec<AuditEntryJson>,
}

impl AuditLog {
    pub fn to_json(&self) -> Result<String> {
        let j = AuditLogJson {
            spec: self.spec.clone(),
            source_fp: self.source_fp.clone(),
            result_fp: self.result_fp.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| AuditEntryJson {
                    addr: e.addr.to_string(),
                    before: crate::hexfloat::format(e.before),
                    after: crate::hexfloat::format(e.after),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: AuditLogJson = serde_json::from_str(text)?;
        let entries = j
            .entries
            .iter()
            .map(|e| {
                Ok(AuditEntry {
                    addr: e.addr.parse()?,
                    before: crate::hexfloat::parse(&e.before)?,
                    after: crate::hexfloat::parse(&e.after)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec: j.spec, source_fp: j.source_fp, result_fp: j.result_fp, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Perturb a copy of `ckpt`. `reference` supplies values for `ResetInit`.
pub fn apply_perturbation(
    ckpt: &ParamStore,
    spec: &PerturbationSpec,
    reference: Option<&ParamStore>,
) -> Result<(ParamStore, AuditLog)> {
    spec.mode.validate()?;
    let layout = ckpt.layout();
    let targets = resolve(&spec.target, layout)?;
    let reference = match &spec.mode {
        Mode::ResetInit { reference: id } => {
            let r = reference.ok_or_else(|| Error::Input(format!("reference checkpoint '{id}' not provided")))?;
            ckpt.check_compatible(r)?;
            Some(r)
        }
        _ => None,
    };
    let stream = Rng::new(spec.seed).split("perturb");
    let mut sigmas: Vec<Option<f64>> = vec![None; layout.slots().len()];
    let mut out = ckpt.clone();
    let mut entries = Vec::with_capacity(targets.len());
    for flat in targets {
        let before = ckpt.get_flat(flat);
        let after = match &spec.mode {
            Mode::GaussReinit { sigma } => {
                let s = match *sigma {
                    SigmaPolicy::Fixed(s) => s,
                    SigmaPolicy::PerTensorStd => {
                        let slot = layout.slot_of_flat(flat);
                        *sigmas[slot].get_or_insert_with(|| tensor_std(ckpt.tensors()[slot].data()))
                    }
                };
                s * stream.split_index(flat as u64).normal()
            }
            Mode::Scale { c } => c * before,
            Mode::ResetInit { .. } => reference.expect("checked above").get_flat(flat),
            Mode::Zero => 0.0,
        };
        let after = after as f32 as f64;
        out.set_flat(flat, after);
        entries.push(AuditEntry { addr: layout.address(flat), before, after });
    }
    let audit = AuditLog { spec: spec.snapshot(), source_fp: ckpt.fingerprint(), result_fp: out.fingerprint(), entries };
    Ok((out, audit))
}

/// Restore the source of `audit` from its perturbed result.
pub fn revert(perturbed: &ParamStore, audit: &AuditLog) -> Result<ParamStore> {
    if perturbed.fingerprint() != audit.result_fp {
        return Err(Error::Integrity("checkpoint does not match the audit's result fingerprint".into()));
    }
    let mut out = perturbed.clone();
    for e in &audit.entries {
        out.set(&e.addr, e.before)?;
    }
    if out.fingerprint() != audit.source_fp {
        return Err(Error::Integrity("reverted checkpoint does not match the audit's source fingerprint".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::regionmap::{DimRef, Tier};

    fn store() -> ParamStore {
        let cfg = ModelConfig { n_layers: 2, d_model: 16, n_heads: 2, d_ff: 32, vocab_size: 24, max_seq_len: 8, ..Default::default() };
        let mut p = ParamStore::build(&cfg, 5).unwrap();
        // Move norms off their init so reset_init is visible.
        for i in 0..p.total_params() {
            let a = p.layout().address(i);
            if a.kind.is_norm() {
                p.set_flat(i, 1.25);
            }
        }
        p
    }

    fn all_modes() -> Vec<Mode> {
        vec![
            Mode::gauss(),
            Mode::GaussReinit { sigma: SigmaPolicy::Fixed(0.5) },
            Mode::Scale { c: 10.0 },
            Mode::ResetInit { reference: "init".into() },
            Mode::Zero,
        ]
    }

    fn dims() -> DimensionSet {
        let g = DimGroup::new(LayerRef::Block(1), Kind::AttnO, Axis::Col);
        DimensionSet { tier: Tier::Bottom, entries: vec![DimRef { group: g, index: 3 }] }
    }

    #[test]
    fn scale_and_reset_on_scalars() {
        let mut p = store();
        let addr: ParamAddress = "layer0.attn.q.1.2".parse().unwrap();
        p.set(&addr, 0.5).unwrap();
        let spec = PerturbationSpec { mode: Mode::Scale { c: 10.0 }, target: Target::Scalar(addr), seed: 0 };
        let (q, log) = apply_perturbation(&p, &spec, None).unwrap();
        assert_eq!(q.get(&addr).unwrap(), 5.0);
        assert_eq!(log.entries.len(), 1);

        let init = ParamStore::build(p.config(), 5).unwrap();
        let norm: ParamAddress = "layer1.norm.input.7.0".parse().unwrap();
        let spec = PerturbationSpec { mode: Mode::ResetInit { reference: "init".into() }, target: Target::Scalar(norm), seed: 0 };
        let (r, _) = apply_perturbation(&p, &spec, Some(&init)).unwrap();
        assert_eq!(r.get(&norm).unwrap(), 1.0);
        assert_eq!(p.diff_flat(&r).unwrap().len(), 1);
        assert!(matches!(apply_perturbation(&p, &spec, None), Err(Error::Input(_))));
    }

    #[test]
    fn zero_scatter_changes_exactly_n() {
        let p = store();
        let n = p.total_params();
        let mask = BitMask::from_indices(n, (0..n).step_by(11));
        let spec = PerturbationSpec { mode: Mode::Zero, target: Target::Scatter(mask.clone()), seed: 0 };
        let (q, _) = apply_perturbation(&p, &spec, None).unwrap();
        assert_eq!(p.diff_flat(&q).unwrap(), mask.ones_iter().collect::<Vec<_>>());
    }

    #[test]
    fn apply_revert_all_modes_all_targets() {
        let p = store();
        let init = ParamStore::build(p.config(), 5).unwrap();
        let n = p.total_params();
        let mask = BitMask::from_indices(n, (3..n).step_by(17));
        let targets = [Target::Scatter(mask), Target::Dims(dims()), Target::Scalar("global.embed.4.4".parse().unwrap())];
        for mode in all_modes() {
            for target in &targets {
                let spec = PerturbationSpec { mode: mode.clone(), target: target.clone(), seed: 9 };
                let (q, log) = apply_perturbation(&p, &spec, Some(&init)).unwrap();
                let resolved = resolve(target, p.layout()).unwrap();
                assert!(p.diff_flat(&q).unwrap().iter().all(|i| resolved.binary_search(i).is_ok()), "{mode:?}");
                let back = revert(&q, &AuditLog::from_json(&log.to_json().unwrap()).unwrap()).unwrap();
                assert_eq!(back, p, "{mode:?}");
            }
        }
    }

    #[test]
    fn gauss_is_seeded_and_scaled_by_tensor_std() {
        let p = store();
        let spec = PerturbationSpec { mode: Mode::gauss(), target: Target::Dims(dims()), seed: 4 };
        let (a, _) = apply_perturbation(&p, &spec, None).unwrap();
        let (b, _) = apply_perturbation(&p, &spec, None).unwrap();
        assert_eq!(a, b);
        let other = PerturbationSpec { seed: 5, ..spec.clone() };
        assert_ne!(apply_perturbation(&p, &other, None).unwrap().0, a);

        let o = p.tensor(LayerRef::Block(1), Kind::AttnO).unwrap();
        let sd = tensor_std(o.data());
        let s = p.layout().slot(LayerRef::Block(1), Kind::AttnO).unwrap();
        let flat = s.offset + 3;
        let expect = (sd * Rng::new(4).split("perturb").split_index(flat as u64).normal()) as f32 as f64;
        assert_eq!(a.get_flat(flat), expect);
    }

    #[test]
    fn revert_detects_wrong_audit_and_double_apply() {
        let p = store();
        let spec = PerturbationSpec { mode: Mode::gauss(), target: Target::Dims(dims()), seed: 1 };
        let (once, log) = apply_perturbation(&p, &spec, None).unwrap();
        let (twice, _) = apply_perturbation(&once, &spec, None).unwrap();
        assert!(matches!(revert(&twice, &log), Err(Error::Integrity(_))));
        let other = PerturbationSpec { mode: Mode::Zero, ..spec };
        let (_, log2) = apply_perturbation(&p, &other, None).unwrap();
        assert!(matches!(revert(&once, &log2), Err(Error::Integrity(_))));
    }

    #[test]
    fn dims_resolution_counts() {
        let cfg = ModelConfig { n_layers: 4, d_model: 64, n_heads: 4, d_ff: 256, vocab_size: 100, ..Default::default() };
        let layout = Layout::new(&cfg);
        let g = DimGroup::new(LayerRef::Block(0), Kind::AttnQ, Axis::Col);
        let one = DimensionSet { tier: Tier::Top, entries: vec![DimRef { group: g, index: 5 }] };
        assert_eq!(resolve_dims_target(&one, &layout).unwrap().len(), 64);
        let twice = DimensionSet { tier: Tier::Top, entries: vec![DimRef { group: g, index: 5 }; 2] };
        assert_eq!(resolve_dims_target(&twice, &layout).unwrap().len(), 64);

        // One dimension per group of the mixed setting over 4 layers, by enumeration.
        let entries: Vec<DimRef> = AxisSetting::Mixed.groups(4).into_iter().map(|group| DimRef { group, index: 1 }).collect();
        let set = DimensionSet { tier: Tier::Top, entries };
        let got = resolve_dims_target(&set, &layout).unwrap();
        let expect: Vec<usize> = (0..layout.total())
            .filter(|&i| {
                let a = layout.address(i);
                match a.kind {
                    Kind::AttnO => a.row == 1,
                    Kind::AttnQ | Kind::AttnK | Kind::AttnV | Kind::FfnDown => a.col == 1,
                    _ => false,
                }
            })
            .collect();
        assert_eq!(got.len(), 4 * (64 + 3 * 64 + 256));
        assert_eq!(got, expect);

        let head = resolve_dims_target(
            &DimensionSet {
                tier: Tier::Top,
                entries: AxisSetting::Head.groups(4).into_iter().map(|group| DimRef { group, index: 1 }).collect(),
            },
            &layout,
        )
        .unwrap();
        let residual = resolve_dims_target(
            &DimensionSet {
                tier: Tier::Top,
                entries: AxisSetting::Residual.groups(4).into_iter().map(|group| DimRef { group, index: 1 }).collect(),
            },
            &layout,
        )
        .unwrap();
        assert_ne!(head, residual);

        let bad = DimensionSet { tier: Tier::Top, entries: vec![DimRef { group: g, index: 64 }] };
        assert!(resolve_dims_target(&bad, &layout).is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!("gauss_reinit".parse::<Mode>().unwrap(), Mode::gauss());
        assert_eq!("scale:10".parse::<Mode>().unwrap(), Mode::Scale { c: 10.0 });
        assert_eq!("gauss:0.5".parse::<Mode>().unwrap(), Mode::GaussReinit { sigma: SigmaPolicy::Fixed(0.5) });
        assert_eq!("reset_init:step0".parse::<Mode>().unwrap(), Mode::ResetInit { reference: "step0".into() });
        assert!("scale:1".parse::<Mode>().is_err());
        assert!("melt".parse::<Mode>().is_err());
    }

    #[test]
    fn scale_by_one_rejected() {
        let p = store();
        let spec = PerturbationSpec { mode: Mode::Scale { c: 1.0 }, target: Target::Dims(dims()), seed: 0 };
        assert!(apply_perturbation(&p, &spec, None).is_err());
    }
}
