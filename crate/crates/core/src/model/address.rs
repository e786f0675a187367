use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Parameter tensor kinds, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "attn.q")]
    AttnQ,
    #[serde(rename = "attn.k")]
    AttnK,
    #[serde(rename = "attn.v")]
    AttnV,
    #[serde(rename = "attn.o")]
    AttnO,
    #[serde(rename = "ffn.gate")]
    FfnGate,
    #[serde(rename = "ffn.up")]
    FfnUp,
    #[serde(rename = "ffn.down")]
    FfnDown,
    #[serde(rename = "norm.input")]
    NormInput,
    #[serde(rename = "norm.post")]
    NormPost,
    #[serde(rename = "norm.final")]
    NormFinal,
    #[serde(rename = "embed")]
    Embed,
    #[serde(rename = "lm_head")]
    LmHead,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::AttnQ,
        Kind::AttnK,
        Kind::AttnV,
        Kind::AttnO,
        Kind::FfnGate,
        Kind::FfnUp,
        Kind::FfnDown,
        Kind::NormInput,
        Kind::NormPost,
        Kind::NormFinal,
        Kind::Embed,
        Kind::LmHead,
    ];

    pub const BLOCK: [Kind; 9] = [
        Kind::AttnQ,
        Kind::AttnK,
        Kind::AttnV,
        Kind::AttnO,
        Kind::FfnGate,
        Kind::FfnUp,
        Kind::FfnDown,
        Kind::NormInput,
        Kind::NormPost,
    ];

    /// Kinds whose rows/columns are analyzed as dimensions by default.
    pub const PROJECTIONS: [Kind; 7] =
        [Kind::AttnQ, Kind::AttnK, Kind::AttnV, Kind::AttnO, Kind::FfnGate, Kind::FfnUp, Kind::FfnDown];

    pub fn name(self) -> &'static str {
        match self {
            Kind::AttnQ => "attn.q",
            Kind::AttnK => "attn.k",
            Kind::AttnV => "attn.v",
            Kind::AttnO => "attn.o",
            Kind::FfnGate => "ffn.gate",
            Kind::FfnUp => "ffn.up",
            Kind::FfnDown => "ffn.down",
            Kind::NormInput => "norm.input",
            Kind::NormPost => "norm.post",
            Kind::NormFinal => "norm.final",
            Kind::Embed => "embed",
            Kind::LmHead => "lm_head",
        }
    }

    pub fn is_norm(self) -> bool {
        matches!(self, Kind::NormInput | Kind::NormPost | Kind::NormFinal)
    }

    pub fn is_global(self) -> bool {
        matches!(self, Kind::NormFinal | Kind::Embed | Kind::LmHead)
    }

    /// Storage shape `(rows, cols)`; matrices are `input × output`.
    pub fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let d = cfg.d_model;
        match self {
            Kind::AttnQ | Kind::AttnK | Kind::AttnV | Kind::AttnO => (d, d),
            Kind::FfnGate | Kind::FfnUp => (d, cfg.d_ff),
            Kind::FfnDown => (cfg.d_ff, d),
            Kind::NormInput | Kind::NormPost | Kind::NormFinal => (d, 1),
            Kind::Embed => (cfg.vocab_size, d),
            Kind::LmHead => (d, cfg.vocab_size),
        }
    }

    /// The axis partitioned by attention heads, if any.
    pub fn head_axis(self) -> Option<Axis> {
        match self {
            Kind::AttnQ | Kind::AttnK | Kind::AttnV => Some(Axis::Col),
            Kind::AttnO => Some(Axis::Row),
            _ => None,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown parameter kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Col,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(Axis::Row),
            "col" | "column" => Ok(Axis::Col),
            _ => Err(Error::Input(format!("unknown axis '{s}'"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Row => "row",
            Axis::Col => "col",
        })
    }
}

/// Transformer block index, or the global tensors after the last block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRef {
    Block(usize),
    Global,
}

impl fmt::Display for LayerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRef::Block(i) => write!(f, "layer{i}"),
            LayerRef::Global => f.write_str("global"),
        }
    }
}

impl FromStr for LayerRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "global" {
            return Ok(LayerRef::Global);
        }
        let digits = s.strip_prefix("layer").unwrap_or(s);
        digits
            .parse()
            .map(LayerRef::Block)
            .map_err(|_| Error::Input(format!("bad layer reference '{s}'")))
    }
}

/// One scalar parameter. Ordering is the canonical address order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamAddress {
    pub layer: LayerRef,
    pub kind: Kind,
    pub row: usize,
    pub col: usize,
}

impl ParamAddress {
    pub fn new(layer: LayerRef, kind: Kind, row: usize, col: usize) -> Self {
        Self { layer, kind, row, col }
    }
}

impl fmt::Display for ParamAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}.{}", self.layer, self.kind, self.row, self.col)
    }
}

impl FromStr for ParamAddress {
    type Err = Error;

    /// Parses `layer0.attn.q.3.5` / `global.embed.10.2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("bad parameter address '{s}'"));
        let (layer, rest) = s.split_once('.').ok_or_else(bad)?;
        let (rest, col) = rest.rsplit_once('.').ok_or_else(bad)?;
        let (kind, row) = rest.rsplit_once('.').ok_or_else(bad)?;
        Ok(Self {
            layer: layer.parse()?,
            kind: kind.parse()?,
            row: row.parse().map_err(|_| bad())?,
            col: col.parse().map_err(|_| bad())?,
        })
    }
}

/// One tensor slot in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub layer: LayerRef,
    pub kind: Kind,
    pub rows: usize,
    pub cols: usize,
    /// Offset of the first scalar in the flat canonical order.
    pub offset: usize,
}

impl Slot {
    pub fn name(&self) -> String {
        format!("{}.{}", self.layer, self.kind)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Canonical tensor layout for a config: slot order, shapes, flat offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    slots: Vec<Slot>,
    total: usize,
    n_layers: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |layer, kind: Kind| {
            let (rows, cols) = kind.shape(cfg);
            slots.push(Slot { layer, kind, rows, cols, offset });
            offset += rows * cols;
        };
        for l in 0..cfg.n_layers {
            for kind in Kind::BLOCK {
                push(LayerRef::Block(l), kind);
            }
        }
        push(LayerRef::Global, Kind::NormFinal);
        push(LayerRef::Global, Kind::Embed);
        if !cfg.tied_lm_head {
            push(LayerRef::Global, Kind::LmHead);
        }
        Self { slots, total: offset, n_layers: cfg.n_layers }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn slot_index(&self, layer: LayerRef, kind: Kind) -> Option<usize> {
        let idx = match layer {
            LayerRef::Block(l) if l < self.n_layers && !kind.is_global() => {
                l * Kind::BLOCK.len() + Kind::BLOCK.iter().position(|&k| k == kind)?
            }
            LayerRef::Global if kind.is_global() => {
                let base = self.n_layers * Kind::BLOCK.len();
                match kind {
                    Kind::NormFinal => base,
                    Kind::Embed => base + 1,
                    Kind::LmHead if self.slots.len() == base + 3 => base + 2,
                    _ => return None,
                }
            }
            _ => return None,
        };
        Some(idx)
    }

    pub fn slot(&self, layer: LayerRef, kind: Kind) -> Result<&Slot> {
        self.slot_index(layer, kind)
            .map(|i| &self.slots[i])
            .ok_or_else(|| Error::Input(format!("no tensor {layer}.{kind} in this model")))
    }

    pub fn slot_by_name(&self, name: &str) -> Result<&Slot> {
        let (layer, kind) = name
            .split_once('.')
            .ok_or_else(|| Error::Input(format!("bad tensor name '{name}'")))?;
        self.slot(layer.parse()?, kind.parse()?)
    }

    /// Flat canonical index of an address.
    pub fn flat_index(&self, addr: &ParamAddress) -> Result<usize> {
        let slot = self.slot(addr.layer, addr.kind)?;
        if addr.row >= slot.rows || addr.col >= slot.cols {
            return Err(Error::Range(format!("address {addr} outside {}x{}", slot.rows, slot.cols)));
        }
        Ok(slot.offset + addr.row * slot.cols + addr.col)
    }

    /// Slot index owning a flat index.
    pub fn slot_of_flat(&self, flat: usize) -> usize {
        debug_assert!(flat < self.total);
        self.slots.partition_point(|s| s.offset + s.len() <= flat)
    }

    pub fn address(&self, flat: usize) -> ParamAddress {
        let slot = &self.slots[self.slot_of_flat(flat)];
        let local = flat - slot.offset;
        ParamAddress::new(slot.layer, slot.kind, local / slot.cols, local % slot.cols)
    }

    /// Every address in canonical order.
    pub fn addresses(&self) -> impl Iterator<Item = ParamAddress> + '_ {
        self.slots.iter().flat_map(|s| {
            (0..s.rows).flat_map(move |r| (0..s.cols).map(move |c| ParamAddress::new(s.layer, s.kind, r, c)))
        })
    }
}

/// Head owning row/column `index` of an attention projection.
pub fn head_of_dimension(kind: Kind, axis: Axis, index: usize, cfg: &ModelConfig) -> Result<usize> {
    let head_axis = kind
        .head_axis()
        .ok_or_else(|| Error::NotHeadAxis(format!("{kind} has no head axis")))?;
    if axis != head_axis {
        return Err(Error::NotHeadAxis(format!("{axis} of {kind} indexes the residual stream")));
    }
    if index >= cfg.d_model {
        return Err(Error::Range(format!("index {index} beyond d_model {}", cfg.d_model)));
    }
    Ok(index / cfg.head_dim())
}
