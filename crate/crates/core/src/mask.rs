//! Packed per-parameter bit masks in canonical address order, and their file
//! format (`RGNMSK1\0` container, one bit-packed payload per tensor).

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{read_container, write_container, Container, ContainerHeader, Layout, ManifestEntry, FORMAT_VERSION};

pub const MASK_MAGIC: &[u8; 8] = b"RGNMSK1\0";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    len: usize,
    words: Vec<u64>,
}

impl BitMask {
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn ones(len: usize) -> Self {
        let mut m = Self::zeros(len);
        for i in 0..len {
            m.set(i, true);
        }
        m
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::zeros(len);
        for i in indices {
            m.set(i, true);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len, "bit {i} outside mask of {}", self.len);
        let bit = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones_iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn intersection_count(&self, other: &BitMask) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    /// Bits of one tensor slice `[offset, offset + n)`, packed little-endian bit order.
    fn pack_range(&self, offset: usize, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n.div_ceil(8)];
        for i in 0..n {
            if self.get(offset + i) {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    /// Write as a mask container mirroring the checkpoint manifest of `layout`.
    pub fn save(&self, layout: &Layout, path: &Path, metadata: BTreeMap<String, serde_json::Value>) -> Result<()> {
        if self.len != layout.total() {
            return Err(Error::Dimension(format!("mask of {} bits for {} parameters", self.len, layout.total())));
        }
        let mut entries = Vec::new();
        let mut payloads = Vec::new();
        for (i, s) in layout.slots().iter().enumerate() {
            entries.push(ManifestEntry {
                name: s.name(),
                dtype: "bit".into(),
                shape: crate::model::entry_shape_for(layout, i),
                byte_offset: 0,
            });
            payloads.push(self.pack_range(s.offset, s.len()));
        }
        let header =
            ContainerHeader { format_version: FORMAT_VERSION, config: None, tensors: entries, init_fingerprint: None, metadata };
        write_container(path, MASK_MAGIC, &Container::new(header, payloads)?)
    }

    /// Read a mask file, validating its manifest against `layout`.
    pub fn load(layout: &Layout, path: &Path) -> Result<(Self, BTreeMap<String, serde_json::Value>)> {
        let c = read_container(path, MASK_MAGIC)?;
        if c.header.tensors.len() != layout.slots().len() {
            return Err(Error::format("manifest", "mask manifest does not match model layout"));
        }
        let mut mask = Self::zeros(layout.total());
        for (i, (slot, entry)) in layout.slots().iter().zip(&c.header.tensors).enumerate() {
            if entry.name != slot.name() || entry.numel() != slot.len() || entry.dtype != "bit" {
                return Err(Error::format(&entry.name, format!("expected bit tensor {}", slot.name())));
            }
            let bytes = c.entry_bytes(i)?;
            for j in 0..slot.len() {
                if bytes[j / 8] >> (j % 8) & 1 == 1 {
                    mask.set(slot.offset + j, true);
                }
            }
        }
        Ok((mask, c.header.metadata))
    }
}
