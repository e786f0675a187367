//! Binary container: 8-byte magic, `u64` LE header length, JSON header,
//! raw little-endian row-major payloads.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::address::Layout;
use super::config::ModelConfig;
use super::store::ParamStore;
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};
use crate::numkernel::Tensor2D;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGNPRB1\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Offset from the start of the payload section.
    pub byte_offset: u64,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn byte_len(&self) -> Result<usize> {
        match self.dtype.as_str() {
            "f32" => Ok(self.numel() * 4),
            "bit" => Ok(self.numel().div_ceil(8)),
            other => Err(Error::format(&self.name, format!("unsupported dtype '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    pub tensors: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Parsed container with its raw payload section.
#[derive(Debug, Clone)]
pub struct Container {
    pub header: ContainerHeader,
    payload: Vec<u8>,
}

impl Container {
    /// Build a container, assigning byte offsets in order.
    pub fn new(mut header: ContainerHeader, payloads: Vec<Vec<u8>>) -> Result<Self> {
        if header.tensors.len() != payloads.len() {
            return Err(Error::format("manifest", "entry count differs from payload count"));
        }
        let mut payload = Vec::new();
        for (entry, bytes) in header.tensors.iter_mut().zip(payloads) {
            if bytes.len() != entry.byte_len()? {
                return Err(Error::format(&entry.name, "payload size does not match shape"));
            }
            entry.byte_offset = payload.len() as u64;
            payload.extend_from_slice(&bytes);
        }
        Ok(Self { header, payload })
    }

    pub fn entry_bytes(&self, idx: usize) -> Result<&[u8]> {
        let e = &self.header.tensors[idx];
        let start = usize::try_from(e.byte_offset).map_err(|_| Error::format(&e.name, "offset overflow"))?;
        let end = start + e.byte_len()?;
        self.payload
            .get(start..end)
            .ok_or_else(|| Error::format(&e.name, "truncated payload"))
    }

    pub fn f32_tensor(&self, idx: usize) -> Result<Vec<f32>> {
        let e = &self.header.tensors[idx];
        if e.dtype != "f32" {
            return Err(Error::format(&e.name, format!("expected f32, found {}", e.dtype)));
        }
        Ok(self
            .entry_bytes(idx)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.header.tensors.iter().position(|e| e.name == name)
    }

    pub fn to_bytes(&self, magic: &[u8; 8]) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + self.payload.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != magic {
            return Err(Error::format("container", "bad magic bytes"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_bytes = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| Error::format("container", "truncated header"))?;
        let header: ContainerHeader =
            serde_json::from_slice(header_bytes).map_err(|e| Error::format("container", format!("bad header: {e}")))?;
        let c = Self { header, payload: bytes[16 + hlen..].to_vec() };
        for i in 0..c.header.tensors.len() {
            c.entry_bytes(i)?;
        }
        Ok(c)
    }
}

pub fn write_container(path: &Path, magic: &[u8; 8], container: &Container) -> Result<()> {
    atomic_write(path, &container.to_bytes(magic)?)
}

pub fn read_container(path: &Path, magic: &[u8; 8]) -> Result<Container> {
    Container::from_bytes(&read_file(path)?, magic)
}

pub fn entry_shape_for(layout: &Layout, slot_idx: usize) -> Vec<usize> {
    let s = &layout.slots()[slot_idx];
    if s.kind.is_norm() {
        vec![s.rows]
    } else {
        vec![s.rows, s.cols]
    }
}

pub(crate) fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

/// Checkpoint container for a store, with optional metadata.
pub fn checkpoint_container(params: &ParamStore, metadata: BTreeMap<String, serde_json::Value>) -> Result<Container> {
    let layout = params.layout();
    let entries = layout
        .slots()
        .iter()
        .enumerate()
        .map(|(i, s)| ManifestEntry { name: s.name(), dtype: "f32".into(), shape: entry_shape_for(layout, i), byte_offset: 0 })
        .collect();
    let payloads = params.tensors().iter().map(|t| f32_bytes(t.data().iter().copied())).collect();
    Container::new(
        ContainerHeader {
            format_version: FORMAT_VERSION,
            config: Some(params.config().clone()),
            tensors: entries,
            init_fingerprint: Some(params.init_fingerprint().to_string()),
            metadata,
        },
        payloads,
    )
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    save_checkpoint_with_metadata(params, path, BTreeMap::new())
}

pub fn save_checkpoint_with_metadata(
    params: &ParamStore,
    path: &Path,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    write_container(path, CHECKPOINT_MAGIC, &checkpoint_container(params, metadata)?)
}

/// Decode a checkpoint container into a store, validating the manifest against the config.
pub fn store_from_container(c: &Container) -> Result<ParamStore> {
    let config = c
        .header
        .config
        .clone()
        .ok_or_else(|| Error::format("container", "checkpoint header has no model config"))?;
    config.validate()?;
    let layout = Layout::new(&config);
    if c.header.tensors.len() != layout.slots().len() {
        return Err(Error::format(
            "manifest",
            format!("expected {} tensors, manifest lists {}", layout.slots().len(), c.header.tensors.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(layout.slots().len());
    for (i, (slot, entry)) in layout.slots().iter().zip(&c.header.tensors).enumerate() {
        if entry.name != slot.name() {
            return Err(Error::format(&entry.name, format!("expected tensor {}", slot.name())));
        }
        if entry.shape != entry_shape_for(&layout, i) {
            return Err(Error::format(&entry.name, format!("manifest shape {:?} does not match config", entry.shape)));
        }
        let data = c.f32_tensor(i)?.into_iter().map(f64::from).collect();
        tensors.push(Tensor2D::from_vec(slot.rows, slot.cols, data)?);
    }
    ParamStore::from_tensors(config, tensors, c.header.init_fingerprint.clone().unwrap_or_default())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    store_from_container(&read_container(path, CHECKPOINT_MAGIC)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { n_layers: 2, d_model: 8, n_heads: 2, d_ff: 16, vocab_size: 24, max_seq_len: 16, ..Default::default() }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.rgn");
        let store = ParamStore::build(&cfg(), 4).unwrap();
        save_checkpoint(&store, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.fingerprint(), store.fingerprint());
    }

    #[test]
    fn manifest_entry_count_matches_enumeration() {
        let reference = ModelConfig { vocab_size: 512, ..ModelConfig::default() };
        let store = ParamStore::build(&reference, 0).unwrap();
        let c = checkpoint_container(&store, BTreeMap::new()).unwrap();
        let expected = Layout::new(&reference).slots().len();
        assert_eq!(c.header.tensors.len(), expected);
        assert_eq!(expected, 4 * 9 + 3);
        let mut offset = 0u64;
        for e in &c.header.tensors {
            assert_eq!(e.byte_offset, offset);
            offset += e.numel() as u64 * 4;
        }
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let store = ParamStore::build(&cfg(), 4).unwrap();
        let mut bytes = checkpoint_container(&store, BTreeMap::new()).unwrap().to_bytes(CHECKPOINT_MAGIC).unwrap();
        bytes[0] = b'X';
        assert!(matches!(Container::from_bytes(&bytes, CHECKPOINT_MAGIC), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_names_tensor() {
        let store = ParamStore::build(&cfg(), 4).unwrap();
        let bytes = checkpoint_container(&store, BTreeMap::new()).unwrap().to_bytes(CHECKPOINT_MAGIC).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        match Container::from_bytes(cut, CHECKPOINT_MAGIC) {
            Err(Error::Format { tensor, .. }) => assert_eq!(tensor, "global.lm_head"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let store = ParamStore::build(&cfg(), 4).unwrap();
        let mut c = checkpoint_container(&store, BTreeMap::new()).unwrap();
        c.header.tensors[1].shape = vec![16, 4];
        match store_from_container(&c) {
            Err(Error::Format { tensor, .. }) => assert_eq!(tensor, "layer0.attn.k"),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
