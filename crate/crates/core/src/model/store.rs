use sha2::{Digest, Sha256};

use super::address::{Kind, LayerRef, Layout, ParamAddress, Slot};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numkernel::{Rng, Tensor2D};

const INIT_STD: f64 = 0.02;

/// Complete named parameter set of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    config: ModelConfig,
    layout: Layout,
    tensors: Vec<Tensor2D>,
    init_fingerprint: String,
}

impl ParamStore {
    /// Fresh model: projections and embeddings ~ N(0, 0.02²) rounded to `f32`,
    /// RMSNorm weights exactly 1.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let root = Rng::new(seed).split("init");
        let tensors = layout
            .slots()
            .iter()
            .map(|slot| {
                if slot.kind.is_norm() {
                    return Tensor2D::from_vec(slot.rows, slot.cols, vec![1.0; slot.len()]);
                }
                let mut rng = root.split(&slot.name());
                let data = (0..slot.len()).map(|_| (INIT_STD * rng.normal()) as f32 as f64).collect();
                Tensor2D::from_vec(slot.rows, slot.cols, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut store = Self { config: config.clone(), layout, tensors, init_fingerprint: String::new() };
        store.init_fingerprint = store.fingerprint();
        Ok(store)
    }

    /// Assemble from tensors in canonical slot order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor2D>, init_fingerprint: String) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if tensors.len() != layout.slots().len() {
            return Err(Error::format(
                "manifest",
                format!("expected {} tensors, got {}", layout.slots().len(), tensors.len()),
            ));
        }
        for (slot, t) in layout.slots().iter().zip(&tensors) {
            if (t.rows(), t.cols()) != (slot.rows, slot.cols) {
                return Err(Error::format(
                    slot.name(),
                    format!("shape {}x{} does not match {}x{}", t.rows(), t.cols(), slot.rows, slot.cols),
                ));
            }
        }
        Ok(Self { config, layout, tensors, init_fingerprint })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn init_fingerprint(&self) -> &str {
        &self.init_fingerprint
    }

    pub fn total_params(&self) -> usize {
        self.layout.total()
    }

    pub fn tensors(&self) -> &[Tensor2D] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor2D] {
        &mut self.tensors
    }

    pub fn slots(&self) -> &[Slot] {
        self.layout.slots()
    }

    pub fn tensor(&self, layer: LayerRef, kind: Kind) -> Result<&Tensor2D> {
        let i = self.layout.slot_index(layer, kind).ok_or_else(|| Error::Input(format!("no tensor {layer}.{kind}")))?;
        Ok(&self.tensors[i])
    }

    pub fn tensor_mut(&mut self, layer: LayerRef, kind: Kind) -> Result<&mut Tensor2D> {
        let i = self.layout.slot_index(layer, kind).ok_or_else(|| Error::Input(format!("no tensor {layer}.{kind}")))?;
        Ok(&mut self.tensors[i])
    }

    /// Block tensor by slot position, for the hot forward path.
    #[inline]
    pub(crate) fn block(&self, layer: usize, kind: Kind) -> &Tensor2D {
        &self.tensors[self.layout.slot_index(LayerRef::Block(layer), kind).expect("block tensor")]
    }

    #[inline]
    pub(crate) fn global(&self, kind: Kind) -> &Tensor2D {
        &self.tensors[self.layout.slot_index(LayerRef::Global, kind).expect("global tensor")]
    }

    pub fn get(&self, addr: &ParamAddress) -> Result<f64> {
        let flat = self.layout.flat_index(addr)?;
        Ok(self.get_flat(flat))
    }

    pub fn set(&mut self, addr: &ParamAddress, v: f64) -> Result<()> {
        let flat = self.layout.flat_index(addr)?;
        self.set_flat(flat, v);
        Ok(())
    }

    pub fn get_flat(&self, flat: usize) -> f64 {
        let s = self.layout.slot_of_flat(flat);
        self.tensors[s].data()[flat - self.layout.slots()[s].offset]
    }

    pub fn set_flat(&mut self, flat: usize, v: f64) {
        let s = self.layout.slot_of_flat(flat);
        let off = self.layout.slots()[s].offset;
        self.tensors[s].data_mut()[flat - off] = v;
    }

    /// All scalars in canonical order.
    pub fn flat_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data().iter().copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.flat_values().collect()
    }

    /// SHA-256 over shapes and the bit patterns of every scalar, canonical order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (slot, t) in self.layout.slots().iter().zip(&self.tensors) {
            h.update(slot.name().as_bytes());
            h.update((slot.rows as u64).to_le_bytes());
            h.update((slot.cols as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Fails unless `other` shares config and layout.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.config != other.config || self.layout != other.layout {
            return Err(Error::format("manifest", "checkpoints have different configs or manifests"));
        }
        Ok(())
    }

    /// Indices (flat) at which two compatible stores differ bitwise.
    pub fn diff_flat(&self, other: &ParamStore) -> Result<Vec<usize>> {
        self.check_compatible(other)?;
        Ok(self
            .flat_values()
            .zip(other.flat_values())
            .enumerate()
            .filter(|(_, (a, b))| a.to_bits() != b.to_bits())
            .map(|(i, _)| i)
            .collect())
    }

    /// Round every scalar to the persisted `f32` precision.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}
