//! Next-token pretraining and per-language fine-tuning with Adam, global-norm
//! clipping, and freeze masks.
//!
//! Update order per step: gradient → clip by the norm of the *full* gradient →
//! drop frozen entries → Adam. Frozen scalars and their moments are never written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langgen::{Corpus, Document};
use crate::mask::BitMask;
use crate::model::{loss_and_grad, save_checkpoint, save_checkpoint_with_metadata, ParamStore};
use crate::numkernel::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Optimizer steps. Fine-tuning uses `epochs` instead when it is set.
    pub steps: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Save a checkpoint every this many steps (0 = only step 0 and final).
    #[serde(default)]
    pub checkpoint_interval: usize,
    pub seed: u64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_clip() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        Self {
            batch_size: 16,
            steps: 3000,
            epochs: None,
            lr: 3e-4,
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            grad_clip: default_clip(),
            checkpoint_interval: 1000,
            seed: 0,
        }
    }

    pub fn finetune_default() -> Self {
        Self { lr: 1e-4, epochs: Some(1), steps: 0, checkpoint_interval: 0, ..Self::pretrain_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Adam first/second moments in canonical order, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptState {
    pub fn new(params: &ParamStore) -> Self {
        let n = params.total_params();
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Global L2 norm of the unmasked gradient.
    pub grad_norm: f64,
    /// Multiplier applied to every gradient entry by clipping.
    pub clip_factor: f64,
}

/// One optimizer step on `batch`; returns the mean NLL over its predicted positions.
pub fn train_step(
    params: &mut ParamStore,
    opt: &mut OptState,
    batch: &[Vec<u32>],
    freeze: Option<&BitMask>,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    let total = params.total_params();
    if opt.m.len() != total || opt.v.len() != total {
        return Err(Error::Dimension(format!("optimizer state of {} for {total} parameters", opt.m.len())));
    }
    if let Some(mask) = freeze {
        if mask.len() != total {
            return Err(Error::Dimension(format!("freeze mask of {} bits for {total} parameters", mask.len())));
        }
    }
    let (loss, grads) = loss_and_grad(params, batch)?;
    let grad_norm = grads.global_norm();
    let clip_factor = if grad_norm > cfg.grad_clip { cfg.grad_clip / grad_norm } else { 1.0 };

    opt.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(opt.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(opt.t as i32);
    let offsets: Vec<usize> = params.slots().iter().map(|s| s.offset).collect();
    for ((tensor, g), offset) in params.tensors_mut().iter_mut().zip(&grads.tensors).zip(offsets) {
        for (j, (p, &gj)) in tensor.data_mut().iter_mut().zip(g.data()).enumerate() {
            let i = offset + j;
            if freeze.is_some_and(|m| m.get(i)) {
                continue;
            }
            let g = gj * clip_factor;
            let m = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * g * g;
            opt.m[i] = m;
            opt.v[i] = v;
            *p -= cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(StepStats { loss, grad_norm, clip_factor })
}

fn truncate(doc: &Document, max_len: usize) -> Vec<u32> {
    doc.tokens[..doc.tokens.len().min(max_len)].to_vec()
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    /// Step-0 checkpoint first, then interval checkpoints, then the final one.
    pub checkpoints: Vec<PathBuf>,
    pub losses: Vec<f64>,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step{step:06}.rgn")
}

/// Pretrain on a multilingual corpus. Slot `b` of step `s` draws a document of
/// language `(s·B + b) mod K`, so languages are mixed uniformly in every batch.
pub fn pretrain(params: &mut ParamStore, corpus: &Corpus, cfg: &TrainConfig, out_dir: &Path) -> Result<PretrainOutput> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("empty corpus".into()));
    }
    let langs = corpus.languages();
    let by_lang: Vec<Vec<&Document>> =
        langs.iter().map(|&l| corpus.documents.iter().filter(|d| d.lang == l).collect()).collect();
    let max_len = params.config().max_seq_len;
    let stream = Rng::new(cfg.seed).split("pretrain/batches");

    let mut checkpoints = Vec::new();
    let step0 = out_dir.join(checkpoint_name(0));
    save_checkpoint(params, &step0)?;
    checkpoints.push(step0);

    let mut opt = OptState::new(params);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = stream.split_index(step as u64);
        let batch: Vec<Vec<u32>> = (0..cfg.batch_size)
            .map(|b| {
                let docs = &by_lang[(step * cfg.batch_size + b) % langs.len()];
                truncate(docs[rng.below(docs.len() as u64) as usize], max_len)
            })
            .collect();
        let stats = train_step(params, &mut opt, &batch, None, cfg)?;
        losses.push(stats.loss);
        if step % 100 == 0 || step + 1 == cfg.steps {
            log::info!("pretrain step={step} loss={:.4} grad_norm={:.3}", stats.loss, stats.grad_norm);
        }
        let done = step + 1;
        if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done != cfg.steps {
            let p = out_dir.join(checkpoint_name(done));
            save_checkpoint(params, &p)?;
            checkpoints.push(p);
        }
    }
    if cfg.steps > 0 {
        let p = out_dir.join(checkpoint_name(cfg.steps));
        save_checkpoint(params, &p)?;
        checkpoints.push(p);
    }
    Ok(PretrainOutput { checkpoints, losses })
}

/// Provenance written into a fine-tuned checkpoint header.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRecord {
    pub base_id: String,
    pub language: u32,
    pub steps: usize,
    pub lr: f64,
}

impl FinetuneRecord {
    pub fn metadata(&self) -> BTreeMap<String, serde_json::Value> {
        let mut m = BTreeMap::new();
        m.insert("base_id".into(), serde_json::json!(self.base_id));
        m.insert("language".into(), serde_json::json!(self.language));
        m.insert("steps".into(), serde_json::json!(self.steps));
        m.insert("lr".into(), serde_json::json!(self.lr));
        m
    }
}

/// Batches for epoch-based training: each epoch is a seeded shuffle of the documents.
fn epoch_batches(docs: &[&Document], cfg: &TrainConfig, max_len: usize, steps: usize) -> Vec<Vec<Vec<u32>>> {
    let stream = Rng::new(cfg.seed).split("finetune/epochs");
    let mut out = Vec::with_capacity(steps);
    let mut epoch = 0u64;
    while out.len() < steps {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut stream.split_index(epoch));
        for chunk in order.chunks(cfg.batch_size) {
            if out.len() == steps {
                break;
            }
            out.push(chunk.iter().map(|&i| truncate(docs[i], max_len)).collect());
        }
        epoch += 1;
    }
    out
}

/// Continue training on one language's documents with a fresh optimizer.
///
/// Runs `cfg.epochs` passes when set (one step per batch), else `cfg.steps`
/// steps over repeated shuffles.
pub fn finetune(params: &mut ParamStore, corpus: &Corpus, cfg: &TrainConfig, freeze: Option<&BitMask>) -> Result<usize> {
    cfg.validate()?;
    let langs = corpus.languages();
    if langs.len() > 1 {
        return Err(Error::Input(format!("fine-tuning corpus mixes {} languages", langs.len())));
    }
    let docs: Vec<&Document> = corpus.documents.iter().collect();
    let steps = match cfg.epochs {
        Some(e) => e * docs.len().div_ceil(cfg.batch_size),
        None => cfg.steps,
    };
    if steps == 0 {
        return Ok(0);
    }
    if docs.is_empty() {
        return Err(Error::Input("empty fine-tuning corpus".into()));
    }
    let mut opt = OptState::new(params);
    for (i, batch) in epoch_batches(&docs, cfg, params.config().max_seq_len, steps).iter().enumerate() {
        let stats = train_step(params, &mut opt, batch, freeze, cfg)?;
        if i % 50 == 0 {
            log::debug!("finetune step={i} loss={:.4}", stats.loss);
        }
    }
    Ok(steps)
}

/// Fine-tune and write the result with its provenance record.
pub fn finetune_to_checkpoint(
    params: &mut ParamStore,
    corpus: &Corpus,
    cfg: &TrainConfig,
    freeze: Option<&BitMask>,
    base_id: &str,
    out: &Path,
) -> Result<FinetuneRecord> {
    let steps = finetune(params, corpus, cfg, freeze)?;
    let record = FinetuneRecord {
        base_id: base_id.to_string(),
        language: corpus.languages().first().copied().unwrap_or(0),
        steps,
        lr: cfg.lr,
    };
    save_checkpoint_with_metadata(params, out, record.metadata())?;
    Ok(record)
}
