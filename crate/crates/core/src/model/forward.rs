//! Causal decoder forward pass and its hand-derived reverse pass.
//!
//! Block structure (pre-norm):
//! `x += attn(rmsnorm(x, norm.input)) · Wo`, then
//! `x += (silu(h·Wgate) ⊙ h·Wup) · Wdown` with `h = rmsnorm(x, norm.post)`,
//! then `logits = rmsnorm(x, norm.final) · lm_head`.

use rayon::prelude::*;

use super::address::Kind;
use super::config::ModelConfig;
use super::store::ParamStore;
use crate::error::{Error, Result};
use crate::numkernel::{
    logsumexp, matmul_a_bt, matmul_acc, matmul_at_b_acc, rmsnorm_backward, rmsnorm_into, silu, silu_grad,
    softmax_in_place, Tensor2D,
};

/// Rotary angle tables, `T × head_dim/2`.
struct Rope {
    cos: Vec<f64>,
    sin: Vec<f64>,
    half: usize,
}

impl Rope {
    fn new(cfg: &ModelConfig, len: usize) -> Self {
        let hd = cfg.head_dim();
        let half = hd / 2;
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for t in 0..len {
            for p in 0..half {
                let freq = cfg.rope_theta.powf(-((2 * p) as f64) / hd as f64);
                let angle = t as f64 * freq;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Self { cos, sin, half }
    }

    /// Rotate interleaved pairs `(2p, 2p+1)` of every head in place.
    fn apply(&self, x: &mut Tensor2D, n_heads: usize) {
        let hd = 2 * self.half;
        for t in 0..x.rows() {
            let row = x.row_mut(t);
            for h in 0..n_heads {
                for p in 0..self.half {
                    let (c, s) = (self.cos[t * self.half + p], self.sin[t * self.half + p]);
                    let i = h * hd + 2 * p;
                    let (a, b) = (row[i], row[i + 1]);
                    row[i] = a * c - b * s;
                    row[i + 1] = a * s + b * c;
                }
            }
        }
    }

    /// Transpose rotation (gradient of [`Rope::apply`]).
    fn apply_transpose(&self, dx: &mut Tensor2D, n_heads: usize) {
        let hd = 2 * self.half;
        for t in 0..dx.rows() {
            let row = dx.row_mut(t);
            for h in 0..n_heads {
                for p in 0..self.half {
                    let (c, s) = (self.cos[t * self.half + p], self.sin[t * self.half + p]);
                    let i = h * hd + 2 * p;
                    let (a, b) = (row[i], row[i + 1]);
                    row[i] = a * c + b * s;
                    row[i + 1] = -a * s + b * c;
                }
            }
        }
    }
}

struct BlockCache {
    x_in: Tensor2D,
    inv1: Vec<f64>,
    h1: Tensor2D,
    q: Tensor2D,
    k: Tensor2D,
    v: Tensor2D,
    /// Per head, `T × T`, zero above the diagonal.
    probs: Vec<Tensor2D>,
    att: Tensor2D,
    x_mid: Tensor2D,
    inv2: Vec<f64>,
    h2: Tensor2D,
    gate: Tensor2D,
    up: Tensor2D,
    act: Tensor2D,
}

struct Cache {
    blocks: Vec<BlockCache>,
    x_final: Tensor2D,
    inv_f: Vec<f64>,
    h_final: Tensor2D,
}

/// Logits for every position, plus activations when a backward pass will follow.
pub struct ForwardPass {
    pub logits: Tensor2D,
    cache: Option<Cache>,
}

fn rmsnorm_rows(x: &Tensor2D, w: &Tensor2D, eps: f64) -> (Tensor2D, Vec<f64>) {
    let mut out = Tensor2D::zeros(x.rows(), x.cols());
    let mut inv = Vec::with_capacity(x.rows());
    for t in 0..x.rows() {
        inv.push(rmsnorm_into(x.row(t), w.data(), eps, out.row_mut(t)));
    }
    (out, inv)
}

fn project(x: &Tensor2D, w: &Tensor2D) -> Tensor2D {
    let mut out = Tensor2D::zeros(x.rows(), w.cols());
    matmul_acc(x, w, &mut out);
    out
}

/// Causal multi-head attention over rotated `q`, `k`. Returns concatenated head outputs.
fn attention(q: &Tensor2D, k: &Tensor2D, v: &Tensor2D, n_heads: usize, probs: &mut Vec<Tensor2D>) -> Tensor2D {
    let t_len = q.rows();
    let d = q.cols();
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Tensor2D::zeros(t_len, d);
    for h in 0..n_heads {
        let c0 = h * hd;
        let mut p = Tensor2D::zeros(t_len, t_len);
        for i in 0..t_len {
            let qi = &q.row(i)[c0..c0 + hd];
            let prow = &mut p.row_mut(i)[..=i];
            for (j, s) in prow.iter_mut().enumerate() {
                let kj = &k.row(j)[c0..c0 + hd];
                let mut dot = 0.0;
                for c in 0..hd {
                    dot += qi[c] * kj[c];
                }
                *s = dot * scale;
            }
            softmax_in_place(prow);
            let orow = &mut out.row_mut(i)[c0..c0 + hd];
            for j in 0..=i {
                let pij = p.get(i, j);
                let vj = &v.row(j)[c0..c0 + hd];
                for c in 0..hd {
                    orow[c] += pij * vj[c];
                }
            }
        }
        probs.push(p);
    }
    out
}

fn check_finite(t: &Tensor2D, location: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(location, "non-finite activation"))
    }
}

fn validate_tokens(cfg: &ModelConfig, tokens: &[u32], min_len: usize) -> Result<()> {
    if tokens.len() < min_len {
        return Err(Error::Range(format!("sequence of length {} is shorter than {min_len}", tokens.len())));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::Range(format!(
            "sequence of length {} exceeds max_seq_len {}",
            tokens.len(),
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Range(format!("token id {bad} outside vocab of {}", cfg.vocab_size)));
    }
    Ok(())
}

/// Run the decoder on one sequence.
pub fn forward(params: &ParamStore, tokens: &[u32], keep_cache: bool) -> Result<ForwardPass> {
    let cfg = params.config();
    validate_tokens(cfg, tokens, 1)?;
    let t_len = tokens.len();
    let d = cfg.d_model;
    let rope = Rope::new(cfg, t_len);

    let embed = params.global(Kind::Embed);
    let mut x = Tensor2D::zeros(t_len, d);
    for (t, &tok) in tokens.iter().enumerate() {
        x.row_mut(t).copy_from_slice(embed.row(tok as usize));
    }

    let mut blocks = Vec::with_capacity(if keep_cache { cfg.n_layers } else { 0 });
    for l in 0..cfg.n_layers {
        let (h1, inv1) = rmsnorm_rows(&x, params.block(l, Kind::NormInput), cfg.norm_eps);
        let mut q = project(&h1, params.block(l, Kind::AttnQ));
        let mut k = project(&h1, params.block(l, Kind::AttnK));
        let v = project(&h1, params.block(l, Kind::AttnV));
        rope.apply(&mut q, cfg.n_heads);
        rope.apply(&mut k, cfg.n_heads);
        let mut probs = Vec::with_capacity(cfg.n_heads);
        let att = attention(&q, &k, &v, cfg.n_heads, &mut probs);

        let mut x_mid = x.clone();
        matmul_acc(&att, params.block(l, Kind::AttnO), &mut x_mid);

        let (h2, inv2) = rmsnorm_rows(&x_mid, params.block(l, Kind::NormPost), cfg.norm_eps);
        let gate = project(&h2, params.block(l, Kind::FfnGate));
        let up = project(&h2, params.block(l, Kind::FfnUp));
        let mut act = Tensor2D::zeros(t_len, cfg.d_ff);
        for ((a, &g), &u) in act.data_mut().iter_mut().zip(gate.data()).zip(up.data()) {
            *a = silu(g) * u;
        }
        let mut x_out = x_mid.clone();
        matmul_acc(&act, params.block(l, Kind::FfnDown), &mut x_out);
        check_finite(&x_out, &format!("layer{l}"))?;

        let x_in = std::mem::replace(&mut x, x_out);
        if keep_cache {
            blocks.push(BlockCache { x_in, inv1, h1, q, k, v, probs, att, x_mid, inv2, h2, gate, up, act });
        }
    }

    let (h_final, inv_f) = rmsnorm_rows(&x, params.global(Kind::NormFinal), cfg.norm_eps);
    let logits = if cfg.tied_lm_head { matmul_a_bt(&h_final, embed) } else { project(&h_final, params.global(Kind::LmHead)) };
    check_finite(&logits, "lm_head")?;

    let cache = keep_cache.then_some(Cache { blocks, x_final: x, inv_f, h_final });
    Ok(ForwardPass { logits, cache })
}

/// Per-token negative log-likelihood of `tokens[1..]` given their prefixes.
pub fn forward_nll(params: &ParamStore, tokens: &[u32]) -> Result<Vec<f64>> {
    validate_tokens(params.config(), tokens, 2)?;
    let pass = forward(params, tokens, false)?;
    Ok((1..tokens.len())
        .map(|t| {
            let row = pass.logits.row(t - 1);
            logsumexp(row) - row[tokens[t] as usize]
        })
        .collect())
}

/// Gradient buffers in the store's canonical slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor2D>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self { tensors: params.tensors().iter().map(|t| Tensor2D::zeros(t.rows(), t.cols())).collect() }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b).expect("matching gradient shapes");
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Global L2 norm, summed in canonical order.
    pub fn global_norm(&self) -> f64 {
        let mut ss = 0.0;
        for t in &self.tensors {
            for v in t.data() {
                ss += v * v;
            }
        }
        ss.sqrt()
    }

    pub fn get_flat(&self, params: &ParamStore, flat: usize) -> f64 {
        let layout = params.layout();
        let s = layout.slot_of_flat(flat);
        self.tensors[s].data()[flat - layout.slots()[s].offset]
    }
}

/// Reverse pass for one sequence. `loss = scale · Σ_t nll_t`; returns `Σ_t nll_t`.
fn backward_sequence(params: &ParamStore, tokens: &[u32], scale: f64, grads: &mut Gradients) -> Result<f64> {
    let cfg = params.config();
    let layout = params.layout();
    let slot = |layer: Option<usize>, kind: Kind| {
        let l = layer.map_or(super::address::LayerRef::Global, super::address::LayerRef::Block);
        layout.slot_index(l, kind).expect("slot")
    };
    let pass = forward(params, tokens, true)?;
    let cache = pass.cache.expect("cache requested");
    let t_len = tokens.len();
    let d = cfg.d_model;
    let vocab = cfg.vocab_size;

    // Softmax cross-entropy gradient; the last position predicts nothing.
    let mut nll_sum = 0.0;
    let mut dlogits = Tensor2D::zeros(t_len, vocab);
    for t in 0..t_len - 1 {
        let row = pass.logits.row(t);
        let target = tokens[t + 1] as usize;
        let lse = logsumexp(row);
        nll_sum += lse - row[target];
        let drow = dlogits.row_mut(t);
        for (dv, &z) in drow.iter_mut().zip(row) {
            *dv = (z - lse).exp() * scale;
        }
        drow[target] -= scale;
    }

    let embed_slot = slot(None, Kind::Embed);
    let dh_final = if cfg.tied_lm_head {
        matmul_at_b_acc(&dlogits, &cache.h_final, &mut grads.tensors[embed_slot]);
        let mut dh = Tensor2D::zeros(t_len, d);
        matmul_acc(&dlogits, params.global(Kind::Embed), &mut dh);
        dh
    } else {
        matmul_at_b_acc(&cache.h_final, &dlogits, &mut grads.tensors[slot(None, Kind::LmHead)]);
        matmul_a_bt(&dlogits, params.global(Kind::LmHead))
    };

    let mut dx = Tensor2D::zeros(t_len, d);
    {
        let w = params.global(Kind::NormFinal).data();
        let dw = grads.tensors[slot(None, Kind::NormFinal)].data_mut();
        for t in 0..t_len {
            rmsnorm_backward(cache.x_final.row(t), w, cache.inv_f[t], dh_final.row(t), dx.row_mut(t), dw);
        }
    }

    let rope = Rope::new(cfg, t_len);
    let hd = cfg.head_dim();
    let att_scale = 1.0 / (hd as f64).sqrt();
    for l in (0..cfg.n_layers).rev() {
        let bc = &cache.blocks[l];
        let s = |k: Kind| slot(Some(l), k);

        // FFN: x_out = x_mid + act · Wdown
        matmul_at_b_acc(&bc.act, &dx, &mut grads.tensors[s(Kind::FfnDown)]);
        let dact = matmul_a_bt(&dx, params.block(l, Kind::FfnDown));
        let mut dgate = Tensor2D::zeros(t_len, cfg.d_ff);
        let mut dup = Tensor2D::zeros(t_len, cfg.d_ff);
        for i in 0..dact.len() {
            let (g, u, da) = (bc.gate.data()[i], bc.up.data()[i], dact.data()[i]);
            dgate.data_mut()[i] = da * u * silu_grad(g);
            dup.data_mut()[i] = da * silu(g);
        }
        matmul_at_b_acc(&bc.h2, &dgate, &mut grads.tensors[s(Kind::FfnGate)]);
        matmul_at_b_acc(&bc.h2, &dup, &mut grads.tensors[s(Kind::FfnUp)]);
        let mut dh2 = matmul_a_bt(&dgate, params.block(l, Kind::FfnGate));
        dh2.add_assign(&matmul_a_bt(&dup, params.block(l, Kind::FfnUp)))?;

        let mut dx_mid = dx.clone();
        {
            let w = params.block(l, Kind::NormPost).data();
            let dw = grads.tensors[s(Kind::NormPost)].data_mut();
            for t in 0..t_len {
                rmsnorm_backward(bc.x_mid.row(t), w, bc.inv2[t], dh2.row(t), dx_mid.row_mut(t), dw);
            }
        }

        // Attention: x_mid = x_in + att · Wo
        matmul_at_b_acc(&bc.att, &dx_mid, &mut grads.tensors[s(Kind::AttnO)]);
        let datt = matmul_a_bt(&dx_mid, params.block(l, Kind::AttnO));
        let mut dq = Tensor2D::zeros(t_len, d);
        let mut dk = Tensor2D::zeros(t_len, d);
        let mut dv = Tensor2D::zeros(t_len, d);
        let mut dp = vec![0.0; t_len];
        for h in 0..cfg.n_heads {
            let c0 = h * hd;
            let p = &bc.probs[h];
            for i in 0..t_len {
                let dai = &datt.row(i)[c0..c0 + hd];
                let mut weighted = 0.0;
                for j in 0..=i {
                    let vj = &bc.v.row(j)[c0..c0 + hd];
                    let mut acc = 0.0;
                    for c in 0..hd {
                        acc += dai[c] * vj[c];
                    }
                    dp[j] = acc;
                    weighted += p.get(i, j) * acc;
                }
                for j in 0..=i {
                    let pij = p.get(i, j);
                    {
                        let dvj = &mut dv.row_mut(j)[c0..c0 + hd];
                        for c in 0..hd {
                            dvj[c] += pij * dai[c];
                        }
                    }
                    let ds = pij * (dp[j] - weighted) * att_scale;
                    if ds == 0.0 {
                        continue;
                    }
                    {
                        let kj = &bc.k.row(j)[c0..c0 + hd];
                        let dqi = &mut dq.row_mut(i)[c0..c0 + hd];
                        for c in 0..hd {
                            dqi[c] += ds * kj[c];
                        }
                    }
                    let qi = &bc.q.row(i)[c0..c0 + hd];
                    let dkj = &mut dk.row_mut(j)[c0..c0 + hd];
                    for c in 0..hd {
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
        rope.apply_transpose(&mut dq, cfg.n_heads);
        rope.apply_transpose(&mut dk, cfg.n_heads);
        matmul_at_b_acc(&bc.h1, &dq, &mut grads.tensors[s(Kind::AttnQ)]);
        matmul_at_b_acc(&bc.h1, &dk, &mut grads.tensors[s(Kind::AttnK)]);
        matmul_at_b_acc(&bc.h1, &dv, &mut grads.tensors[s(Kind::AttnV)]);
        let mut dh1 = matmul_a_bt(&dq, params.block(l, Kind::AttnQ));
        dh1.add_assign(&matmul_a_bt(&dk, params.block(l, Kind::AttnK)))?;
        dh1.add_assign(&matmul_a_bt(&dv, params.block(l, Kind::AttnV)))?;

        let mut dx_in = dx_mid;
        {
            let w = params.block(l, Kind::NormInput).data();
            let dw = grads.tensors[s(Kind::NormInput)].data_mut();
            for t in 0..t_len {
                rmsnorm_backward(bc.x_in.row(t), w, bc.inv1[t], dh1.row(t), dx_in.row_mut(t), dw);
            }
        }
        dx = dx_in;
    }

    let dembed = &mut grads.tensors[embed_slot];
    for (t, &tok) in tokens.iter().enumerate() {
        let drow = dembed.row_mut(tok as usize);
        for (a, &b) in drow.iter_mut().zip(dx.row(t)) {
            *a += b;
        }
    }
    Ok(nll_sum)
}

/// Mean next-token NLL over every predicted position in `batch`, with its gradient.
///
/// Sequences are processed independently (possibly in parallel) and their
/// gradients summed in batch order, so the result is bit-reproducible.
pub fn loss_and_grad(params: &ParamStore, batch: &[Vec<u32>]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    for seq in batch {
        validate_tokens(params.config(), seq, 2)?;
    }
    let positions: usize = batch.iter().map(|s| s.len() - 1).sum();
    let scale = 1.0 / positions as f64;
    let per_seq: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|seq| {
            let mut g = Gradients::zeros_like(params);
            let nll = backward_sequence(params, seq, scale, &mut g)?;
            Ok((nll, g))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_seq.into_iter();
    let (mut total, mut grads) = iter.next().expect("non-empty batch");
    for (nll, g) in iter {
        total += nll;
        grads.add_assign(&g);
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::numeric("loss", format!("non-finite loss {loss}")));
    }
    Ok((loss, grads))
}

/// Mean NLL of `batch` without gradients.
pub fn batch_loss(params: &ParamStore, batch: &[Vec<u32>]) -> Result<f64> {
    let sums: Vec<(f64, usize)> = batch
        .par_iter()
        .map(|seq| forward_nll(params, seq).map(|n| (n.iter().sum::<f64>(), n.len())))
        .collect::<Result<_>>()?;
    let (total, count) = sums.iter().fold((0.0, 0usize), |(s, c), &(a, b)| (s + a, c + b));
    Ok(total / count as f64)
}
