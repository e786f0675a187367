//! Structural identities of the decoder that any correct implementation obeys.

use regionprobe::model::{forward_nll, Kind, LayerRef, ModelConfig, ParamStore};
use regionprobe::numkernel::Rng;

fn small() -> ModelConfig {
    ModelConfig { n_layers: 2, d_model: 16, n_heads: 4, d_ff: 32, vocab_size: 24, max_seq_len: 16, ..ModelConfig::default() }
}

fn tokens(seed: u64, n: usize, vocab: usize) -> Vec<u32> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.below(vocab as u64) as u32).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn prefix_losses_match_longer_sequence() {
    // Causal masking: position t never sees t+1, so a prefix reproduces the
    // leading per-token losses of the full sequence.
    let p = ParamStore::build(&small(), 3).unwrap();
    let seq = tokens(9, 14, 24);
    let full = forward_nll(&p, &seq).unwrap();
    for cut in [2, 5, 9, 13] {
        let part = forward_nll(&p, &seq[..cut]).unwrap();
        assert!(max_abs_diff(&part, &full[..part.len()]) < 1e-12, "prefix {cut}");
    }
}

#[test]
fn zeroing_head_values_equals_zeroing_head_output_rows() {
    let cfg = small();
    let hd = cfg.head_dim();
    let base = ParamStore::build(&cfg, 5).unwrap();
    let seq = tokens(2, 12, cfg.vocab_size);
    for layer in 0..cfg.n_layers {
        for head in 0..cfg.n_heads {
            let cols = head * hd..(head + 1) * hd;
            let mut via_v = base.clone();
            let v = via_v.tensor_mut(LayerRef::Block(layer), Kind::AttnV).unwrap();
            for r in 0..v.rows() {
                for c in cols.clone() {
                    v.set(r, c, 0.0);
                }
            }
            let mut via_o = base.clone();
            let o = via_o.tensor_mut(LayerRef::Block(layer), Kind::AttnO).unwrap();
            for r in cols.clone() {
                o.row_mut(r).fill(0.0);
            }
            let a = forward_nll(&via_v, &seq).unwrap();
            let b = forward_nll(&via_o, &seq).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-12, "layer {layer} head {head}");
            assert!(max_abs_diff(&a, &forward_nll(&base, &seq).unwrap()) > 0.0);
        }
    }
}

#[test]
fn relabeling_the_vocabulary_is_invisible() {
    // Permute embedding rows and lm_head columns together, relabel the tokens,
    // and every loss must be unchanged.
    let cfg = small();
    let v = cfg.vocab_size;
    let base = ParamStore::build(&cfg, 7).unwrap();
    let mut rng = Rng::new(11);
    let mut perm: Vec<usize> = (0..v).collect();
    for i in (1..v).rev() {
        perm.swap(i, rng.below(i as u64 + 1) as usize);
    }
    let mut q = base.clone();
    let embed = base.tensor(LayerRef::Global, Kind::Embed).unwrap().clone();
    let head = base.tensor(LayerRef::Global, Kind::LmHead).unwrap().clone();
    let e = q.tensor_mut(LayerRef::Global, Kind::Embed).unwrap();
    for t in 0..v {
        e.row_mut(perm[t]).copy_from_slice(embed.row(t));
    }
    let h = q.tensor_mut(LayerRef::Global, Kind::LmHead).unwrap();
    for r in 0..h.rows() {
        for t in 0..v {
            h.set(r, perm[t], head.get(r, t));
        }
    }
    let seq = tokens(4, 15, v);
    let relabeled: Vec<u32> = seq.iter().map(|&t| perm[t as usize] as u32).collect();
    let a = forward_nll(&base, &seq).unwrap();
    let b = forward_nll(&q, &relabeled).unwrap();
    assert!(max_abs_diff(&a, &b) < 1e-10);
}

#[test]
fn untouched_rows_of_embedding_do_not_matter() {
    // Rows of tokens absent from the sequence never enter the input path.
    let cfg = small();
    let base = ParamStore::build(&cfg, 8).unwrap();
    let seq: Vec<u32> = tokens(6, 10, 12);
    let mut q = base.clone();
    let e = q.tensor_mut(LayerRef::Global, Kind::Embed).unwrap();
    for t in 12..cfg.vocab_size {
        e.row_mut(t).fill(1e3);
    }
    let a = forward_nll(&base, &seq).unwrap();
    let b = forward_nll(&q, &seq).unwrap();
    assert_eq!(a, b);
}
