use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::langgen::{Corpus, VocabLayout};
use crate::model::{forward, forward_nll, ParamStore};
use crate::numkernel::{softmax_in_place, Rng};

/// Summed NLL and predicted-position count behind one perplexity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PplStats {
    pub nll_sum: f64,
    pub tokens: usize,
}

impl PplStats {
    pub fn ppl(&self) -> f64 {
        (self.nll_sum / self.tokens as f64).exp()
    }
}

/// `exp(Σ nll / Σ positions)` over every document (optionally one language),
/// excluding positions whose target is padding. Documents longer than the
/// context are truncated.
pub fn perplexity(params: &ParamStore, corpus: &Corpus, lang: Option<u32>) -> Result<PplStats> {
    let max_len = params.config().max_seq_len;
    let pad = VocabLayout { vocab_size: params.config().vocab_size as u32 }.pad();
    let docs: Vec<&[u32]> = corpus
        .documents
        .iter()
        .filter(|d| lang.is_none_or(|l| d.lang == l))
        .map(|d| &d.tokens[..d.tokens.len().min(max_len)])
        .collect();
    if docs.is_empty() {
        return Err(Error::Input("no documents to evaluate".into()));
    }
    let per_doc: Vec<(f64, usize)> = docs
        .par_iter()
        .map(|toks| {
            let nll = forward_nll(params, toks)?;
            let (mut s, mut n) = (0.0, 0);
            for (t, v) in nll.iter().enumerate() {
                if toks[t + 1] != pad {
                    s += v;
                    n += 1;
                }
            }
            Ok((s, n))
        })
        .collect::<Result<_>>()?;
    let (nll_sum, tokens) = per_doc.iter().fold((0.0, 0), |(s, n), &(a, b)| (s + a, n + b));
    if tokens == 0 {
        return Err(Error::Input("no predicted positions to evaluate".into()));
    }
    Ok(PplStats { nll_sum, tokens })
}

/// Per-language statistics in one pass; each entry equals `perplexity(.., Some(lang))`.
pub fn perplexity_by_language(params: &ParamStore, corpus: &Corpus) -> Result<Vec<(u32, PplStats)>> {
    let max_len = params.config().max_seq_len;
    let pad = VocabLayout { vocab_size: params.config().vocab_size as u32 }.pad();
    if corpus.is_empty() {
        return Err(Error::Input("no documents to evaluate".into()));
    }
    let per_doc: Vec<(u32, f64, usize)> = corpus
        .documents
        .par_iter()
        .map(|d| {
            let toks = &d.tokens[..d.tokens.len().min(max_len)];
            let nll = forward_nll(params, toks)?;
            let (mut s, mut n) = (0.0, 0);
            for (t, v) in nll.iter().enumerate() {
                if toks[t + 1] != pad {
                    s += v;
                    n += 1;
                }
            }
            Ok((d.lang, s, n))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<(u32, PplStats)> = Vec::new();
    for lang in corpus.languages() {
        let (nll_sum, tokens) =
            per_doc.iter().filter(|d| d.0 == lang).fold((0.0, 0), |(s, n), &(_, a, b)| (s + a, n + b));
        if tokens == 0 {
            return Err(Error::Input(format!("language {lang} has no predicted positions")));
        }
        out.push((lang, PplStats { nll_sum, tokens }));
    }
    Ok(out)
}

/// Perplexity of the add-one unigram model fitted on `train`, evaluated on `test`.
pub fn unigram_perplexity(train: &Corpus, test: &Corpus, vocab_size: usize) -> Result<f64> {
    let mut counts = vec![1.0f64; vocab_size];
    for d in &train.documents {
        for &t in &d.tokens[1..] {
            counts[t as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let (mut s, mut n) = (0.0, 0usize);
    for d in &test.documents {
        for &t in &d.tokens[1..] {
            s -= (counts[t as usize] / total).ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Input("empty test corpus".into()));
    }
    Ok((s / n as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Temperature(f64),
}

/// Autoregressive continuation of `prompt` by `n` tokens. Greedy breaks ties
/// toward the lowest id; the context is cut to the model's window from the left.
pub fn generate(params: &ParamStore, prompt: &[u32], n: usize, decoding: Decoding, seed: u64) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::Input("empty prompt".into()));
    }
    if let Decoding::Temperature(t) = decoding {
        if !(t > 0.0) {
            return Err(Error::Input(format!("temperature {t} must be positive")));
        }
    }
    let max_len = params.config().max_seq_len;
    let mut rng = Rng::new(seed).split("generate");
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ctx = &seq[seq.len().saturating_sub(max_len)..];
        let pass = forward(params, ctx, false)?;
        let logits = pass.logits.row(ctx.len() - 1);
        let next = match decoding {
            Decoding::Greedy => {
                let mut best = 0;
                for (i, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = i;
                    }
                }
                best
            }
            Decoding::Temperature(t) => {
                let mut p: Vec<f64> = logits.iter().map(|v| v / t).collect();
                softmax_in_place(&mut p);
                let u = rng.uniform();
                let mut acc = 0.0;
                p.iter().position(|&q| {
                    acc += q;
                    u < acc
                })
                .unwrap_or(p.len() - 1)
            }
        } as u32;
        seq.push(next);
        out.push(next);
    }
    Ok(out)
}
