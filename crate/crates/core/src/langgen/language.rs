use serde::{Deserialize, Serialize};

use super::grammar::{Category, Grammar, Leaf, Node, Symbol, CONTENT_SLOTS, SHARED_SLOTS};
use crate::error::{Error, Result};
use crate::numkernel::Rng;

/// Where shared, per-language and special ids live in the vocabulary.
///
/// `[0, 16)` shared punctuation/digits, then one 64-id block per language,
/// and pad/bos/eod as the last three ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub vocab_size: u32,
}

impl VocabLayout {
    pub const SHARED_START: u32 = 0;
    pub const LANG_START: u32 = SHARED_SLOTS as u32;
    pub const SPECIALS: u32 = 3;

    pub fn pad(&self) -> u32 {
        self.vocab_size - 3
    }

    pub fn bos(&self) -> u32 {
        self.vocab_size - 2
    }

    pub fn eod(&self) -> u32 {
        self.vocab_size - 1
    }

    pub fn is_special(&self, id: u32) -> bool {
        id >= self.pad() && id < self.vocab_size
    }

    pub fn is_shared(&self, id: u32) -> bool {
        id < Self::LANG_START
    }

    pub fn lang_range(lang: u32) -> std::ops::Range<u32> {
        let start = Self::LANG_START + lang * CONTENT_SLOTS as u32;
        start..start + CONTENT_SLOTS as u32
    }

    pub fn max_languages(&self) -> u32 {
        (self.vocab_size.saturating_sub(Self::LANG_START + Self::SPECIALS)) / CONTENT_SLOTS as u32
    }
}

/// One synthetic language: the shared grammar plus its own surface realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub id: u32,
    pub vocab: VocabLayout,
    pub grammar_seed: u64,
    pub grammar: Grammar,
    /// Content slot (category offset + word index) → token id; a permutation of this language's block.
    pub content_ids: Vec<u32>,
    /// Per rule, the surface order of its right-hand side (indices into `rhs`).
    pub rule_orders: Vec<Vec<usize>>,
}

impl LanguageSpec {
    pub fn range(&self) -> std::ops::Range<u32> {
        VocabLayout::lang_range(self.id)
    }

    /// Whether a token may appear in this language's documents.
    pub fn admits(&self, id: u32) -> bool {
        self.range().contains(&id) || self.vocab.is_shared(id) || self.vocab.is_special(id)
    }

    pub fn token_of(&self, leaf: Leaf) -> u32 {
        if leaf.category.is_shared() {
            VocabLayout::SHARED_START + (leaf.category.slot_offset() + leaf.word) as u32
        } else {
            self.content_ids[leaf.category.slot_offset() + leaf.word]
        }
    }

    /// Surface tokens of an abstract derivation in this language's word order.
    pub fn linearize(&self, node: &Node, out: &mut Vec<u32>) {
        match node {
            Node::Leaf(leaf) => out.push(self.token_of(*leaf)),
            Node::Inner { rule, children } => {
                for &i in &self.rule_orders[*rule] {
                    self.linearize(&children[i], out);
                }
            }
        }
    }
}

/// Build `k` languages over one grammar skeleton.
///
/// Each language permutes the ids inside its block and, for every rule that
/// contains a function word, permutes the positions of the non-punctuation
/// symbols of that rule.
pub fn make_language_family(k: usize, skeleton_seed: u64, seed: u64, vocab_size: usize) -> Result<Vec<LanguageSpec>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 languages, got {k}")));
    }
    let needed = k * CONTENT_SLOTS + SHARED_SLOTS + VocabLayout::SPECIALS as usize;
    if needed > vocab_size {
        return Err(Error::Config(format!("{k} languages need {needed} ids but vocab_size is {vocab_size}")));
    }
    let vocab = VocabLayout { vocab_size: vocab_size as u32 };
    let grammar = Grammar::skeleton(skeleton_seed);
    let root = Rng::new(seed).split("langgen/family");
    Ok((0..k as u32)
        .map(|id| {
            let mut rng = root.split(&format!("lang{id}"));
            let mut content_ids: Vec<u32> = VocabLayout::lang_range(id).collect();
            rand::seq::SliceRandom::shuffle(content_ids.as_mut_slice(), &mut rng);
            let rule_orders = grammar
                .rules
                .iter()
                .map(|r| {
                    let mut order: Vec<usize> = (0..r.rhs.len()).collect();
                    let has_function_word =
                        r.rhs.iter().any(|s| matches!(s, Symbol::T(c) if c.is_function_word()));
                    if has_function_word {
                        let mut movable: Vec<usize> = order
                            .iter()
                            .copied()
                            .filter(|&i| !matches!(r.rhs[i], Symbol::T(c) if c.is_shared()))
                            .collect();
                        let slots = movable.clone();
                        rand::seq::SliceRandom::shuffle(movable.as_mut_slice(), &mut rng);
                        for (slot, src) in slots.into_iter().zip(movable) {
                            order[slot] = src;
                        }
                    }
                    order
                })
                .collect();
            LanguageSpec { id, vocab, grammar_seed: skeleton_seed, grammar: grammar.clone(), content_ids, rule_orders }
        })
        .collect())
}

/// Document tokens plus the language-independent rule trace of its derivation.
pub fn sample_document_traced(spec: &LanguageSpec, seed: u64, max_len: usize) -> (Vec<u32>, Vec<usize>) {
    assert!(max_len >= 8, "max_len must be at least 8");
    let mut rng = Rng::new(seed).split("langgen/doc");
    let tree = spec.grammar.derive(&mut rng);
    let mut body = Vec::new();
    spec.linearize(&tree, &mut body);
    body.truncate(max_len - 2);
    let mut doc = Vec::with_capacity(body.len() + 2);
    doc.push(spec.vocab.bos());
    doc.extend(body);
    doc.push(spec.vocab.eod());
    (doc, tree.rule_trace())
}

/// `[bos, derivation tokens…, eod]`, at most `max_len` ids.
pub fn sample_document(spec: &LanguageSpec, seed: u64, max_len: usize) -> Vec<u32> {
    sample_document_traced(spec, seed, max_len).0
}

/// Exact expected unigram distribution over this language's surface tokens
/// (content and shared ids, excluding bos/eod), for an untruncated document.
pub fn terminal_marginal(spec: &LanguageSpec) -> Vec<(u32, f64)> {
    let (content, shared) = spec.grammar.expected_slot_counts();
    let total: f64 = content.iter().chain(&shared).sum();
    let mut out = Vec::with_capacity(CONTENT_SLOTS + SHARED_SLOTS);
    for c in Category::CONTENT.into_iter().chain(Category::SHARED) {
        for w in 0..c.size() {
            let leaf = Leaf { category: c, word: w };
            let expected = if c.is_shared() { shared[c.slot_offset() + w] } else { content[c.slot_offset() + w] };
            out.push((spec.token_of(leaf), expected / total));
        }
    }
    out
}
