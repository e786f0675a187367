//! Synthetic language families: one shared grammar skeleton, disjoint
//! per-language vocabularies, and deterministic train/test corpora.

mod corpus;
mod grammar;
mod language;

pub use corpus::{build_corpus, Corpus, Document, Split};
pub use grammar::{Category, Grammar, Leaf, Node, Nonterminal, Rule, Symbol, CONTENT_SLOTS, SHARED_SLOTS};
pub use language::{
    make_language_family, sample_document, sample_document_traced, terminal_marginal, LanguageSpec, VocabLayout,
};
