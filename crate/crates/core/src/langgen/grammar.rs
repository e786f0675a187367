//! Shared-skeleton probabilistic grammar. Derivations are drawn once,
//! language-independently, and only linearized and lexicalized per language.

use serde::{Deserialize, Serialize};

use crate::numkernel::Rng;

/// Terminal categories. Content categories get per-language ids; shared ones do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Noun,
    VerbT,
    VerbI,
    Adj,
    Adv,
    Pron,
    Det,
    Prep,
    Conj,
    Rel,
    Aux,
    Neg,
    End,
    Comma,
    Quote,
    Digit,
}

impl Category {
    pub const CONTENT: [Category; 12] = [
        Category::Noun,
        Category::VerbT,
        Category::VerbI,
        Category::Adj,
        Category::Adv,
        Category::Pron,
        Category::Det,
        Category::Prep,
        Category::Conj,
        Category::Rel,
        Category::Aux,
        Category::Neg,
    ];
    pub const SHARED: [Category; 4] = [Category::End, Category::Comma, Category::Quote, Category::Digit];

    /// Number of words in the category (identical for every language).
    pub fn size(self) -> usize {
        match self {
            Category::Noun => 18,
            Category::VerbT | Category::Adj => 8,
            Category::VerbI => 6,
            Category::Adv | Category::Pron | Category::Det | Category::Prep => 4,
            Category::Conj | Category::End => 3,
            Category::Aux | Category::Neg | Category::Quote => 2,
            Category::Rel | Category::Comma => 1,
            Category::Digit => 10,
        }
    }

    pub fn is_shared(self) -> bool {
        Self::SHARED.contains(&self)
    }

    pub fn is_function_word(self) -> bool {
        matches!(self, Category::Det | Category::Prep | Category::Conj | Category::Rel | Category::Aux | Category::Neg)
    }

    /// First slot of this category within the content block (0..64) or the shared block (0..16).
    pub fn slot_offset(self) -> usize {
        let list: &[Category] = if self.is_shared() { &Self::SHARED } else { &Self::CONTENT };
        list.iter().take_while(|&&c| c != self).map(|c| c.size()).sum()
    }

    /// Within-category word weights, Zipf-like `1/(r+1)`, normalized.
    pub fn word_weights(self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.size()).map(|r| 1.0 / (r as f64 + 1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    }
}

pub const CONTENT_SLOTS: usize = 64;
pub const SHARED_SLOTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Nonterminal {
    Doc,
    Sent,
    Clause,
    Np,
    Vp,
    Pp,
    Adjp,
    Relc,
    Num,
}

impl Nonterminal {
    pub const ALL: [Nonterminal; 9] = [
        Nonterminal::Doc,
        Nonterminal::Sent,
        Nonterminal::Clause,
        Nonterminal::Np,
        Nonterminal::Vp,
        Nonterminal::Pp,
        Nonterminal::Adjp,
        Nonterminal::Relc,
        Nonterminal::Num,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|&n| n == self).expect("listed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symbol {
    N(Nonterminal),
    T(Category),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: Nonterminal,
    pub rhs: Vec<Symbol>,
    pub prob: f64,
    /// The rule used when the depth bound is reached; one per nonterminal.
    pub base: bool,
}

/// The shared skeleton: rules, probabilities, depth bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub rules: Vec<Rule>,
    pub max_depth: usize,
}

/// Leaf of an abstract derivation: a category and a word index inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leaf {
    pub category: Category,
    pub word: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Inner { rule: usize, children: Vec<Node> },
    Leaf(Leaf),
}

impl Node {
    /// Rule indices in pre-order.
    pub fn rule_trace(&self) -> Vec<usize> {
        let mut out = Vec::new();
        fn walk(n: &Node, out: &mut Vec<usize>) {
            if let Node::Inner { rule, children } = n {
                out.push(*rule);
                children.iter().for_each(|c| walk(c, out));
            }
        }
        walk(self, &mut out);
        out
    }
}

fn pick(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

impl Grammar {
    /// The fixed rule set, with weights jittered by `skeleton_seed` (±25%) and renormalized.
    pub fn skeleton(skeleton_seed: u64) -> Self {
        use Category as C;
        use Nonterminal as NT;
        use Symbol::{N, T};
        let table: Vec<(NT, Vec<Symbol>, f64, bool)> = vec![
            (NT::Doc, vec![N(NT::Sent), N(NT::Sent)], 0.35, true),
            (NT::Doc, vec![N(NT::Sent), N(NT::Sent), N(NT::Sent)], 0.35, false),
            (NT::Doc, vec![N(NT::Sent), N(NT::Sent), N(NT::Sent), N(NT::Sent)], 0.2, false),
            (NT::Doc, vec![N(NT::Sent), N(NT::Sent), N(NT::Sent), N(NT::Sent), N(NT::Sent)], 0.1, false),
            (NT::Sent, vec![N(NT::Clause), T(C::End)], 0.6, true),
            (NT::Sent, vec![N(NT::Clause), T(C::Conj), N(NT::Clause), T(C::End)], 0.15, false),
            (NT::Sent, vec![N(NT::Clause), T(C::Comma), N(NT::Clause), T(C::End)], 0.1, false),
            (NT::Sent, vec![N(NT::Pp), T(C::Comma), N(NT::Clause), T(C::End)], 0.1, false),
            (NT::Sent, vec![T(C::Quote), N(NT::Clause), T(C::Quote), T(C::End)], 0.05, false),
            (NT::Clause, vec![N(NT::Np), N(NT::Vp)], 0.5, false),
            (NT::Clause, vec![T(C::Pron), N(NT::Vp)], 0.25, true),
            (NT::Clause, vec![N(NT::Np), T(C::Aux), T(C::Neg), N(NT::Vp)], 0.1, false),
            (NT::Clause, vec![T(C::Adv), T(C::Comma), N(NT::Np), N(NT::Vp)], 0.08, false),
            (NT::Clause, vec![N(NT::Np), N(NT::Vp), T(C::Adv)], 0.07, false),
            (NT::Vp, vec![T(C::VerbI)], 0.25, true),
            (NT::Vp, vec![T(C::VerbT), N(NT::Np)], 0.32, false),
            (NT::Vp, vec![T(C::VerbT), N(NT::Np), N(NT::Pp)], 0.12, false),
            (NT::Vp, vec![T(C::VerbI), T(C::Adv)], 0.1, false),
            (NT::Vp, vec![T(C::VerbI), N(NT::Pp)], 0.1, false),
            (NT::Vp, vec![T(C::Aux), T(C::VerbI)], 0.05, false),
            (NT::Vp, vec![T(C::VerbT), T(C::Pron)], 0.03, false),
            (NT::Vp, vec![T(C::VerbT), N(NT::Np), T(C::Adv)], 0.03, false),
            (NT::Np, vec![T(C::Det), T(C::Noun)], 0.35, true),
            (NT::Np, vec![T(C::Det), N(NT::Adjp), T(C::Noun)], 0.2, false),
            (NT::Np, vec![T(C::Noun)], 0.1, false),
            (NT::Np, vec![N(NT::Np), N(NT::Pp)], 0.08, false),
            (NT::Np, vec![T(C::Det), T(C::Noun), N(NT::Relc)], 0.08, false),
            (NT::Np, vec![N(NT::Num), T(C::Noun)], 0.09, false),
            (NT::Np, vec![T(C::Det), T(C::Noun), T(C::Conj), T(C::Det), T(C::Noun)], 0.1, false),
            (NT::Pp, vec![T(C::Prep), N(NT::Np)], 0.8, true),
            (NT::Pp, vec![T(C::Prep), T(C::Pron)], 0.12, false),
            (NT::Pp, vec![T(C::Prep), N(NT::Num), T(C::Noun)], 0.08, false),
            (NT::Adjp, vec![T(C::Adj)], 0.65, true),
            (NT::Adjp, vec![T(C::Adv), T(C::Adj)], 0.2, false),
            (NT::Adjp, vec![T(C::Adj), T(C::Conj), T(C::Adj)], 0.1, false),
            (NT::Adjp, vec![T(C::Adj), T(C::Adj)], 0.05, false),
            (NT::Relc, vec![T(C::Rel), N(NT::Vp)], 0.7, true),
            (NT::Relc, vec![T(C::Rel), N(NT::Np), T(C::VerbT)], 0.3, false),
            (NT::Num, vec![T(C::Digit)], 0.6, true),
            (NT::Num, vec![T(C::Digit), N(NT::Num)], 0.4, false),
        ];
        let mut rng = Rng::new(skeleton_seed).split("grammar/skeleton");
        let mut rules: Vec<Rule> = table
            .into_iter()
            .map(|(lhs, rhs, p, base)| Rule { lhs, rhs, prob: p * (0.75 + 0.5 * rng.uniform()), base })
            .collect();
        for nt in Nonterminal::ALL {
            let total: f64 = rules.iter().filter(|r| r.lhs == nt).map(|r| r.prob).sum();
            rules.iter_mut().filter(|r| r.lhs == nt).for_each(|r| r.prob /= total);
        }
        Self { rules, max_depth: 8 }
    }

    pub fn rules_for(&self, nt: Nonterminal) -> impl Iterator<Item = (usize, &Rule)> {
        self.rules.iter().enumerate().filter(move |(_, r)| r.lhs == nt)
    }

    fn base_rule(&self, nt: Nonterminal) -> usize {
        self.rules_for(nt).find(|(_, r)| r.base).map(|(i, _)| i).expect("every nonterminal has a base rule")
    }

    /// Draw an abstract derivation from `Doc`. Consumes `rng` identically for every language.
    pub fn derive(&self, rng: &mut Rng) -> Node {
        self.expand(Nonterminal::Doc, 0, rng)
    }

    fn expand(&self, nt: Nonterminal, depth: usize, rng: &mut Rng) -> Node {
        let rule = if depth >= self.max_depth {
            self.base_rule(nt)
        } else {
            let (idx, weights): (Vec<usize>, Vec<f64>) = self.rules_for(nt).map(|(i, r)| (i, r.prob)).unzip();
            idx[pick(rng, &weights)]
        };
        let children = self.rules[rule]
            .rhs
            .iter()
            .map(|sym| match *sym {
                Symbol::N(child) => self.expand(child, depth + 1, rng),
                Symbol::T(category) => {
                    let word = pick(rng, &category.word_weights());
                    Node::Leaf(Leaf { category, word })
                }
            })
            .collect();
        Node::Inner { rule, children }
    }

    /// Expected number of occurrences of each terminal slot in one derivation,
    /// computed exactly by dynamic programming over (nonterminal, depth).
    ///
    /// Returns `(content[64], shared[16])`.
    pub fn expected_slot_counts(&self) -> (Vec<f64>, Vec<f64>) {
        let n_nt = Nonterminal::ALL.len();
        let width = CONTENT_SLOTS + SHARED_SLOTS;
        // table[d][nt] for d in 0..=max_depth; depth >= max_depth behaves like max_depth.
        let mut table = vec![vec![vec![0.0; width]; n_nt]; self.max_depth + 1];
        let leaf_vec = |c: Category| {
            let mut v = vec![0.0; width];
            let off = if c.is_shared() { CONTENT_SLOTS + c.slot_offset() } else { c.slot_offset() };
            for (i, w) in c.word_weights().into_iter().enumerate() {
                v[off + i] = w;
            }
            v
        };
        // Base rules form an acyclic system; resolve by repeated substitution.
        let mut base = vec![vec![0.0; width]; n_nt];
        for _ in 0..n_nt + 1 {
            let mut next = vec![vec![0.0; width]; n_nt];
            for nt in Nonterminal::ALL {
                let r = &self.rules[self.base_rule(nt)];
                for sym in &r.rhs {
                    let v = match *sym {
                        Symbol::N(c) => base[c.index()].clone(),
                        Symbol::T(c) => leaf_vec(c),
                    };
                    next[nt.index()].iter_mut().zip(v).for_each(|(a, b)| *a += b);
                }
            }
            base = next;
        }
        table[self.max_depth] = base;
        for d in (0..self.max_depth).rev() {
            for nt in Nonterminal::ALL {
                let mut acc = vec![0.0; width];
                for (_, r) in self.rules_for(nt) {
                    for sym in &r.rhs {
                        let v = match *sym {
                            Symbol::N(c) => table[d + 1][c.index()].clone(),
                            Symbol::T(c) => leaf_vec(c),
                        };
                        acc.iter_mut().zip(v).for_each(|(a, b)| *a += r.prob * b);
                    }
                }
                table[d][nt.index()] = acc;
            }
        }
        let top = &table[0][Nonterminal::Doc.index()];
        (top[..CONTENT_SLOTS].to_vec(), top[CONTENT_SLOTS..].to_vec())
    }
}
