use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::language::{sample_document, LanguageSpec};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};
use crate::numkernel::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    pub lang: u32,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: Split,
    pub documents: Vec<Document>,
}

#[derive(Serialize, Deserialize)]
struct JsonlLine {
    lang: u32,
    split: Split,
    tokens: Vec<u32>,
}

impl Corpus {
    pub fn new(split: Split, documents: Vec<Document>) -> Self {
        Self { split, documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Documents of one language, in corpus order.
    pub fn language(&self, lang: u32) -> Corpus {
        Corpus::new(self.split, self.documents.iter().filter(|d| d.lang == lang).cloned().collect())
    }

    pub fn languages(&self) -> Vec<u32> {
        let mut langs: Vec<u32> = self.documents.iter().map(|d| d.lang).collect();
        langs.sort_unstable();
        langs.dedup();
        langs
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.documents {
            let line = JsonlLine { lang: d.lang, split: self.split, tokens: d.tokens.clone() };
            writeln!(out, "{}", serde_json::to_string(&line)?).expect("string write");
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut split = None;
        let mut documents = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: JsonlLine =
                serde_json::from_str(line).map_err(|e| Error::Input(format!("corpus line {}: {e}", n + 1)))?;
            match split {
                None => split = Some(parsed.split),
                Some(s) if s != parsed.split => {
                    return Err(Error::Input(format!("corpus line {} mixes splits", n + 1)));
                }
                _ => {}
            }
            documents.push(Document { lang: parsed.lang, tokens: parsed.tokens });
        }
        Ok(Corpus::new(split.unwrap_or(Split::Train), documents))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }
}

/// Train and test corpora with exact per-language counts.
///
/// Each split draws document seeds from its own labelled stream; test
/// candidates identical to a training document of the same language are
/// skipped, so the two splits never share a document.
pub fn build_corpus(
    specs: &[LanguageSpec],
    train_per_lang: usize,
    test_per_lang: usize,
    seed: u64,
    max_len: usize,
) -> Result<(Corpus, Corpus)> {
    if train_per_lang == 0 || test_per_lang == 0 {
        return Err(Error::Input("document counts must be at least 1".into()));
    }
    let root = Rng::new(seed).split("corpus");
    let mut train = Vec::with_capacity(specs.len() * train_per_lang);
    let mut test = Vec::with_capacity(specs.len() * test_per_lang);
    for spec in specs {
        let label = format!("lang{}", spec.id);
        let train_stream = root.split("train").split(&label);
        let mut seen = HashSet::with_capacity(train_per_lang);
        for j in 0..train_per_lang {
            let tokens = sample_document(spec, train_stream.split_index(j as u64).key(), max_len);
            seen.insert(tokens.clone());
            train.push(Document { lang: spec.id, tokens });
        }
        let test_stream = root.split("test").split(&label);
        let mut j = 0u64;
        let mut produced = 0;
        while produced < test_per_lang {
            let tokens = sample_document(spec, test_stream.split_index(j).key(), max_len);
            j += 1;
            if seen.contains(&tokens) {
                continue;
            }
            test.push(Document { lang: spec.id, tokens });
            produced += 1;
        }
    }
    Ok((Corpus::new(Split::Train, train), Corpus::new(Split::Test, test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langgen::make_language_family;

    #[test]
    fn counts_are_exact() {
        let specs = make_language_family(6, 1, 2, 512).unwrap();
        let (train, test) = build_corpus(&specs, 2000, 200, 7, 128).unwrap();
        assert_eq!(train.len(), 12_000);
        assert_eq!(test.len(), 1_200);
        for s in &specs {
            assert_eq!(train.language(s.id).len(), 2000);
            assert_eq!(test.language(s.id).len(), 200);
        }
        assert_eq!(train.split, Split::Train);
        assert_eq!(test.split, Split::Test);
    }

    #[test]
    fn splits_share_no_document() {
        let specs = make_language_family(2, 1, 2, 200).unwrap();
        let (train, test) = build_corpus(&specs, 5_000, 5_000, 3, 128).unwrap();
        let train_set: HashSet<&Document> = train.documents.iter().collect();
        assert!(test.documents.iter().all(|d| !train_set.contains(d)));
    }

    #[test]
    fn zero_counts_rejected() {
        let specs = make_language_family(2, 1, 2, 200).unwrap();
        assert!(build_corpus(&specs, 0, 1, 3, 128).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let specs = make_language_family(2, 1, 2, 200).unwrap();
        let (_, test) = build_corpus(&specs, 3, 4, 3, 64).unwrap();
        let text = test.to_jsonl().unwrap();
        assert!(text.ends_with('\n'));
        assert!(text.lines().next().unwrap().starts_with("{\"lang\":0,\"split\":\"test\",\"tokens\":["));
        assert_eq!(Corpus::from_jsonl(&text).unwrap(), test);
    }
}
