use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalx::SweepAxis;
use crate::io::{atomic_write, read_file};
use crate::model::ModelConfig;
use crate::perturb::Mode;
use crate::regionmap::{RegionScope, Tier};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Languages in the family; the first `finetune_languages` are fine-tuned,
    /// the rest are evaluation-only.
    pub languages: usize,
    pub finetune_languages: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub skeleton_seed: u64,
    pub grammar_seed: u64,
    pub corpus_seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            languages: 8,
            finetune_languages: 6,
            train_docs: 2000,
            test_docs: 200,
            skeleton_seed: 1,
            grammar_seed: 2,
            corpus_seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeSpec {
    pub ratio: f64,
    pub sample_counts: Vec<usize>,
    pub lang_a: u32,
    pub lang_b: u32,
    pub seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    pub variation_eps: f64,
    /// Tensors Top/Bottom regions are drawn from.
    pub region_scope: RegionScope,
    pub thresholds: Vec<f64>,
    pub ratios: Vec<f64>,
    pub scatter_modes: Vec<Mode>,
    pub scatter_seeds: Vec<u64>,
    pub freeze: FreezeSpec,
    pub dim_counts: Vec<usize>,
    pub dim_tiers: Vec<Tier>,
    pub dim_seeds: Vec<u64>,
    pub dim_mode: Mode,
    /// Sweep and norm scan evaluate this many test documents per language.
    pub scan_docs_per_lang: usize,
    pub sweep_random: usize,
    pub sweep_seed: u64,
    pub sweep_mode: Mode,
    pub sweep_axis: SweepAxis,
    pub normscan_layers: Vec<usize>,
    /// Norm dimensions scanned besides the sweep's most damaging ones.
    pub normscan_dims: Vec<usize>,
    pub normscan_top_from_sweep: usize,
    /// Ratio of the Bottom region drawn as the heatmap.
    pub heatmap_ratio: f64,
    /// Tensor name for the heatmap; the matrix holding most Bottom scalars when unset.
    pub heatmap_tensor: Option<String>,
    pub generation_tokens: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        let finetune = TrainConfig::finetune_default();
        Self {
            variation_eps: crate::regionmap::DEFAULT_VARIATION_EPS,
            region_scope: RegionScope::All,
            thresholds: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            ratios: vec![0.01, 0.03, 0.05],
            scatter_modes: vec![Mode::gauss()],
            scatter_seeds: vec![11, 12, 13, 14, 15],
            freeze: FreezeSpec {
                ratio: 0.01,
                sample_counts: vec![0, 200, 1000, 2000],
                lang_a: 0,
                lang_b: 1,
                seed: 11,
                train: TrainConfig { seed: 21, ..finetune },
            },
            dim_counts: vec![1, 3, 5, 10],
            dim_tiers: Tier::ALL.to_vec(),
            dim_seeds: vec![31, 32, 33],
            dim_mode: Mode::gauss(),
            scan_docs_per_lang: 50,
            sweep_random: 2,
            sweep_seed: 41,
            sweep_mode: Mode::gauss(),
            sweep_axis: SweepAxis::Residual,
            normscan_layers: vec![0, 1],
            normscan_dims: vec![0, 1],
            normscan_top_from_sweep: 4,
            heatmap_ratio: 0.01,
            heatmap_tensor: None,
            generation_tokens: 24,
        }
    }
}

/// Everything one end-to-end run needs. Every seed is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub init_seed: u64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub corpus: CorpusSpec,
    pub analysis: AnalysisSpec,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            init_seed: 0,
            pretrain: TrainConfig { seed: 1, ..TrainConfig::pretrain_default() },
            finetune: TrainConfig { seed: 2, ..TrainConfig::finetune_default() },
            corpus: CorpusSpec::default(),
            analysis: AnalysisSpec::default(),
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.analysis.freeze.train.validate()?;
        let c = &self.corpus;
        if c.finetune_languages < 2 || c.finetune_languages > c.languages {
            return Err(Error::Config(format!(
                "need 2 ≤ fine-tune languages ≤ {}, got {}",
                c.languages, c.finetune_languages
            )));
        }
        let a = &self.analysis;
        let langs = c.languages as u32;
        if a.freeze.lang_a >= langs || a.freeze.lang_b >= langs || a.freeze.lang_a == a.freeze.lang_b {
            return Err(Error::Config("freeze languages must be two distinct languages of the family".into()));
        }
        if a.freeze.sample_counts.last().is_some_and(|&k| k > c.train_docs) {
            return Err(Error::Config("freeze sample count exceeds training documents per language".into()));
        }
        if a.scatter_seeds.is_empty() || a.dim_seeds.is_empty() {
            return Err(Error::Config("scatter and dimension experiments need at least one seed".into()));
        }
        if a.scan_docs_per_lang == 0 || a.scan_docs_per_lang > c.test_docs {
            return Err(Error::Config("scan_docs_per_lang must be within 1..=test_docs".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }
}
