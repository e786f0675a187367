//! Shared fixtures for the integration targets.

#![allow(dead_code)]

use std::path::Path;

use regionprobe::cli::RunConfig;
use regionprobe::model::ModelConfig;

/// A run small enough to finish in seconds while exercising every step.
pub fn tiny_run(out_dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.model = ModelConfig { n_layers: 2, d_model: 16, n_heads: 2, d_ff: 32, max_seq_len: 48, ..ModelConfig::default() };
    c.pretrain.steps = 30;
    c.pretrain.batch_size = 4;
    c.pretrain.checkpoint_interval = 10;
    c.finetune.batch_size = 4;
    c.corpus.languages = 4;
    c.corpus.finetune_languages = 3;
    c.corpus.train_docs = 16;
    c.corpus.test_docs = 4;
    let a = &mut c.analysis;
    a.scatter_seeds = vec![11, 12];
    a.freeze.sample_counts = vec![0, 8];
    a.freeze.train.batch_size = 4;
    a.dim_counts = vec![1, 3];
    a.dim_seeds = vec![31];
    a.scan_docs_per_lang = 2;
    a.sweep_random = 1;
    a.normscan_top_from_sweep = 2;
    a.generation_tokens = 6;
    c.out_dir = out_dir.to_path_buf();
    c
}
