//! Perplexity, generation, and the experiment grids built on them.

mod experiments;
mod ppl;
mod report;

pub use experiments::{
    exp_dims, exp_freeze, exp_layer_sweep, exp_normscan, exp_scatter, generation_report, DimsConfig, ExpContext,
    FreezeConfig, NormscanConfig, ScatterConfig, SweepAxis, SweepConfig, OUTLIER_FACTOR,
};
pub use ppl::{generate, perplexity, perplexity_by_language, unigram_perplexity, Decoding, PplStats};
pub use report::{median, EvalReport, EvalRow, CSV_HEADER};
