//! Command-line surface. Every command prints one `key=value` summary line on
//! success; exit status is 0 on success, 1 on runtime errors, 2 on usage errors.

pub mod config;
pub mod heatmap;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

pub use config::{AnalysisSpec, CorpusSpec, FreezeSpec, RunConfig};
pub use heatmap::{csv_text, export_heatmap, parse_csv, pgm_bytes, HeatmapFormat};

use crate::error::{Error, Result};
use crate::evalx::{
    exp_dims, exp_freeze, exp_layer_sweep, exp_normscan, exp_scatter, generate, perplexity, Decoding, DimsConfig,
    EvalReport, ExpContext, FreezeConfig, NormscanConfig, ScatterConfig, SweepAxis, SweepConfig,
};
use crate::langgen::{build_corpus, make_language_family, Corpus};
use crate::mask::BitMask;
use crate::model::{load_checkpoint, save_checkpoint_with_metadata, ParamStore};
use crate::perturb::{apply_perturbation, AxisSetting, Mode, PerturbationSpec, Target};
use crate::regionmap::{
    aggregate_runs, mask_matrix, random_region, ratio_count, region_metadata, relative_variation, select_region_in,
    vicinity_density, AggregateVariation, RankKey, RegionKind, RegionScope, Tier, VariationMap,
};
use crate::trainer::{finetune_to_checkpoint, pretrain};

/// Parse a lowercase/snake_case enum through its serde name.
fn serde_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "regionprobe", version, about = "Localize and perturb language-competence regions of a tiny decoder")]
pub struct Cli {
    /// JSON run config supplying defaults; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Step-0 checkpoint restored by reset_init modes.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Report CSV; a JSON sidecar lands next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the language family and write train/test JSONL splits.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        languages: Option<usize>,
        #[arg(long)]
        train_docs: Option<usize>,
        #[arg(long)]
        test_docs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain from a seeded initialization, writing periodic checkpoints.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        init_seed: Option<u64>,
    },
    /// Fine-tune a checkpoint on one language, optionally freezing a mask.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lang: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        freeze: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate relative variation over fine-tuned runs of one base.
    Analyze {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        tuned: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Select a Top, Bottom, or random region as a mask file.
    SelectRegion {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        agg: Option<PathBuf>,
        #[arg(long, value_parser = serde_enum::<RegionKind>)]
        which: RegionKind,
        #[arg(long, conflicts_with = "count")]
        ratio: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_parser = serde_enum::<RankKey>, default_value = "consistent")]
        key: RankKey,
        #[arg(long, value_parser = serde_enum::<RegionScope>)]
        scope: Option<RegionScope>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb the scalars of a mask and write the checkpoint plus an audit log.
    Perturb {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output path with an `.audit.json` suffix.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Perplexity of a checkpoint on a corpus.
    EvalPpl {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lang: Option<u32>,
    },
    /// Scattered-region perturbation grid.
    ExpScatter {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        agg: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_parser = parse_mode, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
        #[arg(long, value_parser = serde_enum::<RegionScope>)]
        scope: Option<RegionScope>,
    },
    /// Perturb, freeze, and retrain on growing samples of one language.
    ExpFreeze {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        agg: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, value_delimiter = ',')]
        samples: Option<Vec<usize>>,
        #[arg(long)]
        lang_a: Option<u32>,
        #[arg(long)]
        lang_b: Option<u32>,
        #[arg(long, value_parser = serde_enum::<RegionScope>)]
        scope: Option<RegionScope>,
    },
    /// Whole-dimension perturbation by variation tier.
    ExpDims {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        agg: PathBuf,
        #[arg(long, value_parser = serde_enum::<AxisSetting>)]
        setting: AxisSetting,
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', value_parser = serde_enum::<Tier>)]
        tiers: Option<Vec<Tier>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// One dimension across all layers, for every dimension.
    ExpSweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, value_parser = serde_enum::<SweepAxis>)]
        axis: Option<SweepAxis>,
        #[arg(long)]
        random: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Single input-norm weights, one at a time.
    ExpNormscan {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, value_parser = parse_mode, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
    },
    /// Vicinity density of a mask over one matrix, as PGM or CSV.
    ExportHeatmap {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Parameter name such as `layer0.ffn.down`.
        #[arg(long)]
        tensor: String,
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(long, value_enum, default_value = "pgm")]
        format: HeatmapFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a prompt of comma-separated token ids.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        prompt: Vec<u32>,
        #[arg(long, default_value_t = 24)]
        tokens: usize,
        /// Greedy when unset.
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the effective run configuration as JSON, for editing.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole recipe end to end under one directory.
    Pipeline {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Ordered `key=value` pairs printed on success.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Summary(pub Vec<(String, String)>);

impl Summary {
    fn kv(mut self, k: &str, v: impl Display) -> Self {
        self.0.push((k.to_string(), v.to_string()));
        self
    }

    pub fn get(&self, k: &str) -> Option<&str> {
        self.0.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str())
    }
}

impl Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

fn load_aggregate(layout_of: &ParamStore, path: &Path) -> Result<AggregateVariation> {
    AggregateVariation::load(layout_of.layout(), path)
}

fn load_reference(path: &Option<PathBuf>) -> Result<Option<ParamStore>> {
    path.as_deref().map(load_checkpoint).transpose()
}

fn save_report(report: &EvalReport, out: &Path) -> Result<Summary> {
    report.save(out)?;
    Ok(Summary::default().kv("experiment", &report.experiment).kv("rows", report.rows.len()).kv("out", out.display()))
}

fn threads_from_env() {
    if let Some(n) = std::env::var("REGIONPROBE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, in which case the cap was set before.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Execute one parsed command.
pub fn execute(cli: Cli) -> Result<Summary> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let a = &cfg.analysis;
    match cli.command {
        Command::GenCorpus { out, languages, train_docs, test_docs, seed } => {
            let c = &cfg.corpus;
            let k = languages.unwrap_or(c.languages);
            let specs = make_language_family(k, c.skeleton_seed, c.grammar_seed, cfg.model.vocab_size)?;
            let (train, test) = build_corpus(
                &specs,
                train_docs.unwrap_or(c.train_docs),
                test_docs.unwrap_or(c.test_docs),
                seed.unwrap_or(c.corpus_seed),
                cfg.model.max_seq_len,
            )?;
            train.save(&out.join("train.jsonl"))?;
            test.save(&out.join("test.jsonl"))?;
            Ok(Summary::default()
                .kv("languages", k)
                .kv("train_docs", train.len())
                .kv("test_docs", test.len())
                .kv("out", out.display()))
        }
        Command::Pretrain { corpus, out, steps, lr, seed, init_seed } => {
            let mut tc = cfg.pretrain.clone();
            tc.steps = steps.unwrap_or(tc.steps);
            tc.lr = lr.unwrap_or(tc.lr);
            tc.seed = seed.unwrap_or(tc.seed);
            let train = Corpus::load(&corpus)?;
            let mut p = ParamStore::build(&cfg.model, init_seed.unwrap_or(cfg.init_seed))?;
            let res = pretrain(&mut p, &train, &tc, &out)?;
            let last = res.checkpoints.last().map(|p| p.display().to_string()).unwrap_or_default();
            Ok(Summary::default()
                .kv("steps", tc.steps)
                .kv("final_loss", format!("{:.6}", res.losses.last().copied().unwrap_or(f64::NAN)))
                .kv("checkpoints", res.checkpoints.len())
                .kv("last", last))
        }
        Command::Finetune { base, corpus, lang, out, freeze, epochs, lr, seed } => {
            let mut tc = cfg.finetune.clone();
            if epochs.is_some() {
                tc.epochs = epochs;
            }
            tc.lr = lr.unwrap_or(tc.lr);
            tc.seed = seed.unwrap_or(tc.seed);
            let mut p = load_checkpoint(&base)?;
            let mask = freeze.map(|f| BitMask::load(p.layout(), &f)).transpose()?.map(|m| m.0);
            let data = Corpus::load(&corpus)?.language(lang);
            let record = finetune_to_checkpoint(&mut p, &data, &tc, mask.as_ref(), &base.display().to_string(), &out)?;
            Ok(Summary::default().kv("lang", lang).kv("steps", record.steps).kv("out", out.display()))
        }
        Command::Analyze { base, tuned, out, eps } => {
            let b = load_checkpoint(&base)?;
            let eps = eps.unwrap_or(a.variation_eps);
            let maps = tuned
                .iter()
                .map(|t| relative_variation(&b, &load_checkpoint(t)?, eps))
                .collect::<Result<Vec<VariationMap>>>()?;
            let ids: Vec<String> = tuned.iter().map(|t| t.display().to_string()).collect();
            let agg = aggregate_runs(&maps, &ids)?;
            agg.save(b.layout(), &out)?;
            Ok(Summary::default().kv("runs", agg.k()).kv("params", agg.len()).kv("out", out.display()))
        }
        Command::SelectRegion { base, agg, which, ratio, count, key, scope, seed, out } => {
            let b = load_checkpoint(&base)?;
            let total = b.total_params();
            let n = match (ratio, count) {
                (_, Some(n)) => n,
                (Some(r), None) => ratio_count(r, total)?,
                (None, None) => return Err(Error::Input("one of --ratio or --count is required".into())),
            };
            let scope = scope.unwrap_or(a.region_scope);
            let (mask, source) = match which {
                RegionKind::Random => (random_region(total, n, seed)?, String::new()),
                _ => {
                    let path = agg.ok_or_else(|| Error::Input("--agg is required for top/bottom regions".into()))?;
                    let g = load_aggregate(&b, &path)?;
                    (select_region_in(&g, b.layout(), n, which, key, scope)?, path.display().to_string())
                }
            };
            let seed = (which == RegionKind::Random).then_some(seed);
            let mut meta = region_metadata(which, n, ratio, key, &source, seed);
            meta.insert("scope".into(), serde_json::to_value(scope)?);
            mask.save(b.layout(), &out, meta)?;
            Ok(Summary::default().kv("which", which.name()).kv("count", mask.popcount()).kv("out", out.display()))
        }
        Command::Perturb { ckpt, mask, mode, seed, reference, out, audit } => {
            let p = load_checkpoint(&ckpt)?;
            let (m, _) = BitMask::load(p.layout(), &mask)?;
            let reference = load_reference(&reference)?;
            let spec = PerturbationSpec { mode, target: Target::Scatter(m), seed };
            let (q, log) = apply_perturbation(&p, &spec, reference.as_ref())?;
            let mut meta = BTreeMap::new();
            meta.insert("perturbation".to_string(), spec.snapshot());
            meta.insert("source".to_string(), serde_json::Value::String(ckpt.display().to_string()));
            save_checkpoint_with_metadata(&q, &out, meta)?;
            let audit = audit.unwrap_or_else(|| PathBuf::from(format!("{}.audit.json", out.display())));
            log.save(&audit)?;
            Ok(Summary::default()
                .kv("mode", spec.mode.label())
                .kv("changed", log.entries.len())
                .kv("out", out.display())
                .kv("audit", audit.display()))
        }
        Command::EvalPpl { ckpt, corpus, lang } => {
            let p = load_checkpoint(&ckpt)?;
            let stats = perplexity(&p, &Corpus::load(&corpus)?, lang)?;
            let lang = lang.map_or("all".to_string(), |l| l.to_string());
            Ok(Summary::default().kv("lang", lang).kv("ppl", format!("{:.6}", stats.ppl())).kv("tokens", stats.tokens))
        }
        Command::ExpScatter { exp, agg, ratios, seeds, modes, scope } => {
            let (base, test, reference) = load_exp(&exp)?;
            let g = load_aggregate(&base, &agg)?;
            let ctx = context(&base, &exp, &test, reference.as_ref());
            let sc = ScatterConfig {
                ratios: ratios.unwrap_or_else(|| a.ratios.clone()),
                modes: modes.unwrap_or_else(|| a.scatter_modes.clone()),
                seeds: seeds.unwrap_or_else(|| a.scatter_seeds.clone()),
                scope: scope.unwrap_or(a.region_scope),
            };
            save_report(&exp_scatter(&ctx, &g, &sc)?, &exp.out)
        }
        Command::ExpFreeze { exp, agg, train, samples, lang_a, lang_b, scope } => {
            let (base, test, reference) = load_exp(&exp)?;
            let g = load_aggregate(&base, &agg)?;
            let ctx = context(&base, &exp, &test, reference.as_ref());
            let f = &a.freeze;
            let fc = FreezeConfig {
                ratio: f.ratio,
                sample_counts: samples.unwrap_or_else(|| f.sample_counts.clone()),
                lang_a: lang_a.unwrap_or(f.lang_a),
                lang_b: lang_b.unwrap_or(f.lang_b),
                seed: f.seed,
                mode: Mode::gauss(),
                train: f.train.clone(),
                scope: scope.unwrap_or(a.region_scope),
            };
            save_report(&exp_freeze(&ctx, &g, &Corpus::load(&train)?, &fc)?, &exp.out)
        }
        Command::ExpDims { exp, agg, setting, counts, tiers, seeds } => {
            let (base, test, reference) = load_exp(&exp)?;
            let g = load_aggregate(&base, &agg)?;
            let ctx = context(&base, &exp, &test, reference.as_ref());
            let dc = DimsConfig {
                setting,
                counts: counts.unwrap_or_else(|| a.dim_counts.clone()),
                tiers: tiers.unwrap_or_else(|| a.dim_tiers.clone()),
                seeds: seeds.unwrap_or_else(|| a.dim_seeds.clone()),
                mode: a.dim_mode.clone(),
            };
            save_report(&exp_dims(&ctx, &g, &dc)?, &exp.out)
        }
        Command::ExpSweep { exp, axis, random, seed } => {
            let (base, test, reference) = load_exp(&exp)?;
            let ctx = context(&base, &exp, &test, reference.as_ref());
            let sc = SweepConfig {
                dims: (0..base.config().d_model).collect(),
                n_random: random.unwrap_or(a.sweep_random),
                seed: seed.unwrap_or(a.sweep_seed),
                mode: a.sweep_mode.clone(),
                axis: axis.unwrap_or(a.sweep_axis),
            };
            save_report(&exp_layer_sweep(&ctx, &sc)?, &exp.out)
        }
        Command::ExpNormscan { exp, layers, dims, modes } => {
            let (base, test, reference) = load_exp(&exp)?;
            let ctx = context(&base, &exp, &test, reference.as_ref());
            let default_modes = || {
                let mut m = vec![Mode::Scale { c: 10.0 }];
                if let Some(r) = &exp.reference {
                    m.insert(0, Mode::ResetInit { reference: r.display().to_string() });
                }
                m
            };
            let nc = NormscanConfig {
                layers: layers.unwrap_or_else(|| a.normscan_layers.clone()),
                dims,
                modes: modes.unwrap_or_else(default_modes),
            };
            save_report(&exp_normscan(&ctx, &nc)?, &exp.out)
        }
        Command::ExportHeatmap { base, mask, tensor, window, format, out } => {
            let b = load_checkpoint(&base)?;
            let (m, _) = BitMask::load(b.layout(), &mask)?;
            let slot = b.layout().slot_by_name(&tensor)?;
            let density = vicinity_density(&mask_matrix(&m, b.layout(), slot.layer, slot.kind)?, window)?;
            export_heatmap(&density, &out, format)?;
            Ok(Summary::default()
                .kv("tensor", tensor)
                .kv("rows", density.rows())
                .kv("cols", density.cols())
                .kv("out", out.display()))
        }
        Command::Generate { ckpt, prompt, tokens, temperature, seed } => {
            let p = load_checkpoint(&ckpt)?;
            let decoding = match temperature {
                Some(t) => Decoding::Temperature(t),
                None => Decoding::Greedy,
            };
            let out = generate(&p, &prompt, tokens, decoding, seed)?;
            let ids: Vec<String> = out.iter().map(u32::to_string).collect();
            Ok(Summary::default().kv("generated", out.len()).kv("tokens", ids.join(",")))
        }
        Command::InitConfig { out } => {
            cfg.validate()?;
            cfg.save(&out)?;
            Ok(Summary::default().kv("out", out.display()))
        }
        Command::Pipeline { out_dir } => {
            let mut run = cfg.clone();
            if let Some(d) = out_dir {
                run.out_dir = d;
            }
            let manifest = crate::pipeline::run_paper_analog(&run)?;
            Ok(Summary::default()
                .kv("steps", manifest.steps.len())
                .kv("config_sha256", manifest.config_sha256)
                .kv("manifest", crate::pipeline::manifest_path(&run.out_dir).display()))
        }
    }
}

fn load_exp(exp: &ExpArgs) -> Result<(ParamStore, Corpus, Option<ParamStore>)> {
    Ok((load_checkpoint(&exp.base)?, Corpus::load(&exp.test)?, load_reference(&exp.reference)?))
}

fn context<'a>(
    base: &'a ParamStore,
    exp: &'a ExpArgs,
    test: &'a Corpus,
    reference: Option<&'a ParamStore>,
) -> ExpContext<'a> {
    let base_id = exp.base.to_str().unwrap_or("base");
    ExpContext { base, base_id, test, reference }
}

/// Parse `args` (including the program name), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    threads_from_env();
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
