//! The end-to-end recipe: corpus, pretraining, per-language fine-tunes,
//! variation analysis, and every experiment grid, recorded in a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cli::heatmap::{export_heatmap, HeatmapFormat};
use crate::cli::RunConfig;
use crate::error::{Error, Result};
use crate::evalx::{
    exp_dims, exp_freeze, exp_layer_sweep, exp_normscan, exp_scatter, generation_report, DimsConfig, EvalReport,
    ExpContext, FreezeConfig, NormscanConfig, ScatterConfig, SweepConfig,
};
use crate::io::{atomic_write, file_fingerprint};
use crate::langgen::{build_corpus, make_language_family, Corpus};
use crate::model::{load_checkpoint, Kind, LayerRef, ParamStore};
use crate::perturb::{apply_perturbation, AxisSetting, Mode, PerturbationSpec, Target};
use crate::regionmap::{
    aggregate_runs, mask_matrix, random_region, ratio_count, region_metadata, relative_variation, select_region_in,
    threshold_proportions, vicinity_density, AggregateVariation, RankKey, RegionKind, VariationMap,
};
use crate::trainer::{checkpoint_name, finetune_to_checkpoint, pretrain};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    pub inputs: Vec<ArtifactRecord>,
    pub outputs: Vec<ArtifactRecord>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config_sha256: String,
    pub steps: Vec<StepRecord>,
    /// Wall-clock per step; the only part that differs between identical runs.
    pub timing: Vec<StepTiming>,
}

impl ExperimentManifest {
    /// Equality of everything except wall-clock timing.
    pub fn same_outputs(&self, other: &Self) -> bool {
        self.config_sha256 == other.config_sha256 && self.steps == other.steps
    }

    pub fn step(&self, name: &str) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.name == name)
    }
}

/// Report artifacts, relative to the run directory.
pub const REPORT_ARTIFACTS: [&str; 9] = [
    "reports/thresholds.csv",
    "reports/scatter.csv",
    "reports/freeze.csv",
    "reports/dims_mixed.csv",
    "reports/dims_head.csv",
    "reports/dims_residual.csv",
    "reports/sweep.csv",
    "reports/normscan.csv",
    "reports/heatmap.pgm",
];

struct Recorder<'a> {
    root: &'a Path,
    steps: Vec<StepRecord>,
    timing: Vec<StepTiming>,
}

impl Recorder<'_> {
    fn record(&self, rel: &str) -> Result<ArtifactRecord> {
        Ok(ArtifactRecord { path: rel.to_string(), sha256: file_fingerprint(&self.root.join(rel))? })
    }

    /// Run one step, wrapping failures with its name and recording fingerprints.
    fn run(
        &mut self,
        name: &str,
        inputs: &[String],
        seeds: &[u64],
        body: impl FnOnce() -> Result<Vec<String>>,
    ) -> Result<()> {
        log::info!("step {name}");
        let wrap = |e: Error| Error::Step { step: name.to_string(), source: Box::new(e) };
        let start = Instant::now();
        let outputs = body().map_err(wrap)?;
        let rec = StepRecord {
            name: name.to_string(),
            inputs: inputs.iter().map(|p| self.record(p)).collect::<Result<_>>().map_err(wrap)?,
            outputs: outputs.iter().map(|p| self.record(p)).collect::<Result<_>>().map_err(wrap)?,
            seeds: seeds.to_vec(),
        };
        self.steps.push(rec);
        self.timing.push(StepTiming { name: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        Ok(())
    }
}

fn rel(p: &Path, root: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned()
}

fn save_report(report: &EvalReport, root: &Path, name: &str) -> Result<String> {
    let path = format!("reports/{name}.csv");
    report.save(&root.join(&path))?;
    Ok(path)
}

/// First `per_lang` documents of every language.
fn subset(test: &Corpus, per_lang: usize) -> Corpus {
    let mut docs = Vec::new();
    for l in test.languages() {
        docs.extend(test.documents.iter().filter(|d| d.lang == l).take(per_lang).cloned());
    }
    Corpus::new(test.split, docs)
}

/// The projection matrix holding the most scalars of `mask` (ties: canonical order).
fn densest_matrix(mask: &crate::mask::BitMask, base: &ParamStore) -> (LayerRef, Kind) {
    let mut best: Option<(usize, LayerRef, Kind)> = None;
    for s in base.layout().slots().iter().filter(|s| !s.kind.is_norm()) {
        let count = (s.offset..s.offset + s.len()).filter(|&i| mask.get(i)).count();
        if best.is_none_or(|b| count > b.0) {
            best = Some((count, s.layer, s.kind));
        }
    }
    let (_, layer, kind) = best.expect("layout has matrices");
    (layer, kind)
}

/// Execute every step under `cfg.out_dir` and write `manifest.json` there.
pub fn run_paper_analog(cfg: &RunConfig) -> Result<ExperimentManifest> {
    cfg.validate()?;
    let root = cfg.out_dir.as_path();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let config_json = cfg.to_json()?;
    atomic_write(&root.join("config.json"), config_json.as_bytes())?;
    let mut rec = Recorder { root, steps: Vec::new(), timing: Vec::new() };
    let c = &cfg.corpus;
    let a = &cfg.analysis;
    let k = c.finetune_languages;

    let (train_rel, test_rel) = ("corpus/train.jsonl".to_string(), "corpus/test.jsonl".to_string());
    let mut corpora = None;
    rec.run("gen-corpus", &[], &[c.skeleton_seed, c.grammar_seed, c.corpus_seed], || {
        let specs = make_language_family(c.languages, c.skeleton_seed, c.grammar_seed, cfg.model.vocab_size)?;
        let (train, test) = build_corpus(&specs, c.train_docs, c.test_docs, c.corpus_seed, cfg.model.max_seq_len)?;
        train.save(&root.join(&train_rel))?;
        test.save(&root.join(&test_rel))?;
        corpora = Some((train, test));
        Ok(vec![train_rel.clone(), test_rel.clone()])
    })?;
    let (train, test) = corpora.expect("corpus step ran");

    let ckpt_dir = root.join("checkpoints/pretrain");
    let base_rel = format!("checkpoints/pretrain/{}", checkpoint_name(cfg.pretrain.steps));
    let step0_rel = format!("checkpoints/pretrain/{}", checkpoint_name(0));
    rec.run("pretrain", std::slice::from_ref(&train_rel), &[cfg.init_seed, cfg.pretrain.seed], || {
        let mut p = ParamStore::build(&cfg.model, cfg.init_seed)?;
        let out = pretrain(&mut p, &train, &cfg.pretrain, &ckpt_dir)?;
        Ok(out.checkpoints.iter().map(|p| rel(p, root)).collect())
    })?;
    let base = load_checkpoint(&root.join(&base_rel))?;
    let step0 = load_checkpoint(&root.join(&step0_rel))?;

    let mut tuned_rels = Vec::new();
    for lang in 0..k as u32 {
        let out_rel = format!("checkpoints/finetune/lang{lang}.rgn");
        rec.run(&format!("finetune-lang{lang}"), &[base_rel.clone(), train_rel.clone()], &[cfg.finetune.seed], || {
            let mut p = base.clone();
            finetune_to_checkpoint(&mut p, &train.language(lang), &cfg.finetune, None, &base_rel, &root.join(&out_rel))?;
            Ok(vec![out_rel.clone()])
        })?;
        tuned_rels.push(out_rel);
    }

    let agg_rel = "analysis/aggregate.var".to_string();
    let mut agg: Option<AggregateVariation> = None;
    let mut analyze_inputs = vec![base_rel.clone()];
    analyze_inputs.extend(tuned_rels.iter().cloned());
    rec.run("analyze", &analyze_inputs, &[], || {
        let mut maps = Vec::new();
        let mut outs = Vec::new();
        for (lang, t) in tuned_rels.iter().enumerate() {
            let tuned = load_checkpoint(&root.join(t))?;
            let map: VariationMap = relative_variation(&base, &tuned, a.variation_eps)?;
            let var_rel = format!("analysis/lang{lang}.var");
            map.save(base.layout(), &root.join(&var_rel))?;
            outs.push(var_rel);
            maps.push(map);
        }
        let ids: Vec<String> = (0..k).map(|l| format!("lang{l}")).collect();
        let g = aggregate_runs(&maps, &ids)?;
        g.save(base.layout(), &root.join(&agg_rel))?;
        let mut table = String::from("theta,below,above\n");
        for &theta in &a.thresholds {
            let (below, above) = threshold_proportions(&g, theta)?;
            writeln!(table, "{theta},{below},{above}").expect("string write");
        }
        atomic_write(&root.join(REPORT_ARTIFACTS[0]), table.as_bytes())?;
        outs.push(agg_rel.clone());
        outs.push(REPORT_ARTIFACTS[0].into());
        agg = Some(g);
        Ok(outs)
    })?;
    let agg = agg.expect("analyze step ran");

    let ctx = ExpContext { base: &base, base_id: &base_rel, test: &test, reference: Some(&step0) };
    let exp_inputs = vec![base_rel.clone(), agg_rel.clone(), test_rel.clone()];

    rec.run("exp-scatter", &exp_inputs, &a.scatter_seeds, || {
        let sc = ScatterConfig {
            ratios: a.ratios.clone(),
            modes: a.scatter_modes.clone(),
            seeds: a.scatter_seeds.clone(),
            scope: a.region_scope,
        };
        let report = exp_scatter(&ctx, &agg, &sc)?;
        let csv = save_report(&report, root, "scatter")?;

        // Qualitative comparison at the smallest ratio.
        let n = ratio_count(a.ratios[0], base.total_params())?;
        let seed = a.scatter_seeds[0];
        let bottom = select_region_in(&agg, base.layout(), n, RegionKind::Bottom, RankKey::Consistent, a.region_scope)?;
        let perturb = |mask| {
            let spec = PerturbationSpec { mode: Mode::gauss(), target: Target::Scatter(mask), seed };
            apply_perturbation(&base, &spec, None).map(|r| r.0)
        };
        let pb = perturb(bottom)?;
        let pr = perturb(random_region(base.total_params(), n, seed)?)?;
        let prompts: Vec<Vec<u32>> = test
            .languages()
            .iter()
            .filter_map(|&l| test.documents.iter().find(|d| d.lang == l))
            .map(|d| d.tokens[..d.tokens.len().min(4)].to_vec())
            .collect();
        let text = generation_report(&[("base", &base), ("bottom", &pb), ("random", &pr)], &prompts, a.generation_tokens)?;
        let gen_rel = "reports/generation.txt".to_string();
        atomic_write(&root.join(&gen_rel), text.as_bytes())?;
        Ok(vec![csv, gen_rel])
    })?;

    rec.run("exp-freeze", &exp_inputs, &[a.freeze.seed, a.freeze.train.seed], || {
        let fc = FreezeConfig {
            ratio: a.freeze.ratio,
            sample_counts: a.freeze.sample_counts.clone(),
            lang_a: a.freeze.lang_a,
            lang_b: a.freeze.lang_b,
            seed: a.freeze.seed,
            mode: Mode::gauss(),
            train: a.freeze.train.clone(),
            scope: a.region_scope,
        };
        Ok(vec![save_report(&exp_freeze(&ctx, &agg, &train, &fc)?, root, "freeze")?])
    })?;

    rec.run("exp-dims", &exp_inputs, &a.dim_seeds, || {
        let mut outs = Vec::new();
        for setting in AxisSetting::ALL {
            let dc = DimsConfig {
                setting,
                counts: a.dim_counts.clone(),
                tiers: a.dim_tiers.clone(),
                seeds: a.dim_seeds.clone(),
                mode: a.dim_mode.clone(),
            };
            outs.push(save_report(&exp_dims(&ctx, &agg, &dc)?, root, &format!("dims_{}", setting.name()))?);
        }
        Ok(outs)
    })?;

    let scan_test = subset(&test, a.scan_docs_per_lang);
    let scan_ctx = ExpContext { test: &scan_test, ..ctx };
    let mut sweep_order: Vec<usize> = Vec::new();
    rec.run("exp-sweep", &[base_rel.clone(), test_rel.clone()], &[a.sweep_seed], || {
        let sc = SweepConfig {
            dims: (0..cfg.model.d_model).collect(),
            n_random: a.sweep_random,
            seed: a.sweep_seed,
            mode: a.sweep_mode.clone(),
            axis: a.sweep_axis,
        };
        let report = exp_layer_sweep(&scan_ctx, &sc)?;
        sweep_order = serde_json::from_value(report.metadata["dims_by_impact"].clone())?;
        Ok(vec![save_report(&report, root, "sweep")?])
    })?;

    rec.run("exp-normscan", &[base_rel.clone(), step0_rel.clone(), test_rel.clone()], &[], || {
        let mut dims: Vec<usize> = sweep_order.iter().take(a.normscan_top_from_sweep).copied().collect();
        dims.extend(a.normscan_dims.iter().copied().filter(|&d| d < cfg.model.d_model));
        dims.sort_unstable();
        dims.dedup();
        let nc = NormscanConfig {
            layers: a.normscan_layers.iter().copied().filter(|&l| l < cfg.model.n_layers).collect(),
            dims,
            modes: vec![Mode::ResetInit { reference: step0_rel.clone() }, Mode::Scale { c: 10.0 }],
        };
        Ok(vec![save_report(&exp_normscan(&scan_ctx, &nc)?, root, "normscan")?])
    })?;

    rec.run("export-heatmap", &[base_rel.clone(), agg_rel.clone()], &[], || {
        let n = ratio_count(a.heatmap_ratio, base.total_params())?;
        let mask = select_region_in(&agg, base.layout(), n, RegionKind::Bottom, RankKey::Consistent, a.region_scope)?;
        let mask_rel = "analysis/bottom.mask".to_string();
        let mut meta = region_metadata(RegionKind::Bottom, n, Some(a.heatmap_ratio), RankKey::Consistent, &agg_rel, None);
        meta.insert("scope".into(), serde_json::to_value(a.region_scope)?);
        mask.save(base.layout(), &root.join(&mask_rel), meta)?;
        let (layer, kind) = match &a.heatmap_tensor {
            Some(name) => {
                let s = base.layout().slot_by_name(name)?;
                (s.layer, s.kind)
            }
            None => densest_matrix(&mask, &base),
        };
        let density = vicinity_density(&mask_matrix(&mask, base.layout(), layer, kind)?, 3)?;
        let csv_rel = "reports/heatmap.csv".to_string();
        export_heatmap(&density, &root.join(REPORT_ARTIFACTS[8]), HeatmapFormat::Pgm)?;
        export_heatmap(&density, &root.join(&csv_rel), HeatmapFormat::Csv)?;
        let info = serde_json::json!({ "tensor": format!("{layer}.{}", kind.name()), "window": 3, "ratio": a.heatmap_ratio });
        let info_rel = "reports/heatmap.json".to_string();
        atomic_write(&root.join(&info_rel), serde_json::to_string_pretty(&info)?.as_bytes())?;
        Ok(vec![mask_rel, REPORT_ARTIFACTS[8].into(), csv_rel, info_rel])
    })?;

    // The output directory is where the run lives, not what it computes.
    let hashed = RunConfig { out_dir: PathBuf::new(), ..cfg.clone() }.to_json()?;
    let manifest = ExperimentManifest {
        config_sha256: hex::encode(<sha2::Sha256 as sha2::Digest>::digest(hashed.as_bytes())),
        steps: rec.steps,
        timing: rec.timing,
    };
    atomic_write(&root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}
