use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ppl::{generate, perplexity, perplexity_by_language, Decoding};
use super::report::{EvalReport, EvalRow};
use crate::error::{Error, Result};
use crate::langgen::Corpus;
use crate::mask::BitMask;
use crate::model::{Axis, Kind, LayerRef, ParamAddress, ParamStore};
use crate::numkernel::Rng;
use crate::perturb::{apply_perturbation, AxisSetting, Mode, PerturbationSpec, Target};
use crate::regionmap::{
    dimension_scores, random_region, ratio_count, select_dimensions, select_region_in, AggregateVariation, DimGroup,
    DimRef, DimensionSet, RankKey, RegionKind, RegionScope, Tier,
};
use crate::trainer::{finetune, TrainConfig};

/// Sweep and norm-scan cells at or above this multiple of the baseline are flagged.
pub const OUTLIER_FACTOR: f64 = 10.0;

/// What every experiment evaluates against. Perturbations always act on copies
/// of `base`.
#[derive(Debug, Clone, Copy)]
pub struct ExpContext<'a> {
    pub base: &'a ParamStore,
    pub base_id: &'a str,
    pub test: &'a Corpus,
    /// Values restored by `ResetInit`, usually the step-0 checkpoint.
    pub reference: Option<&'a ParamStore>,
}

struct Cell<'a> {
    experiment: &'a str,
    condition: String,
    mode: String,
    ratio_or_count: String,
    seed: Option<u64>,
}

impl ExpContext<'_> {
    fn perturb(&self, mode: &Mode, target: Target, seed: u64) -> Result<ParamStore> {
        let spec = PerturbationSpec { mode: mode.clone(), target, seed };
        Ok(apply_perturbation(self.base, &spec, self.reference)?.0)
    }

    /// One row per test language.
    fn eval_languages(&self, params: &ParamStore, cell: &Cell<'_>, test: &Corpus, out: &mut Vec<EvalRow>) -> Result<()> {
        for (lang, stats) in perplexity_by_language(params, test)? {
            out.push(self.row(cell, lang.to_string(), stats.ppl(), stats.tokens));
        }
        Ok(())
    }

    /// One row over the pooled test set.
    fn eval_pooled(&self, params: &ParamStore, cell: &Cell<'_>, out: &mut Vec<EvalRow>) -> Result<f64> {
        let stats = perplexity(params, self.test, None)?;
        out.push(self.row(cell, "all".into(), stats.ppl(), stats.tokens));
        Ok(stats.ppl())
    }

    fn row(&self, cell: &Cell<'_>, language: String, ppl: f64, tokens: usize) -> EvalRow {
        EvalRow {
            experiment: cell.experiment.into(),
            checkpoint: self.base_id.into(),
            condition: cell.condition.clone(),
            mode: cell.mode.clone(),
            ratio_or_count: cell.ratio_or_count.clone(),
            language,
            ppl,
            tokens,
            seed: cell.seed,
        }
    }
}

fn base_cell(experiment: &str) -> Cell<'_> {
    Cell { experiment, condition: "base".into(), mode: "none".into(), ratio_or_count: String::new(), seed: None }
}

fn require_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Input("at least one seed is required".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub ratios: Vec<f64>,
    pub modes: Vec<Mode>,
    /// Every condition is evaluated once per seed.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scope: RegionScope,
}

/// Perplexity per language after perturbing the Top, Bottom, and random regions
/// of each size, once per seed. Top and Bottom are fixed sets whose perturbation
/// draws vary with the seed; random regions are redrawn. Rows: `(1 + 3·R·M·S)·L`.
pub fn exp_scatter(ctx: &ExpContext<'_>, agg: &AggregateVariation, cfg: &ScatterConfig) -> Result<EvalReport> {
    require_seeds(&cfg.seeds)?;
    let total = ctx.base.total_params();
    let exp = "scatter";
    let mut rows = Vec::new();
    ctx.eval_languages(ctx.base, &base_cell(exp), ctx.test, &mut rows)?;
    let mut sizes = Vec::new();
    for &ratio in &cfg.ratios {
        let n = ratio_count(ratio, total)?;
        sizes.push(n);
        let layout = ctx.base.layout();
        let top = select_region_in(agg, layout, n, RegionKind::Top, RankKey::Consistent, cfg.scope)?;
        let bottom = select_region_in(agg, layout, n, RegionKind::Bottom, RankKey::Consistent, cfg.scope)?;
        for mode in &cfg.modes {
            let mut cell = |condition: &str, mask: &BitMask, seed: u64| -> Result<()> {
                let p = ctx.perturb(mode, Target::Scatter(mask.clone()), seed)?;
                let c = Cell {
                    experiment: exp,
                    condition: condition.into(),
                    mode: mode.label(),
                    ratio_or_count: ratio.to_string(),
                    seed: Some(seed),
                };
                log::info!("scatter ratio={ratio} condition={condition} seed={seed}");
                ctx.eval_languages(&p, &c, ctx.test, &mut rows)
            };
            for &s in &cfg.seeds {
                cell("top", &top, s)?;
                cell("bottom", &bottom, s)?;
                cell("random", &random_region(total, n, s)?, s)?;
            }
        }
    }
    Ok(EvalReport {
        experiment: exp.into(),
        rows,
        metadata: json!({
            "config": cfg,
            "region_sizes": sizes,
            "total_params": total,
            "run_ids": agg.run_ids,
            "rank_key": "bottom by max variation, top by min variation",
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeConfig {
    pub ratio: f64,
    /// Ascending; 0 evaluates the perturbed checkpoint without retraining.
    pub sample_counts: Vec<usize>,
    pub lang_a: u32,
    pub lang_b: u32,
    pub seed: u64,
    pub mode: Mode,
    pub train: TrainConfig,
    #[serde(default)]
    pub scope: RegionScope,
}

/// Perturb Top or Bottom, optionally freeze it, retrain on `k` documents of
/// language A, and evaluate A and B. Rows: `3 · counts · 2`.
pub fn exp_freeze(ctx: &ExpContext<'_>, agg: &AggregateVariation, train: &Corpus, cfg: &FreezeConfig) -> Result<EvalReport> {
    if cfg.sample_counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Input("sample counts must be ascending".into()));
    }
    let pool = train.language(cfg.lang_a);
    let max = cfg.sample_counts.last().copied().unwrap_or(0);
    if pool.len() < max {
        return Err(Error::Input(format!("language {} has {} training documents, {max} requested", cfg.lang_a, pool.len())));
    }
    let eval_set = Corpus::new(
        ctx.test.split,
        ctx.test.documents.iter().filter(|d| d.lang == cfg.lang_a || d.lang == cfg.lang_b).cloned().collect(),
    );
    let base_ppl: Vec<(u32, f64)> =
        perplexity_by_language(ctx.base, &eval_set)?.into_iter().map(|(l, s)| (l, s.ppl())).collect();
    if base_ppl.len() != 2 {
        return Err(Error::Input("both evaluation languages need test documents".into()));
    }
    let n = ratio_count(cfg.ratio, ctx.base.total_params())?;
    let exp = "freeze";
    let mut rows = Vec::new();
    let conditions = [("top_freeze", RegionKind::Top, true), ("bottom_freeze", RegionKind::Bottom, true), (
        "bottom_unfreeze",
        RegionKind::Bottom,
        false,
    )];
    for (label, which, freeze) in conditions {
        let region = select_region_in(agg, ctx.base.layout(), n, which, RankKey::Consistent, cfg.scope)?;
        let perturbed = ctx.perturb(&cfg.mode, Target::Scatter(region.clone()), cfg.seed)?;
        for &k in &cfg.sample_counts {
            let mut p = perturbed.clone();
            if k > 0 {
                let subset = Corpus::new(pool.split, pool.documents[..k].to_vec());
                log::info!("freeze condition={label} samples={k}");
                finetune(&mut p, &subset, &cfg.train, freeze.then_some(&region))?;
            }
            let c = Cell {
                experiment: exp,
                condition: label.into(),
                mode: cfg.mode.label(),
                ratio_or_count: k.to_string(),
                seed: Some(cfg.seed),
            };
            ctx.eval_languages(&p, &c, &eval_set, &mut rows)?;
        }
    }
    Ok(EvalReport {
        experiment: exp.into(),
        rows,
        metadata: json!({
            "config": cfg,
            "region_size": n,
            "base_ppl": base_ppl.iter().map(|(l, p)| json!({"language": l, "ppl": p})).collect::<Vec<_>>(),
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsConfig {
    pub setting: AxisSetting,
    pub counts: Vec<usize>,
    pub tiers: Vec<Tier>,
    /// Random dimensions are drawn once per seed; other tiers use the first seed.
    pub seeds: Vec<u64>,
    pub mode: Mode,
}

/// Perturb whole rows/columns chosen by mean variation tier, per language.
/// Rows: `(1 + C·(T' + S·[random]))·L` where `T'` counts non-random tiers.
pub fn exp_dims(ctx: &ExpContext<'_>, agg: &AggregateVariation, cfg: &DimsConfig) -> Result<EvalReport> {
    require_seeds(&cfg.seeds)?;
    let layout = ctx.base.layout();
    let groups = cfg.setting.groups(ctx.base.config().n_layers);
    let scores = groups.iter().map(|&g| dimension_scores(agg, layout, g)).collect::<Result<Vec<_>>>()?;
    let exp = format!("dims_{}", cfg.setting.name());
    let mut rows = Vec::new();
    ctx.eval_languages(ctx.base, &base_cell(&exp), ctx.test, &mut rows)?;
    for &count in &cfg.counts {
        for &tier in &cfg.tiers {
            let seeds: &[u64] = if tier == Tier::Random { &cfg.seeds } else { &cfg.seeds[..1] };
            for &s in seeds {
                let dims = select_dimensions(&scores, tier, count, s)?;
                let p = ctx.perturb(&cfg.mode, Target::Dims(dims), s)?;
                let c = Cell {
                    experiment: &exp,
                    condition: tier.name().into(),
                    mode: cfg.mode.label(),
                    ratio_or_count: count.to_string(),
                    seed: Some(s),
                };
                log::info!("{exp} count={count} tier={}", tier.name());
                ctx.eval_languages(&p, &c, ctx.test, &mut rows)?;
            }
        }
    }
    Ok(EvalReport {
        experiment: exp.clone(),
        rows,
        metadata: json!({
            "config": cfg,
            "groups": groups.iter().map(DimGroup::label).collect::<Vec<_>>(),
        }),
    })
}

/// Axis of attn.o and ffn.down a sweep dimension indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Output columns: the residual-stream feature both matrices write.
    Residual,
    /// Input rows: attn.o's head-partitioned axis and ffn.down's hidden axis.
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    /// Random-dimension controls drawn with `seed`.
    pub n_random: usize,
    pub seed: u64,
    pub mode: Mode,
    pub axis: SweepAxis,
}

fn sweep_target(base: &ParamStore, d: usize, axis: SweepAxis) -> DimensionSet {
    let a = if axis == SweepAxis::Residual { Axis::Col } else { Axis::Row };
    let entries = (0..base.config().n_layers)
        .flat_map(|l| {
            [Kind::AttnO, Kind::FfnDown]
                .map(|kind| DimRef { group: DimGroup::new(LayerRef::Block(l), kind, a), index: d })
        })
        .collect();
    DimensionSet { tier: Tier::Random, entries }
}

/// Perturb one dimension of attn.o and ffn.down in every layer at once, for
/// each candidate dimension. Rows: `1 + k + n_random`, pooled over languages.
pub fn exp_layer_sweep(ctx: &ExpContext<'_>, cfg: &SweepConfig) -> Result<EvalReport> {
    let limit = match cfg.axis {
        SweepAxis::Residual => ctx.base.config().d_model,
        SweepAxis::Input => ctx.base.config().d_model.min(ctx.base.config().d_ff),
    };
    if let Some(&d) = cfg.dims.iter().find(|&&d| d >= limit) {
        return Err(Error::Input(format!("sweep dimension {d} outside 0..{limit}")));
    }
    let exp = "sweep";
    let mut rows = Vec::new();
    let none = Cell { experiment: exp, condition: "none".into(), mode: "none".into(), ratio_or_count: String::new(), seed: None };
    let base_ppl = ctx.eval_pooled(ctx.base, &none, &mut rows)?;
    let mut rng = Rng::new(cfg.seed).split("sweep/random_dims");
    let randoms: Vec<usize> = (0..cfg.n_random).map(|_| rng.below(limit as u64) as usize).collect();
    let mut impacts = Vec::new();
    let cells = cfg.dims.iter().map(|&d| ("dim", d)).chain(randoms.iter().map(|&d| ("random", d)));
    for (condition, d) in cells {
        let p = ctx.perturb(&cfg.mode, Target::Dims(sweep_target(ctx.base, d, cfg.axis)), cfg.seed)?;
        let c = Cell {
            experiment: exp,
            condition: condition.into(),
            mode: cfg.mode.label(),
            ratio_or_count: d.to_string(),
            seed: Some(cfg.seed),
        };
        log::info!("sweep condition={condition} dim={d}");
        let ppl = ctx.eval_pooled(&p, &c, &mut rows)?;
        if condition == "dim" {
            impacts.push((d, ppl));
        }
    }
    impacts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let outliers: Vec<usize> = impacts.iter().filter(|x| x.1 >= OUTLIER_FACTOR * base_ppl).map(|x| x.0).collect();
    Ok(EvalReport {
        experiment: exp.into(),
        rows,
        metadata: json!({
            "config": cfg,
            "base_ppl": base_ppl,
            "dims_by_impact": impacts.iter().map(|x| x.0).collect::<Vec<_>>(),
            "outlier_factor": OUTLIER_FACTOR,
            "outliers": outliers,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormscanConfig {
    pub layers: Vec<usize>,
    pub dims: Vec<usize>,
    pub modes: Vec<Mode>,
}

/// Perturb one input-norm weight at a time. Rows: `1 + layers·dims·modes`.
pub fn exp_normscan(ctx: &ExpContext<'_>, cfg: &NormscanConfig) -> Result<EvalReport> {
    let mc = ctx.base.config();
    if let Some(&l) = cfg.layers.iter().find(|&&l| l >= mc.n_layers) {
        return Err(Error::Input(format!("layer {l} outside 0..{}", mc.n_layers)));
    }
    if let Some(&d) = cfg.dims.iter().find(|&&d| d >= mc.d_model) {
        return Err(Error::Input(format!("norm dimension {d} outside 0..{}", mc.d_model)));
    }
    let exp = "normscan";
    let mut rows = Vec::new();
    let base_ppl = ctx.eval_pooled(ctx.base, &base_cell(exp), &mut rows)?;
    let mut outliers = Vec::new();
    for &l in &cfg.layers {
        for &d in &cfg.dims {
            for mode in &cfg.modes {
                let addr = ParamAddress::new(LayerRef::Block(l), Kind::NormInput, d, 0);
                let p = ctx.perturb(mode, Target::Scalar(addr), 0)?;
                let condition = format!("layer{l}.dim{d}");
                let c = Cell {
                    experiment: exp,
                    condition: condition.clone(),
                    mode: mode.label(),
                    ratio_or_count: "1".into(),
                    seed: None,
                };
                let ppl = ctx.eval_pooled(&p, &c, &mut rows)?;
                if ppl >= OUTLIER_FACTOR * base_ppl {
                    outliers.push(json!({"cell": condition, "mode": mode.label(), "ppl": ppl}));
                }
            }
        }
    }
    Ok(EvalReport {
        experiment: exp.into(),
        rows,
        metadata: json!({
            "config": cfg,
            "base_ppl": base_ppl,
            "outlier_factor": OUTLIER_FACTOR,
            "outliers": outliers,
        }),
    })
}

/// Side-by-side greedy continuations of each prompt under each labelled model.
pub fn generation_report(models: &[(&str, &ParamStore)], prompts: &[Vec<u32>], n: usize) -> Result<String> {
    let mut out = String::new();
    for (i, prompt) in prompts.iter().enumerate() {
        out.push_str(&format!("prompt {i}: {}\n", join_ids(prompt)));
        for (label, params) in models {
            let cont = generate(params, prompt, n, Decoding::Greedy, 0)?;
            out.push_str(&format!("  {label}: {}\n", join_ids(&cont)));
        }
        out.push('\n');
    }
    Ok(out)
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}
