use serde::{Deserialize, Serialize};

use super::AggregateVariation;
use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::model::{Axis, Kind, LayerRef, Layout};
use crate::numkernel::{Rng, Tensor2D};

/// One family of dimensions: the rows or the columns of one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimGroup {
    pub layer: LayerRef,
    pub kind: Kind,
    pub axis: Axis,
}

impl DimGroup {
    pub fn new(layer: LayerRef, kind: Kind, axis: Axis) -> Self {
        Self { layer, kind, axis }
    }

    pub fn label(&self) -> String {
        let axis = match self.axis {
            Axis::Row => "row",
            Axis::Col => "col",
        };
        format!("{}.{}.{axis}", self.layer, self.kind.name())
    }

    /// Number of dimensions along the axis, rejecting vector-shaped tensors.
    pub fn extent(&self, layout: &Layout) -> Result<usize> {
        if self.kind.is_norm() {
            return Err(Error::NotMatrix(format!("{} is a vector", self.kind.name())));
        }
        let s = layout.slot(self.layer, self.kind)?;
        Ok(match self.axis {
            Axis::Row => s.rows,
            Axis::Col => s.cols,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimRef {
    pub group: DimGroup,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Top,
    Middle,
    Bottom,
    Random,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Top, Tier::Middle, Tier::Bottom, Tier::Random];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Top => "top",
            Tier::Middle => "middle",
            Tier::Bottom => "bottom",
            Tier::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSet {
    pub tier: Tier,
    pub entries: Vec<DimRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScores {
    pub group: DimGroup,
    pub scores: Vec<f64>,
}

/// Mean `vmax` over each row or column of one matrix; low scores mark Bottom dimensions.
pub fn dimension_scores(agg: &AggregateVariation, layout: &Layout, group: DimGroup) -> Result<GroupScores> {
    let extent = group.extent(layout)?;
    if agg.len() != layout.total() {
        return Err(Error::Dimension(format!("aggregate of {} for {} parameters", agg.len(), layout.total())));
    }
    let s = layout.slot(group.layer, group.kind)?;
    let vals = &agg.vmax[s.offset..s.offset + s.len()];
    let mut sums = vec![0.0f64; extent];
    for r in 0..s.rows {
        for c in 0..s.cols {
            let i = if group.axis == Axis::Row { r } else { c };
            sums[i] += f64::from(vals[r * s.cols + c]);
        }
    }
    let per = (s.len() / extent) as f64;
    Ok(GroupScores { group, scores: sums.into_iter().map(|x| x / per).collect() })
}

/// Pick `count` dimensions per group by tier. Middle takes the ascending ranks
/// starting at `(n − count) / 2`; ties go to the lower index.
pub fn select_dimensions(groups: &[GroupScores], tier: Tier, count: usize, seed: u64) -> Result<DimensionSet> {
    let root = Rng::new(seed).split("select_dimensions");
    let mut entries = Vec::new();
    for g in groups {
        let n = g.scores.len();
        if count > n {
            return Err(Error::Input(format!("{count} dimensions requested from {} with {n}", g.group.label())));
        }
        let picked: Vec<usize> = if tier == Tier::Random {
            let mut rng = root.split(&g.group.label());
            let mut v = rand::seq::index::sample(&mut rng, n, count).into_vec();
            v.sort_unstable();
            v
        } else {
            let mut asc: Vec<usize> = (0..n).collect();
            asc.sort_by(|&a, &b| g.scores[a].total_cmp(&g.scores[b]).then(a.cmp(&b)));
            match tier {
                Tier::Bottom => asc[..count].to_vec(),
                Tier::Middle => {
                    let start = (n - count) / 2;
                    asc[start..start + count].to_vec()
                }
                _ => {
                    let mut desc: Vec<usize> = (0..n).collect();
                    desc.sort_by(|&a, &b| g.scores[b].total_cmp(&g.scores[a]).then(a.cmp(&b)));
                    desc[..count].to_vec()
                }
            }
        };
        entries.extend(picked.into_iter().map(|index| DimRef { group: g.group, index }));
    }
    Ok(DimensionSet { tier, entries })
}

/// One tensor's slice of a mask as a 0/1 matrix (vectors become a column).
pub fn mask_matrix(mask: &BitMask, layout: &Layout, layer: LayerRef, kind: Kind) -> Result<Tensor2D> {
    let s = layout.slot(layer, kind)?;
    let data = (0..s.len()).map(|i| if mask.get(s.offset + i) { 1.0 } else { 0.0 }).collect();
    Tensor2D::from_vec(s.rows, s.cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn layout() -> Layout {
        Layout::new(&ModelConfig { n_layers: 1, d_model: 8, n_heads: 2, d_ff: 16, vocab_size: 20, ..Default::default() })
    }

    fn agg_with(layout: &Layout, fill: impl FnMut(usize) -> f32) -> AggregateVariation {
        let vmax: Vec<f32> = (0..layout.total()).map(fill).collect();
        AggregateVariation { vmin: vmax.clone(), vmax, run_ids: vec!["a".into(), "b".into()] }
    }

    #[test]
    fn scores_are_row_or_column_means() {
        let cfg = ModelConfig { n_layers: 1, d_model: 2, n_heads: 1, d_ff: 2, vocab_size: 4, ..Default::default() };
        let layout = Layout::new(&cfg);
        let q = layout.slot(LayerRef::Block(0), Kind::AttnQ).unwrap().offset;
        let mut agg = agg_with(&layout, |_| 0.0);
        agg.vmax[q..q + 4].copy_from_slice(&[0.1, 0.3, 0.1, 0.5]);
        let col = dimension_scores(&agg, &layout, DimGroup::new(LayerRef::Block(0), Kind::AttnQ, Axis::Col)).unwrap();
        assert!((col.scores[0] - 0.1).abs() < 1e-7 && (col.scores[1] - 0.4).abs() < 1e-7);
        let row = dimension_scores(&agg, &layout, DimGroup::new(LayerRef::Block(0), Kind::AttnQ, Axis::Row)).unwrap();
        assert!((row.scores[0] - 0.2).abs() < 1e-7 && (row.scores[1] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn norms_are_not_matrices() {
        let l = layout();
        let agg = agg_with(&l, |_| 0.0);
        let g = DimGroup::new(LayerRef::Block(0), Kind::NormInput, Axis::Row);
        assert!(matches!(dimension_scores(&agg, &l, g), Err(Error::NotMatrix(_))));
    }

    #[test]
    fn constant_map_scores_equal() {
        let l = layout();
        let agg = agg_with(&l, |_| 0.25);
        let s = dimension_scores(&agg, &l, DimGroup::new(LayerRef::Block(0), Kind::FfnDown, Axis::Col)).unwrap();
        assert!(s.scores.iter().all(|&x| x == s.scores[0]));
    }

    fn g(scores: Vec<f64>) -> GroupScores {
        GroupScores { group: DimGroup::new(LayerRef::Block(0), Kind::AttnO, Axis::Row), scores }
    }

    fn indices(set: &DimensionSet) -> Vec<usize> {
        set.entries.iter().map(|e| e.index).collect()
    }

    #[test]
    fn tier_examples() {
        let s = [g(vec![3.0, 1.0, 2.0])];
        assert_eq!(indices(&select_dimensions(&s, Tier::Bottom, 1, 0).unwrap()), [1]);
        assert_eq!(indices(&select_dimensions(&s, Tier::Middle, 1, 0).unwrap()), [2]);
        assert_eq!(indices(&select_dimensions(&s, Tier::Top, 1, 0).unwrap()), [0]);
        assert!(select_dimensions(&s, Tier::Top, 4, 0).is_err());
        let r = select_dimensions(&s, Tier::Random, 2, 9).unwrap();
        assert_eq!(r, select_dimensions(&s, Tier::Random, 2, 9).unwrap());
        assert_eq!(r.entries.len(), 2);
    }

    fn rank_oracle(scores: &[f64], tier: Tier, count: usize) -> Vec<usize> {
        let n = scores.len();
        // Rank of each index in ascending (score, index) order, by counting.
        let rank = |i: usize| (0..n).filter(|&j| scores[j] < scores[i] || (scores[j] == scores[i] && j < i)).count();
        let desc_rank = |i: usize| (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
        let start = (n - count) / 2;
        let mut pairs: Vec<(usize, usize)> = (0..n)
            .filter_map(|i| {
                let keep = match tier {
                    Tier::Bottom => rank(i) < count,
                    Tier::Middle => (start..start + count).contains(&rank(i)),
                    _ => desc_rank(i) < count,
                };
                keep.then_some((if tier == Tier::Top { desc_rank(i) } else { rank(i) }, i))
            })
            .collect();
        pairs.sort_unstable();
        pairs.into_iter().map(|(_, i)| i).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn selection_matches_rank_oracle(raw in proptest::collection::vec(0u8..50, 1..300), frac in 0.0f64..1.0) {
            let scores: Vec<f64> = raw.iter().map(|&x| f64::from(x) / 7.0).collect();
            let count = (frac * scores.len() as f64) as usize;
            for tier in [Tier::Top, Tier::Middle, Tier::Bottom] {
                let got = indices(&select_dimensions(&[g(scores.clone())], tier, count, 0).unwrap());
                prop_assert_eq!(got, rank_oracle(&scores, tier, count));
            }
        }

        #[test]
        fn scores_match_brute_force(seed in any::<u64>()) {
            let l = layout();
            let mut rng = crate::numkernel::Rng::new(seed);
            let agg = agg_with(&l, |_| rng.uniform() as f32);
            for kind in Kind::PROJECTIONS {
                for axis in [Axis::Row, Axis::Col] {
                    let grp = DimGroup::new(LayerRef::Block(0), kind, axis);
                    let s = l.slot(LayerRef::Block(0), kind).unwrap();
                    let got = dimension_scores(&agg, &l, grp).unwrap();
                    let n = if axis == Axis::Row { s.rows } else { s.cols };
                    for i in 0..n {
                        let vals: Vec<f64> = (0..s.len())
                            .filter(|&j| if axis == Axis::Row { j / s.cols == i } else { j % s.cols == i })
                            .map(|j| f64::from(agg.vmax[s.offset + j]))
                            .collect();
                        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                        prop_assert!((got.scores[i] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
                    }
                }
            }
        }
    }
}
