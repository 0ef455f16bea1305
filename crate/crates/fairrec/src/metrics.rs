//! Evaluation measures: disparate relevance/visibility/exposure, NDCG@k,
//! and catalog/group coverage.
//!
//! The three disparity metrics share one shape: a per-user ratio of
//! minority-weighted mass over total mass across the top-k list, averaged
//! over users, compared against the minority's catalog contribution. They
//! differ only in the per-position weight (predicted score, 1, or a
//! logarithmic position discount). The per-list ratios weight items by
//! their raw provider counts, not the normalized shares.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupStats, RankedLists, SensitiveRepresentation};

/// Outcome of one disparity metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    /// |mean per-user minority ratio - C_min|.
    pub value: f64,
    /// Mean per-user minority ratio before subtracting C_min.
    pub minority_share: f64,
    /// Users dropped because of a degenerate denominator.
    pub excluded_users: usize,
    /// Per-user ratios; `None` for excluded users.
    pub per_user: Vec<Option<f64>>,
}

fn disparity_with_weight<W>(
    lists: &RankedLists,
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
    weight: W,
) -> Result<Disparity>
where
    W: Fn(usize, f64) -> f64,
{
    let mut per_user = Vec::with_capacity(lists.lists.len());
    let mut sum = 0.0;
    let mut included = 0usize;
    for list in &lists.lists {
        let mut num = 0.0;
        let mut den = 0.0;
        for (pos, &(item, score)) in list.iter().enumerate() {
            let w = weight(pos + 1, score);
            let counts = &reprs[item as usize].counts;
            num += w * f64::from(counts[minority_class]);
            den += w * counts.iter().map(|&c| f64::from(c)).sum::<f64>();
        }
        if den > 0.0 {
            let ratio = num / den;
            sum += ratio;
            included += 1;
            per_user.push(Some(ratio));
        } else {
            per_user.push(None);
        }
    }
    if included == 0 {
        return Err(Error::Metrics(
            "every user excluded by a degenerate denominator".into(),
        ));
    }
    let minority_share = sum / included as f64;
    Ok(Disparity {
        value: (minority_share - c_min).abs(),
        minority_share,
        excluded_users: lists.lists.len() - included,
        per_user,
    })
}

/// Gap between the minority's share of predicted relevance in the lists
/// and its catalog contribution.
pub fn disparate_relevance(
    lists: &RankedLists,
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
) -> Result<Disparity> {
    disparity_with_weight(lists, reprs, minority_class, c_min, |_, score| score)
}

/// Same gap on raw list-slot counts.
pub fn disparate_visibility(
    lists: &RankedLists,
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
) -> Result<Disparity> {
    disparity_with_weight(lists, reprs, minority_class, c_min, |_, _| 1.0)
}

/// Same gap with the position discount 1/log2(pos + 1) applied to both
/// numerator and denominator.
pub fn disparate_exposure(
    lists: &RankedLists,
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
) -> Result<Disparity> {
    disparity_with_weight(lists, reprs, minority_class, c_min, |pos, _| {
        1.0 / (pos as f64 + 1.0).log2()
    })
}

/// Outcome of the utility metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ndcg {
    pub value: f64,
    /// Per-user NDCG; `None` for users without test interactions.
    pub per_user: Vec<Option<f64>>,
}

/// Mean per-user NDCG@k with binary true relevance from the held-out
/// ground truth. Users with empty test sets are excluded.
pub fn ndcg_at_k(lists: &RankedLists, ground_truth: &[HashSet<u32>], k: usize) -> Result<Ndcg> {
    let mut per_user = Vec::with_capacity(lists.lists.len());
    let mut sum = 0.0;
    let mut included = 0usize;
    for (u, list) in lists.lists.iter().enumerate() {
        let truth = &ground_truth[u];
        if truth.is_empty() {
            per_user.push(None);
            continue;
        }
        let mut dcg = 0.0;
        for (pos, &(item, _)) in list.iter().take(k).enumerate() {
            if truth.contains(&item) {
                dcg += position_gain(pos + 1);
            }
        }
        let ideal_hits = truth.len().min(k);
        let idcg: f64 = (1..=ideal_hits).map(position_gain).sum();
        let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
        sum += ndcg;
        included += 1;
        per_user.push(Some(ndcg));
    }
    if included == 0 {
        return Err(Error::Metrics("no user has test interactions".into()));
    }
    Ok(Ndcg {
        value: sum / included as f64,
        per_user,
    })
}

// discount 1 at position 1, 1/log2(pos) afterwards
fn position_gain(pos: usize) -> f64 {
    if pos == 1 {
        1.0
    } else {
        1.0 / (pos as f64).log2()
    }
}

/// Fractions of the catalog, the minority-touched items, and the
/// remaining items that appear in at least one list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub tot: f64,
    /// Absent when no item has a minority provider.
    pub min: Option<f64>,
    /// Absent when every item has a minority provider.
    pub maj: Option<f64>,
}

pub fn coverage(
    lists: &RankedLists,
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
) -> Coverage {
    let num_items = reprs.len();
    let mut recommended = vec![false; num_items];
    for list in &lists.lists {
        for &(item, _) in list {
            recommended[item as usize] = true;
        }
    }
    let mut tot_hit = 0usize;
    let mut min_hit = 0usize;
    let mut min_size = 0usize;
    for (i, r) in reprs.iter().enumerate() {
        let is_min = r.counts[minority_class] > 0;
        if is_min {
            min_size += 1;
        }
        if recommended[i] {
            tot_hit += 1;
            if is_min {
                min_hit += 1;
            }
        }
    }
    let maj_size = num_items - min_size;
    Coverage {
        tot: tot_hit as f64 / num_items as f64,
        min: (min_size > 0).then(|| min_hit as f64 / min_size as f64),
        maj: (maj_size > 0).then(|| (tot_hit - min_hit) as f64 / maj_size as f64),
    }
}

/// The full evaluation bundle for one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub ndcg: f64,
    pub delta_relevance: f64,
    pub delta_visibility: f64,
    pub delta_exposure: f64,
    /// Mean per-user minority relevance share (before the |. - C_min|).
    pub minority_relevance_share: f64,
    pub cov_tot: f64,
    pub cov_min: Option<f64>,
    pub cov_maj: Option<f64>,
    pub excluded_users_relevance: usize,
    pub excluded_users_visibility: usize,
    pub excluded_users_exposure: usize,
    pub group_stats: GroupStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_user: Option<PerUserBreakdown>,
}

/// Per-user values backing the aggregate report; used for bootstrap
/// comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerUserBreakdown {
    pub ndcg: Vec<Option<f64>>,
    pub relevance_ratio: Vec<Option<f64>>,
    pub visibility_ratio: Vec<Option<f64>>,
    pub exposure_ratio: Vec<Option<f64>>,
}

/// Computes every metric on one set of ranked lists.
pub fn evaluate(
    lists: &RankedLists,
    reprs: &[SensitiveRepresentation],
    stats: &GroupStats,
    ground_truth: &[HashSet<u32>],
    keep_per_user: bool,
) -> Result<MetricsReport> {
    let a_min = stats.minority_class;
    let c_min = stats.catalog_minority_share();
    let rel = disparate_relevance(lists, reprs, a_min, c_min)?;
    let vis = disparate_visibility(lists, reprs, a_min, c_min)?;
    let exp = disparate_exposure(lists, reprs, a_min, c_min)?;
    let ndcg = ndcg_at_k(lists, ground_truth, lists.k)?;
    let cov = coverage(lists, reprs, a_min);
    Ok(MetricsReport {
        k: lists.k,
        ndcg: ndcg.value,
        delta_relevance: rel.value,
        delta_visibility: vis.value,
        delta_exposure: exp.value,
        minority_relevance_share: rel.minority_share,
        cov_tot: cov.tot,
        cov_min: cov.min,
        cov_maj: cov.maj,
        excluded_users_relevance: rel.excluded_users,
        excluded_users_visibility: vis.excluded_users,
        excluded_users_exposure: exp.excluded_users,
        group_stats: stats.clone(),
        per_user: keep_per_user.then(|| PerUserBreakdown {
            ndcg: ndcg.per_user,
            relevance_ratio: rel.per_user,
            visibility_ratio: vis.per_user,
            exposure_ratio: exp.per_user,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repr(counts: Vec<u32>) -> SensitiveRepresentation {
        let total: u32 = counts.iter().sum();
        let share = counts.iter().map(|&c| f64::from(c) / f64::from(total)).collect();
        SensitiveRepresentation { counts, share }
    }

    fn lists_of(k: usize, lists: Vec<Vec<(u32, f64)>>) -> RankedLists {
        RankedLists {
            k,
            lists,
            truncated_users: 0,
        }
    }

    #[test]
    fn relevance_fully_minority_is_zero() {
        let reprs = vec![repr(vec![1, 0]), repr(vec![2, 0])];
        let lists = lists_of(2, vec![vec![(0, 1.5), (1, 0.5)]]);
        let d = disparate_relevance(&lists, &reprs, 0, 1.0).unwrap();
        assert!(d.value.abs() < 1e-12);
    }

    #[test]
    fn relevance_hand_oracle() {
        // scores 2.0 on s=[1,0] and 1.0 on s=[0,1], C_min = 0.5
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1])];
        let lists = lists_of(2, vec![vec![(0, 2.0), (1, 1.0)]]);
        let d = disparate_relevance(&lists, &reprs, 0, 0.5).unwrap();
        assert!((d.value - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn relevance_excludes_nonpositive_denominator() {
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1])];
        let lists = lists_of(
            2,
            vec![
                vec![(0, -1.0), (1, -2.0)], // den < 0 -> excluded
                vec![(0, 2.0), (1, 1.0)],
            ],
        );
        let d = disparate_relevance(&lists, &reprs, 0, 0.5).unwrap();
        assert_eq!(d.excluded_users, 1);
        assert!(d.per_user[0].is_none());
        assert!((d.value - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn visibility_hand_oracle() {
        // 1 minority slot out of 10, all single-provider
        let mut reprs = vec![repr(vec![1, 0])];
        for _ in 0..9 {
            reprs.push(repr(vec![0, 1]));
        }
        let list: Vec<(u32, f64)> = (0..10u32).map(|i| (i, 1.0)).collect();
        let lists = lists_of(10, vec![list]);
        let d = disparate_visibility(&lists, &reprs, 0, 0.06).unwrap();
        assert!((d.value - 0.04).abs() < 1e-12);
    }

    #[test]
    fn visibility_all_majority_matching_contribution() {
        let reprs = vec![repr(vec![0, 1]), repr(vec![0, 2])];
        let lists = lists_of(2, vec![vec![(0, 1.0), (1, 0.5)]]);
        let d = disparate_visibility(&lists, &reprs, 0, 0.0).unwrap();
        assert!(d.value.abs() < 1e-12);
    }

    #[test]
    fn visibility_mean_of_identical_lists() {
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1])];
        let list = vec![(0u32, 1.0), (1u32, 0.8)];
        let one = lists_of(2, vec![list.clone()]);
        let many = lists_of(2, vec![list.clone(), list.clone(), list]);
        let a = disparate_visibility(&one, &reprs, 0, 0.2).unwrap();
        let b = disparate_visibility(&many, &reprs, 0, 0.2).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn exposure_equals_visibility_at_k1() {
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1])];
        let lists = lists_of(1, vec![vec![(0, 1.0)], vec![(1, 1.0)]]);
        let v = disparate_visibility(&lists, &reprs, 0, 0.3).unwrap();
        let e = disparate_exposure(&lists, &reprs, 0, 0.3).unwrap();
        assert!((v.value - e.value).abs() < 1e-12);
    }

    #[test]
    fn exposure_hand_oracle() {
        // [minority, majority], C_min = 0.5
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1])];
        let lists = lists_of(2, vec![vec![(0, 1.0), (1, 0.5)]]);
        let e = disparate_exposure(&lists, &reprs, 0, 0.5).unwrap();
        let w1 = 1.0 / 2.0_f64.log2();
        let w2 = 1.0 / 3.0_f64.log2();
        let expected = (w1 / (w1 + w2) - 0.5).abs();
        assert!((e.value - expected).abs() < 1e-12);
        assert!((e.value - 0.1131).abs() < 5e-4);
    }

    #[test]
    fn exposure_is_position_sensitive_while_visibility_is_not() {
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1]), repr(vec![0, 1])];
        let top = lists_of(3, vec![vec![(0, 3.0), (1, 2.0), (2, 1.0)]]);
        let bottom = lists_of(3, vec![vec![(1, 3.0), (2, 2.0), (0, 1.0)]]);
        let v_top = disparate_visibility(&top, &reprs, 0, 0.0).unwrap();
        let v_bottom = disparate_visibility(&bottom, &reprs, 0, 0.0).unwrap();
        assert!((v_top.value - v_bottom.value).abs() < 1e-12);
        let e_top = disparate_exposure(&top, &reprs, 0, 0.0).unwrap();
        let e_bottom = disparate_exposure(&bottom, &reprs, 0, 0.0).unwrap();
        assert!(e_top.value > e_bottom.value);
    }

    #[test]
    fn relevance_scale_invariance() {
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1]), repr(vec![1, 1])];
        let base = lists_of(3, vec![vec![(0, 2.0), (2, 1.5), (1, 1.0)]]);
        let scaled = lists_of(3, vec![vec![(0, 14.0), (2, 10.5), (1, 7.0)]]);
        let a = disparate_relevance(&base, &reprs, 0, 0.3).unwrap();
        let b = disparate_relevance(&scaled, &reprs, 0, 0.3).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn ndcg_perfect_and_zero() {
        let truth = vec![HashSet::from([0u32, 1])];
        let perfect = lists_of(3, vec![vec![(0, 3.0), (1, 2.0), (2, 1.0)]]);
        assert!((ndcg_at_k(&perfect, &truth, 3).unwrap().value - 1.0).abs() < 1e-12);
        let miss = lists_of(3, vec![vec![(2, 3.0), (3, 2.0), (4, 1.0)]]);
        assert!(ndcg_at_k(&miss, &truth, 3).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn ndcg_matches_naive_reference() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let (num_users, num_items, k) = (10usize, 20usize, 5usize);
        let mut lists = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..num_users {
            let mut items: Vec<u32> = (0..num_items as u32).collect();
            items.shuffle(&mut rng);
            lists.push(
                items[..k]
                    .iter()
                    .enumerate()
                    .map(|(p, &i)| (i, 1.0 / (p + 1) as f64))
                    .collect::<Vec<_>>(),
            );
            truth.push(
                (0..num_items as u32)
                    .filter(|_| rng.gen_bool(0.3))
                    .collect::<HashSet<u32>>(),
            );
        }
        let lists = lists_of(k, lists);
        let got = ndcg_at_k(&lists, &truth, k).unwrap().value;

        // naive reference
        let mut sum = 0.0;
        let mut count = 0;
        for u in 0..num_users {
            if truth[u].is_empty() {
                continue;
            }
            let gain = |pos: usize| -> f64 {
                if pos == 1 {
                    1.0
                } else {
                    1.0 / (pos as f64).log2()
                }
            };
            let mut dcg = 0.0;
            for (pos, &(item, _)) in lists.lists[u].iter().enumerate() {
                if truth[u].contains(&item) {
                    dcg += gain(pos + 1);
                }
            }
            let mut idcg = 0.0;
            for pos in 1..=truth[u].len().min(k) {
                idcg += gain(pos);
            }
            sum += dcg / idcg;
            count += 1;
        }
        assert!((got - sum / count as f64).abs() < 1e-12);
    }

    #[test]
    fn ndcg_errors_without_ground_truth() {
        let truth = vec![HashSet::new()];
        let lists = lists_of(2, vec![vec![(0, 1.0)]]);
        assert!(ndcg_at_k(&lists, &truth, 2).is_err());
    }

    #[test]
    fn coverage_hand_oracle() {
        // 10 items, 2 minority (0, 1); lists cover {0, 2, 3}
        let mut reprs = vec![repr(vec![1, 0]), repr(vec![1, 1])];
        for _ in 0..8 {
            reprs.push(repr(vec![0, 1]));
        }
        let lists = lists_of(3, vec![vec![(0, 3.0), (2, 2.0), (3, 1.0)]]);
        let cov = coverage(&lists, &reprs, 0);
        assert!((cov.tot - 0.3).abs() < 1e-12);
        assert!((cov.min.unwrap() - 0.5).abs() < 1e-12);
        assert!((cov.maj.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn coverage_full() {
        let reprs = vec![repr(vec![1, 0]), repr(vec![0, 1])];
        let lists = lists_of(2, vec![vec![(0, 1.0), (1, 0.5)]]);
        let cov = coverage(&lists, &reprs, 0);
        assert_eq!((cov.tot, cov.min, cov.maj), (1.0, Some(1.0), Some(1.0)));
    }

    #[test]
    fn coverage_absent_minority_reported_as_none() {
        let reprs = vec![repr(vec![0, 1]), repr(vec![0, 2])];
        let lists = lists_of(1, vec![vec![(0, 1.0)]]);
        let cov = coverage(&lists, &reprs, 0);
        assert!(cov.min.is_none());
    }
}
