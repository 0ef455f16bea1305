//! Training triplet construction and minority-interaction upsampling.
//!
//! `upsample` augments a training dataset until the minority group's
//! interaction representation reaches a target share, using one of three
//! item/user selection strategies. `build_triplets` turns the (possibly
//! augmented) interactions into (user, observed, unobserved) triplets for
//! pairwise optimization.

use std::collections::HashSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GroupStats, Interaction, Provenance, SensitiveRepresentation};

pub use crate::model::UpsampleStrategy;

/// How far to push the minority's interaction share, and with which
/// strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsampleConfig {
    pub strategy: UpsampleStrategy,
    /// Desired minority interaction share after upsampling.
    pub target_share: f64,
    /// Optional cap on the number of added pairs.
    pub max_added: Option<usize>,
    pub seed: u64,
}

/// Cumulative-weight sampler over item ids; weights can be zeroed out
/// when an item becomes ineligible.
struct WeightedItems {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightedItems {
    fn new(weights: Vec<f64>) -> Self {
        let mut w = WeightedItems {
            weights,
            cumulative: Vec::new(),
        };
        w.rebuild();
        w
    }

    fn rebuild(&mut self) {
        self.cumulative.clear();
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            self.cumulative.push(acc);
        }
    }

    fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        let total = self.total();
        if total <= 0.0 {
            return None;
        }
        let x: f64 = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= x);
        Some(idx.min(self.weights.len() - 1))
    }

    fn zero(&mut self, item: usize) {
        self.weights[item] = 0.0;
        self.rebuild();
    }

    /// Expected minority share of a single draw.
    fn mean_share(&self, shares: &[f64]) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 0.0;
        }
        self.weights
            .iter()
            .zip(shares)
            .map(|(&w, &s)| w * s)
            .sum::<f64>()
            / total
    }
}

/// Augments the training interactions so the recomputed minority share
/// O^a_min lands as close to `cfg.target_share` as granularity allows.
///
/// Base interactions are never removed or altered; all additions carry an
/// `Upsampled` provenance tag.
pub fn upsample(
    dataset: &Dataset,
    reprs: &[SensitiveRepresentation],
    stats: &GroupStats,
    cfg: &UpsampleConfig,
) -> Result<Dataset> {
    let a_min = stats.minority_class;
    let minority_share: Vec<f64> = reprs.iter().map(|r| r.share[a_min]).collect();
    if minority_share.iter().all(|&s| s <= 0.0) {
        return Err(Error::Upsample("no items with minority providers".into()));
    }
    let n0 = dataset.interactions.len() as f64;
    let sum0: f64 = dataset
        .interactions
        .iter()
        .map(|i| minority_share[i.item as usize])
        .sum();
    let current = sum0 / n0;
    let target = cfg.target_share;
    if target < current - 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "target share {target} below current minority share {current}; upsampling only adds minority mass"
        )));
    }

    // per-item base interaction indices, for `real` duplication
    let mut item_interactions: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_items];
    for (idx, inter) in dataset.interactions.iter().enumerate() {
        item_interactions[inter.item as usize].push(idx);
    }
    let popularity = dataset.item_popularity();

    let weights: Vec<f64> = (0..dataset.num_items)
        .map(|i| match cfg.strategy {
            UpsampleStrategy::Real => {
                if item_interactions[i].is_empty() {
                    0.0
                } else {
                    minority_share[i]
                }
            }
            UpsampleStrategy::Fake => minority_share[i],
            UpsampleStrategy::FakeByPop => {
                if minority_share[i] > 0.0 {
                    popularity[i] as f64
                } else {
                    0.0
                }
            }
        })
        .collect();
    let mut items = WeightedItems::new(weights);
    if items.total() <= 0.0 {
        return Err(Error::Upsample(format!(
            "strategy {} has no eligible items",
            cfg.strategy.as_str()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut augmented = dataset.clone();
    let mut pair_set: HashSet<(u32, u32)> = augmented
        .interactions
        .iter()
        .map(|i| (i.user, i.item))
        .collect();
    let mut sum = sum0;
    let mut n = n0;
    let mut added: Vec<f64> = Vec::new(); // minority share of each addition

    // closed-form estimate of the number of pairs needed, refined greedily
    let mean = items.mean_share(&minority_share);
    let mut budget = if mean > target {
        ((n0 * (target - current)) / (mean - target)).ceil().max(0.0) as usize
    } else {
        0
    };
    if let Some(cap) = cfg.max_added {
        budget = budget.min(cap);
    }

    let no_repetition = cfg.strategy != UpsampleStrategy::Real;
    let draw = |rng: &mut ChaCha8Rng,
                    items: &mut WeightedItems,
                    pair_set: &mut HashSet<(u32, u32)>,
                    augmented: &mut Dataset|
     -> Result<Option<f64>> {
        loop {
            let item = match items.sample(rng) {
                Some(i) => i,
                None => {
                    return Err(Error::Upsample(format!(
                        "{} strategy exhausted: every eligible item saturated",
                        cfg.strategy.as_str()
                    )))
                }
            };
            if cfg.strategy == UpsampleStrategy::Real {
                let source = item_interactions[item][rng.gen_range(0..item_interactions[item].len())];
                let mut inter = dataset.interactions[source];
                inter.provenance = Provenance::Upsampled(cfg.strategy);
                augmented.interactions.push(inter);
                return Ok(Some(minority_share[item]));
            }
            // fake strategies: pick a user who has not seen this item
            let mut user = None;
            for _ in 0..32 {
                let u = rng.gen_range(0..dataset.num_users as u32);
                if !pair_set.contains(&(u, item as u32)) {
                    user = Some(u);
                    break;
                }
            }
            if user.is_none() {
                // nearly saturated item: enumerate eligible users
                let eligible: Vec<u32> = (0..dataset.num_users as u32)
                    .filter(|&u| !pair_set.contains(&(u, item as u32)))
                    .collect();
                if eligible.is_empty() {
                    items.zero(item);
                    if items.total() <= 0.0 {
                        return Err(Error::Upsample(format!(
                            "{} strategy exhausted before reaching the target",
                            cfg.strategy.as_str()
                        )));
                    }
                    continue;
                }
                user = Some(eligible[rng.gen_range(0..eligible.len())]);
            }
            let user = user.unwrap();
            if no_repetition {
                pair_set.insert((user, item as u32));
            }
            augmented.interactions.push(Interaction {
                user,
                item: item as u32,
                rating: None,
                timestamp: None,
                provenance: Provenance::Upsampled(cfg.strategy),
            });
            return Ok(Some(minority_share[item]));
        }
    };

    for _ in 0..budget {
        match draw(&mut rng, &mut items, &mut pair_set, &mut augmented)? {
            Some(s) => {
                sum += s;
                n += 1.0;
                added.push(s);
            }
            None => break,
        }
    }
    // refine: keep adding while below target and draws still raise the
    // share in expectation; the expected-gain floor bounds unreachable
    // targets deterministically
    loop {
        if let Some(cap) = cfg.max_added {
            if added.len() >= cap {
                break;
            }
        }
        let o = sum / n;
        if o + 1e-12 >= target {
            break;
        }
        let mean = items.mean_share(&minority_share);
        if mean <= o + 1e-9 || (mean - o) / n < 1e-9 {
            break;
        }
        let s = match draw(&mut rng, &mut items, &mut pair_set, &mut augmented)? {
            Some(s) => s,
            None => break,
        };
        sum += s;
        n += 1.0;
        added.push(s);
    }
    // trim trailing additions while removal moves the share closer to target
    while let Some(&s) = added.last() {
        let gap = (sum / n - target).abs();
        let gap_without = ((sum - s) / (n - 1.0) - target).abs();
        if gap_without < gap {
            added.pop();
            sum -= s;
            n -= 1.0;
            let undone = augmented.interactions.pop().unwrap();
            if no_repetition {
                pair_set.remove(&(undone.user, undone.item));
            }
        } else {
            break;
        }
    }

    Ok(augmented)
}

/// One pairwise training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub user: u32,
    pub observed: u32,
    pub unobserved: u32,
    pub provenance: Provenance,
}

/// The precomputed training triplet set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub batch_size: usize,
}

pub const DEFAULT_TRIPLETS_PER_OBSERVATION: usize = 10;

/// Emits `triplets_per_observation` triplets for every observed (u, i)
/// occurrence, sampling the unobserved item uniformly outside the user's
/// interacted set. Users who interacted with every item are skipped.
pub fn build_triplets(
    dataset: &Dataset,
    triplets_per_observation: usize,
    seed: u64,
) -> Result<TripletSet> {
    if triplets_per_observation == 0 {
        return Err(Error::InvalidConfig(
            "triplets_per_observation must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_items = dataset.user_item_sets();
    let mut warned: HashSet<u32> = HashSet::new();
    let mut triplets = Vec::with_capacity(dataset.interactions.len() * triplets_per_observation);
    for inter in &dataset.interactions {
        let observed_set = &user_items[inter.user as usize];
        if observed_set.len() >= dataset.num_items {
            if warned.insert(inter.user) {
                log::warn!(
                    "user {} has interacted with all {} items; skipped in triplet generation",
                    inter.user,
                    dataset.num_items
                );
            }
            continue;
        }
        for _ in 0..triplets_per_observation {
            let j = loop {
                let candidate = rng.gen_range(0..dataset.num_items as u32);
                if !observed_set.contains(&candidate) {
                    break candidate;
                }
            };
            triplets.push(Triplet {
                user: inter.user,
                observed: inter.item,
                unobserved: j,
                provenance: inter.provenance,
            });
        }
    }
    Ok(TripletSet {
        triplets,
        batch_size: 1024,
    })
}

/// Minority interaction share of an interaction multiset, counting
/// duplicates.
pub fn minority_interaction_share(
    dataset: &Dataset,
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
) -> f64 {
    let sum: f64 = dataset
        .interactions
        .iter()
        .map(|i| reprs[i.item as usize].share[minority_class])
        .sum();
    sum / dataset.interactions.len() as f64
}
