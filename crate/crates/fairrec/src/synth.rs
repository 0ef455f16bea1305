//! Synthetic dataset generation with controlled catalog/interaction
//! imbalance.
//!
//! Two block models drive the generation: a catalog block `L` giving the
//! probability that an item's provider belongs to each attribute class,
//! and an observation block `O` giving the probability that a sampled
//! interaction touches each class. Within a class, item popularity follows
//! an exponential tail with scale `(|I_a| / omega)^2`: larger `omega`
//! concentrates interactions on a few head items, smaller `omega` makes
//! the selection near-uniform. Draws are taken from the exponential law
//! truncated to the class list via its inverse CDF, so no probability
//! mass piles up on the boundary item.

use std::collections::HashSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Interaction};

/// Parameters of one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    /// Catalog block: class probabilities for item-provider assignment.
    pub catalog_block: Vec<f64>,
    /// Observation block: class probabilities for interaction sampling.
    pub observation_block: Vec<f64>,
    /// Popularity scale omega; larger values sharpen the popularity tail.
    pub popularity_scale: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale defaults: omega is scaled with the item count so the
    /// tail shape matches the paper-scale setup.
    pub fn desk_scale(seed: u64) -> Self {
        SynthConfig {
            num_users: 3000,
            num_items: 300,
            num_interactions: 120_000,
            catalog_block: vec![0.5, 0.5],
            observation_block: vec![0.5, 0.5],
            popularity_scale: 450.0 * (300.0 / 3000.0),
            seed,
        }
    }

    pub fn paper_scale(seed: u64) -> Self {
        SynthConfig {
            num_users: 30_000,
            num_items: 3000,
            num_interactions: 1_200_000,
            catalog_block: vec![0.5, 0.5],
            observation_block: vec![0.5, 0.5],
            popularity_scale: 450.0,
            seed,
        }
    }

    pub fn with_blocks(mut self, x: f64, y: f64) -> Self {
        self.catalog_block = vec![x, 1.0 - x];
        self.observation_block = vec![y, 1.0 - y];
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, block) in [
            ("catalog_block", &self.catalog_block),
            ("observation_block", &self.observation_block),
        ] {
            if block.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} is empty")));
            }
            if block.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidConfig(format!(
                    "{name} entries must lie in [0, 1]"
                )));
            }
            let sum: f64 = block.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "{name} sums to {sum}, expected 1"
                )));
            }
        }
        if self.catalog_block.len() != self.observation_block.len() {
            return Err(Error::InvalidConfig(
                "catalog and observation blocks must have the same length".into(),
            ));
        }
        if self.num_interactions > self.num_users * self.num_items {
            return Err(Error::InvalidConfig(format!(
                "{} interactions exceed the {} possible unique pairs",
                self.num_interactions,
                self.num_users * self.num_items
            )));
        }
        if self.popularity_scale <= 0.0 {
            return Err(Error::InvalidConfig("popularity_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Splits `total` into per-class counts proportional to `probs` using
/// largest-remainder rounding; remainder ties go to the lower class index.
fn allocate_exact(probs: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = probs.iter().map(|p| (p * total as f64) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = probs[a] * total as f64 - counts[a] as f64;
        let fb = probs[b] * total as f64 - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total - assigned {
        counts[order[i % order.len()]] += 1;
    }
    let mut labels = Vec::with_capacity(total);
    for (class, &n) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat(class).take(n));
    }
    labels
}

fn sample_class(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return a;
        }
    }
    probs.len() - 1
}

/// Generates a dataset from the two block models.
///
/// Each item gets exactly one dedicated provider whose class is drawn
/// from the catalog block. Interactions are drawn user-uniformly, class
/// from the observation block, then item index within the class list from
/// the truncated exponential tail. Duplicate (u, i) pairs are redrawn
/// with the class held fixed; generation fails if `50 * o` draws do not
/// yield `o` unique pairs.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let num_classes = config.catalog_block.len();

    // One provider per item, provider id == item id. Class counts follow
    // the catalog block exactly (largest-remainder rounding) rather than
    // i.i.d. draws: with equal blocks, sampling noise would otherwise
    // decide which class is the catalog minority, flipping the group the
    // whole downstream experiment studies.
    let mut labels = allocate_exact(&config.catalog_block, config.num_items);
    labels.shuffle(&mut rng);
    let mut provider_attribute = Vec::with_capacity(config.num_items);
    let mut class_items: Vec<Vec<u32>> = vec![Vec::new(); num_classes];
    for (item, &class) in labels.iter().enumerate() {
        provider_attribute.push(class as u32);
        class_items[class].push(item as u32);
    }
    for (a, items) in class_items.iter().enumerate() {
        if items.is_empty() && config.observation_block[a] > 0.0 {
            return Err(Error::Synth(format!(
                "class {a} received no items but has observation mass {}",
                config.observation_block[a]
            )));
        }
    }

    // Per-class truncated-exponential samplers: scale (|I_a|/omega)^2,
    // support [0, |I_a|]; (scale, cdf mass inside the support).
    let exp_params: Vec<Option<(f64, f64)>> = class_items
        .iter()
        .map(|items| {
            if items.is_empty() {
                None
            } else {
                let len = items.len() as f64;
                let scale = (len / config.popularity_scale).powi(2);
                let mass = 1.0 - (-len / scale).exp();
                Some((scale, mass))
            }
        })
        .collect();

    let mut seen = HashSet::with_capacity(config.num_interactions);
    let mut interactions = Vec::with_capacity(config.num_interactions);
    let max_draws = 50 * config.num_interactions;
    let mut draws = 0usize;
    // The class is drawn once per interaction and kept through duplicate
    // redraws, so pair saturation inside one class cannot skew the
    // realized class shares.
    'outer: while interactions.len() < config.num_interactions {
        let class = sample_class(&mut rng, &config.observation_block);
        let items = &class_items[class];
        if items.is_empty() {
            continue;
        }
        let (scale, mass) = exp_params[class].unwrap();
        loop {
            if draws >= max_draws {
                return Err(Error::Synth(format!(
                    "failed to place {} unique pairs within {} draws ({} placed)",
                    config.num_interactions,
                    max_draws,
                    interactions.len()
                )));
            }
            draws += 1;
            let user = rng.gen_range(0..config.num_users as u32);
            let u: f64 = rng.gen();
            let x = -scale * (1.0 - u * mass).ln();
            let idx = (x as usize).min(items.len() - 1);
            let item = items[idx];
            if seen.insert((user, item)) {
                let order = interactions.len() as i64;
                interactions.push(Interaction {
                    user,
                    item,
                    rating: None,
                    timestamp: Some(order),
                    provenance: crate::model::Provenance::Base,
                });
                continue 'outer;
            }
        }
    }

    let dataset = Dataset {
        num_users: config.num_users,
        num_items: config.num_items,
        interactions,
        item_providers: (0..config.num_items as u32).map(|i| vec![i]).collect(),
        provider_attribute,
        attribute_cardinality: num_classes,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Enumerates the (L_x, O_y) grid with x >= y.
///
/// The default value set {0.1, 0.2, 0.3, 0.4, 0.5} yields 15 configs.
pub fn sweep_grid(base: &SynthConfig, values: &[f64]) -> Result<Vec<SynthConfig>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty sweep value list".into()));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "sweep values must be strictly ascending".into(),
        ));
    }
    if values.iter().any(|&v| v <= 0.0 || v > 0.5) {
        return Err(Error::InvalidConfig(
            "sweep values must lie in (0, 0.5]".into(),
        ));
    }
    let mut configs = Vec::new();
    for &x in values {
        for &y in values {
            if x >= y {
                configs.push(base.clone().with_blocks(x, y));
            }
        }
    }
    Ok(configs)
}

pub const DEFAULT_SWEEP_VALUES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_sensitive_representation, compute_group_stats};

    #[test]
    fn deterministic_from_seed() {
        let cfg = SynthConfig {
            num_users: 100,
            num_items: 20,
            num_interactions: 400,
            catalog_block: vec![0.5, 0.5],
            observation_block: vec![0.5, 0.5],
            popularity_scale: 4.0,
            seed: 42,
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn realized_catalog_share_tracks_block() {
        let mut cfg = SynthConfig::desk_scale(1);
        cfg.num_items = 3000;
        cfg.num_interactions = 60_000;
        cfg.popularity_scale = 450.0;
        let ds = generate(&cfg).unwrap();
        let reprs = build_sensitive_representation(&ds).unwrap();
        let stats = compute_group_stats(&ds, &reprs).unwrap();
        assert!((stats.catalog_repr[0] - 0.5).abs() < 0.02);
    }

    #[test]
    fn realized_observation_share_tracks_block() {
        let mut cfg = SynthConfig::desk_scale(7).with_blocks(0.5, 0.1);
        cfg.num_items = 3000;
        cfg.popularity_scale = 450.0;
        let ds = generate(&cfg).unwrap();
        let reprs = build_sensitive_representation(&ds).unwrap();
        let stats = compute_group_stats(&ds, &reprs).unwrap();
        assert!((stats.interaction_repr[0] - 0.1).abs() < 0.02);
        assert!((stats.catalog_repr[0] - 0.5).abs() < 0.02);
    }

    /// Upper critical value of the chi-square distribution via the
    /// Wilson-Hilferty approximation.
    fn chi2_critical(df: f64, z: f64) -> f64 {
        let h = 2.0 / (9.0 * df);
        df * (1.0 - h + z * h.sqrt()).powi(3)
    }

    #[test]
    fn tiny_omega_gives_near_uniform_popularity() {
        let cfg = SynthConfig {
            num_users: 2000,
            num_items: 100,
            num_interactions: 40_000,
            catalog_block: vec![0.5, 0.5],
            observation_block: vec![0.5, 0.5],
            popularity_scale: 0.0001,
            seed: 5,
        };
        let ds = generate(&cfg).unwrap();
        let pop = ds.item_popularity();
        for class in 0..2u32 {
            let items: Vec<usize> = (0..ds.num_items)
                .filter(|&i| ds.provider_attribute[i] == class)
                .collect();
            let total: usize = items.iter().map(|&i| pop[i]).sum();
            let expected = total as f64 / items.len() as f64;
            let chi2: f64 = items
                .iter()
                .map(|&i| {
                    let d = pop[i] as f64 - expected;
                    d * d / expected
                })
                .sum();
            // alpha = 0.01 -> z = 2.326
            let critical = chi2_critical(items.len() as f64 - 1.0, 2.326);
            assert!(
                chi2 < critical,
                "class {class}: chi2 {chi2} >= critical {critical}"
            );
        }
    }

    #[test]
    fn popularity_tail_decreases_along_class_index() {
        let ds = generate(&SynthConfig::desk_scale(3)).unwrap();
        let pop = ds.item_popularity();
        for class in 0..2u32 {
            let counts: Vec<usize> = (0..ds.num_items)
                .filter(|&i| ds.provider_attribute[i] == class)
                .map(|i| pop[i])
                .collect();
            // bucketed means must be non-increasing (exponential tail)
            let bucket = counts.len() / 4;
            let means: Vec<f64> = (0..4)
                .map(|b| {
                    let slice = &counts[b * bucket..(b + 1) * bucket];
                    slice.iter().sum::<usize>() as f64 / slice.len() as f64
                })
                .collect();
            for w in means.windows(2) {
                assert!(w[0] >= w[1], "bucket means not decreasing: {means:?}");
            }
        }
    }

    #[test]
    fn grid_counts() {
        let base = SynthConfig::desk_scale(0);
        assert_eq!(sweep_grid(&base, &DEFAULT_SWEEP_VALUES).unwrap().len(), 15);
        assert_eq!(sweep_grid(&base, &[0.5]).unwrap().len(), 1);
        let three = sweep_grid(&base, &[0.2, 0.4]).unwrap();
        let pairs: Vec<(f64, f64)> = three
            .iter()
            .map(|c| (c.catalog_block[0], c.observation_block[0]))
            .collect();
        assert_eq!(pairs, vec![(0.2, 0.2), (0.4, 0.2), (0.4, 0.4)]);
    }

    #[test]
    fn grid_rejects_empty_and_out_of_range() {
        let base = SynthConfig::desk_scale(0);
        assert!(sweep_grid(&base, &[]).is_err());
        assert!(sweep_grid(&base, &[0.6]).is_err());
        assert!(sweep_grid(&base, &[0.3, 0.2]).is_err());
    }

    #[test]
    fn zero_item_class_with_mass_errors() {
        let cfg = SynthConfig {
            num_users: 10,
            num_items: 5,
            num_interactions: 10,
            catalog_block: vec![0.0, 1.0],
            observation_block: vec![0.5, 0.5],
            popularity_scale: 1.0,
            seed: 1,
        };
        assert!(matches!(generate(&cfg), Err(Error::Synth(_))));
    }

    #[test]
    fn saturated_pair_space_errors_with_count() {
        // more unique pairs than possible
        let cfg = SynthConfig {
            num_users: 2,
            num_items: 2,
            num_interactions: 5,
            catalog_block: vec![0.5, 0.5],
            observation_block: vec![0.5, 0.5],
            popularity_scale: 1.0,
            seed: 1,
        };
        assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
    }
}
