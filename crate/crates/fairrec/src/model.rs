//! Immutable domain model: interactions, provider metadata, group
//! representations, and ranked lists.
//!
//! All other modules build on these types. A [`Dataset`] holds dense
//! user/item ids, the observed interactions, and the item→provider and
//! provider→attribute mappings. Per-item provider-group counts live in
//! [`SensitiveRepresentation`]; catalog/interaction group shares in
//! [`GroupStats`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a sampled interaction pair was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpsampleStrategy {
    /// Duplicate existing minority interactions, with repetitions.
    Real,
    /// Synthesize new (user, minority item) pairs, no repetitions.
    Fake,
    /// Like `Fake` but items drawn by popularity instead of minority share.
    FakeByPop,
}

impl UpsampleStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpsampleStrategy::Real => "real",
            UpsampleStrategy::Fake => "fake",
            UpsampleStrategy::FakeByPop => "fake_by_pop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(UpsampleStrategy::Real),
            "fake" => Some(UpsampleStrategy::Fake),
            "fake_by_pop" | "fake-by-pop" => Some(UpsampleStrategy::FakeByPop),
            _ => None,
        }
    }
}

/// Origin of an interaction row: observed data or an upsampled addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Base,
    Upsampled(UpsampleStrategy),
}

impl Provenance {
    pub fn as_str(&self) -> String {
        match self {
            Provenance::Base => "base".to_string(),
            Provenance::Upsampled(s) => format!("upsampled:{}", s.as_str()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "base" {
            return Some(Provenance::Base);
        }
        s.strip_prefix("upsampled:")
            .and_then(UpsampleStrategy::parse)
            .map(Provenance::Upsampled)
    }
}

/// A single observed (or upsampled) user-item pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
    pub provenance: Provenance,
}

impl Interaction {
    pub fn new(user: u32, item: u32) -> Self {
        Interaction {
            user,
            item,
            rating: None,
            timestamp: None,
            provenance: Provenance::Base,
        }
    }
}

/// Users, items, binarized interactions, and provider metadata.
///
/// Ids are dense: users in `[0, num_users)`, items in `[0, num_items)`,
/// providers in `[0, provider_attribute.len())`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: Vec<Interaction>,
    /// Provider ids per item, indexed by item id. Always non-empty per item.
    pub item_providers: Vec<Vec<u32>>,
    /// Attribute class per provider, indexed by provider id.
    pub provider_attribute: Vec<u32>,
    /// Number of attribute classes |A|.
    pub attribute_cardinality: usize,
}

impl Dataset {
    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.item_providers.len() != self.num_items {
            return Err(Error::InvalidDataset(format!(
                "item_providers has {} entries for {} items",
                self.item_providers.len(),
                self.num_items
            )));
        }
        for (item, providers) in self.item_providers.iter().enumerate() {
            if providers.is_empty() {
                return Err(Error::ItemWithoutProviders { item: item as u32 });
            }
            for &p in providers {
                match self.provider_attribute.get(p as usize) {
                    None => {
                        return Err(Error::InvalidDataset(format!(
                            "item {item} references unknown provider {p}"
                        )))
                    }
                    Some(&a) if (a as usize) >= self.attribute_cardinality => {
                        return Err(Error::InvalidDataset(format!(
                            "provider {p} has attribute class {a} outside [0, {})",
                            self.attribute_cardinality
                        )))
                    }
                    _ => {}
                }
            }
        }
        let mut seen = HashSet::with_capacity(self.interactions.len());
        for inter in &self.interactions {
            if (inter.user as usize) >= self.num_users {
                return Err(Error::InvalidDataset(format!(
                    "user id {} outside [0, {})",
                    inter.user, self.num_users
                )));
            }
            if (inter.item as usize) >= self.num_items {
                return Err(Error::InvalidDataset(format!(
                    "item id {} outside [0, {})",
                    inter.item, self.num_items
                )));
            }
            if inter.provenance == Provenance::Base && !seen.insert((inter.user, inter.item)) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate base interaction ({}, {})",
                    inter.user, inter.item
                )));
            }
        }
        Ok(())
    }

    /// Items each user has interacted with (including upsampled rows).
    pub fn user_item_sets(&self) -> Vec<HashSet<u32>> {
        let mut sets = vec![HashSet::new(); self.num_users];
        for inter in &self.interactions {
            sets[inter.user as usize].insert(inter.item);
        }
        sets
    }

    /// Number of interactions per item (multiset count).
    pub fn item_popularity(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_items];
        for inter in &self.interactions {
            counts[inter.item as usize] += 1;
        }
        counts
    }
}

/// Per-item provider-group counts and their normalized shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveRepresentation {
    /// Entry `a` is the number of the item's providers in class `a`.
    pub counts: Vec<u32>,
    /// `counts` normalized to sum to 1.
    pub share: Vec<f64>,
}

/// Builds the per-item sensitive attribute representation.
pub fn build_sensitive_representation(dataset: &Dataset) -> Result<Vec<SensitiveRepresentation>> {
    let num_classes = dataset.attribute_cardinality;
    let mut reprs = Vec::with_capacity(dataset.num_items);
    for (item, providers) in dataset.item_providers.iter().enumerate() {
        if providers.is_empty() {
            return Err(Error::ItemWithoutProviders { item: item as u32 });
        }
        let mut counts = vec![0u32; num_classes];
        for &p in providers {
            counts[dataset.provider_attribute[p as usize] as usize] += 1;
        }
        let total: u32 = counts.iter().sum();
        let share = counts
            .iter()
            .map(|&c| f64::from(c) / f64::from(total))
            .collect();
        reprs.push(SensitiveRepresentation { counts, share });
    }
    Ok(reprs)
}

/// Catalog and interaction representation per attribute class, plus the
/// identified minority class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    /// C^a: mean per-item share of class `a` over the catalog.
    pub catalog_repr: Vec<f64>,
    /// O^a: mean share of class `a` over the observed interactions.
    pub interaction_repr: Vec<f64>,
    /// argmin over catalog_repr, ties broken by lowest class index.
    pub minority_class: usize,
}

impl GroupStats {
    pub fn catalog_minority_share(&self) -> f64 {
        self.catalog_repr[self.minority_class]
    }

    pub fn interaction_minority_share(&self) -> f64 {
        self.interaction_repr[self.minority_class]
    }
}

/// Averages the per-item shares over the catalog and the interaction
/// multiset, and selects the minority class.
pub fn compute_group_stats(
    dataset: &Dataset,
    reprs: &[SensitiveRepresentation],
) -> Result<GroupStats> {
    if dataset.num_items == 0 || reprs.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    if dataset.interactions.is_empty() {
        return Err(Error::EmptyInteractions);
    }
    let num_classes = dataset.attribute_cardinality;
    let mut catalog = vec![0.0; num_classes];
    for r in reprs {
        for (a, s) in r.share.iter().enumerate() {
            catalog[a] += s;
        }
    }
    for c in &mut catalog {
        *c /= reprs.len() as f64;
    }
    let mut observed = vec![0.0; num_classes];
    for inter in &dataset.interactions {
        for (a, s) in reprs[inter.item as usize].share.iter().enumerate() {
            observed[a] += s;
        }
    }
    for o in &mut observed {
        *o /= dataset.interactions.len() as f64;
    }
    let minority_class = catalog
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .unwrap();
    Ok(GroupStats {
        catalog_repr: catalog,
        interaction_repr: observed,
        minority_class,
    })
}

/// Top-k recommendation lists with predicted relevance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLists {
    pub k: usize,
    /// Per user: (item, score), scores non-increasing.
    pub lists: Vec<Vec<(u32, f64)>>,
    /// Users whose candidate pool was smaller than k.
    pub truncated_users: usize,
}

/// Ranks the k highest-scoring non-excluded items per user.
///
/// Ties are broken by lower item id so the output is deterministic.
pub fn rank_top_k<F>(
    score: F,
    num_users: usize,
    num_items: usize,
    k: usize,
    exclude: &[HashSet<u32>],
) -> RankedLists
where
    F: Fn(usize, usize) -> f64,
{
    assert!(k >= 1, "k must be >= 1");
    let mut lists = Vec::with_capacity(num_users);
    let mut truncated = 0usize;
    for u in 0..num_users {
        let excluded = exclude.get(u);
        let mut candidates: Vec<(u32, f64)> = (0..num_items as u32)
            .filter(|i| excluded.map_or(true, |e| !e.contains(i)))
            .map(|i| (i, score(u, i as usize)))
            .collect();
        candidates.sort_unstable_by(|(ia, sa), (ib, sb)| {
            sb.partial_cmp(sa).unwrap().then(ia.cmp(ib))
        });
        if candidates.len() < k {
            truncated += 1;
        }
        candidates.truncate(k);
        lists.push(candidates);
    }
    RankedLists {
        k,
        lists,
        truncated_users: truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(
        item_providers: Vec<Vec<u32>>,
        provider_attribute: Vec<u32>,
        cardinality: usize,
        pairs: &[(u32, u32)],
    ) -> Dataset {
        let num_users = pairs.iter().map(|&(u, _)| u + 1).max().unwrap_or(1) as usize;
        Dataset {
            num_users,
            num_items: item_providers.len(),
            interactions: pairs.iter().map(|&(u, i)| Interaction::new(u, i)).collect(),
            item_providers,
            provider_attribute,
            attribute_cardinality: cardinality,
        }
    }

    #[test]
    fn representation_counts_per_class() {
        // one item whose three providers have classes [0, 1, 1]
        let ds = toy_dataset(vec![vec![0, 1, 2]], vec![0, 1, 1], 2, &[(0, 0)]);
        let reprs = build_sensitive_representation(&ds).unwrap();
        assert_eq!(reprs[0].counts, vec![1, 2]);
        assert!((reprs[0].share[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((reprs[0].share[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn representation_single_provider() {
        let ds = toy_dataset(vec![vec![0]], vec![0], 2, &[(0, 0)]);
        let reprs = build_sensitive_representation(&ds).unwrap();
        assert_eq!(reprs[0].counts, vec![1, 0]);
        assert_eq!(reprs[0].share, vec![1.0, 0.0]);
    }

    #[test]
    fn representation_three_item_catalog() {
        // hand enumeration: provider lists {[0],[1],[0,1]} with classes 0 and 1
        let ds = toy_dataset(vec![vec![0], vec![1], vec![0, 1]], vec![0, 1], 2, &[(0, 0)]);
        let reprs = build_sensitive_representation(&ds).unwrap();
        let counts: Vec<_> = reprs.iter().map(|r| r.counts.clone()).collect();
        assert_eq!(counts, vec![vec![1, 0], vec![0, 1], vec![1, 1]]);
    }

    #[test]
    fn representation_rejects_item_without_providers() {
        let mut ds = toy_dataset(vec![vec![0]], vec![0], 2, &[(0, 0)]);
        ds.item_providers[0].clear();
        match build_sensitive_representation(&ds) {
            Err(Error::ItemWithoutProviders { item: 0 }) => {}
            other => panic!("expected ItemWithoutProviders, got {other:?}"),
        }
    }

    #[test]
    fn group_stats_two_item_average() {
        // item0 fully class 0, item1 fully class 1; item0 hit once, item1 three times
        let ds = toy_dataset(
            vec![vec![0], vec![1]],
            vec![0, 1],
            2,
            &[(0, 0), (1, 1), (2, 1), (3, 1)],
        );
        let reprs = build_sensitive_representation(&ds).unwrap();
        let stats = compute_group_stats(&ds, &reprs).unwrap();
        assert!((stats.catalog_repr[0] - 0.5).abs() < 1e-12);
        assert!((stats.catalog_repr[1] - 0.5).abs() < 1e-12);
        assert!((stats.interaction_repr[0] - 0.25).abs() < 1e-12);
        assert!((stats.interaction_repr[1] - 0.75).abs() < 1e-12);
        assert_eq!(stats.minority_class, 0); // tie on C broken by lowest index
    }

    #[test]
    fn group_stats_rejects_empty_interactions() {
        let ds = toy_dataset(vec![vec![0]], vec![0], 2, &[(0, 0)]);
        let mut empty = ds.clone();
        empty.interactions.clear();
        let reprs = build_sensitive_representation(&ds).unwrap();
        assert!(matches!(
            compute_group_stats(&empty, &reprs),
            Err(Error::EmptyInteractions)
        ));
    }

    /// Independent naive double-loop re-derivation of C and O.
    fn brute_force_stats(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
        let num_classes = ds.attribute_cardinality;
        let share_of = |item: u32, a: usize| -> f64 {
            let providers = &ds.item_providers[item as usize];
            let in_class = providers
                .iter()
                .filter(|&&p| ds.provider_attribute[p as usize] as usize == a)
                .count();
            in_class as f64 / providers.len() as f64
        };
        let mut c = vec![0.0; num_classes];
        for a in 0..num_classes {
            for i in 0..ds.num_items as u32 {
                c[a] += share_of(i, a);
            }
            c[a] /= ds.num_items as f64;
        }
        let mut o = vec![0.0; num_classes];
        for a in 0..num_classes {
            for inter in &ds.interactions {
                o[a] += share_of(inter.item, a);
            }
            o[a] /= ds.interactions.len() as f64;
        }
        (c, o)
    }

    #[test]
    fn group_stats_match_brute_force_on_random_instance() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let num_items = 50;
        let num_users = 20;
        let mut item_providers = Vec::new();
        let mut provider_attribute = Vec::new();
        for _ in 0..num_items {
            let n = rng.gen_range(1..=3);
            let mut providers = Vec::new();
            for _ in 0..n {
                providers.push(provider_attribute.len() as u32);
                provider_attribute.push(rng.gen_range(0..3u32));
            }
            item_providers.push(providers);
        }
        let mut pairs = HashSet::new();
        while pairs.len() < 500 {
            pairs.insert((
                rng.gen_range(0..num_users as u32),
                rng.gen_range(0..num_items as u32),
            ));
        }
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort();
        let ds = Dataset {
            num_users,
            num_items,
            interactions: pairs.iter().map(|&(u, i)| Interaction::new(u, i)).collect(),
            item_providers,
            provider_attribute,
            attribute_cardinality: 3,
        };
        ds.validate().unwrap();
        let reprs = build_sensitive_representation(&ds).unwrap();
        let stats = compute_group_stats(&ds, &reprs).unwrap();
        let (c, o) = brute_force_stats(&ds);
        for a in 0..3 {
            assert!((stats.catalog_repr[a] - c[a]).abs() < 1e-12);
            assert!((stats.interaction_repr[a] - o[a]).abs() < 1e-12);
        }
        assert!((stats.catalog_repr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((stats.interaction_repr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_orders_by_score_and_excludes() {
        let scores = [0.9, 0.5, 0.7];
        let exclude = vec![HashSet::from([0u32])];
        let lists = rank_top_k(|_, i| scores[i], 1, 3, 2, &exclude);
        let items: Vec<u32> = lists.lists[0].iter().map(|&(i, _)| i).collect();
        assert_eq!(items, vec![2, 1]);
    }

    #[test]
    fn rank_ties_break_by_item_id() {
        let exclude = vec![HashSet::new()];
        let lists = rank_top_k(|_, _| 1.0, 1, 10, 4, &exclude);
        let items: Vec<u32> = lists.lists[0].iter().map(|&(i, _)| i).collect();
        assert_eq!(items, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rank_matches_full_sort_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (num_users, num_items, k) = (20usize, 30usize, 10usize);
        let scores: Vec<Vec<f64>> = (0..num_users)
            .map(|_| (0..num_items).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let exclude: Vec<HashSet<u32>> = (0..num_users)
            .map(|_| {
                (0..num_items as u32)
                    .filter(|_| rng.gen_bool(0.2))
                    .collect()
            })
            .collect();
        let lists = rank_top_k(|u, i| scores[u][i], num_users, num_items, k, &exclude);
        for u in 0..num_users {
            let mut oracle: Vec<(u32, f64)> = (0..num_items as u32)
                .filter(|i| !exclude[u].contains(i))
                .map(|i| (i, scores[u][i as usize]))
                .collect();
            oracle.sort_by(|(ia, sa), (ib, sb)| sb.partial_cmp(sa).unwrap().then(ia.cmp(ib)));
            oracle.truncate(k);
            assert_eq!(lists.lists[u], oracle, "user {u}");
        }
    }

    #[test]
    fn rank_short_candidate_pool_is_flagged() {
        let exclude = vec![HashSet::from([0u32, 1])];
        let lists = rank_top_k(|_, _| 1.0, 1, 3, 5, &exclude);
        assert_eq!(lists.lists[0].len(), 1);
        assert_eq!(lists.truncated_users, 1);
    }

    #[test]
    fn rank_invariant_under_positive_affine_transform() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..25).map(|_| rng.gen::<f64>()).collect();
        let exclude = vec![HashSet::new()];
        let base = rank_top_k(|_, i| scores[i], 1, 25, 8, &exclude);
        let transformed = rank_top_k(|_, i| 3.5 * scores[i] + 11.0, 1, 25, 8, &exclude);
        let ids = |l: &RankedLists| -> Vec<u32> { l.lists[0].iter().map(|&(i, _)| i).collect() };
        assert_eq!(ids(&base), ids(&transformed));
    }

    #[test]
    fn validate_rejects_duplicate_base_pairs() {
        let ds = toy_dataset(vec![vec![0]], vec![0], 2, &[(0, 0), (0, 0)]);
        assert!(ds.validate().is_err());
    }

    #[test]
    fn relabeling_items_leaves_stats_unchanged() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let num_items = 12usize;
        let item_providers: Vec<Vec<u32>> = (0..num_items as u32).map(|i| vec![i]).collect();
        let provider_attribute: Vec<u32> = (0..num_items).map(|_| rng.gen_range(0..2)).collect();
        let pairs: Vec<(u32, u32)> = (0..40)
            .map(|n| (n % 5, rng.gen_range(0..num_items as u32)))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        let ds = toy_dataset(item_providers.clone(), provider_attribute.clone(), 2, &pairs);
        let mut perm: Vec<u32> = (0..num_items as u32).collect();
        perm.shuffle(&mut rng);
        let mut permuted_providers = vec![Vec::new(); num_items];
        for (i, providers) in item_providers.iter().enumerate() {
            permuted_providers[perm[i] as usize] = providers.clone();
        }
        let permuted_pairs: Vec<(u32, u32)> =
            pairs.iter().map(|&(u, i)| (u, perm[i as usize])).collect();
        let permuted = toy_dataset(permuted_providers, provider_attribute, 2, &permuted_pairs);
        let s1 = compute_group_stats(&ds, &build_sensitive_representation(&ds).unwrap()).unwrap();
        let s2 = compute_group_stats(
            &permuted,
            &build_sensitive_representation(&permuted).unwrap(),
        )
        .unwrap();
        for a in 0..2 {
            assert!((s1.catalog_repr[a] - s2.catalog_repr[a]).abs() < 1e-12);
            assert!((s1.interaction_repr[a] - s2.interaction_repr[a]).abs() < 1e-12);
        }
    }
}
