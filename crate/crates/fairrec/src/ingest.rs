//! Loading rating logs with provider metadata, binarization, splits, and
//! dataset (de)serialization.
//!
//! Three delimited text files describe a dataset:
//! - ratings: `user,item,rating[,timestamp]`
//! - providers: `item,provider` (many-to-many)
//! - attributes: `provider,class` (class is a small non-negative integer)
//!
//! Delimiters are auto-detected between comma and tab; a header row is
//! skipped when detected. String keys are densified to indices in first
//! appearance order, with the key maps persisted alongside outputs.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Interaction, Provenance};

/// One parsed rating row, before binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user_key: String,
    pub item_key: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// How ratings compare against the binarization threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep rows with rating >= threshold.
    AtLeast,
    /// Keep rows with rating == threshold.
    Equal,
}

impl ThresholdMode {
    pub fn keeps(self, rating: f64, threshold: f64) -> bool {
        match self {
            ThresholdMode::AtLeast => rating >= threshold,
            ThresholdMode::Equal => (rating - threshold).abs() < 1e-9,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "at_least" | "at-least" | "gte" | ">=" => Ok(ThresholdMode::AtLeast),
            "equal" | "eq" | "=" | "==" => Ok(ThresholdMode::Equal),
            other => Err(Error::InvalidConfig(format!(
                "unknown threshold mode '{other}' (expected at_least or equal)"
            ))),
        }
    }
}

/// Index-to-key tables produced by densification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub providers: Vec<String>,
}

impl KeyMaps {
    /// Persists one entity's map as a two-column `index,key` CSV.
    pub fn save_one<P: AsRef<Path>>(keys: &[String], entity: &str, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["index", entity])?;
        for (idx, key) in keys.iter().enumerate() {
            w.write_record([idx.to_string().as_str(), key])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_all<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        Self::save_one(&self.users, "user", dir.join("user_map.csv"))?;
        Self::save_one(&self.items, "item", dir.join("item_map.csv"))?;
        Self::save_one(&self.providers, "provider", dir.join("provider_map.csv"))?;
        Ok(())
    }
}

fn detect_delimiter<P: AsRef<Path>>(path: P) -> Result<u8> {
    let content = std::fs::read_to_string(path.as_ref())?;
    let first = content.lines().next().unwrap_or("");
    Ok(if first.contains('\t') { b'\t' } else { b',' })
}

fn reader<P: AsRef<Path>>(path: P) -> Result<csv::Reader<std::fs::File>> {
    let delim = detect_delimiter(path.as_ref())?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(false)
        .flexible(true)
        .from_path(path.as_ref())?)
}

/// Parses a ratings file into raw rows. A first row whose rating column
/// does not parse as a number is treated as a header.
pub fn load_raw_ratings<P: AsRef<Path>>(path: P) -> Result<Vec<RawRating>> {
    let mut rows = Vec::new();
    for (idx, record) in reader(path)?.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::IngestRow {
            line,
            msg: e.to_string(),
        })?;
        if record.len() < 3 {
            return Err(Error::IngestRow {
                line,
                msg: format!("expected user,item,rating[,timestamp], found {} fields", record.len()),
            });
        }
        let rating = match record[2].trim().parse::<f64>() {
            Ok(r) if r.is_finite() => r,
            Ok(r) => {
                return Err(Error::IngestRow {
                    line,
                    msg: format!("non-finite rating {r}"),
                })
            }
            Err(_) if idx == 0 => continue, // header row
            Err(e) => {
                return Err(Error::IngestRow {
                    line,
                    msg: format!("bad rating '{}': {e}", &record[2]),
                })
            }
        };
        let timestamp = if record.len() > 3 && !record[3].trim().is_empty() {
            Some(record[3].trim().parse::<i64>().map_err(|e| Error::IngestRow {
                line,
                msg: format!("bad timestamp '{}': {e}", &record[3]),
            })?)
        } else {
            None
        };
        let user_key = record[0].trim().to_string();
        let item_key = record[1].trim().to_string();
        if user_key.is_empty() || item_key.is_empty() {
            return Err(Error::IngestRow {
                line,
                msg: "empty user or item key".into(),
            });
        }
        rows.push(RawRating {
            user_key,
            item_key,
            rating,
            timestamp,
        });
    }
    Ok(rows)
}

fn load_two_columns<P: AsRef<Path>>(path: P) -> Result<Vec<(String, String)>> {
    let mut rows = Vec::new();
    for (idx, record) in reader(path)?.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::IngestRow {
            line,
            msg: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::IngestRow {
                line,
                msg: format!("expected 2 columns, found {}", record.len()),
            });
        }
        rows.push((record[0].trim().to_string(), record[1].trim().to_string()));
    }
    Ok(rows)
}

/// Loads and binarizes a rating log with its provider metadata.
///
/// Duplicate (user, item) ratings keep the latest timestamp. Items
/// without any class-labeled provider are dropped with a logged count.
pub fn load_dataset<P: AsRef<Path>>(
    ratings_path: P,
    providers_path: P,
    attributes_path: P,
    threshold: f64,
    mode: ThresholdMode,
) -> Result<(Dataset, KeyMaps)> {
    let raw = load_raw_ratings(ratings_path)?;

    // provider -> class
    let mut provider_class: HashMap<String, u32> = HashMap::new();
    for (idx, (provider, class)) in load_two_columns(attributes_path)?.into_iter().enumerate() {
        let line = idx + 1;
        if idx == 0 && class.parse::<u32>().is_err() && class.to_lowercase() == "class" {
            continue; // header row
        }
        let class: u32 = class.parse().map_err(|e| Error::IngestRow {
            line,
            msg: format!("attribute class '{class}' not a class index: {e}"),
        })?;
        provider_class.insert(provider, class);
    }
    if provider_class.is_empty() {
        return Err(Error::Ingest("attributes file holds no labeled providers".into()));
    }

    // item key -> labeled provider keys
    let mut item_provider_keys: HashMap<String, Vec<String>> = HashMap::new();
    for (idx, (item, provider)) in load_two_columns(providers_path)?.into_iter().enumerate() {
        if idx == 0 && item.to_lowercase() == "item" && provider.to_lowercase() == "provider" {
            continue; // header row
        }
        if provider_class.contains_key(&provider) {
            let entry = item_provider_keys.entry(item).or_default();
            if !entry.contains(&provider) {
                entry.push(provider);
            }
        }
    }

    // binarize, then dedup (user,item) keeping the latest timestamp
    // (ties and missing timestamps resolve to the later row)
    let mut kept: HashMap<(String, String), (Option<i64>, usize)> = HashMap::new();
    let mut order = 0usize;
    for row in &raw {
        if !mode.keeps(row.rating, threshold) {
            continue;
        }
        let key = (row.user_key.clone(), row.item_key.clone());
        let candidate = (row.timestamp, order);
        order += 1;
        match kept.get(&key) {
            Some(&existing) if existing >= candidate => {}
            _ => {
                kept.insert(key, candidate);
            }
        }
    }
    // the map iteration order is arbitrary; sort by retained input order
    // for deterministic densification
    let mut ordered: Vec<(&(String, String), (Option<i64>, usize))> =
        kept.iter().map(|(k, &v)| (k, v)).collect();
    ordered.sort_by_key(|&(_, (_, ord))| ord);

    let mut dropped_items: HashSet<&str> = HashSet::new();
    let mut users: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut items: Vec<String> = Vec::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut providers: Vec<String> = Vec::new();
    let mut provider_index: HashMap<String, u32> = HashMap::new();
    let mut item_providers: Vec<Vec<u32>> = Vec::new();
    let mut provider_attribute: Vec<u32> = Vec::new();
    let mut interactions = Vec::new();

    for ((user_key, item_key), (timestamp, _)) in ordered {
        let provider_keys = match item_provider_keys.get(item_key) {
            Some(p) if !p.is_empty() => p,
            _ => {
                dropped_items.insert(item_key);
                continue;
            }
        };
        let user = match user_index.get(user_key) {
            Some(&u) => u,
            None => {
                let id = users.len() as u32;
                users.push(user_key.clone());
                user_index.insert(user_key.clone(), id);
                id
            }
        };
        let item = match item_index.get(item_key) {
            Some(&i) => i,
            None => {
                let id = items.len() as u32;
                items.push(item_key.clone());
                item_index.insert(item_key.clone(), id);
                let mut ids = Vec::with_capacity(provider_keys.len());
                for pk in provider_keys {
                    let pid = match provider_index.get(pk) {
                        Some(&p) => p,
                        None => {
                            let pid = providers.len() as u32;
                            providers.push(pk.clone());
                            provider_index.insert(pk.clone(), pid);
                            provider_attribute.push(provider_class[pk]);
                            pid
                        }
                    };
                    ids.push(pid);
                }
                item_providers.push(ids);
                id
            }
        };
        interactions.push(Interaction {
            user,
            item,
            rating: None,
            timestamp,
            provenance: Provenance::Base,
        });
    }

    if !dropped_items.is_empty() {
        log::info!(
            "dropped {} items without class-labeled providers",
            dropped_items.len()
        );
    }
    if interactions.is_empty() {
        return Err(Error::Ingest(
            "no interactions survived binarization and provider filtering".into(),
        ));
    }
    let attribute_cardinality =
        provider_attribute.iter().copied().max().unwrap_or(0) as usize + 1;
    let dataset = Dataset {
        num_users: users.len(),
        num_items: items.len(),
        interactions,
        item_providers,
        provider_attribute,
        attribute_cardinality,
    };
    dataset.validate()?;
    Ok((
        dataset,
        KeyMaps {
            users,
            items,
            providers,
        },
    ))
}

/// How interactions are partitioned into train/validation/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Temporal,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// (train, validation, test) fractions; must sum to 1.
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::Temporal,
            fractions: (0.7, 0.1, 0.2),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidConfig("split fractions must be positive".into()));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {}, expected 1",
                a + b + c
            )));
        }
        Ok(())
    }
}

/// The three per-user partitions of a dataset's interactions.
///
/// `train` is a full dataset (catalog metadata shared); validation and
/// test are held-out (user, item) observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

/// Splits interactions per user: floor(f_test·n) newest rows to test,
/// floor(f_val·n) before those to validation, remainder to train. Users
/// with fewer than 5 interactions stay wholly in train.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if spec.mode == SplitMode::Temporal
        && dataset.interactions.iter().any(|i| i.timestamp.is_none())
    {
        return Err(Error::Ingest(
            "temporal split requires a timestamp on every interaction".into(),
        ));
    }
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_users];
    for (idx, inter) in dataset.interactions.iter().enumerate() {
        per_user[inter.user as usize].push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for indices in &mut per_user {
        if indices.len() < 5 {
            train.extend(indices.iter().map(|&i| dataset.interactions[i]));
            continue;
        }
        match spec.mode {
            SplitMode::Temporal => {
                // stable: ties keep input order
                indices.sort_by_key(|&i| dataset.interactions[i].timestamp.unwrap());
            }
            SplitMode::Random => {
                indices.shuffle(&mut rng);
            }
        }
        let n = indices.len();
        let n_test = (n as f64 * spec.fractions.2).floor() as usize;
        let n_val = (n as f64 * spec.fractions.1).floor() as usize;
        let n_train = n - n_val - n_test;
        for (pos, &i) in indices.iter().enumerate() {
            let inter = dataset.interactions[i];
            if pos < n_train {
                train.push(inter);
            } else if pos < n_train + n_val {
                validation.push(inter);
            } else {
                test.push(inter);
            }
        }
    }
    if train.is_empty() {
        return Err(Error::Ingest("split produced an empty training set".into()));
    }
    let mut train_ds = dataset.clone();
    train_ds.interactions = train;
    Ok(Splits {
        train: train_ds,
        validation,
        test,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    num_users: usize,
    num_items: usize,
    attribute_cardinality: usize,
}

/// Serializes a dataset into a directory in the ingest format plus a
/// small metadata file; `load_dataset_dir` restores it exactly.
pub fn save_dataset_dir<P: AsRef<Path>>(dataset: &Dataset, dir: P) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("ratings.csv"))?;
    w.write_record(["user", "item", "rating", "timestamp", "provenance"])?;
    for i in &dataset.interactions {
        w.write_record([
            i.user.to_string(),
            i.item.to_string(),
            i.rating.map_or(String::new(), |r| format!("{r}")),
            i.timestamp.map_or(String::new(), |t| t.to_string()),
            i.provenance.as_str(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("providers.csv"))?;
    w.write_record(["item", "provider"])?;
    for (item, providers) in dataset.item_providers.iter().enumerate() {
        for &p in providers {
            w.write_record([item.to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("attributes.csv"))?;
    w.write_record(["provider", "class"])?;
    for (p, &class) in dataset.provider_attribute.iter().enumerate() {
        w.write_record([p.to_string(), class.to_string()])?;
    }
    w.flush()?;
    let meta = DatasetMeta {
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        attribute_cardinality: dataset.attribute_cardinality,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_dataset_dir<P: AsRef<Path>>(dir: P) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta: DatasetMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let mut interactions = Vec::new();
    for (idx, record) in reader(dir.join("ratings.csv"))?.records().enumerate() {
        if idx == 0 {
            continue; // header
        }
        let line = idx + 1;
        let record = record.map_err(|e| Error::IngestRow {
            line,
            msg: e.to_string(),
        })?;
        let field = |i: usize| -> &str { record.get(i).unwrap_or("") };
        let parse_err = |what: &str, e: String| Error::IngestRow {
            line,
            msg: format!("bad {what}: {e}"),
        };
        interactions.push(Interaction {
            user: field(0).parse().map_err(|e: std::num::ParseIntError| parse_err("user", e.to_string()))?,
            item: field(1).parse().map_err(|e: std::num::ParseIntError| parse_err("item", e.to_string()))?,
            rating: if field(2).is_empty() {
                None
            } else {
                Some(field(2).parse().map_err(|e: std::num::ParseFloatError| parse_err("rating", e.to_string()))?)
            },
            timestamp: if field(3).is_empty() {
                None
            } else {
                Some(field(3).parse().map_err(|e: std::num::ParseIntError| parse_err("timestamp", e.to_string()))?)
            },
            provenance: Provenance::parse(field(4))
                .ok_or_else(|| parse_err("provenance", format!("'{}'", field(4))))?,
        });
    }
    let mut item_providers: Vec<Vec<u32>> = vec![Vec::new(); meta.num_items];
    for (idx, record) in reader(dir.join("providers.csv"))?.records().enumerate() {
        if idx == 0 {
            continue;
        }
        let record = record.map_err(|e| Error::IngestRow {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let item: usize = record[0].parse().map_err(|_| Error::IngestRow {
            line: idx + 1,
            msg: format!("bad item id '{}'", &record[0]),
        })?;
        let provider: u32 = record[1].parse().map_err(|_| Error::IngestRow {
            line: idx + 1,
            msg: format!("bad provider id '{}'", &record[1]),
        })?;
        item_providers[item].push(provider);
    }
    let mut provider_attribute = Vec::new();
    for (idx, record) in reader(dir.join("attributes.csv"))?.records().enumerate() {
        if idx == 0 {
            continue;
        }
        let record = record.map_err(|e| Error::IngestRow {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let class: u32 = record[1].parse().map_err(|_| Error::IngestRow {
            line: idx + 1,
            msg: format!("bad class '{}'", &record[1]),
        })?;
        provider_attribute.push(class);
    }
    let dataset = Dataset {
        num_users: meta.num_users,
        num_items: meta.num_items,
        interactions,
        item_providers,
        provider_attribute,
        attribute_cardinality: meta.attribute_cardinality,
    };
    dataset.validate()?;
    Ok(dataset)
}
