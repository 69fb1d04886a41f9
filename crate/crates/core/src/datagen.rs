//! Seed-driven synthetic e-commerce data.
//!
//! Generates the three corpora the benchmark runs on — a product catalog, a
//! user base, and a click log — plus the popularity tier assignment that the
//! tiered search indexes are partitioned by. All generation is
//! single-threaded and keyed off explicit seeds, so two runs with the same
//! config produce byte-identical files.
//!
//! Category separability is a deliberate property: each category owns a
//! disjoint slice of the vocabulary, and product titles draw only from their
//! category's slice. Query logs sample tokens from the clicked product's
//! title and corrupt them at a configurable noise rate, which makes
//! classifier difficulty controllable (noise 0 yields a linearly separable
//! corpus).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::PREFERENCE_DIM;

/// Named product attribute fields that always exist. `attribute_field_count`
/// counts these plus the generated filler fields.
pub const NAMED_PRODUCT_FIELDS: usize = 6;

const SYLLABLES: [&str; 50] = [
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo", "fu",
    "ga", "ge", "gi", "go", "gu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
    "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "ra", "re", "ri", "ro", "ru",
    "sa", "se", "si", "so", "su",
];

const BRANDS: [&str; 16] = [
    "nordvik", "apexion", "calvera", "dunmore", "eastlake", "ferrody", "glenmar", "hartwell",
    "ironpeak", "juniper", "kestrel", "lumina", "meridian", "oakline", "pinnacle", "quarry",
];

const COLORS: [&str; 12] = [
    "red", "blue", "green", "black", "white", "silver", "amber", "teal", "violet", "gray",
    "navy", "olive",
];

const REGIONS: [&str; 6] = ["north", "south", "east", "west", "central", "overseas"];
const DEVICES: [&str; 4] = ["desktop", "mobile", "tablet", "kiosk"];
const AGE_GROUPS: [&str; 5] = ["18-24", "25-34", "35-44", "45-59", "60+"];
const SEGMENTS: [&str; 4] = ["casual", "regular", "loyal", "wholesale"];

/// Configuration for catalog and user generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogConfig {
    pub product_count: usize,
    /// Total attribute fields per product, including the six named ones.
    pub attribute_field_count: usize,
    pub user_count: usize,
    pub category_count: usize,
    pub vocabulary_size: usize,
    /// Zipf exponent for the popularity distribution.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            product_count: 10_000,
            attribute_field_count: 32,
            user_count: 100,
            category_count: 10,
            vocabulary_size: 400,
            zipf_exponent: 1.0,
            seed: 42,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.attribute_field_count < NAMED_PRODUCT_FIELDS {
            return Err(CoreError::InvalidConfig {
                field: "attribute_field_count",
                reason: format!(
                    "must be at least {NAMED_PRODUCT_FIELDS}, got {}",
                    self.attribute_field_count
                ),
            });
        }
        if self.category_count == 0 {
            return Err(CoreError::InvalidConfig {
                field: "category_count",
                reason: "must be positive".into(),
            });
        }
        if self.vocabulary_size < self.category_count {
            return Err(CoreError::InvalidConfig {
                field: "vocabulary_size",
                reason: format!(
                    "must be at least category_count ({}), got {}",
                    self.category_count, self.vocabulary_size
                ),
            });
        }
        if self.zipf_exponent <= 0.0 || !self.zipf_exponent.is_finite() {
            return Err(CoreError::InvalidConfig {
                field: "zipf_exponent",
                reason: format!("must be a positive finite number, got {}", self.zipf_exponent),
            });
        }
        Ok(())
    }
}

/// One catalog entry. `extra_fields` pads the record out to
/// `attribute_field_count` total attribute fields; `popularity` is benchmark
/// metadata, not an attribute field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: u64,
    pub title: String,
    pub category_id: u32,
    pub brand: String,
    pub color: String,
    pub price: f64,
    pub popularity: f64,
    pub extra_fields: Vec<(String, String)>,
}

impl ProductRecord {
    pub fn field_count(&self) -> usize {
        NAMED_PRODUCT_FIELDS + self.extra_fields.len()
    }
}

/// One registered user. `latent_preference` is the hidden regression target
/// the preference model is trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: u64,
    pub profile_fields: Vec<(String, String)>,
    pub latent_preference: Vec<f32>,
}

/// One historical query: who searched, what they typed, and what they
/// clicked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLogEntry {
    pub user_id: u64,
    pub query_text: String,
    pub clicked_product_id: u64,
    pub clicked_category_id: u32,
}

/// Popularity tier label. `High` products are the cached head of the
/// `Medium` storage partition, so a `High` label implies membership in the
/// medium partition; `Low` is the disjoint cold half of the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Medium,
    Low,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Medium => "medium",
            Tier::Low => "low",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(Tier::High),
            "medium" => Ok(Tier::Medium),
            "low" => Ok(Tier::Low),
            other => Err(format!("unknown tier label {other:?}")),
        }
    }
}

/// Per-product tier labels for a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct TierAssignment {
    labels: HashMap<u64, Tier>,
}

impl TierAssignment {
    pub fn label(&self, product_id: u64) -> Option<Tier> {
        self.labels.get(&product_id).copied()
    }

    pub fn in_high(&self, product_id: u64) -> bool {
        self.label(product_id) == Some(Tier::High)
    }

    /// Membership in the medium *storage partition*, which contains both
    /// `High` and `Medium` labelled products.
    pub fn in_medium_partition(&self, product_id: u64) -> bool {
        matches!(self.label(product_id), Some(Tier::High) | Some(Tier::Medium))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, tier: Tier) -> usize {
        self.labels.values().filter(|&&t| t == tier).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, Tier)> + '_ {
        self.labels.iter().map(|(&id, &t)| (id, t))
    }

    pub fn from_labels(labels: HashMap<u64, Tier>) -> Self {
        TierAssignment { labels }
    }
}

/// Deterministic vocabulary word for a token index. Distinct for all indexes
/// below 125,000.
pub fn vocab_token(i: usize) -> String {
    let s = &SYLLABLES;
    format!(
        "{}{}{}",
        s[(i / (50 * 50)) % 50],
        s[(i / 50) % 50],
        s[i % 50]
    )
}

/// The contiguous vocabulary slice owned by one category. Slices are
/// disjoint across categories; leftover tokens at the tail of the vocabulary
/// belong to no category and only ever appear as query noise.
fn category_slice(cfg: &CatalogConfig, category: u32) -> std::ops::Range<usize> {
    let width = cfg.vocabulary_size / cfg.category_count;
    let start = category as usize * width;
    start..start + width
}

/// Normalized Zipf popularity for a rank (0 = most popular). The head value
/// is exactly 1.0 and values decay strictly, so every rank maps to a
/// distinct popularity in (0, 1].
fn zipf_popularity(rank: usize, exponent: f64) -> f64 {
    ((rank + 1) as f64).powf(-exponent)
}

/// Generate the product catalog. Product ids are sequential from zero;
/// popularity ranks are a seeded permutation of the catalog so popularity is
/// uncorrelated with id order.
pub fn generate_catalog(cfg: &CatalogConfig) -> Result<Vec<ProductRecord>, CoreError> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut ranks: Vec<usize> = (0..cfg.product_count).collect();
    ranks.shuffle(&mut rng);

    let filler_fields = cfg.attribute_field_count - NAMED_PRODUCT_FIELDS;
    let mut catalog = Vec::with_capacity(cfg.product_count);
    for id in 0..cfg.product_count {
        let category_id = (rng.gen_range(0..cfg.category_count)) as u32;
        let slice = category_slice(cfg, category_id);
        let title_len = rng.gen_range(3..=6);
        let title = (0..title_len)
            .map(|_| vocab_token(rng.gen_range(slice.clone())))
            .collect::<Vec<_>>()
            .join(" ");
        let brand = BRANDS[rng.gen_range(0..BRANDS.len())].to_string();
        let color = COLORS[rng.gen_range(0..COLORS.len())].to_string();
        // Log-uniform price between 1.00 and 1000.00, rounded to cents.
        let price = (10f64.powf(rng.gen_range(0.0..3.0)) * 100.0).round() / 100.0;
        let extra_fields = (0..filler_fields)
            .map(|f| {
                (
                    format!("attr{f:02}"),
                    vocab_token(rng.gen_range(0..cfg.vocabulary_size)),
                )
            })
            .collect();
        catalog.push(ProductRecord {
            product_id: id as u64,
            title,
            category_id,
            brand,
            color,
            price,
            popularity: zipf_popularity(ranks[id], cfg.zipf_exponent),
            extra_fields,
        });
    }
    Ok(catalog)
}

/// Generate the user base. Latent preference vectors are uniform draws in
/// [0, 1] and never surface in any API response; they exist only as the
/// regression target for preference model training.
pub fn generate_users(cfg: &CatalogConfig) -> Result<Vec<UserRecord>, CoreError> {
    cfg.validate()?;
    // Offset stream so users do not share the catalog's random sequence.
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut users = Vec::with_capacity(cfg.user_count);
    for id in 0..cfg.user_count {
        let profile_fields = vec![
            ("region".to_string(), REGIONS[rng.gen_range(0..REGIONS.len())].to_string()),
            ("device".to_string(), DEVICES[rng.gen_range(0..DEVICES.len())].to_string()),
            ("age_group".to_string(), AGE_GROUPS[rng.gen_range(0..AGE_GROUPS.len())].to_string()),
            ("segment".to_string(), SEGMENTS[rng.gen_range(0..SEGMENTS.len())].to_string()),
        ];
        let latent_preference = (0..PREFERENCE_DIM).map(|_| rng.gen::<f32>()).collect();
        users.push(UserRecord {
            user_id: id as u64,
            profile_fields,
            latent_preference,
        });
    }
    Ok(users)
}

/// Generate `n` query log entries. Users are drawn uniformly; clicked
/// products are drawn proportionally to popularity; query text is a random
/// subsequence of the clicked product's title tokens, each token corrupted
/// to a uniform vocabulary token with probability `noise_rate`.
pub fn generate_query_logs(
    catalog: &[ProductRecord],
    users: &[UserRecord],
    n: usize,
    noise_rate: f64,
    seed: u64,
) -> Result<Vec<QueryLogEntry>, CoreError> {
    if catalog.is_empty() {
        return Err(CoreError::EmptyInput("catalog"));
    }
    if users.is_empty() {
        return Err(CoreError::EmptyInput("users"));
    }
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(CoreError::InvalidConfig {
            field: "noise_rate",
            reason: format!("must be in [0, 1], got {noise_rate}"),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(2);

    // Cumulative popularity for proportional click sampling.
    let mut cumulative = Vec::with_capacity(catalog.len());
    let mut total = 0.0f64;
    for p in catalog {
        total += p.popularity;
        cumulative.push(total);
    }

    // Noise tokens are drawn from the catalog's observed title vocabulary,
    // so corrupted queries still hit indexed terms (usually in the wrong
    // category), which is what makes the noise rate a difficulty knob.
    let mut observed_vocab: Vec<&str> = catalog
        .iter()
        .flat_map(|p| p.title.split_whitespace())
        .collect();
    observed_vocab.sort_unstable();
    observed_vocab.dedup();

    let mut logs = Vec::with_capacity(n);
    for _ in 0..n {
        let user_id = users[rng.gen_range(0..users.len())].user_id;
        let u: f64 = rng.gen_range(0.0..total);
        let idx = cumulative.partition_point(|&c| c <= u).min(catalog.len() - 1);
        let product = &catalog[idx];
        let title_tokens: Vec<&str> = product.title.split_whitespace().collect();
        let take = rng.gen_range(2..=4.min(title_tokens.len().max(2))).min(title_tokens.len());
        // Random distinct positions, kept in title order.
        let mut positions: Vec<usize> = (0..title_tokens.len()).collect();
        positions.shuffle(&mut rng);
        let mut chosen: Vec<usize> = positions.into_iter().take(take).collect();
        chosen.sort_unstable();
        let query_tokens: Vec<String> = chosen
            .into_iter()
            .map(|pos| {
                if noise_rate > 0.0 && rng.gen_bool(noise_rate) {
                    observed_vocab[rng.gen_range(0..observed_vocab.len())].to_string()
                } else {
                    title_tokens[pos].to_string()
                }
            })
            .collect();
        logs.push(QueryLogEntry {
            user_id,
            query_text: query_tokens.join(" "),
            clicked_product_id: product.product_id,
            clicked_category_id: product.category_id,
        });
    }
    Ok(logs)
}

/// Assign popularity tiers: order the catalog by descending popularity
/// (ties broken by ascending product id), label the top `floor(0.15·N)` as
/// `High`, the rest of the top `floor(0.50·N)` as `Medium`, and the
/// remainder as `Low`. `High` products therefore stay inside the medium
/// storage partition.
pub fn assign_tiers(catalog: &[ProductRecord]) -> TierAssignment {
    let mut order: Vec<(u64, f64)> = catalog.iter().map(|p| (p.product_id, p.popularity)).collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let n = order.len();
    let high_count = (n as f64 * 0.15).floor() as usize;
    let medium_count = (n as f64 * 0.50).floor() as usize;

    let mut labels = HashMap::with_capacity(n);
    for (pos, (id, _)) in order.into_iter().enumerate() {
        let tier = if pos < high_count {
            Tier::High
        } else if pos < medium_count {
            Tier::Medium
        } else {
            Tier::Low
        };
        labels.insert(id, tier);
    }
    TierAssignment { labels }
}

// ---------------------------------------------------------------------------
// File formats: one JSON record per line for the corpora, a three-column CSV
// for tier assignments.
// ---------------------------------------------------------------------------

fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CoreError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_catalog(path: &Path, catalog: &[ProductRecord]) -> Result<(), CoreError> {
    write_ndjson(path, catalog)
}

pub fn read_catalog(path: &Path) -> Result<Vec<ProductRecord>, CoreError> {
    read_ndjson(path)
}

pub fn write_users(path: &Path, users: &[UserRecord]) -> Result<(), CoreError> {
    write_ndjson(path, users)
}

pub fn read_users(path: &Path) -> Result<Vec<UserRecord>, CoreError> {
    read_ndjson(path)
}

pub fn write_query_logs(path: &Path, logs: &[QueryLogEntry]) -> Result<(), CoreError> {
    write_ndjson(path, logs)
}

pub fn read_query_logs(path: &Path) -> Result<Vec<QueryLogEntry>, CoreError> {
    read_ndjson(path)
}

/// Write tier assignments as `product_id,tier,in_high` rows ordered by
/// product id.
pub fn write_tiers(path: &Path, tiers: &TierAssignment) -> Result<(), CoreError> {
    let mut rows: Vec<(u64, Tier)> = tiers.iter().collect();
    rows.sort_by_key(|&(id, _)| id);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "product_id,tier,in_high")?;
    for (id, tier) in rows {
        writeln!(w, "{},{},{}", id, tier.as_str(), tier == Tier::High)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tiers(path: &Path) -> Result<TierAssignment, CoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "product_id,tier,in_high" {
                return Err(CoreError::MalformedRecord {
                    line: 1,
                    reason: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let bad = |reason: String| CoreError::MalformedRecord { line: i + 1, reason };
        let id: u64 = parts
            .next()
            .ok_or_else(|| bad("missing product_id".into()))?
            .parse()
            .map_err(|e| bad(format!("product_id: {e}")))?;
        let tier: Tier = parts
            .next()
            .ok_or_else(|| bad("missing tier".into()))?
            .parse()
            .map_err(|e| bad(format!("tier: {e}")))?;
        let in_high: bool = parts
            .next()
            .ok_or_else(|| bad("missing in_high".into()))?
            .parse()
            .map_err(|e| bad(format!("in_high: {e}")))?;
        if in_high != (tier == Tier::High) {
            return Err(bad(format!(
                "in_high={in_high} contradicts tier={}",
                tier.as_str()
            )));
        }
        labels.insert(id, tier);
    }
    Ok(TierAssignment { labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CatalogConfig {
        CatalogConfig {
            product_count: 100,
            attribute_field_count: 32,
            user_count: 20,
            category_count: 5,
            vocabulary_size: 100,
            zipf_exponent: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn catalog_has_requested_shape() {
        let cfg = small_cfg();
        let catalog = generate_catalog(&cfg).unwrap();
        assert_eq!(catalog.len(), 100);
        for p in &catalog {
            assert_eq!(p.field_count(), 32);
            assert!(p.popularity > 0.0 && p.popularity <= 1.0);
            assert!((p.category_id as usize) < cfg.category_count);
            assert!(p.price >= 1.0 && p.price <= 1000.0);
        }
        // Sequential distinct ids.
        let ids: Vec<u64> = catalog.iter().map(|p| p.product_id).collect();
        assert_eq!(ids, (0..100).collect::<Vec<u64>>());
    }

    #[test]
    fn popularity_values_are_distinct() {
        let catalog = generate_catalog(&small_cfg()).unwrap();
        let mut pops: Vec<f64> = catalog.iter().map(|p| p.popularity).collect();
        pops.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in pops.windows(2) {
            assert!(w[0] < w[1], "duplicate popularity {}", w[0]);
        }
    }

    #[test]
    fn singleton_catalog_gets_full_popularity() {
        let cfg = CatalogConfig {
            product_count: 1,
            ..small_cfg()
        };
        let catalog = generate_catalog(&cfg).unwrap();
        assert_eq!(catalog[0].popularity, 1.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_catalog(&cfg).unwrap();
        let b = generate_catalog(&cfg).unwrap();
        assert_eq!(a, b);
        let ua = generate_users(&cfg).unwrap();
        let ub = generate_users(&cfg).unwrap();
        assert_eq!(ua, ub);
        let la = generate_query_logs(&a, &ua, 500, 0.1, 3).unwrap();
        let lb = generate_query_logs(&b, &ub, 500, 0.1, 3).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn zero_users_is_empty_not_error() {
        let cfg = CatalogConfig {
            user_count: 0,
            ..small_cfg()
        };
        assert!(generate_users(&cfg).unwrap().is_empty());
    }

    #[test]
    fn titles_stay_inside_category_vocabulary() {
        let cfg = small_cfg();
        let catalog = generate_catalog(&cfg).unwrap();
        for p in &catalog {
            let slice = category_slice(&cfg, p.category_id);
            let allowed: std::collections::HashSet<String> =
                slice.map(vocab_token).collect();
            for tok in p.title.split_whitespace() {
                assert!(allowed.contains(tok), "token {tok} outside category slice");
            }
        }
    }

    #[test]
    fn log_category_always_matches_clicked_product() {
        let cfg = small_cfg();
        let catalog = generate_catalog(&cfg).unwrap();
        let users = generate_users(&cfg).unwrap();
        let logs = generate_query_logs(&catalog, &users, 1000, 0.2, 11).unwrap();
        for log in &logs {
            let p = &catalog[log.clicked_product_id as usize];
            assert_eq!(log.clicked_category_id, p.category_id);
        }
    }

    #[test]
    fn noiseless_queries_only_use_title_tokens() {
        let cfg = small_cfg();
        let catalog = generate_catalog(&cfg).unwrap();
        let users = generate_users(&cfg).unwrap();
        let logs = generate_query_logs(&catalog, &users, 2000, 0.0, 5).unwrap();
        for log in &logs {
            let title: std::collections::HashSet<&str> = catalog[log.clicked_product_id as usize]
                .title
                .split_whitespace()
                .collect();
            for tok in log.query_text.split_whitespace() {
                assert!(title.contains(tok), "noiseless query token {tok} not in title");
            }
            assert!(!log.query_text.is_empty());
        }
    }

    #[test]
    fn click_frequency_tracks_popularity() {
        // Small catalog, many draws: the most popular product's click share
        // must sit within 10% (relative) of its normalized popularity.
        let cfg = CatalogConfig {
            product_count: 50,
            user_count: 5,
            ..small_cfg()
        };
        let catalog = generate_catalog(&cfg).unwrap();
        let users = generate_users(&cfg).unwrap();
        let n = 100_000;
        let logs = generate_query_logs(&catalog, &users, n, 0.0, 9).unwrap();

        let top = catalog
            .iter()
            .max_by(|a, b| a.popularity.partial_cmp(&b.popularity).unwrap())
            .unwrap();
        let total_pop: f64 = catalog.iter().map(|p| p.popularity).sum();
        let expected = top.popularity / total_pop;
        let observed = logs
            .iter()
            .filter(|l| l.clicked_product_id == top.product_id)
            .count() as f64
            / n as f64;
        let rel = (observed - expected).abs() / expected;
        assert!(
            rel < 0.10,
            "top product share {observed:.4} vs expected {expected:.4} (rel {rel:.4})"
        );
    }

    #[test]
    fn tier_counts_follow_floor_rule() {
        let cfg = small_cfg(); // 100 products
        let catalog = generate_catalog(&cfg).unwrap();
        let tiers = assign_tiers(&catalog);
        assert_eq!(tiers.count(Tier::High), 15);
        assert_eq!(tiers.count(Tier::Medium), 35); // medium partition = 50
        assert_eq!(tiers.count(Tier::Low), 50);
    }

    #[test]
    fn single_product_lands_in_low() {
        let cfg = CatalogConfig {
            product_count: 1,
            ..small_cfg()
        };
        let catalog = generate_catalog(&cfg).unwrap();
        let tiers = assign_tiers(&catalog);
        assert_eq!(tiers.count(Tier::High), 0);
        assert_eq!(tiers.count(Tier::Medium), 0);
        assert_eq!(tiers.count(Tier::Low), 1);
    }

    #[test]
    fn tiers_match_sort_and_slice_oracle() {
        let cfg = CatalogConfig {
            product_count: 1000,
            ..small_cfg()
        };
        let catalog = generate_catalog(&cfg).unwrap();
        let tiers = assign_tiers(&catalog);

        // Oracle: independent sort, then slice boundaries.
        let mut ranked: Vec<&ProductRecord> = catalog.iter().collect();
        ranked.sort_by(|a, b| b.popularity.partial_cmp(&a.popularity).unwrap());
        for (pos, p) in ranked.iter().enumerate() {
            let expected = if pos < 150 {
                Tier::High
            } else if pos < 500 {
                Tier::Medium
            } else {
                Tier::Low
            };
            assert_eq!(tiers.label(p.product_id), Some(expected), "position {pos}");
        }
    }

    #[test]
    fn high_tier_is_most_popular_subset_of_medium_partition() {
        let catalog = generate_catalog(&small_cfg()).unwrap();
        let tiers = assign_tiers(&catalog);
        let min_high = catalog
            .iter()
            .filter(|p| tiers.in_high(p.product_id))
            .map(|p| p.popularity)
            .fold(f64::INFINITY, f64::min);
        for p in &catalog {
            if !tiers.in_high(p.product_id) {
                assert!(p.popularity < min_high);
            }
            if tiers.in_high(p.product_id) {
                assert!(tiers.in_medium_partition(p.product_id));
            }
        }
    }

    #[test]
    fn file_round_trips_preserve_records() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let catalog = generate_catalog(&cfg).unwrap();
        let users = generate_users(&cfg).unwrap();
        let logs = generate_query_logs(&catalog, &users, 200, 0.1, 1).unwrap();
        let tiers = assign_tiers(&catalog);

        let cat_path = dir.path().join("catalog.ndjson");
        let users_path = dir.path().join("users.ndjson");
        let logs_path = dir.path().join("logs.ndjson");
        let tiers_path = dir.path().join("tiers.csv");

        write_catalog(&cat_path, &catalog).unwrap();
        write_users(&users_path, &users).unwrap();
        write_query_logs(&logs_path, &logs).unwrap();
        write_tiers(&tiers_path, &tiers).unwrap();

        assert_eq!(read_catalog(&cat_path).unwrap(), catalog);
        assert_eq!(read_users(&users_path).unwrap(), users);
        assert_eq!(read_query_logs(&logs_path).unwrap(), logs);
        assert_eq!(read_tiers(&tiers_path).unwrap(), tiers);
    }

    #[test]
    fn ndjson_keys_use_declared_field_names() {
        let cfg = small_cfg();
        let catalog = generate_catalog(&cfg).unwrap();
        let line = serde_json::to_value(&catalog[0]).unwrap();
        for key in [
            "product_id",
            "title",
            "category_id",
            "brand",
            "color",
            "price",
            "popularity",
            "extra_fields",
        ] {
            assert!(line.get(key).is_some(), "missing key {key}");
        }
        let users = generate_users(&cfg).unwrap();
        let line = serde_json::to_value(&users[0]).unwrap();
        for key in ["user_id", "profile_fields", "latent_preference"] {
            assert!(line.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn malformed_line_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.ndjson");
        std::fs::write(&path, "{\"product_id\": 0").unwrap();
        match read_catalog(&path) {
            Err(CoreError::MalformedRecord { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected malformed record error, got {other:?}"),
        }
    }

    #[test]
    fn undersized_field_count_is_rejected() {
        let cfg = CatalogConfig {
            attribute_field_count: 4,
            ..small_cfg()
        };
        assert!(matches!(
            generate_catalog(&cfg),
            Err(CoreError::InvalidConfig { field: "attribute_field_count", .. })
        ));
    }
}
