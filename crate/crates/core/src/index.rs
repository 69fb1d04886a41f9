//! Tiered search indexes.
//!
//! The catalog is split by popularity into three inverted indexes — a small
//! hot `high` index that is a cached subset of the medium partition, the
//! `medium` partition itself, and the cold `low` half — plus two forward
//! indexes: a compact rank-feature index used by the ranker's dot-product
//! scoring and a summary index holding every attribute field for response
//! assembly.
//!
//! `tier_search` probes the tiers hot-to-cold and stops as soon as it has
//! accumulated `limit` matches, so queries answered entirely by the hot
//! index never touch the colder ones.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::datagen::{ProductRecord, Tier, TierAssignment};
use crate::error::CoreError;
use crate::hash::{fnv1a64, Fnv1a64};
use crate::PREFERENCE_DIM;

/// Number of hash buckets for the brand and color one-hot blocks inside a
/// rank feature vector: 1 (price) + 1 (popularity) + 4 (brand) + 4 (color)
/// adds up to [`PREFERENCE_DIM`].
pub const ONE_HOT_BUCKETS: usize = 4;

/// One posting: a product containing the token and the token's frequency in
/// that product's indexed text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub product_id: u64,
    pub term_frequency: u32,
}

/// Inverted index over one popularity tier. Posting lists are ordered by
/// descending popularity, ties broken by ascending product id.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub tier: Tier,
    postings: HashMap<String, Vec<Posting>>,
    doc_count: usize,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn postings(&self, token: &str) -> &[Posting] {
        self.postings.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn token_count(&self) -> usize {
        self.postings.len()
    }
}

/// Full product record minus benchmark metadata, as served in responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSummary {
    pub product_id: u64,
    pub title: String,
    pub category_id: u32,
    pub brand: String,
    pub color: String,
    pub price: f64,
    pub extra_fields: Vec<(String, String)>,
}

impl From<&ProductRecord> for ProductSummary {
    fn from(p: &ProductRecord) -> Self {
        ProductSummary {
            product_id: p.product_id,
            title: p.title.clone(),
            category_id: p.category_id,
            brand: p.brand.clone(),
            color: p.color.clone(),
            price: p.price,
            extra_fields: p.extra_fields.clone(),
        }
    }
}

/// Everything the serving tier needs at query time: three tiered inverted
/// indexes, the two forward indexes, and per-product metadata used for
/// result ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexBundle {
    pub high: InvertedIndex,
    pub medium: InvertedIndex,
    pub low: InvertedIndex,
    rank: HashMap<u64, Vec<f32>>,
    summary: HashMap<u64, ProductSummary>,
    popularity: HashMap<u64, f64>,
    category: HashMap<u64, u32>,
}

/// Which tiers a search actually touched, and how many candidates each
/// touched tier contributed before truncation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TierProbes {
    pub high: bool,
    pub medium: bool,
    pub low: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TierSearchOutcome {
    pub product_ids: Vec<u64>,
    pub probes: TierProbes,
    /// Matches contributed per tier, in hot-to-cold order, before the final
    /// truncation to `limit`.
    pub per_tier_matches: [usize; 3],
    /// Wall time spent probing each tier, in hot-to-cold order; zero for
    /// tiers the early exit skipped. Services report these as sub-stage
    /// durations.
    pub per_tier_nanos: [u64; 3],
}

/// Lowercase whitespace tokenization, shared by index construction, query
/// parsing, and the text classifier's input path.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// The text a product is indexed under: title, brand, and color.
fn indexed_text(p: &ProductRecord) -> String {
    format!("{} {} {}", p.title, p.brand, p.color)
}

fn one_hot_bucket(value: &str) -> usize {
    (fnv1a64(value.as_bytes()) % ONE_HOT_BUCKETS as u64) as usize
}

/// Rank feature vector for one product: normalized price, popularity, and
/// hashed one-hot blocks for brand and color.
fn rank_feature_vector(p: &ProductRecord, max_price: f64) -> Vec<f32> {
    let mut v = vec![0.0f32; PREFERENCE_DIM];
    v[0] = if max_price > 0.0 { (p.price / max_price) as f32 } else { 0.0 };
    v[1] = p.popularity as f32;
    v[2 + one_hot_bucket(&p.brand)] = 1.0;
    v[2 + ONE_HOT_BUCKETS + one_hot_bucket(&p.color)] = 1.0;
    v
}

fn build_tier_index(
    tier: Tier,
    members: &[&ProductRecord],
    popularity: &HashMap<u64, f64>,
) -> InvertedIndex {
    let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
    for p in members {
        let mut counts: HashMap<String, u32> = HashMap::new();
        for tok in tokenize(&indexed_text(p)) {
            *counts.entry(tok).or_insert(0) += 1;
        }
        for (tok, tf) in counts {
            postings.entry(tok).or_default().push(Posting {
                product_id: p.product_id,
                term_frequency: tf,
            });
        }
    }
    for list in postings.values_mut() {
        list.sort_by(|a, b| {
            let pa = popularity[&a.product_id];
            let pb = popularity[&b.product_id];
            pb.partial_cmp(&pa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.product_id.cmp(&b.product_id))
        });
    }
    InvertedIndex {
        tier,
        postings,
        doc_count: members.len(),
    }
}

/// Build all indexes for a catalog under a tier assignment. Fails if the
/// assignment does not cover exactly the catalog's products.
pub fn build_indexes(
    catalog: &[ProductRecord],
    tiers: &TierAssignment,
) -> Result<IndexBundle, CoreError> {
    if tiers.len() != catalog.len() {
        return Err(CoreError::Inconsistent(format!(
            "catalog has {} products, tier assignment covers {}",
            catalog.len(),
            tiers.len()
        )));
    }
    for p in catalog {
        if tiers.label(p.product_id).is_none() {
            return Err(CoreError::Inconsistent(format!(
                "product {} has no tier label",
                p.product_id
            )));
        }
    }

    let popularity: HashMap<u64, f64> =
        catalog.iter().map(|p| (p.product_id, p.popularity)).collect();
    let category: HashMap<u64, u32> =
        catalog.iter().map(|p| (p.product_id, p.category_id)).collect();

    let high_members: Vec<&ProductRecord> = catalog
        .iter()
        .filter(|p| tiers.in_high(p.product_id))
        .collect();
    let medium_members: Vec<&ProductRecord> = catalog
        .iter()
        .filter(|p| tiers.in_medium_partition(p.product_id))
        .collect();
    let low_members: Vec<&ProductRecord> = catalog
        .iter()
        .filter(|p| tiers.label(p.product_id) == Some(Tier::Low))
        .collect();

    let max_price = catalog.iter().map(|p| p.price).fold(0.0f64, f64::max);
    let rank = catalog
        .iter()
        .map(|p| (p.product_id, rank_feature_vector(p, max_price)))
        .collect();
    let summary = catalog
        .iter()
        .map(|p| (p.product_id, ProductSummary::from(p)))
        .collect();

    Ok(IndexBundle {
        high: build_tier_index(Tier::High, &high_members, &popularity),
        medium: build_tier_index(Tier::Medium, &medium_members, &popularity),
        low: build_tier_index(Tier::Low, &low_members, &popularity),
        rank,
        summary,
        popularity,
        category,
    })
}

impl IndexBundle {
    pub fn popularity(&self, product_id: u64) -> Option<f64> {
        self.popularity.get(&product_id).copied()
    }

    pub fn category(&self, product_id: u64) -> Option<u32> {
        self.category.get(&product_id).copied()
    }

    pub fn summary(&self, product_id: u64) -> Option<&ProductSummary> {
        self.summary.get(&product_id)
    }

    pub fn product_count(&self) -> usize {
        self.summary.len()
    }

    /// Rank feature vectors for a batch of products, in input order.
    pub fn rank_features(&self, product_ids: &[u64]) -> Result<Vec<Vec<f32>>, CoreError> {
        product_ids
            .iter()
            .map(|&id| {
                self.rank
                    .get(&id)
                    .cloned()
                    .ok_or(CoreError::UnknownProduct(id))
            })
            .collect()
    }

    fn tier_index(&self, tier: Tier) -> &InvertedIndex {
        match tier {
            Tier::High => &self.high,
            Tier::Medium => &self.medium,
            Tier::Low => &self.low,
        }
    }

    /// Candidates in one tier matching any of `tokens`, excluding ids in
    /// `seen`, ordered by (distinct matched tokens desc, popularity desc,
    /// product id asc).
    fn search_one_tier(
        &self,
        tier: Tier,
        tokens: &[String],
        seen: &HashSet<u64>,
    ) -> Vec<u64> {
        let index = self.tier_index(tier);
        let mut match_counts: HashMap<u64, u32> = HashMap::new();
        let mut distinct: HashSet<&str> = HashSet::new();
        for tok in tokens {
            // A token repeated in the query counts once.
            if !distinct.insert(tok.as_str()) {
                continue;
            }
            for posting in index.postings(tok) {
                if !seen.contains(&posting.product_id) {
                    *match_counts.entry(posting.product_id).or_insert(0) += 1;
                }
            }
        }
        let mut candidates: Vec<(u64, u32)> = match_counts.into_iter().collect();
        candidates.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| {
                    let pa = self.popularity[&a.0];
                    let pb = self.popularity[&b.0];
                    pb.partial_cmp(&pa).unwrap_or(std::cmp::Ordering::Equal)
                })
                .then(a.0.cmp(&b.0))
        });
        candidates.into_iter().map(|(id, _)| id).collect()
    }

    /// Staged tier search: probe high, then medium (excluding products
    /// already found in high), then low, stopping as soon as accumulated
    /// matches reach `limit`. An empty token list returns an empty result
    /// without probing anything.
    pub fn tier_search(&self, tokens: &[String], limit: usize) -> TierSearchOutcome {
        let mut outcome = TierSearchOutcome::default();
        if tokens.is_empty() || limit == 0 {
            return outcome;
        }
        let mut seen: HashSet<u64> = HashSet::new();
        for (slot, tier) in [Tier::High, Tier::Medium, Tier::Low].into_iter().enumerate() {
            if outcome.product_ids.len() >= limit {
                break;
            }
            match tier {
                Tier::High => outcome.probes.high = true,
                Tier::Medium => outcome.probes.medium = true,
                Tier::Low => outcome.probes.low = true,
            }
            let probe_start = std::time::Instant::now();
            let matches = self.search_one_tier(tier, tokens, &seen);
            outcome.per_tier_nanos[slot] = probe_start.elapsed().as_nanos() as u64;
            outcome.per_tier_matches[slot] = matches.len();
            seen.extend(matches.iter().copied());
            outcome.product_ids.extend(matches);
        }
        outcome.product_ids.truncate(limit);
        outcome
    }

    /// FNV-1a checksum of the canonical snapshot serialization. Identical
    /// inputs produce identical checksums across runs and platforms.
    pub fn checksum(&self) -> u64 {
        fnv1a64(&write_snapshot(self))
    }
}

// ---------------------------------------------------------------------------
// Snapshot format
//
// Little-endian byte layout:
//   magic     7 bytes  "ESBIDX1"
//   sections  u32      always 6
//   per inverted index (tags 0=high 1=medium 2=low):
//     tag u8, doc_count u64, token_count u64,
//     per token (sorted): len u32 + utf8, postings u64,
//       per posting: product_id u64, term_frequency u32
//   rank section:    tag 3, count u64, dim u32,
//                    per id (sorted): id u64, dim * f32
//   summary section: tag 4, count u64, per id (sorted): id u64, title str,
//                    category u32, brand str, color str, price f64,
//                    extras u32, per extra: key str, value str
//   scalar section:  tag 5, count u64,
//                    per id (sorted): id u64, popularity f64, category u32
//
// Map iteration order never leaks into the bytes: all keys are sorted, so
// rebuilding the same catalog yields byte-identical snapshots.
// ---------------------------------------------------------------------------

pub const SNAPSHOT_MAGIC: &[u8; 7] = b"ESBIDX1";

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn write_inverted(buf: &mut Vec<u8>, tag: u8, index: &InvertedIndex) {
    buf.push(tag);
    buf.extend_from_slice(&(index.doc_count as u64).to_le_bytes());
    let sorted: BTreeMap<&String, &Vec<Posting>> = index.postings.iter().collect();
    buf.extend_from_slice(&(sorted.len() as u64).to_le_bytes());
    for (token, postings) in sorted {
        put_str(buf, token);
        buf.extend_from_slice(&(postings.len() as u64).to_le_bytes());
        for p in postings {
            buf.extend_from_slice(&p.product_id.to_le_bytes());
            buf.extend_from_slice(&p.term_frequency.to_le_bytes());
        }
    }
}

/// Serialize a bundle to the canonical snapshot byte format.
pub fn write_snapshot(bundle: &IndexBundle) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&6u32.to_le_bytes());

    write_inverted(&mut buf, 0, &bundle.high);
    write_inverted(&mut buf, 1, &bundle.medium);
    write_inverted(&mut buf, 2, &bundle.low);

    buf.push(3);
    let rank: BTreeMap<&u64, &Vec<f32>> = bundle.rank.iter().collect();
    buf.extend_from_slice(&(rank.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(PREFERENCE_DIM as u32).to_le_bytes());
    for (&id, vec) in rank {
        buf.extend_from_slice(&id.to_le_bytes());
        for &x in vec.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    buf.push(4);
    let summary: BTreeMap<&u64, &ProductSummary> = bundle.summary.iter().collect();
    buf.extend_from_slice(&(summary.len() as u64).to_le_bytes());
    for (&id, s) in summary {
        buf.extend_from_slice(&id.to_le_bytes());
        put_str(&mut buf, &s.title);
        buf.extend_from_slice(&s.category_id.to_le_bytes());
        put_str(&mut buf, &s.brand);
        put_str(&mut buf, &s.color);
        buf.extend_from_slice(&s.price.to_le_bytes());
        buf.extend_from_slice(&(s.extra_fields.len() as u32).to_le_bytes());
        for (k, v) in &s.extra_fields {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
    }

    buf.push(5);
    let scalars: BTreeMap<&u64, &f64> = bundle.popularity.iter().collect();
    buf.extend_from_slice(&(scalars.len() as u64).to_le_bytes());
    for (&id, &pop) in scalars {
        buf.extend_from_slice(&id.to_le_bytes());
        buf.extend_from_slice(&pop.to_le_bytes());
        buf.extend_from_slice(&bundle.category[&id].to_le_bytes());
    }

    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CoreError> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::Corrupt(format!(
                "snapshot truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CoreError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CoreError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CoreError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CoreError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|e| CoreError::Corrupt(format!("snapshot string not utf8: {e}")))
    }
}

fn read_inverted(c: &mut Cursor, expect_tag: u8, tier: Tier) -> Result<InvertedIndex, CoreError> {
    let tag = c.u8()?;
    if tag != expect_tag {
        return Err(CoreError::Corrupt(format!(
            "snapshot section tag {tag}, expected {expect_tag}"
        )));
    }
    let doc_count = c.u64()? as usize;
    let token_count = c.u64()? as usize;
    let mut postings = HashMap::with_capacity(token_count);
    for _ in 0..token_count {
        let token = c.str()?;
        let n = c.u64()? as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            list.push(Posting {
                product_id: c.u64()?,
                term_frequency: c.u32()?,
            });
        }
        postings.insert(token, list);
    }
    Ok(InvertedIndex {
        tier,
        postings,
        doc_count,
    })
}

/// Parse a snapshot produced by [`write_snapshot`].
pub fn read_snapshot(bytes: &[u8]) -> Result<IndexBundle, CoreError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(SNAPSHOT_MAGIC.len())? != SNAPSHOT_MAGIC {
        return Err(CoreError::Corrupt("bad snapshot magic".into()));
    }
    let sections = c.u32()?;
    if sections != 6 {
        return Err(CoreError::Corrupt(format!(
            "snapshot declares {sections} sections, expected 6"
        )));
    }

    let high = read_inverted(&mut c, 0, Tier::High)?;
    let medium = read_inverted(&mut c, 1, Tier::Medium)?;
    let low = read_inverted(&mut c, 2, Tier::Low)?;

    if c.u8()? != 3 {
        return Err(CoreError::Corrupt("missing rank section".into()));
    }
    let count = c.u64()? as usize;
    let dim = c.u32()? as usize;
    if dim != PREFERENCE_DIM {
        return Err(CoreError::Corrupt(format!(
            "rank vectors have dimension {dim}, expected {PREFERENCE_DIM}"
        )));
    }
    let mut rank = HashMap::with_capacity(count);
    for _ in 0..count {
        let id = c.u64()?;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(c.f32()?);
        }
        rank.insert(id, v);
    }

    if c.u8()? != 4 {
        return Err(CoreError::Corrupt("missing summary section".into()));
    }
    let count = c.u64()? as usize;
    let mut summary = HashMap::with_capacity(count);
    for _ in 0..count {
        let id = c.u64()?;
        let title = c.str()?;
        let category_id = c.u32()?;
        let brand = c.str()?;
        let color = c.str()?;
        let price = c.f64()?;
        let extras = c.u32()? as usize;
        let mut extra_fields = Vec::with_capacity(extras);
        for _ in 0..extras {
            let k = c.str()?;
            let v = c.str()?;
            extra_fields.push((k, v));
        }
        summary.insert(
            id,
            ProductSummary {
                product_id: id,
                title,
                category_id,
                brand,
                color,
                price,
                extra_fields,
            },
        );
    }

    if c.u8()? != 5 {
        return Err(CoreError::Corrupt("missing scalar section".into()));
    }
    let count = c.u64()? as usize;
    let mut popularity = HashMap::with_capacity(count);
    let mut category = HashMap::with_capacity(count);
    for _ in 0..count {
        let id = c.u64()?;
        popularity.insert(id, c.f64()?);
        category.insert(id, c.u32()?);
    }

    if c.pos != bytes.len() {
        return Err(CoreError::Corrupt(format!(
            "{} trailing bytes after snapshot",
            bytes.len() - c.pos
        )));
    }

    Ok(IndexBundle {
        high,
        medium,
        low,
        rank,
        summary,
        popularity,
        category,
    })
}

/// Checksum helper for raw snapshot bytes, reported by services as a hex
/// string.
pub fn snapshot_checksum(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::new();
    h.update(bytes);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{assign_tiers, generate_catalog, CatalogConfig};

    fn fixture() -> (Vec<ProductRecord>, TierAssignment) {
        let cfg = CatalogConfig {
            product_count: 200,
            attribute_field_count: 8,
            user_count: 10,
            category_count: 4,
            vocabulary_size: 60,
            zipf_exponent: 1.0,
            seed: 123,
        };
        let catalog = generate_catalog(&cfg).unwrap();
        let tiers = assign_tiers(&catalog);
        (catalog, tiers)
    }

    #[test]
    fn doc_counts_match_tier_sizes() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        assert_eq!(bundle.high.doc_count(), 30); // floor(0.15 * 200)
        assert_eq!(bundle.medium.doc_count(), 100); // floor(0.50 * 200)
        assert_eq!(bundle.low.doc_count(), 100);
    }

    #[test]
    fn posting_lists_ordered_by_popularity_then_id() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        for index in [&bundle.high, &bundle.medium, &bundle.low] {
            for list in index.postings.values() {
                for w in list.windows(2) {
                    let pa = bundle.popularity(w[0].product_id).unwrap();
                    let pb = bundle.popularity(w[1].product_id).unwrap();
                    assert!(
                        pa > pb || (pa == pb && w[0].product_id < w[1].product_id),
                        "posting order violated"
                    );
                }
            }
        }
    }

    #[test]
    fn every_posting_belongs_to_its_tier() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        for p in bundle.high.postings.values().flatten() {
            assert!(tiers.in_high(p.product_id));
        }
        for p in bundle.medium.postings.values().flatten() {
            assert!(tiers.in_medium_partition(p.product_id));
        }
        for p in bundle.low.postings.values().flatten() {
            assert_eq!(tiers.label(p.product_id), Some(Tier::Low));
        }
    }

    #[test]
    fn absent_token_yields_empty_postings() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        assert!(bundle.high.postings("zzzxqj").is_empty());
        let out = bundle.tier_search(&["zzzxqj".to_string()], 10);
        assert!(out.product_ids.is_empty());
        // All tiers were probed and none matched.
        assert!(out.probes.high && out.probes.medium && out.probes.low);
    }

    #[test]
    fn empty_token_list_is_empty_result_not_error() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        let out = bundle.tier_search(&[], 10);
        assert!(out.product_ids.is_empty());
        assert_eq!(out.probes, TierProbes::default());
    }

    #[test]
    fn mismatched_tier_assignment_is_rejected() {
        let (catalog, tiers) = fixture();
        assert!(matches!(
            build_indexes(&catalog[..100], &tiers),
            Err(CoreError::Inconsistent(_))
        ));
    }

    /// Straight-line reference implementation of the staged search.
    fn oracle_tier_search(
        catalog: &[ProductRecord],
        tiers: &TierAssignment,
        tokens: &[String],
        limit: usize,
    ) -> Vec<u64> {
        if tokens.is_empty() || limit == 0 {
            return Vec::new();
        }
        let mut distinct: Vec<&str> = Vec::new();
        for t in tokens {
            if !distinct.contains(&t.as_str()) {
                distinct.push(t);
            }
        }
        let tier_members = |want: &dyn Fn(u64) -> bool| -> Vec<&ProductRecord> {
            catalog.iter().filter(|p| want(p.product_id)).collect()
        };
        let stages: Vec<Vec<&ProductRecord>> = vec![
            tier_members(&|id| tiers.in_high(id)),
            tier_members(&|id| tiers.in_medium_partition(id)),
            tier_members(&|id| tiers.label(id) == Some(Tier::Low)),
        ];
        let mut acc: Vec<u64> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        for members in stages {
            if acc.len() >= limit {
                break;
            }
            let mut matches: Vec<(u64, usize, f64)> = members
                .iter()
                .filter(|p| !seen.contains(&p.product_id))
                .filter_map(|p| {
                    let text = format!("{} {} {}", p.title, p.brand, p.color);
                    let product_tokens: HashSet<String> = tokenize(&text).into_iter().collect();
                    let count = distinct
                        .iter()
                        .filter(|t| product_tokens.contains(**t))
                        .count();
                    (count > 0).then_some((p.product_id, count, p.popularity))
                })
                .collect();
            matches.sort_by(|a, b| {
                b.1.cmp(&a.1)
                    .then(b.2.partial_cmp(&a.2).unwrap())
                    .then(a.0.cmp(&b.0))
            });
            for (id, _, _) in matches {
                seen.insert(id);
                acc.push(id);
            }
        }
        acc.truncate(limit);
        acc
    }

    #[test]
    fn tier_search_matches_linear_scan_oracle() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();

        // Query tokens drawn from real titles plus some misses.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let vocab: Vec<String> = catalog
            .iter()
            .flat_map(|p| tokenize(&format!("{} {} {}", p.title, p.brand, p.color)))
            .collect();
        for _ in 0..100 {
            let k = rng.gen_range(1..=4);
            let tokens: Vec<String> = (0..k)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                .collect();
            let limit = rng.gen_range(1..=60);
            let got = bundle.tier_search(&tokens, limit).product_ids;
            let want = oracle_tier_search(&catalog, &tiers, &tokens, limit);
            assert_eq!(got, want, "tokens {tokens:?} limit {limit}");
        }
    }

    #[test]
    fn results_from_hotter_tiers_come_first() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        let tokens = tokenize(&catalog[0].title);
        let out = bundle.tier_search(&tokens, catalog.len());
        let stage = |id: u64| match tiers.label(id).unwrap() {
            Tier::High => 0,
            Tier::Medium => 1,
            Tier::Low => 2,
        };
        for w in out.product_ids.windows(2) {
            assert!(stage(w[0]) <= stage(w[1]), "tier staging order violated");
        }
    }

    #[test]
    fn larger_limit_extends_smaller_limit_result() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        let tokens = tokenize(&catalog[7].title);
        let full = bundle.tier_search(&tokens, usize::MAX).product_ids;
        for limit in [1, 3, 10, 50] {
            let small = bundle.tier_search(&tokens, limit).product_ids;
            assert_eq!(small.as_slice(), &full[..small.len().min(full.len())]);
            assert!(small.len() <= limit);
        }
    }

    #[test]
    fn saturating_high_tier_skips_colder_tiers() {
        // Hand-built catalog: 40 products share a token, popular half first.
        let catalog: Vec<ProductRecord> = (0..40)
            .map(|i| ProductRecord {
                product_id: i,
                title: "widget common".into(),
                category_id: 0,
                brand: "brandx".into(),
                color: "red".into(),
                price: 10.0,
                popularity: 1.0 / (i + 1) as f64,
                extra_fields: vec![],
            })
            .collect();
        let tiers = assign_tiers(&catalog);
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        let out = bundle.tier_search(&["widget".to_string()], 5);
        assert_eq!(out.product_ids.len(), 5);
        assert!(out.probes.high);
        assert!(!out.probes.medium, "medium probed despite high saturation");
        assert!(!out.probes.low, "low probed despite high saturation");
    }

    #[test]
    fn rank_features_have_fixed_dimension_and_order() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        let ids: Vec<u64> = catalog.iter().map(|p| p.product_id).collect();
        let feats = bundle.rank_features(&ids).unwrap();
        assert_eq!(feats.len(), ids.len());

        // Independent recomputation from the raw records.
        let max_price = catalog.iter().map(|p| p.price).fold(0.0f64, f64::max);
        for (p, f) in catalog.iter().zip(&feats) {
            assert_eq!(f.len(), PREFERENCE_DIM);
            assert!((f[0] - (p.price / max_price) as f32).abs() < 1e-7);
            assert!((f[1] - p.popularity as f32).abs() < 1e-7);
            let brand_block: f32 = f[2..2 + ONE_HOT_BUCKETS].iter().sum();
            let color_block: f32 = f[2 + ONE_HOT_BUCKETS..].iter().sum();
            assert_eq!(brand_block, 1.0);
            assert_eq!(color_block, 1.0);
            assert_eq!(f[2 + one_hot_bucket(&p.brand)], 1.0);
            assert_eq!(f[2 + ONE_HOT_BUCKETS + one_hot_bucket(&p.color)], 1.0);
        }
    }

    #[test]
    fn rank_features_reject_unknown_product() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        match bundle.rank_features(&[0, 9_999_999]) {
            Err(CoreError::UnknownProduct(id)) => assert_eq!(id, 9_999_999),
            other => panic!("expected unknown product error, got {other:?}"),
        }
    }

    #[test]
    fn snapshot_round_trip_preserves_bundle() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        let bytes = write_snapshot(&bundle);
        let restored = read_snapshot(&bytes).unwrap();
        assert_eq!(restored, bundle);
    }

    #[test]
    fn rebuild_from_same_catalog_is_byte_identical() {
        let (catalog, tiers) = fixture();
        let a = write_snapshot(&build_indexes(&catalog, &tiers).unwrap());
        let b = write_snapshot(&build_indexes(&catalog, &tiers).unwrap());
        assert_eq!(a, b);
        assert_eq!(snapshot_checksum(&a), snapshot_checksum(&b));
    }

    #[test]
    fn corrupt_snapshot_is_rejected() {
        let (catalog, tiers) = fixture();
        let bundle = build_indexes(&catalog, &tiers).unwrap();
        let mut bytes = write_snapshot(&bundle);
        bytes[0] ^= 0xff;
        assert!(matches!(read_snapshot(&bytes), Err(CoreError::Corrupt(_))));
        let bytes = write_snapshot(&bundle);
        assert!(matches!(
            read_snapshot(&bytes[..bytes.len() - 3]),
            Err(CoreError::Corrupt(_))
        ));
    }
}
