//! Neighborhood-window triplet sampling over a facet embedding table.
//!
//! For each query the table's cosine ranking supplies candidates: positives
//! come uniformly from the top `k_pos` ranks, negatives from the hard window
//! `[hard_lo, hard_hi]` with probability `hard_fraction` and from the easy
//! tail beyond it otherwise. Draws use a per-query RNG stream keyed by
//! `(seed, query id)`, so any execution order — including parallel — yields
//! the same triplets as a sequential pass.
//!
//! [`materialize_triplet`] turns id triplets into text triplets, either with
//! whole abstracts or with the facet-matched section of each paper's split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PaperStore;
use crate::error::{Error, Result};
use crate::facet_graph::Facet;
use crate::graph_embed::{nearest_neighbors, NodeEmbeddingTable};
use crate::hashing::{derive_seed_str, rng_from};
use crate::text_splitter::SplitStore;

/// Re-draw budget before a triplet slot is given up and reported.
const MAX_DRAW_ATTEMPTS: usize = 16;

/// Rank windows and rates for triplet sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerPolicy {
    /// Positives come from ranks `[1, k_pos]`.
    pub k_pos: usize,
    /// Hard negatives come from ranks `[hard_lo, hard_hi]`.
    pub hard_lo: usize,
    pub hard_hi: usize,
    pub triplets_per_query: usize,
    /// Probability that a negative is drawn from the hard window rather
    /// than the easy tail beyond it.
    pub hard_fraction: f64,
    pub seed: u64,
}

impl Default for SamplerPolicy {
    fn default() -> Self {
        SamplerPolicy {
            k_pos: 5,
            hard_lo: 20,
            hard_hi: 25,
            triplets_per_query: 10,
            hard_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SamplerPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.k_pos == 0 {
            return Err(Error::Config("k_pos must be at least 1".into()));
        }
        if !(self.k_pos < self.hard_lo && self.hard_lo <= self.hard_hi) {
            return Err(Error::Config(format!(
                "rank windows must satisfy k_pos < hard_lo <= hard_hi, got {} / {} / {}",
                self.k_pos, self.hard_lo, self.hard_hi
            )));
        }
        if self.triplets_per_query == 0 {
            return Err(Error::Config(
                "triplets_per_query must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) || self.hard_fraction.is_nan() {
            return Err(Error::Config(format!(
                "hard_fraction {} must lie in [0, 1]",
                self.hard_fraction
            )));
        }
        Ok(())
    }
}

/// One sampled triplet of paper ids; the three ids are pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetTriplet {
    pub facet: Facet,
    pub query: String,
    pub positive: String,
    pub negative: String,
}

/// A query that could not fill its full triplet quota.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub query: String,
    pub requested: usize,
    pub emitted: usize,
    pub reason: String,
}

/// Sampling result: the triplets plus any per-query shortfalls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutcome {
    pub triplets: Vec<FacetTriplet>,
    pub skips: Vec<SkipReport>,
}

/// Samples `triplets_per_query` triplets for every query. Fails up front if
/// the table population cannot populate the configured rank windows.
pub fn sample_triplets(
    table: &NodeEmbeddingTable,
    queries: &[String],
    policy: &SamplerPolicy,
) -> Result<SampleOutcome> {
    sample_triplets_excluding(table, queries, policy, &BTreeMap::new())
}

/// Like [`sample_triplets`], but candidates in `excluded[query]` are never
/// used as negatives; blocked draws are re-drawn and eventually reported.
pub fn sample_triplets_excluding(
    table: &NodeEmbeddingTable,
    queries: &[String],
    policy: &SamplerPolicy,
    excluded: &BTreeMap<String, BTreeSet<String>>,
) -> Result<SampleOutcome> {
    policy.validate()?;
    let n = table.len();
    // Ranks 1..=n-1 exist per query; the hard window needs rank hard_hi.
    if n <= policy.hard_hi {
        return Err(Error::PopulationTooSmall {
            population: n,
            requirement: format!(
                "hard rank window [{}, {}] needs more than {} nodes",
                policy.hard_lo, policy.hard_hi, policy.hard_hi
            ),
        });
    }
    // Easy draws need at least one rank beyond hard_hi.
    if policy.hard_fraction < 1.0 && n - 1 <= policy.hard_hi {
        return Err(Error::PopulationTooSmall {
            population: n,
            requirement: format!(
                "easy ranks beyond {} need more than {} nodes",
                policy.hard_hi,
                policy.hard_hi + 1
            ),
        });
    }

    let mut outcome = SampleOutcome::default();
    let no_exclusions = BTreeSet::new();
    for query in queries {
        let ranked = nearest_neighbors(table, query, n - 1)?;
        let blocked = excluded.get(query).unwrap_or(&no_exclusions);
        let mut rng = rng_from(derive_seed_str(policy.seed, "triplet-query", query));
        let mut emitted = 0usize;
        for _ in 0..policy.triplets_per_query {
            let mut success = false;
            for _ in 0..MAX_DRAW_ATTEMPTS {
                let pos_idx = rng.random_range(0..policy.k_pos);
                let hard = rng.random::<f64>() < policy.hard_fraction;
                let neg_idx = if hard {
                    rng.random_range(policy.hard_lo - 1..policy.hard_hi)
                } else {
                    rng.random_range(policy.hard_hi..n - 1)
                };
                let pos = &ranked[pos_idx];
                let neg = &ranked[neg_idx];
                if pos.id == neg.id || blocked.contains(&neg.id) || pos.distance >= neg.distance {
                    continue;
                }
                outcome.triplets.push(FacetTriplet {
                    facet: table.facet(),
                    query: query.clone(),
                    positive: pos.id.clone(),
                    negative: neg.id.clone(),
                });
                emitted += 1;
                success = true;
                break;
            }
            if !success {
                break;
            }
        }
        if emitted < policy.triplets_per_query {
            outcome.skips.push(SkipReport {
                query: query.clone(),
                requested: policy.triplets_per_query,
                emitted,
                reason: format!(
                    "{MAX_DRAW_ATTEMPTS} draws per slot exhausted: negatives were \
                     excluded, duplicated the positive, or tied its distance"
                ),
            });
        }
    }
    Ok(outcome)
}

/// Which text accompanies each triplet role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    /// The whole abstract, regardless of the triplet's facet.
    Full,
    /// The facet-matched section of the paper's split.
    Faceted,
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextMode::Full => "full",
            TextMode::Faceted => "faceted",
        })
    }
}

impl FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TextMode::Full),
            "faceted" => Ok(TextMode::Faceted),
            other => Err(Error::Validation(format!("unknown text mode `{other}`"))),
        }
    }
}

/// Title and text for one triplet role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleText {
    pub title: String,
    pub text: String,
}

/// A triplet with its per-role texts attached. `empty_text_roles` flags
/// roles whose text came out empty (possible in faceted mode).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetTextTriplet {
    pub facet: Facet,
    pub mode: TextMode,
    pub query: RoleText,
    pub positive: RoleText,
    pub negative: RoleText,
    pub empty_text_roles: Vec<String>,
}

/// Attaches texts to a triplet: whole abstracts in full mode, the
/// facet-matched split section in faceted mode.
pub fn materialize_triplet(
    triplet: &FacetTriplet,
    papers: &PaperStore,
    mode: TextMode,
    splits: &SplitStore,
) -> Result<FacetTextTriplet> {
    let mut empty_text_roles = Vec::new();
    let mut role = |name: &str, id: &str| -> Result<RoleText> {
        let paper = papers
            .get(id)
            .ok_or_else(|| Error::UnknownPaper { id: id.to_string() })?;
        let text = match mode {
            TextMode::Full => paper.abstract_text.clone(),
            TextMode::Faceted => {
                let record = splits
                    .get(id)
                    .ok_or_else(|| Error::MissingSplit { id: id.to_string() })?;
                record.sections.section(triplet.facet).to_string()
            }
        };
        if text.is_empty() {
            empty_text_roles.push(name.to_string());
        }
        Ok(RoleText {
            title: paper.title.clone(),
            text,
        })
    };
    let query = role("query", &triplet.query)?;
    let positive = role("positive", &triplet.positive)?;
    let negative = role("negative", &triplet.negative)?;
    Ok(FacetTextTriplet {
        facet: triplet.facet,
        mode,
        query,
        positive,
        negative,
        empty_text_roles,
    })
}

/// Writes one JSON object per triplet, preserving order.
pub fn write_triplets_jsonl<W: Write>(triplets: &[FacetTriplet], mut w: W) -> Result<()> {
    for t in triplets {
        serde_json::to_writer(&mut w, t).map_err(|e| Error::FileFormat(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a triplets file strictly; malformed lines and triplets with
/// repeated ids are errors naming the 1-based line.
pub fn read_triplets_jsonl<R: BufRead>(r: R) -> Result<Vec<FacetTriplet>> {
    let mut triplets = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: FacetTriplet = serde_json::from_str(&line)
            .map_err(|e| Error::FileFormat(format!("triplets line {}: {e}", idx + 1)))?;
        if t.query == t.positive || t.query == t.negative || t.positive == t.negative {
            return Err(Error::FileFormat(format!(
                "triplets line {}: ids are not pairwise distinct",
                idx + 1
            )));
        }
        triplets.push(t);
    }
    Ok(triplets)
}

/// Writes one JSON object per materialized triplet, preserving order.
pub fn write_text_triplets_jsonl<W: Write>(triplets: &[FacetTextTriplet], mut w: W) -> Result<()> {
    for t in triplets {
        serde_json::to_writer(&mut w, t).map_err(|e| Error::FileFormat(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a materialized-triplets file strictly.
pub fn read_text_triplets_jsonl<R: BufRead>(r: R) -> Result<Vec<FacetTextTriplet>> {
    let mut triplets = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: FacetTextTriplet = serde_json::from_str(&line)
            .map_err(|e| Error::FileFormat(format!("text triplets line {}: {e}", idx + 1)))?;
        triplets.push(t);
    }
    Ok(triplets)
}
