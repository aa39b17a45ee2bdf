//! Trainable per-facet document encoders.
//!
//! The encoder is deliberately simple: hashed token counts, L2-normalized,
//! projected by a dense weight matrix. That keeps every gradient
//! hand-checkable against finite differences while preserving the training
//! signal that matters — a triplet margin loss over L2 distances between
//! document embeddings, minimized per facet with deterministic mini-batch
//! SGD.
//!
//! Weights are held as `f64` for exact gradient arithmetic, but every stored
//! value is representable as `f32`: initialization and each SGD update round
//! through `f32`, so the 32-bit on-disk format round-trips bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{encoder_input, encoder_input_parts, Paper};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed_index, fnv1a64, rng_from, unit_from};
use crate::triplet_sampler::FacetTextTriplet;
use crate::vecmath;

pub const DEFAULT_BUCKETS: usize = 1 << 16;
pub const DEFAULT_DIM: usize = 64;

/// A sparse L2-normalized feature vector, entries sorted by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        SparseVector { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SparseVector {
            entries: self.entries.iter().map(|&(i, v)| (i, v * factor)).collect(),
        }
    }

    /// Entrywise difference `self - other`, keeping the union of indices.
    pub fn sub(&self, other: &SparseVector) -> SparseVector {
        let mut entries = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut a, mut b) = (0, 0);
        while a < self.entries.len() || b < other.entries.len() {
            match (self.entries.get(a), other.entries.get(b)) {
                (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                    entries.push((ia, va - vb));
                    a += 1;
                    b += 1;
                }
                (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                    entries.push((ia, va));
                    a += 1;
                }
                (Some(_), Some(&(ib, vb))) => {
                    entries.push((ib, -vb));
                    b += 1;
                }
                (Some(&(ia, va)), None) => {
                    entries.push((ia, va));
                    a += 1;
                }
                (None, Some(&(ib, vb))) => {
                    entries.push((ib, -vb));
                    b += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        SparseVector { entries }
    }
}

/// Lowercases, splits on runs of non-alphanumeric characters, hashes each
/// token into one of `buckets` counts, and L2-normalizes the counts.
/// Token-free text yields the zero vector.
pub fn featurize(text: &str, buckets: usize) -> SparseVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let bucket = (fnv1a64(token.as_bytes()) % buckets as u64) as u32;
        *counts.entry(bucket).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return SparseVector::default();
    }
    SparseVector {
        entries: counts.into_iter().map(|(i, c)| (i, c / norm)).collect(),
    }
}

/// One dense document embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Weights of one facet encoder: a dense `dim x buckets` matrix stored
/// row-major, plus the seed its initialization derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    buckets: usize,
    dim: usize,
    seed: u64,
    weights: Vec<f64>,
}

impl EncoderParams {
    /// Deterministic initial weights: entry `(d, b)` is uniform in
    /// `[-1/sqrt(buckets), 1/sqrt(buckets))`, a pure function of
    /// `(seed, d, b)`, rounded through `f32`.
    pub fn seeded(buckets: usize, dim: usize, seed: u64) -> Result<Self> {
        validate_shape(buckets, dim)?;
        let scale = 1.0 / (buckets as f64).sqrt();
        let mut weights = Vec::with_capacity(dim * buckets);
        for idx in 0..(dim * buckets) as u64 {
            let u = unit_from(seed, "encoder-weight", idx);
            weights.push(f64::from(((2.0 * u - 1.0) * scale) as f32));
        }
        Ok(EncoderParams {
            buckets,
            dim,
            seed,
            weights,
        })
    }

    /// Builds params from explicit row-major weights, mainly for tests.
    pub fn from_weights(buckets: usize, dim: usize, seed: u64, weights: Vec<f64>) -> Result<Self> {
        validate_shape(buckets, dim)?;
        if weights.len() != dim * buckets {
            return Err(Error::DimensionMismatch {
                expected: dim * buckets,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation(
                "weights contain non-finite values".into(),
            ));
        }
        Ok(EncoderParams {
            buckets,
            dim,
            seed,
            weights,
        })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.buckets + col]
    }
}

fn validate_shape(buckets: usize, dim: usize) -> Result<()> {
    if buckets == 0 || !buckets.is_power_of_two() {
        return Err(Error::Config(format!(
            "buckets {buckets} must be a power of two"
        )));
    }
    if dim == 0 {
        return Err(Error::Config("dim must be at least 1".into()));
    }
    Ok(())
}

/// Projects a text's feature vector through the weights. No output
/// normalization: the embedding scale carries trained information.
pub fn encode(params: &EncoderParams, text: &str) -> EmbeddingVector {
    encode_features(params, &featurize(text, params.buckets))
}

/// [`encode`] with a precomputed feature vector.
pub fn encode_features(params: &EncoderParams, features: &SparseVector) -> EmbeddingVector {
    let mut values = vec![0.0f64; params.dim];
    for &(col, x) in features.entries() {
        let col = col as usize;
        for (d, out) in values.iter_mut().enumerate() {
            *out += params.weights[d * params.buckets + col] * x;
        }
    }
    EmbeddingVector { values }
}

/// Margin loss `max(|q - p| - |q - n| + margin, 0)` over L2 distances.
pub fn triplet_loss(
    q: &EmbeddingVector,
    p: &EmbeddingVector,
    n: &EmbeddingVector,
    margin: f64,
) -> Result<f64> {
    if q.dim() != p.dim() || q.dim() != n.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: if q.dim() != p.dim() { p.dim() } else { n.dim() },
        });
    }
    let d_pos = vecmath::l2_distance(&q.values, &p.values);
    let d_neg = vecmath::l2_distance(&q.values, &n.values);
    Ok((d_pos - d_neg + margin).max(0.0))
}

/// A sparse `dim x buckets` gradient: only columns touched by the triplet's
/// features are present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMatrix {
    columns: BTreeMap<u32, Vec<f64>>,
    dim: usize,
}

impl GradientMatrix {
    fn new(dim: usize) -> Self {
        GradientMatrix {
            columns: BTreeMap::new(),
            dim,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn entry(&self, row: usize, col: u32) -> f64 {
        self.columns.get(&col).map_or(0.0, |c| c[row])
    }

    pub fn columns(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.columns.iter().map(|(&c, v)| (c, v.as_slice()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.columns
            .values()
            .flat_map(|c| c.iter().map(|v| v * v))
            .sum::<f64>()
            .sqrt()
    }

    fn rank_one_update(&mut self, direction: &[f64], features: &SparseVector, sign: f64) {
        for &(col, x) in features.entries() {
            let column = self
                .columns
                .entry(col)
                .or_insert_with(|| vec![0.0; self.dim]);
            for (slot, &u) in column.iter_mut().zip(direction) {
                *slot += sign * u * x;
            }
        }
    }

    fn accumulate(&mut self, other: &GradientMatrix) {
        for (&col, src) in &other.columns {
            let column = self
                .columns
                .entry(col)
                .or_insert_with(|| vec![0.0; self.dim]);
            for (slot, &v) in column.iter_mut().zip(src) {
                *slot += v;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for column in self.columns.values_mut() {
            for v in column.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Subgradient of the triplet loss with respect to the weights, for one
/// triplet given as feature vectors. Zero when the hinge is inactive; a
/// zero-distance term contributes nothing.
pub fn triplet_gradient_from_features(
    params: &EncoderParams,
    q: &SparseVector,
    p: &SparseVector,
    n: &SparseVector,
    margin: f64,
) -> GradientMatrix {
    let eq = encode_features(params, q);
    let ep = encode_features(params, p);
    let en = encode_features(params, n);
    let u: Vec<f64> = eq
        .values
        .iter()
        .zip(&ep.values)
        .map(|(a, b)| a - b)
        .collect();
    let v: Vec<f64> = eq
        .values
        .iter()
        .zip(&en.values)
        .map(|(a, b)| a - b)
        .collect();
    let d_pos = vecmath::norm(&u);
    let d_neg = vecmath::norm(&v);
    let mut grad = GradientMatrix::new(params.dim);
    if d_pos - d_neg + margin <= 0.0 {
        return grad;
    }
    if d_pos > 0.0 {
        let unit: Vec<f64> = u.iter().map(|x| x / d_pos).collect();
        grad.rank_one_update(&unit, &q.sub(p), 1.0);
    }
    if d_neg > 0.0 {
        let unit: Vec<f64> = v.iter().map(|x| x / d_neg).collect();
        grad.rank_one_update(&unit, &q.sub(n), -1.0);
    }
    grad
}

/// Subgradient of the triplet loss for one text triplet.
pub fn triplet_loss_gradient(
    params: &EncoderParams,
    query_text: &str,
    positive_text: &str,
    negative_text: &str,
    margin: f64,
) -> GradientMatrix {
    let q = featurize(query_text, params.buckets);
    let p = featurize(positive_text, params.buckets);
    let n = featurize(negative_text, params.buckets);
    triplet_gradient_from_features(params, &q, &p, &n, margin)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.03125, // 2^-5
            batch_size: 10,
            epochs: 2,
            margin: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(Error::Config(format!(
                "margin {} must be positive and finite",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Loss statistics for one training epoch, measured on each batch before
/// its update is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub violation_rate: f64,
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
}

/// The (title, text) of each triplet role composed into encoder inputs.
fn triplet_inputs(t: &FacetTextTriplet) -> [String; 3] {
    [
        encoder_input_parts(&t.query.title, &t.query.text),
        encoder_input_parts(&t.positive.title, &t.positive.text),
        encoder_input_parts(&t.negative.title, &t.negative.text),
    ]
}

/// Fraction of triplets whose loss is positive under `params`.
pub fn margin_violation_rate(
    params: &EncoderParams,
    triplets: &[FacetTextTriplet],
    margin: f64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Validation("no triplets to evaluate".into()));
    }
    let mut violations = 0usize;
    for t in triplets {
        let [q, p, n] = triplet_inputs(t);
        let loss = triplet_loss(
            &encode(params, &q),
            &encode(params, &p),
            &encode(params, &n),
            margin,
        )?;
        if loss > 0.0 {
            violations += 1;
        }
    }
    Ok(violations as f64 / triplets.len() as f64)
}

/// Mini-batch SGD over the triplet margin loss. The per-epoch order is a
/// seeded shuffle, each batch applies the mean of its member gradients, and
/// every updated weight is rounded through `f32`, so results are
/// reproducible bit-for-bit.
pub fn train_encoder(
    triplets: &[FacetTextTriplet],
    cfg: &TrainConfig,
    init: &EncoderParams,
) -> Result<(EncoderParams, TrainingReport)> {
    if triplets.is_empty() {
        return Err(Error::Validation("no triplets to train on".into()));
    }
    cfg.validate()?;
    let mut params = init.clone();
    let features: Vec<[SparseVector; 3]> = triplets
        .iter()
        .map(|t| {
            let [q, p, n] = triplet_inputs(t);
            [
                featurize(&q, params.buckets),
                featurize(&p, params.buckets),
                featurize(&n, params.buckets),
            ]
        })
        .collect();

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut report = TrainingReport::default();
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from(derive_seed_index(cfg.seed, "encoder-epoch", epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut violations = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = GradientMatrix::new(params.dim);
            for &ti in batch {
                let [q, p, n] = &features[ti];
                let loss = triplet_loss(
                    &encode_features(&params, q),
                    &encode_features(&params, p),
                    &encode_features(&params, n),
                    cfg.margin,
                )?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                loss_sum += loss;
                if loss > 0.0 {
                    violations += 1;
                    grad.accumulate(&triplet_gradient_from_features(
                        &params, q, p, n, cfg.margin,
                    ));
                }
            }
            grad.scale(1.0 / batch.len() as f64);
            for (col, column) in grad.columns() {
                for (d, &g) in column.iter().enumerate() {
                    let slot = &mut params.weights[d * params.buckets + col as usize];
                    let updated = (*slot - cfg.learning_rate * g) as f32;
                    if !updated.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            batch: batch_idx,
                        });
                    }
                    *slot = f64::from(updated);
                }
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / features.len() as f64,
            violation_rate: violations as f64 / features.len() as f64,
        });
    }
    Ok((params, report))
}

/// Embeddings of one paper under the three facet encoders. Inference always
/// uses the title plus full abstract, whatever texts the encoders were
/// trained on.
pub fn facet_embeddings(
    background: &EncoderParams,
    method: &EncoderParams,
    result: &EncoderParams,
    paper: &Paper,
) -> Result<[EmbeddingVector; 3]> {
    if background.dim != method.dim || background.dim != result.dim {
        return Err(Error::DimensionMismatch {
            expected: background.dim,
            got: if background.dim != method.dim {
                method.dim
            } else {
                result.dim
            },
        });
    }
    let input = encoder_input(paper);
    Ok([
        encode(background, &input),
        encode(method, &input),
        encode(result, &input),
    ])
}

const ENC_MAGIC: &[u8; 8] = b"FLEWENC1";

/// Writes params: header `(buckets, dim, seed)` then the row-major weights
/// as little-endian f32. Exact round-trip: stored weights are always
/// f32-representable.
pub fn write_encoder_params<W: Write>(params: &EncoderParams, mut w: W) -> Result<()> {
    w.write_all(ENC_MAGIC)?;
    w.write_all(&(params.buckets as u64).to_le_bytes())?;
    w.write_all(&(params.dim as u32).to_le_bytes())?;
    w.write_all(&params.seed.to_le_bytes())?;
    for &v in &params.weights {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads params written by [`write_encoder_params`].
pub fn read_encoder_params<R: Read>(mut r: R) -> Result<EncoderParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ENC_MAGIC {
        return Err(Error::FileFormat(
            "not an encoder parameter file (bad magic)".into(),
        ));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let buckets = u64::from_le_bytes(b8) as usize;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    validate_shape(buckets, dim).map_err(|e| Error::FileFormat(e.to_string()))?;
    let mut weights = Vec::with_capacity(dim * buckets);
    for _ in 0..dim * buckets {
        r.read_exact(&mut b4)?;
        let v = f32::from_le_bytes(b4);
        if !v.is_finite() {
            return Err(Error::FileFormat("non-finite weight".into()));
        }
        weights.push(f64::from(v));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::FileFormat("trailing data after weights".into()));
    }
    Ok(EncoderParams {
        buckets,
        dim,
        seed,
        weights,
    })
}

pub fn save_encoder_params(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_encoder_params(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_encoder_params(path: &Path) -> Result<EncoderParams> {
    let bytes = std::fs::read(path)?;
    read_encoder_params(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facet_graph::Facet;
    use crate::triplet_sampler::{RoleText, TextMode};
    use rand::Rng;

    fn vec_of(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector {
            values: values.to_vec(),
        }
    }

    fn text_triplet(q: &str, p: &str, n: &str) -> FacetTextTriplet {
        let role = |text: &str| RoleText {
            title: String::new(),
            text: text.to_string(),
        };
        FacetTextTriplet {
            facet: Facet::Method,
            mode: TextMode::Full,
            query: role(q),
            positive: role(p),
            negative: role(n),
            empty_text_roles: Vec::new(),
        }
    }

    #[test]
    fn featurize_counts_then_normalizes() {
        let v = featurize("a a b", 64);
        assert_eq!(v.entries().len(), 2);
        let norm5 = 5f64.sqrt();
        let mut values: Vec<f64> = v.entries().iter().map(|&(_, x)| x).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((values[0] - 1.0 / norm5).abs() < 1e-15);
        assert!((values[1] - 2.0 / norm5).abs() < 1e-15);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_of_token_free_text_is_zero() {
        assert!(featurize("", 64).is_zero());
        assert!(featurize(" --- !!! ", 64).is_zero());
    }

    #[test]
    fn featurize_folds_case_and_delimiters() {
        assert_eq!(featurize("A-a", 64), featurize("a a", 64));
        assert_eq!(featurize("x[SEP]y", 64), featurize("x sep y", 64));
    }

    #[test]
    fn encoding_zero_features_is_the_zero_vector() {
        let params = EncoderParams::seeded(32, 4, 1).unwrap();
        assert_eq!(encode(&params, "!!!").values, vec![0.0; 4]);
    }

    #[test]
    fn identity_weights_pass_normalized_counts_through() {
        let buckets = 8usize;
        let mut weights = vec![0.0; buckets * buckets];
        for i in 0..buckets {
            weights[i * buckets + i] = 1.0;
        }
        let params = EncoderParams::from_weights(buckets, buckets, 0, weights).unwrap();
        let text = "a a b";
        let features = featurize(text, buckets);
        let out = encode(&params, text);
        for &(col, x) in features.entries() {
            assert_eq!(out.values[col as usize], x);
        }
        let nonzero = out.values.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, features.entries().len());
    }

    #[test]
    fn normalization_breaks_additivity_of_encode() {
        let params = EncoderParams::seeded(64, 4, 9).unwrap();
        let t1 = "alpha beta";
        let t2 = "gamma gamma delta";
        let sum: Vec<f64> = encode(&params, t1)
            .values
            .iter()
            .zip(&encode(&params, t2).values)
            .map(|(a, b)| a + b)
            .collect();
        let joint = encode(&params, &format!("{t1} {t2}")).values;
        let diff: f64 = sum.iter().zip(&joint).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "expected non-additive encodings, diff {diff}");
    }

    #[test]
    fn loss_at_the_margin_boundary_is_zero() {
        let loss = triplet_loss(
            &vec_of(&[0.0, 0.0]),
            &vec_of(&[1.0, 0.0]),
            &vec_of(&[0.0, 2.0]),
            1.0,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_with_coincident_positive_and_negative_is_the_margin() {
        let loss = triplet_loss(
            &vec_of(&[0.0, 0.0]),
            &vec_of(&[0.0, 1.0]),
            &vec_of(&[0.0, 1.0]),
            1.0,
        )
        .unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn loss_of_a_three_four_five_layout_is_five() {
        let loss = triplet_loss(
            &vec_of(&[0.0, 0.0]),
            &vec_of(&[3.0, 4.0]),
            &vec_of(&[1.0, 0.0]),
            1.0,
        )
        .unwrap();
        assert_eq!(loss, 5.0);
    }

    #[test]
    fn loss_rejects_mismatched_dimensions() {
        let err = triplet_loss(
            &vec_of(&[0.0, 0.0]),
            &vec_of(&[1.0]),
            &vec_of(&[0.0, 2.0]),
            1.0,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loss_is_bounded_and_degenerate_case_equals_margin() {
        let mut rng = rng_from(3);
        for _ in 0..50 {
            let rand_vec = |rng: &mut crate::hashing::DetRng| {
                vec_of(&[
                    rng.random::<f64>() * 4.0 - 2.0,
                    rng.random::<f64>() * 4.0 - 2.0,
                    rng.random::<f64>() * 4.0 - 2.0,
                ])
            };
            let q = rand_vec(&mut rng);
            let p = rand_vec(&mut rng);
            let n = rand_vec(&mut rng);
            let margin = 1.0;
            let loss = triplet_loss(&q, &p, &n, margin).unwrap();
            let d_pos = vecmath::l2_distance(&q.values, &p.values);
            assert!(loss >= 0.0);
            assert!(loss <= d_pos + margin + 1e-12);
            assert_eq!(triplet_loss(&q, &p, &p, margin).unwrap(), margin);
        }
    }

    fn scaled_identity(buckets: usize, scale: f64) -> EncoderParams {
        let mut weights = vec![0.0; buckets * buckets];
        for i in 0..buckets {
            weights[i * buckets + i] = scale;
        }
        EncoderParams::from_weights(buckets, buckets, 0, weights).unwrap()
    }

    #[test]
    fn satisfied_margin_gives_a_zero_gradient() {
        // Under large identity weights the shared-token positive sits much
        // closer than the disjoint negative, so the hinge is inactive while
        // both distances stay nonzero.
        let params = scaled_identity(64, 10.0);
        let q = featurize("alpha", 64);
        let p = featurize("alpha beta", 64);
        let n = featurize("beta", 64);
        let loss = triplet_loss(
            &encode_features(&params, &q),
            &encode_features(&params, &p),
            &encode_features(&params, &n),
            1.0,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        let grad = triplet_gradient_from_features(&params, &q, &p, &n, 1.0);
        assert!(grad.is_zero());
    }

    /// Central finite differences over every weight touched by the
    /// triplet's features.
    fn fd_gradient(
        params: &EncoderParams,
        q: &SparseVector,
        p: &SparseVector,
        n: &SparseVector,
        margin: f64,
    ) -> GradientMatrix {
        let mut cols: Vec<u32> = q
            .entries()
            .iter()
            .chain(p.entries())
            .chain(n.entries())
            .map(|&(c, _)| c)
            .collect();
        cols.sort_unstable();
        cols.dedup();
        let loss_of = |params: &EncoderParams| {
            triplet_loss(
                &encode_features(params, q),
                &encode_features(params, p),
                &encode_features(params, n),
                margin,
            )
            .unwrap()
        };
        let mut grad = GradientMatrix::new(params.dim);
        for &col in &cols {
            let mut column = vec![0.0; params.dim];
            for (d, slot) in column.iter_mut().enumerate() {
                let mut probe = params.clone();
                let idx = d * params.buckets + col as usize;
                let w = probe.weights[idx];
                let h = 1e-6 * w.abs().max(1.0);
                probe.weights[idx] = w + h;
                let up = loss_of(&probe);
                probe.weights[idx] = w - h;
                let down = loss_of(&probe);
                *slot = (up - down) / (2.0 * h);
            }
            grad.columns.insert(col, column);
        }
        grad
    }

    fn gradient_gap(a: &GradientMatrix, b: &GradientMatrix, dim: usize, cols: &[u32]) -> f64 {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for &col in cols {
            for d in 0..dim {
                let diff = a.entry(d, col) - b.entry(d, col);
                num += diff * diff;
                den += b.entry(d, col) * b.entry(d, col);
            }
        }
        (num.sqrt()) / den.sqrt().max(1e-12)
    }

    #[test]
    fn gradients_match_finite_differences_on_random_active_triplets() {
        let vocab = [
            "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
        ];
        let mut rng = rng_from(17);
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 100 {
            attempts += 1;
            assert!(attempts < 1000, "could not find 100 active triplets");
            let text = |rng: &mut crate::hashing::DetRng| {
                let len = rng.random_range(2..6);
                (0..len)
                    .map(|_| vocab[rng.random_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let params = EncoderParams::seeded(32, 4, rng.random()).unwrap();
            let q = featurize(&text(&mut rng), 32);
            let p = featurize(&text(&mut rng), 32);
            let n = featurize(&text(&mut rng), 32);
            if q.is_zero() || p.is_zero() || n.is_zero() {
                continue;
            }
            let analytic = triplet_gradient_from_features(&params, &q, &p, &n, 1.0);
            if analytic.is_zero() {
                continue; // inactive hinge; covered elsewhere
            }
            let numeric = fd_gradient(&params, &q, &p, &n, 1.0);
            let cols: Vec<u32> = numeric.columns.keys().copied().collect();
            let gap = gradient_gap(&analytic, &numeric, params.dim, &cols);
            assert!(gap <= 1e-4, "relative gradient error {gap}");
            checked += 1;
        }
    }

    #[test]
    fn feature_scaling_doubles_the_active_gradient() {
        let params = EncoderParams::seeded(32, 4, 5).unwrap();
        let q = featurize("alpha beta gamma", 32);
        let p = featurize("alpha beta delta", 32);
        let n = featurize("zeta eta theta", 32);
        let base = triplet_gradient_from_features(&params, &q, &p, &n, 1.0);
        assert!(!base.is_zero());
        let doubled = triplet_gradient_from_features(
            &params,
            &q.scaled(2.0),
            &p.scaled(2.0),
            &n.scaled(2.0),
            2.0, // margin scaled too, so the hinge stays active
        );
        let cols: Vec<u32> = base.columns.keys().copied().collect();
        for &col in &cols {
            for d in 0..params.dim() {
                let expected = 2.0 * base.entry(d, col);
                assert!(
                    (doubled.entry(d, col) - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                    "({d},{col})"
                );
            }
        }
    }

    #[test]
    fn zero_loss_triplets_leave_params_unchanged() {
        // Identical query/positive texts and a far negative under large
        // identity weights: loss is zero from the start.
        let params = scaled_identity(64, 10.0);
        let triplets = vec![
            text_triplet("aa aa", "aa aa", "bb"),
            text_triplet("aa", "aa", "bb cc"),
        ];
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (trained, report) = train_encoder(&triplets, &cfg, &params).unwrap();
        assert_eq!(trained.weights(), params.weights());
        for stats in &report.epochs {
            assert_eq!(stats.mean_loss, 0.0);
            assert_eq!(stats.violation_rate, 0.0);
        }
    }

    fn planted_triplets() -> Vec<FacetTextTriplet> {
        let cluster = ["apple banana", "banana cherry", "apple cherry"];
        let noise = ["dog elephant", "fox giraffe", "hyena ibis"];
        let mut triplets = Vec::new();
        for i in 0..24 {
            let q = cluster[i % cluster.len()];
            let p = cluster[(i + 1) % cluster.len()];
            let n = noise[i % noise.len()];
            triplets.push(text_triplet(q, p, n));
        }
        triplets
    }

    #[test]
    fn training_reduces_margin_violations_on_planted_clusters() {
        let init = EncoderParams::seeded(64, 8, 2).unwrap();
        // A hotter schedule than the defaults so the tiny corpus actually
        // closes the margin within the test budget.
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 8,
            ..TrainConfig::default()
        };
        let triplets = planted_triplets();
        let before = margin_violation_rate(&init, &triplets, cfg.margin).unwrap();
        let (trained, report) = train_encoder(&triplets, &cfg, &init).unwrap();
        let after = margin_violation_rate(&trained, &triplets, cfg.margin).unwrap();
        assert!(
            after < before,
            "violation rate did not drop: {before} -> {after}"
        );
        assert_eq!(report.epochs.len(), cfg.epochs);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let init = EncoderParams::seeded(64, 8, 2).unwrap();
        let cfg = TrainConfig::default();
        let triplets = planted_triplets();
        let (a, _) = train_encoder(&triplets, &cfg, &init).unwrap();
        let (b, _) = train_encoder(&triplets, &cfg, &init).unwrap();
        assert_eq!(a.weights(), b.weights());
        let other = TrainConfig {
            seed: 99,
            ..TrainConfig::default()
        };
        let (c, _) = train_encoder(&triplets, &other, &init).unwrap();
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn trained_weights_stay_f32_representable() {
        let init = EncoderParams::seeded(64, 8, 2).unwrap();
        let (trained, _) =
            train_encoder(&planted_triplets(), &TrainConfig::default(), &init).unwrap();
        for &w in trained.weights() {
            assert_eq!(w, f64::from(w as f32));
        }
    }

    #[test]
    fn runaway_training_reports_epoch_and_batch() {
        let init = EncoderParams::seeded(32, 4, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 2,
            margin: 1e300,
            ..TrainConfig::default()
        };
        match train_encoder(&planted_triplets(), &cfg, &init) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn default_training_constants() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 2f64.powi(-5));
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.margin, 1.0);
        assert_eq!(
            EncoderParams::seeded(DEFAULT_BUCKETS, 1, 0)
                .unwrap()
                .buckets,
            1 << 16
        );
        assert_eq!(DEFAULT_DIM, 64);
    }

    #[test]
    fn seeded_init_is_deterministic_bounded_and_f32_clean() {
        let a = EncoderParams::seeded(32, 4, 7).unwrap();
        let b = EncoderParams::seeded(32, 4, 7).unwrap();
        assert_eq!(a.weights(), b.weights());
        let c = EncoderParams::seeded(32, 4, 8).unwrap();
        assert_ne!(a.weights(), c.weights());
        let bound = 1.0 / 32f64.sqrt() + 1e-9;
        for &w in a.weights() {
            assert!(w.abs() <= bound);
            assert_eq!(w, f64::from(w as f32));
        }
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(EncoderParams::seeded(0, 4, 0).is_err());
        assert!(EncoderParams::seeded(48, 4, 0).is_err()); // not a power of two
        assert!(EncoderParams::seeded(32, 0, 0).is_err());
        assert!(EncoderParams::from_weights(32, 2, 0, vec![0.0; 7]).is_err());
        assert!(EncoderParams::from_weights(2, 1, 0, vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn three_identical_encoders_give_identical_embeddings() {
        let params = EncoderParams::seeded(64, 8, 3).unwrap();
        let paper = Paper {
            id: "p".into(),
            title: "A title".into(),
            abstract_text: "Some abstract.".into(),
        };
        let [bg, mt, rs] = facet_embeddings(&params, &params, &params, &paper).unwrap();
        assert_eq!(bg, mt);
        assert_eq!(mt, rs);
        assert_eq!(bg, encode(&params, &encoder_input(&paper)));
    }

    #[test]
    fn empty_abstract_encodes_the_title_alone() {
        let params = EncoderParams::seeded(64, 8, 3).unwrap();
        let paper = Paper {
            id: "p".into(),
            title: "Only title".into(),
            abstract_text: String::new(),
        };
        let [bg, _, _] = facet_embeddings(&params, &params, &params, &paper).unwrap();
        assert_eq!(bg, encode(&params, "Only title"));
    }

    #[test]
    fn mismatched_encoder_dims_are_rejected() {
        let a = EncoderParams::seeded(32, 4, 0).unwrap();
        let b = EncoderParams::seeded(32, 5, 0).unwrap();
        let paper = Paper {
            id: "p".into(),
            title: "T".into(),
            abstract_text: "A.".into(),
        };
        assert!(matches!(
            facet_embeddings(&a, &b, &a, &paper),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn params_file_round_trips_exactly() {
        let init = EncoderParams::seeded(64, 8, 2).unwrap();
        let (trained, _) =
            train_encoder(&planted_triplets(), &TrainConfig::default(), &init).unwrap();
        let mut buf = Vec::new();
        write_encoder_params(&trained, &mut buf).unwrap();
        let back = read_encoder_params(buf.as_slice()).unwrap();
        assert_eq!(back, trained);
        let mut buf2 = Vec::new();
        write_encoder_params(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn params_file_rejects_corruption() {
        let params = EncoderParams::seeded(32, 2, 0).unwrap();
        let mut buf = Vec::new();
        write_encoder_params(&params, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[3] = b'!';
        assert!(matches!(
            read_encoder_params(bad.as_slice()),
            Err(Error::FileFormat(_))
        ));
        assert!(read_encoder_params(&buf[..buf.len() - 2]).is_err());
        let mut trailing = buf.clone();
        trailing.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(
            read_encoder_params(trailing.as_slice()),
            Err(Error::FileFormat(_))
        ));
    }
}
