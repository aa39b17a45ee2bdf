//! Benchmark metrics and task runners.
//!
//! Four task shapes cover the benchmark surface: proximity (graded
//! relevance, nDCG or MAP), retrieval (positives list, recall@k),
//! classification (train/test split, kNN vote, F1), and a regression probe
//! (ridge least squares, Kendall tau-b between predictions and targets).
//! [`run_task`] ranks by cosine similarity with ties broken by ascending id,
//! so results are independent of input order.
//!
//! Metric conventions that the benchmark leaves open are fixed here: nDCG
//! uses linear gains with a `log2(rank+1)` discount, tau is the
//! tie-corrected tau-b, and macro-F1 skips labels absent from both gold and
//! predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::vecmath;

/// Ridge damping applied to the regression probe's normal equations.
pub const PROBE_DAMPING: f64 = 1e-6;

/// Normalized discounted cumulative gain of an already-ranked relevance
/// list: linear gains, `log2(rank+1)` discount, 0 when every relevance is 0.
pub fn ndcg(ranked_relevances: &[f64]) -> Result<f64> {
    if ranked_relevances.is_empty() {
        return Err(Error::Validation("ndcg needs a nonempty ranking".into()));
    }
    if ranked_relevances.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Validation(
            "relevances must be nonnegative and finite".into(),
        ));
    }
    let dcg_of = |rels: &[f64]| -> f64 {
        rels.iter()
            .enumerate()
            .map(|(i, &r)| r / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = ranked_relevances.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).expect("finite relevances"));
    let ideal_dcg = dcg_of(&ideal);
    if ideal_dcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_of(ranked_relevances) / ideal_dcg)
}

/// Average precision of an already-ranked binary relevance list: mean of
/// precision at each relevant position, 0 when nothing is relevant.
pub fn average_precision(ranked_relevant: &[bool]) -> Result<f64> {
    if ranked_relevant.is_empty() {
        return Err(Error::Validation(
            "average precision needs a nonempty ranking".into(),
        ));
    }
    let mut hits = 0usize;
    let mut precision_sum = 0.0f64;
    for (i, &relevant) in ranked_relevant.iter().enumerate() {
        if relevant {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Ok(0.0);
    }
    Ok(precision_sum / hits as f64)
}

/// Fraction of the relevant set found in the top `k` of the ranking.
pub fn recall_at_k(ranked_ids: &[String], relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("recall cutoff k must be at least 1".into()));
    }
    if relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    let found = ranked_ids
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count();
    Ok(found as f64 / relevant.len() as f64)
}

fn tie_pair_count(sorted: &[f64]) -> f64 {
    let mut total = 0.0f64;
    let mut run = 1usize;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += (run * (run - 1)) as f64 / 2.0;
            run = 1;
        }
    }
    total
}

fn merge_count_inversions(values: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut inversions =
        merge_count_inversions(left, scratch) + merge_count_inversions(right, scratch);
    let (mut i, mut j) = (0usize, 0usize);
    for slot in scratch[..n].iter_mut() {
        if i < left.len() && (j >= right.len() || left[i] <= right[j]) {
            *slot = left[i];
            i += 1;
        } else {
            // right[j] jumps ahead of every remaining left element, each of
            // which is strictly greater.
            inversions += (left.len() - i) as u64;
            *slot = right[j];
            j += 1;
        }
    }
    values.copy_from_slice(&scratch[..n]);
    inversions
}

/// Kendall's tau-b between two equally long sequences, computed by sorting
/// and inversion counting rather than a quadratic pair scan. Errors when a
/// sequence has no variation (the coefficient is undefined).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Validation(
            "rank correlation needs at least two observations".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("rank inputs must be finite".into()));
    }

    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap()
            .then_with(|| y[a].partial_cmp(&y[b]).unwrap())
    });
    let x_sorted: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut y_in_x_order: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    // Pair counts tied in x, tied in both, tied in y.
    let n1 = tie_pair_count(&x_sorted);
    let mut joint: Vec<(f64, f64)> = x_sorted
        .iter()
        .copied()
        .zip(y_in_x_order.iter().copied())
        .collect();
    joint.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut n3 = 0.0f64;
    let mut run = 1usize;
    for i in 1..=joint.len() {
        if i < joint.len() && joint[i] == joint[i - 1] {
            run += 1;
        } else {
            n3 += (run * (run - 1)) as f64 / 2.0;
            run = 1;
        }
    }
    let mut y_sorted = y_in_x_order.clone();
    y_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n2 = tie_pair_count(&y_sorted);

    let n0 = (n * (n - 1)) as f64 / 2.0;
    let denom_x = n0 - n1;
    let denom_y = n0 - n2;
    if denom_x == 0.0 || denom_y == 0.0 {
        return Err(Error::AllTies(
            if denom_x == 0.0 { "first" } else { "second" }.to_string()
                + " sequence has no variation",
        ));
    }

    let mut scratch = vec![0.0f64; n];
    let swaps = merge_count_inversions(&mut y_in_x_order, &mut scratch);
    let concordant_minus_discordant = n0 - n1 - n2 + n3 - 2.0 * swaps as f64;
    Ok(concordant_minus_discordant / (denom_x * denom_y).sqrt())
}

/// Macro and support-weighted F1. Labels absent from both gold and
/// predictions are skipped by the macro average.
pub fn f1_scores(
    predicted: &[String],
    gold: &[String],
    labels: &BTreeSet<String>,
) -> Result<(f64, f64)> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::Validation("no labeled examples to score".into()));
    }
    for label in predicted.iter().chain(gold) {
        if !labels.contains(label) {
            return Err(Error::Validation(format!(
                "label `{label}` is not in the label set"
            )));
        }
    }
    let mut macro_sum = 0.0f64;
    let mut macro_count = 0usize;
    let mut weighted_sum = 0.0f64;
    for label in labels {
        let tp = predicted
            .iter()
            .zip(gold)
            .filter(|(p, g)| *p == label && *g == label)
            .count() as f64;
        let pred_count = predicted.iter().filter(|p| *p == label).count() as f64;
        let gold_count = gold.iter().filter(|g| *g == label).count() as f64;
        if pred_count == 0.0 && gold_count == 0.0 {
            continue;
        }
        let f1 = if tp == 0.0 {
            0.0
        } else {
            let precision = tp / pred_count;
            let recall = tp / gold_count;
            2.0 * precision * recall / (precision + recall)
        };
        macro_sum += f1;
        macro_count += 1;
        weighted_sum += gold_count * f1;
    }
    Ok((
        macro_sum / macro_count as f64,
        weighted_sum / gold.len() as f64,
    ))
}

/// Cosine k-nearest majority vote. Neighbors order by (distance, id); a
/// vote tie goes to the tied label seen earliest in that order.
pub fn knn_classify(
    train: &[(String, EmbeddingVector, String)],
    test: &[EmbeddingVector],
    k: usize,
) -> Result<Vec<String>> {
    if train.is_empty() {
        return Err(Error::Validation("knn needs a nonempty train set".into()));
    }
    if k == 0 {
        return Err(Error::Config("knn k must be at least 1".into()));
    }
    let mut predictions = Vec::with_capacity(test.len());
    for probe in test {
        let mut neighbors: Vec<(f64, &str, &str)> = train
            .iter()
            .map(|(id, emb, label)| {
                (
                    vecmath::cosine_distance(&probe.values, &emb.values),
                    id.as_str(),
                    label.as_str(),
                )
            })
            .collect();
        neighbors.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("cosine distances are finite")
                .then_with(|| a.1.cmp(b.1))
        });
        neighbors.truncate(k);
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for &(_, _, label) in &neighbors {
            *votes.entry(label).or_insert(0) += 1;
        }
        let top = votes.values().copied().max().expect("k >= 1");
        let winner = neighbors
            .iter()
            .find(|(_, _, label)| votes[label] == top)
            .expect("some neighbor holds the top vote")
            .2;
        predictions.push(winner.to_string());
    }
    Ok(predictions)
}

/// Ridge least squares (damping [`PROBE_DAMPING`], bias column included)
/// fit on the train pairs; returns predictions for the test embeddings.
pub fn linear_probe(
    train: &[(EmbeddingVector, f64)],
    test: &[EmbeddingVector],
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Validation("probe needs a nonempty train set".into()));
    }
    let dim = train[0].0.dim();
    for (emb, target) in train {
        if emb.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: emb.dim(),
            });
        }
        if !target.is_finite() {
            return Err(Error::Validation("probe targets must be finite".into()));
        }
    }
    let n = train.len();
    let cols = dim + 1; // trailing bias column
    let mut flat = Vec::with_capacity(n * cols);
    for (emb, _) in train {
        flat.extend_from_slice(&emb.values);
        flat.push(1.0);
    }
    let x = DMatrix::from_row_slice(n, cols, &flat);
    let y = DVector::from_iterator(n, train.iter().map(|(_, t)| *t));
    let gram = x.transpose() * &x + DMatrix::identity(cols, cols) * PROBE_DAMPING;
    let rhs = x.transpose() * y;
    let solution = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .ok_or(Error::SingularSystem)?;

    let mut predictions = Vec::with_capacity(test.len());
    for emb in test {
        if emb.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: emb.dim(),
            });
        }
        let mut value = solution[dim];
        for (j, &v) in emb.values.iter().enumerate() {
            value += solution[j] * v;
        }
        predictions.push(value);
    }
    Ok(predictions)
}

/// Metric choice for proximity tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProximityMetric {
    Ndcg,
    Map,
}

/// Metric choice for classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationMetric {
    MacroF1,
    WeightedF1,
}

/// Which side of a train/test split a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One graded candidate for a proximity query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub id: String,
    pub relevance: f64,
}

/// A proximity query with its graded candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityQuery {
    pub query: String,
    pub candidates: Vec<RelevanceJudgment>,
}

/// A retrieval query; the candidate pool is every embedded document except
/// the query itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub query: String,
    pub positives: Vec<String>,
}

/// A document with a class label on one side of the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub id: String,
    pub label: String,
    pub split: Split,
}

/// A document with a real-valued target on one side of the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDoc {
    pub id: String,
    pub target: f64,
    pub split: Split,
}

/// One benchmark task in any of the four shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationTask {
    Proximity {
        name: String,
        metric: ProximityMetric,
        queries: Vec<ProximityQuery>,
    },
    Retrieval {
        name: String,
        k: usize,
        queries: Vec<RetrievalQuery>,
    },
    Classification {
        name: String,
        metric: ClassificationMetric,
        k: usize,
        docs: Vec<LabeledDoc>,
    },
    RegressionProbe {
        name: String,
        docs: Vec<TargetDoc>,
    },
}

impl ValidationTask {
    pub fn name(&self) -> &str {
        match self {
            ValidationTask::Proximity { name, .. }
            | ValidationTask::Retrieval { name, .. }
            | ValidationTask::Classification { name, .. }
            | ValidationTask::RegressionProbe { name, .. } => name,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ValidationTask::Proximity { .. } => "proximity",
            ValidationTask::Retrieval { .. } => "retrieval",
            ValidationTask::Classification { .. } => "classification",
            ValidationTask::RegressionProbe { .. } => "regression-probe",
        }
    }

    /// Name of the metric [`run_task`] will report.
    pub fn metric_name(&self) -> String {
        match self {
            ValidationTask::Proximity { metric, .. } => match metric {
                ProximityMetric::Ndcg => "ndcg".into(),
                ProximityMetric::Map => "map".into(),
            },
            ValidationTask::Retrieval { k, .. } => format!("recall@{k}"),
            ValidationTask::Classification { metric, .. } => match metric {
                ClassificationMetric::MacroF1 => "macro_f1".into(),
                ClassificationMetric::WeightedF1 => "weighted_f1".into(),
            },
            ValidationTask::RegressionProbe { .. } => "kendall_tau".into(),
        }
    }

    /// Every document id the task touches.
    pub fn ids(&self) -> BTreeSet<&str> {
        let mut ids = BTreeSet::new();
        match self {
            ValidationTask::Proximity { queries, .. } => {
                for q in queries {
                    ids.insert(q.query.as_str());
                    for c in &q.candidates {
                        ids.insert(c.id.as_str());
                    }
                }
            }
            ValidationTask::Retrieval { queries, .. } => {
                for q in queries {
                    ids.insert(q.query.as_str());
                    for p in &q.positives {
                        ids.insert(p.as_str());
                    }
                }
            }
            ValidationTask::Classification { docs, .. } => {
                for d in docs {
                    ids.insert(d.id.as_str());
                }
            }
            ValidationTask::RegressionProbe { docs, .. } => {
                for d in docs {
                    ids.insert(d.id.as_str());
                }
            }
        }
        ids
    }

    pub fn validate(&self) -> Result<()> {
        if self.name().trim().is_empty() {
            return Err(Error::Validation("task name is empty".into()));
        }
        match self {
            ValidationTask::Proximity { queries, .. } => {
                if queries.is_empty() {
                    return Err(Error::Validation("proximity task has no queries".into()));
                }
                for q in queries {
                    if q.candidates.is_empty() {
                        return Err(Error::Validation(format!(
                            "query `{}` has no candidates",
                            q.query
                        )));
                    }
                    let mut seen = BTreeSet::new();
                    for c in &q.candidates {
                        if !c.relevance.is_finite() || c.relevance < 0.0 {
                            return Err(Error::Validation(format!(
                                "candidate `{}` of query `{}` has invalid relevance {}",
                                c.id, q.query, c.relevance
                            )));
                        }
                        if c.id == q.query {
                            return Err(Error::Validation(format!(
                                "query `{}` appears among its own candidates",
                                q.query
                            )));
                        }
                        if !seen.insert(c.id.as_str()) {
                            return Err(Error::Validation(format!(
                                "candidate `{}` repeats for query `{}`",
                                c.id, q.query
                            )));
                        }
                    }
                }
            }
            ValidationTask::Retrieval { k, queries, .. } => {
                if *k == 0 {
                    return Err(Error::Config("retrieval k must be at least 1".into()));
                }
                if queries.is_empty() {
                    return Err(Error::Validation("retrieval task has no queries".into()));
                }
                for q in queries {
                    if q.positives.is_empty() {
                        return Err(Error::EmptyRelevantSet);
                    }
                    let set: BTreeSet<&str> = q.positives.iter().map(String::as_str).collect();
                    if set.len() != q.positives.len() {
                        return Err(Error::Validation(format!(
                            "positives repeat for query `{}`",
                            q.query
                        )));
                    }
                    if set.contains(q.query.as_str()) {
                        return Err(Error::Validation(format!(
                            "query `{}` lists itself as a positive",
                            q.query
                        )));
                    }
                }
            }
            ValidationTask::Classification { k, docs, .. } => {
                if *k == 0 {
                    return Err(Error::Config("knn k must be at least 1".into()));
                }
                check_split_docs(
                    docs.iter().map(|d| (d.id.as_str(), d.split)),
                    docs.iter().all(|d| !d.label.trim().is_empty()),
                )?;
            }
            ValidationTask::RegressionProbe { docs, .. } => {
                check_split_docs(
                    docs.iter().map(|d| (d.id.as_str(), d.split)),
                    docs.iter().all(|d| d.target.is_finite()),
                )?;
                let test = docs.iter().filter(|d| d.split == Split::Test).count();
                if test < 2 {
                    return Err(Error::Validation(
                        "regression probe needs at least two test documents".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_split_docs<'a, I>(docs: I, payloads_valid: bool) -> Result<()>
where
    I: Iterator<Item = (&'a str, Split)>,
{
    if !payloads_valid {
        return Err(Error::Validation(
            "document payloads must be nonempty labels or finite targets".into(),
        ));
    }
    let mut train = 0usize;
    let mut test = 0usize;
    let mut seen = BTreeSet::new();
    for (id, split) in docs {
        if !seen.insert(id.to_string()) {
            return Err(Error::Validation(format!(
                "document `{id}` appears in the split twice"
            )));
        }
        match split {
            Split::Train => train += 1,
            Split::Test => test += 1,
        }
    }
    if train == 0 || test == 0 {
        return Err(Error::Validation(
            "both split sides must be nonempty".into(),
        ));
    }
    Ok(())
}

/// One reported metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    pub value: f64,
    pub support: usize,
}

fn embedding_of<'a>(
    embeddings: &'a BTreeMap<String, EmbeddingVector>,
    id: &str,
) -> Result<&'a EmbeddingVector> {
    embeddings
        .get(id)
        .ok_or_else(|| Error::MissingEmbedding { id: id.to_string() })
}

/// Ids ranked by descending cosine similarity to `query`, ties broken by
/// ascending id so the result is independent of input order.
fn rank_ids<'a, I>(query: &EmbeddingVector, candidates: I) -> Vec<&'a str>
where
    I: Iterator<Item = (&'a str, &'a EmbeddingVector)>,
{
    let mut scored: Vec<(f64, &str)> = candidates
        .map(|(id, emb)| (vecmath::cosine_similarity(&query.values, &emb.values), id))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("cosine similarities are finite")
            .then_with(|| a.1.cmp(b.1))
    });
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Runs one task over an embedding table and reports its metric.
pub fn run_task(
    task: &ValidationTask,
    embeddings: &BTreeMap<String, EmbeddingVector>,
) -> Result<MetricResult> {
    task.validate()?;
    for id in task.ids() {
        embedding_of(embeddings, id)?;
    }
    let value = match task {
        ValidationTask::Proximity {
            metric, queries, ..
        } => {
            let mut total = 0.0f64;
            for q in queries {
                let query_emb = embedding_of(embeddings, &q.query)?;
                let relevance: BTreeMap<&str, f64> = q
                    .candidates
                    .iter()
                    .map(|c| (c.id.as_str(), c.relevance))
                    .collect();
                let ranked = rank_ids(
                    query_emb,
                    q.candidates
                        .iter()
                        .map(|c| Ok((c.id.as_str(), embedding_of(embeddings, &c.id)?)))
                        .collect::<Result<Vec<_>>>()?
                        .into_iter(),
                );
                let ranked_rel: Vec<f64> = ranked.iter().map(|id| relevance[id]).collect();
                total += match metric {
                    ProximityMetric::Ndcg => ndcg(&ranked_rel)?,
                    ProximityMetric::Map => {
                        let binary: Vec<bool> = ranked_rel.iter().map(|&r| r > 0.0).collect();
                        average_precision(&binary)?
                    }
                };
            }
            total / queries.len() as f64
        }
        ValidationTask::Retrieval { k, queries, .. } => {
            let mut total = 0.0f64;
            for q in queries {
                let query_emb = embedding_of(embeddings, &q.query)?;
                let ranked: Vec<String> = rank_ids(
                    query_emb,
                    embeddings
                        .iter()
                        .filter(|(id, _)| id.as_str() != q.query)
                        .map(|(id, emb)| (id.as_str(), emb)),
                )
                .into_iter()
                .map(str::to_owned)
                .collect();
                let relevant: BTreeSet<String> = q.positives.iter().cloned().collect();
                total += recall_at_k(&ranked, &relevant, *k)?;
            }
            total / queries.len() as f64
        }
        ValidationTask::Classification {
            metric, k, docs, ..
        } => {
            let mut train = Vec::new();
            let mut test_embs = Vec::new();
            let mut gold = Vec::new();
            for d in docs {
                let emb = embedding_of(embeddings, &d.id)?.clone();
                match d.split {
                    Split::Train => train.push((d.id.clone(), emb, d.label.clone())),
                    Split::Test => {
                        test_embs.push(emb);
                        gold.push(d.label.clone());
                    }
                }
            }
            let predicted = knn_classify(&train, &test_embs, *k)?;
            let labels: BTreeSet<String> = docs.iter().map(|d| d.label.clone()).collect();
            let (macro_f1, weighted_f1) = f1_scores(&predicted, &gold, &labels)?;
            match metric {
                ClassificationMetric::MacroF1 => macro_f1,
                ClassificationMetric::WeightedF1 => weighted_f1,
            }
        }
        ValidationTask::RegressionProbe { docs, .. } => {
            let mut train = Vec::new();
            let mut test_embs = Vec::new();
            let mut gold = Vec::new();
            for d in docs {
                let emb = embedding_of(embeddings, &d.id)?.clone();
                match d.split {
                    Split::Train => train.push((emb, d.target)),
                    Split::Test => {
                        test_embs.push(emb);
                        gold.push(d.target);
                    }
                }
            }
            let predicted = linear_probe(&train, &test_embs)?;
            kendall_tau(&predicted, &gold)?
        }
    };
    let support = match task {
        ValidationTask::Proximity { queries, .. } => queries.len(),
        ValidationTask::Retrieval { queries, .. } => queries.len(),
        ValidationTask::Classification { docs, .. } => {
            docs.iter().filter(|d| d.split == Split::Test).count()
        }
        ValidationTask::RegressionProbe { docs, .. } => {
            docs.iter().filter(|d| d.split == Split::Test).count()
        }
    };
    Ok(MetricResult {
        metric: task.metric_name(),
        value,
        support,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskHeader {
    kind: String,
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    metric: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
}

/// Writes a task file: one header line, then one payload line per query or
/// document.
pub fn write_task<W: Write>(task: &ValidationTask, mut w: W) -> Result<()> {
    let ser = |e: serde_json::Error| Error::TaskFormat(e.to_string());
    let header = TaskHeader {
        kind: task.kind_name().to_string(),
        name: task.name().to_string(),
        metric: match task {
            ValidationTask::Proximity { metric, .. } => Some(
                serde_json::to_value(metric)
                    .map_err(ser)?
                    .as_str()
                    .expect("metric serializes to a string")
                    .to_string(),
            ),
            ValidationTask::Classification { metric, .. } => Some(
                serde_json::to_value(metric)
                    .map_err(ser)?
                    .as_str()
                    .expect("metric serializes to a string")
                    .to_string(),
            ),
            _ => None,
        },
        k: match task {
            ValidationTask::Retrieval { k, .. } | ValidationTask::Classification { k, .. } => {
                Some(*k)
            }
            _ => None,
        },
    };
    serde_json::to_writer(&mut w, &header).map_err(ser)?;
    w.write_all(b"\n")?;
    match task {
        ValidationTask::Proximity { queries, .. } => {
            for q in queries {
                serde_json::to_writer(&mut w, q).map_err(ser)?;
                w.write_all(b"\n")?;
            }
        }
        ValidationTask::Retrieval { queries, .. } => {
            for q in queries {
                serde_json::to_writer(&mut w, q).map_err(ser)?;
                w.write_all(b"\n")?;
            }
        }
        ValidationTask::Classification { docs, .. } => {
            for d in docs {
                serde_json::to_writer(&mut w, d).map_err(ser)?;
                w.write_all(b"\n")?;
            }
        }
        ValidationTask::RegressionProbe { docs, .. } => {
            for d in docs {
                serde_json::to_writer(&mut w, d).map_err(ser)?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Reads a task file written by [`write_task`], validating the result.
pub fn read_task<R: BufRead>(r: R) -> Result<ValidationTask> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::TaskFormat("task file is empty".into()))??;
    let header: TaskHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::TaskFormat(format!("header line: {e}")))?;

    let mut payload = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        payload.push((idx + 2, line)); // 1-based line number in the file
    }
    let parse_all = |kind: &str| -> Result<Vec<serde_json::Value>> {
        payload
            .iter()
            .map(|(lineno, line)| {
                serde_json::from_str(line)
                    .map_err(|e| Error::TaskFormat(format!("{kind} payload line {lineno}: {e}")))
            })
            .collect()
    };

    let metric_str = header.metric.as_deref();
    let task = match header.kind.as_str() {
        "proximity" => {
            let metric = match metric_str {
                Some("ndcg") => ProximityMetric::Ndcg,
                Some("map") => ProximityMetric::Map,
                other => {
                    return Err(Error::TaskFormat(format!(
                        "proximity metric must be ndcg or map, got {other:?}"
                    )))
                }
            };
            let queries = parse_all("proximity")?
                .into_iter()
                .map(serde_json::from_value)
                .collect::<std::result::Result<Vec<ProximityQuery>, _>>()
                .map_err(|e| Error::TaskFormat(e.to_string()))?;
            ValidationTask::Proximity {
                name: header.name,
                metric,
                queries,
            }
        }
        "retrieval" => {
            let k = header
                .k
                .ok_or_else(|| Error::TaskFormat("retrieval header needs k".into()))?;
            let queries = parse_all("retrieval")?
                .into_iter()
                .map(serde_json::from_value)
                .collect::<std::result::Result<Vec<RetrievalQuery>, _>>()
                .map_err(|e| Error::TaskFormat(e.to_string()))?;
            ValidationTask::Retrieval {
                name: header.name,
                k,
                queries,
            }
        }
        "classification" => {
            let metric = match metric_str {
                Some("macro_f1") => ClassificationMetric::MacroF1,
                Some("weighted_f1") => ClassificationMetric::WeightedF1,
                other => {
                    return Err(Error::TaskFormat(format!(
                        "classification metric must be macro_f1 or weighted_f1, got {other:?}"
                    )))
                }
            };
            let k = header
                .k
                .ok_or_else(|| Error::TaskFormat("classification header needs k".into()))?;
            let docs = parse_all("classification")?
                .into_iter()
                .map(serde_json::from_value)
                .collect::<std::result::Result<Vec<LabeledDoc>, _>>()
                .map_err(|e| Error::TaskFormat(e.to_string()))?;
            ValidationTask::Classification {
                name: header.name,
                metric,
                k,
                docs,
            }
        }
        "regression-probe" => {
            let docs = parse_all("regression-probe")?
                .into_iter()
                .map(serde_json::from_value)
                .collect::<std::result::Result<Vec<TargetDoc>, _>>()
                .map_err(|e| Error::TaskFormat(e.to_string()))?;
            ValidationTask::RegressionProbe {
                name: header.name,
                docs,
            }
        }
        other => {
            return Err(Error::TaskFormat(format!("unknown task kind `{other}`")));
        }
    };
    task.validate()
        .map_err(|e| Error::TaskFormat(e.to_string()))?;
    Ok(task)
}
