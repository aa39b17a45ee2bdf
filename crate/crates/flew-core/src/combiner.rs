//! Simplex-weighted combination of the three facet embeddings.
//!
//! A document's final representation is a weighted sum of its background,
//! method, and result embeddings under a strictly positive weight triple
//! that sums to one. Because no single triple suits every task, weights are
//! chosen per task by exhaustive search over a simplex grid, scoring each
//! point on validation data and keeping the first maximum.
//!
//! Grid weights are built as integer numerators over the grid resolution,
//! so the sum-to-one constraint holds exactly in the rational form and only
//! the final conversion to `f64` rounds. Facet vectors are combined raw; a
//! caller that wants unit-normalized inputs applies [`unit_normalized`]
//! first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::eval::{run_task, ValidationTask};
use crate::facet_graph::Facet;
use crate::vecmath;

/// How far a float weight triple may drift from summing to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ExactTriple {
    bg: u32,
    mt: u32,
    rs: u32,
    denom: u32,
}

/// A strictly positive convex weight triple over the three facets.
///
/// Constructed either from floats (validated against the simplex
/// constraints) or from an exact integer fraction, which grid enumeration
/// uses so the constraints hold without rounding. Equality compares the
/// float view only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "WeightRepr", into = "WeightRepr")]
pub struct WeightVector {
    background: f64,
    method: f64,
    result: f64,
    exact: Option<ExactTriple>,
}

#[derive(Serialize, Deserialize)]
struct WeightRepr {
    background: f64,
    method: f64,
    result: f64,
}

impl From<WeightVector> for WeightRepr {
    fn from(w: WeightVector) -> Self {
        WeightRepr {
            background: w.background,
            method: w.method,
            result: w.result,
        }
    }
}

impl TryFrom<WeightRepr> for WeightVector {
    type Error = Error;

    fn try_from(r: WeightRepr) -> Result<Self> {
        WeightVector::from_floats(r.background, r.method, r.result)
    }
}

impl PartialEq for WeightVector {
    fn eq(&self, other: &Self) -> bool {
        self.background == other.background
            && self.method == other.method
            && self.result == other.result
    }
}

impl WeightVector {
    /// Validates the simplex constraints: every coordinate strictly
    /// positive and the triple summing to one within
    /// [`WEIGHT_SUM_TOLERANCE`].
    pub fn from_floats(background: f64, method: f64, result: f64) -> Result<Self> {
        for (name, value) in [
            ("background", background),
            ("method", method),
            ("result", result),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::Validation(format!(
                    "{name} weight must be strictly positive, got {value}"
                )));
            }
        }
        let sum = background + method + result;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "weights must sum to 1, got {sum}"
            )));
        }
        Ok(WeightVector {
            background,
            method,
            result,
            exact: None,
        })
    }

    /// Builds `(bg/denom, mt/denom, rs/denom)` where the numerators sum to
    /// the denominator exactly.
    pub fn from_fraction(bg: u32, mt: u32, rs: u32, denom: u32) -> Result<Self> {
        if bg == 0 || mt == 0 || rs == 0 {
            return Err(Error::Validation(
                "fraction weights must have positive numerators".into(),
            ));
        }
        if bg + mt + rs != denom {
            return Err(Error::Validation(format!(
                "numerators {bg}+{mt}+{rs} do not sum to the denominator {denom}"
            )));
        }
        let d = f64::from(denom);
        Ok(WeightVector {
            background: f64::from(bg) / d,
            method: f64::from(mt) / d,
            result: f64::from(rs) / d,
            exact: Some(ExactTriple { bg, mt, rs, denom }),
        })
    }

    /// The equal-thirds triple.
    pub fn uniform() -> Self {
        Self::from_fraction(1, 1, 1, 3).expect("1+1+1 = 3")
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn method(&self) -> f64 {
        self.method
    }

    pub fn result(&self) -> f64 {
        self.result
    }

    pub fn weight(&self, facet: Facet) -> f64 {
        match facet {
            Facet::Background => self.background,
            Facet::Method => self.method,
            Facet::Result => self.result,
        }
    }

    /// The exact integer backing `(bg, mt, rs, denom)` when the triple came
    /// from [`WeightVector::from_fraction`].
    pub fn fraction(&self) -> Option<(u32, u32, u32, u32)> {
        self.exact.map(|e| (e.bg, e.mt, e.rs, e.denom))
    }
}

impl std::fmt::Display for WeightVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(background {}, method {}, result {})",
            self.background, self.method, self.result
        )
    }
}

/// Grid granularity: a step in `(0, 0.5]` whose reciprocal is an integer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GridSpec {
    step: f64,
    resolution: u32,
}

impl GridSpec {
    /// Fine enough to resolve weight differences that matter, coarse enough
    /// that exhaustive search stays trivial (171 points).
    pub const DEFAULT_STEP: f64 = 0.05;

    pub fn new(step: f64) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 || step > 0.5 {
            return Err(Error::Config(format!(
                "grid step must lie in (0, 0.5], got {step}"
            )));
        }
        let resolution = (1.0 / step).round();
        if (resolution * step - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "grid step {step} does not divide 1 into whole parts"
            )));
        }
        Ok(GridSpec {
            step,
            resolution: resolution as u32,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// The denominator `m = 1/step`.
    pub fn resolution(&self) -> u32 {
        self.resolution
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::new(Self::DEFAULT_STEP).expect("default step is valid")
    }
}

impl TryFrom<f64> for GridSpec {
    type Error = Error;

    fn try_from(step: f64) -> Result<Self> {
        GridSpec::new(step)
    }
}

impl From<GridSpec> for f64 {
    fn from(spec: GridSpec) -> f64 {
        spec.step
    }
}

/// Weighted sum of the three facet embeddings.
///
/// Weight validity is enforced at construction, so only the dimensions are
/// checked here.
pub fn combine(
    w: &WeightVector,
    e_bg: &EmbeddingVector,
    e_mt: &EmbeddingVector,
    e_rs: &EmbeddingVector,
) -> Result<EmbeddingVector> {
    for other in [e_mt, e_rs] {
        if other.dim() != e_bg.dim() {
            return Err(Error::DimensionMismatch {
                expected: e_bg.dim(),
                got: other.dim(),
            });
        }
    }
    let values = e_bg
        .values
        .iter()
        .zip(&e_mt.values)
        .zip(&e_rs.values)
        .map(|((&bg, &mt), &rs)| w.background * bg + w.method * mt + w.result * rs)
        .collect();
    Ok(EmbeddingVector { values })
}

/// Combines every document's facet triple under one weight vector.
pub fn combine_all(
    w: &WeightVector,
    facet_vectors: &BTreeMap<String, [EmbeddingVector; 3]>,
) -> Result<BTreeMap<String, EmbeddingVector>> {
    facet_vectors
        .iter()
        .map(|(id, [bg, mt, rs])| Ok((id.clone(), combine(w, bg, mt, rs)?)))
        .collect()
}

/// Rescales every facet vector to unit length (zero vectors pass through),
/// for callers that want normalized inputs to the weighted sum.
pub fn unit_normalized(
    facet_vectors: &BTreeMap<String, [EmbeddingVector; 3]>,
) -> BTreeMap<String, [EmbeddingVector; 3]> {
    let normalize = |e: &EmbeddingVector| {
        let n = vecmath::norm(&e.values);
        if n == 0.0 {
            e.clone()
        } else {
            EmbeddingVector {
                values: e.values.iter().map(|v| v / n).collect(),
            }
        }
    };
    facet_vectors
        .iter()
        .map(|(id, [bg, mt, rs])| (id.clone(), [normalize(bg), normalize(mt), normalize(rs)]))
        .collect()
}

/// All strictly positive triples `(a, b, c)·step` with `a + b + c = 1/step`,
/// in lexicographic order of `(a, b)`. The count is `C(m − 1, 2)` for
/// `m = 1/step`.
pub fn weight_grid(spec: GridSpec) -> Result<Vec<WeightVector>> {
    let m = spec.resolution();
    if m < 3 {
        return Err(Error::Config(format!(
            "grid step {} admits no strictly positive triple",
            spec.step()
        )));
    }
    let mut grid = Vec::with_capacity(((m - 1) * (m - 2) / 2) as usize);
    for a in 1..=m - 2 {
        for b in 1..=m - 1 - a {
            let c = m - a - b;
            grid.push(WeightVector::from_fraction(a, b, c, m)?);
        }
    }
    Ok(grid)
}

/// One scored grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub weights: WeightVector,
    pub score: f64,
}

/// The result of a grid search: the first-maximum weight triple and the
/// full score table in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub best: WeightVector,
    pub best_score: f64,
    pub metric: String,
    pub table: Vec<GridScore>,
}

/// Scores `task` at every grid point and returns the maximizer, ties broken
/// by enumeration order. A metric failure names the offending grid point.
pub fn grid_search(
    grid: &[WeightVector],
    task: &ValidationTask,
    facet_vectors: &BTreeMap<String, [EmbeddingVector; 3]>,
) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("weight grid is empty".into()));
    }
    task.validate()?;
    for id in task.ids() {
        if !facet_vectors.contains_key(id) {
            return Err(Error::MissingEmbedding { id: id.to_string() });
        }
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(WeightVector, f64)> = None;
    let mut metric = String::new();
    for w in grid {
        let combined = combine_all(w, facet_vectors)?;
        let result = run_task(task, &combined)
            .map_err(|e| Error::Validation(format!("grid point {w}: {e}")))?;
        metric = result.metric;
        if best.is_none_or(|(_, s)| result.value > s) {
            best = Some((*w, result.value));
        }
        table.push(GridScore {
            weights: *w,
            score: result.value,
        });
    }
    let (best, best_score) = best.expect("grid is nonempty");
    Ok(GridSearchOutcome {
        best,
        best_score,
        metric,
        table,
    })
}

/// The per-task weight selection record, serialized as `weights.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub task: String,
    pub step: f64,
    pub metric: String,
    pub best: WeightVector,
    pub best_score: f64,
    pub table: Vec<GridScore>,
}

impl TaskWeights {
    pub fn from_outcome(task: &str, spec: GridSpec, outcome: &GridSearchOutcome) -> Self {
        TaskWeights {
            task: task.to_string(),
            step: spec.step(),
            metric: outcome.metric.clone(),
            best: outcome.best,
            best_score: outcome.best_score,
            table: outcome.table.clone(),
        }
    }
}
