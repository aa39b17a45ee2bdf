//! Pipeline configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the config file's directory, so a config travels with
//! its corpus. Only the split-service settings can be overridden from the
//! environment (`FLEW_SPLIT_ENDPOINT`, `FLEW_SPLIT_MODEL`,
//! `FLEW_SPLIT_TIMEOUT_SECS`, `FLEW_SPLIT_RETRIES`); everything else is
//! file- or flag-driven so runs stay reproducible.

use std::path::{Path, PathBuf};

use flew_core::encoder::{TrainConfig, DEFAULT_BUCKETS, DEFAULT_DIM};
use flew_core::graph_embed::GraphTrainConfig;
use flew_core::triplet_sampler::{SamplerPolicy, TextMode};

use crate::error::{PipelineError, Result};

/// Split-service client settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitterSettings {
    /// `None` disables the service; abstracts are split by the cue
    /// heuristic directly.
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub retries: u32,
    /// Fall back to the heuristic when a service call fails; `false`
    /// propagates the failure instead.
    pub fallback: bool,
}

impl Default for SplitterSettings {
    fn default() -> Self {
        SplitterSettings {
            endpoint: None,
            model: "default".to_string(),
            timeout_secs: 30,
            retries: 2,
            fallback: true,
        }
    }
}

/// The full effective configuration of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub papers: PathBuf,
    pub citations: PathBuf,
    pub tasks_dir: PathBuf,
    pub stage_dir: PathBuf,
    pub seed: u64,
    pub textual_mode: TextMode,
    pub normalize_before_combine: bool,
    /// Exclude a query's directly linked papers (either direction, same
    /// facet) from its negative draws.
    pub exclude_cited: bool,
    pub graph: GraphTrainConfig,
    pub sampler: SamplerPolicy,
    pub encoder_buckets: usize,
    pub encoder_dim: usize,
    pub encoder: TrainConfig,
    pub grid_step: f64,
    pub splitter: SplitterSettings,
}

fn parse_number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(PipelineError::Config(format!(
            "key `{key}`: expected true or false, got `{other}`"
        ))),
    }
}

/// Parses config text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<PipelineConfig> {
    let resolve = |value: &str| -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };

    let mut papers = None;
    let mut citations = None;
    let mut tasks_dir = None;
    let mut stage_dir = resolve("stages");
    let mut seed = 0u64;
    let mut textual_mode = TextMode::Faceted;
    let mut normalize_before_combine = false;
    let mut exclude_cited = true;
    let mut graph = GraphTrainConfig::default();
    let mut sampler = SamplerPolicy::default();
    let mut encoder_buckets = DEFAULT_BUCKETS;
    let mut encoder_dim = DEFAULT_DIM;
    let mut encoder = TrainConfig::default();
    let mut grid_step = flew_core::combiner::GridSpec::DEFAULT_STEP;
    let mut splitter = SplitterSettings::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            PipelineError::Config(format!("line {}: expected `key = value`", idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "papers" => papers = Some(resolve(value)),
            "citations" => citations = Some(resolve(value)),
            "tasks_dir" => tasks_dir = Some(resolve(value)),
            "stage_dir" => stage_dir = resolve(value),
            "seed" => seed = parse_number(key, value)?,
            "textual_mode" => {
                textual_mode = value.parse().map_err(|_| {
                    PipelineError::Config(format!(
                        "key `textual_mode`: expected full or faceted, got `{value}`"
                    ))
                })?
            }
            "normalize_before_combine" => normalize_before_combine = parse_bool(key, value)?,
            "graph.dim" => graph.dim = parse_number(key, value)?,
            "graph.epochs" => graph.epochs = parse_number(key, value)?,
            "graph.learning_rate" => graph.learning_rate = parse_number(key, value)?,
            "graph.negatives_per_edge" => graph.negatives_per_edge = parse_number(key, value)?,
            "graph.margin" => graph.margin = parse_number(key, value)?,
            "sampler.k_pos" => sampler.k_pos = parse_number(key, value)?,
            "sampler.hard_lo" => sampler.hard_lo = parse_number(key, value)?,
            "sampler.hard_hi" => sampler.hard_hi = parse_number(key, value)?,
            "sampler.triplets_per_query" => sampler.triplets_per_query = parse_number(key, value)?,
            "sampler.hard_fraction" => sampler.hard_fraction = parse_number(key, value)?,
            "sampler.exclude_cited" => exclude_cited = parse_bool(key, value)?,
            "encoder.buckets" => encoder_buckets = parse_number(key, value)?,
            "encoder.dim" => encoder_dim = parse_number(key, value)?,
            "encoder.learning_rate" => encoder.learning_rate = parse_number(key, value)?,
            "encoder.batch_size" => encoder.batch_size = parse_number(key, value)?,
            "encoder.epochs" => encoder.epochs = parse_number(key, value)?,
            "encoder.margin" => encoder.margin = parse_number(key, value)?,
            "grid.step" => grid_step = parse_number(key, value)?,
            "splitter.endpoint" => {
                splitter.endpoint = if value.is_empty() {
                    None
                } else {
                    Some(value.to_string())
                }
            }
            "splitter.model" => splitter.model = value.to_string(),
            "splitter.timeout_secs" => splitter.timeout_secs = parse_number(key, value)?,
            "splitter.retries" => splitter.retries = parse_number(key, value)?,
            "splitter.fallback" => splitter.fallback = parse_bool(key, value)?,
            other => {
                return Err(PipelineError::Config(format!(
                    "line {}: unknown key `{other}`",
                    idx + 1
                )))
            }
        }
    }

    let require = |name: &str, value: Option<PathBuf>| {
        value.ok_or_else(|| PipelineError::Config(format!("missing required key `{name}`")))
    };
    Ok(PipelineConfig {
        papers: require("papers", papers)?,
        citations: require("citations", citations)?,
        tasks_dir: require("tasks_dir", tasks_dir)?,
        stage_dir,
        seed,
        textual_mode,
        normalize_before_combine,
        exclude_cited,
        graph,
        sampler,
        encoder_buckets,
        encoder_dim,
        encoder,
        grid_step,
        splitter,
    })
}

/// Applies the split-service environment overrides through a lookup
/// function (`std::env::var` in production, a map in tests).
pub fn apply_env_overrides<F>(cfg: &mut PipelineConfig, lookup: F)
where
    F: Fn(&str) -> Option<String>,
{
    if let Some(endpoint) = lookup("FLEW_SPLIT_ENDPOINT") {
        cfg.splitter.endpoint = if endpoint.is_empty() {
            None
        } else {
            Some(endpoint)
        };
    }
    if let Some(model) = lookup("FLEW_SPLIT_MODEL") {
        cfg.splitter.model = model;
    }
    if let Some(timeout) = lookup("FLEW_SPLIT_TIMEOUT_SECS") {
        if let Ok(t) = timeout.parse() {
            cfg.splitter.timeout_secs = t;
        }
    }
    if let Some(retries) = lookup("FLEW_SPLIT_RETRIES") {
        if let Ok(r) = retries.parse() {
            cfg.splitter.retries = r;
        }
    }
}

/// Loads a config file, resolving relative paths against its directory and
/// applying the environment overrides.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut cfg = parse_config(&text, base)?;
    apply_env_overrides(&mut cfg, |key| std::env::var(key).ok());
    Ok(cfg)
}

impl PipelineConfig {
    /// Every effective setting as `(key, value)` pairs in a fixed order,
    /// the basis for per-stage config digests.
    pub fn canonical_entries(&self) -> Vec<(String, String)> {
        let mut entries = vec![
            ("papers".into(), self.papers.display().to_string()),
            ("citations".into(), self.citations.display().to_string()),
            ("tasks_dir".into(), self.tasks_dir.display().to_string()),
            ("seed".into(), self.seed.to_string()),
            ("textual_mode".into(), self.textual_mode.to_string()),
            (
                "normalize_before_combine".into(),
                self.normalize_before_combine.to_string(),
            ),
            ("graph.dim".into(), self.graph.dim.to_string()),
            ("graph.epochs".into(), self.graph.epochs.to_string()),
            (
                "graph.learning_rate".into(),
                self.graph.learning_rate.to_string(),
            ),
            (
                "graph.negatives_per_edge".into(),
                self.graph.negatives_per_edge.to_string(),
            ),
            ("graph.margin".into(), self.graph.margin.to_string()),
            ("sampler.k_pos".into(), self.sampler.k_pos.to_string()),
            ("sampler.hard_lo".into(), self.sampler.hard_lo.to_string()),
            ("sampler.hard_hi".into(), self.sampler.hard_hi.to_string()),
            (
                "sampler.triplets_per_query".into(),
                self.sampler.triplets_per_query.to_string(),
            ),
            (
                "sampler.hard_fraction".into(),
                self.sampler.hard_fraction.to_string(),
            ),
            (
                "sampler.exclude_cited".into(),
                self.exclude_cited.to_string(),
            ),
            ("encoder.buckets".into(), self.encoder_buckets.to_string()),
            ("encoder.dim".into(), self.encoder_dim.to_string()),
            (
                "encoder.learning_rate".into(),
                self.encoder.learning_rate.to_string(),
            ),
            (
                "encoder.batch_size".into(),
                self.encoder.batch_size.to_string(),
            ),
            ("encoder.epochs".into(), self.encoder.epochs.to_string()),
            ("encoder.margin".into(), self.encoder.margin.to_string()),
            ("grid.step".into(), self.grid_step.to_string()),
            (
                "splitter.endpoint".into(),
                self.splitter.endpoint.clone().unwrap_or_default(),
            ),
            ("splitter.model".into(), self.splitter.model.clone()),
            (
                "splitter.timeout_secs".into(),
                self.splitter.timeout_secs.to_string(),
            ),
            ("splitter.retries".into(), self.splitter.retries.to_string()),
            (
                "splitter.fallback".into(),
                self.splitter.fallback.to_string(),
            ),
        ];
        entries.sort();
        entries
    }
}
