//! The stage graph: nine sequential stages from raw corpus files to
//! `results.json`, each resumable through its manifest.
//!
//! Stages hand data to each other through plain files under the stage
//! directory, so every intermediate is inspectable and any stage can be
//! re-run in isolation. A stage re-runs only when its config slice, its
//! input digests, or its output digests changed; otherwise it is skipped
//! with a manifest note. All randomness is derived from the global seed and
//! the facet, so identical `(inputs, config)` produce identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flew_core::combiner::{
    combine_all, grid_search, unit_normalized, weight_grid, GridSpec, TaskWeights, WeightVector,
};
use flew_core::corpus::{
    ingest_citations, ingest_papers, write_edges_jsonl, write_papers_jsonl, CitationGraph,
    LineReport, PaperStore,
};
use flew_core::encoder::{
    facet_embeddings, load_encoder_params, save_encoder_params, train_encoder, EmbeddingVector,
    EncoderParams,
};
use flew_core::eval::{read_task, run_task, ValidationTask};
use flew_core::facet_graph::{
    expand_weighted_edges, extract_facet_subgraph, read_subgraph_jsonl, write_subgraph_jsonl,
};
use flew_core::graph_embed::{load_embedding_table, save_embedding_table, train_node_embeddings};
use flew_core::hashing::derive_seed_str;
use flew_core::text_splitter::{
    heuristic_split, read_splits_jsonl, split_with_service, write_splits_jsonl, FacetedAbstract,
    Provenance, SplitRecord, SplitStore,
};
use flew_core::triplet_sampler::{
    materialize_triplet, read_triplets_jsonl, sample_triplets_excluding, write_triplets_jsonl,
    TextMode,
};
use flew_core::Facet;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::llm::HttpSplitClient;
use crate::manifest::{
    config_digest, digest_files, is_up_to_date, load_manifest, now_unix, save_manifest,
    StageManifest,
};
use crate::vectors::{load_doc_embeddings, save_doc_embeddings, DocEmbeddingTable};

/// The nine pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Facets,
    EmbedGraph,
    Sample,
    SplitText,
    Train,
    Encode,
    SearchWeights,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Facets,
        Stage::EmbedGraph,
        Stage::Sample,
        Stage::SplitText,
        Stage::Train,
        Stage::Encode,
        Stage::SearchWeights,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Facets => "facets",
            Stage::EmbedGraph => "embed-graph",
            Stage::Sample => "sample",
            Stage::SplitText => "split-text",
            Stage::Train => "train",
            Stage::Encode => "encode",
            Stage::SearchWeights => "search-weights",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seed for one facet's structural embedding training.
pub fn graph_seed(base: u64, facet: Facet) -> u64 {
    derive_seed_str(base, "graph", facet.short())
}

/// Seed for one facet's triplet sampler.
pub fn sampler_seed(base: u64, facet: Facet) -> u64 {
    derive_seed_str(base, "sampler", facet.short())
}

/// Seed for one facet encoder's weight initialization.
pub fn encoder_init_seed(base: u64, facet: Facet) -> u64 {
    derive_seed_str(base, "encoder-init", facet.short())
}

/// Seed for one facet encoder's training shuffle.
pub fn encoder_train_seed(base: u64, facet: Facet) -> u64 {
    derive_seed_str(base, "encoder-train", facet.short())
}

/// Locations of every stage artifact under the stage directory.
#[derive(Debug, Clone)]
pub struct StagePaths {
    root: PathBuf,
}

impl StagePaths {
    pub fn new(stage_dir: &Path) -> Self {
        StagePaths {
            root: stage_dir.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn papers(&self) -> PathBuf {
        self.root.join("ingest/papers.jsonl")
    }

    pub fn edges(&self) -> PathBuf {
        self.root.join("ingest/edges.jsonl")
    }

    pub fn rejects(&self) -> PathBuf {
        self.root.join("ingest/rejects.json")
    }

    pub fn facet_subgraph(&self, facet: Facet) -> PathBuf {
        self.root
            .join(format!("facets/facet-{}.jsonl", facet.short()))
    }

    pub fn node_table(&self, facet: Facet) -> PathBuf {
        self.root.join(format!("graph/nodes-{}.emb", facet.short()))
    }

    pub fn triplets(&self, facet: Facet) -> PathBuf {
        self.root
            .join(format!("triplets/triplets-{}.jsonl", facet.short()))
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits/splits.jsonl")
    }

    pub fn encoder(&self, facet: Facet) -> PathBuf {
        self.root
            .join(format!("encoders/FLeW-{}.enc", facet.short()))
    }

    pub fn train_report(&self, facet: Facet) -> PathBuf {
        self.root
            .join(format!("encoders/report-{}.json", facet.short()))
    }

    pub fn doc_vectors(&self, facet: Facet) -> PathBuf {
        self.root
            .join(format!("embeddings/docs-{}.vec", facet.short()))
    }

    pub fn weights(&self) -> PathBuf {
        self.root.join("weights.json")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.json")
    }

    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("manifests/{}.json", stage.name()))
    }
}

/// The config keys a stage's behavior depends on; the digest over exactly
/// these keys decides whether a config change re-runs the stage.
fn config_keys(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Ingest => &["papers", "citations"],
        Stage::Facets => &[],
        Stage::EmbedGraph => &[
            "graph.dim",
            "graph.epochs",
            "graph.learning_rate",
            "graph.negatives_per_edge",
            "graph.margin",
            "seed",
        ],
        Stage::Sample => &[
            "sampler.k_pos",
            "sampler.hard_lo",
            "sampler.hard_hi",
            "sampler.triplets_per_query",
            "sampler.hard_fraction",
            "sampler.exclude_cited",
            "seed",
        ],
        Stage::SplitText => &[
            "splitter.endpoint",
            "splitter.model",
            "splitter.timeout_secs",
            "splitter.retries",
            "splitter.fallback",
        ],
        Stage::Train => &[
            "encoder.buckets",
            "encoder.dim",
            "encoder.learning_rate",
            "encoder.batch_size",
            "encoder.epochs",
            "encoder.margin",
            "textual_mode",
            "seed",
        ],
        Stage::Encode => &[],
        Stage::SearchWeights => &["grid.step", "normalize_before_combine", "tasks_dir"],
        Stage::Evaluate => &["normalize_before_combine", "tasks_dir"],
    }
}

fn stage_config_digest(cfg: &PipelineConfig, stage: Stage) -> String {
    let keys = config_keys(stage);
    let entries: Vec<(String, String)> = cfg
        .canonical_entries()
        .into_iter()
        .filter(|(k, _)| keys.contains(&k.as_str()))
        .collect();
    config_digest(&entries)
}

/// Task files in the tasks directory, sorted by file name.
fn task_files(tasks_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(tasks_dir).map_err(PipelineError::io(tasks_dir))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(PipelineError::io(tasks_dir))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Config(format!(
            "no task files (*.jsonl) in {}",
            tasks_dir.display()
        )));
    }
    Ok(files)
}

/// Input files a stage reads, each tagged with the stage that produces it
/// (`None` for primary corpus inputs named in the config).
fn stage_inputs(
    stage: Stage,
    cfg: &PipelineConfig,
    paths: &StagePaths,
) -> Result<Vec<(PathBuf, Option<Stage>)>> {
    let each = |f: fn(&StagePaths, Facet) -> PathBuf, producer: Stage| {
        Facet::ALL
            .into_iter()
            .map(move |facet| (f(paths, facet), Some(producer)))
    };
    Ok(match stage {
        Stage::Ingest => vec![(cfg.papers.clone(), None), (cfg.citations.clone(), None)],
        Stage::Facets => vec![
            (paths.papers(), Some(Stage::Ingest)),
            (paths.edges(), Some(Stage::Ingest)),
        ],
        Stage::EmbedGraph => std::iter::once((paths.papers(), Some(Stage::Ingest)))
            .chain(each(StagePaths::facet_subgraph, Stage::Facets))
            .collect(),
        Stage::Sample => std::iter::once((paths.papers(), Some(Stage::Ingest)))
            .chain(each(StagePaths::node_table, Stage::EmbedGraph))
            .chain(each(StagePaths::facet_subgraph, Stage::Facets))
            .collect(),
        Stage::SplitText => vec![(paths.papers(), Some(Stage::Ingest))],
        Stage::Train => {
            let mut inputs: Vec<(PathBuf, Option<Stage>)> =
                std::iter::once((paths.papers(), Some(Stage::Ingest)))
                    .chain(each(StagePaths::triplets, Stage::Sample))
                    .collect();
            if cfg.textual_mode == TextMode::Faceted {
                inputs.push((paths.splits(), Some(Stage::SplitText)));
            }
            inputs
        }
        Stage::Encode => std::iter::once((paths.papers(), Some(Stage::Ingest)))
            .chain(each(StagePaths::encoder, Stage::Train))
            .collect(),
        Stage::SearchWeights => each(StagePaths::doc_vectors, Stage::Encode)
            .chain(task_files(&cfg.tasks_dir)?.into_iter().map(|p| (p, None)))
            .collect(),
        Stage::Evaluate => std::iter::once((paths.weights(), Some(Stage::SearchWeights)))
            .chain(each(StagePaths::doc_vectors, Stage::Encode))
            .chain(task_files(&cfg.tasks_dir)?.into_iter().map(|p| (p, None)))
            .collect(),
    })
}

fn stage_outputs(stage: Stage, paths: &StagePaths) -> Vec<PathBuf> {
    let each = |f: fn(&StagePaths, Facet) -> PathBuf| {
        Facet::ALL.into_iter().map(move |facet| f(paths, facet))
    };
    match stage {
        Stage::Ingest => vec![paths.papers(), paths.edges(), paths.rejects()],
        Stage::Facets => each(StagePaths::facet_subgraph).collect(),
        Stage::EmbedGraph => each(StagePaths::node_table).collect(),
        Stage::Sample => each(StagePaths::triplets).collect(),
        Stage::SplitText => vec![paths.splits()],
        Stage::Train => each(StagePaths::encoder)
            .chain(each(StagePaths::train_report))
            .collect(),
        Stage::Encode => each(StagePaths::doc_vectors).collect(),
        Stage::SearchWeights => vec![paths.weights()],
        Stage::Evaluate => vec![paths.results()],
    }
}

/// Runs one stage (or skips it when its manifest proves it current) and
/// returns the manifest written.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageManifest> {
    run_stage_inner(stage, cfg).map_err(|e| e.in_stage(stage.name()))
}

fn run_stage_inner(stage: Stage, cfg: &PipelineConfig) -> Result<StageManifest> {
    let paths = StagePaths::new(&cfg.stage_dir);
    let cfg_digest = stage_config_digest(cfg, stage);

    let inputs = stage_inputs(stage, cfg, &paths)?;
    for (path, producer) in &inputs {
        if !path.exists() {
            return Err(match producer {
                Some(stage) => PipelineError::MissingArtifact {
                    producer: stage.name().to_string(),
                    path: path.clone(),
                },
                None => PipelineError::Io {
                    path: path.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                },
            });
        }
    }
    let input_paths: Vec<PathBuf> = inputs.into_iter().map(|(p, _)| p).collect();
    let input_digests = digest_files(&input_paths, paths.root())?;
    let output_paths = stage_outputs(stage, &paths);

    let manifest_path = paths.manifest(stage);
    if let Some(previous) = load_manifest(&manifest_path)? {
        if is_up_to_date(
            &previous,
            &cfg_digest,
            &input_digests,
            &output_paths,
            paths.root(),
        ) {
            let manifest = StageManifest {
                unix_timestamp: now_unix(),
                note: "skipped: up to date".to_string(),
                ..previous
            };
            save_manifest(&manifest, &manifest_path)?;
            return Ok(manifest);
        }
    }

    for path in &output_paths {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(PipelineError::io(parent))?;
        }
    }
    let note = match stage {
        Stage::Ingest => run_ingest(cfg, &paths)?,
        Stage::Facets => run_facets(&paths)?,
        Stage::EmbedGraph => run_embed_graph(cfg, &paths)?,
        Stage::Sample => run_sample(cfg, &paths)?,
        Stage::SplitText => run_split_text(cfg, &paths)?,
        Stage::Train => run_train(cfg, &paths)?,
        Stage::Encode => run_encode(&paths)?,
        Stage::SearchWeights => run_search_weights(cfg, &paths)?,
        Stage::Evaluate => run_evaluate(cfg, &paths)?,
    };

    let manifest = StageManifest {
        stage: stage.name().to_string(),
        config_digest: cfg_digest,
        inputs: input_digests,
        outputs: digest_files(&output_paths, paths.root())?,
        unix_timestamp: now_unix(),
        note,
    };
    save_manifest(&manifest, &manifest_path)?;
    Ok(manifest)
}

/// Runs every stage in dependency order, stopping at the first failure.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<StageManifest>> {
    Stage::ALL
        .into_iter()
        .map(|stage| run_stage(stage, cfg))
        .collect()
}

fn open_buffered(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(PipelineError::io(path))?,
    ))
}

fn create_buffered(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(PipelineError::io(path))?,
    ))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(PipelineError::io(path))
}

/// Reads the canonical papers file; any rejected line means corruption.
fn read_paper_store(path: &Path) -> Result<PaperStore> {
    let ingest = ingest_papers(open_buffered(path)?)?;
    if let Some(first) = ingest.rejected.first() {
        return Err(PipelineError::Format(format!(
            "{}: line {}: {}",
            path.display(),
            first.line,
            first.reason
        )));
    }
    Ok(ingest.store)
}

/// Reads the canonical edges file back into a graph over `store`.
fn read_citation_graph(path: &Path, store: &PaperStore) -> Result<CitationGraph> {
    let ingest = ingest_citations(open_buffered(path)?, store)?;
    if let Some(first) = ingest.rejected.first() {
        return Err(PipelineError::Format(format!(
            "{}: line {}: {}",
            path.display(),
            first.line,
            first.reason
        )));
    }
    Ok(ingest.graph)
}

#[derive(Debug, Serialize, Deserialize)]
struct RejectReport {
    papers: Vec<LineReport>,
    citations: Vec<LineReport>,
}

fn run_ingest(cfg: &PipelineConfig, paths: &StagePaths) -> Result<String> {
    let papers = ingest_papers(open_buffered(&cfg.papers)?)?;
    let citations = ingest_citations(open_buffered(&cfg.citations)?, &papers.store)?;

    let papers_out = paths.papers();
    let mut w = create_buffered(&papers_out)?;
    write_papers_jsonl(&papers.store, &mut w)?;
    finish(w, &papers_out)?;

    let edges_out = paths.edges();
    let mut w = create_buffered(&edges_out)?;
    write_edges_jsonl(&citations.graph, &mut w)?;
    finish(w, &edges_out)?;

    let report = RejectReport {
        papers: papers.rejected,
        citations: citations.rejected,
    };
    let mut json =
        serde_json::to_vec_pretty(&report).map_err(|e| PipelineError::Format(e.to_string()))?;
    json.push(b'\n');
    std::fs::write(paths.rejects(), json).map_err(PipelineError::io(paths.rejects()))?;

    Ok(format!(
        "ran: {} papers, {} edges; rejected {} paper / {} citation lines",
        papers.store.len(),
        citations.graph.edges().len(),
        report.papers.len(),
        report.citations.len(),
    ))
}

fn run_facets(paths: &StagePaths) -> Result<String> {
    let store = read_paper_store(&paths.papers())?;
    let graph = read_citation_graph(&paths.edges(), &store)?;
    let mut counts = Vec::new();
    for facet in Facet::ALL {
        let subgraph = extract_facet_subgraph(&graph, facet);
        let out = paths.facet_subgraph(facet);
        let mut w = create_buffered(&out)?;
        write_subgraph_jsonl(&subgraph, &mut w)?;
        finish(w, &out)?;
        counts.push(format!(
            "{}: {} edges",
            facet.short(),
            subgraph.edges().len()
        ));
    }
    Ok(format!("ran: {}", counts.join(", ")))
}

fn run_embed_graph(cfg: &PipelineConfig, paths: &StagePaths) -> Result<String> {
    let store = read_paper_store(&paths.papers())?;
    let nodes: BTreeSet<String> = store.ids().map(str::to_string).collect();
    for facet in Facet::ALL {
        let subgraph = read_subgraph_jsonl(
            open_buffered(&paths.facet_subgraph(facet))?,
            facet,
            nodes.clone(),
        )?;
        let edges = expand_weighted_edges(&subgraph);
        let mut graph_cfg = cfg.graph.clone();
        graph_cfg.seed = graph_seed(cfg.seed, facet);
        let table = train_node_embeddings(&edges, subgraph.nodes(), facet, &graph_cfg)?;
        save_embedding_table(&table, &paths.node_table(facet))?;
    }
    Ok(format!(
        "ran: {} nodes per facet, dim {}",
        nodes.len(),
        cfg.graph.dim
    ))
}

fn run_sample(cfg: &PipelineConfig, paths: &StagePaths) -> Result<String> {
    let store = read_paper_store(&paths.papers())?;
    let nodes: BTreeSet<String> = store.ids().map(str::to_string).collect();
    let mut counts = Vec::new();
    for facet in Facet::ALL {
        let table = load_embedding_table(&paths.node_table(facet))?;
        let queries: Vec<String> = table.ids().to_vec();
        let mut excluded: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        if cfg.exclude_cited {
            let subgraph = read_subgraph_jsonl(
                open_buffered(&paths.facet_subgraph(facet))?,
                facet,
                nodes.clone(),
            )?;
            for edge in subgraph.edges() {
                excluded
                    .entry(edge.citing.clone())
                    .or_default()
                    .insert(edge.cited.clone());
                excluded
                    .entry(edge.cited.clone())
                    .or_default()
                    .insert(edge.citing.clone());
            }
        }
        let mut policy = cfg.sampler.clone();
        policy.seed = sampler_seed(cfg.seed, facet);
        let outcome = sample_triplets_excluding(&table, &queries, &policy, &excluded)?;
        let out = paths.triplets(facet);
        let mut w = create_buffered(&out)?;
        write_triplets_jsonl(&outcome.triplets, &mut w)?;
        finish(w, &out)?;
        counts.push(format!(
            "{}: {} triplets{}",
            facet.short(),
            outcome.triplets.len(),
            if outcome.skips.is_empty() {
                String::new()
            } else {
                format!(" ({} short queries)", outcome.skips.len())
            }
        ));
    }
    Ok(format!("ran: {}", counts.join(", ")))
}

fn run_split_text(cfg: &PipelineConfig, paths: &StagePaths) -> Result<String> {
    let store = read_paper_store(&paths.papers())?;
    let client = HttpSplitClient::from_settings(&cfg.splitter);
    let mut splits = SplitStore::new();
    let mut by_provenance: BTreeMap<&'static str, usize> = BTreeMap::new();
    for paper in store.iter() {
        let (sections, provenance) = if paper.abstract_text.trim().is_empty() {
            (
                FacetedAbstract {
                    background: String::new(),
                    method: String::new(),
                    result: String::new(),
                },
                Provenance::Heuristic,
            )
        } else if let Some(client) = &client {
            split_with_service(&paper.abstract_text, client, cfg.splitter.fallback)?
        } else {
            (
                heuristic_split(&paper.abstract_text)?,
                Provenance::Heuristic,
            )
        };
        let tag = match provenance {
            Provenance::Service => "service",
            Provenance::Fallback => "fallback",
            Provenance::Heuristic => "heuristic",
        };
        *by_provenance.entry(tag).or_default() += 1;
        splits.insert(SplitRecord {
            id: paper.id.clone(),
            sections,
            provenance,
        })?;
    }
    let out = paths.splits();
    let mut w = create_buffered(&out)?;
    write_splits_jsonl(&splits, &mut w)?;
    finish(w, &out)?;
    let summary: Vec<String> = by_provenance
        .iter()
        .map(|(tag, n)| format!("{n} {tag}"))
        .collect();
    Ok(format!("ran: {}", summary.join(", ")))
}

fn run_train(cfg: &PipelineConfig, paths: &StagePaths) -> Result<String> {
    let store = read_paper_store(&paths.papers())?;
    let splits = if cfg.textual_mode == TextMode::Faceted {
        read_splits_jsonl(open_buffered(&paths.splits())?)?
    } else {
        SplitStore::new()
    };
    let mut notes = Vec::new();
    for facet in Facet::ALL {
        let triplets = read_triplets_jsonl(open_buffered(&paths.triplets(facet))?)?;
        let texts = triplets
            .iter()
            .map(|t| materialize_triplet(t, &store, cfg.textual_mode, &splits))
            .collect::<flew_core::Result<Vec<_>>>()?;
        let init = EncoderParams::seeded(
            cfg.encoder_buckets,
            cfg.encoder_dim,
            encoder_init_seed(cfg.seed, facet),
        )?;
        let mut train_cfg = cfg.encoder.clone();
        train_cfg.seed = encoder_train_seed(cfg.seed, facet);
        let (params, report) = train_encoder(&texts, &train_cfg, &init)?;
        save_encoder_params(&params, &paths.encoder(facet))?;

        let report_path = paths.train_report(facet);
        let mut json =
            serde_json::to_vec_pretty(&report).map_err(|e| PipelineError::Format(e.to_string()))?;
        json.push(b'\n');
        std::fs::write(&report_path, json).map_err(PipelineError::io(&report_path))?;

        let last = report.epochs.last();
        notes.push(format!(
            "{}: {} triplets, final loss {:.4}",
            facet.short(),
            texts.len(),
            last.map(|e| e.mean_loss).unwrap_or(f64::NAN),
        ));
    }
    Ok(format!(
        "ran ({} mode): {}",
        cfg.textual_mode,
        notes.join(", ")
    ))
}

fn run_encode(paths: &StagePaths) -> Result<String> {
    let store = read_paper_store(&paths.papers())?;
    let background = load_encoder_params(&paths.encoder(Facet::Background))?;
    let method = load_encoder_params(&paths.encoder(Facet::Method))?;
    let result = load_encoder_params(&paths.encoder(Facet::Result))?;
    let mut tables = Facet::ALL
        .into_iter()
        .map(|facet| DocEmbeddingTable::new(facet, background.dim()))
        .collect::<Result<Vec<_>>>()?;
    for paper in store.iter() {
        let vectors = facet_embeddings(&background, &method, &result, paper)?;
        for (table, vector) in tables.iter_mut().zip(vectors) {
            table.insert(&paper.id, vector)?;
        }
    }
    for (facet, table) in Facet::ALL.into_iter().zip(&tables) {
        save_doc_embeddings(table, &paths.doc_vectors(facet))?;
    }
    Ok(format!(
        "ran: {} documents, dim {}",
        store.len(),
        background.dim()
    ))
}

/// Loads the three facet tables and zips them into the per-document shape
/// the combiner consumes, enforcing identical id sets and dimensions.
pub fn load_facet_vectors(paths: &StagePaths) -> Result<BTreeMap<String, [EmbeddingVector; 3]>> {
    let tables: Vec<DocEmbeddingTable> = Facet::ALL
        .iter()
        .map(|&facet| load_doc_embeddings(&paths.doc_vectors(facet)))
        .collect::<Result<Vec<_>>>()?;
    let [bg, mt, rs] =
        <[DocEmbeddingTable; 3]>::try_from(tables).expect("three facets yield three tables");
    for other in [&mt, &rs] {
        if other.dim() != bg.dim() {
            return Err(PipelineError::Core(flew_core::Error::DimensionMismatch {
                expected: bg.dim(),
                got: other.dim(),
            }));
        }
        if !other.ids().eq(bg.ids()) {
            return Err(PipelineError::Format(format!(
                "facet embedding files disagree on document ids ({} vs {})",
                bg.facet(),
                other.facet()
            )));
        }
    }
    let maps = [
        bg.to_embedding_map(),
        mt.to_embedding_map(),
        rs.to_embedding_map(),
    ];
    let [mut bg_map, mut mt_map, mut rs_map] = maps;
    let mut out = BTreeMap::new();
    for id in bg_map.keys().cloned().collect::<Vec<_>>() {
        let triple = [
            bg_map.remove(&id).expect("id from this map"),
            mt_map.remove(&id).expect("checked equal id sets"),
            rs_map.remove(&id).expect("checked equal id sets"),
        ];
        out.insert(id, triple);
    }
    Ok(out)
}

fn read_task_file(path: &Path) -> Result<ValidationTask> {
    read_task(open_buffered(path)?)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))
}

fn prepared_facet_vectors(
    cfg: &PipelineConfig,
    paths: &StagePaths,
) -> Result<BTreeMap<String, [EmbeddingVector; 3]>> {
    let facet_vectors = load_facet_vectors(paths)?;
    Ok(if cfg.normalize_before_combine {
        unit_normalized(&facet_vectors)
    } else {
        facet_vectors
    })
}

fn run_search_weights(cfg: &PipelineConfig, paths: &StagePaths) -> Result<String> {
    let facet_vectors = prepared_facet_vectors(cfg, paths)?;
    let spec = GridSpec::new(cfg.grid_step)?;
    let grid = weight_grid(spec)?;
    let mut all_weights = Vec::new();
    for path in task_files(&cfg.tasks_dir)? {
        let task = read_task_file(&path)?;
        let outcome = grid_search(&grid, &task, &facet_vectors)?;
        all_weights.push(TaskWeights::from_outcome(task.name(), spec, &outcome));
    }
    let mut json = serde_json::to_vec_pretty(&all_weights)
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    json.push(b'\n');
    std::fs::write(paths.weights(), json).map_err(PipelineError::io(paths.weights()))?;
    Ok(format!(
        "ran: {} tasks over {} grid points",
        all_weights.len(),
        grid.len()
    ))
}

/// Scores of the three facet encoders taken alone, for the same task and
/// metric as the combined score next to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacetScores {
    pub background: f64,
    pub method: f64,
    pub result: f64,
}

/// One line of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task: String,
    pub metric: String,
    pub value: f64,
    /// The grid-searched weight triple the combined score used.
    pub weights: WeightVector,
    pub facet_scores: FacetScores,
}

fn run_evaluate(cfg: &PipelineConfig, paths: &StagePaths) -> Result<String> {
    let facet_vectors = prepared_facet_vectors(cfg, paths)?;
    let weights_bytes =
        std::fs::read(paths.weights()).map_err(PipelineError::io(paths.weights()))?;
    let all_weights: Vec<TaskWeights> = serde_json::from_slice(&weights_bytes)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", paths.weights().display())))?;

    let single_facet: Vec<BTreeMap<String, EmbeddingVector>> = (0..3)
        .map(|slot| {
            facet_vectors
                .iter()
                .map(|(id, triple)| (id.clone(), triple[slot].clone()))
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    for path in task_files(&cfg.tasks_dir)? {
        let task = read_task_file(&path)?;
        let chosen = all_weights
            .iter()
            .find(|w| w.task == task.name())
            .ok_or_else(|| {
                PipelineError::Format(format!(
                    "{} has no entry for task `{}`; run `flew search-weights` first",
                    paths.weights().display(),
                    task.name()
                ))
            })?;
        let combined = combine_all(&chosen.best, &facet_vectors)?;
        let result = run_task(&task, &combined)?;
        let mut per_facet = [0.0f64; 3];
        for (slot, map) in single_facet.iter().enumerate() {
            per_facet[slot] = run_task(&task, map)?.value;
        }
        records.push(EvalRecord {
            task: task.name().to_string(),
            metric: result.metric,
            value: result.value,
            weights: chosen.best,
            facet_scores: FacetScores {
                background: per_facet[0],
                method: per_facet[1],
                result: per_facet[2],
            },
        });
    }
    let mut json =
        serde_json::to_vec_pretty(&records).map_err(|e| PipelineError::Format(e.to_string()))?;
    json.push(b'\n');
    std::fs::write(paths.results(), json).map_err(PipelineError::io(paths.results()))?;
    Ok(format!("ran: {} tasks evaluated", records.len()))
}
