//! Paper and citation-edge ingestion.
//!
//! Input corpora arrive as two JSONL streams: one paper record per line and
//! one citation record per line. Ingestion is forgiving at the line level
//! (a bad line is reported and skipped, processing continues) and strict at
//! the store level: ids are unique, titles are nonempty, edge endpoints must
//! resolve, and repeated `(citing, cited, intent)` records merge by summing
//! their context counts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facet_graph::Facet;

/// Separator inserted between title and abstract in encoder input.
pub const SEP_TOKEN: &str = "[SEP]";

/// A single document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paper {
    pub id: String,
    pub title: String,
    /// May be empty; papers without abstracts are still valid nodes.
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

/// A directed, intent-labeled citation with its context count.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CitationEdge {
    pub citing: String,
    pub cited: String,
    pub intent: Facet,
    pub context_count: u64,
}

/// Papers keyed by id, iterated in id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PaperStore {
    papers: BTreeMap<String, Paper>,
}

impl PaperStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a paper, enforcing nonempty id and title and id uniqueness.
    pub fn insert(&mut self, paper: Paper) -> Result<()> {
        if paper.id.is_empty() {
            return Err(Error::Validation("paper id is empty".into()));
        }
        if paper.title.is_empty() {
            return Err(Error::Validation(format!(
                "paper `{}` has an empty title",
                paper.id
            )));
        }
        if self.papers.contains_key(&paper.id) {
            return Err(Error::Validation(format!(
                "duplicate paper id `{}`",
                paper.id
            )));
        }
        self.papers.insert(paper.id.clone(), paper);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Paper> {
        self.papers.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.papers.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    /// Paper ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.papers.keys().map(String::as_str)
    }

    /// Papers in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Paper> {
        self.papers.values()
    }
}

/// The citation graph over a paper store. The node set always covers every
/// paper, so papers nobody cites remain present as isolated nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitationGraph {
    nodes: BTreeSet<String>,
    edges: Vec<CitationEdge>,
}

impl CitationGraph {
    /// Builds a graph from parts, enforcing every structural constraint:
    /// endpoints resolve, no self-citations, counts are positive, and at most
    /// one edge exists per `(citing, cited, intent)`.
    pub fn from_parts(nodes: BTreeSet<String>, mut edges: Vec<CitationEdge>) -> Result<Self> {
        edges.sort();
        let mut seen: BTreeSet<(String, String, Facet)> = BTreeSet::new();
        for e in &edges {
            if !nodes.contains(&e.citing) {
                return Err(Error::UnknownNode {
                    id: e.citing.clone(),
                });
            }
            if !nodes.contains(&e.cited) {
                return Err(Error::UnknownNode {
                    id: e.cited.clone(),
                });
            }
            if e.citing == e.cited {
                return Err(Error::Validation(format!(
                    "self-citation on `{}`",
                    e.citing
                )));
            }
            if e.context_count < 1 {
                return Err(Error::Validation(format!(
                    "edge {} -> {} has context_count 0",
                    e.citing, e.cited
                )));
            }
            if !seen.insert((e.citing.clone(), e.cited.clone(), e.intent)) {
                return Err(Error::Validation(format!(
                    "repeated edge ({}, {}, {})",
                    e.citing, e.cited, e.intent
                )));
            }
        }
        Ok(CitationGraph { nodes, edges })
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    /// Edges in `(citing, cited, intent)` order.
    pub fn edges(&self) -> &[CitationEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }
}

/// One rejected input line: 1-based line number plus the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineReport {
    pub line: usize,
    pub reason: String,
}

/// Result of paper ingestion: the accepted store plus per-line rejections.
#[derive(Debug, Clone)]
pub struct PaperIngest {
    pub store: PaperStore,
    pub rejected: Vec<LineReport>,
}

/// Reads a JSONL paper stream. A malformed or invalid line is recorded and
/// skipped; only I/O failure aborts. Blank lines are ignored.
pub fn ingest_papers<R: BufRead>(reader: R) -> Result<PaperIngest> {
    let mut store = PaperStore::new();
    let mut rejected = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let paper: Paper = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                rejected.push(LineReport {
                    line: lineno,
                    reason: format!("invalid record: {e}"),
                });
                continue;
            }
        };
        if let Err(e) = store.insert(paper) {
            rejected.push(LineReport {
                line: lineno,
                reason: e.to_string(),
            });
        }
    }
    Ok(PaperIngest { store, rejected })
}

#[derive(Debug, Deserialize)]
struct RawCitation {
    citing: String,
    cited: String,
    intent: String,
    context_count: i64,
}

/// Result of citation ingestion: the validated graph plus per-line rejections.
#[derive(Debug, Clone)]
pub struct CitationIngest {
    pub graph: CitationGraph,
    pub rejected: Vec<LineReport>,
}

/// Reads a JSONL citation stream against an existing paper store.
///
/// Records with unknown endpoints, unknown intent labels, self-citations, or
/// non-positive counts are dropped with a report. Repeated
/// `(citing, cited, intent)` records merge by summing context counts. The
/// resulting node set is the full paper store, so uncited papers stay in the
/// graph as isolated nodes.
pub fn ingest_citations<R: BufRead>(reader: R, papers: &PaperStore) -> Result<CitationIngest> {
    let mut merged: BTreeMap<(String, String, Facet), u64> = BTreeMap::new();
    let mut rejected = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCitation = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                rejected.push(LineReport {
                    line: lineno,
                    reason: format!("invalid record: {e}"),
                });
                continue;
            }
        };
        let reason = if !papers.contains(&raw.citing) {
            Some(format!("unknown citing paper `{}`", raw.citing))
        } else if !papers.contains(&raw.cited) {
            Some(format!("unknown cited paper `{}`", raw.cited))
        } else if raw.citing == raw.cited {
            Some(format!("self-citation on `{}`", raw.citing))
        } else if raw.context_count < 1 {
            Some(format!("context_count {} is below 1", raw.context_count))
        } else {
            None
        };
        if let Some(reason) = reason {
            rejected.push(LineReport {
                line: lineno,
                reason,
            });
            continue;
        }
        let intent: Facet = match raw.intent.parse() {
            Ok(f) => f,
            Err(_) => {
                rejected.push(LineReport {
                    line: lineno,
                    reason: format!("unknown intent label `{}`", raw.intent),
                });
                continue;
            }
        };
        let count = merged.entry((raw.citing, raw.cited, intent)).or_insert(0);
        *count = count.saturating_add(raw.context_count as u64);
    }

    let nodes: BTreeSet<String> = papers.ids().map(str::to_owned).collect();
    let edges: Vec<CitationEdge> = merged
        .into_iter()
        .map(|((citing, cited, intent), context_count)| CitationEdge {
            citing,
            cited,
            intent,
            context_count,
        })
        .collect();
    let graph = CitationGraph::from_parts(nodes, edges)?;
    Ok(CitationIngest { graph, rejected })
}

/// Builds the text fed to an encoder from raw title and abstract parts.
///
/// The two are joined with a literal `[SEP]`; an empty abstract yields the
/// title alone with no trailing separator. No escaping is applied, so a
/// title containing `[SEP]` is passed through as-is.
pub fn encoder_input_parts(title: &str, abstract_text: &str) -> String {
    if abstract_text.is_empty() {
        title.to_owned()
    } else {
        let mut s = String::with_capacity(title.len() + SEP_TOKEN.len() + abstract_text.len());
        s.push_str(title);
        s.push_str(SEP_TOKEN);
        s.push_str(abstract_text);
        s
    }
}

/// Encoder input for a paper: `title[SEP]abstract`.
pub fn encoder_input(paper: &Paper) -> String {
    encoder_input_parts(&paper.title, &paper.abstract_text)
}

/// Serializes a store back to JSONL, one paper per line in id order.
pub fn write_papers_jsonl<W: std::io::Write>(store: &PaperStore, mut w: W) -> Result<()> {
    for paper in store.iter() {
        serde_json::to_writer(&mut w, paper).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Serializes graph edges to JSONL in `(citing, cited, intent)` order.
pub fn write_edges_jsonl<W: std::io::Write>(graph: &CitationGraph, mut w: W) -> Result<()> {
    for edge in graph.edges() {
        serde_json::to_writer(&mut w, edge).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
