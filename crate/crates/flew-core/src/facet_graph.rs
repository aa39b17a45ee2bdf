//! Facet subgraph extraction from the intent-labeled citation graph.
//!
//! Each citation intent induces its own weighted subgraph over the full node
//! set: an edge labeled with intent `x` lands in subgraph `x` with weight
//! equal to its context count. The three subgraphs partition the edge set.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CitationGraph;
use crate::error::{Error, Result};

/// Citation facet. The derived order (background < method < result) is the
/// canonical iteration and file-layout order everywhere in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Background,
    Method,
    Result,
}

impl Facet {
    pub const ALL: [Facet; 3] = [Facet::Background, Facet::Method, Facet::Result];

    /// Stable lowercase name, matching the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            Facet::Background => "background",
            Facet::Method => "method",
            Facet::Result => "result",
        }
    }

    /// Short suffix used in artifact file names.
    pub fn short(self) -> &'static str {
        match self {
            Facet::Background => "bg",
            Facet::Method => "mt",
            Facet::Result => "rs",
        }
    }

    /// Single-byte tag used in binary headers.
    pub fn tag(self) -> u8 {
        match self {
            Facet::Background => 0,
            Facet::Method => 1,
            Facet::Result => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Facet> {
        match tag {
            0 => Ok(Facet::Background),
            1 => Ok(Facet::Method),
            2 => Ok(Facet::Result),
            other => Err(Error::FileFormat(format!("unknown facet tag {other}"))),
        }
    }
}

impl std::fmt::Display for Facet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Facet> {
        match s {
            "background" => Ok(Facet::Background),
            "method" => Ok(Facet::Method),
            "result" => Ok(Facet::Result),
            other => Err(Error::Validation(format!("unknown facet `{other}`"))),
        }
    }
}

/// A directed edge in a facet subgraph; the weight is the context count of
/// the originating citation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub citing: String,
    pub cited: String,
    pub weight: u64,
}

/// One facet's weighted subgraph. Keeps the parent graph's full node set, so
/// nodes with no edges of this intent are present and reported as isolated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedFacetSubgraph {
    facet: Facet,
    nodes: BTreeSet<String>,
    edges: Vec<WeightedEdge>,
}

impl WeightedFacetSubgraph {
    /// Assembles a subgraph from parts, validating endpoints and weights.
    pub fn from_parts(
        facet: Facet,
        nodes: BTreeSet<String>,
        mut edges: Vec<WeightedEdge>,
    ) -> Result<Self> {
        edges.sort();
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
            if e.weight < 1 {
                return Err(Error::Validation(format!(
                    "edge {} -> {} has weight 0",
                    e.citing, e.cited
                )));
            }
        }
        Ok(WeightedFacetSubgraph {
            facet,
            nodes,
            edges,
        })
    }

    pub fn facet(&self) -> Facet {
        self.facet
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    /// Edges in `(citing, cited)` order.
    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }
}

/// Filters the citation graph down to one intent, carrying context counts
/// over as edge weights. Direction is preserved and the node set is the full
/// parent node set.
pub fn extract_facet_subgraph(graph: &CitationGraph, facet: Facet) -> WeightedFacetSubgraph {
    let edges: Vec<WeightedEdge> = graph
        .edges()
        .iter()
        .filter(|e| e.intent == facet)
        .map(|e| WeightedEdge {
            citing: e.citing.clone(),
            cited: e.cited.clone(),
            weight: e.context_count,
        })
        .collect();
    WeightedFacetSubgraph {
        facet,
        nodes: graph.nodes().clone(),
        edges,
    }
}

/// Expands each weight-`w` edge into `w` identical entries, so downstream
/// per-edge training visits an edge proportionally to its weight. The output
/// is sorted by `(citing, cited)` with repeats adjacent.
pub fn expand_weighted_edges(subgraph: &WeightedFacetSubgraph) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for e in subgraph.edges() {
        for _ in 0..e.weight {
            out.push((e.citing.clone(), e.cited.clone()));
        }
    }
    // Subgraph edges are already sorted and unique, so repeats are adjacent.
    out
}

/// Per-facet structural summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetStats {
    pub facet: Facet,
    pub node_count: usize,
    pub edge_count: usize,
    pub total_weight: u64,
    pub isolated_count: usize,
}

/// Counts nodes, edges, total weight, and nodes untouched by any edge.
pub fn facet_stats(subgraph: &WeightedFacetSubgraph) -> FacetStats {
    let mut touched: BTreeSet<&str> = BTreeSet::new();
    let mut total_weight = 0u64;
    for e in subgraph.edges() {
        touched.insert(&e.citing);
        touched.insert(&e.cited);
        total_weight = total_weight.saturating_add(e.weight);
    }
    FacetStats {
        facet: subgraph.facet(),
        node_count: subgraph.nodes().len(),
        edge_count: subgraph.edges().len(),
        total_weight,
        isolated_count: subgraph.nodes().len() - touched.len(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpRecord {
    facet: Facet,
    citing: String,
    cited: String,
    weight: u64,
}

/// Writes one line per weighted edge: `(facet, citing, cited, weight)`.
pub fn write_subgraph_jsonl<W: std::io::Write>(
    subgraph: &WeightedFacetSubgraph,
    mut w: W,
) -> Result<()> {
    for e in subgraph.edges() {
        let rec = DumpRecord {
            facet: subgraph.facet(),
            citing: e.citing.clone(),
            cited: e.cited.clone(),
            weight: e.weight,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a subgraph dump back. The node set must be supplied by the caller
/// since isolated nodes do not appear in the dump.
pub fn read_subgraph_jsonl<R: BufRead>(
    reader: R,
    facet: Facet,
    nodes: BTreeSet<String>,
) -> Result<WeightedFacetSubgraph> {
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DumpRecord = serde_json::from_str(&line)
            .map_err(|e| Error::FileFormat(format!("subgraph line {}: {e}", idx + 1)))?;
        if rec.facet != facet {
            return Err(Error::FileFormat(format!(
                "subgraph line {}: expected facet {facet}, got {}",
                idx + 1,
                rec.facet
            )));
        }
        edges.push(WeightedEdge {
            citing: rec.citing,
            cited: rec.cited,
            weight: rec.weight,
        });
    }
    WeightedFacetSubgraph::from_parts(facet, nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CitationEdge;

    fn graph_of(edges: &[(&str, &str, Facet, u64)]) -> CitationGraph {
        let mut nodes = BTreeSet::new();
        for (s, t, _, _) in edges {
            nodes.insert(s.to_string());
            nodes.insert(t.to_string());
        }
        let edges = edges
            .iter()
            .map(|(s, t, f, w)| CitationEdge {
                citing: s.to_string(),
                cited: t.to_string(),
                intent: *f,
                context_count: *w,
            })
            .collect();
        CitationGraph::from_parts(nodes, edges).unwrap()
    }

    #[test]
    fn facet_order_is_background_method_result() {
        assert!(Facet::Background < Facet::Method);
        assert!(Facet::Method < Facet::Result);
        assert_eq!(
            Facet::ALL.map(|f| f.name()),
            ["background", "method", "result"]
        );
    }

    #[test]
    fn extraction_partitions_edges() {
        let g = graph_of(&[
            ("A", "B", Facet::Background, 1),
            ("A", "C", Facet::Background, 2),
            ("B", "C", Facet::Method, 1),
        ]);
        let bg = extract_facet_subgraph(&g, Facet::Background);
        let mt = extract_facet_subgraph(&g, Facet::Method);
        let rs = extract_facet_subgraph(&g, Facet::Result);
        assert_eq!(bg.edges().len(), 2);
        assert_eq!(mt.edges().len(), 1);
        assert_eq!(rs.edges().len(), 0);
        assert_eq!(
            bg.edges().len() + mt.edges().len() + rs.edges().len(),
            g.edge_count()
        );
        // All subgraphs keep the full node set.
        for sub in [&bg, &mt, &rs] {
            assert_eq!(sub.nodes().len(), 3);
        }
    }

    #[test]
    fn edge_weight_is_the_context_count() {
        let g = graph_of(&[("A", "B", Facet::Method, 3)]);
        let mt = extract_facet_subgraph(&g, Facet::Method);
        assert_eq!(mt.edges()[0].weight, 3);
    }

    #[test]
    fn expansion_repeats_edges_in_sorted_order() {
        let nodes: BTreeSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let sub = WeightedFacetSubgraph::from_parts(
            Facet::Background,
            nodes,
            vec![
                WeightedEdge {
                    citing: "B".into(),
                    cited: "A".into(),
                    weight: 2,
                },
                WeightedEdge {
                    citing: "A".into(),
                    cited: "B".into(),
                    weight: 1,
                },
            ],
        )
        .unwrap();
        let expanded = expand_weighted_edges(&sub);
        assert_eq!(
            expanded,
            vec![
                ("A".to_string(), "B".to_string()),
                ("B".to_string(), "A".to_string()),
                ("B".to_string(), "A".to_string()),
            ]
        );
    }

    #[test]
    fn stats_count_isolated_nodes() {
        let g = graph_of(&[
            ("A", "B", Facet::Background, 2),
            ("C", "D", Facet::Method, 1),
        ]);
        let bg = extract_facet_subgraph(&g, Facet::Background);
        let stats = facet_stats(&bg);
        assert_eq!(stats.node_count, 4);
        assert_eq!(stats.edge_count, 1);
        assert_eq!(stats.total_weight, 2);
        assert_eq!(stats.isolated_count, 2);
    }

    #[test]
    fn stats_on_empty_facet_report_everything_isolated() {
        let g = graph_of(&[("A", "B", Facet::Background, 1)]);
        let rs = extract_facet_subgraph(&g, Facet::Result);
        let stats = facet_stats(&rs);
        assert_eq!(stats.edge_count, 0);
        assert_eq!(stats.total_weight, 0);
        assert_eq!(stats.isolated_count, 2);
    }

    #[test]
    fn dump_round_trips() {
        let g = graph_of(&[("A", "B", Facet::Result, 2), ("B", "C", Facet::Result, 1)]);
        let rs = extract_facet_subgraph(&g, Facet::Result);
        let mut buf = Vec::new();
        write_subgraph_jsonl(&rs, &mut buf).unwrap();
        let again = read_subgraph_jsonl(buf.as_slice(), Facet::Result, g.nodes().clone()).unwrap();
        assert_eq!(again, rs);
    }

    #[test]
    fn dump_rejects_wrong_facet() {
        let g = graph_of(&[("A", "B", Facet::Result, 2)]);
        let rs = extract_facet_subgraph(&g, Facet::Result);
        let mut buf = Vec::new();
        write_subgraph_jsonl(&rs, &mut buf).unwrap();
        let err = read_subgraph_jsonl(buf.as_slice(), Facet::Method, g.nodes().clone());
        assert!(matches!(err, Err(Error::FileFormat(_))));
    }

    #[test]
    fn facet_parsing_rejects_unknown_labels() {
        assert!("background".parse::<Facet>().is_ok());
        assert!("motivation".parse::<Facet>().is_err());
    }
}
