//! Shallow structural node embeddings trained with a margin ranking loss.
//!
//! Each facet subgraph gets its own embedding table. Training walks the edge
//! multiset in a seeded shuffled order and, for every positive edge `(s, t)`
//! plus each sampled corruption `(s, n)`, takes one subgradient step on
//! `max(0, margin - s.t + s.n)` touching only the three involved vectors.
//! There is no mini-batching; determinism comes from the shuffle and negative
//! draws being keyed by `(seed, epoch)` and the initialization being a pure
//! function of `(seed, node id, coordinate)`.
//!
//! Vectors are stored as `f32` (matching the on-disk format exactly) while
//! all arithmetic runs in `f64`.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facet_graph::Facet;
use crate::hashing::{derive_seed_index, rng_from, unit_from};
use crate::vecmath;

/// Hyperparameters for structural embedding training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives_per_edge: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for GraphTrainConfig {
    fn default() -> Self {
        GraphTrainConfig {
            dim: 32,
            epochs: 10,
            learning_rate: 0.05,
            negatives_per_edge: 5,
            margin: 1.0,
            seed: 0,
        }
    }
}

impl GraphTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        if self.negatives_per_edge == 0 {
            return Err(Error::Config(
                "negatives_per_edge must be at least 1".into(),
            ));
        }
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::Config(format!(
                "margin {} must be non-negative and finite",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Dense per-node embeddings for one facet, ids sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddingTable {
    facet: Facet,
    dim: usize,
    seed: u64,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl NodeEmbeddingTable {
    /// Builds a table from explicit rows, mainly for tests and fixtures.
    pub fn from_rows<I>(facet: Facet, dim: usize, seed: u64, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut sorted: Vec<(String, Vec<f32>)> = rows.into_iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut ids = Vec::with_capacity(sorted.len());
        let mut data = Vec::with_capacity(sorted.len() * dim);
        let mut index = HashMap::with_capacity(sorted.len());
        for (id, row) in sorted {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if index.contains_key(&id) {
                return Err(Error::Validation(format!("duplicate node id `{id}`")));
            }
            index.insert(id.clone(), ids.len());
            ids.push(id);
            data.extend_from_slice(&row);
        }
        Ok(NodeEmbeddingTable {
            facet,
            dim,
            seed,
            ids,
            index,
            data,
        })
    }

    pub fn facet(&self) -> Facet {
        self.facet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Node ids in ascending order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Raw row-major storage, mainly for bit-level comparisons in tests.
    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Deterministic initial table: coordinate `j` of node `id` is uniform in
/// `[-1/sqrt(dim), 1/sqrt(dim))`, a pure function of `(seed, id, j)`.
pub fn seeded_init(
    facet: Facet,
    nodes: &BTreeSet<String>,
    dim: usize,
    seed: u64,
) -> NodeEmbeddingTable {
    let scale = 1.0 / (dim as f64).sqrt();
    let mut ids = Vec::with_capacity(nodes.len());
    let mut data = Vec::with_capacity(nodes.len() * dim);
    let mut index = HashMap::with_capacity(nodes.len());
    for id in nodes {
        index.insert(id.clone(), ids.len());
        ids.push(id.clone());
        for j in 0..dim {
            let u = unit_from(seed, id, j as u64);
            data.push(((2.0 * u - 1.0) * scale) as f32);
        }
    }
    NodeEmbeddingTable {
        facet,
        dim,
        seed,
        ids,
        index,
        data,
    }
}

/// Trains node embeddings over an explicit edge multiset.
///
/// `edges` is typically the weighted-edge expansion of a facet subgraph, so a
/// weight-3 edge appears three times and receives three times the updates.
/// Zero edges returns the seeded initialization exactly. Negatives corrupt
/// only the target side, drawn uniformly over nodes excluding the true
/// target.
pub fn train_node_embeddings(
    edges: &[(String, String)],
    nodes: &BTreeSet<String>,
    facet: Facet,
    cfg: &GraphTrainConfig,
) -> Result<NodeEmbeddingTable> {
    cfg.validate()?;
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    let mut table = seeded_init(facet, nodes, cfg.dim, cfg.seed);
    if edges.is_empty() {
        return Ok(table);
    }
    if table.len() < 2 {
        return Err(Error::Validation(
            "need at least two nodes to sample corrupted targets".into(),
        ));
    }

    let mut edge_idx = Vec::with_capacity(edges.len());
    for (s, t) in edges {
        let si = table
            .position(s)
            .ok_or_else(|| Error::UnknownNode { id: s.clone() })?;
        let ti = table
            .position(t)
            .ok_or_else(|| Error::UnknownNode { id: t.clone() })?;
        edge_idx.push((si, ti));
    }

    let n = table.len();
    let lr = cfg.learning_rate;
    let mut order: Vec<usize> = (0..edge_idx.len()).collect();
    let mut s_buf = vec![0.0f64; cfg.dim];
    let mut t_buf = vec![0.0f64; cfg.dim];
    let mut n_buf = vec![0.0f64; cfg.dim];

    for epoch in 0..cfg.epochs {
        let mut rng = rng_from(derive_seed_index(cfg.seed, "graph-epoch", epoch as u64));
        order.shuffle(&mut rng);
        for &ei in &order {
            let (si, ti) = edge_idx[ei];
            for _ in 0..cfg.negatives_per_edge {
                // Uniform over nodes excluding the true target.
                let mut ni = rng.random_range(0..n - 1);
                if ni >= ti {
                    ni += 1;
                }

                widen(table.row(si), &mut s_buf);
                widen(table.row(ti), &mut t_buf);
                widen(table.row(ni), &mut n_buf);
                let pos = vecmath::dot(&s_buf, &t_buf);
                let neg = vecmath::dot(&s_buf, &n_buf);
                if cfg.margin - pos + neg <= 0.0 {
                    continue;
                }
                // Subgradients: d/ds = n - t, d/dt = -s, d/dn = s.
                // Applied sequentially so aliased rows (s == n) stay
                // well-defined.
                {
                    let row = table.row_mut(si);
                    for j in 0..cfg.dim {
                        row[j] = (f64::from(row[j]) + lr * (t_buf[j] - n_buf[j])) as f32;
                    }
                }
                {
                    let row = table.row_mut(ti);
                    for j in 0..cfg.dim {
                        row[j] = (f64::from(row[j]) + lr * s_buf[j]) as f32;
                    }
                }
                {
                    let row = table.row_mut(ni);
                    for j in 0..cfg.dim {
                        row[j] = (f64::from(row[j]) - lr * s_buf[j]) as f32;
                    }
                }
                for &i in &[si, ti, ni] {
                    if table.row(i).iter().any(|v| !v.is_finite()) {
                        let (s, t) = (&edges[ei].0, &edges[ei].1);
                        return Err(Error::NonFiniteUpdate {
                            epoch,
                            edge: format!("{s} -> {t}"),
                        });
                    }
                }
            }
        }
    }
    Ok(table)
}

fn widen(src: &[f32], dst: &mut [f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = f64::from(s);
    }
}

/// A ranked neighbor with its cosine distance to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

/// The `min(k, n-1)` nearest nodes to `query` by ascending cosine distance,
/// excluding the query itself. Equal distances order by ascending id.
pub fn nearest_neighbors(
    table: &NodeEmbeddingTable,
    query: &str,
    k: usize,
) -> Result<Vec<Neighbor>> {
    let qi = table
        .position(query)
        .ok_or_else(|| Error::UnknownNode { id: query.into() })?;
    let qrow = table.row(qi);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(table.len() - 1);
    for i in 0..table.len() {
        if i == qi {
            continue;
        }
        scored.push((vecmath::cosine_distance_f32(qrow, table.row(i)), i));
    }
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("cosine distances are finite")
            .then_with(|| table.ids[a.1].cmp(&table.ids[b.1]))
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(distance, i)| Neighbor {
            id: table.ids[i].clone(),
            distance,
        })
        .collect())
}

const EMB_MAGIC: &[u8; 8] = b"FLEWEMB1";

/// Writes a table: header `(facet, dim, count, seed)` then one record per
/// node (`id`, `dim` little-endian f32 values) in id order.
pub fn write_embedding_table<W: Write>(table: &NodeEmbeddingTable, mut w: W) -> Result<()> {
    w.write_all(EMB_MAGIC)?;
    w.write_all(&[table.facet.tag()])?;
    w.write_all(&(table.dim as u32).to_le_bytes())?;
    w.write_all(&(table.len() as u64).to_le_bytes())?;
    w.write_all(&table.seed.to_le_bytes())?;
    for (id, row) in table.iter() {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for &v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a table written by [`write_embedding_table`]. Round-trips exactly.
pub fn read_embedding_table<R: Read>(mut r: R) -> Result<NodeEmbeddingTable> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != EMB_MAGIC {
        return Err(Error::FileFormat(
            "not an embedding table (bad magic)".into(),
        ));
    }
    let facet = Facet::from_tag(read_u8(&mut r)?)?;
    let dim = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    if dim == 0 {
        return Err(Error::FileFormat("embedding dim is 0".into()));
    }
    let mut ids = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    let mut index = HashMap::with_capacity(count);
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::FileFormat("node id is not UTF-8".into()))?;
        if index.contains_key(&id) {
            return Err(Error::FileFormat(format!("duplicate node id `{id}`")));
        }
        let mut buf = [0u8; 4];
        for _ in 0..dim {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        index.insert(id.clone(), ids.len());
        ids.push(id);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::FileFormat("trailing data after records".into()));
    }
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::FileFormat("node ids are not sorted".into()));
    }
    Ok(NodeEmbeddingTable {
        facet,
        dim,
        seed,
        ids,
        index,
        data,
    })
}

pub fn save_embedding_table(table: &NodeEmbeddingTable, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_embedding_table(table, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_embedding_table(path: &Path) -> Result<NodeEmbeddingTable> {
    let bytes = std::fs::read(path)?;
    read_embedding_table(bytes.as_slice())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node_set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn edges_of(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(s, t)| (s.to_string(), t.to_string()))
            .collect()
    }

    fn mean_connected_dot(table: &NodeEmbeddingTable, edges: &[(String, String)]) -> f64 {
        let total: f64 = edges
            .iter()
            .map(|(s, t)| vecmath::dot_f32(table.vector(s).unwrap(), table.vector(t).unwrap()))
            .sum();
        total / edges.len() as f64
    }

    #[test]
    fn init_is_within_scale_and_order_independent() {
        let nodes = node_set(&["a", "b", "c"]);
        let t = seeded_init(Facet::Background, &nodes, 16, 7);
        let bound = 1.0 / (16f64).sqrt() + 1e-9;
        for (_, row) in t.iter() {
            for &v in row {
                assert!(f64::from(v).abs() <= bound);
            }
        }
        // Same nodes inserted in any order produce the same table.
        let reversed: BTreeSet<String> = ["c", "b", "a"].iter().map(|s| s.to_string()).collect();
        let t2 = seeded_init(Facet::Background, &reversed, 16, 7);
        assert_eq!(t, t2);
    }

    #[test]
    fn triangle_training_raises_connected_dot_products() {
        let nodes = node_set(&["a", "b", "c"]);
        let edges = edges_of(&[("a", "b"), ("b", "c"), ("c", "a")]);
        let cfg = GraphTrainConfig {
            dim: 4,
            epochs: 1,
            ..GraphTrainConfig::default()
        };
        let init = seeded_init(Facet::Method, &nodes, cfg.dim, cfg.seed);
        let trained = train_node_embeddings(&edges, &nodes, Facet::Method, &cfg).unwrap();
        assert!(mean_connected_dot(&trained, &edges) > mean_connected_dot(&init, &edges));
    }

    #[test]
    fn zero_edges_returns_seeded_init_exactly() {
        let nodes = node_set(&["a", "b"]);
        let cfg = GraphTrainConfig::default();
        let trained = train_node_embeddings(&[], &nodes, Facet::Result, &cfg).unwrap();
        let init = seeded_init(Facet::Result, &nodes, cfg.dim, cfg.seed);
        assert_eq!(trained, init);
    }

    #[test]
    fn same_seed_is_bit_identical_and_different_seed_is_not() {
        let nodes = node_set(&["a", "b", "c", "d"]);
        let edges = edges_of(&[("a", "b"), ("c", "d"), ("b", "c")]);
        let cfg = GraphTrainConfig {
            dim: 8,
            epochs: 3,
            seed: 11,
            ..GraphTrainConfig::default()
        };
        let t1 = train_node_embeddings(&edges, &nodes, Facet::Background, &cfg).unwrap();
        let t2 = train_node_embeddings(&edges, &nodes, Facet::Background, &cfg).unwrap();
        assert_eq!(t1.data(), t2.data());
        let other = GraphTrainConfig { seed: 12, ..cfg };
        let t3 = train_node_embeddings(&edges, &nodes, Facet::Background, &other).unwrap();
        assert_ne!(t1.data(), t3.data());
    }

    #[test]
    fn empty_node_set_is_an_error() {
        let err = train_node_embeddings(
            &[],
            &BTreeSet::new(),
            Facet::Background,
            &GraphTrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::EmptyNodeSet)));
    }

    #[test]
    fn unknown_edge_endpoint_is_an_error() {
        let nodes = node_set(&["a", "b"]);
        let err = train_node_embeddings(
            &edges_of(&[("a", "z")]),
            &nodes,
            Facet::Background,
            &GraphTrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::UnknownNode { .. })));
    }

    #[test]
    fn runaway_learning_rate_reports_epoch_and_edge() {
        let nodes = node_set(&["a", "b", "c"]);
        let edges = edges_of(&[("a", "b"), ("b", "c")]);
        let cfg = GraphTrainConfig {
            dim: 2,
            epochs: 200,
            learning_rate: 1e30,
            margin: 1e30,
            ..GraphTrainConfig::default()
        };
        match train_node_embeddings(&edges, &nodes, Facet::Background, &cfg) {
            Err(Error::NonFiniteUpdate { edge, .. }) => {
                assert!(edge.contains("->"));
            }
            other => panic!("expected non-finite update, got {other:?}"),
        }
    }

    #[test]
    fn neighbors_have_exact_order_and_distances() {
        let rows = vec![
            ("a".to_string(), vec![1.0f32, 0.0]),
            ("b".to_string(), vec![1.0f32, 1.0]),
            ("c".to_string(), vec![0.0f32, 1.0]),
            ("d".to_string(), vec![-1.0f32, 0.0]),
        ];
        let t = NodeEmbeddingTable::from_rows(Facet::Background, 2, 0, rows).unwrap();
        let nn = nearest_neighbors(&t, "a", 10).unwrap();
        let ids: Vec<&str> = nn.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c", "d"]);
        assert!((nn[0].distance - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((nn[1].distance - 1.0).abs() < 1e-12);
        assert!((nn[2].distance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn neighbor_ties_break_by_ascending_id() {
        let rows = vec![
            ("q".to_string(), vec![1.0f32, 0.0]),
            ("y".to_string(), vec![1.0f32, 1.0]),
            ("x".to_string(), vec![2.0f32, 2.0]),
        ];
        let t = NodeEmbeddingTable::from_rows(Facet::Background, 2, 0, rows).unwrap();
        let nn = nearest_neighbors(&t, "q", 2).unwrap();
        assert_eq!(nn[0].id, "x");
        assert_eq!(nn[1].id, "y");
        assert_eq!(nn[0].distance, nn[1].distance);
    }

    #[test]
    fn k_is_capped_at_population_minus_one() {
        let nodes = node_set(&["a", "b", "c"]);
        let t = seeded_init(Facet::Background, &nodes, 4, 0);
        assert_eq!(nearest_neighbors(&t, "a", 3).unwrap().len(), 2);
        assert_eq!(nearest_neighbors(&t, "a", 1).unwrap().len(), 1);
    }

    #[test]
    fn unknown_query_is_an_error() {
        let nodes = node_set(&["a"]);
        let t = seeded_init(Facet::Background, &nodes, 4, 0);
        assert!(matches!(
            nearest_neighbors(&t, "zz", 1),
            Err(Error::UnknownNode { .. })
        ));
    }

    #[test]
    fn zero_norm_vectors_rank_at_distance_one() {
        let rows = vec![
            ("a".to_string(), vec![1.0f32, 0.0]),
            ("z".to_string(), vec![0.0f32, 0.0]),
            ("m".to_string(), vec![-1.0f32, 0.0]),
        ];
        let t = NodeEmbeddingTable::from_rows(Facet::Background, 2, 0, rows).unwrap();
        let nn = nearest_neighbors(&t, "a", 3).unwrap();
        assert_eq!(nn[0].id, "z");
        assert_eq!(nn[0].distance, 1.0);
        assert_eq!(nn[1].id, "m");
    }

    #[test]
    fn table_file_round_trips_exactly() {
        let nodes = node_set(&["a", "b", "c"]);
        let edges = edges_of(&[("a", "b")]);
        let cfg = GraphTrainConfig {
            dim: 5,
            epochs: 2,
            seed: 3,
            ..GraphTrainConfig::default()
        };
        let t = train_node_embeddings(&edges, &nodes, Facet::Result, &cfg).unwrap();
        let mut buf = Vec::new();
        write_embedding_table(&t, &mut buf).unwrap();
        let t2 = read_embedding_table(buf.as_slice()).unwrap();
        assert_eq!(t, t2);
        let mut buf2 = Vec::new();
        write_embedding_table(&t2, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn table_file_rejects_corruption() {
        let nodes = node_set(&["a", "b"]);
        let t = seeded_init(Facet::Background, &nodes, 2, 0);
        let mut buf = Vec::new();
        write_embedding_table(&t, &mut buf).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            read_embedding_table(bad_magic.as_slice()),
            Err(Error::FileFormat(_))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(read_embedding_table(truncated).is_err());

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(
            read_embedding_table(trailing.as_slice()),
            Err(Error::FileFormat(_))
        ));
    }
}
