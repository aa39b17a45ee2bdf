//! Binary document-embedding files, one per facet encoder.
//!
//! Layout: magic `FLEWVEC1`, facet tag (u8), dimension (u32 LE), record
//! count (u64 LE), then per record the id length (u32 LE), the UTF-8 id,
//! and `dim` little-endian f64 values. Records are sorted by id, so a table
//! serializes to identical bytes on every run.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use flew_core::encoder::EmbeddingVector;
use flew_core::facet_graph::Facet;
use flew_core::Error as CoreError;

use crate::error::{PipelineError, Result};

const VEC_MAGIC: &[u8; 8] = b"FLEWVEC1";

/// Dense per-document embeddings produced by one facet encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DocEmbeddingTable {
    facet: Facet,
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl DocEmbeddingTable {
    pub fn new(facet: Facet, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(PipelineError::Format(
                "document embeddings need a positive dimension".into(),
            ));
        }
        Ok(DocEmbeddingTable {
            facet,
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, id: &str, vector: EmbeddingVector) -> Result<()> {
        if id.is_empty() {
            return Err(PipelineError::Format("empty document id".into()));
        }
        if vector.dim() != self.dim {
            return Err(PipelineError::Core(CoreError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            }));
        }
        if !vector.values.iter().all(|v| v.is_finite()) {
            return Err(PipelineError::Format(format!(
                "document `{id}` has a non-finite embedding"
            )));
        }
        if self.entries.insert(id.to_string(), vector.values).is_some() {
            return Err(PipelineError::Format(format!(
                "document `{id}` embedded twice"
            )));
        }
        Ok(())
    }

    pub fn facet(&self) -> Facet {
        self.facet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The table as the map shape the evaluation harness consumes.
    pub fn to_embedding_map(&self) -> BTreeMap<String, EmbeddingVector> {
        self.entries
            .iter()
            .map(|(id, values)| {
                (
                    id.clone(),
                    EmbeddingVector {
                        values: values.clone(),
                    },
                )
            })
            .collect()
    }
}

pub fn write_doc_embeddings<W: Write>(table: &DocEmbeddingTable, mut w: W) -> Result<()> {
    let io_err = |e: std::io::Error| PipelineError::Format(format!("write: {e}"));
    w.write_all(VEC_MAGIC).map_err(io_err)?;
    w.write_all(&[table.facet.tag()]).map_err(io_err)?;
    w.write_all(&(table.dim as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(table.entries.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for (id, values) in &table.entries {
        w.write_all(&(id.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(id.as_bytes()).map_err(io_err)?;
        for &v in values {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| PipelineError::Format(format!("truncated {what}: {e}")))
}

pub fn read_doc_embeddings<R: Read>(mut r: R) -> Result<DocEmbeddingTable> {
    let mut magic = [0u8; 8];
    read_exact_or(&mut r, &mut magic, "header")?;
    if &magic != VEC_MAGIC {
        return Err(PipelineError::Format(
            "not a document embedding file (bad magic)".into(),
        ));
    }
    let mut tag = [0u8; 1];
    read_exact_or(&mut r, &mut tag, "facet tag")?;
    let facet = Facet::from_tag(tag[0])?;
    let mut dim_bytes = [0u8; 4];
    read_exact_or(&mut r, &mut dim_bytes, "dimension")?;
    let dim = u32::from_le_bytes(dim_bytes) as usize;
    let mut count_bytes = [0u8; 8];
    read_exact_or(&mut r, &mut count_bytes, "count")?;
    let count = u64::from_le_bytes(count_bytes);

    let mut table = DocEmbeddingTable::new(facet, dim)?;
    for i in 0..count {
        let mut len_bytes = [0u8; 4];
        read_exact_or(&mut r, &mut len_bytes, &format!("record {i} id length"))?;
        let id_len = u32::from_le_bytes(len_bytes) as usize;
        let mut id_bytes = vec![0u8; id_len];
        read_exact_or(&mut r, &mut id_bytes, &format!("record {i} id"))?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| PipelineError::Format(format!("record {i}: id is not UTF-8")))?;
        let mut values = Vec::with_capacity(dim);
        let mut value_bytes = [0u8; 8];
        for _ in 0..dim {
            read_exact_or(&mut r, &mut value_bytes, &format!("record {i} values"))?;
            values.push(f64::from_le_bytes(value_bytes));
        }
        table.insert(&id, EmbeddingVector { values })?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)
        .map_err(|e| PipelineError::Format(format!("read: {e}")))?
        != 0
    {
        return Err(PipelineError::Format(
            "trailing bytes after the last record".into(),
        ));
    }
    Ok(table)
}

pub fn save_doc_embeddings(table: &DocEmbeddingTable, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_doc_embeddings(table, &mut buf)?;
    std::fs::write(path, buf).map_err(PipelineError::io(path))
}

pub fn load_doc_embeddings(path: &Path) -> Result<DocEmbeddingTable> {
    let bytes = std::fs::read(path).map_err(PipelineError::io(path))?;
    read_doc_embeddings(bytes.as_slice())
}
