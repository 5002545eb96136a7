use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::encoder::BiEncoder;
use crate::error::{Error, Result};
use crate::table::Corpus;
use crate::tensor::{read_checkpoint, write_checkpoint};

use super::EncodeCtx;

/// Dot-product similarity between a question vector and a table vector.
pub fn similarity(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "similarity: dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Id-tagged embedding matrix supporting exact inner-product top-k
/// search. Ties break by ascending table id so rankings are total and
/// deterministic.
pub struct DenseIndex {
    ids: Vec<String>,
    embeddings: Vec<f32>,
    dim: usize,
    id_rank: Vec<usize>,
}

impl DenseIndex {
    pub fn new(ids: Vec<String>, embeddings: Vec<f32>, dim: usize) -> Self {
        assert_eq!(
            embeddings.len(),
            ids.len() * dim,
            "index: embedding matrix does not match id count"
        );
        assert!(
            embeddings.iter().all(|v| v.is_finite()),
            "index: embeddings must be finite"
        );
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut id_rank = vec![0usize; ids.len()];
        for (rank, idx) in order.into_iter().enumerate() {
            id_rank[idx] = rank;
        }
        DenseIndex {
            ids,
            embeddings,
            dim,
            id_rank,
        }
    }

    /// Encodes every table of the corpus (after budget truncation and any
    /// configured perturbation) into one vector. Order follows the corpus
    /// and the result is deterministic for a fixed model.
    pub fn build(model: &BiEncoder, corpus: &Corpus, ctx: &EncodeCtx) -> Self {
        let rows: Vec<(String, Vec<f32>)> = corpus
            .tables()
            .par_iter()
            .map(|t| (t.id.clone(), ctx.embed_table(model, t)))
            .collect();
        let dim = model.config.hidden;
        let mut ids = Vec::with_capacity(rows.len());
        let mut embeddings = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            debug_assert_eq!(v.len(), dim);
            ids.push(id);
            embeddings.extend_from_slice(&v);
        }
        DenseIndex::new(ids, embeddings, dim)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` ids with the largest dot product against `query`, best
    /// first; equal scores order by ascending table id.
    pub fn retrieve(&self, query: &[f32], k: usize) -> Result<Vec<(String, f32)>> {
        if k == 0 || k > self.len() {
            return Err(Error::KOutOfRange { k, len: self.len() });
        }
        assert_eq!(query.len(), self.dim, "retrieve: query dimension mismatch");
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for idx in 0..self.len() {
            let cand = Candidate {
                score: similarity(query, self.embedding(idx)),
                id_rank: self.id_rank[idx],
                idx,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("non-empty heap") {
                heap.pop();
                heap.push(cand);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (self.ids[c.idx].clone(), c.score))
            .collect())
    }

    /// Persists the embedding matrix in the checkpoint format plus a JSON
    /// sidecar (`<path>.ids.json`) listing the table ids.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_checkpoint(
            path,
            None,
            [(
                "embeddings",
                &[self.len(), self.dim][..],
                &self.embeddings[..],
            )],
        )?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string(&self.ids).map_err(|e| Error::Checkpoint {
            path: sidecar.clone(),
            message: e.to_string(),
        })?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ckpt = read_checkpoint(path)?;
        let (_, shape, embeddings) = ckpt
            .entries
            .into_iter()
            .find(|(name, _, _)| name == "embeddings")
            .ok_or_else(|| Error::Checkpoint {
                path: path.into(),
                message: "index checkpoint lacks an embeddings entry".into(),
            })?;
        let sidecar = sidecar_path(path);
        let ids_json = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let ids: Vec<String> = serde_json::from_str(&ids_json).map_err(|e| Error::Checkpoint {
            path: sidecar.clone(),
            message: e.to_string(),
        })?;
        if shape.len() != 2 || shape[0] != ids.len() {
            return Err(Error::Checkpoint {
                path: path.into(),
                message: format!(
                    "embeddings shape {shape:?} does not match {} sidecar ids",
                    ids.len()
                ),
            });
        }
        Ok(DenseIndex::new(ids, embeddings, shape[1]))
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".ids.json");
    PathBuf::from(os)
}

#[derive(PartialEq)]
struct Candidate {
    score: f32,
    id_rank: usize,
    idx: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Greater means worse, so the max-heap root is the weakest candidate:
    // lower score first, then higher id rank.
    fn cmp(&self, other: &Self) -> Ordering {
        match self
            .score
            .partial_cmp(&other.score)
            .expect("index scores are finite")
        {
            Ordering::Less => Ordering::Greater,
            Ordering::Greater => Ordering::Less,
            Ordering::Equal => self.id_rank.cmp(&other.id_rank),
        }
    }
}
