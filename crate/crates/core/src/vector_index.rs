//! Exact top-k retrieval by raw dot product.
//!
//! [`VectorIndex::search`] keeps a size-k heap over a single pass of the
//! contiguous row storage. [`VectorIndex::brute_force_search`] scores every
//! entry and sorts the lot; it exists only as an oracle for the former.
//! Both order results by descending score, then ascending insertion
//! position, and compute every score with [`crate::dot`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingRecord};
use crate::error::{Error, Result};

/// One unit of retrieved evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborHit {
    pub id: String,
    pub score: f64,
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_months: Option<u64>,
}

/// Borrowed view of one index entry.
#[derive(Debug, Clone, Copy)]
pub struct Entry<'a> {
    pub id: &'a str,
    pub vector: &'a [f64],
    pub label: Option<&'a str>,
    pub attributes: &'a BTreeMap<String, String>,
    pub target_months: Option<u64>,
}

/// Immutable searchable collection of fixed-dimension vectors.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    data: Vec<f64>,
    ids: Vec<String>,
    labels: Vec<Option<String>>,
    attributes: Vec<BTreeMap<String, String>>,
    target_months: Vec<Option<u64>>,
    positions: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    position: usize,
}

/// `Less` when `a` ranks ahead of `b`.
fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .expect("scores are finite")
        .then(a.position.cmp(&b.position))
}

// The heap keeps the worst-ranked candidate on top.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self, other)
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Builds an index over every record of `corpus`.
pub fn build_index(corpus: &Corpus) -> Result<VectorIndex> {
    VectorIndex::from_records(corpus.dimension(), corpus.records())
}

impl VectorIndex {
    /// Builds an index from already-validated records, keeping their order.
    pub fn from_records(dimension: usize, records: &[EmbeddingRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let mut index = VectorIndex {
            dimension,
            data: Vec::with_capacity(records.len() * dimension),
            ids: Vec::with_capacity(records.len()),
            labels: Vec::with_capacity(records.len()),
            attributes: Vec::with_capacity(records.len()),
            target_months: Vec::with_capacity(records.len()),
            positions: HashMap::with_capacity(records.len()),
        };
        for record in records {
            record.validate(dimension)?;
            let position = index.ids.len();
            if index.positions.insert(record.id.clone(), position).is_some() {
                return Err(Error::DuplicateId(record.id.clone()));
            }
            index.data.extend_from_slice(&record.vector);
            index.ids.push(record.id.clone());
            index.labels.push(record.label.clone());
            index.attributes.push(record.attributes.clone());
            index.target_months.push(record.target_months);
        }
        Ok(index)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn entry(&self, position: usize) -> Entry<'_> {
        Entry {
            id: &self.ids[position],
            vector: self.row(position),
            label: self.labels[position].as_deref(),
            attributes: &self.attributes[position],
            target_months: self.target_months[position],
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<Entry<'_>> {
        self.position(id).map(|p| self.entry(p))
    }

    pub fn entries(&self) -> impl Iterator<Item = Entry<'_>> + '_ {
        (0..self.len()).map(move |p| self.entry(p))
    }

    /// Distinct entry labels in ascending order.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.labels.iter().flatten().cloned().collect();
        labels.sort();
        labels.dedup();
        labels
    }

    fn row(&self, position: usize) -> &[f64] {
        &self.data[position * self.dimension..(position + 1) * self.dimension]
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if query.len() != self.dimension {
            return Err(Error::dimension(self.dimension, query.len()));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query vector".into()));
        }
        Ok(())
    }

    fn score(&self, position: usize, query: &[f64]) -> Result<f64> {
        let score = crate::dot(query, self.row(position));
        if score.is_finite() {
            Ok(score)
        } else {
            Err(Error::NonFinite(format!("score against {:?}", self.ids[position])))
        }
    }

    fn to_hits(&self, ranked: impl IntoIterator<Item = Candidate>) -> Vec<NeighborHit> {
        ranked
            .into_iter()
            .map(|c| NeighborHit {
                id: self.ids[c.position].clone(),
                score: c.score,
                label: self.labels[c.position].clone(),
                target_months: self.target_months[c.position],
            })
            .collect()
    }

    /// The `min(k, len)` entries with the largest dot product against
    /// `query`, best first.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<NeighborHit>> {
        self.check_query(query, k)?;
        let keep = k.min(self.len());
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(keep + 1);
        for (position, row) in self.data.chunks_exact(self.dimension).enumerate() {
            let score = crate::dot(query, row);
            if !score.is_finite() {
                return Err(Error::NonFinite(format!("score against {:?}", self.ids[position])));
            }
            let candidate = Candidate { score, position };
            if heap.len() < keep {
                heap.push(candidate);
            } else if let Some(mut worst) = heap.peek_mut() {
                if candidate < *worst {
                    *worst = candidate;
                }
            }
        }
        Ok(self.to_hits(heap.into_sorted_vec()))
    }

    /// Full scan plus full sort. Same contract as [`VectorIndex::search`].
    pub fn brute_force_search(&self, query: &[f64], k: usize) -> Result<Vec<NeighborHit>> {
        self.check_query(query, k)?;
        let mut all = Vec::with_capacity(self.len());
        for position in 0..self.len() {
            all.push(Candidate {
                score: self.score(position, query)?,
                position,
            });
        }
        all.sort_by(rank_order);
        all.truncate(k);
        Ok(self.to_hits(all))
    }

    /// Runs [`VectorIndex::search`] for every query, in parallel, returning
    /// results in query order.
    pub fn batch_search(&self, queries: &[Vec<f64>], k: usize) -> Result<Vec<Vec<NeighborHit>>> {
        for (i, q) in queries.iter().enumerate() {
            if q.len() != self.dimension {
                return Err(Error::DimensionMismatch {
                    expected: self.dimension,
                    actual: q.len(),
                    context: Some(format!("query {i}")),
                });
            }
        }
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }
}
