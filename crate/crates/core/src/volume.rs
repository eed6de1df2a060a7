//! Volume retrieval from per-slice embeddings.
//!
//! Slices of one volume are pooled componentwise into a single vector
//! (median by default), volumes are indexed and searched by dot product,
//! and retrieval quality is scored with Precision@k and Average Precision
//! against tumor flag or tumor stage.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingRecord, ATTR_TUMOR_FLAG, ATTR_TUMOR_STAGE};
use crate::error::{Error, Result};
use crate::vector_index::{NeighborHit, VectorIndex};

/// Componentwise pooling of slice embeddings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
    Max,
    Stdev,
}

impl Aggregation {
    pub const ALL: [Aggregation; 4] = [
        Aggregation::Median,
        Aggregation::Mean,
        Aggregation::Max,
        Aggregation::Stdev,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Median => "median",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Stdev => "stdev",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Aggregation::Median),
            "mean" | "average" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "stdev" | "std" => Ok(Aggregation::Stdev),
            other => Err(Error::invalid(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// Pools `slices` componentwise.
///
/// Each component's values are sorted before pooling, so the result does not
/// depend on slice order for any method (sums included). The median of an
/// even count is the midpoint of the middle pair; the standard deviation is
/// the population one.
pub fn aggregate_slices<V: AsRef<[f64]>>(slices: &[V], method: Aggregation) -> Result<Vec<f64>> {
    let Some(first) = slices.first() else {
        return Err(Error::invalid("no slices to aggregate"));
    };
    let dimension = first.as_ref().len();
    for (i, s) in slices.iter().enumerate() {
        if s.as_ref().len() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: s.as_ref().len(),
                context: Some(format!("slice {i}")),
            });
        }
    }
    let n = slices.len();
    let mut column = vec![0.0; n];
    let mut out = Vec::with_capacity(dimension);
    for c in 0..dimension {
        for (slot, s) in column.iter_mut().zip(slices) {
            *slot = s.as_ref()[c];
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("slice component {c}")));
        }
        column.sort_by(f64::total_cmp);
        let value = match method {
            Aggregation::Median if n % 2 == 1 => column[n / 2],
            Aggregation::Median => (column[n / 2 - 1] + column[n / 2]) / 2.0,
            Aggregation::Max => column[n - 1],
            Aggregation::Mean => column.iter().sum::<f64>() / n as f64,
            Aggregation::Stdev => {
                let mean = column.iter().sum::<f64>() / n as f64;
                let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                var.sqrt()
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("aggregated component {c}")));
        }
        out.push(value);
    }
    Ok(out)
}

/// One pooled volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEmbedding {
    pub volume_id: String,
    pub vector: Vec<f64>,
    pub aggregation: Aggregation,
    pub slice_count: usize,
    pub tumor_flag: Option<bool>,
    pub tumor_stage: Option<String>,
}

/// Dot-product index over pooled volumes, all built with one aggregation.
#[derive(Debug, Clone)]
pub struct VolumeIndex {
    aggregation: Aggregation,
    volumes: Vec<VolumeEmbedding>,
    index: VectorIndex,
}

fn parse_flag(volume: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::InconsistentVolume {
            volume: volume.to_string(),
            message: format!("tumor_flag must be \"true\" or \"false\", got {other:?}"),
        }),
    }
}

/// Groups slice records by `volume_id` (first-appearance order), orders each
/// group by `slice_index` and pools it.
pub fn group_volumes(records: &[EmbeddingRecord], method: Aggregation) -> Result<Vec<VolumeEmbedding>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&EmbeddingRecord>> = HashMap::new();
    for record in records {
        let (Some(volume), Some(_)) = (record.volume_id.as_deref(), record.slice_index) else {
            return Err(Error::InvalidRecord {
                id: record.id.clone(),
                message: "slice record needs volume_id and slice_index".into(),
            });
        };
        groups
            .entry(volume)
            .or_insert_with(|| {
                order.push(volume);
                Vec::new()
            })
            .push(record);
    }
    order
        .into_iter()
        .map(|volume| {
            let mut slices = groups.remove(volume).expect("grouped");
            slices.sort_by_key(|r| r.slice_index);
            if let Some(w) = slices.windows(2).find(|w| w[0].slice_index == w[1].slice_index) {
                return Err(Error::InconsistentVolume {
                    volume: volume.to_string(),
                    message: format!("slice_index {} appears twice", w[0].slice_index.unwrap_or(0)),
                });
            }
            let flag_raw = slices[0].attributes.get(ATTR_TUMOR_FLAG);
            let stage = slices[0].attributes.get(ATTR_TUMOR_STAGE);
            for s in &slices[1..] {
                if s.attributes.get(ATTR_TUMOR_FLAG) != flag_raw {
                    return Err(Error::InconsistentVolume {
                        volume: volume.to_string(),
                        message: "conflicting tumor_flag across slices".into(),
                    });
                }
                if s.attributes.get(ATTR_TUMOR_STAGE) != stage {
                    return Err(Error::InconsistentVolume {
                        volume: volume.to_string(),
                        message: "conflicting tumor_stage across slices".into(),
                    });
                }
            }
            let tumor_flag = flag_raw.map(|raw| parse_flag(volume, raw)).transpose()?;
            let vectors: Vec<&[f64]> = slices.iter().map(|r| r.vector.as_slice()).collect();
            Ok(VolumeEmbedding {
                volume_id: volume.to_string(),
                vector: aggregate_slices(&vectors, method)?,
                aggregation: method,
                slice_count: slices.len(),
                tumor_flag,
                tumor_stage: stage.cloned(),
            })
        })
        .collect()
}

/// Pools every volume of `corpus` and indexes the results.
pub fn build_volume_index(corpus: &Corpus, method: Aggregation) -> Result<VolumeIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    VolumeIndex::new(group_volumes(corpus.records(), method)?, method)
}

impl VolumeIndex {
    pub fn new(volumes: Vec<VolumeEmbedding>, aggregation: Aggregation) -> Result<Self> {
        if let Some(v) = volumes.iter().find(|v| v.aggregation != aggregation) {
            return Err(Error::AggregationMismatch {
                index: aggregation.to_string(),
                query: v.aggregation.to_string(),
            });
        }
        let dimension = volumes.first().map_or(0, |v| v.vector.len());
        let records: Vec<EmbeddingRecord> = volumes
            .iter()
            .map(|v| {
                let mut r = EmbeddingRecord::new(v.volume_id.clone(), v.vector.clone());
                r.label = v.tumor_stage.clone();
                if let Some(flag) = v.tumor_flag {
                    r.attributes.insert(ATTR_TUMOR_FLAG.into(), flag.to_string());
                }
                if let Some(stage) = &v.tumor_stage {
                    r.attributes.insert(ATTR_TUMOR_STAGE.into(), stage.clone());
                }
                r
            })
            .collect();
        let index = VectorIndex::from_records(dimension, &records)?;
        Ok(VolumeIndex {
            aggregation,
            volumes,
            index,
        })
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn volumes(&self) -> &[VolumeEmbedding] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.index.dimension()
    }

    pub fn volume(&self, volume_id: &str) -> Option<&VolumeEmbedding> {
        self.index.position(volume_id).map(|p| &self.volumes[p])
    }

    pub fn vector_index(&self) -> &VectorIndex {
        &self.index
    }

    /// Top-k volumes for an already pooled query vector.
    pub fn search_vector(&self, query: &[f64], k: usize) -> Result<Vec<NeighborHit>> {
        self.index.search(query, k)
    }
}

/// Pools `query_slices` with `method` and searches. `method` must match the
/// aggregation the index was built with.
pub fn retrieve_volumes<V: AsRef<[f64]>>(
    index: &VolumeIndex,
    query_slices: &[V],
    method: Aggregation,
    k: usize,
) -> Result<Vec<NeighborHit>> {
    if method != index.aggregation {
        return Err(Error::AggregationMismatch {
            index: index.aggregation.to_string(),
            query: method.to_string(),
        });
    }
    let pooled = aggregate_slices(query_slices, method)?;
    index.search_vector(&pooled, k)
}

/// Relevant hits among the first `min(k, len)`, divided by `min(k, len)`.
pub fn precision_at_k(hits: &[NeighborHit], relevant: impl Fn(&NeighborHit) -> bool, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if hits.is_empty() {
        return Err(Error::EmptyHits);
    }
    let cut = k.min(hits.len());
    let found = hits[..cut].iter().filter(|h| relevant(h)).count();
    Ok(found as f64 / cut as f64)
}

/// Mean of Precision@i over the ranks `i` of relevant hits in the returned
/// list; 0 when nothing returned is relevant.
pub fn average_precision(hits: &[NeighborHit], relevant: impl Fn(&NeighborHit) -> bool) -> Result<f64> {
    if hits.is_empty() {
        return Err(Error::EmptyHits);
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, hit) in hits.iter().enumerate() {
        if relevant(hit) {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
        }
    }
    Ok(if found == 0 { 0.0 } else { sum / found as f64 })
}

/// What makes a retrieved volume relevant to a query volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    TumorFlag,
    TumorStage,
}

impl Relevance {
    pub const ALL: [Relevance; 2] = [Relevance::TumorFlag, Relevance::TumorStage];

    /// Predicate for `query`, or `None` when the query lacks the attribute.
    pub fn predicate<'a>(
        self,
        index: &'a VolumeIndex,
        query: &'a VolumeEmbedding,
    ) -> Option<impl Fn(&NeighborHit) -> bool + 'a> {
        let wanted_flag = query.tumor_flag;
        let wanted_stage = query.tumor_stage.as_deref();
        match self {
            Relevance::TumorFlag if wanted_flag.is_none() => return None,
            Relevance::TumorStage if wanted_stage.is_none() => return None,
            _ => {}
        }
        Some(move |hit: &NeighborHit| {
            let Some(v) = index.volume(&hit.id) else {
                return false;
            };
            match self {
                Relevance::TumorFlag => v.tumor_flag == wanted_flag,
                Relevance::TumorStage => v.tumor_stage.as_deref() == wanted_stage,
            }
        })
    }
}

impl fmt::Display for Relevance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relevance::TumorFlag => "tumor_flag",
            Relevance::TumorStage => "tumor_stage",
        })
    }
}

/// Cutoffs reported for volume retrieval.
pub const REPORT_CUTOFFS: [usize; 3] = [3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAt {
    pub k: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub relevance: Relevance,
    pub precision_at: Vec<PrecisionAt>,
    pub average_precision: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub aggregation: Aggregation,
    pub cutoffs: Vec<usize>,
    pub rows: Vec<RetrievalRow>,
}

/// Mean P@k for each cutoff and mean AP over the top `max(cutoffs)` hits,
/// per relevance mode. Queries lacking a mode's attribute are skipped for
/// that mode; a query whose id is also indexed never retrieves itself.
pub fn evaluate_retrieval(
    index: &VolumeIndex,
    queries: &[VolumeEmbedding],
    cutoffs: &[usize],
) -> Result<RetrievalReport> {
    let depth = cutoffs.iter().copied().max().ok_or_else(|| Error::invalid("no cutoffs"))?;
    let mut rows = Vec::new();
    let mut results = Vec::with_capacity(queries.len());
    for q in queries {
        if q.aggregation != index.aggregation {
            return Err(Error::AggregationMismatch {
                index: index.aggregation.to_string(),
                query: q.aggregation.to_string(),
            });
        }
        let mut hits = index.search_vector(&q.vector, depth + 1)?;
        hits.retain(|h| h.id != q.volume_id);
        hits.truncate(depth);
        results.push(hits);
    }
    for mode in Relevance::ALL {
        let mut sums = vec![0.0; cutoffs.len()];
        let mut ap_sum = 0.0;
        let mut counted = 0;
        for (q, hits) in queries.iter().zip(&results) {
            let Some(relevant) = mode.predicate(index, q) else {
                continue;
            };
            if hits.is_empty() {
                continue;
            }
            for (slot, &k) in sums.iter_mut().zip(cutoffs) {
                *slot += precision_at_k(hits, &relevant, k)?;
            }
            ap_sum += average_precision(hits, &relevant)?;
            counted += 1;
        }
        let denom = counted.max(1) as f64;
        rows.push(RetrievalRow {
            relevance: mode,
            precision_at: cutoffs
                .iter()
                .zip(&sums)
                .map(|(&k, s)| PrecisionAt { k, precision: s / denom })
                .collect(),
            average_precision: ap_sum / denom,
            queries: counted,
        });
    }
    Ok(RetrievalReport {
        aggregation: index.aggregation,
        cutoffs: cutoffs.to_vec(),
        rows,
    })
}
