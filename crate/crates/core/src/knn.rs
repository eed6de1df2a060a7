//! Decisions from neighbor evidence.
//!
//! Classification sums the dot-product scores of the top-k hits per label
//! and turns those sums into probabilities with a temperature-1 softmax.
//! Regression returns the target value carrying the largest summed score.
//! Zero-shot classification scores a query against one text anchor per
//! class.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::metrics;
use crate::vector_index::{NeighborHit, VectorIndex};

/// Neighbors voting in image-image classification.
pub const DEFAULT_CLASSIFY_K: usize = 20;
/// Neighbors voting in month regression.
pub const DEFAULT_REGRESS_K: usize = 100;

/// Per-class evidence and probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub classes: Vec<String>,
    pub raw: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassScores {
    fn from_raw(classes: Vec<String>, raw: Vec<f64>) -> Self {
        let probabilities = softmax(&raw);
        ClassScores {
            classes,
            raw,
            probabilities,
        }
    }

    /// Most probable class; the first in class order wins ties.
    pub fn argmax(&self) -> &str {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        &self.classes[best]
    }

    pub fn probability(&self, class: &str) -> Option<f64> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.probabilities[i])
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// How per-class hit scores are pooled before the softmax.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Vote {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Vote::Sum),
            "mean" => Ok(Vote::Mean),
            other => Err(Error::invalid(format!("unknown vote {other:?}"))),
        }
    }
}

/// Weighted vote over the first `min(k, hits.len())` hits. Classes are the
/// labels present among them, sorted ascending.
pub fn classify_knn(hits: &[NeighborHit], k: usize) -> Result<ClassScores> {
    classify_knn_with(hits, k, Vote::Sum, None)
}

/// [`classify_knn`] with a pooling choice and an optional class universe.
/// Universe classes without a voting neighbor get raw score 0.
pub fn classify_knn_with(
    hits: &[NeighborHit],
    k: usize,
    vote: Vote,
    universe: Option<&[String]>,
) -> Result<ClassScores> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let used = &hits[..k.min(hits.len())];
    if used.is_empty() {
        return Err(Error::NoLabeledHits);
    }
    let mut pooled: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    if let Some(universe) = universe {
        for class in universe {
            pooled.insert(class.as_str(), (0.0, 0));
        }
    }
    for hit in used {
        let label = hit
            .label
            .as_deref()
            .ok_or_else(|| Error::MissingLabel(hit.id.clone()))?;
        let slot = match (universe, pooled.get_mut(label)) {
            (_, Some(slot)) => slot,
            (Some(_), None) => {
                return Err(Error::invalid(format!(
                    "hit {:?} carries label {label:?} outside the class universe",
                    hit.id
                )))
            }
            (None, None) => pooled.entry(label).or_insert((0.0, 0)),
        };
        slot.0 += hit.score;
        slot.1 += 1;
    }
    let classes = pooled.keys().map(|c| c.to_string()).collect();
    let raw = pooled
        .values()
        .map(|&(sum, count)| match vote {
            Vote::Sum => sum,
            Vote::Mean if count == 0 => 0.0,
            Vote::Mean => sum / count as f64,
        })
        .collect();
    Ok(ClassScores::from_raw(classes, raw))
}

/// Weighted mode of `target_months` over the first `min(k, hits.len())`
/// hits; equal weights resolve to the smaller month value.
pub fn regress_knn(hits: &[NeighborHit], k: usize) -> Result<u64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let used = &hits[..k.min(hits.len())];
    if used.is_empty() {
        return Err(Error::EmptyHits);
    }
    let mut weights: BTreeMap<u64, f64> = BTreeMap::new();
    for hit in used {
        let months = hit
            .target_months
            .ok_or_else(|| Error::MissingTarget(hit.id.clone()))?;
        *weights.entry(months).or_insert(0.0) += hit.score;
    }
    let mut best: Option<(u64, f64)> = None;
    for (&months, &weight) in &weights {
        if best.is_none_or(|(_, w)| weight > w) {
            best = Some((months, weight));
        }
    }
    Ok(best.expect("at least one hit").0)
}

/// Text-anchor classifier head produced once by the language tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    classes: Vec<String>,
    anchors: Vec<Vec<f64>>,
    temperature: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadHeader {
    temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dimension: Option<usize>,
}

impl ClassifierHead {
    pub fn new(classes: Vec<String>, anchors: Vec<Vec<f64>>, temperature: f64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("a classifier head needs at least one class"));
        }
        if classes.len() != anchors.len() {
            return Err(Error::invalid(format!(
                "{} classes but {} anchors",
                classes.len(),
                anchors.len()
            )));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut seen = BTreeSet::new();
        for class in &classes {
            if !seen.insert(class) {
                return Err(Error::DuplicateId(class.clone()));
            }
        }
        let dimension = anchors[0].len();
        for (class, anchor) in classes.iter().zip(&anchors) {
            if anchor.len() != dimension || dimension == 0 {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: anchor.len(),
                    context: Some(format!("anchor {class:?}")),
                });
            }
            if anchor.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("anchor {class:?}")));
            }
        }
        Ok(ClassifierHead {
            classes,
            anchors,
            temperature,
        })
    }

    /// Builds a head from labeled records, one per class, in record order.
    pub fn from_records(records: &[EmbeddingRecord], temperature: f64) -> Result<Self> {
        let mut classes = Vec::with_capacity(records.len());
        let mut anchors = Vec::with_capacity(records.len());
        for record in records {
            let label = record
                .label
                .clone()
                .ok_or_else(|| Error::MissingLabel(record.id.clone()))?;
            classes.push(label);
            anchors.push(record.vector.clone());
        }
        ClassifierHead::new(classes, anchors, temperature)
    }

    /// Parses a head file: an optional `{"temperature": T}` header line
    /// followed by record lines whose labels name the classes. Without a
    /// header the temperature is 1.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((first_no, first)) = lines.next() else {
            return Err(Error::EmptyCorpus);
        };
        let (temperature, dimension, body_start) = match serde_json::from_str::<HeadHeader>(first) {
            Ok(h) if !first.contains("\"vector\"") => (h.temperature, h.dimension, first_no + 1),
            _ => (1.0, None, first_no),
        };
        let body: String = text
            .lines()
            .skip(body_start)
            .map(|l| format!("{l}\n"))
            .collect();
        let corpus = Corpus::from_record_lines("head", &body, dimension)
            .map_err(|e| shift_line(e, body_start))?;
        ClassifierHead::from_records(corpus.records(), temperature)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClassifierHead::parse(&text)
    }

    /// Renders the head in the format [`ClassifierHead::parse`] reads.
    pub fn to_file_string(&self) -> String {
        let header = HeadHeader {
            temperature: self.temperature,
            dimension: Some(self.dimension()),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (class, anchor) in self.classes.iter().zip(&self.anchors) {
            let record = EmbeddingRecord::new(class.clone(), anchor.clone()).with_label(class.clone());
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn dimension(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        ClassifierHead::new(self.classes.clone(), self.anchors.clone(), temperature)
    }
}

fn shift_line(err: Error, by: usize) -> Error {
    match err {
        Error::AtLine { line, source } => Error::AtLine {
            line: line + by,
            source,
        },
        other => other,
    }
}

/// Softmax over `dot(embedding, anchor) / temperature`, in head class order.
pub fn zeroshot_classify(embedding: &[f64], head: &ClassifierHead) -> Result<ClassScores> {
    if embedding.len() != head.dimension() {
        return Err(Error::dimension(head.dimension(), embedding.len()));
    }
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query vector".into()));
    }
    let raw = head
        .anchors
        .iter()
        .map(|a| crate::dot(embedding, a) / head.temperature)
        .collect();
    Ok(ClassScores::from_raw(head.classes.clone(), raw))
}

/// Metric used to pick `k` on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneMetric {
    #[serde(rename = "mauc")]
    MAuc,
    #[serde(rename = "bacc")]
    Bacc,
}

impl fmt::Display for TuneMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuneMetric::MAuc => "mauc",
            TuneMetric::Bacc => "bacc",
        })
    }
}

impl FromStr for TuneMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mauc" => Ok(TuneMetric::MAuc),
            "bacc" => Ok(TuneMetric::Bacc),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub metric: TuneMetric,
    pub best_k: usize,
    pub table: Vec<TuneRow>,
}

/// Scores each candidate `k` on the labeled `validation` records and keeps
/// the best, preferring the smaller `k` on ties.
pub fn tune_k(
    index: &VectorIndex,
    validation: &Corpus,
    candidate_ks: &[usize],
    metric: TuneMetric,
) -> Result<TuneResult> {
    if validation.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    if candidate_ks.is_empty() {
        return Err(Error::invalid("no candidate k"));
    }
    if candidate_ks.contains(&0) {
        return Err(Error::invalid("k must be at least 1"));
    }
    let truths: Vec<&str> = validation
        .records()
        .iter()
        .map(|r| {
            r.label
                .as_deref()
                .ok_or_else(|| Error::MissingLabel(r.id.clone()))
        })
        .collect::<Result<_>>()?;
    let classes = index.labels();
    for missing in truths.iter().collect::<BTreeSet<_>>() {
        if classes.binary_search_by(|c| c.as_str().cmp(missing)).is_err() {
            log::warn!("validation class {missing:?} is absent from the database; it is never predicted");
        }
    }
    let max_k = *candidate_ks.iter().max().expect("non-empty");
    let queries: Vec<Vec<f64>> = validation.records().iter().map(|r| r.vector.clone()).collect();
    let hit_lists = index.batch_search(&queries, max_k)?;

    let mut table = Vec::with_capacity(candidate_ks.len());
    for &k in candidate_ks {
        let scores: Vec<ClassScores> = hit_lists
            .iter()
            .map(|hits| classify_knn_with(hits, k, Vote::Sum, Some(&classes)))
            .collect::<Result<_>>()?;
        let value = match metric {
            TuneMetric::MAuc => {
                let probabilities: Vec<Vec<f64>> =
                    scores.iter().map(|s| s.probabilities.clone()).collect();
                metrics::mauc(&classes, &probabilities, &truths)?.mauc
            }
            TuneMetric::Bacc => {
                let predicted: Vec<&str> = scores.iter().map(|s| s.argmax()).collect();
                metrics::balanced_accuracy(&predicted, &truths)?
            }
        };
        table.push(TuneRow { k, value });
    }
    let mut best = &table[0];
    for row in &table[1..] {
        if row.value > best.value || (row.value == best.value && row.k < best.k) {
            best = row;
        }
    }
    Ok(TuneResult {
        metric,
        best_k: best.k,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(label: &str, score: f64) -> NeighborHit {
        NeighborHit {
            id: format!("{label}-{score}"),
            score,
            label: Some(label.into()),
            target_months: None,
        }
    }

    fn month_hit(months: u64, score: f64) -> NeighborHit {
        NeighborHit {
            id: format!("{months}-{score}"),
            score,
            label: None,
            target_months: Some(months),
        }
    }

    #[test]
    fn documented_operating_points() {
        assert_eq!(DEFAULT_CLASSIFY_K, 20);
        assert_eq!(DEFAULT_REGRESS_K, 100);
    }

    #[test]
    fn summed_votes_and_softmax() {
        let hits = [hit("A", 0.9), hit("B", 0.8), hit("A", 0.5)];
        let s = classify_knn(&hits, 3).unwrap();
        assert_eq!(s.classes, ["A", "B"]);
        assert!((s.raw[0] - 1.4).abs() < 1e-15);
        assert_eq!(s.raw[1], 0.8);
        assert_eq!(s.argmax(), "A");
        // e^1.4 / (e^1.4 + e^0.8) evaluated independently
        let pa = 1.4f64.exp() / (1.4f64.exp() + 0.8f64.exp());
        assert!((s.probabilities[0] - pa).abs() < 1e-15);
        assert!((s.probabilities[0] - 0.6457).abs() < 5e-5);
        assert!((s.probabilities[1] - 0.3543).abs() < 5e-5);
    }

    #[test]
    fn single_hit_is_certain() {
        let s = classify_knn(&[hit("X", 0.3)], 20).unwrap();
        assert_eq!(s.classes, ["X"]);
        assert_eq!(s.probabilities, [1.0]);
    }

    #[test]
    fn k_truncates_and_labels_are_required() {
        let hits = [hit("A", 0.9), hit("B", 0.8)];
        assert_eq!(classify_knn(&hits, 1).unwrap().classes, ["A"]);
        let mut unlabeled = hits.to_vec();
        unlabeled[1].label = None;
        assert!(matches!(classify_knn(&unlabeled, 2), Err(Error::MissingLabel(_))));
        // an unlabeled hit beyond k is never looked at
        assert!(classify_knn(&unlabeled, 1).is_ok());
        assert!(matches!(classify_knn(&[], 5), Err(Error::NoLabeledHits)));
        assert!(classify_knn(&hits, 0).is_err());
    }

    #[test]
    fn universe_classes_keep_nonzero_probability() {
        let universe = ["A".to_string(), "B".to_string(), "C".to_string()];
        let s = classify_knn_with(&[hit("B", 2.0)], 20, Vote::Sum, Some(&universe)).unwrap();
        assert_eq!(s.classes, universe);
        assert_eq!(s.raw, [0.0, 2.0, 0.0]);
        assert!(s.probabilities.iter().all(|p| *p > 0.0));
        let outside = classify_knn_with(&[hit("Z", 1.0)], 20, Vote::Sum, Some(&universe));
        assert!(outside.is_err());
    }

    #[test]
    fn mean_vote_option() {
        let hits = [hit("A", 0.9), hit("B", 0.8), hit("A", 0.5)];
        let s = classify_knn_with(&hits, 3, Vote::Mean, None).unwrap();
        assert!((s.raw[0] - 0.7).abs() < 1e-15);
        assert_eq!(s.argmax(), "B");
    }

    #[test]
    fn weighted_mode_regression() {
        let hits = [month_hit(120, 0.9), month_hit(132, 0.8), month_hit(120, 0.5)];
        assert_eq!(regress_knn(&hits, 100).unwrap(), 120);
        assert_eq!(regress_knn(&[month_hit(72, 0.5), month_hit(60, 0.5)], 100).unwrap(), 60);
        assert!(matches!(regress_knn(&[], 100), Err(Error::EmptyHits)));
        let missing = [hit("A", 1.0)];
        assert!(matches!(regress_knn(&missing, 100), Err(Error::MissingTarget(_))));
    }

    #[test]
    fn regression_matches_exhaustive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let hits: Vec<NeighborHit> = (0..100)
                .map(|_| month_hit(rng.random_range(100..112), rng.random_range(0.0..1.0)))
                .collect();
            // oracle: for every candidate value, rescan the whole list
            let mut best = (u64::MAX, f64::NEG_INFINITY);
            for candidate in 100..112u64 {
                let w: f64 = hits
                    .iter()
                    .filter(|h| h.target_months == Some(candidate))
                    .map(|h| h.score)
                    .sum();
                if hits.iter().any(|h| h.target_months == Some(candidate)) && w > best.1 {
                    best = (candidate, w);
                }
            }
            assert_eq!(regress_knn(&hits, 100).unwrap(), best.0);
        }
    }

    fn two_anchor_head(temperature: f64) -> ClassifierHead {
        ClassifierHead::new(
            vec!["A".into(), "B".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            temperature,
        )
        .unwrap()
    }

    #[test]
    fn zeroshot_two_anchors() {
        let s = zeroshot_classify(&[1.0, 0.0], &two_anchor_head(1.0)).unwrap();
        assert_eq!(s.raw, [1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((s.probabilities[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s.probabilities[0] - 0.7311).abs() < 5e-5);
    }

    #[test]
    fn zeroshot_symmetry_and_temperature_limit() {
        let s = zeroshot_classify(&[1.0, 1.0], &two_anchor_head(1.0)).unwrap();
        assert_eq!(s.probabilities, [0.5, 0.5]);

        let mut last = 1.0;
        for t in [1.0, 10.0, 1e3, 1e6] {
            let p = zeroshot_classify(&[1.0, 0.0], &two_anchor_head(t)).unwrap().probabilities[0];
            assert!(p <= last);
            last = p;
        }
        assert!((last - 0.5).abs() < 1e-4);
        assert!(zeroshot_classify(&[1.0], &two_anchor_head(1.0)).is_err());
    }

    #[test]
    fn head_validation() {
        assert!(ClassifierHead::new(vec!["A".into()], vec![vec![1.0]], 0.0).is_err());
        assert!(ClassifierHead::new(vec!["A".into(), "A".into()], vec![vec![1.0], vec![2.0]], 1.0).is_err());
        assert!(ClassifierHead::new(vec!["A".into(), "B".into()], vec![vec![1.0], vec![2.0, 1.0]], 1.0).is_err());
    }

    #[test]
    fn head_file_round_trip() {
        let head = two_anchor_head(0.07);
        let text = head.to_file_string();
        assert_eq!(ClassifierHead::parse(&text).unwrap(), head);
        let bare = "{\"id\":\"a\",\"vector\":[1,0],\"label\":\"A\"}\n{\"id\":\"b\",\"vector\":[0,1],\"label\":\"B\"}\n";
        let parsed = ClassifierHead::parse(bare).unwrap();
        assert_eq!(parsed.temperature(), 1.0);
        assert_eq!(parsed.classes(), ["A", "B"]);
        let bad = "{\"temperature\":1.0}\n{\"id\":\"a\",\"vector\":[1,0]}\n";
        assert!(matches!(ClassifierHead::parse(bad), Err(Error::MissingLabel(_))));
    }

    fn labeled(id: &str, v: &[f64], label: &str) -> EmbeddingRecord {
        EmbeddingRecord::new(id, v.to_vec()).with_label(label)
    }

    #[test]
    fn tune_single_candidate_and_ties() {
        let db = VectorIndex::from_records(
            2,
            &[labeled("a", &[1.0, 0.0], "A"), labeled("b", &[0.0, 1.0], "B")],
        )
        .unwrap();
        let val = Corpus::new(
            "v",
            2,
            vec![labeled("q1", &[1.0, 0.1], "A"), labeled("q2", &[0.1, 1.0], "B")],
        )
        .unwrap();
        let r = tune_k(&db, &val, &[1], TuneMetric::MAuc).unwrap();
        assert_eq!(r.best_k, 1);
        // with two database entries every k >= 2 sees the same neighbors
        let r = tune_k(&db, &val, &[5, 2], TuneMetric::Bacc).unwrap();
        assert_eq!(r.table[0].value, r.table[1].value);
        assert_eq!(r.best_k, 2);
        assert!(tune_k(&db, &val, &[], TuneMetric::MAuc).is_err());
        let empty = Corpus::new("e", 2, vec![]).unwrap();
        assert!(tune_k(&db, &empty, &[1], TuneMetric::MAuc).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn hits() -> impl Strategy<Value = Vec<NeighborHit>> {
            proptest::collection::vec((0u8..4, -5.0f64..5.0), 1..40).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (c, s))| NeighborHit {
                        id: format!("h{i}"),
                        score: s,
                        label: Some(format!("c{c}")),
                        target_months: Some(u64::from(c) * 12),
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn argmax_survives_positive_scaling(hits in hits(), k in 1usize..40, exp in -4i32..5) {
                let c = 2f64.powi(exp);
                let base = classify_knn(&hits, k).unwrap();
                let scaled_hits: Vec<_> = hits.iter().cloned()
                    .map(|mut h| { h.score *= c; h }).collect();
                let scaled = classify_knn(&scaled_hits, k).unwrap();
                prop_assert_eq!(base.argmax(), scaled.argmax());
            }

            #[test]
            fn probabilities_are_a_distribution(hits in hits(), k in 1usize..40) {
                let s = classify_knn(&hits, k).unwrap();
                let total: f64 = s.probabilities.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(s.probabilities.iter().all(|p| *p > 0.0));
                prop_assert_eq!(s.classes.len(), s.raw.len());
            }

            #[test]
            fn regression_returns_an_observed_value(hits in hits(), k in 1usize..40) {
                let m = regress_knn(&hits, k).unwrap();
                prop_assert!(hits[..k.min(hits.len())].iter().any(|h| h.target_months == Some(m)));
            }

            #[test]
            fn zeroshot_argmax_ignores_temperature(
                q in proptest::collection::vec(-1.0f64..1.0, 3),
                anchors in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..6),
                t in 0.01f64..100.0,
            ) {
                let classes: Vec<String> = (0..anchors.len()).map(|i| format!("c{i}")).collect();
                let head = ClassifierHead::new(classes, anchors, 1.0).unwrap();
                let a = zeroshot_classify(&q, &head).unwrap();
                let raw_best = a.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let b = zeroshot_classify(&q, &head.with_temperature(t).unwrap()).unwrap();
                // compare on raw logits: near-ties may round differently through exp
                let idx = b.classes.iter().position(|c| c == b.argmax()).unwrap();
                prop_assert!((a.raw[idx] - raw_best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_query_with_k1_is_certain() {
        let db = VectorIndex::from_records(
            2,
            &[labeled("a", &[3.0, 0.0], "A"), labeled("b", &[0.0, 1.0], "B")],
        )
        .unwrap();
        let hits = db.search(&[3.0, 0.0], 1).unwrap();
        let s = classify_knn(&hits, 1).unwrap();
        assert_eq!(s.argmax(), "A");
        assert_eq!(s.probabilities, [1.0]);
    }
}
