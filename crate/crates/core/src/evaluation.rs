//! Named KNN evaluation runs over a labeled query set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::knn::{self, ClassifierHead, Vote, DEFAULT_CLASSIFY_K, DEFAULT_REGRESS_K};
use crate::metrics::{self, ClassAuc, MaucResult, RocCurve, ScoredRecord};
use crate::vector_index::VectorIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub k: usize,
    pub regress_k: usize,
    #[serde(default)]
    pub vote: Vote,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            k: DEFAULT_CLASSIFY_K,
            regress_k: DEFAULT_REGRESS_K,
            vote: Vote::Sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRoc {
    pub class: String,
    pub curve: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub true_label: String,
    pub predicted: String,
    pub probabilities: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_months: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_months: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub name: String,
    pub k: usize,
    /// Neighbors used for month regression; absent when the queries carry no
    /// targets.
    pub regress_k: Option<usize>,
    pub classes: Vec<String>,
    pub per_class: Vec<ClassAuc>,
    pub mauc: Option<f64>,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub l1_months: Option<f64>,
    pub support: usize,
    pub roc: Vec<ClassRoc>,
    pub predictions: Vec<Prediction>,
}

/// Headline numbers of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub k: usize,
    pub classes: Vec<String>,
    pub mauc: Option<f64>,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub l1_months: Option<f64>,
    pub support: usize,
}

impl EvaluationRun {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            name: self.name.clone(),
            k: self.k,
            classes: self.classes.clone(),
            mauc: self.mauc,
            accuracy: self.accuracy,
            balanced_accuracy: self.balanced_accuracy,
            l1_months: self.l1_months,
            support: self.support,
        }
    }

    pub fn roc(&self, class: &str) -> Option<&RocCurve> {
        self.roc.iter().find(|r| r.class == class).map(|r| &r.curve)
    }

    /// Predictions in the shape [`metrics::fairness_report`] consumes.
    pub fn scored_records(&self) -> Vec<ScoredRecord> {
        self.predictions
            .iter()
            .map(|p| ScoredRecord {
                id: p.id.clone(),
                true_label: p.true_label.clone(),
                probabilities: p.probabilities.clone(),
                attributes: p.attributes.clone(),
            })
            .collect()
    }
}

/// Classifies every query against `index` and scores the predictions.
///
/// Probabilities range over the labels present in the index. Month
/// regression runs only when every query carries `target_months`.
pub fn evaluate(
    name: &str,
    index: &VectorIndex,
    queries: &Corpus,
    config: EvaluationConfig,
) -> Result<EvaluationRun> {
    if queries.is_empty() {
        return Err(Error::invalid("no query records to evaluate"));
    }
    if config.k == 0 || config.regress_k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if queries.dimension() != index.dimension() {
        return Err(Error::dimension(index.dimension(), queries.dimension()));
    }
    let truths: Vec<&str> = queries
        .records()
        .iter()
        .map(|r| r.label.as_deref().ok_or_else(|| Error::MissingLabel(r.id.clone())))
        .collect::<Result<_>>()?;
    let classes = index.labels();
    if classes.is_empty() {
        return Err(Error::NoLabeledHits);
    }
    for label in truths.iter().collect::<BTreeSet<_>>() {
        if classes.binary_search_by(|c| c.as_str().cmp(label)).is_err() {
            log::warn!("query label {label:?} does not occur in the index");
        }
    }
    let regress = queries.records().iter().all(|r| r.target_months.is_some());
    let depth = if regress {
        config.k.max(config.regress_k)
    } else {
        config.k
    };
    let vectors: Vec<Vec<f64>> = queries.records().iter().map(|r| r.vector.clone()).collect();
    let hit_lists = index.batch_search(&vectors, depth)?;

    let mut predictions = Vec::with_capacity(queries.len());
    for ((record, hits), truth) in queries.records().iter().zip(&hit_lists).zip(&truths) {
        let scores = knn::classify_knn_with(hits, config.k, config.vote, Some(&classes))?;
        let predicted_months = if regress {
            Some(knn::regress_knn(hits, config.regress_k)?)
        } else {
            None
        };
        predictions.push(Prediction {
            id: record.id.clone(),
            true_label: truth.to_string(),
            predicted: scores.argmax().to_string(),
            probabilities: scores.probabilities,
            true_months: record.target_months,
            predicted_months,
            attributes: record.attributes.clone(),
        });
    }

    let probabilities: Vec<Vec<f64>> = predictions.iter().map(|p| p.probabilities.clone()).collect();
    let (per_class, mauc) = metrics::per_class_auc(&classes, &probabilities, &truths)?;
    let predicted: Vec<&str> = predictions.iter().map(|p| p.predicted.as_str()).collect();
    let accuracy = metrics::accuracy(&predicted, &truths)?;
    let balanced_accuracy = metrics::balanced_accuracy(&predicted, &truths)?;
    let l1_months = if regress {
        let p: Vec<u64> = predictions.iter().map(|p| p.predicted_months.expect("regressed")).collect();
        let t: Vec<u64> = predictions.iter().map(|p| p.true_months.expect("checked")).collect();
        Some(metrics::mean_abs_months(&p, &t)?)
    } else {
        None
    };

    let mut roc = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        if per_class[c].auc.is_none() {
            continue;
        }
        let scores: Vec<f64> = probabilities.iter().map(|row| row[c]).collect();
        let labels: Vec<bool> = truths.iter().map(|t| *t == class).collect();
        roc.push(ClassRoc {
            class: class.clone(),
            curve: metrics::roc_curve(&scores, &labels)?,
        });
    }

    Ok(EvaluationRun {
        name: name.to_string(),
        k: config.k,
        regress_k: regress.then_some(config.regress_k),
        classes,
        per_class,
        mauc,
        accuracy,
        balanced_accuracy,
        l1_months,
        support: predictions.len(),
        roc,
        predictions,
    })
}

/// Zero-shot classifies every labeled query with `head` and scores the
/// probabilities over the head's classes.
pub fn zeroshot_mauc(head: &ClassifierHead, queries: &Corpus) -> Result<MaucResult> {
    if queries.is_empty() {
        return Err(Error::invalid("no query records to evaluate"));
    }
    let mut probabilities = Vec::with_capacity(queries.len());
    let mut truths = Vec::with_capacity(queries.len());
    for r in queries.records() {
        let label = r.label.as_deref().ok_or_else(|| Error::MissingLabel(r.id.clone()))?;
        probabilities.push(knn::zeroshot_classify(&r.vector, head)?.probabilities);
        truths.push(label);
    }
    metrics::mauc(head.classes(), &probabilities, &truths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingRecord;
    use crate::vector_index::build_index;

    fn fixture() -> (VectorIndex, Corpus) {
        let db = Corpus::new(
            "db",
            2,
            vec![
                EmbeddingRecord::new("a1", vec![1.0, 0.0]).with_label("A").with_target_months(10),
                EmbeddingRecord::new("a2", vec![0.9, 0.1]).with_label("A").with_target_months(12),
                EmbeddingRecord::new("b1", vec![0.0, 1.0]).with_label("B").with_target_months(40),
                EmbeddingRecord::new("b2", vec![0.1, 0.9]).with_label("B").with_target_months(40),
            ],
        )
        .unwrap();
        let queries = Corpus::new(
            "q",
            2,
            vec![
                EmbeddingRecord::new("q1", vec![1.0, 0.1]).with_label("A").with_target_months(11),
                EmbeddingRecord::new("q2", vec![0.1, 1.0]).with_label("B").with_target_months(38),
                EmbeddingRecord::new("q3", vec![0.6, 0.5]).with_label("B").with_target_months(30),
            ],
        )
        .unwrap();
        (build_index(&db).unwrap(), queries)
    }

    #[test]
    fn run_matches_stepwise_library_calls() {
        let (index, queries) = fixture();
        let config = EvaluationConfig { k: 2, regress_k: 2, vote: Vote::Sum };
        let run = evaluate("r", &index, &queries, config).unwrap();
        let universe = index.labels();
        assert_eq!(run.classes, ["A", "B"]);
        for (p, r) in run.predictions.iter().zip(queries.records()) {
            let hits = index.search(&r.vector, 2).unwrap();
            let s = knn::classify_knn_with(&hits, 2, Vote::Sum, Some(&universe)).unwrap();
            assert_eq!(p.probabilities, s.probabilities);
            assert_eq!(p.predicted_months, Some(knn::regress_knn(&hits, 2).unwrap()));
        }
        let probs: Vec<Vec<f64>> = run.predictions.iter().map(|p| p.probabilities.clone()).collect();
        let truths = ["A", "B", "B"];
        let m = metrics::mauc(&run.classes, &probs, &truths).unwrap();
        assert_eq!(run.mauc, Some(m.mauc));
        assert_eq!(run.roc.len(), 2);
        assert_eq!(run.roc("A").unwrap().auc, m.per_class[0].auc.unwrap());
        assert_eq!(run.regress_k, Some(2));
        // q3 leans towards A: 0.6+0.05 and 0.59 vs 0.5 and 0.51
        assert_eq!(run.predictions[2].predicted, "A");
        assert_eq!(run.accuracy, 2.0 / 3.0);
        assert_eq!(run.balanced_accuracy, 0.75);
    }

    #[test]
    fn regression_needs_every_target() {
        let (index, queries) = fixture();
        let mut records = queries.into_records();
        records[0].target_months = None;
        let queries = Corpus::new("q", 2, records).unwrap();
        let run = evaluate("r", &index, &queries, EvaluationConfig::default()).unwrap();
        assert_eq!(run.l1_months, None);
        assert_eq!(run.regress_k, None);
    }

    #[test]
    fn unlabeled_query_is_an_error() {
        let (index, _) = fixture();
        let queries = Corpus::new("q", 2, vec![EmbeddingRecord::new("x", vec![1.0, 1.0])]).unwrap();
        assert!(matches!(
            evaluate("r", &index, &queries, EvaluationConfig::default()),
            Err(Error::MissingLabel(_))
        ));
    }

    #[test]
    fn zeroshot_mauc_matches_manual_scoring() {
        let head = ClassifierHead::new(
            vec!["A".into(), "B".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            1.0,
        )
        .unwrap();
        let (_, queries) = fixture();
        let m = zeroshot_mauc(&head, &queries).unwrap();
        let probs: Vec<Vec<f64>> = queries
            .records()
            .iter()
            .map(|r| knn::zeroshot_classify(&r.vector, &head).unwrap().probabilities)
            .collect();
        let again = metrics::mauc(head.classes(), &probs, &["A", "B", "B"]).unwrap();
        assert_eq!(m, again);
        // q1 and q2 are well separated; q3 leans to A but is B
        assert_eq!(m.mauc, 1.0);
    }
}
