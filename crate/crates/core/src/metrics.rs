//! ROC curves, AUC, mAUC, accuracy, balanced accuracy, month error and
//! demographic stratification.
//!
//! Two independent AUC routes exist on purpose: [`RocCurve::auc`] is the
//! trapezoidal area under the swept curve, [`auc`] counts concordant
//! positive/negative pairs (ties count one half).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ATTR_AGE_YEARS, ATTR_GENDER};
use crate::error::{Error, Result};

/// One operating point: predict positive when `score >= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `+inf` for the sentinel point above every score; serialized as `null`.
    #[serde(with = "threshold_repr")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub true_positives: u64,
    pub false_positives: u64,
}

mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            s.serialize_f64(*value)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: u64,
    pub negatives: u64,
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.len() < 2 {
        return Err(Error::invalid("need at least two scored samples"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let positives = labels.iter().filter(|l| **l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((positives, negatives))
}

/// Sweeps thresholds from the highest distinct score down. Equal scores
/// form one step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (positives, negatives) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite"));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
        true_positives: 0,
        false_positives: 0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            true_positives: tp,
            false_positives: fp,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve {
        points,
        auc,
        positives,
        negatives,
    })
}

/// Mann-Whitney AUC: the share of (positive, negative) pairs where the
/// positive scores higher, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (positives, negatives) = check_binary(scores, labels)?;
    let mut neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !**l)
        .map(|(s, _)| *s)
        .collect();
    neg.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // twice the U statistic, kept integral
    let mut doubled: u64 = 0;
    for (s, _) in scores.iter().zip(labels).filter(|(_, l)| **l) {
        let below = neg.partition_point(|n| n < s) as u64;
        let not_above = neg.partition_point(|n| n <= s) as u64;
        doubled += 2 * below + (not_above - below);
    }
    Ok(doubled as f64 / (2 * positives * negatives) as f64)
}

/// One-vs-rest AUC for a single class. `auc` is `None` when the class has no
/// positive or no negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub class: String,
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaucResult {
    pub mauc: f64,
    pub per_class: Vec<ClassAuc>,
}

fn check_probability_table<S: AsRef<str>>(
    classes: &[String],
    probabilities: &[Vec<f64>],
    truths: &[S],
) -> Result<()> {
    if probabilities.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} probability rows but {} labels",
            probabilities.len(),
            truths.len()
        )));
    }
    if let Some((i, row)) = probabilities
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != classes.len())
    {
        return Err(Error::DimensionMismatch {
            expected: classes.len(),
            actual: row.len(),
            context: Some(format!("probability row {i}")),
        });
    }
    Ok(())
}

/// Per-class one-vs-rest AUCs and their unweighted mean over scorable
/// classes (`None` when no class is scorable).
pub fn per_class_auc<S: AsRef<str>>(
    classes: &[String],
    probabilities: &[Vec<f64>],
    truths: &[S],
) -> Result<(Vec<ClassAuc>, Option<f64>)> {
    check_probability_table(classes, probabilities, truths)?;
    let mut per_class = Vec::with_capacity(classes.len());
    let mut scored = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        let labels: Vec<bool> = truths.iter().map(|t| t.as_ref() == class).collect();
        let positives = labels.iter().filter(|l| **l).count();
        let negatives = labels.len() - positives;
        let value = if positives > 0 && negatives > 0 {
            let scores: Vec<f64> = probabilities.iter().map(|row| row[c]).collect();
            let v = auc(&scores, &labels)?;
            scored.push(v);
            Some(v)
        } else {
            None
        };
        per_class.push(ClassAuc {
            class: class.clone(),
            auc: value,
            positives,
            negatives,
        });
    }
    let mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    Ok((per_class, mean))
}

/// Macro one-vs-rest AUC. `probabilities[i][c]` is record `i`'s probability
/// for `classes[c]`.
pub fn mauc<S: AsRef<str>>(
    classes: &[String],
    probabilities: &[Vec<f64>],
    truths: &[S],
) -> Result<MaucResult> {
    let (per_class, mean) = per_class_auc(classes, probabilities, truths)?;
    Ok(MaucResult {
        mauc: mean.ok_or(Error::NoScorableClass)?,
        per_class,
    })
}

/// Share of exact matches.
pub fn accuracy<T: PartialEq>(predictions: &[T], truths: &[T]) -> Result<f64> {
    check_pairs(predictions.len(), truths.len())?;
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Unweighted mean of per-class recall over classes present in `truths`.
pub fn balanced_accuracy<T: Ord>(predictions: &[T], truths: &[T]) -> Result<f64> {
    check_pairs(predictions.len(), truths.len())?;
    let mut per_class: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truths) {
        let slot = per_class.entry(t).or_insert((0, 0));
        slot.1 += 1;
        if p == t {
            slot.0 += 1;
        }
    }
    let recall_sum: f64 = per_class
        .values()
        .map(|&(correct, total)| correct as f64 / total as f64)
        .sum();
    Ok(recall_sum / per_class.len() as f64)
}

/// Mean absolute error in months.
pub fn mean_abs_months(predicted: &[u64], truths: &[u64]) -> Result<f64> {
    check_pairs(predicted.len(), truths.len())?;
    let total: u128 = predicted
        .iter()
        .zip(truths)
        .map(|(p, t)| u128::from(p.abs_diff(*t)))
        .sum();
    Ok(total as f64 / truths.len() as f64)
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{a} predictions but {b} labels")));
    }
    if a == 0 {
        return Err(Error::invalid("empty input"));
    }
    Ok(())
}

/// Demographic axis for stratified AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Gender,
    AgeBucket,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Gender => "gender",
            Grouping::AgeBucket => "age_bucket",
        })
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gender" => Ok(Grouping::Gender),
            "age" | "age_bucket" => Ok(Grouping::AgeBucket),
            other => Err(Error::invalid(format!("unknown grouping {other:?}"))),
        }
    }
}

pub const GENDER_GROUPS: [&str; 2] = ["F", "M"];
pub const AGE_BUCKETS: [&str; 5] = ["[0,20]", "(20,40]", "(40,60]", "(60,80]", "(80,100]"];
/// Records older than this are left out of age stratification.
pub const MAX_AGE_YEARS: f64 = 100.0;

/// Bucket index for an age in years; `None` outside `[0, 100]`.
pub fn age_bucket(age_years: f64) -> Option<usize> {
    if !(0.0..=MAX_AGE_YEARS).contains(&age_years) {
        return None;
    }
    [20.0, 40.0, 60.0, 80.0, 100.0]
        .iter()
        .position(|upper| age_years <= *upper)
}

/// One evaluated record as the fairness report sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub true_label: String,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub group: String,
    pub per_class: Vec<ClassAuc>,
    pub mauc: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub grouping: Grouping,
    pub classes: Vec<String>,
    pub rows: Vec<FairnessRow>,
    pub excluded_count: usize,
}

fn group_of(record: &ScoredRecord, grouping: Grouping) -> Option<usize> {
    match grouping {
        Grouping::Gender => {
            let g = record.attributes.get(ATTR_GENDER)?;
            GENDER_GROUPS.iter().position(|x| x == g)
        }
        Grouping::AgeBucket => {
            let raw = record.attributes.get(ATTR_AGE_YEARS)?;
            match raw.trim().parse::<f64>() {
                Ok(age) => age_bucket(age),
                Err(_) => {
                    log::warn!("record {:?}: unparseable age {raw:?}, excluded", record.id);
                    None
                }
            }
        }
    }
}

/// Per-group one-vs-rest AUCs. Records without a usable group value are
/// counted in `excluded_count`; every group gets a row even when empty.
pub fn fairness_report(
    classes: &[String],
    records: &[ScoredRecord],
    grouping: Grouping,
) -> Result<FairnessReport> {
    let names: &[&str] = match grouping {
        Grouping::Gender => &GENDER_GROUPS,
        Grouping::AgeBucket => &AGE_BUCKETS,
    };
    let mut members: Vec<Vec<&ScoredRecord>> = vec![Vec::new(); names.len()];
    let mut excluded_count = 0;
    for record in records {
        match group_of(record, grouping) {
            Some(g) => members[g].push(record),
            None => excluded_count += 1,
        }
    }
    let rows = names
        .iter()
        .zip(members)
        .map(|(name, group)| {
            let probabilities: Vec<Vec<f64>> =
                group.iter().map(|r| r.probabilities.clone()).collect();
            let truths: Vec<&str> = group.iter().map(|r| r.true_label.as_str()).collect();
            let (per_class, mauc) = per_class_auc(classes, &probabilities, &truths)?;
            Ok(FairnessRow {
                group: name.to_string(),
                per_class,
                mauc,
                support: group.len(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FairnessReport {
        grouping,
        classes: classes.to_vec(),
        rows,
        excluded_count,
    })
}

/// Distinct labels of `truths`, ascending.
pub fn label_set<S: AsRef<str>>(truths: &[S]) -> Vec<String> {
    truths
        .iter()
        .map(|t| t.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct pair enumeration.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (sp, lp) in scores.iter().zip(labels) {
            for (sn, ln) in scores.iter().zip(labels) {
                if *lp && !*ln {
                    pairs += 1.0;
                    if sp > sn {
                        total += 1.0;
                    } else if sp == sn {
                        total += 0.5;
                    }
                }
            }
        }
        total / pairs
    }

    #[test]
    fn perfect_inverted_and_tied() {
        let c = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(roc_curve(&[0.1, 0.9], &[true, false]).unwrap().auc, 0.0);
        assert_eq!(roc_curve(&[0.5, 0.5], &[true, false]).unwrap().auc, 0.5);
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn curve_shape() {
        let c = roc_curve(&[0.9, 0.8, 0.8, 0.3, 0.1], &[true, false, true, true, false]).unwrap();
        assert!(c.points[0].threshold.is_infinite());
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(c.points.len(), 5); // sentinel + 4 distinct scores
        assert!(c.points.windows(2).all(|w| w[0].threshold > w[1].threshold));
        assert_eq!(c.points[2].true_positives, 2);
        assert_eq!(c.points[2].false_positives, 1);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateLabels)));
        assert!(matches!(auc(&[0.1, 0.2], &[false, false]), Err(Error::DegenerateLabels)));
        assert!(auc(&[0.1], &[true]).is_err());
        assert!(auc(&[0.1, 0.2], &[true]).is_err());
        assert!(auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    #[test]
    fn sentinel_serializes_as_null() {
        let c = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.starts_with("{\"points\":[{\"threshold\":null,"), "{json}");
        let back: RocCurve = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn random_sets_agree_with_pair_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for round in 0..200 {
            let n = rng.random_range(2..30);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let scores: Vec<f64> = if round % 2 == 0 {
                (0..n).map(|_| rng.random_range(0..4) as f64 / 4.0).collect()
            } else {
                (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
            };
            let oracle = pairwise_auc(&scores, &labels);
            let mw = auc(&scores, &labels).unwrap();
            let trap = roc_curve(&scores, &labels).unwrap().auc;
            assert!((mw - oracle).abs() < 1e-12);
            assert!((trap - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn mauc_two_and_missing_classes() {
        let classes = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let probs = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.4, 0.5, 0.1],
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.7, 0.1],
        ];
        let truths = ["A", "B", "B", "A"];
        let r = mauc(&classes, &probs, &truths).unwrap();
        assert_eq!(r.per_class[2].auc, None);
        let a = r.per_class[0].auc.unwrap();
        let b = r.per_class[1].auc.unwrap();
        assert_eq!(r.mauc, (a + b) / 2.0);
        assert_eq!(a, pairwise_auc(&[0.7, 0.4, 0.6, 0.2], &[true, false, false, true]));

        let all_a = ["A"; 4];
        assert!(matches!(mauc(&classes, &probs, &all_a), Err(Error::NoScorableClass)));
        assert!(mauc(&classes, &probs[..3], &truths).is_err());
    }

    #[test]
    fn four_class_fixture_matches_per_class_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let classes: Vec<String> = (0..4).map(|c| format!("c{c}")).collect();
        let truths: Vec<String> = (0..40).map(|i| format!("c{}", i % 4)).collect();
        let probs: Vec<Vec<f64>> = (0..40)
            .map(|_| crate::knn::softmax(&(0..4).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()))
            .collect();
        let r = mauc(&classes, &probs, &truths).unwrap();
        let mut sum = 0.0;
        for (c, class) in classes.iter().enumerate() {
            let labels: Vec<bool> = truths.iter().map(|t| t == class).collect();
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            sum += pairwise_auc(&scores, &labels);
        }
        assert!((r.mauc - sum / 4.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_family() {
        assert_eq!(accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        // class a: 9/9 correct, class b: 0/1
        let truths = ["a", "a", "a", "a", "a", "a", "a", "a", "a", "b"];
        let preds = ["a"; 10];
        assert_eq!(balanced_accuracy(&preds, &truths).unwrap(), 0.5);
        assert_eq!(accuracy(&preds, &truths).unwrap(), 0.9);
        assert!(accuracy::<&str>(&[], &[]).is_err());
        assert!(balanced_accuracy(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn accuracy_matches_confusion_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let truths: Vec<u8> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let preds: Vec<u8> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let mut cm = [[0usize; 3]; 3];
        for (t, p) in truths.iter().zip(&preds) {
            cm[*t as usize][*p as usize] += 1;
        }
        let diag: usize = (0..3).map(|i| cm[i][i]).sum();
        assert!((accuracy(&preds, &truths).unwrap() - diag as f64 / 50.0).abs() < 1e-15);
        let present: Vec<usize> = (0..3).filter(|&i| cm[i].iter().sum::<usize>() > 0).collect();
        let bacc: f64 = present
            .iter()
            .map(|&i| cm[i][i] as f64 / cm[i].iter().sum::<usize>() as f64)
            .sum::<f64>()
            / present.len() as f64;
        assert!((balanced_accuracy(&preds, &truths).unwrap() - bacc).abs() < 1e-15);
    }

    #[test]
    fn month_error() {
        assert_eq!(mean_abs_months(&[5, 9], &[5, 9]).unwrap(), 0.0);
        assert_eq!(mean_abs_months(&[120, 130], &[126, 124]).unwrap(), 6.0);
        assert!(mean_abs_months(&[], &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<u64> = (0..100).map(|_| rng.random_range(0..240)).collect();
        let t: Vec<u64> = (0..100).map(|_| rng.random_range(0..240)).collect();
        let oracle: f64 = p.iter().zip(&t).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>() / 100.0;
        assert!((mean_abs_months(&p, &t).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn age_bucket_boundaries() {
        assert_eq!(age_bucket(0.0), Some(0));
        assert_eq!(age_bucket(20.0), Some(0));
        assert_eq!(age_bucket(20.5), Some(1));
        assert_eq!(age_bucket(100.0), Some(4));
        assert_eq!(age_bucket(101.0), None);
        assert_eq!(age_bucket(-1.0), None);
        assert_eq!(age_bucket(f64::NAN), None);
    }

    fn scored(id: usize, label: &str, p: [f64; 2], attrs: &[(&str, &str)]) -> ScoredRecord {
        ScoredRecord {
            id: format!("r{id}"),
            true_label: label.into(),
            probabilities: p.to_vec(),
            attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn fairness_exclusions_and_supports() {
        let classes = vec!["A".to_string(), "B".to_string()];
        let records = vec![
            scored(0, "A", [0.8, 0.2], &[("gender", "F"), ("age_years", "20")]),
            scored(1, "B", [0.3, 0.7], &[("gender", "F"), ("age_years", "20.5")]),
            scored(2, "A", [0.6, 0.4], &[("gender", "M"), ("age_years", "101")]),
            scored(3, "B", [0.5, 0.5], &[("gender", "X"), ("age_years", "old")]),
            scored(4, "B", [0.1, 0.9], &[]),
        ];
        let by_age = fairness_report(&classes, &records, Grouping::AgeBucket).unwrap();
        assert_eq!(by_age.rows.len(), 5);
        assert_eq!(by_age.rows[0].support, 1);
        assert_eq!(by_age.rows[1].support, 1);
        assert_eq!(by_age.excluded_count, 3);
        assert!(by_age.rows.iter().all(|r| r.mauc.is_none()));
        let total: usize = by_age.rows.iter().map(|r| r.support).sum();
        assert_eq!(total + by_age.excluded_count, records.len());

        let by_gender = fairness_report(&classes, &records, Grouping::Gender).unwrap();
        assert_eq!(by_gender.rows[0].group, "F");
        assert_eq!(by_gender.rows[0].support, 2);
        assert_eq!(by_gender.rows[0].mauc, Some(1.0));
        assert_eq!(by_gender.excluded_count, 2);
        assert!("ethnicity".parse::<Grouping>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            (2usize..60).prop_flat_map(|n| {
                (
                    proptest::collection::vec(prop_oneof![(0u8..5).prop_map(|v| v as f64), -10.0f64..10.0], n),
                    proptest::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both classes", |(_, l)| l.iter().any(|x| *x) && l.iter().any(|x| !*x))
        }

        proptest! {
            #[test]
            fn trapezoid_equals_mann_whitney((s, l) in scored_set()) {
                let curve = roc_curve(&s, &l).unwrap();
                prop_assert!((curve.auc - auc(&s, &l).unwrap()).abs() < 1e-12);
                prop_assert!(curve.points.windows(2).all(|w|
                    w[0].threshold > w[1].threshold && w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
            }

            #[test]
            fn complement_labels((s, l) in scored_set()) {
                let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
                prop_assert!((auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn monotone_transform_invariance((s, l) in scored_set()) {
                let t: Vec<f64> = s.iter().map(|v| (v / 4.0).exp() * 3.0 + 1.0).collect();
                prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
            }

            #[test]
            fn bacc_ignores_class_duplication(
                pairs in proptest::collection::vec((0u8..3, 0u8..3), 1..40), dup in 0u8..3
            ) {
                let (p, t): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
                let mut p2 = p.clone();
                let mut t2 = t.clone();
                for (a, b) in pairs.iter().filter(|(_, b)| *b == dup) {
                    p2.push(*a);
                    t2.push(*b);
                }
                let x = balanced_accuracy(&p, &t).unwrap();
                let y = balanced_accuracy(&p2, &t2).unwrap();
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
