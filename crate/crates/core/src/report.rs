//! Text renderings of evaluation results.
//!
//! Reals in TSV output carry 17 significant digits (`{:.16e}`), which is
//! enough to round-trip any `f64` exactly. Missing values print as `NA`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::EvaluationRun;
use crate::knn::TuneResult;
use crate::metrics::{FairnessReport, RocCurve};
use crate::volume::RetrievalReport;

pub const EVALUATION_HEADER: &str = "row\tname\tauc\tmauc\tacc\tbacc\tl1_months\tsupport";

pub fn real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), real)
}

/// One row per class, one summary row, and an `l1` row when the run
/// regressed months.
pub fn evaluation_tsv(run: &EvaluationRun) -> String {
    let mut out = format!("{EVALUATION_HEADER}\n");
    for c in &run.per_class {
        let _ = writeln!(out, "class\t{}\t{}\t\t\t\t\t{}", c.class, opt(c.auc), c.positives);
    }
    let _ = writeln!(
        out,
        "summary\t{}\t\t{}\t{}\t{}\t\t{}",
        run.name,
        opt(run.mauc),
        real(run.accuracy),
        real(run.balanced_accuracy),
        run.support
    );
    if let Some(l1) = run.l1_months {
        let _ = writeln!(out, "l1\t{}\t\t\t\t\t{}\t{}", run.name, real(l1), run.support);
    }
    out
}

#[derive(Serialize)]
struct EvaluationDocument<'a> {
    #[serde(flatten)]
    run: &'a EvaluationRun,
    notes: Vec<String>,
}

pub fn evaluation_notes(run: &EvaluationRun) -> Vec<String> {
    let mut notes = Vec::new();
    if run.l1_months.is_none() {
        notes.push("no regression targets on every query; l1_months omitted".to_string());
    }
    for c in run.per_class.iter().filter(|c| c.auc.is_none()) {
        notes.push(format!(
            "class {} unscorable ({} positives, {} negatives); excluded from mauc",
            c.class, c.positives, c.negatives
        ));
    }
    if run.mauc.is_none() {
        notes.push("no scorable class; mauc undefined".to_string());
    }
    notes
}

/// The full run, including curves and per-record predictions, plus notes.
pub fn evaluation_json(run: &EvaluationRun) -> String {
    let doc = EvaluationDocument {
        run,
        notes: evaluation_notes(run),
    };
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

pub fn roc_tsv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold\tfpr\ttpr\ttrue_positives\tfalse_positives\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            real(p.threshold),
            real(p.fpr),
            real(p.tpr),
            p.true_positives,
            p.false_positives
        );
    }
    out
}

/// Group rows with one AUC column per class, then an `excluded` row.
pub fn fairness_tsv(report: &FairnessReport) -> String {
    let mut out = String::from("group");
    for class in &report.classes {
        let _ = write!(out, "\t{class}");
    }
    out.push_str("\tmauc\tsupport\n");
    for row in &report.rows {
        out.push_str(&row.group);
        for c in &row.per_class {
            let _ = write!(out, "\t{}", opt(c.auc));
        }
        let _ = writeln!(out, "\t{}\t{}", opt(row.mauc), row.support);
    }
    out.push_str("excluded");
    for _ in &report.classes {
        out.push('\t');
    }
    let _ = writeln!(out, "\t\t{}", report.excluded_count);
    out
}

pub fn retrieval_tsv(report: &RetrievalReport) -> String {
    let mut out = String::from("relevance");
    for k in &report.cutoffs {
        let _ = write!(out, "\tP@{k}");
    }
    out.push_str("\tavg_prec\tqueries\n");
    for row in &report.rows {
        out.push_str(&row.relevance.to_string());
        for p in &row.precision_at {
            let _ = write!(out, "\t{}", real(p.precision));
        }
        let _ = writeln!(out, "\t{}\t{}", real(row.average_precision), row.queries);
    }
    out
}

pub fn tune_tsv(result: &TuneResult) -> String {
    let mut out = format!("k\t{}\tbest\n", result.metric);
    for row in &result.table {
        let best = if row.k == result.best_k { "*" } else { "" };
        let _ = writeln!(out, "{}\t{}\t{best}", row.k, real(row.value));
    }
    out
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn write(path: PathBuf, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `<name>.tsv`, `<name>.json` and `<name>.roc.<class>.tsv` for every
/// scorable class into `dir`, returning the paths in that order.
pub fn write_evaluation(dir: &Path, run: &EvaluationRun) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = file_safe(&run.name);
    let mut written = Vec::new();
    write(dir.join(format!("{stem}.tsv")), &evaluation_tsv(run), &mut written)?;
    write(dir.join(format!("{stem}.json")), &evaluation_json(run), &mut written)?;
    for r in &run.roc {
        let path = dir.join(format!("{stem}.roc.{}.tsv", file_safe(&r.class)));
        write(path, &roc_tsv(&r.curve), &mut written)?;
    }
    Ok(written)
}
