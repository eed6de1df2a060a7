//! The `evsearch` command line. [`run`] parses arguments, dispatches to the
//! library and maps failures onto exit codes: 0 success, 1 data error, 2
//! usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use evsearch_core::corpus::{self, Split};
use evsearch_core::evaluation::{self, EvaluationConfig};
use evsearch_core::knn::{self, ClassScores};
use evsearch_core::metrics;
use evsearch_core::report::{self, real};
use evsearch_core::synthetic::ClusterSpec;
use evsearch_core::unicl::{self, train, Matrix, UniclBatch};
use evsearch_core::vector_index::build_index;
use evsearch_core::volume::{self, VolumeEmbedding};
use evsearch_core::{ClassifierHead, Corpus, EmbeddingRecord, Error, NeighborHit, Result};
use evsearch_service::ServiceConfig;

pub mod args;

use args::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A command result in both output formats.
struct Output {
    tsv: String,
    json: Value,
}

impl Output {
    fn new(tsv: String, json: impl Serialize) -> Result<Self> {
        let json = serde_json::to_value(json).map_err(|e| Error::invalid(format!("serializing output: {e}")))?;
        Ok(Output { tsv, json })
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Tsv => self.tsv.clone(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json).expect("values serialize");
                s.push('\n');
                s
            }
        }
    }
}

/// Runs one invocation, writing results to `out` and diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(rendered.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(rendered.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(Some(output)) => {
            let text = output.render(cli.format);
            let written = match &cli.output {
                Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
                None => out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
            };
            match written {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    EXIT_DATA
                }
            }
        }
        Ok(None) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

fn execute(cli: &Cli) -> Result<Option<Output>> {
    let seed = cli.seed;
    let output = match &cli.command {
        Command::Ingest(a) => ingest(a)?,
        Command::Split(a) => split(a, seed)?,
        Command::Index(a) => index(a)?,
        Command::Search(a) => search(a)?,
        Command::Classify(a) => classify(a)?,
        Command::Regress(a) => regress(a)?,
        Command::Zeroshot(a) => zeroshot(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Fairness(a) => fairness(a)?,
        Command::Volumes(VolumesCommand::Index(a)) => volume_index(a)?,
        Command::Volumes(VolumesCommand::Search(a)) => volume_search(a)?,
        Command::Volumes(VolumesCommand::Eval(a)) => volume_eval(a)?,
        Command::Unicl(UniclCommand::Check(a)) => unicl_check(a, seed)?,
        Command::Unicl(UniclCommand::Train(a)) => unicl_train(a, seed)?,
        Command::Serve(a) => {
            serve(a)?;
            return Ok(None);
        }
    };
    Ok(Some(output))
}

fn load(path: &Path, split: Option<Split>, dimension: Option<usize>) -> Result<Corpus> {
    let corpus = corpus::load_any(path, dimension)?;
    Ok(match split {
        Some(s) => {
            let part = corpus.filter_split(s);
            if part.is_empty() {
                return Err(Error::invalid(format!("{} has no {s} records", path.display())));
            }
            part
        }
        None => corpus,
    })
}

fn load_pair(n: &Neighbors) -> Result<(Corpus, Corpus)> {
    let db = load(&n.db, n.db_split, None)?;
    let queries = load(&n.queries, n.query_split, Some(db.dimension()))?;
    Ok(if n.normalize {
        (db.l2_normalized(), queries.l2_normalized())
    } else {
        (db, queries)
    })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct CorpusSummary {
    name: String,
    dimension: usize,
    records: usize,
    labeled: usize,
    classes: Vec<String>,
}

fn summarize(corpus: &Corpus) -> CorpusSummary {
    CorpusSummary {
        name: corpus.name().to_string(),
        dimension: corpus.dimension(),
        records: corpus.len(),
        labeled: corpus.records().iter().filter(|r| r.label.is_some()).count(),
        classes: corpus.labels().into_iter().map(String::from).collect(),
    }
}

fn summary_tsv(s: &CorpusSummary) -> String {
    format!(
        "name\tdimension\trecords\tlabeled\tclasses\n{}\t{}\t{}\t{}\t{}\n",
        s.name,
        s.dimension,
        s.records,
        s.labeled,
        s.classes.join(",")
    )
}

fn ingest(a: &IngestArgs) -> Result<Output> {
    let mut corpus = load(&a.corpus.input, a.corpus.split, a.corpus.dimension)?;
    if let Some(name) = &a.name {
        corpus = Corpus::new(name.clone(), corpus.dimension(), corpus.into_records())?;
    }
    if let Some(out) = &a.out {
        write_file(out, &corpus.to_snapshot_string())?;
    }
    let s = summarize(&corpus);
    Output::new(summary_tsv(&s), s)
}

fn split(a: &SplitArgs, seed: u64) -> Result<Output> {
    let corpus = corpus::load_any(&a.input, None)?;
    let (database, validation, test) = corpus::split_corpus(&corpus, a.ratios, seed)?;
    let mut tsv = String::from("split\trecords\tpath\n");
    let mut rows = Vec::new();
    for (split, part) in [(Split::Database, database), (Split::Validation, validation), (Split::Test, test)] {
        let path = a.out_dir.join(format!("{split}.jsonl"));
        write_file(&path, &part.to_record_lines())?;
        let _ = writeln!(tsv, "{split}\t{}\t{}", part.len(), path.display());
        rows.push(json!({ "split": split, "records": part.len(), "path": path }));
    }
    Output::new(tsv, rows)
}

fn index(a: &IndexArgs) -> Result<Output> {
    let mut corpus = load(&a.corpus.input, a.corpus.split, a.corpus.dimension)?;
    if a.normalize {
        corpus = corpus.l2_normalized();
    }
    let index = build_index(&corpus)?;
    log::info!("indexed {} vectors of dimension {}", index.len(), index.dimension());
    if let Some(out) = &a.out {
        write_file(out, &corpus.to_snapshot_string())?;
    }
    let s = summarize(&corpus);
    Output::new(summary_tsv(&s), s)
}

#[derive(Serialize)]
struct QueryHits<'a> {
    query: &'a str,
    hits: &'a [NeighborHit],
}

fn search(a: &SearchArgs) -> Result<Output> {
    let (db, queries) = load_pair(&a.neighbors)?;
    let index = build_index(&db)?;
    let vectors: Vec<Vec<f64>> = queries.records().iter().map(|r| r.vector.clone()).collect();
    let results = index.batch_search(&vectors, a.k)?;
    let mut tsv = String::from("query\trank\tid\tscore\tlabel\n");
    for (q, hits) in queries.records().iter().zip(&results) {
        for (rank, h) in hits.iter().enumerate() {
            let label = h.label.as_deref().unwrap_or("");
            let _ = writeln!(tsv, "{}\t{}\t{}\t{}\t{label}", q.id, rank + 1, h.id, real(h.score));
        }
    }
    let rows: Vec<QueryHits> = queries
        .records()
        .iter()
        .zip(&results)
        .map(|(q, hits)| QueryHits { query: &q.id, hits })
        .collect();
    Output::new(tsv, rows)
}

#[derive(Serialize)]
struct QueryScores<'a> {
    query: &'a str,
    predicted: String,
    #[serde(flatten)]
    scores: ClassScores,
}

fn scores_output(records: &[EmbeddingRecord], scores: Vec<ClassScores>) -> Result<Output> {
    let mut tsv = String::from("query\tpredicted\tclass\traw\tprobability\n");
    let mut rows = Vec::with_capacity(scores.len());
    for (q, s) in records.iter().zip(scores) {
        let predicted = s.argmax().to_string();
        for ((class, raw), p) in s.classes.iter().zip(&s.raw).zip(&s.probabilities) {
            let _ = writeln!(tsv, "{}\t{predicted}\t{class}\t{}\t{}", q.id, real(*raw), real(*p));
        }
        rows.push(QueryScores {
            query: &q.id,
            predicted,
            scores: s,
        });
    }
    Output::new(tsv, rows)
}

fn classify(a: &ClassifyArgs) -> Result<Output> {
    let (db, queries) = load_pair(&a.neighbors)?;
    let index = build_index(&db)?;
    let vectors: Vec<Vec<f64>> = queries.records().iter().map(|r| r.vector.clone()).collect();
    let scores = index
        .batch_search(&vectors, a.k)?
        .iter()
        .map(|hits| knn::classify_knn_with(hits, a.k, a.vote, None))
        .collect::<Result<Vec<_>>>()?;
    scores_output(queries.records(), scores)
}

fn regress(a: &RegressArgs) -> Result<Output> {
    let (db, queries) = load_pair(&a.neighbors)?;
    let index = build_index(&db)?;
    let vectors: Vec<Vec<f64>> = queries.records().iter().map(|r| r.vector.clone()).collect();
    let mut tsv = String::from("query\tmonths\n");
    let mut rows = Vec::new();
    for (q, hits) in queries.records().iter().zip(index.batch_search(&vectors, a.k)?) {
        let months = knn::regress_knn(&hits, a.k)?;
        let _ = writeln!(tsv, "{}\t{months}", q.id);
        rows.push(json!({ "query": q.id, "months": months }));
    }
    Output::new(tsv, rows)
}

fn zeroshot(a: &ZeroshotArgs) -> Result<Output> {
    let mut head = ClassifierHead::load(&a.head)?;
    if let Some(t) = a.temperature {
        head = head.with_temperature(t)?;
    }
    let queries = load(&a.queries, a.query_split, Some(head.dimension()))?;
    let scores = queries
        .records()
        .iter()
        .map(|r| knn::zeroshot_classify(&r.vector, &head))
        .collect::<Result<Vec<_>>>()?;
    scores_output(queries.records(), scores)
}

fn evaluate(a: &EvaluateArgs) -> Result<Output> {
    let (db, queries) = load_pair(&a.neighbors)?;
    let index = build_index(&db)?;
    let mut k = a.k;
    let mut tuned = None;
    if let Some(path) = &a.tune {
        let mut validation = load(path, a.tune_split, Some(db.dimension()))?;
        if a.neighbors.normalize {
            validation = validation.l2_normalized();
        }
        let result = knn::tune_k(&index, &validation, &a.tune_ks, a.tune_metric)?;
        log::info!("tuned k = {} by {}", result.best_k, result.metric);
        k = result.best_k;
        tuned = Some(result);
    }
    let config = EvaluationConfig {
        k,
        regress_k: a.regress_k,
        vote: a.vote,
    };
    let run = evaluation::evaluate(&a.name, &index, &queries, config)?;
    if let Some(dir) = &a.out_dir {
        let written = report::write_evaluation(dir, &run)?;
        if let Some(t) = &tuned {
            let stem = written[0].file_stem().expect("report file has a stem").to_owned();
            let path = dir.join(format!("{}.tune.tsv", stem.to_string_lossy()));
            write_file(&path, &report::tune_tsv(t))?;
        }
    }
    let json: Value = serde_json::from_str(&report::evaluation_json(&run))
        .map_err(|e| Error::invalid(format!("evaluation report: {e}")))?;
    let json = match tuned {
        Some(t) => json!({ "tuning": t, "run": json }),
        None => json,
    };
    Output::new(report::evaluation_tsv(&run), json)
}

fn fairness(a: &FairnessArgs) -> Result<Output> {
    let (db, queries) = load_pair(&a.neighbors)?;
    let index = build_index(&db)?;
    let config = EvaluationConfig {
        k: a.k,
        vote: a.vote,
        ..EvaluationConfig::default()
    };
    let run = evaluation::evaluate("fairness", &index, &queries, config)?;
    let report = metrics::fairness_report(&run.classes, &run.scored_records(), a.grouping)?;
    Output::new(report::fairness_tsv(&report), &report)
}

fn volume_index(a: &VolumeIndexArgs) -> Result<Output> {
    let corpus = load(&a.corpus.input, a.corpus.split, a.corpus.dimension)?;
    let index = volume::build_volume_index(&corpus, a.aggregation)?;
    let mut lines = String::new();
    let mut tsv = String::from("volume\tslices\ttumor_flag\ttumor_stage\n");
    for v in index.volumes() {
        lines.push_str(&serde_json::to_string(v).map_err(|e| Error::invalid(e.to_string()))?);
        lines.push('\n');
        let flag = v.tumor_flag.map(|f| f.to_string()).unwrap_or_default();
        let stage = v.tumor_stage.as_deref().unwrap_or("");
        let _ = writeln!(tsv, "{}\t{}\t{flag}\t{stage}", v.volume_id, v.slice_count);
    }
    if let Some(out) = &a.out {
        write_file(out, &lines)?;
    }
    Output::new(tsv, index.volumes())
}

/// Slice vectors per volume, volumes in first-appearance order and slices by
/// `slice_index`.
fn volume_slices(corpus: &Corpus) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let mut groups: Vec<(String, Vec<(u64, Vec<f64>)>)> = Vec::new();
    for r in corpus.records() {
        let (Some(volume), Some(slice)) = (&r.volume_id, r.slice_index) else {
            return Err(Error::InvalidRecord {
                id: r.id.clone(),
                message: "slice records need volume_id and slice_index".into(),
            });
        };
        match groups.iter_mut().find(|(v, _)| v == volume) {
            Some((_, slices)) => slices.push((slice, r.vector.clone())),
            None => groups.push((volume.clone(), vec![(slice, r.vector.clone())])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(v, mut slices)| {
            slices.sort_by_key(|(i, _)| *i);
            (v, slices.into_iter().map(|(_, s)| s).collect())
        })
        .collect())
}

fn volume_search(a: &VolumeSearchArgs) -> Result<Output> {
    let db = load(&a.db, None, None)?;
    let queries = load(&a.queries, None, Some(db.dimension()))?;
    let index = volume::build_volume_index(&db, a.aggregation)?;
    let method = a.query_aggregation.unwrap_or(a.aggregation);
    let mut tsv = String::from("query\trank\tvolume\tscore\n");
    let mut rows = Vec::new();
    for (volume_id, slices) in volume_slices(&queries)? {
        let hits = volume::retrieve_volumes(&index, &slices, method, a.k)?;
        for (rank, h) in hits.iter().enumerate() {
            let _ = writeln!(tsv, "{volume_id}\t{}\t{}\t{}", rank + 1, h.id, real(h.score));
        }
        rows.push(json!({ "query": volume_id, "hits": hits }));
    }
    Output::new(tsv, rows)
}

fn volume_eval(a: &VolumeEvalArgs) -> Result<Output> {
    let db = load(&a.db, None, None)?;
    let index = volume::build_volume_index(&db, a.aggregation)?;
    let queries: Vec<VolumeEmbedding> = match &a.queries {
        Some(path) => {
            let q = load(path, None, Some(db.dimension()))?;
            volume::group_volumes(q.records(), a.aggregation)?
        }
        None => index.volumes().to_vec(),
    };
    let report = volume::evaluate_retrieval(&index, &queries, &a.cutoffs)?;
    Output::new(report::retrieval_tsv(&report), &report)
}

/// Uniform entries in [-1, 1]; targets are drawn from `0..n`, so repeats
/// occur.
fn random_batch(rng: &mut ChaCha8Rng, max_n: usize, max_dim: usize, temperature: f64) -> Result<UniclBatch> {
    let n = rng.random_range(1..=max_n);
    let d = rng.random_range(1..=max_dim);
    let image = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0));
    let text = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0));
    let targets = (0..n).map(|_| rng.random_range(0..n as i64)).collect();
    UniclBatch::new(image, text, targets, temperature)
}

fn unicl_check(a: &CheckArgs, seed: u64) -> Result<Output> {
    if a.temperatures.is_empty() {
        return Err(Error::invalid("no temperatures"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tsv = String::from("batch\tn\tdim\ttemperature\tmax_rel_error\n");
    let mut rows = Vec::with_capacity(a.batches);
    let mut worst = 0.0f64;
    for b in 0..a.batches {
        let t = a.temperatures[b % a.temperatures.len()];
        let batch = random_batch(&mut rng, a.max_n, a.max_dim, t)?;
        let e = unicl::finite_diff_check(&batch, a.epsilon);
        worst = worst.max(e);
        let _ = writeln!(tsv, "{b}\t{}\t{}\t{t}\t{}", batch.len(), batch.image().cols(), real(e));
        rows.push(json!({
            "batch": b,
            "n": batch.len(),
            "dim": batch.image().cols(),
            "temperature": t,
            "max_rel_error": e,
        }));
    }
    let _ = writeln!(tsv, "max\t\t\t\t{}", real(worst));
    if !(worst <= a.tolerance) {
        return Err(Error::invalid(format!(
            "gradient check failed: max relative error {worst:e} exceeds {:e}",
            a.tolerance
        )));
    }
    Output::new(tsv, json!({ "max_rel_error": worst, "tolerance": a.tolerance, "batches": rows }))
}

fn unicl_train(a: &TrainArgs, seed: u64) -> Result<Output> {
    let spec = ClusterSpec {
        clusters: a.clusters,
        dimension: a.dimension,
        separation: a.separation,
        ..ClusterSpec::default()
    };
    spec.validate()?;
    let config = train::TrainConfig {
        steps: a.steps,
        learning_rate: a.learning_rate,
        temperature: a.temperature,
        embedding_dim: a.embedding_dim,
        samples_per_class: a.samples_per_class,
        weight_decay: a.weight_decay,
        seed,
        ..train::TrainConfig::default()
    };
    let result = train::toy_train(&spec, &config)?;
    let head = result.model.classifier_head(&spec, a.temperature)?;
    let held_out = result
        .model
        .embed_corpus(&spec.corpus("test", a.test_records, seed.wrapping_add(1))?)?;
    let zeroshot = evaluation::zeroshot_mauc(&head, &held_out)?;
    if let Some(dir) = &a.out_dir {
        write_file(&dir.join("trace.tsv"), &result.trace_tsv())?;
        write_file(&dir.join("head.jsonl"), &head.to_file_string())?;
        write_file(&dir.join("test.jsonl"), &held_out.to_record_lines())?;
        if a.db_records > 0 {
            let db = result
                .model
                .embed_corpus(&spec.corpus("database", a.db_records, seed.wrapping_add(2))?)?;
            write_file(&dir.join("database.jsonl"), &db.to_record_lines())?;
        }
    }
    let tsv = format!(
        "steps\tinitial_loss\tfinal_loss\treduction\tzeroshot_mauc\n{}\t{}\t{}\t{}\t{}\n",
        a.steps,
        real(result.initial_loss),
        real(result.final_loss),
        real(result.reduction()),
        real(zeroshot.mauc)
    );
    Output::new(
        tsv,
        json!({
            "steps": a.steps,
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
            "reduction": result.reduction(),
            "zeroshot": zeroshot,
        }),
    )
}

fn serve(a: &ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .or_else(|_| {
            use std::net::ToSocketAddrs;
            (a.host.as_str(), a.port)
                .to_socket_addrs()
                .ok()
                .and_then(|mut it| it.next())
                .ok_or(())
        })
        .map_err(|_| Error::invalid(format!("cannot resolve {}:{}", a.host, a.port)))?;
    let config = ServiceConfig {
        max_body_bytes: a.max_body_mb.saturating_mul(1024 * 1024),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("<runtime>", e))?;
    runtime
        .block_on(evsearch_service::serve(addr, config))
        .map_err(|e| Error::io(addr.to_string(), e))
}
