//! Record ingestion, validation, snapshots and deterministic splitting.
//!
//! Record files hold one JSON object per line:
//!
//! ```text
//! {"id":"a","vector":[0.1,0.2],"label":"PT","attributes":{"gender":"F","age_years":"41"},"split":"test"}
//! ```
//!
//! A snapshot is the same body preceded by one header line carrying the
//! dimension, corpus name and a 64-bit FNV-1a checksum of the body bytes
//! rendered as 16 lowercase hex digits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attribute key holding `"F"` or `"M"`.
pub const ATTR_GENDER: &str = "gender";
/// Attribute key holding the age in decimal years, e.g. `"41.5"`.
pub const ATTR_AGE_YEARS: &str = "age_years";
/// Attribute key holding `"true"` / `"false"` on slice records.
pub const ATTR_TUMOR_FLAG: &str = "tumor_flag";
/// Attribute key holding a free-form tumor stage label on slice records.
pub const ATTR_TUMOR_STAGE: &str = "tumor_stage";

/// Lower edge of the CT window, in Hounsfield units.
pub const HU_WINDOW_LOW: f64 = -1000.0;
/// Upper edge of the CT window, in Hounsfield units.
pub const HU_WINDOW_HIGH: f64 = 1000.0;

/// Database / validation / test proportions used for clinical evaluation.
pub const CLINICAL_SPLIT_RATIOS: [f64; 3] = [0.64, 0.16, 0.20];

/// Which partition a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Database,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Database, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Database => "database",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "database" => Ok(Split::Database),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// One ingested embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_months: Option<u64>,
}

impl EmbeddingRecord {
    /// Bare record with only an id and a vector.
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Self {
        EmbeddingRecord {
            id: id.into(),
            vector,
            label: None,
            attributes: BTreeMap::new(),
            split: None,
            volume_id: None,
            slice_index: None,
            target_months: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn with_target_months(mut self, months: u64) -> Self {
        self.target_months = Some(months);
        self
    }

    pub fn with_slice(mut self, volume_id: impl Into<String>, slice_index: u64) -> Self {
        self.volume_id = Some(volume_id.into());
        self.slice_index = Some(slice_index);
        self
    }

    /// Checks every per-record invariant against the corpus dimension.
    pub fn validate(&self, dimension: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Malformed("empty id".into()));
        }
        if self.vector.len() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: self.vector.len(),
                context: Some(format!("record {:?}", self.id)),
            });
        }
        if let Some(pos) = self.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "record {:?} component {pos}",
                self.id
            )));
        }
        if self.volume_id.is_some() != self.slice_index.is_some() {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: "volume_id and slice_index must be given together".into(),
            });
        }
        Ok(())
    }
}

/// A named, validated collection of records sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    dimension: usize,
    records: Vec<EmbeddingRecord>,
}

impl Corpus {
    /// Validates and wraps `records`. An empty record list is allowed here;
    /// only [`load_corpus`] rejects it.
    pub fn new(
        name: impl Into<String>,
        dimension: usize,
        records: Vec<EmbeddingRecord>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            record.validate(dimension)?;
            if !seen.insert(record.id.as_str()) {
                return Err(Error::DuplicateId(record.id.clone()));
            }
        }
        Ok(Corpus {
            name: name.into(),
            dimension,
            records,
        })
    }

    /// Parses record lines. Blank lines are skipped; line numbers in errors
    /// are 1-based and count blank lines.
    pub fn from_record_lines(
        name: impl Into<String>,
        text: &str,
        expected_dimension: Option<usize>,
    ) -> Result<Self> {
        let records = parse_record_lines(text, expected_dimension, 1)?;
        let dimension = match (expected_dimension, records.first()) {
            (Some(d), _) => d,
            (None, Some(first)) => first.vector.len(),
            (None, None) => return Err(Error::EmptyCorpus),
        };
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Corpus::new(name, dimension, records)
    }

    /// Parses a snapshot (header line plus record body).
    pub fn from_snapshot_str(text: &str) -> Result<Self> {
        let (header_line, body) = match text.find('\n') {
            Some(pos) => (&text[..pos], &text[pos + 1..]),
            None => (text, ""),
        };
        let header: SnapshotHeader = serde_json::from_str(header_line)
            .map_err(|e| Error::Malformed(format!("snapshot header: {e}")).at_line(1))?;
        let actual = format!("{:016x}", fnv1a64(body.as_bytes()));
        if !actual.eq_ignore_ascii_case(&header.checksum) {
            return Err(Error::ChecksumMismatch {
                expected: header.checksum,
                actual,
            });
        }
        let records = parse_record_lines(body, Some(header.dimension), 2)?;
        Corpus::new(header.name, header.dimension, records)
    }

    /// Accepts either a snapshot or plain record lines, telling them apart by
    /// whether the first non-blank line carries a `checksum` key.
    pub fn parse_any(
        name: impl Into<String>,
        text: &str,
        expected_dimension: Option<usize>,
    ) -> Result<Self> {
        let first = text.lines().find(|l| !l.trim().is_empty());
        let is_snapshot = first
            .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .is_some_and(|v| v.get("checksum").is_some() && v.get("id").is_none());
        if is_snapshot {
            let corpus = Corpus::from_snapshot_str(text.trim_start_matches(['\n', '\r']))?;
            if let Some(d) = expected_dimension {
                if d != corpus.dimension {
                    return Err(Error::dimension(d, corpus.dimension));
                }
            }
            if corpus.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            Ok(corpus)
        } else {
            Corpus::from_record_lines(name, text, expected_dimension)
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct labels in ascending order.
    pub fn labels(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter_map(|r| r.label.as_deref())
            .collect()
    }

    /// Records tagged with `split`, in corpus order.
    pub fn filter_split(&self, split: Split) -> Corpus {
        Corpus {
            name: format!("{}.{}", self.name, split),
            dimension: self.dimension,
            records: self
                .records
                .iter()
                .filter(|r| r.split == Some(split))
                .cloned()
                .collect(),
        }
    }

    /// Copy with every vector scaled to unit L2 norm. Zero vectors are kept.
    pub fn l2_normalized(&self) -> Corpus {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                let norm = crate::dot(&r.vector, &r.vector).sqrt();
                if norm > 0.0 {
                    r.vector.iter_mut().for_each(|v| *v /= norm);
                }
                r
            })
            .collect();
        Corpus {
            name: self.name.clone(),
            dimension: self.dimension,
            records,
        }
    }

    /// Renders the record body, one JSON object per line.
    pub fn to_record_lines(&self) -> String {
        let mut body = String::new();
        for record in &self.records {
            body.push_str(&serde_json::to_string(record).expect("records always serialize"));
            body.push('\n');
        }
        body
    }

    /// Renders header plus body.
    pub fn to_snapshot_string(&self) -> String {
        let body = self.to_record_lines();
        let header = SnapshotHeader {
            dimension: self.dimension,
            name: self.name.clone(),
            checksum: format!("{:016x}", fnv1a64(body.as_bytes())),
        };
        let mut out = serde_json::to_string(&header).expect("header always serializes");
        out.push('\n');
        out.push_str(&body);
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    dimension: usize,
    name: String,
    checksum: String,
}

fn parse_record_lines(
    text: &str,
    expected_dimension: Option<usize>,
    first_line: usize,
) -> Result<Vec<EmbeddingRecord>> {
    let mut records = Vec::new();
    let mut dimension = expected_dimension;
    let mut seen = HashSet::new();
    for (offset, raw) in text.lines().enumerate() {
        let line = first_line + offset;
        if raw.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(raw)
            .map_err(|e| Error::Malformed(e.to_string()).at_line(line))?;
        let dim = *dimension.get_or_insert(record.vector.len());
        record.validate(dim).map_err(|e| e.at_line(line))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id).at_line(line));
        }
        records.push(record);
    }
    Ok(records)
}

/// Reads a record file. The dimension comes from `expected_dimension` or,
/// when absent, from the first record. The corpus is named after the file
/// stem.
pub fn load_corpus(path: impl AsRef<Path>, expected_dimension: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_record_lines(file_stem(path), &text, expected_dimension)
}

/// Reads either a snapshot or a record file.
pub fn load_any(path: impl AsRef<Path>, expected_dimension: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::parse_any(file_stem(path), &text, expected_dimension)
}

pub fn save_snapshot(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus.to_snapshot_string()).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_snapshot_str(&text)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(PRIME)
    })
}

/// SplitMix64 stream. Fixed here rather than borrowed from `rand` so that a
/// seed produces the same permutation in any language.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Fisher-Yates permutation of `0..n` driven by [`SplitMix64`]: for `i` from
/// `n-1` down to 1, swap `i` with `next_u64() % (i + 1)`.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order
}

/// Partition sizes `floor(n*r)` for database and validation, the rest to
/// test. A 1e-9 slack absorbs binary representation error so that e.g.
/// `0.29 * 100` counts as 29.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid(format!(
            "split ratios must lie in [0, 1], got {ratios:?}"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    let part = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let database = part(ratios[0]).min(n);
    let validation = part(ratios[1]).min(n - database);
    Ok([database, validation, n - database - validation])
}

/// Deterministic database / validation / test split.
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let sizes = split_sizes(corpus.len(), ratios)?;
    let order = seeded_permutation(corpus.len(), seed);
    let mut parts = order.into_iter();
    let mut take = |split: Split, count: usize| Corpus {
        name: format!("{}.{}", corpus.name, split),
        dimension: corpus.dimension,
        records: parts
            .by_ref()
            .take(count)
            .map(|i| {
                let mut r = corpus.records[i].clone();
                r.split = Some(split);
                r
            })
            .collect(),
    };
    let database = take(Split::Database, sizes[0]);
    let validation = take(Split::Validation, sizes[1]);
    let test = take(Split::Test, sizes[2]);
    Ok((database, validation, test))
}

/// Clamps each value to `[lo, hi]` and maps it linearly onto `0..=255`,
/// rounding half up.
pub fn hu_window(values: &[f64], lo: f64, hi: f64) -> Result<Vec<u8>> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(Error::invalid(format!(
            "HU window needs finite hi > lo, got [{lo}, {hi}]"
        )));
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.is_nan() {
                return Err(Error::NonFinite(format!("HU value {i}")));
            }
            let clamped = v.clamp(lo, hi);
            let scaled = (clamped - lo) / (hi - lo) * 255.0;
            Ok((scaled + 0.5).floor().min(255.0) as u8)
        })
        .collect()
}

/// [`hu_window`] with the default -1000..1000 HU window.
pub fn hu_window_default(values: &[f64]) -> Result<Vec<u8>> {
    hu_window(values, HU_WINDOW_LOW, HU_WINDOW_HIGH)
}
