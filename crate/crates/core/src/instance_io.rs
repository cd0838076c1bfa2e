//! Datasets, constraint sets, run configuration and JSON reports.
//!
//! File formats:
//!
//! - Dataset CSV: one object per row, comma separated, optional header row.
//!   The header is detected by a non-numeric first row. An optional label
//!   column is selected by header name, by 0-based column index, or `last`.
//! - Dataset binary matrix: magic `PCCCMAT1`, then `n` and `d` as
//!   little-endian `u64`, then `n * d` little-endian `f64` values row-major.
//! - Constraints: records `i,j,type[,weight]` separated by commas or tabs,
//!   0-based indices, type one of `ML`, `CL`, `SML`, `SCL`. The weight is
//!   required for the soft types. Blank lines and lines starting with `#`
//!   are skipped, and a leading `i,j,type,weight` header is accepted.
//! - Report: JSON, see [`Report`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::metrics::{MetricsBundle, ViolationCounts};

/// Magic prefix of the binary matrix format.
pub const BINARY_MAGIC: &[u8; 8] = b"PCCCMAT1";

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("{path}: file is empty")]
    EmptyFile { path: String },
    #[error("row {row}: expected {expected} columns, found {found}")]
    MalformedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("label column {0:?} not found")]
    LabelColumn(String),
    #[error("line {line}: index {index} out of range for n = {n}")]
    IndexOutOfRange { line: usize, index: usize, n: usize },
    #[error("line {line}: pair ({index}, {index}) links an object to itself")]
    SelfPair { line: usize, index: usize },
    #[error("line {line}: weight {weight} is outside (0, 1]")]
    BadWeight { line: usize, weight: f64 },
    #[error("line {line}: soft constraint is missing its weight")]
    MissingWeight { line: usize },
    #[error("line {line}: unknown constraint type {value:?}")]
    UnknownType { line: usize, value: String },
    #[error("line {line}: malformed constraint record {record:?}")]
    MalformedRecord { line: usize, record: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("truncated binary matrix: expected {expected} bytes of values, found {found}")]
    TruncatedBinary { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A dense `n x d` feature matrix with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    ground_truth: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        n: usize,
        d: usize,
        features: Vec<f64>,
        ground_truth: Option<Vec<i64>>,
    ) -> Result<Self, InstanceError> {
        if n == 0 {
            return Err(InstanceError::InvalidDataset("no objects".into()));
        }
        if d == 0 {
            return Err(InstanceError::InvalidDataset("no features".into()));
        }
        if features.len() != n * d {
            return Err(InstanceError::InvalidDataset(format!(
                "expected {} feature values, got {}",
                n * d,
                features.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(InstanceError::InvalidDataset(format!(
                "non-finite value at object {}, feature {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != n {
                return Err(InstanceError::InvalidDataset(format!(
                    "{} ground-truth labels for {} objects",
                    gt.len(),
                    n
                )));
            }
        }
        Ok(Self {
            n,
            d,
            features,
            ground_truth,
        })
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        ground_truth: Option<Vec<i64>>,
    ) -> Result<Self, InstanceError> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(InstanceError::MalformedRow {
                row,
                expected: d,
                found: r.len(),
            });
        }
        let features = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), d, features, ground_truth)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    /// Row-major feature values.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn ground_truth(&self) -> Option<&[i64]> {
        self.ground_truth.as_deref()
    }

    pub fn with_ground_truth(mut self, labels: Vec<i64>) -> Result<Self, InstanceError> {
        if labels.len() != self.n {
            return Err(InstanceError::InvalidDataset(format!(
                "{} ground-truth labels for {} objects",
                labels.len(),
                self.n
            )));
        }
        self.ground_truth = Some(labels);
        Ok(self)
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

enum LabelSelector<'a> {
    Name(&'a str),
    Index(usize),
    Last,
}

impl<'a> LabelSelector<'a> {
    fn parse(s: &'a str) -> Self {
        if s.eq_ignore_ascii_case("last") {
            LabelSelector::Last
        } else if let Ok(idx) = s.parse::<usize>() {
            LabelSelector::Index(idx)
        } else {
            LabelSelector::Name(s)
        }
    }
}

/// Load a dataset from CSV or from the binary matrix format (detected by its
/// magic prefix). Row order is preserved so indices match constraint files.
pub fn load_dataset(
    path: impl AsRef<Path>,
    label_column: Option<&str>,
) -> Result<Dataset, InstanceError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Err(InstanceError::EmptyFile {
            path: path.display().to_string(),
        });
    }
    if bytes.starts_with(BINARY_MAGIC) {
        if label_column.is_some() {
            return Err(InstanceError::InvalidDataset(
                "the binary matrix format carries no label column".into(),
            ));
        }
        return parse_binary(&bytes);
    }
    parse_csv(&bytes, label_column, &path.display().to_string())
}

fn parse_binary(bytes: &[u8]) -> Result<Dataset, InstanceError> {
    let header = 8 + 16;
    if bytes.len() < header {
        return Err(InstanceError::TruncatedBinary {
            expected: header,
            found: bytes.len(),
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[header..];
    let expected = n.saturating_mul(d).saturating_mul(8);
    if body.len() != expected {
        return Err(InstanceError::TruncatedBinary {
            expected,
            found: body.len(),
        });
    }
    let features = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(n, d, features, None)
}

fn parse_csv(
    bytes: &[u8],
    label_column: Option<&str>,
    path: &str,
) -> Result<Dataset, InstanceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes);
    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(InstanceError::EmptyFile { path: path.into() });
    }
    let width = records[0].len();
    let selector = label_column.map(LabelSelector::parse);

    let first_numeric = |skip: Option<usize>| {
        records[0]
            .iter()
            .enumerate()
            .filter(|(c, _)| Some(*c) != skip)
            .all(|(_, v)| parse_finite(v).is_some())
    };
    let (has_header, label_idx) = match &selector {
        None => (!first_numeric(None), None),
        Some(LabelSelector::Name(name)) => {
            let idx = records[0]
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| InstanceError::LabelColumn(name.to_string()))?;
            (true, Some(idx))
        }
        Some(LabelSelector::Index(idx)) => {
            if *idx >= width {
                return Err(InstanceError::LabelColumn(idx.to_string()));
            }
            (!first_numeric(Some(*idx)), Some(*idx))
        }
        Some(LabelSelector::Last) => {
            let idx = width
                .checked_sub(1)
                .ok_or_else(|| InstanceError::LabelColumn("last".into()))?;
            (!first_numeric(Some(idx)), Some(idx))
        }
    };

    let data = if has_header {
        &records[1..]
    } else {
        &records[..]
    };
    if data.is_empty() {
        return Err(InstanceError::EmptyFile { path: path.into() });
    }
    let d = width - usize::from(label_idx.is_some());
    let mut features = Vec::with_capacity(data.len() * d);
    let mut raw_labels = Vec::new();
    let first_row = usize::from(has_header);
    for (r, rec) in data.iter().enumerate() {
        let row = r + first_row;
        if rec.len() != width {
            return Err(InstanceError::MalformedRow {
                row,
                expected: width,
                found: rec.len(),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v = parse_finite(cell).ok_or_else(|| InstanceError::NonNumeric {
                row,
                column: c,
                value: cell.to_string(),
            })?;
            features.push(v);
        }
    }
    let ground_truth = label_idx.map(|_| encode_labels(&raw_labels));
    Dataset::new(data.len(), d, features, ground_truth)
}

/// Integer labels are kept as-is; anything else is numbered in order of
/// first appearance.
fn encode_labels(raw: &[String]) -> Vec<i64> {
    let ints: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    if let Some(ints) = ints {
        return ints;
    }
    let mut ids: HashMap<&str, i64> = HashMap::new();
    raw.iter()
        .map(|s| {
            let next = ids.len() as i64;
            *ids.entry(s.as_str()).or_insert(next)
        })
        .collect()
}

/// Write a dataset as CSV with a header `x0,..,x{d-1}[,label]`.
pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), InstanceError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dataset.d()).map(|j| format!("x{j}")).collect();
    if dataset.ground_truth().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(gt) = dataset.ground_truth() {
            rec.push(gt[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the feature matrix in the binary matrix format (labels are dropped).
pub fn write_binary_dataset(
    path: impl AsRef<Path>,
    dataset: &Dataset,
) -> Result<(), InstanceError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(dataset.n() as u64).to_le_bytes())?;
    w.write_all(&(dataset.d() as u64).to_le_bytes())?;
    for v in dataset.features() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKind {
    #[serde(rename = "ML")]
    MustLink,
    #[serde(rename = "CL")]
    CannotLink,
    #[serde(rename = "SML")]
    SoftMustLink,
    #[serde(rename = "SCL")]
    SoftCannotLink,
}

impl ConstraintKind {
    pub fn is_soft(self) -> bool {
        matches!(self, Self::SoftMustLink | Self::SoftCannotLink)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MustLink => "ML",
            Self::CannotLink => "CL",
            Self::SoftMustLink => "SML",
            Self::SoftCannotLink => "SCL",
        }
    }
}

impl FromStr for ConstraintKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ML" => Ok(Self::MustLink),
            "CL" => Ok(Self::CannotLink),
            "SML" => Ok(Self::SoftMustLink),
            "SCL" => Ok(Self::SoftCannotLink),
            _ => Err(()),
        }
    }
}

/// An unordered pair stored with the smaller index first.
pub type Pair = (usize, usize);

pub fn canonical_pair(i: usize, j: usize) -> Pair {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Hard and soft pairwise constraints over objects `0..n`.
///
/// All lists are sorted by pair and free of duplicates. Soft weights lie in
/// `(0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub ml: Vec<Pair>,
    pub cl: Vec<Pair>,
    pub sml: Vec<(Pair, f64)>,
    pub scl: Vec<(Pair, f64)>,
}

/// Accumulates constraint records, canonicalizing and merging duplicates.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSetBuilder {
    ml: BTreeSet<Pair>,
    cl: BTreeSet<Pair>,
    sml: BTreeMap<Pair, f64>,
    scl: BTreeMap<Pair, f64>,
}

impl ConstraintSetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one record. The weight is ignored for hard kinds. Duplicate soft
    /// records on a pair have their weights summed and clipped to 1.
    pub fn add(&mut self, i: usize, j: usize, kind: ConstraintKind, weight: f64) {
        let pair = canonical_pair(i, j);
        match kind {
            ConstraintKind::MustLink => {
                self.ml.insert(pair);
            }
            ConstraintKind::CannotLink => {
                self.cl.insert(pair);
            }
            ConstraintKind::SoftMustLink => {
                let w = self.sml.entry(pair).or_insert(0.0);
                *w = (*w + weight).min(1.0);
            }
            ConstraintKind::SoftCannotLink => {
                let w = self.scl.entry(pair).or_insert(0.0);
                *w = (*w + weight).min(1.0);
            }
        }
    }

    pub fn build(self) -> ConstraintSet {
        ConstraintSet {
            ml: self.ml.into_iter().collect(),
            cl: self.cl.into_iter().collect(),
            sml: self.sml.into_iter().collect(),
            scl: self.scl.into_iter().collect(),
        }
    }
}

/// Whether a constraint class is treated as hard or soft.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Hard,
    Soft,
}

impl FromStr for Hardness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            other => Err(format!("expected hard or soft, got {other:?}")),
        }
    }
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        self.ml.len() + self.cl.len() + self.sml.len() + self.scl.len()
    }

    /// Iterate over all records as `(i, j, kind, weight)`; hard weights are 1.
    pub fn records(&self) -> impl Iterator<Item = (usize, usize, ConstraintKind, f64)> + '_ {
        let ml = self
            .ml
            .iter()
            .map(|&(i, j)| (i, j, ConstraintKind::MustLink, 1.0));
        let cl = self
            .cl
            .iter()
            .map(|&(i, j)| (i, j, ConstraintKind::CannotLink, 1.0));
        let sml = self
            .sml
            .iter()
            .map(|&((i, j), w)| (i, j, ConstraintKind::SoftMustLink, w));
        let scl = self
            .scl
            .iter()
            .map(|&((i, j), w)| (i, j, ConstraintKind::SoftCannotLink, w));
        ml.chain(cl).chain(sml).chain(scl)
    }

    /// Largest index referenced by any constraint.
    pub fn max_index(&self) -> Option<usize> {
        self.records().map(|(_, j, _, _)| j).max()
    }

    /// Re-type constraint classes. `Hard` turns soft records of that class
    /// into hard ones (dropping the weight); `Soft` turns hard records into
    /// soft ones with weight 1.
    pub fn with_modes(
        &self,
        ml_mode: Option<Hardness>,
        cl_mode: Option<Hardness>,
    ) -> ConstraintSet {
        let mut b = ConstraintSetBuilder::new();
        for (i, j, kind, w) in self.records() {
            let kind = match (kind, ml_mode, cl_mode) {
                (
                    ConstraintKind::MustLink | ConstraintKind::SoftMustLink,
                    Some(Hardness::Hard),
                    _,
                ) => ConstraintKind::MustLink,
                (
                    ConstraintKind::MustLink | ConstraintKind::SoftMustLink,
                    Some(Hardness::Soft),
                    _,
                ) => ConstraintKind::SoftMustLink,
                (
                    ConstraintKind::CannotLink | ConstraintKind::SoftCannotLink,
                    _,
                    Some(Hardness::Hard),
                ) => ConstraintKind::CannotLink,
                (
                    ConstraintKind::CannotLink | ConstraintKind::SoftCannotLink,
                    _,
                    Some(Hardness::Soft),
                ) => ConstraintKind::SoftCannotLink,
                (k, _, _) => k,
            };
            b.add(i, j, kind, w);
        }
        b.build()
    }
}

/// Parse constraint records from text. See the module docs for the format.
pub fn parse_constraints(reader: impl BufRead, n: usize) -> Result<ConstraintSet, InstanceError> {
    let mut builder = ConstraintSetBuilder::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split([',', '\t']).map(str::trim).collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(InstanceError::MalformedRecord {
                line: lineno,
                record: trimmed.into(),
            });
        }
        let (Ok(i), Ok(j)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) else {
            if lineno == 1 && fields[0].parse::<f64>().is_err() {
                // header row
                continue;
            }
            return Err(InstanceError::MalformedRecord {
                line: lineno,
                record: trimmed.into(),
            });
        };
        let kind: ConstraintKind = fields[2].parse().map_err(|_| InstanceError::UnknownType {
            line: lineno,
            value: fields[2].into(),
        })?;
        for index in [i, j] {
            if index >= n {
                return Err(InstanceError::IndexOutOfRange {
                    line: lineno,
                    index,
                    n,
                });
            }
        }
        if i == j {
            return Err(InstanceError::SelfPair {
                line: lineno,
                index: i,
            });
        }
        let weight = match fields.get(3).filter(|s| !s.is_empty()) {
            Some(s) => {
                let w = s
                    .parse::<f64>()
                    .map_err(|_| InstanceError::MalformedRecord {
                        line: lineno,
                        record: trimmed.into(),
                    })?;
                if !(w > 0.0 && w <= 1.0) {
                    return Err(InstanceError::BadWeight {
                        line: lineno,
                        weight: w,
                    });
                }
                w
            }
            None if kind.is_soft() => return Err(InstanceError::MissingWeight { line: lineno }),
            None => 1.0,
        };
        builder.add(i, j, kind, weight);
    }
    Ok(builder.build())
}

pub fn load_constraints(path: impl AsRef<Path>, n: usize) -> Result<ConstraintSet, InstanceError> {
    parse_constraints(BufReader::new(File::open(path)?), n)
}

pub fn format_constraints(constraints: &ConstraintSet) -> String {
    let mut out = String::new();
    for (i, j, kind, w) in constraints.records() {
        if kind.is_soft() {
            out.push_str(&format!("{i},{j},{},{w}\n", kind.as_str()));
        } else {
            out.push_str(&format!("{i},{j},{}\n", kind.as_str()));
        }
    }
    out
}

pub fn write_constraints(
    path: impl AsRef<Path>,
    constraints: &ConstraintSet,
) -> Result<(), InstanceError> {
    std::fs::write(path, format_constraints(constraints))?;
    Ok(())
}

/// Number of candidate clusters per node in the assignment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QSetting {
    /// Every node may join every cluster.
    #[default]
    Full,
    /// Each node may join only its `q` nearest clusters.
    Nearest(usize),
}

impl fmt::Display for QSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QSetting::Full => f.write_str("full"),
            QSetting::Nearest(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for QSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(QSetting::Full);
        }
        match s.parse::<usize>() {
            Ok(q) if q >= 1 => Ok(QSetting::Nearest(q)),
            _ => Err(format!(
                "q must be a positive integer or \"full\", got {s:?}"
            )),
        }
    }
}

/// Penalty parameter for soft-constraint violations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PenaltyMode {
    /// Mean squared distance over admissible node/cluster pairs, recomputed
    /// each iteration.
    #[default]
    Auto,
    /// Maximum squared distance over admissible pairs, recomputed each
    /// iteration.
    MaxDist,
    /// Constant user-supplied value.
    Fixed(f64),
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyMode::Auto => f.write_str("auto"),
            PenaltyMode::MaxDist => f.write_str("max-dist"),
            PenaltyMode::Fixed(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for PenaltyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(PenaltyMode::Auto),
            "max-dist" | "maxdist" | "max_dist" => Ok(PenaltyMode::MaxDist),
            other => match other.parse::<f64>() {
                Ok(p) if p.is_finite() && p > 0.0 => Ok(PenaltyMode::Fixed(p)),
                _ => Err(format!(
                    "penalty must be auto, max-dist or a positive number, got {s:?}"
                )),
            },
        }
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let v = serde_json::Value::deserialize(d)?;
                let s = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    other => {
                        return Err(serde::de::Error::custom(format!(
                            "unexpected value {other}"
                        )))
                    }
                };
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(QSetting);
string_serde!(PenaltyMode);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Random,
    #[default]
    #[serde(rename = "kmeans++")]
    KMeansPlusPlus,
}

impl FromStr for InitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "kmeans++" | "k-means++" | "kmeanspp" => Ok(Self::KMeansPlusPlus),
            other => Err(format!("expected random or kmeans++, got {other:?}")),
        }
    }
}

/// Parameters of one clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    pub q: QSetting,
    pub penalty: PenaltyMode,
    pub init: InitMethod,
    pub seed: u64,
    pub repetitions: usize,
    /// Cap on assign/update iterations per descent.
    pub max_iterations: usize,
    pub time_limit_s: f64,
    pub solver_time_limit_s: f64,
    /// Cluster repositionings per repetition; `None` means `2k`.
    pub reposition_limit: Option<usize>,
    /// Number of critical nodes receiving extra candidate clusters.
    pub gamma: usize,
    /// Extra candidate clusters per critical node (capped at `k - q`).
    pub delta: usize,
    pub ml_mode: Option<Hardness>,
    pub cl_mode: Option<Hardness>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 2,
            q: QSetting::Full,
            penalty: PenaltyMode::Auto,
            init: InitMethod::KMeansPlusPlus,
            seed: 0,
            repetitions: 1,
            max_iterations: 100,
            time_limit_s: 1800.0,
            solver_time_limit_s: 30.0,
            reposition_limit: None,
            gamma: 500,
            delta: 10,
            ml_mode: None,
            cl_mode: None,
        }
    }
}

impl RunConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn effective_reposition_limit(&self) -> usize {
        self.reposition_limit.unwrap_or(2 * self.k)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let bad = |m: String| Err(InstanceError::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if let QSetting::Nearest(q) = self.q {
            if q == 0 || q > self.k {
                return bad(format!("q = {q} must lie in 1..={}", self.k));
            }
        }
        if let PenaltyMode::Fixed(p) = self.penalty {
            if !(p.is_finite() && p > 0.0) {
                return bad(format!("penalty {p} must be positive"));
            }
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.time_limit_s > 0.0) || !(self.solver_time_limit_s > 0.0) {
            return bad("time limits must be positive".into());
        }
        Ok(())
    }
}

/// JSON report of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub status: String,
    pub labels: Vec<usize>,
    pub objective: Option<f64>,
    pub inertia: Option<f64>,
    pub ari: Option<f64>,
    pub silhouette: Option<f64>,
    pub violations: ViolationCounts,
    pub penalty: Option<f64>,
    pub penalty_total: Option<f64>,
    pub runtime_s: f64,
    pub seed: u64,
    pub config: RunConfig,
    #[serde(default)]
    pub solver: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<String>,
}

impl Report {
    pub fn from_solution(
        solution: &crate::engine::Solution,
        metrics: &MetricsBundle,
        config: &RunConfig,
        runtime_s: f64,
    ) -> Self {
        Self {
            status: "ok".into(),
            labels: solution.labels.clone(),
            objective: Some(solution.objective),
            inertia: Some(metrics.inertia),
            ari: metrics.ari,
            silhouette: metrics.silhouette,
            violations: metrics.violations,
            penalty: Some(solution.penalty),
            penalty_total: Some(metrics.penalty_total),
            runtime_s,
            seed: config.seed,
            config: config.clone(),
            solver: serde_json::to_value(&solution.stats).ok(),
            error: None,
        }
    }

    /// Report for a run that produced no solution; ARI 0 and Silhouette -1
    /// are the aggregate sentinels.
    pub fn failure(status: &str, error: String, config: &RunConfig, runtime_s: f64) -> Self {
        Self {
            status: status.into(),
            labels: Vec::new(),
            objective: None,
            inertia: None,
            ari: Some(0.0),
            silhouette: Some(-1.0),
            violations: ViolationCounts::default(),
            penalty: None,
            penalty_total: None,
            runtime_s,
            seed: config.seed,
            config: config.clone(),
            solver: None,
            error: Some(error),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == "ok"
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report, InstanceError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
