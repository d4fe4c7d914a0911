//! Feature tables on disk (CSV or a compact binary form) and seeded
//! stratified splits.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::ExtractionConfig;
use crate::features::{
    feature_names, feature_order_hash, FeatureError, FeatureVector, FEATURE_DIM,
};

const CSV_TAG: &str = "# trafficlens-features";
const BINARY_MAGIC: &[u8; 8] = b"TLFEAT\0\0";
const FORMAT_VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("feature file: {0}")]
    Format(String),
    #[error("feature order {found} does not match this build ({expected})")]
    FeatureOrderMismatch { expected: String, found: String },
    #[error("row {row}: {source}")]
    Row { row: usize, source: FeatureError },
    #[error("{0} rows have no label")]
    Unlabeled(usize),
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
}

fn format_err(msg: impl Into<String>) -> DatasetError {
    DatasetError::Format(msg.into())
}

/// Feature rows with optional labels and the extraction settings that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub extraction: ExtractionConfig,
    pub rows: Vec<FeatureVector>,
    pub labels: Vec<Option<String>>,
}

/// Labeled rows with labels mapped to indices of sorted class names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub classes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            classes: self.classes.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

impl FeatureTable {
    pub fn new(
        extraction: ExtractionConfig,
        rows: Vec<FeatureVector>,
        labels: Vec<Option<String>>,
    ) -> Result<Self, DatasetError> {
        if rows.len() != labels.len() {
            return Err(DatasetError::LengthMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        Ok(Self {
            extraction,
            rows,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Window count per label, sorted by label; unlabeled rows under `None`.
    pub fn label_counts(&self) -> Vec<(Option<String>, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for l in &self.labels {
            *counts.entry(l.clone()).or_insert(0) += 1;
        }
        counts.into_iter().collect()
    }

    /// Requires every row to be labeled.
    pub fn labeled(&self) -> Result<LabeledData, DatasetError> {
        let missing = self.labels.iter().filter(|l| l.is_none()).count();
        if missing > 0 {
            return Err(DatasetError::Unlabeled(missing));
        }
        let classes: Vec<String> = self
            .labels
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        self.labeled_with(&classes)
    }

    /// Maps labels onto a given class list; rows with other labels are an
    /// error.
    pub fn labeled_with(&self, classes: &[String]) -> Result<LabeledData, DatasetError> {
        let labels = self
            .labels
            .iter()
            .map(|l| {
                let l = l.as_ref().ok_or(DatasetError::Unlabeled(1))?;
                classes
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| format_err(format!("label {l} is not one of {classes:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LabeledData {
            classes: classes.to_vec(),
            rows: self.rows.iter().map(|r| r.as_slice().to_vec()).collect(),
            labels,
        })
    }

    /// Writes CSV when the path ends in `.csv`, the binary form otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path)?);
        if is_csv(path) {
            self.write_csv(&mut out)?;
        } else {
            self.write_binary(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        if is_csv(path) {
            Self::read_csv(reader)
        } else {
            Self::read_binary(reader)
        }
    }

    fn extraction_json(&self) -> String {
        serde_json::to_string(&self.extraction).expect("extraction config serializes")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), DatasetError> {
        writeln!(
            out,
            "{CSV_TAG} version={FORMAT_VERSION} order={} extraction={}",
            feature_order_hash(),
            self.extraction_json()
        )?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = feature_names().iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut fields: Vec<String> = row.as_slice().iter().map(f64::to_string).collect();
            fields.push(label.clone().unwrap_or_default());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self, DatasetError> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let rest = first
            .trim_end()
            .strip_prefix(CSV_TAG)
            .ok_or_else(|| format_err("missing trafficlens-features comment line"))?;
        let mut version = None;
        let mut order = None;
        // extraction JSON is last and may contain spaces
        let (head, json) = rest
            .split_once(" extraction=")
            .ok_or_else(|| format_err("missing extraction settings"))?;
        for part in head.split_whitespace() {
            match part.split_once('=') {
                Some(("version", v)) => version = v.parse::<u32>().ok(),
                Some(("order", v)) => order = Some(v.to_string()),
                _ => return Err(format_err(format!("unexpected header field {part}"))),
            }
        }
        if version != Some(FORMAT_VERSION) {
            return Err(format_err(format!("unsupported version {version:?}")));
        }
        check_order(order.as_deref().unwrap_or(""))?;
        let extraction = serde_json::from_str(json).map_err(|e| format_err(e.to_string()))?;

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let headers = reader.headers()?.clone();
        let names = feature_names();
        if headers.len() != FEATURE_DIM + 1
            || headers.iter().zip(names).any(|(h, n)| h != n)
            || &headers[FEATURE_DIM] != "label"
        {
            return Err(format_err("column header does not match the feature order"));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let values = rec
                .iter()
                .take(FEATURE_DIM)
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format_err(format!("row {}: {e}", i + 1)))?;
            rows.push(
                FeatureVector::new(values)
                    .map_err(|source| DatasetError::Row { row: i + 1, source })?,
            );
            let label = &rec[FEATURE_DIM];
            labels.push((!label.is_empty()).then(|| label.to_string()));
        }
        Self::new(extraction, rows, labels)
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<(), DatasetError> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str(&mut out, &feature_order_hash())?;
        write_str(&mut out, &self.extraction_json())?;
        out.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        out.write_all(&(FEATURE_DIM as u32).to_le_bytes())?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            for v in row.as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
            match label {
                Some(l) => write_str(&mut out, l)?,
                None => out.write_all(&NO_LABEL.to_le_bytes())?,
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self, DatasetError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(format_err("not a trafficlens binary feature file"));
        }
        let version = read_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        check_order(&read_str(&mut input)?.ok_or_else(|| format_err("missing feature order"))?)?;
        let json =
            read_str(&mut input)?.ok_or_else(|| format_err("missing extraction settings"))?;
        let extraction = serde_json::from_str(&json).map_err(|e| format_err(e.to_string()))?;
        let mut n = [0u8; 8];
        input.read_exact(&mut n)?;
        let n = u64::from_le_bytes(n) as usize;
        let dim = read_u32(&mut input)? as usize;
        if dim != FEATURE_DIM {
            return Err(format_err(format!(
                "dimension {dim}, expected {FEATURE_DIM}"
            )));
        }
        let mut rows = Vec::with_capacity(n.min(1 << 20));
        let mut labels = Vec::with_capacity(n.min(1 << 20));
        let mut buf = [0u8; 8];
        for row in 0..n {
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                input.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            rows.push(
                FeatureVector::new(values).map_err(|source| DatasetError::Row {
                    row: row + 1,
                    source,
                })?,
            );
            labels.push(read_str(&mut input)?);
        }
        Self::new(extraction, rows, labels)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn check_order(found: &str) -> Result<(), DatasetError> {
    let expected = feature_order_hash();
    if found != expected {
        return Err(DatasetError::FeatureOrderMismatch {
            expected,
            found: found.to_string(),
        });
    }
    Ok(())
}

fn write_str<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Length-prefixed UTF-8; the `NO_LABEL` length marks an absent string.
fn read_str<R: Read>(input: &mut R) -> Result<Option<String>, DatasetError> {
    let len = read_u32(input)?;
    if len == NO_LABEL {
        return Ok(None);
    }
    let mut bytes = vec![0u8; len as usize];
    input.read_exact(&mut bytes)?;
    String::from_utf8(bytes)
        .map(Some)
        .map_err(|_| format_err("string is not UTF-8"))
}

/// Splits indices per class, holding out `round(fraction · n_k)` of each
/// class (at least one when the class has two or more members). Both
/// halves come back sorted.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for mut members in by_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let mut h = (fraction * n as f64).round() as usize;
        if n >= 2 {
            h = h.clamp(1, n - 1);
        } else {
            h = 0;
        }
        held.extend_from_slice(&members[..h]);
        keep.extend_from_slice(&members[h..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (keep, held)
}
