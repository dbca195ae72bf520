//! Datasets: loading, splitting, standardization and multiple-choice option
//! reduction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_file, ByteReader, ByteWriter};

/// Per-row provenance for question-answering rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub question: String,
    pub options: Vec<String>,
    pub source_id: Option<String>,
}

/// Feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    n_classes: usize,
    row_ids: Vec<usize>,
    meta: Option<Vec<RowMeta>>,
}

impl Dataset {
    /// Builds a dataset from row-major features, checking every invariant.
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::invalid("dataset needs at least one feature column"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        if n_classes < 2 {
            return Err(Error::invalid(format!(
                "dataset needs at least 2 classes, got {n_classes}"
            )));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Dimension {
                context: "dataset features",
                expected: labels.len() * n_features,
                got: features.len(),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y >= n_classes) {
            return Err(Error::invalid(format!(
                "row {i}: label {} outside [0, {n_classes})",
                labels[i]
            )));
        }
        if let Some(k) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature",
                index: k / n_features,
            });
        }
        let row_ids = (0..labels.len()).collect();
        Ok(Dataset {
            features,
            n_features,
            labels,
            n_classes,
            row_ids,
            meta: None,
        })
    }

    pub fn with_meta(mut self, meta: Vec<RowMeta>) -> Result<Self> {
        if meta.len() != self.len() {
            return Err(Error::Dimension {
                context: "row metadata",
                expected: self.len(),
                got: meta.len(),
            });
        }
        self.meta = Some(meta);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Index of each row in the dataset it was originally loaded as.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn meta(&self) -> Option<&[RowMeta]> {
        self.meta.as_deref()
    }

    /// Rows selected by `indices`, in that order. Row ids and metadata follow
    /// their rows. Unlike [`Dataset::new`], an empty selection is allowed.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            n_features: self.n_features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
            meta: self
                .meta
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i].clone()).collect()),
        }
    }

    /// Same rows with every label count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn map_features(&self, f: impl Fn(usize, f64) -> f64) -> Dataset {
        let d = self.n_features;
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % d, v))
            .collect();
        Dataset {
            features,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    FeatureBinary,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "feature-binary" | "bhft" => Ok(DataFormat::FeatureBinary),
            other => Err(Error::invalid(format!(
                "unknown data format `{other}` (expected csv or feature-binary)"
            ))),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Csv => "csv",
            DataFormat::FeatureBinary => "feature-binary",
        })
    }
}

impl DataFormat {
    /// Guesses the format from a file extension (`.csv` or `.bhft`).
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "bhft" | "bin" => Some(DataFormat::FeatureBinary),
            _ => None,
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let origin = path.display().to_string();
    match format {
        DataFormat::Csv => parse_csv(&bytes, &origin),
        DataFormat::FeatureBinary => parse_feature_binary(&bytes, &origin),
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    let bytes = match format {
        DataFormat::Csv => to_csv(ds)?,
        DataFormat::FeatureBinary => to_feature_binary(ds)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

const FEATURE_MAGIC: &[u8; 4] = b"BHFT";

/// Parses the `label` header cell; `label[C]` additionally declares the class
/// count.
fn parse_label_header(cell: &str) -> Option<Option<usize>> {
    let cell = cell.trim();
    if cell == "label" {
        return Some(None);
    }
    let inner = cell.strip_prefix("label[")?.strip_suffix(']')?;
    inner.parse().ok().map(Some)
}

pub fn parse_csv(bytes: &[u8], origin: &str) -> Result<Dataset> {
    let format_err = |msg: String| Error::Format {
        path: origin.to_string(),
        msg,
    };
    let row_err = |row: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        row,
        msg,
    };
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(format_err("empty file".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| format_err(format!("malformed header: {e}")))?
        .clone();
    if header.len() < 2 {
        return Err(format_err(
            "malformed header: need at least one feature column and a final `label` column".into(),
        ));
    }
    let declared_classes = parse_label_header(&header[header.len() - 1]).ok_or_else(|| {
        format_err(format!(
            "malformed header: last column must be `label`, found `{}`",
            &header[header.len() - 1]
        ))
    })?;
    let d = header.len() - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(row_err(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for (j, cell) in record.iter().take(d).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| row_err(row, format!("column `{}`: bad number `{cell}`", &header[j])))?;
            if !v.is_finite() {
                return Err(row_err(
                    row,
                    format!("column `{}`: non-finite feature `{cell}`", &header[j]),
                ));
            }
            features.push(v);
        }
        let cell = &record[d];
        let y: usize = cell
            .parse()
            .map_err(|_| row_err(row, format!("label `{cell}` is not a non-negative integer")))?;
        if let Some(c) = declared_classes {
            if y >= c {
                return Err(row_err(row, format!("label {y} outside [0, {c})")));
            }
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(format_err("no data rows".into()));
    }
    let n_classes = declared_classes.unwrap_or_else(|| labels.iter().max().unwrap() + 1);
    Dataset::new(features, d, labels, n_classes.max(2))
}

pub fn to_csv(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..ds.n_features()).map(|j| format!("x{j}")).collect();
    header.push(format!("label[{}]", ds.n_classes()));
    let csv_err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.len() {
        // `{:e}` uses the shortest representation that round-trips.
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| format!("{v:e}")).collect();
        rec.push(ds.label(i).to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv write: {e}")))
}

pub fn parse_feature_binary(bytes: &[u8], origin: &str) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes, origin);
    r.header(FEATURE_MAGIC)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let c = r.u32()? as usize;
    if n == 0 || d == 0 {
        return Err(r.err(format!("degenerate shape N={n}, D={d}")));
    }
    if c < 2 {
        return Err(r.err(format!("class count {c} < 2")));
    }
    let mut features = Vec::with_capacity(n.saturating_mul(d).min(1 << 28));
    for row in 0..n {
        for _ in 0..d {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: r.origin().to_string(),
                    row: row + 1,
                    msg: format!("non-finite feature {v}"),
                });
            }
            features.push(v as f64);
        }
    }
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let y = r.u32()? as usize;
        if y >= c {
            return Err(Error::Parse {
                path: r.origin().to_string(),
                row: row + 1,
                msg: format!("label {y} outside [0, {c})"),
            });
        }
        labels.push(y);
    }
    r.finish()?;
    Dataset::new(features, d, labels, c)
}

/// Encodes features as f32; values outside f32 range or precision are rounded.
pub fn to_feature_binary(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::with_header(FEATURE_MAGIC);
    w.len_u32(ds.len())?;
    w.len_u32(ds.n_features())?;
    w.len_u32(ds.n_classes())?;
    for &v in ds.features() {
        w.f32(v as f32);
    }
    for &y in ds.labels() {
        w.len_u32(y)?;
    }
    Ok(w.into_bytes())
}

/// Train/test partition settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Shuffles rows with a seeded generator and partitions them into
/// `round(N * train_fraction)` training rows and the rest.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {f}"
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * f).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!(
            "train_fraction {f} on {n} rows leaves an empty {} partition",
            if n_train == 0 { "train" } else { "test" }
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let (train, test) = idx.split_at(n_train);
    Ok((ds.select(train), ds.select(test)))
}

/// Per-feature affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics per column. Zero-variance columns get mean 0 and
    /// std 1 so they pass through unchanged.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.len() < 2 {
            return Err(Error::invalid("standardization needs at least 2 rows"));
        }
        let d = ds.n_features();
        let n = ds.len() as f64;
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let m = (0..ds.len()).map(|i| ds.row(i)[j]).sum::<f64>() / n;
            let var = (0..ds.len()).map(|i| (ds.row(i)[j] - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                mean[j] = 0.0;
                std[j] = 1.0;
            } else {
                mean[j] = m;
                std[j] = s;
            }
        }
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_features() != self.mean.len() {
            return Err(Error::Dimension {
                context: "standardization",
                expected: self.mean.len(),
                got: ds.n_features(),
            });
        }
        Ok(ds.map_features(|j, v| (v - self.mean[j]) / self.std[j]))
    }
}

/// Standardizes `train` to zero mean and unit population std per column and
/// applies the same transform to `test`.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardization)> {
    let stats = Standardization::fit(train)?;
    Ok((stats.apply(train)?, stats.apply(test)?, stats))
}

/// A multiple-choice question with its correct option index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub options: Vec<String>,
    pub label: usize,
}

impl QaRecord {
    pub fn to_meta(&self, source_id: Option<String>) -> RowMeta {
        RowMeta {
            question: self.question.clone(),
            options: self.options.clone(),
            source_id,
        }
    }
}

/// Reads JSON-lines `{"question": str, "options": [str], "label": int}`.
/// Every record must have the same option count and an in-range label.
pub fn load_qa_jsonl(path: &Path) -> Result<Vec<QaRecord>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format {
        path: path.display().to_string(),
        msg: "not UTF-8".into(),
    })?;
    parse_qa_jsonl(text, &path.display().to_string())
}

pub fn parse_qa_jsonl(text: &str, origin: &str) -> Result<Vec<QaRecord>> {
    let mut out: Vec<QaRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |msg: String| Error::Parse {
            path: origin.to_string(),
            row: i + 1,
            msg,
        };
        let rec: QaRecord = serde_json::from_str(line).map_err(|e| row_err(e.to_string()))?;
        if rec.options.len() < 2 {
            return Err(row_err("need at least 2 options".into()));
        }
        if rec.label >= rec.options.len() {
            return Err(row_err(format!(
                "label {} outside [0, {})",
                rec.label,
                rec.options.len()
            )));
        }
        if let Some(first) = out.first() {
            if first.options.len() != rec.options.len() {
                return Err(row_err(format!(
                    "{} options, earlier records have {}",
                    rec.options.len(),
                    first.options.len()
                )));
            }
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Format {
            path: origin.to_string(),
            msg: "no records".into(),
        });
    }
    Ok(out)
}

/// A five-option question before reduction, with one correctness flag per
/// option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiveOptionRecord {
    pub question: String,
    pub options: Vec<String>,
    pub correct: Vec<bool>,
}

impl From<&QaRecord> for FiveOptionRecord {
    fn from(r: &QaRecord) -> Self {
        FiveOptionRecord {
            question: r.question.clone(),
            options: r.options.clone(),
            correct: (0..r.options.len()).map(|i| i == r.label).collect(),
        }
    }
}

/// SplitMix64. Used for option reduction because the exact draw sequence must
/// be reproducible outside Rust.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }
}

/// Keeps the correct option plus two distractors sampled uniformly without
/// replacement, placing the correct option at a uniformly drawn position.
///
/// Draw order (SplitMix64 seeded with `seed`): the correct position in
/// `[0, 3)`, then the first distractor among the 4 in original order, then the
/// second among the remaining 3. Distractors fill the free slots in draw order.
pub fn reduce_options(row: &FiveOptionRecord, seed: u64) -> Result<QaRecord> {
    if row.options.len() != 5 || row.correct.len() != 5 {
        return Err(Error::invalid(format!(
            "expected 5 options with 5 correctness flags, got {} and {}",
            row.options.len(),
            row.correct.len()
        )));
    }
    let correct: Vec<usize> = (0..5).filter(|&i| row.correct[i]).collect();
    let answer = match correct.as_slice() {
        [a] => *a,
        [] => return Err(Error::invalid("no option is marked correct")),
        many => {
            return Err(Error::invalid(format!(
                "{} options are marked correct",
                many.len()
            )))
        }
    };
    let mut distractors: Vec<usize> = (0..5).filter(|&i| i != answer).collect();
    let mut rng = SplitMix64::new(seed);
    let pos = rng.below(3) as usize;
    let first = distractors.remove(rng.below(4) as usize);
    let second = distractors.remove(rng.below(3) as usize);

    let mut picks = [first, second].into_iter();
    let options = (0..3)
        .map(|slot| {
            let src = if slot == pos { answer } else { picks.next().unwrap() };
            row.options[src].clone()
        })
        .collect();
    Ok(QaRecord {
        question: row.question.clone(),
        options,
        label: pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, d: usize, c: usize) -> Dataset {
        let features = (0..n * d).map(|k| k as f64 * 0.5 - 3.0).collect();
        let labels = (0..n).map(|i| i % c).collect();
        Dataset::new(features, d, labels, c).unwrap()
    }

    #[test]
    fn csv_label_equal_to_declared_c_names_row() {
        let text = "a,b,label[3]\n1,2,0\n3,4,3\n";
        let err = parse_csv(text.as_bytes(), "t.csv").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn binary_label_equal_to_c_names_row() {
        let ds = toy(4, 2, 3);
        let mut bytes = to_feature_binary(&ds).unwrap();
        // last u32 label -> 3 == C
        let k = bytes.len() - 4;
        bytes[k..].copy_from_slice(&3u32.to_le_bytes());
        match parse_feature_binary(&bytes, "x.bhft").unwrap_err() {
            Error::Parse { row, msg, .. } => {
                assert_eq!(row, 4);
                assert!(msg.contains("label 3"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_csv(b"", "e.csv").unwrap_err(),
            Error::Format { .. }
        ));
        assert!(matches!(
            parse_csv(b"a,b,target\n1,2,0\n", "h.csv").unwrap_err(),
            Error::Format { .. }
        ));
        assert!(matches!(
            parse_csv(b"a,label\n", "n.csv").unwrap_err(),
            Error::Format { .. }
        ));
        match parse_csv(b"a,label\n1,0\nNaN,1\n", "f.csv").unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
        match parse_csv(b"a,label\n1,0\n2,-1\n", "l.csv").unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_infers_classes() {
        let ds = parse_csv(b"a,label\n1,0\n2,2\n", "i.csv").unwrap();
        assert_eq!(ds.n_classes(), 3);
    }

    #[test]
    fn binary_rejects_bad_magic_and_trailing() {
        let ds = toy(3, 2, 2);
        let mut bytes = to_feature_binary(&ds).unwrap();
        bytes.push(0);
        assert!(parse_feature_binary(&bytes, "t").is_err());
        bytes.pop();
        bytes[0] = b'X';
        assert!(parse_feature_binary(&bytes, "t").is_err());
        assert!(parse_feature_binary(&[], "t").is_err());
    }

    #[test]
    fn binary_layout_is_bit_exact() {
        let ds = Dataset::new(vec![1.0, -2.5], 2, vec![1], 3).unwrap();
        let bytes = to_feature_binary(&ds).unwrap();
        let mut expect = b"BHFT".to_vec();
        expect.extend_from_slice(&1u16.to_le_bytes());
        for v in [1u32, 2, 3] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(150, 2, 3);
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 7,
        };
        let (a, b) = split(&ds, spec).unwrap();
        assert_eq!((a.len(), b.len()), (120, 30));
        let (a2, b2) = split(&ds, spec).unwrap();
        assert_eq!(a.row_ids(), a2.row_ids());
        assert_eq!(b.row_ids(), b2.row_ids());
        let mut all: Vec<usize> = a.row_ids().iter().chain(b.row_ids()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..150).collect::<Vec<_>>());
    }

    #[test]
    fn split_degenerate_fractions() {
        let ds = toy(30, 2, 3);
        for f in [0.999, 0.0, 1.0, -0.1, 0.001] {
            let r = split(
                &ds,
                SplitSpec {
                    train_fraction: f,
                    seed: 1,
                },
            );
            assert!(r.is_err(), "fraction {f}");
        }
    }

    #[test]
    fn standardize_cases() {
        // constant column and {0, 2} column
        let ds = Dataset::new(vec![5.0, 0.0, 5.0, 2.0], 2, vec![0, 1], 2).unwrap();
        let (tr, te, stats) = standardize(&ds, &ds).unwrap();
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(tr.row(0), &[5.0, -1.0]);
        assert_eq!(tr.row(1), &[5.0, 1.0]);
        assert_eq!(te, tr);
    }

    #[test]
    fn standardize_is_idempotent() {
        let ds = toy(20, 3, 2).map_features(|j, v| (v * (j as f64 + 1.3)).sin() * 4.0 + 1.0);
        let (once, _, _) = standardize(&ds, &ds).unwrap();
        let (twice, _, _) = standardize(&once, &once).unwrap();
        for (a, b) in once.features().iter().zip(twice.features()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_needs_two_rows() {
        let ds = toy(1, 2, 2);
        assert!(standardize(&ds, &ds).is_err());
    }

    fn five() -> FiveOptionRecord {
        FiveOptionRecord {
            question: "q".into(),
            options: ["a", "b", "c", "d", "e"].map(String::from).to_vec(),
            correct: vec![false, false, true, false, false],
        }
    }

    #[test]
    fn reduce_preserves_answer_and_text() {
        let row = five();
        for seed in 0..1000 {
            let out = reduce_options(&row, seed).unwrap();
            assert_eq!(out.options.len(), 3);
            assert_eq!(out.options[out.label], "c");
            assert!(out.options.iter().all(|o| row.options.contains(o)));
        }
    }

    #[test]
    fn reduce_position_and_pair_uniformity() {
        let row = five();
        let trials = 30_000;
        let mut pos = [0usize; 3];
        let mut pairs = std::collections::BTreeMap::new();
        for seed in 0..trials {
            let out = reduce_options(&row, seed as u64 * 2654435761).unwrap();
            pos[out.label] += 1;
            let mut d: Vec<String> = out
                .options
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != out.label)
                .map(|(_, s)| s.clone())
                .collect();
            d.sort_unstable();
            *pairs.entry(d).or_insert(0usize) += 1;
        }
        for p in pos {
            assert!((p as f64 / trials as f64 - 1.0 / 3.0).abs() < 0.02);
        }
        assert_eq!(pairs.len(), 6);
        for &c in pairs.values() {
            assert!((c as f64 / trials as f64 - 1.0 / 6.0).abs() < 0.02);
        }
    }

    #[test]
    fn reduce_rejects_bad_marks() {
        let mut row = five();
        row.correct = vec![false; 5];
        assert!(reduce_options(&row, 0).is_err());
        row.correct = vec![true, true, false, false, false];
        assert!(reduce_options(&row, 0).is_err());
        row.options.pop();
        assert!(reduce_options(&row, 0).is_err());
    }

    #[test]
    fn splitmix_reference_values() {
        // Reference sequence for seed 1234567 from the published SplitMix64.
        let mut r = SplitMix64::new(1234567);
        assert_eq!(r.next_u64(), 6457827717110365317);
        assert_eq!(r.next_u64(), 3203168211198807973);
    }

    #[test]
    fn qa_jsonl_validation() {
        let good = r#"{"question":"q","options":["a","b","c"],"label":2}"#;
        assert_eq!(parse_qa_jsonl(good, "g").unwrap().len(), 1);
        let bad = r#"{"question":"q","options":["a","b","c"],"label":3}"#;
        assert!(parse_qa_jsonl(bad, "b").is_err());
        assert!(parse_qa_jsonl("", "e").is_err());
        let mixed = format!("{good}\n{}", r#"{"question":"q","options":["a","b"],"label":0}"#);
        assert!(parse_qa_jsonl(&mixed, "m").is_err());
    }
}
