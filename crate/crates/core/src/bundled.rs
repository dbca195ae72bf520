//! Datasets compiled into the library.

use crate::data::{parse_qa_jsonl, parse_feature_binary, parse_csv, Dataset, QaRecord};
use crate::error::Result;

pub const IRIS_CSV: &str = include_str!("../data/iris.csv");
pub const TOYQA_JSONL: &str = include_str!("../data/toyqa.jsonl");
/// Stand-in features for the toy-QA records: three 768-wide option blocks per row.
pub const TOYQA_BHFT: &[u8] = include_bytes!("../data/toyqa.bhft");

pub const IRIS_CLASSES: [&str; 3] = ["setosa", "versicolor", "virginica"];

pub fn iris() -> Result<Dataset> {
    parse_csv(IRIS_CSV.as_bytes(), "<bundled iris.csv>")
}

pub fn toyqa_records() -> Result<Vec<QaRecord>> {
    parse_qa_jsonl(TOYQA_JSONL, "<bundled toyqa.jsonl>")
}

/// Toy-QA features with question and option text attached as row metadata.
pub fn toyqa() -> Result<Dataset> {
    let ds = parse_feature_binary(TOYQA_BHFT, "<bundled toyqa.bhft>")?;
    let meta = toyqa_records()?
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_meta(Some(format!("toyqa-{i}"))))
        .collect();
    ds.with_meta(meta)
}
