use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use bayeshead_core::bundled;
use bayeshead_core::data::{reduce_options, FiveOptionRecord};
use bayeshead_core::eval::{accuracy_coverage, reliability};
use bayeshead_core::model::{Architecture, Model, Prior};
use bayeshead_core::predict::PredictiveSummary;
use bayeshead_core::report::{
    marginal_1d, marginal_2d, render_coverage, render_entry, render_marginal_1d, render_marginal_2d,
    render_reliability, Figure,
};
use bayeshead_core::sampler::SampleChain;

fn manifest_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

#[derive(Deserialize)]
struct ReduceCase {
    question: String,
    options: Vec<String>,
    correct: Vec<bool>,
    seed: u64,
    expected_options: Vec<String>,
    expected_label: usize,
}

#[test]
fn reduce_options_matches_shared_vectors() {
    let text = std::fs::read_to_string(manifest_path("tests/fixtures/reduce_vectors.jsonl")).unwrap();
    let cases: Vec<ReduceCase> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 50);
    for case in cases {
        let row = FiveOptionRecord {
            question: case.question.clone(),
            options: case.options,
            correct: case.correct,
        };
        let out = reduce_options(&row, case.seed).unwrap();
        assert_eq!(out.options, case.expected_options, "{} seed {}", case.question, case.seed);
        assert_eq!(out.label, case.expected_label);
    }
}

#[test]
fn bundled_iris() {
    let ds = bundled::iris().unwrap();
    assert_eq!((ds.len(), ds.n_features(), ds.n_classes()), (150, 4, 3));
    assert_eq!(ds.class_counts(), vec![50, 50, 50]);
}

#[test]
fn bundled_toyqa() {
    let records = bundled::toyqa_records().unwrap();
    assert_eq!(records.len(), 30);
    let mut counts = [0usize; 3];
    for r in &records {
        assert_eq!(r.options.len(), 3);
        counts[r.label] += 1;
    }
    assert_eq!(counts, [13, 11, 6]);

    let ds = bundled::toyqa().unwrap();
    assert_eq!((ds.len(), ds.n_features(), ds.n_classes()), (30, 2304, 3));
    assert_eq!(ds.labels(), records.iter().map(|r| r.label).collect::<Vec<_>>());
    assert_eq!(ds.meta().unwrap()[4].question, records[4].question);
    assert_eq!(Architecture::head(ds.n_features(), 3).unwrap().n_params(), 6915);
    assert_eq!(Architecture::mlp(4, 8, 3).unwrap().n_params(), 67);
}

fn fixture_chain() -> SampleChain {
    let arch = Architecture::mlp(4, 8, 3).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let s = 2000;
    let mut draws = Vec::with_capacity(s * 67);
    for _ in 0..s {
        let shared: f64 = rng.sample(StandardNormal);
        for j in 0..67 {
            let e: f64 = rng.sample(StandardNormal);
            draws.push(if j == 1 { 0.8 * shared + 0.6 * e } else if j == 2 { shared } else { 0.5 * e + 0.1 * j as f64 });
        }
    }
    SampleChain {
        draws,
        n_samples: s,
        n_params: 67,
        accept_stats: vec![0.9; s],
        divergences: 0,
        step_size_final: 0.1,
        seed: 99,
        layout: arch.layout(),
    }
}

fn fixture_summaries() -> (Vec<PredictiveSummary>, Vec<PredictiveSummary>, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut sharp = Vec::new();
    let mut smooth = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..60 {
        let z: Vec<f64> = (0..3).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let p = bayeshead_core::model::softmax(&z);
        let u: f64 = rng.random();
        let y = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
        let zs: Vec<f64> = z.iter().map(|v| 3.0 * v).collect();
        sharp.push(PredictiveSummary::from_probabilities(&[bayeshead_core::model::softmax(&zs)]).unwrap());
        smooth.push(PredictiveSummary::from_probabilities(&[p]).unwrap());
        labels.push(y);
    }
    (sharp, smooth, labels)
}

fn golden_figures() -> Vec<(&'static str, Figure)> {
    let chain = fixture_chain();
    let (sharp, smooth, labels) = fixture_summaries();
    let m1 = marginal_1d(&chain, "W1[0,1]", Prior::default()).unwrap();
    let m2 = marginal_2d(&chain, "W1[0,1]", "W1[0,2]").unwrap();
    let r_sharp = reliability(&sharp, &labels, 10).unwrap();
    let r_smooth = reliability(&smooth, &labels, 10).unwrap();
    let c_sharp = accuracy_coverage(&sharp, &labels, None).unwrap();
    let c_smooth = accuracy_coverage(&smooth, &labels, None).unwrap();
    let entry = PredictiveSummary::from_probabilities(&[
        vec![0.6, 0.3, 0.1],
        vec![0.4, 0.5, 0.1],
        vec![0.7, 0.1, 0.2],
    ])
    .unwrap();
    let names: Vec<String> = ["Kyoto", "Tokyo", "Osaka"].iter().map(|s| s.to_string()).collect();
    vec![
        ("marginal_1d.svg", render_marginal_1d(&m1).unwrap()),
        ("marginal_2d.svg", render_marginal_2d(&m2).unwrap()),
        ("entry.svg", render_entry(2, &entry, 1, Some(&names)).unwrap()),
        (
            "reliability.svg",
            render_reliability(&[("sharp", &r_sharp), ("smooth", &r_smooth)]).unwrap(),
        ),
        (
            "coverage.svg",
            render_coverage(&[("sharp", &c_sharp), ("smooth", &c_smooth)]).unwrap(),
        ),
    ]
}

/// Compares rendered figures to the checked-in files. Set `UPDATE_GOLDEN=1`
/// to rewrite them.
#[test]
fn svg_figures_match_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (name, fig) in golden_figures() {
        let path = manifest_path("tests/golden").join(name);
        assert!(fig.svg.len() < 2 * 1024 * 1024);
        assert!(fig.svg.starts_with("<svg") && fig.svg.ends_with("</svg>\n"));
        if update {
            std::fs::write(&path, &fig.svg).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", path.display()));
        assert!(golden == fig.svg, "{name} differs from its golden file");
    }
}

#[test]
fn rendering_is_deterministic_and_writes_sidecars() {
    let a = golden_figures();
    let b = golden_figures();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    for (name, fig) in &a {
        let sidecar = fig.write(&dir.path().join(name)).unwrap();
        assert!(sidecar.extension().unwrap() == "csv");
        let csv = std::fs::read_to_string(sidecar).unwrap();
        assert!(csv.lines().count() > 1, "{name}");
    }
    let unwritable = dir.path().join("missing-dir").join("x.svg");
    assert!(a[0].1.write(&unwritable).is_err());
}
