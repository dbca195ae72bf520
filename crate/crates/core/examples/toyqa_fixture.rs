//! Regenerates `data/toyqa.bhft`, the checked-in toy-QA feature file.
//!
//! No pretrained encoder is involved: each (question, option) pair is mapped
//! to a 768-wide vector by hashing its word unigrams and bigrams into fixed
//! random directions, so the file can be rebuilt anywhere without downloads.
//! Files from a real encoder use the same layout and can replace it.
//!
//!     cargo run -p bayeshead-core --example toyqa_fixture [-- OUT]

use bayeshead_core::data::{to_feature_binary, Dataset, SplitMix64};
use bayeshead_core::bundled;

const WIDTH: usize = 768;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn add_direction(acc: &mut [f64], feature: &str, weight: f64) {
    let mut rng = SplitMix64::new(fnv1a(feature.as_bytes()));
    for v in acc.iter_mut() {
        // uniform in [-1, 1) from the top 53 bits
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        *v += weight * (2.0 * u - 1.0);
    }
}

fn encode(question: &str, option: &str) -> Vec<f64> {
    let mut acc = vec![0.0; WIDTH];
    let q = words(question);
    let o = words(option);
    for w in &q {
        add_direction(&mut acc, &format!("q:{w}"), 1.0);
    }
    for w in &o {
        add_direction(&mut acc, &format!("o:{w}"), 1.0);
    }
    for pair in o.windows(2) {
        add_direction(&mut acc, &format!("o2:{} {}", pair[0], pair[1]), 1.0);
    }
    // question-option interaction terms
    for a in &q {
        for b in &o {
            add_direction(&mut acc, &format!("x:{a}|{b}"), 0.5);
        }
    }
    // unit vectors scaled so entries have spread near 0.5
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let scale = 0.5 * (WIDTH as f64).sqrt() / norm;
    acc.iter().map(|v| ((v * scale) as f32) as f64).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/toyqa.bhft").to_string());
    let records = bundled::toyqa_records()?;
    let c = records[0].options.len();
    let mut features = Vec::with_capacity(records.len() * c * WIDTH);
    for r in &records {
        for o in &r.options {
            features.extend(encode(&r.question, o));
        }
    }
    let labels = records.iter().map(|r| r.label).collect();
    let ds = Dataset::new(features, c * WIDTH, labels, c)?;
    std::fs::write(&out, to_feature_binary(&ds)?)?;
    println!("wrote {out}: N={} D={} C={}", ds.len(), ds.n_features(), ds.n_classes());
    Ok(())
}
