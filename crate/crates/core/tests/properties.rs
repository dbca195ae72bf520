use proptest::prelude::*;

use bayeshead_core::data::{
    reduce_options, split, standardize, to_csv, to_feature_binary, parse_csv, parse_feature_binary,
    Dataset, FiveOptionRecord, SplitSpec,
};
use bayeshead_core::eval::{accuracy_coverage, ece, reliability};
use bayeshead_core::laplace::{empirical_fisher_diag, laplace_posterior};
use bayeshead_core::model::{
    log_likelihood, log_posterior, log_posterior_and_grad, per_example_grad_loglik, softmax, Architecture, Model,
    ParamVector, Prior,
};
use bayeshead_core::predict::PredictiveSummary;
use bayeshead_core::Execution;

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        (1usize..5, 1usize..6, 2usize..5).prop_map(|(d, h, c)| Architecture::mlp(d, h, c).unwrap()),
        (1usize..6, 2usize..5).prop_map(|(d, c)| Architecture::head(d, c).unwrap()),
    ]
}

/// Architecture, parameters and a small dataset that fits it.
fn problem() -> impl Strategy<Value = (Architecture, Vec<f64>, Dataset)> {
    arch_strategy().prop_flat_map(|arch| {
        let p = arch.n_params();
        let d = arch.input_dim();
        let c = arch.n_classes();
        (
            Just(arch),
            prop::collection::vec(-1.5f64..1.5, p),
            (1usize..12).prop_flat_map(move |n| {
                (
                    prop::collection::vec(-2.0f64..2.0, n * d),
                    prop::collection::vec(0..c, n),
                )
            }),
        )
            .prop_map(move |(arch, theta, (x, y))| {
                let ds = Dataset::new(x, d, y, c).unwrap();
                (arch, theta, ds)
            })
    })
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..20, 1usize..5, 2usize..5).prop_flat_map(|(n, d, c)| {
        (
            prop::collection::vec(-1e3f64..1e3, n * d),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(x, y)| Dataset::new(x, d, y, c).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_gradient_matches_central_differences((arch, theta, ds) in problem()) {
        let prior = Prior::new(1.3).unwrap();
        let (_, grad) = log_posterior_and_grad(&arch, &theta, &ds, &prior, Execution::Sequential).unwrap();
        let h = 1e-5;
        let mut t = theta.clone();
        for j in 0..theta.len() {
            t[j] = theta[j] + h;
            let up = log_posterior(&arch, &t, &ds, &prior).unwrap();
            t[j] = theta[j] - h;
            let down = log_posterior(&arch, &t, &ds, &prior).unwrap();
            t[j] = theta[j];
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1.0);
            prop_assert!(rel < 1e-5, "coordinate {j}: analytic {} fd {fd}", grad[j]);
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-700.0f64..700.0, 1..8), shift in -50.0f64..50.0) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_is_permutation_invariant((arch, theta, ds) in problem(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = log_likelihood(&arch, &theta, &ds, Execution::Sequential).unwrap();
        let b = log_likelihood(&arch, &theta, &ds.select(&idx), Execution::Sequential).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise((arch, theta, ds) in problem()) {
        let prior = Prior::default();
        let s = log_posterior_and_grad(&arch, &theta, &ds, &prior, Execution::Sequential).unwrap();
        let p = log_posterior_and_grad(&arch, &theta, &ds, &prior, Execution::Parallel).unwrap();
        prop_assert_eq!(s.0.to_bits(), p.0.to_bits());
        prop_assert_eq!(s.1, p.1);
    }

    #[test]
    fn fisher_matches_brute_force((arch, theta, ds) in problem()) {
        let fisher = empirical_fisher_diag(&arch, &theta, &ds).unwrap();
        let mut brute = vec![0.0; theta.len()];
        for i in 0..ds.len() {
            let g = per_example_grad_loglik(&arch, &theta, ds.row(i), ds.label(i)).unwrap();
            for (b, gj) in brute.iter_mut().zip(&g) {
                *b += gj * gj;
            }
        }
        for (f, b) in fisher.iter().zip(&brute) {
            let b = b / ds.len() as f64;
            prop_assert!((f - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn laplace_variance_never_exceeds_prior((arch, theta, ds) in problem(), std in 0.1f64..5.0) {
        let prior = Prior::new(std).unwrap();
        let fisher = empirical_fisher_diag(&arch, &theta, &ds).unwrap();
        let map = ParamVector::new(theta, arch.layout()).unwrap();
        let post = laplace_posterior(&map, &fisher, &prior, ds.len(), 1e-8).unwrap();
        for v in &post.variance {
            prop_assert!(*v > 0.0 && *v <= std * std * (1.0 + 1e-12));
        }
    }

    #[test]
    fn split_is_a_partition(ds in dataset(), f in 0.05f64..0.95, seed in any::<u64>()) {
        let spec = SplitSpec { train_fraction: f, seed };
        match split(&ds, spec) {
            Ok((train, test)) => {
                prop_assert_eq!(train.len() + test.len(), ds.len());
                let mut ids: Vec<usize> = train.row_ids().iter().chain(test.row_ids()).copied().collect();
                ids.sort_unstable();
                prop_assert_eq!(ids, (0..ds.len()).collect::<Vec<_>>());
                let again = split(&ds, spec).unwrap();
                prop_assert_eq!(again.0.row_ids(), train.row_ids());
            }
            Err(_) => {
                let n_train = (ds.len() as f64 * f).round() as usize;
                prop_assert!(n_train == 0 || n_train >= ds.len());
            }
        }
    }

    #[test]
    fn csv_and_binary_round_trip(ds in dataset()) {
        let bin = to_feature_binary(&ds).unwrap();
        let back = parse_feature_binary(&bin, "mem").unwrap();
        for (a, b) in ds.features().iter().zip(back.features()) {
            prop_assert_eq!((*a as f32) as f64, *b);
        }
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(to_feature_binary(&back).unwrap(), bin);

        let csv = to_csv(&ds).unwrap();
        let back = parse_csv(&csv, "mem").unwrap();
        prop_assert_eq!(back.n_classes(), ds.n_classes());
        prop_assert_eq!(back.labels(), ds.labels());
        for (a, b) in ds.features().iter().zip(back.features()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn standardized_train_has_unit_columns(ds in dataset().prop_filter("two rows", |d| d.len() >= 2)) {
        let (train, _, stats) = standardize(&ds, &ds).unwrap();
        let n = train.len() as f64;
        for j in 0..train.n_features() {
            let col: Vec<f64> = (0..train.len()).map(|i| train.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-9);
            if stats.std[j] != 1.0 || stats.mean[j] != 0.0 {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let (twice, _, _) = standardize(&train, &train).unwrap();
        for (a, b) in twice.features().iter().zip(train.features()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reduction_keeps_text_and_answer(answer in 0usize..5, seed in any::<u64>()) {
        let options: Vec<String> = (0..5).map(|i| format!("option {i}")).collect();
        let row = FiveOptionRecord {
            question: "q".into(),
            options: options.clone(),
            correct: (0..5).map(|i| i == answer).collect(),
        };
        let out = reduce_options(&row, seed).unwrap();
        prop_assert_eq!(out.options.len(), 3);
        prop_assert_eq!(&out.options[out.label], &options[answer]);
        prop_assert!(out.options.iter().all(|o| options.contains(o)));
        let mut uniq = out.options.clone();
        uniq.sort();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), 3);
    }

    #[test]
    fn coverage_matches_brute_force(
        items in prop::collection::vec((prop::collection::vec(-4.0f64..4.0, 3), 0usize..3), 1..50),
        taus in prop::collection::vec(0.0f64..=1.0, 1..10),
    ) {
        let summaries: Vec<PredictiveSummary> = items
            .iter()
            .map(|(z, _)| PredictiveSummary::from_probabilities(&[softmax(z)]).unwrap())
            .collect();
        let labels: Vec<usize> = items.iter().map(|(_, y)| *y).collect();
        let mut taus = taus;
        taus.sort_by(f64::total_cmp);
        let curve = accuracy_coverage(&summaries, &labels, Some(&taus)).unwrap();
        for (p, &tau) in curve.points.iter().zip(&taus) {
            let kept: Vec<(&PredictiveSummary, usize)> = summaries
                .iter()
                .zip(labels.iter().copied())
                .filter(|(s, _)| s.confidence >= tau)
                .collect();
            prop_assert_eq!(p.coverage, kept.len() as f64 / summaries.len() as f64);
            let acc = (!kept.is_empty()).then(|| {
                kept.iter().filter(|(s, y)| s.predicted == *y).count() as f64 / kept.len() as f64
            });
            prop_assert_eq!(p.selective_accuracy, acc);
        }
        let e = ece(&reliability(&summaries, &labels, 10).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }
}
