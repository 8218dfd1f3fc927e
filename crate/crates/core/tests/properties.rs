//! Property tests for the module invariants: tokenizer purity and shape,
//! noise-table normalization, R² bounds, band geometry and downsampling
//! conservation.

use proptest::prelude::*;

use scorestream_core::metrics::evaluate_r_squared;
use scorestream_core::regression::Standardizer;
use scorestream_core::series::{downsample, rolling_bands, Aggregator};
use scorestream_core::tokenize;
use scorestream_core::vocab::{NoiseTable, Vocabulary};
use scorestream_core::Matrix;

proptest! {
    #[test]
    fn tokenize_is_pure_and_well_formed(s in ".{0,200}") {
        let a = tokenize(&s);
        let b = tokenize(&s);
        prop_assert_eq!(&a, &b);
        for t in &a {
            prop_assert!(!t.is_empty());
            prop_assert!(t.chars().all(|c| c.is_alphanumeric()));
            prop_assert!(!t.chars().any(|c| c.is_uppercase()));
        }
    }

    #[test]
    fn tokenize_case_insensitive_on_ascii(s in "[ -~]{0,200}") {
        prop_assert_eq!(tokenize(&s.to_uppercase()), tokenize(&s.to_lowercase()));
    }

    #[test]
    fn noise_probabilities_normalize(counts in prop::collection::vec(1u64..10_000, 1..60)) {
        let docs: Vec<Vec<String>> = vec![counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(format!("w{i}"), c as usize))
            .collect()];
        let vocab = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        let table = NoiseTable::build(&vocab);
        let sum: f64 = table.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum = {}", sum);
        prop_assert!(table.probs().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn r_squared_never_exceeds_one(
        y in prop::collection::vec(-1e3f64..1e3, 2..50),
        noise in prop::collection::vec(-1e3f64..1e3, 2..50),
    ) {
        let n = y.len().min(noise.len());
        let pred: Vec<f64> = (0..n).map(|i| y[i] + noise[i]).collect();
        let rep = evaluate_r_squared(&y[..n], &pred).unwrap();
        prop_assert!(rep.r_squared <= 1.0);
        prop_assert!(rep.ss_tot >= 0.0 && rep.ss_res >= 0.0);
    }

    #[test]
    fn bands_contain_their_mean(
        values in prop::collection::vec(-100.0f64..100.0, 0..60),
        n in 2usize..10,
        k in 0.0f64..5.0,
    ) {
        let bands = rolling_bands(&values, n, k);
        if values.len() >= n {
            prop_assert_eq!(bands.len(), values.len() - n + 1);
        } else {
            prop_assert!(bands.is_empty());
        }
        for b in bands {
            prop_assert!(b.sigma >= 0.0);
            prop_assert!(b.lower <= b.mean && b.mean <= b.upper);
            if k == 0.0 {
                prop_assert_eq!(b.lower, b.mean);
                prop_assert_eq!(b.upper, b.mean);
            }
        }
    }

    #[test]
    fn downsample_count_conserves_points(
        ts in prop::collection::vec(0i64..5_000, 0..80),
        bucket in 1i64..200,
    ) {
        let mut pts: Vec<(i64, f64)> = ts.iter().map(|&t| (t, t as f64)).collect();
        pts.sort_by_key(|p| p.0);
        let buckets = downsample(&pts, 0, bucket, Aggregator::Count);
        let total: f64 = buckets.iter().map(|b| b.value).sum();
        prop_assert_eq!(total as usize, pts.len());
        for b in &buckets {
            prop_assert_eq!(b.start.rem_euclid(bucket), 0);
        }
        prop_assert!(buckets.windows(2).all(|w| w[0].start < w[1].start));
    }

    #[test]
    fn standardizer_is_idempotent_on_its_output_stats(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..30),
    ) {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = Matrix::from_vec(rows.len(), 3, flat);
        let s = Standardizer::fit(&x);
        let z = s.transform(&x);
        // transformed data has zero mean and unit (or flagged) variance
        let s2 = Standardizer::fit(&z);
        for j in 0..3 {
            prop_assert!(s2.mean[j].abs() < 1e-9);
            if !s2.constant_dims[j] {
                prop_assert!((s2.std[j] - 1.0).abs() < 1e-9);
            }
        }
    }
}
