mod common;

use proptest::prelude::*;
use ydg_core::dataset::{normalize_apply, normalize_fit, normalize_invert};

fn columns() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (1usize..6, 2usize..40).prop_flat_map(|(width, n)| {
        let col = prop_oneof![
            prop::collection::vec(0.0..50.0f64, n),
            prop::collection::vec(-1e3..1e3f64, n),
            (0.0..5.0f64).prop_map(move |c| vec![c; n]),
        ];
        (prop::collection::vec(col, width), prop::collection::vec(any::<bool>(), width))
    })
}

proptest! {
    #[test]
    fn apply_then_invert_is_identity((cols, logs) in columns(), seed in any::<u64>()) {
        // log features only make sense on non-negative data
        let logs: Vec<bool> = cols.iter().zip(&logs).map(|(c, &l)| l && c.iter().all(|&v| v >= 0.0)).collect();
        let norm = normalize_fit(&cols, &logs).unwrap();
        prop_assert!(common::normalizer_roundtrip_err(&norm, 50, seed) < 1e-12);
        // the fitted rows themselves
        for i in 0..cols[0].len() {
            let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
            let back = normalize_invert(&norm, &normalize_apply(&norm, &row).unwrap()).unwrap();
            for (a, b) in row.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_columns_are_frozen_and_pass_through(c in -10.0..10.0f64, probe in -100.0..100.0f64) {
        let norm = normalize_fit(&[vec![c; 10], vec![1.0, 2.0, 3.0]], &[false, false]).unwrap();
        prop_assert!(norm.features[0].frozen && !norm.features[1].frozen);
        let z = normalize_apply(&norm, &[probe, 2.0]).unwrap();
        prop_assert_eq!(z[0], probe);
        prop_assert_eq!(normalize_invert(&norm, &z).unwrap()[0], probe);
    }

    #[test]
    fn fitted_columns_are_standardized((cols, _) in columns()) {
        let logs = vec![false; cols.len()];
        let norm = normalize_fit(&cols, &logs).unwrap();
        for (j, col) in cols.iter().enumerate() {
            if norm.features[j].frozen { continue; }
            let z: Vec<f64> = col.iter().map(|&v| normalize_apply(&norm, &{
                let mut r = vec![0.0; cols.len()];
                r[j] = v;
                r
            }).unwrap()[j]).collect();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9, "{} {}", mean, var);
        }
    }
}
