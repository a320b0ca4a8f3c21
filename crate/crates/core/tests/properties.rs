use featurelens::freq::{dft2, frequency_features};
use featurelens::metrics::{auc, roc_curve, trapezoid_area};
use featurelens::mmd::{mmd_score, MmdReference};
use featurelens::pipeline::fit_scaler;
use featurelens::separability::{construct_separator, displacement};
use featurelens::GrayImage;
use proptest::prelude::*;

fn image() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2usize..=12, 2usize..=12).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(0.0f64..=1.0, h * w)))
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| (prop::collection::vec(0u8..20, n), prop::collection::vec(0u8..=1, n))).prop_map(
        |(levels, mut labels)| {
            labels[0] = 0;
            labels[1] = 1;
            (levels.iter().map(|&l| l as f64 / 19.0).collect(), labels)
        },
    )
}

fn vector_pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-5.0f64..5.0, d), prop::collection::vec(-5.0f64..5.0, d))
}

proptest! {
    #[test]
    fn band_ratios_sum_to_one_and_ignore_scale((h, w, px) in image(), c in 0.05f64..=1.0) {
        let img = GrayImage::from_matrix(h, w, px.clone(), false).unwrap();
        let f = frequency_features(&dft2(&img).unwrap());
        prop_assert!((f[0] + f[1] + f[2] - 1.0).abs() <= 1e-9);
        prop_assert!(f[..3].iter().all(|r| (0.0..=1.0).contains(r)));
        let scaled = GrayImage::from_matrix(h, w, px.iter().map(|v| v * c).collect(), false).unwrap();
        let g = frequency_features(&dft2(&scaled).unwrap());
        for k in 0..3 {
            prop_assert!((f[k] - g[k]).abs() <= 1e-9, "ratio {} moved: {} vs {}", k, f[k], g[k]);
        }
    }

    #[test]
    fn auc_flips_with_labels((scores, labels) in scored_labels()) {
        let a = auc(&scores, &labels).unwrap();
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((a + auc(&scores, &flipped).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in scored_labels()) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
    }

    #[test]
    fn roc_area_equals_auc((scores, labels) in scored_labels()) {
        let area = trapezoid_area(&roc_curve(&scores, &labels));
        prop_assert!((area - auc(&scores, &labels).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn separator_values_at_the_pair((a, b) in vector_pair(51)) {
        prop_assume!(a != b);
        let s = construct_separator(&a, &b).unwrap();
        let norm_sq: f64 = s.w.iter().map(|v| v * v).sum();
        prop_assert!((s.eval(&a) + norm_sq / 2.0).abs() <= 1e-9 * norm_sq.max(1.0));
        prop_assert!((s.eval(&b) - norm_sq / 2.0).abs() <= 1e-9 * norm_sq.max(1.0));
    }

    #[test]
    fn displacement_bounds_and_symmetry((a, b) in vector_pair(51)) {
        let d = displacement(&a, &b).unwrap();
        prop_assert!(d.l2 * d.l2 >= d.delta1 * d.delta1 + d.delta2 * d.delta2 - 1e-12);
        prop_assert_eq!(d, displacement(&b, &a).unwrap());
    }

    #[test]
    fn scaler_inverse_round_trips(rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 2..20)) {
        let scaler = fit_scaler(&rows).unwrap();
        for row in &rows {
            let z = scaler.transform(row).unwrap();
            let back = scaler.inverse(&z).unwrap();
            for (x, y) in row.iter().zip(&back) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mmd_is_nonnegative_and_bounded(refs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..8), x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let reference = MmdReference::from_vectors(refs).unwrap();
        let s = mmd_score(&x, &reference).unwrap();
        prop_assert!(s.is_finite() && (0.0..=2.0f64.sqrt() + 1e-12).contains(&s));
    }
}
