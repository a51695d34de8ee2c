use nalgebra::DMatrix;
use proptest::prelude::*;

use scmm::calibration::{residual, solve_correction, FeasibleSet};
use scmm::converters::{adc_quantize, dac_encode, AdcConfig, DacConfig};
use scmm::noise::{noisy_mac_inner_product, sigma_after_cycles, NoiseSpec};
use scmm::pipeline::{quantize_vector, ProgrammedMatrix};
use scmm::{effective_matrix, mac_inner_product, matrix_multiply, MacConfig, WeightMatrix};

fn row(n: usize) -> impl Strategy<Value = Vec<i32>> {
    prop::collection::vec(-4i32..=3, n)
}

fn volts(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.22f64..0.22, n)
}

fn matrix(m: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, m * n).prop_map(move |v| DMatrix::from_row_slice(m, n, &v))
}

proptest! {
    #[test]
    fn mac_is_linear_in_the_input(w in row(64), x in volts(64), y in volts(64), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let cfg = MacConfig::default();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = mac_inner_product(&mix, &w, &cfg).unwrap().final_value();
        let rhs = a * mac_inner_product(&x, &w, &cfg).unwrap().final_value()
            + b * mac_inner_product(&y, &w, &cfg).unwrap().final_value();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + rhs.abs() + 1e-3));
    }

    #[test]
    fn matrix_multiply_is_effective_matrix_product(rows in prop::collection::vec(row(64), 1..6), x in volts(64)) {
        let cfg = MacConfig::default();
        let w = WeightMatrix::from_rows(&rows, 3).unwrap();
        let y = matrix_multiply(&x, &w, &cfg).unwrap();
        let a = effective_matrix(&w, &cfg).unwrap();
        for (j, yj) in y.iter().enumerate() {
            prop_assert!((yj - a.row_dot(j, &x)).abs() < 1e-15);
        }
    }

    #[test]
    fn droop_only_attenuates(w in row(64), x in volts(64)) {
        let cfg = MacConfig::default();
        let v = mac_inner_product(&x, &w, &cfg).unwrap().final_value();
        let bound: f64 = w.iter().zip(&x).map(|(c, u)| (cfg.capacitance(*c) / cfg.c2() * u).abs()).sum();
        prop_assert!(v.abs() <= bound + 1e-18);
    }

    #[test]
    fn converters_are_monotone(a in -0.5f64..0.5, b in -0.5f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let dac = DacConfig::default();
        let adc = AdcConfig::default();
        prop_assert!(dac_encode(lo, &dac).value() <= dac_encode(hi, &dac).value());
        prop_assert!(adc_quantize(lo, &adc).value() <= adc_quantize(hi, &adc).value());
    }

    #[test]
    fn vector_quantization_hits_full_scale(x in prop::collection::vec(-10.0f64..10.0, 1..64)) {
        let (codes, s) = quantize_vector(&x, 6);
        let peak = codes.iter().map(|c| c.value().abs()).max().unwrap();
        if s == 0.0 {
            prop_assert_eq!(peak, 0);
        } else {
            prop_assert_eq!(peak, 31);
            for (c, v) in codes.iter().zip(&x) {
                prop_assert!((c.value() as f64 - v * s).abs() <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn programmed_rows_stay_in_code_range(a in matrix(4, 16)) {
        let p = ProgrammedMatrix::quantize(&a, 3).unwrap();
        prop_assert!(p.codes().codes().iter().all(|c| (-4..=3).contains(c)));
        let err = (&p.quantized_real() - &a).abs();
        for j in 0..4 {
            let half_step = 0.5 / p.row_scales()[j];
            prop_assert!(err.row(j).iter().all(|e| *e <= half_step + 1e-12));
        }
    }

    #[test]
    fn correction_never_loses_to_identity(t in matrix(6, 20), noise in matrix(6, 20)) {
        let actual = &t * 0.7 + noise * 0.05;
        let sol = solve_correction(&t, &actual, FeasibleSet::Unconstrained).unwrap();
        let ident = residual(&t, &DMatrix::identity(6, 6), &actual);
        prop_assert!(sol.residual_frobenius <= ident + 1e-12);
        prop_assert!((sol.residual_frobenius - residual(&t, &sol.b, &actual)).abs() < 1e-9);
    }

    #[test]
    fn sigma_is_increasing(i in 0u64..100_000) {
        let cfg = MacConfig::default();
        let cs = cfg.c_s_total();
        let (a, b) = (sigma_after_cycles(i, cs, &cfg).unwrap(), sigma_after_cycles(i + 1, cs, &cfg).unwrap());
        // Past ~500 cycles the remaining increment is below f64 resolution.
        if i < 500 {
            prop_assert!(b > a);
        } else {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn noisy_paths_replay_by_trial(w in row(64), x in volts(64), seed in any::<u64>(), trial in any::<u64>()) {
        let cfg = MacConfig::default();
        let spec = NoiseSpec { rng_seed: seed, ..NoiseSpec::default() };
        let a = noisy_mac_inner_product(&x, &w, &cfg, &spec, trial).unwrap();
        let b = noisy_mac_inner_product(&x, &w, &cfg, &spec, trial).unwrap();
        prop_assert_eq!(a, b);
    }
}
