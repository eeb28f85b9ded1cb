//! Property tests for the tensor ops and the local-search arithmetic.

use proptest::prelude::*;
use rand::Rng;
use rfsearch_core::localsearch::{
    expected_dilation, multi_dilated_forward, pmf, sample_dilation_set, MultiDilatedLayerState,
    PmfKind,
};
use rfsearch_core::rng::rng_from_seed;
use rfsearch_core::tensorops::{dilated_conv1d_forward, ConvKernel, PaddingMode, SeqBatch};

fn batch(seed: u64, b: usize, c: usize, t: usize) -> SeqBatch {
    let mut rng = rng_from_seed(seed);
    SeqBatch::from_vec(
        b,
        c,
        t,
        (0..b * c * t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn kernel(seed: u64, o: usize, i: usize, k: usize, with_bias: bool) -> ConvKernel {
    let mut rng = rng_from_seed(seed);
    let w = (0..o * i * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = (0..o)
        .map(|_| {
            if with_bias {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    ConvKernel::new(o, i, k, w, b).unwrap()
}

fn close(a: &SeqBatch, b: &SeqBatch, tol: f64) -> bool {
    let scale = a
        .data()
        .iter()
        .chain(b.data())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    a.data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| (x - y).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_keeps_input_length(seed in any::<u64>(), len in 1usize..40, half in 0usize..3, d in 1usize..12, centered in any::<bool>()) {
        let k = 2 * half + 1;
        let padding = if centered { PaddingMode::Centered } else { PaddingMode::Causal };
        prop_assume!(!centered || (k - 1) * d < len);
        let x = batch(seed, 2, 2, len);
        let y = dilated_conv1d_forward(&x, &kernel(seed ^ 1, 3, 2, k, true), d, padding).unwrap();
        prop_assert_eq!(y.shape(), (2, 3, len));
    }

    #[test]
    fn conv_is_linear_without_bias(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, d in 1usize..6) {
        let x1 = batch(seed, 2, 2, 20);
        let x2 = batch(seed.wrapping_add(1), 2, 2, 20);
        let k = kernel(seed.wrapping_add(2), 2, 2, 3, false);
        let mut mix = x1.clone();
        mix.scale(a);
        mix.scaled_add_assign(b, &x2);
        let lhs = dilated_conv1d_forward(&mix, &k, d, PaddingMode::Causal).unwrap();
        let mut rhs = dilated_conv1d_forward(&x1, &k, d, PaddingMode::Causal).unwrap();
        rhs.scale(a);
        rhs.scaled_add_assign(b, &dilated_conv1d_forward(&x2, &k, d, PaddingMode::Causal).unwrap());
        prop_assert!(close(&lhs, &rhs, 1e-10));
    }

    #[test]
    fn causal_output_ignores_inputs_outside_window(seed in any::<u64>(), k in 1usize..4, d in 1usize..6, t in 0usize..40, s in 0usize..40) {
        let x = batch(seed, 1, 2, 40);
        let kern = kernel(seed ^ 7, 2, 2, k, true);
        let lo = t.saturating_sub((k - 1) * d);
        prop_assume!(s < lo || s > t);
        let mut x2 = x.clone();
        for c in 0..2 {
            x2.set(0, c, s, x.get(0, c, s) + 10.0);
        }
        let y1 = dilated_conv1d_forward(&x, &kern, d, PaddingMode::Causal).unwrap();
        let y2 = dilated_conv1d_forward(&x2, &kern, d, PaddingMode::Causal).unwrap();
        for c in 0..2 {
            prop_assert_eq!(y1.get(0, c, t).to_bits(), y2.get(0, c, t).to_bits());
        }
    }

    #[test]
    fn multi_dilated_equals_branch_sum(seed in any::<u64>(), kind_idx in 0usize..3, base in 1usize..6, gaps in proptest::collection::vec(1usize..5, 1..4)) {
        let kind = [PmfKind::AbsNormalize, PmfKind::Softmax, PmfKind::Sigmoid][kind_idx];
        let mut dil = vec![base];
        for g in gaps {
            dil.push(dil.last().unwrap() + g);
        }
        let mut rng = rng_from_seed(seed);
        let w: Vec<f64> = dil.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        prop_assume!(w.iter().any(|v| v.abs() > 1e-3));
        let x = batch(seed ^ 3, 2, 2, 30);
        let k = kernel(seed ^ 5, 2, 2, 3, true);
        let st = MultiDilatedLayerState::new(k.clone(), dil.clone(), w.clone(), kind).unwrap();
        let y = multi_dilated_forward(&x, &st, PaddingMode::Causal).unwrap();
        let alphas = pmf(&w, kind).unwrap();
        let mut oracle = SeqBatch::zeros(2, 2, 30);
        for (&d, &a) in dil.iter().zip(&alphas) {
            oracle.scaled_add_assign(a, &dilated_conv1d_forward(&x, &k, d, PaddingMode::Causal).unwrap());
        }
        prop_assert!(close(&y, &oracle, 1e-10));
    }

    #[test]
    fn moving_mass_up_never_lowers_expectation(raw in proptest::collection::vec(0.01f64..1.0, 2..6), from in 0usize..6, to in 0usize..6, frac in 0.0f64..1.0, start in 1usize..50) {
        let n = raw.len();
        let (from, to) = (from % n, to % n);
        prop_assume!(from < to);
        let total: f64 = raw.iter().sum();
        let alphas: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let dil: Vec<usize> = (0..n).map(|i| start + 3 * i).collect();
        let mut shifted = alphas.clone();
        let moved = frac * shifted[from];
        shifted[from] -= moved;
        shifted[to] += moved;
        prop_assert!(expected_dilation(&dil, &shifted).unwrap() >= expected_dilation(&dil, &alphas).unwrap());
    }

    #[test]
    fn abs_expectation_ignores_rescaling(w in proptest::collection::vec(-5.0f64..5.0, 3), c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
        prop_assume!(w.iter().any(|v| v.abs() > 1e-3));
        let dil = [9, 10, 11];
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = pmf(&w, PmfKind::AbsNormalize).unwrap();
        let b = pmf(&scaled, PmfKind::AbsNormalize).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // the expectation may sit exactly on an integer, where rounding of the rescaled PMF matters
        let ea: f64 = dil.iter().zip(&a).map(|(&d, &p)| p * d as f64).sum();
        prop_assume!((ea - ea.round()).abs() > 1e-9);
        prop_assert_eq!(expected_dilation(&dil, &a).unwrap(), expected_dilation(&dil, &b).unwrap());
    }

    #[test]
    fn sampled_sets_are_sorted_bounded_and_centred(d in 1usize..2000, frac in 0.01f64..1.0, s in 2usize..7, cap in 1usize..3000) {
        prop_assume!(d <= cap);
        let set = sample_dilation_set(d, frac, s, cap).unwrap();
        prop_assert!(!set.is_empty() && set.len() <= s);
        prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(set.iter().all(|&x| x >= 1 && x <= cap));
        if s % 2 == 1 {
            prop_assert!(set.contains(&d));
        }
    }
}
