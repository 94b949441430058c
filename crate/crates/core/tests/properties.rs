use proptest::prelude::*;

use thermobnn_core::adcsim::RampAdc;
use thermobnn_core::bitcore::{bin_conv2d, popcount_linear, BitTensor, Conv2dParams, PackedConv};
use thermobnn_core::encoders::{
    encode_thermometer, quantize_thresholds, threshold_jacobian, thresholds_from_latent, EncodingKind, ImageDims,
    ImageView,
};
use thermobnn_core::topology::{channel_shuffle, channel_unshuffle};
use thermobnn_core::train::{cosine_lr, distributional_loss, distributional_loss_grad, total_loss};

fn sign_vec(n: usize) -> impl Strategy<Value = Vec<i8>> {
    proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], n)
}

fn latent(m: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.05f64..2.0, m + 1)
}

proptest! {
    #[test]
    fn thresholds_are_strictly_increasing_inside_unit_interval(l in (1usize..40).prop_flat_map(latent)) {
        let t = thresholds_from_latent(&l).unwrap();
        prop_assert_eq!(t.len(), l.len() - 1);
        prop_assert!(t[0] > 0.0 && *t.last().unwrap() < 1.0);
        prop_assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn thresholds_ignore_latent_scale(l in (1usize..20).prop_flat_map(latent), k in 0.1f64..10.0) {
        let a = thresholds_from_latent(&l).unwrap();
        let scaled: Vec<f64> = l.iter().map(|v| v * k).collect();
        let b = thresholds_from_latent(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_rows_sum_to_zero_against_the_latent(l in (1usize..20).prop_flat_map(latent)) {
        // t is scale-invariant, so J . latent = 0
        let jac = threshold_jacobian(&l).unwrap();
        let n = l.len();
        for row in jac.chunks(n) {
            let s: f64 = row.iter().zip(&l).map(|(a, b)| a * b).sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn thermometer_codes_count_thresholds_below_pixel(
        l in (1usize..16).prop_flat_map(latent),
        px in proptest::collection::vec(0.0f64..=1.0, 12),
    ) {
        let t = thresholds_from_latent(&l).unwrap();
        let dims = ImageDims::new(1, 3, 4);
        let p = encode_thermometer(ImageView::new(dims, &px).unwrap(), std::slice::from_ref(&t), EncodingKind::Glt).unwrap();
        prop_assert!(p.is_thermometric());
        for (i, x) in px.iter().enumerate() {
            let set = (0..t.len()).filter(|&k| p.bit(0, k, i / 4, i % 4)).count();
            prop_assert_eq!(set, t.iter().filter(|v| *x >= **v).count());
        }
    }

    #[test]
    fn noiseless_adc_matches_quantized_encoder(
        l in (2usize..16).prop_flat_map(latent),
        codes in proptest::collection::vec(0u32..=255, 24),
    ) {
        let q = quantize_thresholds(&thresholds_from_latent(&l).unwrap(), 8);
        prop_assume!(q.windows(2).all(|w| w[0] < w[1]));
        let t: Vec<f64> = q.iter().map(|c| f64::from(*c) / 255.0).collect();
        let px: Vec<f64> = codes.iter().map(|c| f64::from(*c) / 255.0).collect();
        let view = ImageView::new(ImageDims::new(1, 4, 6), &px).unwrap();
        let sw = encode_thermometer(view, &[t], EncodingKind::Glt).unwrap();
        let (hw, report) = RampAdc::new(8, vec![q]).unwrap().convert_frame(view).unwrap();
        prop_assert_eq!(report.violations, 0);
        prop_assert_eq!(sw.bits.to_bits(), hw.bits.to_bits());
    }

    #[test]
    fn popcount_linear_matches_integer_dot(
        (n, rows) in (1usize..300, 1usize..6),
        seed in any::<u64>(),
    ) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); if (s >> 33) & 1 == 1 { 1i8 } else { -1 } };
        let x: Vec<i8> = (0..n).map(|_| next()).collect();
        let w: Vec<i8> = (0..rows * n).map(|_| next()).collect();
        let got = popcount_linear(&BitTensor::from_signs(&[n], &x).unwrap(), &BitTensor::from_signs(&[rows, n], &w).unwrap()).unwrap();
        for r in 0..rows {
            let want: i32 = (0..n).map(|j| i32::from(x[j] * w[r * n + j])).sum();
            prop_assert_eq!(got.data()[r], want);
        }
    }

    #[test]
    fn packed_conv_is_reusable_and_matches_one_shot_call(
        x in sign_vec(2 * 6 * 6),
        y in sign_vec(2 * 6 * 6),
        w in sign_vec(4 * 2 * 9),
        stride in 1usize..=2,
    ) {
        let wt = BitTensor::from_signs(&[4, 2, 3, 3], &w).unwrap();
        let p = Conv2dParams::new(stride, 1, 1);
        let packed = PackedConv::new(&wt, p).unwrap();
        for input in [&x, &y] {
            let t = BitTensor::from_signs(&[2, 6, 6], input).unwrap();
            prop_assert_eq!(packed.apply(&t).unwrap(), bin_conv2d(&t, &wt, p).unwrap());
        }
    }

    #[test]
    fn negating_inputs_and_weights_keeps_unpadded_conv(x in sign_vec(3 * 5 * 5), w in sign_vec(2 * 3 * 9)) {
        let neg = |v: &[i8]| v.iter().map(|s| -s).collect::<Vec<_>>();
        let p = Conv2dParams::new(1, 0, 1);
        let a = bin_conv2d(&BitTensor::from_signs(&[3, 5, 5], &x).unwrap(), &BitTensor::from_signs(&[2, 3, 3, 3], &w).unwrap(), p).unwrap();
        let b = bin_conv2d(&BitTensor::from_signs(&[3, 5, 5], &neg(&x)).unwrap(), &BitTensor::from_signs(&[2, 3, 3, 3], &neg(&w)).unwrap(), p).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn shuffle_round_trips(groups in 1usize..5, per in 1usize..5, hw in 1usize..4) {
        let c = groups * per;
        let v: Vec<i32> = (0..(c * hw) as i32).collect();
        let s = channel_shuffle(&v, c, groups).unwrap();
        prop_assert_eq!(channel_unshuffle(&s, c, groups).unwrap(), v);
    }

    #[test]
    fn distillation_loss_is_nonnegative_with_zero_mean_gradient(
        (c, t) in (2usize..8, 0.5f64..16.0),
        seed in any::<u64>(),
    ) {
        let mut s = seed | 1;
        let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s % 2000) as f32 / 100.0 - 10.0 };
        let a: Vec<f32> = (0..2 * c).map(|_| next()).collect();
        let b: Vec<f32> = (0..2 * c).map(|_| next()).collect();
        let (loss, grad) = distributional_loss_grad(&a, &b, c, t).unwrap();
        prop_assert!(loss >= -1e-12);
        prop_assert!((loss - distributional_loss(&a, &b, c, t).unwrap()).abs() < 1e-15);
        for row in grad.chunks(c) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_lr_stays_between_endpoints(
        lo in 1e-10f64..1e-4, span in 1e-4f64..1e-1, step in 0u64..2000, total in 1u64..1000,
    ) {
        let hi = lo + span;
        let lr = cosine_lr(hi, lo, step, total);
        prop_assert!(lr >= lo - 1e-18 && lr <= hi + 1e-18);
        prop_assert_eq!(cosine_lr(hi, lo, 0, total), hi);
    }

    #[test]
    fn total_loss_interpolates(ce in 0.0f64..10.0, d in 0.0f64..10.0, l in 0.0f64..=1.0) {
        let v = total_loss(ce, d, l);
        prop_assert!(v >= ce.min(d) - 1e-12 && v <= ce.max(d) + 1e-12);
    }
}
