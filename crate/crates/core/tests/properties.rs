use memg_core::features::{frame_confidence_of, reject_outliers};
use memg_core::model::{eval_component, eval_model, normalize_phase, time_axis, EchoParams, ParamSet};
use memg_core::synth::{psnr, quantize_i8};
use proptest::prelude::*;

fn echo() -> impl Strategy<Value = EchoParams> {
    (
        -100.0..100.0f64,
        0.5..1.5f64,
        0.02..0.2f64,
        -5.0..5.0f64,
        10.0..100.0f64,
        -3.0..3.0f64,
    )
        .prop_map(|(a, m, s, e, f, p)| EchoParams::new(a, m, s, e, f, p))
}

proptest! {
    #[test]
    fn unskewed_envelope_is_symmetric(p in echo(), d in 0.0..0.5f64) {
        let p = EchoParams { eta: 0.0, ..p };
        let v = eval_component(&p, &[p.mu - d, p.mu + d], false).unwrap();
        prop_assert!((v[0] - v[1]).abs() <= 1e-12 * v[0].abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn skew_sign_selects_heavier_side(p in echo(), eta in 0.2..5.0f64, sign in prop::bool::ANY) {
        let eta = if sign { eta } else { -eta };
        let p = EchoParams { alpha: p.alpha.abs() + 1.0, eta, ..p };
        let dt = p.sigma / 200.0;
        let x: Vec<f64> = (-2000..=2000).map(|i| p.mu + i as f64 * dt).collect();
        let v = eval_component(&p, &x, false).unwrap();
        let left: f64 = v[..2000].iter().sum();
        let right: f64 = v[2001..].iter().sum();
        let heavier_right = right > left;
        prop_assert_eq!(heavier_right, eta > 0.0);
    }

    #[test]
    fn model_is_the_ordered_sum(ps in prop::collection::vec(echo(), 1..4), osc in prop::bool::ANY) {
        let x = time_axis(700, 1.0 / 300.0);
        let set = ParamSet::new(ps.clone(), 0);
        let total = eval_model(&set, &x, osc).unwrap();
        let mut acc = vec![0.0; x.len()];
        for p in &ps {
            for (a, v) in acc.iter_mut().zip(eval_component(p, &x, osc).unwrap()) {
                *a += v;
            }
        }
        prop_assert_eq!(total, acc);
    }

    #[test]
    fn phase_normalization_is_idempotent(phi in -1e3..1e3f64) {
        let once = normalize_phase(phi).unwrap();
        prop_assert_eq!(normalize_phase(once).unwrap(), once);
    }

    #[test]
    fn psnr_falls_as_error_grows(g in prop::collection::vec(-100.0..100.0f64, 1..50), e in 0.01..10.0f64, k in 1.01..3.0f64) {
        let s1: Vec<f64> = g.iter().map(|v| v + e).collect();
        let s2: Vec<f64> = g.iter().map(|v| v + k * e).collect();
        prop_assert!(psnr(&g, &s1).unwrap() > psnr(&g, &s2).unwrap());
    }

    #[test]
    fn quantization_error_is_bounded(g in prop::collection::vec(-127.0..127.0f64, 1..200)) {
        let q: Vec<f64> = g.iter().map(|v| quantize_i8(*v)).collect();
        prop_assert!(g.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 0.5));
        let bound = 20.0 * (255.0 / (0.5 * (g.len() as f64).sqrt())).log10();
        prop_assert!(psnr(&g, &q).unwrap() >= bound);
    }

    #[test]
    fn confidence_rescale_invariant(
        data in prop::collection::vec(0.1..10.0f64, 5..40),
        noise in prop::collection::vec(-1.0..1.0f64, 40),
        c in 0.01..100.0f64,
    ) {
        let model: Vec<f64> = data.iter().zip(&noise).map(|(d, n)| d + n).collect();
        let a = frame_confidence_of(&model, &data).unwrap();
        let ms: Vec<f64> = model.iter().map(|v| v * c).collect();
        let ds: Vec<f64> = data.iter().map(|v| v * c).collect();
        let b = frame_confidence_of(&ms, &ds).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn larger_residuals_lower_confidence(
        data in prop::collection::vec(0.1..10.0f64, 5..40),
        r in prop::collection::vec(-1.0..1.0f64, 40),
        grow in prop::collection::vec(1.0..3.0f64, 40),
    ) {
        // a model without positive samples is compared unscaled
        let data: Vec<f64> = data.iter().map(|v| v / 10.0).collect();
        let small: Vec<f64> = data.iter().zip(&r).map(|(d, e)| -d.abs() - e.abs()).collect();
        let large: Vec<f64> = data.iter().zip(r.iter().zip(&grow)).map(|(d, (e, g))| -d.abs() - e.abs() * g).collect();
        prop_assert!(frame_confidence_of(&small, &data).unwrap() >= frame_confidence_of(&large, &data).unwrap());
    }

    #[test]
    fn outlier_rejection_keeps_survivors_verbatim(ps in prop::collection::vec(echo(), 0..6), flip in prop::collection::vec(prop::bool::ANY, 6)) {
        let comps: Vec<EchoParams> = ps.iter().zip(&flip).map(|(p, f)| if *f { EchoParams { sigma: -p.sigma, ..*p } } else { *p }).collect();
        let (kept, dropped) = reject_outliers(&ParamSet::new(comps.clone(), 0), Some(1.4));
        prop_assert_eq!(kept.len() + dropped.len(), comps.len());
        for p in &kept.components {
            prop_assert!(comps.iter().any(|q| q.to_array().map(f64::to_bits) == p.to_array().map(f64::to_bits)));
        }
    }
}
