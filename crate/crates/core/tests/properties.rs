use approx::assert_relative_eq;
use proptest::prelude::*;

use n2f_core::filters::{baseline_filter, expand_filter, make_basis, BaselineKind};
use n2f_core::metrics::{psnr, ssim};
use n2f_core::mlp::{mlp_forward, MLPParams, ScalingRecord};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_expansion_is_linear(
        hw in 4usize..300,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let basis = make_basis(hw).unwrap();
        let n = basis.len();
        let c1: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 7) as f64 - 3.5).collect();
        let c2: Vec<f64> = (0..n).map(|i| ((seed.rotate_left(i as u32) >> 3) & 5) as f64 * 0.5).collect();
        let mix: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
        let lhs = expand_filter(&basis, &mix).unwrap();
        let f1 = expand_filter(&basis, &c1).unwrap();
        let f2 = expand_filter(&basis, &c2).unwrap();
        for k in -(hw as i64)..=(hw as i64) {
            assert_relative_eq!(lhs.at(k), a * f1.at(k) + b * f2.at(k), epsilon = 1e-9);
        }
    }

    #[test]
    fn baseline_filters_are_symmetric(hw in 2usize..200, sigma in 0.3f64..6.0, f_sc in 0.05f64..1.0) {
        for (kind, p) in [(BaselineKind::Gaussian, sigma), (BaselineKind::FreqScale, f_sc)] {
            let f = baseline_filter(kind, p, hw, 1.0).unwrap();
            for k in 1..=(hw as i64) {
                assert_relative_eq!(f.at(k), f.at(-k), epsilon = 1e-12, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn psnr_ignores_affine_maps_and_ssim_ignores_scaling(
        scale in 0.1f64..50.0,
        shift in -10.0f64..10.0,
        data in prop::collection::vec(0.0f64..1.0, 16 * 16),
        noise in prop::collection::vec(-0.1f64..0.1, 16 * 16),
    ) {
        let x: Vec<f64> = data.iter().zip(&noise).map(|(d, e)| d + e).collect();
        let t = |v: &[f64]| -> Vec<f64> { v.iter().map(|a| scale * a + shift).collect() };
        let p0 = psnr(&x, &data, 1.0).unwrap();
        let p1 = psnr(&t(&x), &t(&data), scale).unwrap();
        assert_relative_eq!(p0, p1, epsilon = 1e-8, max_relative = 1e-9);
        let scaled = |v: &[f64]| -> Vec<f64> { v.iter().map(|a| scale * a).collect() };
        let s0 = ssim(&x, &data, 16, 16, 1.0).unwrap();
        let s1 = ssim(&scaled(&x), &scaled(&data), 16, 16, scale).unwrap();
        assert_relative_eq!(s0, s1, epsilon = 1e-8);
    }

    #[test]
    fn network_output_stays_inside_target_range(
        seed in any::<u64>(),
        z in prop::collection::vec(-1e3f64..1e3, 6),
    ) {
        let p = MLPParams::random(4, 6, seed);
        let s = ScalingRecord::identity(6);
        let y = mlp_forward(&p, &s, &z).unwrap();
        prop_assert!(y.is_finite());
        let lo = (0.0 - s.out_offset) / s.out_scale;
        let hi = (1.0 - s.out_offset) / s.out_scale;
        prop_assert!(y >= lo.min(hi) - 1e-12 && y <= lo.max(hi) + 1e-12);
    }
}
