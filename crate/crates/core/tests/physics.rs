use n2f_core::fbp::fbp_slice;
use n2f_core::filters::ram_lak;
use n2f_core::geometry::{make_parallel_geometry, ortho_slices, Vec3};
use n2f_core::phantom::{generate_foam, project_foam, voxelize_foam, Ball, FoamPhantom, FoamSpec};
use n2f_core::projector::{forward_project, sample_plane};

fn rel_l2(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum();
    (num / den).sqrt()
}

#[test]
fn analytic_and_numeric_projections_agree() {
    let n = 128;
    let p = generate_foam(&FoamSpec::for_volume(n, 1000, 1)).unwrap();
    let g = make_parallel_geometry(16, n, 192, 0.0).unwrap();
    let analytic = project_foam(&p, &g, 2).unwrap();
    let v = voxelize_foam(&p, [n, n, n], 1.0).unwrap();
    let numeric = forward_project(&v, &g).unwrap();
    let e = rel_l2(numeric.data(), analytic.data());
    eprintln!("analytic vs numeric rel L2 = {e:.4}");
    assert!(e <= 0.02);
}

#[test]
fn ram_lak_fbp_recovers_ball_density() {
    let n = 128;
    let p = FoamPhantom {
        cylinder_radius: 30.0,
        cylinder_half_height: 30.0,
        balls: vec![],
        density: 0.02,
        seed: 0,
    };
    // a solid cylinder is a ball's cross-section in every axial plane
    let g = make_parallel_geometry(256, n, 192, 0.0).unwrap();
    let s = project_foam(&p, &g, 2).unwrap();
    let [axial, ..] = ortho_slices([n, n, n], 1.0);
    let img = fbp_slice(&s, &ram_lak(191, 1.0).unwrap(), &axial);
    let c = img.data()[64 * n + 64];
    eprintln!("center value {c} vs density 0.02");
    assert!((c - 0.02).abs() <= 0.05 * 0.02);

    let ball = FoamPhantom {
        cylinder_radius: 60.0,
        cylinder_half_height: 60.0,
        balls: vec![Ball { center: Vec3::new(0.0, 0.0, 0.0), radius: 20.0 }],
        density: 0.02,
        seed: 0,
    };
    let s = project_foam(&ball, &g, 2).unwrap();
    let img = fbp_slice(&s, &ram_lak(191, 1.0).unwrap(), &axial);
    let c = img.data()[64 * n + 64];
    assert!(c.abs() <= 0.05 * 0.02, "void center {c}");
}

#[test]
fn noiseless_foam_fbp_psnr() {
    let n = 128;
    let p = generate_foam(&FoamSpec::for_volume(n, 1000, 0)).unwrap();
    let g = make_parallel_geometry(256, n, 192, 0.0).unwrap();
    let s = project_foam(&p, &g, 2).unwrap();
    let v = voxelize_foam(&p, [n, n, n], 1.0).unwrap();
    let f = ram_lak(191, 1.0).unwrap();
    for o in ortho_slices([n, n, n], 1.0) {
        let rec = fbp_slice(&s, &f, &o);
        let gt = sample_plane(&v, &o);
        let (lo, hi) = gt.min_max();
        let mse: f64 =
            rec.data().iter().zip(gt.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / gt.data().len() as f64;
        let psnr = 10.0 * ((hi - lo).powi(2) / mse).log10();
        eprintln!("psnr {psnr:.2}");
        assert!(psnr >= 25.0);
    }
}
