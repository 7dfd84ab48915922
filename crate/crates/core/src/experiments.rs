//! Simulated benchmark scenes and the trial runners behind the `bench`
//! commands and the acceptance suite.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::filter_and_cache;
use crate::filters::{ram_lak, BaselineKind};
use crate::geometry::{make_parallel_geometry, ortho_slices, rotate, Geometry, SliceOrientation, Vec3};
use crate::io::PhantomRecord;
use crate::metrics::{grid_search_baseline, linear_grid, mean_scores, ortho_references, slice_scores, Scores};
use crate::noise2filter::{
    reconstruct_slice_n2f, train_nnfbp_supervised, train_noise2filter, validation_size, N2FConfig, N2FModel,
};
use crate::phantom::{apply_poisson_noise, calibrate_density, generate_foam, project_foam, voxelize_foam, FoamSpec, NoiseSpec};
use crate::projector::{SliceImage, Sinogram, Volume};

/// Size of a simulated experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n: usize,
    pub n_angles: usize,
    pub det_cols: usize,
    pub n_balls: usize,
    pub absorption: f64,
    pub supersampling: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n: 128,
            n_angles: 256,
            det_cols: 192,
            n_balls: 1000,
            absorption: 0.10,
            supersampling: 2,
        }
    }
}

/// Noiseless projections of a foam phantom with its voxelized ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub phantom: PhantomRecord,
    pub clean: Sinogram,
    pub truth: Volume,
}

/// Builds a scene. `cor_shift` moves the rotation axis in the simulated data
/// while the recorded geometry keeps a centered axis.
pub fn make_scene(spec: &SceneSpec, phantom_seed: u64, cor_shift: f64) -> Result<Scene> {
    let g = make_parallel_geometry(spec.n_angles, spec.n, spec.det_cols, 0.0)?;
    let foam = generate_foam(&FoamSpec::for_volume(spec.n, spec.n_balls, phantom_seed))?;
    let foam = calibrate_density(&foam, &g, spec.absorption)?;
    let clean = project_foam(&foam, &g.with_cor_shift(cor_shift), spec.supersampling)?.with_cor_shift(0.0);
    let shape = [spec.n; 3];
    let truth = voxelize_foam(&foam, shape, 1.0)?;
    let phantom = PhantomRecord {
        spec: FoamSpec::for_volume(spec.n, spec.n_balls, phantom_seed),
        density: foam.density,
        volume_shape: shape,
        voxel_size: 1.0,
    };
    Ok(Scene {
        spec: *spec,
        phantom,
        clean,
        truth,
    })
}

pub fn noisy(scene: &Scene, photon_count: f64, seed: u64) -> Result<Sinogram> {
    apply_poisson_noise(&scene.clean, &NoiseSpec { photon_count, seed })
}

pub fn default_gaussian_grid() -> Vec<f64> {
    linear_grid(0.5, 5.0, 10)
}

pub fn default_freqscale_grid() -> Vec<f64> {
    linear_grid(0.1, 1.0, 10)
}

/// Rows the supervised path can draw from the ortho slices of `truth`.
pub fn supervised_capacity(truth: &Volume) -> usize {
    let pixels: usize = ortho_slices(truth.shape(), truth.voxel_size())
        .iter()
        .map(SliceOrientation::n_pixels)
        .sum();
    let mut n = pixels;
    while n > 0 && n + validation_size(n) > pixels {
        n -= 1;
    }
    n
}

pub fn model_scores(model: &N2FModel, s: &Sinogram, truth: &Volume) -> Result<Scores> {
    let refs = ortho_references(truth);
    let cache = filter_and_cache(s, model.learned_filters())?;
    let recs = refs
        .iter()
        .map(|r| reconstruct_slice_n2f(model, &cache, r.orientation(), None))
        .collect::<Result<Vec<_>>>()?;
    mean_scores(&recs, &refs)
}

pub fn fbp_scores(s: &Sinogram, truth: &Volume) -> Result<Scores> {
    let g = s.geometry();
    let refs = ortho_references(truth);
    let cache = filter_and_cache(s, &[ram_lak(g.det_cols() - 1, g.pixel_size())?])?;
    let recs = refs
        .iter()
        .map(|r| cache.backproject(0, r.orientation(), None))
        .collect::<Result<Vec<_>>>()?;
    mean_scores(&recs, &refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub photon_count: f64,
    pub trial: u64,
    pub method: String,
    pub param: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

pub const ACCURACY_METHODS: [&str; 5] = ["fbp", "fbp_g", "fbp_sc", "n2f", "nnfbp"];

/// One trial of the accuracy comparison. The test scene is reconstructed by
/// every method; the supervised network is trained on `train_scene`.
pub fn accuracy_trial(
    test: &Scene,
    train_scene: &Scene,
    photon_count: f64,
    trial: u64,
    cfg: &N2FConfig,
) -> Result<Vec<AccuracyRow>> {
    let noisy_test = noisy(test, photon_count, trial)?;
    let noisy_train = noisy(train_scene, photon_count, trial.wrapping_add(1 << 32))?;
    let row = |method: &str, param: Option<f64>, s: Scores| AccuracyRow {
        photon_count,
        trial,
        method: method.into(),
        param,
        psnr: s.psnr,
        ssim: s.ssim,
    };
    let mut rows = vec![row("fbp", None, fbp_scores(&noisy_test, &test.truth)?)];
    let g = grid_search_baseline(&noisy_test, &test.truth, BaselineKind::Gaussian, &default_gaussian_grid())?;
    rows.push(row("fbp_g", Some(g.best_param), g.best));
    let sc = grid_search_baseline(&noisy_test, &test.truth, BaselineKind::FreqScale, &default_freqscale_grid())?;
    rows.push(row("fbp_sc", Some(sc.best_param), sc.best));
    let trial_cfg = N2FConfig { seed: trial, ..*cfg };
    let (m, _) = train_noise2filter(&noisy_test, &trial_cfg)?;
    rows.push(row("n2f", None, model_scores(&m, &noisy_test, &test.truth)?));
    let sup_cfg = N2FConfig {
        n_train: cfg.n_train.min(supervised_capacity(&train_scene.truth)),
        ..trial_cfg
    };
    let (mb, _) = train_nnfbp_supervised(&noisy_train, &train_scene.truth, &sup_cfg)?;
    rows.push(row("nnfbp", None, model_scores(&mb, &noisy_test, &test.truth)?));
    Ok(rows)
}

/// Self-supervised training with the given configuration, scored on the scene.
pub fn n2f_trial(test: &Scene, photon_count: f64, cfg: &N2FConfig) -> Result<Scores> {
    let s = noisy(test, photon_count, cfg.seed)?;
    let (m, _) = train_noise2filter(&s, cfg)?;
    model_scores(&m, &s, &test.truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub prep_seconds: f64,
    pub fit_seconds: f64,
    pub train_seconds: f64,
    pub fbp_slice_ms: f64,
    pub n2f_slice_ms: f64,
    pub ratio: f64,
}

/// Orientations cycling through ortho slices and tilted variants.
pub fn request_orientations(n: usize, count: usize) -> Vec<SliceOrientation> {
    let base = ortho_slices([n, n, n], 1.0);
    (0..count)
        .map(|i| {
            let o = &base[i % 3];
            let angle = (i / 3) as f64 * 0.05;
            let axis = rotate(&Vec3::X, &Vec3::Z, 0.3 * i as f64);
            o.rotated(&axis, angle, &o.origin()).unwrap_or_else(|_| o.clone())
        })
        .collect()
}

/// Training time and warm-cache per-slice latency of FBP and the learned method.
pub fn timing(test: &Scene, photon_count: f64, cfg: &N2FConfig, n_requests: usize) -> Result<TimingReport> {
    if n_requests == 0 {
        return Err(Error::invalid("need at least one request"));
    }
    let s = noisy(test, photon_count, cfg.seed)?;
    let t = Instant::now();
    let (m, _) = train_noise2filter(&s, cfg)?;
    let train_seconds = t.elapsed().as_secs_f64();
    let g: &Geometry = s.geometry();
    let rl = filter_and_cache(&s, &[ram_lak(g.det_cols() - 1, g.pixel_size())?])?;
    let cache = filter_and_cache(&s, m.learned_filters())?;
    let orients = request_orientations(test.spec.n, n_requests);
    // warm up both paths
    rl.backproject(0, &orients[0], None)?;
    reconstruct_slice_n2f(&m, &cache, &orients[0], None)?;
    let t = Instant::now();
    for o in &orients {
        std::hint::black_box(rl.backproject(0, o, None)?);
    }
    let fbp = t.elapsed().as_secs_f64() / n_requests as f64;
    let t = Instant::now();
    for o in &orients {
        std::hint::black_box(reconstruct_slice_n2f(&m, &cache, o, None)?);
    }
    let n2f = t.elapsed().as_secs_f64() / n_requests as f64;
    Ok(TimingReport {
        prep_seconds: m.meta().prep_seconds,
        fit_seconds: m.meta().fit_seconds,
        train_seconds,
        fbp_slice_ms: fbp * 1e3,
        n2f_slice_ms: n2f * 1e3,
        ratio: n2f / fbp,
    })
}

/// SSIM of the learned reconstruction against the truth for each trial
/// rotation-axis shift, averaged over the ortho slices.
pub fn cor_sweep(model: &N2FModel, s: &Sinogram, truth: &Volume, shifts: &[f64]) -> Result<Vec<(f64, f64)>> {
    let refs = ortho_references(truth);
    let cache = filter_and_cache(s, model.learned_filters())?;
    shifts
        .iter()
        .map(|&c| {
            let recs: Vec<SliceImage> = refs
                .iter()
                .map(|r| reconstruct_slice_n2f(model, &cache, r.orientation(), Some(c)))
                .collect::<Result<_>>()?;
            let ssim = recs
                .iter()
                .zip(&refs)
                .map(|(a, b)| slice_scores(a, b).map(|s| s.ssim))
                .sum::<Result<f64>>()?
                / refs.len() as f64;
            Ok((c, ssim))
        })
        .collect()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SceneSpec {
        SceneSpec {
            n: 24,
            n_angles: 36,
            det_cols: 36,
            n_balls: 10,
            absorption: 0.1,
            supersampling: 1,
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = make_scene(&tiny(), 3, 0.0).unwrap();
        let b = make_scene(&tiny(), 3, 0.0).unwrap();
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.phantom.ground_truth().unwrap(), a.truth);
    }

    #[test]
    fn shifted_scene_keeps_centered_geometry() {
        let a = make_scene(&tiny(), 3, 0.0).unwrap();
        let b = make_scene(&tiny(), 3, 2.0).unwrap();
        assert_eq!(b.clean.geometry().cor_shift(), 0.0);
        // column j of the shifted data sees what column j-2 saw before
        let (rows, cols) = (24, 36);
        let r = rows / 2;
        for j in 4..cols - 4 {
            let x = a.clean.projection(0)[r * cols + j - 2];
            let y = b.clean.projection(0)[r * cols + j];
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn capacity_leaves_room_for_validation() {
        let v = Volume::zeros([128, 128, 128], 1.0);
        let c = supervised_capacity(&v);
        assert!(c + validation_size(c) <= 3 * 128 * 128);
        assert!(c + 1 + validation_size(c + 1) > 3 * 128 * 128);
    }

    #[test]
    fn request_orientations_are_valid() {
        let os = request_orientations(16, 12);
        assert_eq!(os.len(), 12);
        for o in os {
            assert!((o.u_axis().dot(&o.v_axis())).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
