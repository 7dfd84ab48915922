//! Image quality metrics against noiseless references and the baseline
//! parameter search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::filter_and_cache;
use crate::filters::{baseline_filter, BaselineKind};
use crate::geometry::ortho_slices;
use crate::projector::{sample_plane, SliceImage, Sinogram, Volume};

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW_SIGMA: f64 = 1.5;
const WINDOW_RADIUS: usize = 5;

fn check_same(x: &[f64], r: &[f64]) -> Result<()> {
    if x.len() != r.len() || x.is_empty() {
        return Err(Error::invalid(format!("image sizes differ or are empty: {} vs {}", x.len(), r.len())));
    }
    Ok(())
}

/// `10·log10(range² / MSE)`; identical images give `+∞`.
pub fn psnr(x: &[f64], reference: &[f64], data_range: f64) -> Result<f64> {
    check_same(x, reference)?;
    if !(data_range > 0.0) {
        return Err(Error::invalid("data range must be positive"));
    }
    let mse = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    })
}

fn window() -> Vec<f64> {
    let r = WINDOW_RADIUS as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `width × height` image.
fn blur_valid(img: &[f64], width: usize, height: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let ow = width + 1 - k;
    let oh = height + 1 - k;
    let mut tmp = vec![0.0; ow * height];
    for y in 0..height {
        let row = &img[y * width..(y + 1) * width];
        for x in 0..ow {
            tmp[y * ow + x] = w.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = w.iter().enumerate().map(|(j, a)| a * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully covered 11×11 Gaussian windows (σ = 1.5).
pub fn ssim(x: &[f64], reference: &[f64], width: usize, height: usize, data_range: f64) -> Result<f64> {
    check_same(x, reference)?;
    if x.len() != width * height {
        return Err(Error::invalid("image size does not match its dimensions"));
    }
    let k = 2 * WINDOW_RADIUS + 1;
    if width < k || height < k {
        return Err(Error::invalid(format!("SSIM needs images of at least {k}×{k}")));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid("data range must be positive"));
    }
    let w = window();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = blur_valid(x, width, height, &w);
    let my = blur_valid(reference, width, height, &w);
    let mxx = blur_valid(&prod(x, x), width, height, &w);
    let myy = blur_valid(&prod(reference, reference), width, height, &w);
    let mxy = blur_valid(&prod(x, reference), width, height, &w);
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of one slice; the data range comes from the reference.
pub fn slice_scores(x: &SliceImage, reference: &SliceImage) -> Result<Scores> {
    if x.width() != reference.width() || x.height() != reference.height() {
        return Err(Error::invalid("slice dimensions differ"));
    }
    let (lo, hi) = reference.min_max();
    let range = if hi > lo { hi - lo } else { 1.0 };
    Ok(Scores {
        psnr: psnr(x.data(), reference.data(), range)?,
        ssim: ssim(x.data(), reference.data(), x.width(), x.height(), range)?,
    })
}

/// Metrics averaged over corresponding slices.
pub fn mean_scores(xs: &[SliceImage], references: &[SliceImage]) -> Result<Scores> {
    if xs.len() != references.len() || xs.is_empty() {
        return Err(Error::invalid("need matching, non-empty slice lists"));
    }
    let all: Vec<Scores> = xs.iter().zip(references).map(|(a, b)| slice_scores(a, b)).collect::<Result<_>>()?;
    let n = all.len() as f64;
    Ok(Scores {
        psnr: all.iter().map(|s| s.psnr).sum::<f64>() / n,
        ssim: all.iter().map(|s| s.ssim).sum::<f64>() / n,
    })
}

/// Ground-truth ortho slices of a voxel volume.
pub fn ortho_references(gt: &Volume) -> Vec<SliceImage> {
    ortho_slices(gt.shape(), gt.voxel_size())
        .iter()
        .map(|o| sample_plane(gt, o))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best_param: f64,
    pub best: Scores,
    /// `(param, scores)` for every grid point, in grid order.
    pub scores: Vec<(f64, Scores)>,
}

/// Picks the baseline parameter maximizing ortho-slice mean SSIM; ties go to
/// the smaller parameter.
pub fn grid_search_baseline(s: &Sinogram, gt: &Volume, kind: BaselineKind, grid: &[f64]) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::invalid("grid must not be empty"));
    }
    let g = s.geometry();
    let hw = g.det_cols() - 1;
    let filters = grid
        .iter()
        .map(|&p| baseline_filter(kind, p, hw, g.pixel_size()))
        .collect::<Result<Vec<_>>>()?;
    let refs = ortho_references(gt);
    let orients: Vec<_> = refs.iter().map(|r| r.orientation().clone()).collect();
    let mut scores = Vec::with_capacity(grid.len());
    // bounded memory: filter a few grid points at a time
    for (chunk_p, chunk_f) in grid.chunks(4).zip(filters.chunks(4)) {
        let stack = filter_and_cache(s, chunk_f)?;
        let part: Vec<Scores> = (0..chunk_f.len())
            .into_par_iter()
            .map(|k| {
                let recs = orients
                    .iter()
                    .map(|o| stack.backproject(k, o, None))
                    .collect::<Result<Vec<_>>>()?;
                mean_scores(&recs, &refs)
            })
            .collect::<Result<_>>()?;
        scores.extend(chunk_p.iter().copied().zip(part));
    }
    let mut best = 0;
    for (i, (p, sc)) in scores.iter().enumerate() {
        let (bp, bs) = scores[best];
        if sc.ssim > bs.ssim || (sc.ssim == bs.ssim && *p < bp) {
            best = i;
        }
    }
    Ok(GridSearch {
        best_param: scores[best].0,
        best: scores[best].1,
        scores,
    })
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straightforward 2-D window SSIM used as an independent oracle.
    fn ssim_direct(x: &[f64], y: &[f64], w: usize, h: usize, range: f64) -> f64 {
        let r = 5i64;
        let mut win = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as i64 - r, j as i64 - r);
                *v = (-((di * di + dj * dj) as f64) / (2.0 * 1.5 * 1.5)).exp();
                s += *v;
            }
        }
        let c1 = (0.01 * range).powi(2);
        let c2 = (0.03 * range).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for cy in 5..h - 5 {
            for cx in 5..w - 5 {
                let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win.iter().enumerate() {
                    for (j, wv) in row.iter().enumerate() {
                        let p = (cy + i - 5) * w + cx + j - 5;
                        let wt = wv / s;
                        ux += wt * x[p];
                        uy += wt * y[p];
                        xx += wt * x[p] * x[p];
                        yy += wt * y[p] * y[p];
                        xy += wt * x[p] * y[p];
                    }
                }
                let (vx, vy, cv) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
                total += ((2.0 * ux * uy + c1) * (2.0 * cv + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn psnr_examples() {
        let r = vec![0.0; 16];
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), f64::INFINITY);
        assert!((psnr(&[0.1; 16], &r, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&[1.0; 16], &r, 1.0).unwrap().abs() < 1e-12);
        assert!(psnr(&[1.0; 4], &r, 1.0).is_err());
        assert!(psnr(&r, &r, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = random_image(&mut rng, 32 * 24);
        assert!((ssim(&img, &img, 32, 24, 1.0).unwrap() - 1.0).abs() < 1e-12);
        // zero local means: alternating signs
        let centered: Vec<f64> = (0..32 * 24)
            .map(|i| if (i % 32 + i / 32) % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + 0.5 * (i as f64 / 40.0).sin()))
            .collect();
        let neg: Vec<f64> = centered.iter().map(|v| -v).collect();
        assert!(ssim(&neg, &centered, 32, 24, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_direct_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let (w, h) = (rng.random_range(11..40), rng.random_range(11..40));
            let a = random_image(&mut rng, w * h);
            let b: Vec<f64> = a.iter().map(|v| v + 0.3 * (rng.random::<f64>() - 0.5)).collect();
            let fast = ssim(&a, &b, w, h, 1.0).unwrap();
            let slow = ssim_direct(&a, &b, w, h, 1.0);
            assert!((fast - slow).abs() <= 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        assert!(ssim(&[0.0; 100], &[0.0; 100], 10, 10, 1.0).is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(linear_grid(0.5, 5.0, 10).len(), 10);
        assert_eq!(linear_grid(0.5, 5.0, 1), vec![0.5]);
        let g = linear_grid(0.1, 1.0, 10);
        assert!((g[9] - 1.0).abs() < 1e-15 && (g[0] - 0.1).abs() < 1e-15);
    }
}
