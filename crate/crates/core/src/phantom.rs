//! Foam phantom: a solid cylinder with non-overlapping spherical voids,
//! projected analytically and corrupted with Poisson noise.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Vec3};
use crate::projector::{Sinogram, Volume};

/// Consecutive rejected candidates after which generation gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec3,
    pub radius: f64,
}

/// Parameters for [`generate_foam`]. Lengths are world units (voxels at unit voxel size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoamSpec {
    pub cylinder_radius: f64,
    pub cylinder_half_height: f64,
    pub n_balls: usize,
    /// Ball radii are uniform in this range, given as fractions of the cylinder radius.
    pub radius_range: (f64, f64),
    pub seed: u64,
}

impl FoamSpec {
    /// Default proportions for an `n³` volume: cylinder radius and half height `0.4·n`.
    pub fn for_volume(n: usize, n_balls: usize, seed: u64) -> Self {
        Self {
            cylinder_radius: 0.4 * n as f64,
            cylinder_half_height: 0.4 * n as f64,
            n_balls,
            radius_range: (0.04, 0.12),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoamPhantom {
    pub cylinder_radius: f64,
    pub cylinder_half_height: f64,
    pub balls: Vec<Ball>,
    /// Attenuation per unit length of the solid material.
    pub density: f64,
    pub seed: u64,
}

/// Rejection-samples `spec.n_balls` voids strictly inside the cylinder.
pub fn generate_foam(spec: &FoamSpec) -> Result<FoamPhantom> {
    let (rmin_f, rmax_f) = spec.radius_range;
    if !(spec.cylinder_radius > 0.0 && spec.cylinder_half_height > 0.0) {
        return Err(Error::invalid("cylinder dimensions must be positive"));
    }
    if !(rmin_f > 0.0 && rmax_f >= rmin_f) {
        return Err(Error::invalid("radius range must satisfy 0 < min <= max"));
    }
    let big_r = spec.cylinder_radius;
    let half_h = spec.cylinder_half_height;
    let (rmin, rmax) = (rmin_f * big_r, rmax_f * big_r);
    let cell = 2.0 * rmax;
    let key = |p: &Vec3| p.0.map(|v| (v / cell).floor() as i64);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut balls: Vec<Ball> = Vec::with_capacity(spec.n_balls);
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut rejections = 0usize;
    while balls.len() < spec.n_balls {
        let radius = if rmax > rmin { rng.random_range(rmin..rmax) } else { rmin };
        let rr = big_r * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let z = rng.random_range(-half_h..half_h);
        let center = Vec3::new(rr * phi.cos(), rr * phi.sin(), z);
        let inside = rr + radius < big_r && z.abs() + radius < half_h;
        let free = inside && {
            let [kx, ky, kz] = key(&center);
            let mut ok = true;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(ids) = grid.get(&[kx + dx, ky + dy, kz + dz]) {
                            for &i in ids {
                                let o = &balls[i];
                                if o.center.sub(&center).norm() <= o.radius + radius {
                                    ok = false;
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            ok
        };
        if free {
            grid.entry(key(&center)).or_default().push(balls.len());
            balls.push(Ball { center, radius });
            rejections = 0;
        } else {
            rejections += 1;
            if rejections > MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::CapacityExceeded(format!(
                    "could not place ball {} of {} after {MAX_CONSECUTIVE_REJECTIONS} attempts",
                    balls.len() + 1,
                    spec.n_balls
                )));
            }
        }
    }
    Ok(FoamPhantom {
        cylinder_radius: big_r,
        cylinder_half_height: half_h,
        balls,
        density: 1.0,
        seed: spec.seed,
    })
}

#[inline]
fn chord(radius_sq: f64, d: f64) -> f64 {
    let s = radius_sq - d * d;
    if s > 0.0 {
        2.0 * s.sqrt()
    } else {
        0.0
    }
}

/// Analytic projection; each detector pixel averages `supersampling²` rays.
pub fn project_foam(p: &FoamPhantom, g: &Geometry, supersampling: usize) -> Result<Sinogram> {
    if supersampling == 0 {
        return Err(Error::invalid("supersampling must be at least 1"));
    }
    let ss = supersampling;
    let (rows, cols) = (g.det_rows(), g.det_cols());
    let offsets: Vec<f64> = (0..ss).map(|i| (i as f64 + 0.5) / ss as f64 - 0.5).collect();
    let r2 = p.cylinder_radius * p.cylinder_radius;

    // Per detector sub-row: height and the balls it crosses.
    let sub_rows: Vec<(usize, f64)> = (0..rows)
        .flat_map(|r| offsets.iter().map(move |&o| (r, o)))
        .map(|(r, o)| (r, g.detector_z(r as f64 + o)))
        .collect();
    let row_balls: Vec<Vec<(f64, f64, f64)>> = sub_rows
        .iter()
        .map(|&(_, z)| {
            if z.abs() > p.cylinder_half_height {
                return Vec::new();
            }
            p.balls
                .iter()
                .filter_map(|b| {
                    let dz = z - b.center.z();
                    let rho2 = b.radius * b.radius - dz * dz;
                    (rho2 > 0.0).then_some((b.center.x(), b.center.y(), rho2))
                })
                .collect()
        })
        .collect();
    // Cylinder chord for every detector sub-column; independent of angle.
    let sub_cols: Vec<f64> = (0..cols)
        .flat_map(|j| offsets.iter().map(move |&o| (j, o)))
        .map(|(j, o)| chord(r2, g.detector_t(j as f64 + o)))
        .collect();

    let norm = p.density / (ss * ss) as f64;
    let inv_ps = 1.0 / g.pixel_size();
    let col_center = (cols as f64 - 1.0) * 0.5 + g.cor_shift();
    let mut out = vec![0.0f32; g.sinogram_len()];
    out.par_chunks_mut(rows * cols)
        .zip(g.angles().par_iter())
        .for_each(|(proj, &theta)| {
            let (sn, cs) = theta.sin_cos();
            let mut acc = vec![0.0f64; cols * ss];
            for (sr, &(r, z)) in sub_rows.iter().enumerate() {
                if z.abs() > p.cylinder_half_height {
                    continue;
                }
                acc.copy_from_slice(&sub_cols);
                for &(bx, by, rho2) in &row_balls[sr] {
                    let tc = bx * cs + by * sn;
                    let rho = rho2.sqrt();
                    // sub-column index k covers column k/ss + offset
                    let lo = ((tc - rho) * inv_ps + col_center + 0.5) * ss as f64 - 0.5;
                    let hi = ((tc + rho) * inv_ps + col_center + 0.5) * ss as f64 - 0.5;
                    let k0 = lo.ceil().max(0.0) as usize;
                    let k1 = (hi.floor() as i64).min((cols * ss) as i64 - 1);
                    if k1 < k0 as i64 {
                        continue;
                    }
                    for (k, a) in acc.iter_mut().enumerate().take(k1 as usize + 1).skip(k0) {
                        let t = g.detector_t(k as f64 / ss as f64 - 0.5 + 0.5 / ss as f64);
                        *a -= chord(rho2, t - tc);
                    }
                }
                let row = &mut proj[r * cols..(r + 1) * cols];
                for (j, v) in row.iter_mut().enumerate() {
                    let s: f64 = acc[j * ss..(j + 1) * ss].iter().sum();
                    *v += (s * norm) as f32;
                }
            }
        });
    Sinogram::new(g.clone(), out)
}

/// Samples the phantom on a `[nz, ny, nx]` grid, averaging 8 sub-points per voxel.
pub fn voxelize_foam(p: &FoamPhantom, shape: [usize; 3], voxel_size: f64) -> Result<Volume> {
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::invalid("volume dimensions must be at least 1"));
    }
    let [nz, ny, nx] = shape;
    let vs = voxel_size;
    let center = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) * 0.5) * vs;
    let q = 0.25 * vs;
    let r2 = p.cylinder_radius * p.cylinder_radius;
    let h = p.cylinder_half_height;

    // count of the 8 sub-points inside the solid, per voxel
    let mut counts = vec![0u8; nx * ny * nz];
    counts
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(z, layer)| {
            let zc = center(z, nz);
            let nzin = [zc - q, zc + q].iter().filter(|v| v.abs() <= h).count() as u8;
            if nzin == 0 {
                return;
            }
            for y in 0..ny {
                let yc = center(y, ny);
                for x in 0..nx {
                    let xc = center(x, nx);
                    let mut n = 0u8;
                    for dy in [-q, q] {
                        for dx in [-q, q] {
                            let (px, py) = (xc + dx, yc + dy);
                            if px * px + py * py <= r2 {
                                n += nzin;
                            }
                        }
                    }
                    layer[y * nx + x] = n;
                }
            }
        });

    let idx = |i: f64, n: usize| i / vs + (n as f64 - 1.0) * 0.5;
    for b in &p.balls {
        let c = b.center;
        let rad = b.radius;
        let range = |v: f64, n: usize| {
            let lo = idx(v - rad, n).floor().max(0.0) as usize;
            let hi = (idx(v + rad, n).ceil() as i64).min(n as i64 - 1);
            (lo, hi)
        };
        let (z0, z1) = range(c.z(), nz);
        let (y0, y1) = range(c.y(), ny);
        let (x0, x1) = range(c.x(), nx);
        if z1 < z0 as i64 || y1 < y0 as i64 || x1 < x0 as i64 {
            continue;
        }
        for z in z0..=z1 as usize {
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let (xc, yc, zc) = (center(x, nx), center(y, ny), center(z, nz));
                    let mut removed = 0u8;
                    for dz in [-q, q] {
                        for dy in [-q, q] {
                            for dx in [-q, q] {
                                let (px, py, pz) = (xc + dx, yc + dy, zc + dz);
                                let in_solid = px * px + py * py <= r2 && pz.abs() <= h;
                                let d = Vec3::new(px, py, pz).sub(&c);
                                if in_solid && d.dot(&d) < rad * rad {
                                    removed += 1;
                                }
                            }
                        }
                    }
                    let i = (z * ny + y) * nx + x;
                    counts[i] -= removed;
                }
            }
        }
    }
    let scale = (p.density / 8.0) as f32;
    Volume::new(shape, vs, counts.into_iter().map(|n| n as f32 * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Expected photon count per detector pixel without attenuation (I₀).
    pub photon_count: f64,
    pub seed: u64,
}

/// Replaces each line integral `p` by `-ln(max(c, 1) / I₀)` with `c ~ Poisson(I₀·e^{-p})`.
///
/// Every projection draws from its own ChaCha stream, so the result does not
/// depend on how angles are scheduled across threads.
pub fn apply_poisson_noise(s: &Sinogram, spec: &NoiseSpec) -> Result<Sinogram> {
    let i0 = spec.photon_count;
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::invalid("photon count must be positive"));
    }
    if s.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("line integrals must be non-negative"));
    }
    let g = s.geometry();
    let plane = g.det_rows() * g.det_cols();
    let mut out = vec![0.0f32; s.data().len()];
    out.par_chunks_mut(plane)
        .zip(s.data().par_chunks(plane))
        .enumerate()
        .for_each(|(a, (dst, src))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(a as u64);
            for (d, &p) in dst.iter_mut().zip(src) {
                let lambda = i0 * (-(p as f64)).exp();
                let c = if lambda > 0.0 {
                    Poisson::new(lambda).map(|dist| dist.sample(&mut rng)).unwrap_or(0.0)
                } else {
                    0.0
                };
                *d = (-(c.max(1.0) / i0).ln()) as f32;
            }
        });
    Sinogram::new(g.clone(), out)
}

/// Mean absorption `1 - e^{-p}` over the rays that cross the cylinder.
pub fn mean_absorption(p: &FoamPhantom, unit: &Sinogram, density: f64) -> f64 {
    let g = unit.geometry();
    let mask = cylinder_mask(p, g);
    let plane = mask.len();
    let (mut sum, mut n) = (0.0, 0usize);
    for proj in unit.data().chunks(plane) {
        for (&v, &m) in proj.iter().zip(&mask) {
            if m {
                sum += 1.0 - (-(v as f64) * density).exp();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn cylinder_mask(p: &FoamPhantom, g: &Geometry) -> Vec<bool> {
    let mut mask = Vec::with_capacity(g.det_rows() * g.det_cols());
    for r in 0..g.det_rows() {
        let z = g.detector_z(r as f64);
        for j in 0..g.det_cols() {
            let t = g.detector_t(j as f64);
            mask.push(z.abs() <= p.cylinder_half_height && t.abs() < p.cylinder_radius);
        }
    }
    mask
}

/// Rescales the density so the mean absorption over cylinder rays hits `target`.
pub fn calibrate_density(p: &FoamPhantom, g: &Geometry, target_absorption: f64) -> Result<FoamPhantom> {
    if !(0.0..1.0).contains(&target_absorption) {
        return Err(Error::invalid("target absorption must be in [0, 1)"));
    }
    let mut out = p.clone();
    if target_absorption == 0.0 {
        out.density = 0.0;
        return Ok(out);
    }
    let unit_phantom = FoamPhantom {
        density: 1.0,
        ..p.clone()
    };
    let unit = project_foam(&unit_phantom, g, 1)?;
    let f = |d: f64| mean_absorption(p, &unit, d);
    let mut hi = 1e-6;
    while f(hi) < target_absorption {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::invalid(format!(
                "absorption {target_absorption} is not reachable for this phantom"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target_absorption {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    out.density = 0.5 * (lo + hi);
    Ok(out)
}
