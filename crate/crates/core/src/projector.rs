//! Ray-driven forward projection and pixel-driven backprojection.
//!
//! Forward projection samples each ray at `voxel_size` steps with trilinear
//! interpolation. Backprojection projects each output point onto the detector
//! and interpolates bilinearly; detector samples outside the array count as
//! zero. The pair is adjoint up to interpolation error.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, SliceOrientation, Vec3};

/// Projection data laid out `[angle][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Sinogram {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.sinogram_len() {
            return Err(Error::invalid(format!(
                "sinogram has {} values, geometry needs {}",
                data.len(),
                geometry.sinogram_len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sinogram values must be finite"));
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let data = vec![0.0; geometry.sinogram_len()];
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data interpreted with a different rotation-axis offset.
    pub fn with_cor_shift(&self, cor_shift: f64) -> Self {
        Self {
            geometry: self.geometry.with_cor_shift(cor_shift),
            data: self.data.clone(),
        }
    }

    /// The `[row][col]` image recorded at angle index `a`.
    pub fn projection(&self, a: usize) -> &[f32] {
        let n = self.geometry.det_rows() * self.geometry.det_cols();
        &self.data[a * n..(a + 1) * n]
    }
}

/// Voxel data laid out `[z][y][x]`, centered on the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    voxel_size: f64,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: [usize; 3], voxel_size: f64, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::invalid("volume dimensions must be at least 1"));
        }
        if !(voxel_size > 0.0) {
            return Err(Error::invalid("voxel size must be positive"));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid("volume data length does not match its shape"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume values must be finite"));
        }
        Ok(Self {
            shape,
            voxel_size,
            data,
        })
    }

    pub fn zeros(shape: [usize; 3], voxel_size: f64) -> Self {
        Self {
            shape,
            voxel_size,
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// `[nz, ny, nx]`.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// World position of voxel `(z, y, x)`.
    pub fn voxel_center(&self, z: usize, y: usize, x: usize) -> Vec3 {
        let c = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) * 0.5) * self.voxel_size;
        Vec3::new(c(x, self.shape[2]), c(y, self.shape[1]), c(z, self.shape[0]))
    }

    /// Trilinear sample at a world position; zero outside the grid.
    pub fn sample(&self, p: &Vec3) -> f64 {
        let [nz, ny, nx] = self.shape;
        let fx = p.x() / self.voxel_size + (nx as f64 - 1.0) * 0.5;
        let fy = p.y() / self.voxel_size + (ny as f64 - 1.0) * 0.5;
        let fz = p.z() / self.voxel_size + (nz as f64 - 1.0) * 0.5;
        let (x0, wx) = split(fx);
        let (y0, wy) = split(fy);
        let (z0, wz) = split(fz);
        let mut acc = 0.0;
        for (dz, cz) in [(0, 1.0 - wz), (1, wz)] {
            let Some(z) = in_range(z0 + dz, nz) else { continue };
            for (dy, cy) in [(0, 1.0 - wy), (1, wy)] {
                let Some(y) = in_range(y0 + dy, ny) else { continue };
                for (dx, cx) in [(0, 1.0 - wx), (1, wx)] {
                    let Some(x) = in_range(x0 + dx, nx) else { continue };
                    acc += cz * cy * cx * self.data[(z * ny + y) * nx + x] as f64;
                }
            }
        }
        acc
    }
}

/// A reconstructed plane, `[height][width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    orientation: SliceOrientation,
    data: Vec<f64>,
}

impl SliceImage {
    pub fn new(orientation: SliceOrientation, data: Vec<f64>) -> Result<Self> {
        if data.len() != orientation.n_pixels() {
            return Err(Error::invalid("slice data length does not match its orientation"));
        }
        Ok(Self { orientation, data })
    }

    pub fn zeros(orientation: SliceOrientation) -> Self {
        let data = vec![0.0; orientation.n_pixels()];
        Self { orientation, data }
    }

    pub fn orientation(&self) -> &SliceOrientation {
        &self.orientation
    }

    pub fn width(&self) -> usize {
        self.orientation.width()
    }

    pub fn height(&self) -> usize {
        self.orientation.height()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[inline]
fn split(f: f64) -> (i64, f64) {
    let i = f.floor();
    (i as i64, f - i)
}

#[inline]
fn in_range(i: i64, n: usize) -> Option<usize> {
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

fn check_fits(v: &Volume, g: &Geometry) -> Result<()> {
    let [nz, ny, nx] = v.shape();
    let vs = v.voxel_size();
    let half_width = g.det_cols() as f64 * g.pixel_size() * 0.5;
    let half_xy = nx.max(ny) as f64 * vs * 0.5;
    if half_xy > half_width + 1e-9 || nz as f64 * vs > g.det_rows() as f64 * g.pixel_size() + 1e-9 {
        return Err(Error::invalid(format!(
            "volume {:?} (voxel {vs}) does not fit a {}x{} detector",
            v.shape(),
            g.det_rows(),
            g.det_cols()
        )));
    }
    Ok(())
}

/// Line integrals of `v` along every ray of `g`.
pub fn forward_project(v: &Volume, g: &Geometry) -> Result<Sinogram> {
    check_fits(v, g)?;
    let [nz, ny, nx] = v.shape();
    let vs = v.voxel_size();
    let (rows, cols) = (g.det_rows(), g.det_cols());
    // rays only need sampling inside the circle circumscribing the xy grid
    let radius = 0.5 * vs * ((nx * nx + ny * ny) as f64).sqrt() + vs;
    let cx = (nx as f64 - 1.0) * 0.5;
    let cy = (ny as f64 - 1.0) * 0.5;
    let cz = (nz as f64 - 1.0) * 0.5;
    let layer = nx * ny;
    let data = v.data();

    let mut out = vec![0.0f32; g.sinogram_len()];
    out.par_chunks_mut(rows * cols)
        .zip(g.angles().par_iter())
        .for_each(|(proj, &theta)| {
            let (sn, cs) = theta.sin_cos();
            for r in 0..rows {
                let (z0, wz) = split(g.detector_z(r as f64) / vs + cz);
                let layers: Vec<(usize, f64)> = [(z0, 1.0 - wz), (z0 + 1, wz)]
                    .into_iter()
                    .filter(|&(_, w)| w != 0.0)
                    .filter_map(|(z, w)| in_range(z, nz).map(|z| (z * layer, w)))
                    .collect();
                if layers.is_empty() {
                    continue;
                }
                for j in 0..cols {
                    let t = g.detector_t(j as f64);
                    if t.abs() >= radius {
                        continue;
                    }
                    let half = (radius * radius - t * t).sqrt();
                    let kmax = (half / vs).floor() as i64;
                    let mut acc = 0.0f64;
                    for k in -kmax..=kmax {
                        let s = k as f64 * vs;
                        let fx = (t * cs - s * sn) / vs + cx;
                        let fy = (t * sn + s * cs) / vs + cy;
                        let (x0, wx) = split(fx);
                        let (y0, wy) = split(fy);
                        for &(zoff, wzl) in &layers {
                            for (dy, wyy) in [(0, 1.0 - wy), (1, wy)] {
                                let Some(y) = in_range(y0 + dy, ny) else { continue };
                                let base = zoff + y * nx;
                                for (dx, wxx) in [(0, 1.0 - wx), (1, wx)] {
                                    let Some(x) = in_range(x0 + dx, nx) else { continue };
                                    acc += wzl * wyy * wxx * data[base + x] as f64;
                                }
                            }
                        }
                    }
                    proj[r * cols + j] = (acc * vs) as f32;
                }
            }
        });
    Ok(Sinogram {
        geometry: g.clone(),
        data: out,
    })
}

/// Angular weight giving a correctly scaled FBP over a half rotation.
pub fn angular_weight(n_used: usize) -> f64 {
    PI / n_used as f64
}

/// Backprojects the angles in `angles` onto the points of slice `o`, scaled
/// by `weight`, accumulating in 64 bits. Each output pixel sums over angles in
/// index order, so results do not depend on thread scheduling.
///
/// `data` holds consecutive projections starting at angle `first_angle`.
pub(crate) fn backproject_points(
    g: &Geometry,
    data: &[f32],
    first_angle: usize,
    angles: &[usize],
    weight: f64,
    o: &SliceOrientation,
) -> Vec<f64> {
    let (rows, cols) = (g.det_rows(), g.det_cols());
    let plane = rows * cols;
    let width = o.width();
    let trig: Vec<(f64, f64)> = angles.iter().map(|&a| g.angles()[a].sin_cos()).collect();
    let inv_ps = 1.0 / g.pixel_size();
    let col_center = (cols as f64 - 1.0) * 0.5 + g.cor_shift();

    let mut out = vec![0.0f64; o.n_pixels()];
    out.par_chunks_mut(width).enumerate().for_each(|(b, out_row)| {
        // detector row taps depend only on z, which is angle independent
        let mut xs = Vec::with_capacity(width);
        let mut row_taps = Vec::with_capacity(width);
        for a in 0..width {
            let p = o.pixel_position(a, b);
            xs.push((p.x() * inv_ps, p.y() * inv_ps));
            let (r0, wr) = split(g.row_of(p.z()));
            let t0 = in_range(r0, rows).map(|r| (r * cols, 1.0 - wr));
            let t1 = if wr != 0.0 {
                in_range(r0 + 1, rows).map(|r| (r * cols, wr))
            } else {
                None
            };
            row_taps.push([t0, t1]);
        }
        for (&ai, &(sn, cs)) in angles.iter().zip(&trig) {
            let k = ai - first_angle;
            let proj = &data[k * plane..(k + 1) * plane];
            for (a, acc) in out_row.iter_mut().enumerate() {
                let (x, y) = xs[a];
                let (j0, wc) = split(x * cs + y * sn + col_center);
                let mut v = 0.0f64;
                for (r_off, wr) in row_taps[a].iter().flatten() {
                    let mut s = 0.0f64;
                    if let Some(j) = in_range(j0, cols) {
                        s += (1.0 - wc) * proj[r_off + j] as f64;
                    }
                    if let Some(j) = in_range(j0 + 1, cols) {
                        s += wc * proj[r_off + j] as f64;
                    }
                    v += wr * s;
                }
                *acc += v;
            }
        }
        for acc in out_row.iter_mut() {
            *acc *= weight;
        }
    });
    out
}

/// Backprojection onto an arbitrary plane using every angle.
pub fn backproject_slice(s: &Sinogram, o: &SliceOrientation) -> SliceImage {
    let g = s.geometry();
    let angles: Vec<usize> = (0..g.n_angles()).collect();
    let data = backproject_points(g, s.data(), 0, &angles, angular_weight(angles.len()), o);
    SliceImage {
        orientation: o.clone(),
        data,
    }
}

/// Backprojection onto an arbitrary plane using a subset of the angles,
/// weighted by `π / angles.len()`.
pub fn backproject_slice_subset(s: &Sinogram, angles: &[usize], o: &SliceOrientation) -> Result<SliceImage> {
    if angles.is_empty() {
        return Err(Error::invalid("angle subset is empty"));
    }
    if angles.iter().any(|&a| a >= s.geometry().n_angles()) {
        return Err(Error::invalid("angle index out of range"));
    }
    let data = backproject_points(s.geometry(), s.data(), 0, angles, angular_weight(angles.len()), o);
    Ok(SliceImage {
        orientation: o.clone(),
        data,
    })
}

/// Full-volume backprojection; each `z` layer is an axial slice through the
/// same kernel as [`backproject_slice`].
pub fn backproject_volume(s: &Sinogram, shape: [usize; 3], voxel_size: f64) -> Result<Volume> {
    if shape.iter().any(|&n| n == 0) || !(voxel_size > 0.0) {
        return Err(Error::invalid("volume shape and voxel size must be positive"));
    }
    let [nz, ny, nx] = shape;
    let g = s.geometry();
    let angles: Vec<usize> = (0..g.n_angles()).collect();
    let w = angular_weight(angles.len());
    let mut data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        let zc = (z as f64 - (nz as f64 - 1.0) * 0.5) * voxel_size;
        let o = SliceOrientation::new(Vec3::new(0.0, 0.0, zc), Vec3::X, Vec3::Y, nx, ny, voxel_size)?;
        data.extend(backproject_points(g, s.data(), 0, &angles, w, &o).into_iter().map(|v| v as f32));
    }
    Volume::new(shape, voxel_size, data)
}

/// Extracts the plane of a volume matching an axis-aligned slice, by trilinear sampling.
pub fn sample_plane(v: &Volume, o: &SliceOrientation) -> SliceImage {
    let data = (0..o.height())
        .flat_map(|b| (0..o.width()).map(move |a| (a, b)))
        .map(|(a, b)| v.sample(&o.pixel_position(a, b)))
        .collect();
    SliceImage {
        orientation: o.clone(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_parallel_geometry, ortho_slice, OrthoAxis};

    fn unit_voxel(n: usize) -> Volume {
        let mut v = Volume::zeros([n, n, n], 1.0);
        let c = n / 2;
        let i = v.index(c, c, c);
        v.data_mut()[i] = 1.0;
        v
    }

    #[test]
    fn zero_volume_projects_to_zero() {
        let g = make_parallel_geometry(8, 8, 12, 0.0).unwrap();
        let s = forward_project(&Volume::zeros([8, 8, 8], 1.0), &g).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_is_linear_in_scale() {
        let g = make_parallel_geometry(5, 6, 10, 0.0).unwrap();
        let mut v = Volume::zeros([6, 6, 6], 1.0);
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = ((i * 37) % 11) as f32 * 0.1;
        }
        let a = forward_project(&v, &g).unwrap();
        let mut v2 = v.clone();
        v2.data_mut().iter_mut().for_each(|x| *x *= 2.0);
        let b = forward_project(&v2, &g).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() <= 1e-5 * y.abs().max(1.0));
        }
    }

    #[test]
    fn unit_voxel_projects_to_its_path_length() {
        // Odd grid so the voxel sits on the rotation axis and detector center.
        let n = 9;
        let g = make_parallel_geometry(16, 9, 13, 0.0).unwrap();
        let s = forward_project(&unit_voxel(n), &g).unwrap();
        let (center_row, center_col) = (4, 6);
        for (a, &theta) in g.angles().iter().enumerate() {
            // chord of the unit box through its center along the ray direction
            let chord = 1.0 / theta.cos().abs().max(theta.sin().abs());
            let got = s.projection(a)[center_row * 13 + center_col] as f64;
            // interpolated voxels are tents, not boxes: agreement is exact on
            // axis and within 20% at the diagonal
            assert!((got - chord).abs() <= 0.2 * chord, "angle {a}: {got} vs {chord}");
            if a == 0 {
                assert!((got - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_sinogram_backprojects_to_zero() {
        let g = make_parallel_geometry(4, 4, 6, 0.0).unwrap();
        let s = Sinogram::zeros(g);
        let v = backproject_volume(&s, [4, 4, 4], 1.0).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        let o = ortho_slice([4, 4, 4], 1.0, OrthoAxis::Frontal);
        assert!(backproject_slice(&s, &o).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_angle_ones_smear_to_pi() {
        let g = make_parallel_geometry(1, 6, 8, 0.0).unwrap();
        let s = Sinogram::new(g.clone(), vec![1.0; g.sinogram_len()]).unwrap();
        let v = backproject_volume(&s, [6, 6, 6], 1.0).unwrap();
        for &x in v.data() {
            assert!((x as f64 - PI).abs() < 1e-6);
        }
    }

    #[test]
    fn sinogram_shape_is_checked() {
        let g = make_parallel_geometry(2, 2, 2, 0.0).unwrap();
        assert!(Sinogram::new(g.clone(), vec![0.0; 7]).is_err());
        assert!(Sinogram::new(g, vec![f32::NAN; 8]).is_err());
    }

    #[test]
    fn oversized_volume_is_rejected() {
        let g = make_parallel_geometry(2, 4, 4, 0.0).unwrap();
        assert!(forward_project(&Volume::zeros([4, 8, 8], 1.0), &g).is_err());
    }
}
