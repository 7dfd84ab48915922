//! Parallel-beam acquisition geometry, angular subsets and slice planes.
//!
//! World coordinates are centered on the rotation axis. The axis is `z`, which
//! maps onto detector rows; a point `(x, y, z)` seen at angle `θ` lands on
//! detector column `(x cos θ + y sin θ) / pixel_size + (det_cols - 1) / 2 + cor_shift`
//! and row `z / pixel_size + (det_rows - 1) / 2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const X: Vec3 = Vec3([1.0, 0.0, 0.0]);
    pub const Y: Vec3 = Vec3([0.0, 1.0, 0.0]);
    pub const Z: Vec3 = Vec3([0.0, 0.0, 1.0]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3(self.0.map(|v| v * s))
    }

    pub fn add(&self, o: &Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }

    pub fn sub(&self, o: &Vec3) -> Vec3 {
        self.add(&o.scale(-1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Rotates `v` about the unit `axis` by `angle` radians (Rodrigues).
pub fn rotate(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let k = axis.scale(1.0 / axis.norm());
    let (s, c) = angle.sin_cos();
    v.scale(c)
        .add(&k.cross(v).scale(s))
        .add(&k.scale(k.dot(v) * (1.0 - c)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    angles: Vec<f64>,
    det_rows: usize,
    det_cols: usize,
    pixel_size: f64,
    cor_shift: f64,
}

impl Geometry {
    pub fn new(
        angles: Vec<f64>,
        det_rows: usize,
        det_cols: usize,
        pixel_size: f64,
        cor_shift: f64,
    ) -> Result<Self> {
        if angles.is_empty() || det_rows == 0 || det_cols == 0 {
            return Err(Error::invalid("geometry needs at least one angle, row and column"));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::invalid(format!("pixel size must be positive, got {pixel_size}")));
        }
        if !cor_shift.is_finite() {
            return Err(Error::invalid("cor_shift must be finite"));
        }
        let two_pi = 2.0 * PI;
        if angles.iter().any(|a| !(0.0..two_pi).contains(a)) {
            return Err(Error::invalid("angles must lie in [0, 2π)"));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("angles must be strictly increasing"));
        }
        Ok(Self {
            angles,
            det_rows,
            det_cols,
            pixel_size,
            cor_shift,
        })
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn det_rows(&self) -> usize {
        self.det_rows
    }

    pub fn det_cols(&self) -> usize {
        self.det_cols
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn cor_shift(&self) -> f64 {
        self.cor_shift
    }

    /// Same acquisition with the rotation axis assumed at a different detector column.
    pub fn with_cor_shift(&self, cor_shift: f64) -> Self {
        Self {
            cor_shift,
            ..self.clone()
        }
    }

    /// Number of values in a sinogram for this geometry.
    pub fn sinogram_len(&self) -> usize {
        self.n_angles() * self.det_rows * self.det_cols
    }

    /// Continuous detector column for world coordinate `t` along the detector.
    #[inline]
    pub fn column_of(&self, t: f64) -> f64 {
        t / self.pixel_size + (self.det_cols as f64 - 1.0) * 0.5 + self.cor_shift
    }

    /// World coordinate along the detector of column `j`.
    #[inline]
    pub fn detector_t(&self, j: f64) -> f64 {
        (j - (self.det_cols as f64 - 1.0) * 0.5 - self.cor_shift) * self.pixel_size
    }

    #[inline]
    pub fn row_of(&self, z: f64) -> f64 {
        z / self.pixel_size + (self.det_rows as f64 - 1.0) * 0.5
    }

    #[inline]
    pub fn detector_z(&self, r: f64) -> f64 {
        (r - (self.det_rows as f64 - 1.0) * 0.5) * self.pixel_size
    }
}

/// Equally spaced angles over `[0, π)`.
pub fn make_parallel_geometry(
    n_angles: usize,
    det_rows: usize,
    det_cols: usize,
    cor_shift: f64,
) -> Result<Geometry> {
    if n_angles == 0 {
        return Err(Error::invalid("n_angles must be at least 1"));
    }
    let angles = (0..n_angles)
        .map(|i| i as f64 * PI / n_angles as f64)
        .collect();
    Geometry::new(angles, det_rows, det_cols, 1.0, cor_shift)
}

/// Round-robin partition of angle indices: subset `j` holds every index `i` with `i % n_splits == j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngularSplit {
    subsets: Vec<Vec<usize>>,
}

impl AngularSplit {
    pub fn n_splits(&self) -> usize {
        self.subsets.len()
    }

    pub fn subset(&self, j: usize) -> Option<&[usize]> {
        self.subsets.get(j).map(Vec::as_slice)
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    /// All indices outside subset `j`, in increasing order.
    pub fn complement(&self, j: usize) -> Option<Vec<usize>> {
        if j >= self.subsets.len() {
            return None;
        }
        let mut out: Vec<usize> = self
            .subsets
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != j)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        out.sort_unstable();
        Some(out)
    }
}

pub fn split_angles(g: &Geometry, n_splits: usize) -> Result<AngularSplit> {
    let n = g.n_angles();
    if n_splits < 2 || n_splits > n {
        return Err(Error::invalid(format!(
            "n_splits must be in [2, {n}], got {n_splits}"
        )));
    }
    let subsets = (0..n_splits)
        .map(|j| (j..n).step_by(n_splits).collect())
        .collect();
    Ok(AngularSplit { subsets })
}

/// A rectangular pixel grid on an arbitrary plane.
///
/// `origin` is the world position of the grid center; pixel `(a, b)` sits at
/// `origin + (a - (width-1)/2)·pixel_size·u + (b - (height-1)/2)·pixel_size·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceOrientation {
    origin: Vec3,
    u_axis: Vec3,
    v_axis: Vec3,
    width: usize,
    height: usize,
    pixel_size: f64,
}

const ORTHO_TOL: f64 = 1e-9;

impl SliceOrientation {
    pub fn new(
        origin: Vec3,
        u_axis: Vec3,
        v_axis: Vec3,
        width: usize,
        height: usize,
        pixel_size: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("slice width and height must be at least 1"));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::invalid("slice pixel size must be positive"));
        }
        if !origin.is_finite() || !u_axis.is_finite() || !v_axis.is_finite() {
            return Err(Error::invalid("slice vectors must be finite"));
        }
        if (u_axis.norm() - 1.0).abs() > ORTHO_TOL || (v_axis.norm() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid("slice axes must be unit length"));
        }
        if u_axis.dot(&v_axis).abs() >= ORTHO_TOL {
            return Err(Error::invalid("slice axes must be orthogonal"));
        }
        Ok(Self {
            origin,
            u_axis,
            v_axis,
            width,
            height,
            pixel_size,
        })
    }

    /// Builds a slice from approximately orthonormal axes, re-orthonormalizing
    /// `v` against `u` (Gram-Schmidt).
    pub fn orthonormalized(
        origin: Vec3,
        u_axis: Vec3,
        v_axis: Vec3,
        width: usize,
        height: usize,
        pixel_size: f64,
    ) -> Result<Self> {
        let un = u_axis.norm();
        if !(un > 0.0) {
            return Err(Error::invalid("u axis is degenerate"));
        }
        let u = u_axis.scale(1.0 / un);
        let v = v_axis.sub(&u.scale(u.dot(&v_axis)));
        let vn = v.norm();
        if !(vn > 1e-12) {
            return Err(Error::invalid("v axis is parallel to u"));
        }
        Self::new(origin, u, v.scale(1.0 / vn), width, height, pixel_size)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn u_axis(&self) -> Vec3 {
        self.u_axis
    }

    pub fn v_axis(&self) -> Vec3 {
        self.v_axis
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel_position(&self, a: usize, b: usize) -> Vec3 {
        let du = (a as f64 - (self.width as f64 - 1.0) * 0.5) * self.pixel_size;
        let dv = (b as f64 - (self.height as f64 - 1.0) * 0.5) * self.pixel_size;
        self.origin
            .add(&self.u_axis.scale(du))
            .add(&self.v_axis.scale(dv))
    }

    /// Moves the plane by `offset` world units along its normal.
    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            origin: self.origin.add(offset),
            ..self.clone()
        }
    }

    /// Rotates both axes (and the origin about `pivot`) by `angle` around `axis`.
    pub fn rotated(&self, axis: &Vec3, angle: f64, pivot: &Vec3) -> Result<Self> {
        let origin = rotate(&self.origin.sub(pivot), axis, angle).add(pivot);
        let u = rotate(&self.u_axis, axis, angle);
        let v = rotate(&self.v_axis, axis, angle);
        Self::orthonormalized(origin, u, v, self.width, self.height, self.pixel_size)
    }

    pub fn normal(&self) -> Vec3 {
        self.u_axis.cross(&self.v_axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrthoAxis {
    /// Constant `z`, spanned by `x` and `y`.
    Axial,
    /// Constant `y`, spanned by `x` and `z`.
    Frontal,
    /// Constant `x`, spanned by `y` and `z`.
    Longitudinal,
}

impl OrthoAxis {
    pub const ALL: [OrthoAxis; 3] = [OrthoAxis::Axial, OrthoAxis::Frontal, OrthoAxis::Longitudinal];

    pub fn name(&self) -> &'static str {
        match self {
            OrthoAxis::Axial => "axial",
            OrthoAxis::Frontal => "frontal",
            OrthoAxis::Longitudinal => "longitudinal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// World coordinate of the central voxel plane along an axis with `n` voxels.
///
/// Uses voxel index `(n - 1) / 2` (integer division) so the plane coincides
/// with a voxel layer; for `n = 128` that is layer 63, centered at `63.5` in
/// corner-origin coordinates.
pub fn central_plane(n: usize, voxel_size: f64) -> f64 {
    (((n - 1) / 2) as f64 - (n as f64 - 1.0) * 0.5) * voxel_size
}

/// Ortho-slice through the central voxel layer, for a volume of shape `[nz, ny, nx]`.
pub fn ortho_slice(volume_shape: [usize; 3], voxel_size: f64, axis: OrthoAxis) -> SliceOrientation {
    let [nz, ny, nx] = volume_shape.map(|n| n.max(1));
    let (origin, u, v, w, h) = match axis {
        OrthoAxis::Axial => (
            Vec3::new(0.0, 0.0, central_plane(nz, voxel_size)),
            Vec3::X,
            Vec3::Y,
            nx,
            ny,
        ),
        OrthoAxis::Frontal => (
            Vec3::new(0.0, central_plane(ny, voxel_size), 0.0),
            Vec3::X,
            Vec3::Z,
            nx,
            nz,
        ),
        OrthoAxis::Longitudinal => (
            Vec3::new(central_plane(nx, voxel_size), 0.0, 0.0),
            Vec3::Y,
            Vec3::Z,
            ny,
            nz,
        ),
    };
    SliceOrientation {
        origin,
        u_axis: u,
        v_axis: v,
        width: w,
        height: h,
        pixel_size: voxel_size,
    }
}

/// Axial, frontal and longitudinal central slices of a `[nz, ny, nx]` volume.
pub fn ortho_slices(volume_shape: [usize; 3], voxel_size: f64) -> [SliceOrientation; 3] {
    OrthoAxis::ALL.map(|a| ortho_slice(volume_shape, voxel_size, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_angles_are_zero_and_half_pi() {
        let g = make_parallel_geometry(2, 1, 4, 0.0).unwrap();
        assert_eq!(g.angles(), &[0.0, PI / 2.0]);
    }

    #[test]
    fn desk_and_paper_geometries() {
        let g = make_parallel_geometry(256, 128, 192, 0.0).unwrap();
        assert_eq!(g.n_angles(), 256);
        assert!((g.angles()[1] - PI / 256.0).abs() < 1e-15);
        let g = make_parallel_geometry(1024, 512, 768, 0.0).unwrap();
        assert_eq!((g.det_rows(), g.det_cols()), (512, 768));
        assert!(g.angles().iter().all(|a| *a < PI));
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(make_parallel_geometry(0, 1, 1, 0.0).is_err());
        assert!(make_parallel_geometry(1, 0, 1, 0.0).is_err());
        assert!(make_parallel_geometry(1, 1, 0, 0.0).is_err());
    }

    #[test]
    fn non_increasing_angles_are_rejected() {
        assert!(Geometry::new(vec![0.5, 0.5], 1, 1, 1.0, 0.0).is_err());
        assert!(Geometry::new(vec![7.0], 1, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn round_robin_split() {
        let g = make_parallel_geometry(6, 1, 1, 0.0).unwrap();
        let s = split_angles(&g, 3).unwrap();
        assert_eq!(s.subsets(), &[vec![0, 3], vec![1, 4], vec![2, 5]]);
        let g = make_parallel_geometry(4, 1, 1, 0.0).unwrap();
        let s = split_angles(&g, 2).unwrap();
        assert_eq!(s.subsets(), &[vec![0, 2], vec![1, 3]]);
        assert_eq!(s.complement(0).unwrap(), vec![1, 3]);
    }

    #[test]
    fn split_of_1024_into_three() {
        let g = make_parallel_geometry(1024, 1, 1, 0.0).unwrap();
        let s = split_angles(&g, 3).unwrap();
        // counted independently: indices i < 1024 with i % 3 == j
        let expected: Vec<usize> = (0..3).map(|j| (0..1024).filter(|i| i % 3 == j).count()).collect();
        assert_eq!(expected, vec![342, 341, 341]);
        let sizes: Vec<usize> = s.subsets().iter().map(Vec::len).collect();
        assert_eq!(sizes, expected);
    }

    #[test]
    fn split_bounds() {
        let g = make_parallel_geometry(4, 1, 1, 0.0).unwrap();
        assert!(split_angles(&g, 1).is_err());
        assert!(split_angles(&g, 5).is_err());
        assert!(split_angles(&g, 4).is_ok());
    }

    #[test]
    fn axial_slice_is_central_layer() {
        let [axial, frontal, longitudinal] = ortho_slices([128, 128, 128], 1.0);
        // layer 63 is centered at 63.5 in corner-origin coordinates
        assert_eq!(axial.origin().z() + 64.0, 63.5);
        assert_eq!(axial.u_axis(), Vec3::X);
        assert_eq!(axial.v_axis(), Vec3::Y);
        let center = Vec3::new(-0.5, -0.5, -0.5);
        for s in [&axial, &frontal, &longitudinal] {
            assert!(s.normal().dot(&center.sub(&s.origin())).abs() < 1e-12);
        }
    }

    #[test]
    fn non_orthonormal_axes_are_rejected() {
        let r = SliceOrientation::new(Vec3::default(), Vec3::X, Vec3::new(0.1, 1.0, 0.0), 4, 4, 1.0);
        assert!(r.is_err());
        let r = SliceOrientation::new(Vec3::default(), Vec3::X, Vec3::new(0.0, 2.0, 0.0), 4, 4, 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn rotation_keeps_axes_orthonormal() {
        let s = ortho_slice([16, 16, 16], 1.0, OrthoAxis::Frontal);
        let mut cur = s;
        for k in 0..50 {
            let axis = Vec3::new(1.0, 0.3 * k as f64, -0.7);
            cur = cur.rotated(&axis, 0.37, &Vec3::default()).unwrap();
            assert!(cur.u_axis().dot(&cur.v_axis()).abs() < 1e-9);
            assert!((cur.u_axis().norm() - 1.0).abs() < 1e-9);
        }
    }
}
