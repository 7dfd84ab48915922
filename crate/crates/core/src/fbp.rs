//! Filtered backprojection on slices and volumes, subset reconstructions and
//! the filtered-sinogram cache used for interactive slicing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{convolve_many, convolve_sinogram, Filter};
use crate::geometry::{AngularSplit, Geometry, SliceOrientation};
use crate::projector::{
    angular_weight, backproject_points, backproject_slice, backproject_volume, SliceImage, Sinogram, Volume,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetMode {
    /// Only the angles of subset `j`.
    Single,
    /// Every angle outside subset `j`.
    Complement,
}

pub fn fbp_slice(s: &Sinogram, f: &Filter, o: &SliceOrientation) -> SliceImage {
    backproject_slice(&convolve_sinogram(s, f), o)
}

pub fn fbp_volume(s: &Sinogram, f: &Filter, shape: [usize; 3], voxel_size: f64) -> Result<Volume> {
    backproject_volume(&convolve_sinogram(s, f), shape, voxel_size)
}

/// Angle indices used by subset `j` in the given mode, in increasing order.
pub fn subset_angles(split: &AngularSplit, j: usize, mode: SubsetMode) -> Result<Vec<usize>> {
    let out = match mode {
        SubsetMode::Single => split.subset(j).map(<[usize]>::to_vec),
        SubsetMode::Complement => split.complement(j),
    };
    out.ok_or_else(|| Error::invalid(format!("subset index {j} out of range (N_s = {})", split.n_splits())))
}

/// FBP from the angles of one subset or its complement, weighted by
/// `π / angles used`.
pub fn fbp_subset_slice(
    s: &Sinogram,
    split: &AngularSplit,
    j: usize,
    f: &Filter,
    o: &SliceOrientation,
    mode: SubsetMode,
) -> Result<SliceImage> {
    let angles = subset_angles(split, j, mode)?;
    if angles.iter().any(|&a| a >= s.geometry().n_angles()) {
        return Err(Error::Mismatch("split does not match the sinogram".into()));
    }
    let filtered = convolve_sinogram(s, f);
    let data = backproject_points(filtered.geometry(), filtered.data(), 0, &angles, angular_weight(angles.len()), o);
    SliceImage::new(o.clone(), data)
}

/// Immutable stack of sinograms filtered once per filter; slices are then
/// reconstructed by backprojection alone.
#[derive(Debug, Clone)]
pub struct FilteredStack {
    geometry: Geometry,
    fingerprints: Vec<u64>,
    filtered: Vec<Vec<f32>>,
}

pub fn filter_and_cache(s: &Sinogram, filters: &[Filter]) -> Result<FilteredStack> {
    let filtered = convolve_many(s, filters)?;
    Ok(FilteredStack {
        geometry: s.geometry().clone(),
        fingerprints: filters.iter().map(Filter::fingerprint).collect(),
        filtered: filtered.into_iter().map(Sinogram::into_data).collect(),
    })
}

impl FilteredStack {
    pub fn len(&self) -> usize {
        self.filtered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered.is_empty()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn fingerprints(&self) -> &[u64] {
        &self.fingerprints
    }

    pub fn filtered(&self, k: usize) -> &[f32] {
        &self.filtered[k]
    }

    /// Backprojects cached sinogram `k`; `cor_shift` overrides the geometry's
    /// rotation-axis offset without re-filtering.
    pub fn backproject(&self, k: usize, o: &SliceOrientation, cor_shift: Option<f64>) -> Result<SliceImage> {
        let data = self
            .filtered
            .get(k)
            .ok_or_else(|| Error::invalid(format!("no cached sinogram {k}")))?;
        let g = match cor_shift {
            Some(c) => self.geometry.with_cor_shift(c),
            None => self.geometry.clone(),
        };
        let angles: Vec<usize> = (0..g.n_angles()).collect();
        let out = backproject_points(&g, data, 0, &angles, angular_weight(angles.len()), o);
        SliceImage::new(o.clone(), out)
    }

    pub fn backproject_all(&self, o: &SliceOrientation, cor_shift: Option<f64>) -> Result<Vec<SliceImage>> {
        (0..self.len()).map(|k| self.backproject(k, o, cor_shift)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{make_basis, ram_lak};
    use crate::geometry::{make_parallel_geometry, ortho_slice, split_angles, OrthoAxis};

    fn random_sino(n_angles: usize, rows: usize, cols: usize, seed: u64) -> Sinogram {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = make_parallel_geometry(n_angles, rows, cols, 0.0).unwrap();
        let d = (0..g.sinogram_len()).map(|_| rng.random::<f32>()).collect();
        Sinogram::new(g, d).unwrap()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_sinogram_gives_zero_slice() {
        let g = make_parallel_geometry(8, 8, 12, 0.0).unwrap();
        let s = Sinogram::zeros(g);
        let o = ortho_slice([8, 8, 8], 1.0, OrthoAxis::Frontal);
        let f = ram_lak(11, 1.0).unwrap();
        assert!(fbp_slice(&s, &f, &o).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filter_linearity() {
        let s = random_sino(12, 8, 16, 1);
        let o = ortho_slice([8, 8, 8], 1.0, OrthoAxis::Longitudinal);
        let b = make_basis(15).unwrap();
        let c: Vec<f64> = (0..b.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let full = fbp_slice(&s, &crate::filters::expand_filter(&b, &c).unwrap(), &o);
        let mut sum = vec![0.0; full.data().len()];
        for (i, ci) in c.iter().enumerate() {
            let e = crate::filters::basis_element(&b, i).unwrap();
            for (acc, v) in sum.iter_mut().zip(fbp_slice(&s, &e, &o).data()) {
                *acc += ci * v;
            }
        }
        assert!(rel(&sum, full.data()) < 1e-5);
    }

    #[test]
    fn complement_is_mean_of_singles() {
        let s = random_sino(24, 6, 10, 2);
        let o = ortho_slice([6, 8, 8], 1.0, OrthoAxis::Axial);
        let f = ram_lak(9, 1.0).unwrap();
        for n_s in [2, 3, 4, 8] {
            let split = split_angles(s.geometry(), n_s).unwrap();
            let singles: Vec<SliceImage> = (0..n_s)
                .map(|j| fbp_subset_slice(&s, &split, j, &f, &o, SubsetMode::Single).unwrap())
                .collect();
            for j in 0..n_s {
                let comp = fbp_subset_slice(&s, &split, j, &f, &o, SubsetMode::Complement).unwrap();
                let mut mean = vec![0.0; comp.data().len()];
                for (l, img) in singles.iter().enumerate().filter(|(l, _)| *l != j) {
                    let _ = l;
                    for (m, v) in mean.iter_mut().zip(img.data()) {
                        *m += v / (n_s - 1) as f64;
                    }
                }
                assert!(rel(&mean, comp.data()) < 1e-6, "N_s={n_s} j={j}");
            }
            let full = fbp_slice(&s, &f, &o);
            let mut all = vec![0.0; full.data().len()];
            for img in &singles {
                for (m, v) in all.iter_mut().zip(img.data()) {
                    *m += v / n_s as f64;
                }
            }
            assert!(rel(&all, full.data()) < 1e-6);
        }
    }

    #[test]
    fn one_angle_per_subset() {
        let s = random_sino(5, 4, 8, 3);
        let o = ortho_slice([4, 6, 6], 1.0, OrthoAxis::Axial);
        let f = ram_lak(7, 1.0).unwrap();
        let split = split_angles(s.geometry(), 5).unwrap();
        let singles: Vec<SliceImage> = (0..5)
            .map(|j| fbp_subset_slice(&s, &split, j, &f, &o, SubsetMode::Single).unwrap())
            .collect();
        let comp = fbp_subset_slice(&s, &split, 2, &f, &o, SubsetMode::Complement).unwrap();
        for (p, &c) in comp.data().iter().enumerate() {
            let m: f64 = [0, 1, 3, 4].iter().map(|&l| singles[l].data()[p]).sum::<f64>() / 4.0;
            assert!((m - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
        assert!(fbp_subset_slice(&s, &split, 5, &f, &o, SubsetMode::Single).is_err());
    }

    #[test]
    fn cache_matches_direct_bitwise() {
        let s = random_sino(10, 8, 12, 4);
        let o = ortho_slice([8, 12, 12], 1.0, OrthoAxis::Frontal);
        let f = ram_lak(11, 1.0).unwrap();
        let stack = filter_and_cache(&s, std::slice::from_ref(&f)).unwrap();
        assert_eq!(stack.len(), 1);
        assert_eq!(stack.fingerprints(), &[f.fingerprint()]);
        let cached = stack.backproject(0, &o, None).unwrap();
        assert_eq!(cached.data(), fbp_slice(&s, &f, &o).data());
        let four: Vec<Filter> = (0..4).map(|k| f.scaled(k as f64 + 1.0)).collect();
        assert_eq!(filter_and_cache(&s, &four).unwrap().len(), 4);
    }

    #[test]
    fn cor_override_equals_shifted_geometry() {
        let s = random_sino(10, 8, 16, 5);
        let o = ortho_slice([8, 12, 12], 1.0, OrthoAxis::Axial);
        let f = ram_lak(15, 1.0).unwrap();
        let stack = filter_and_cache(&s, std::slice::from_ref(&f)).unwrap();
        let a = stack.backproject(0, &o, Some(2.5)).unwrap();
        let b = fbp_slice(&s.with_cor_shift(2.5), &f, &o);
        assert_eq!(a.data(), b.data());
    }
}
