//! Self-supervised training of learned FBP filters from one noisy dataset,
//! the supervised variant, and slice reconstruction with a trained model.

use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::FilteredStack;
use crate::filters::{basis_element, make_basis, ram_lak, ExpBinBasis, Filter, RowConvolver};
use crate::geometry::{ortho_slices, split_angles, Geometry, SliceOrientation};
use crate::mlp::{extract_filters, mlp_forward, train_lma, LearnedFilters, MLPParams, ScalingRecord, TrainReport, TrainingSet};
use crate::projector::{angular_weight, backproject_points, sample_plane, SliceImage, Sinogram, Volume};

/// Projections filtered together during data preparation.
const ANGLE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Input from one subset, target from the others.
    #[serde(rename = "x1")]
    X1,
    /// Input from the other subsets, target from one subset.
    #[serde(rename = "1x")]
    OneX,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::X1 => "x1",
            Strategy::OneX => "1x",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x1" | "x:1" => Some(Strategy::X1),
            "1x" | "1:x" => Some(Strategy::OneX),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct N2FConfig {
    pub n_splits: usize,
    pub strategy: Strategy,
    pub n_train: usize,
    pub n_hidden: usize,
    pub seed: u64,
}

impl Default for N2FConfig {
    fn default() -> Self {
        Self {
            n_splits: 3,
            strategy: Strategy::OneX,
            n_train: 50_000,
            n_hidden: 4,
            seed: 0,
        }
    }
}

/// Validation rows drawn on top of `n_train`.
pub fn validation_size(n_train: usize) -> usize {
    (0.1 * n_train as f64).round() as usize
}

/// Identifies the acquisition a model or cache belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryFingerprint {
    pub n_angles: usize,
    pub det_rows: usize,
    pub det_cols: usize,
    pub knots: Vec<usize>,
}

impl GeometryFingerprint {
    pub fn of(g: &Geometry) -> Result<Self> {
        let basis = make_basis(g.det_cols().saturating_sub(1).max(1))?;
        Ok(Self {
            n_angles: g.n_angles(),
            det_rows: g.det_rows(),
            det_cols: g.det_cols(),
            knots: basis.knots().to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Training {
    SelfSupervised { strategy: Strategy, n_splits: usize },
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub training: Training,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub iterations: usize,
    pub best_validation_loss: f64,
    pub prep_seconds: f64,
    pub fit_seconds: f64,
}

/// Trained network plus the filters derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct N2FModel {
    params: MLPParams,
    scaling: ScalingRecord,
    basis: ExpBinBasis,
    learned: LearnedFilters,
    fingerprint: GeometryFingerprint,
    meta: TrainingMeta,
}

impl N2FModel {
    pub fn new(
        params: MLPParams,
        scaling: ScalingRecord,
        basis: ExpBinBasis,
        fingerprint: GeometryFingerprint,
        meta: TrainingMeta,
    ) -> Result<Self> {
        if fingerprint.knots != basis.knots() {
            return Err(Error::Mismatch("basis knots differ from the geometry fingerprint".into()));
        }
        let learned = extract_filters(&params, &basis, &scaling)?;
        Ok(Self {
            params,
            scaling,
            basis,
            learned,
            fingerprint,
            meta,
        })
    }

    pub fn params(&self) -> &MLPParams {
        &self.params
    }

    pub fn scaling(&self) -> &ScalingRecord {
        &self.scaling
    }

    pub fn basis(&self) -> &ExpBinBasis {
        &self.basis
    }

    pub fn learned(&self) -> &LearnedFilters {
        &self.learned
    }

    pub fn learned_filters(&self) -> &[Filter] {
        &self.learned.filters
    }

    pub fn fingerprint(&self) -> &GeometryFingerprint {
        &self.fingerprint
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    /// Errors unless the model was trained for this acquisition layout.
    pub fn check_geometry(&self, g: &Geometry) -> Result<()> {
        let fp = GeometryFingerprint::of(g)?;
        if fp != self.fingerprint {
            return Err(Error::Mismatch(format!(
                "model expects {} angles on a {}x{} detector, data has {} angles on {}x{}",
                self.fingerprint.n_angles,
                self.fingerprint.det_rows,
                self.fingerprint.det_cols,
                fp.n_angles,
                fp.det_rows,
                fp.det_cols
            )));
        }
        Ok(())
    }

    /// Errors unless `cache` holds exactly this model's filters over matching data.
    pub fn check_cache(&self, cache: &FilteredStack) -> Result<()> {
        self.check_geometry(cache.geometry())?;
        let want: Vec<u64> = self.learned.filters.iter().map(Filter::fingerprint).collect();
        if cache.fingerprints() != want.as_slice() {
            return Err(Error::Mismatch("filtered cache was not built from this model's filters".into()));
        }
        Ok(())
    }
}

/// Basis and target reconstructions of every subset on the three ortho slices.
#[derive(Debug, Clone)]
pub struct PrepData {
    n_splits: usize,
    n_elems: usize,
    orientations: Vec<SliceOrientation>,
    /// `[subset][slice]`: FBP with the target filter.
    target: Vec<Vec<Vec<f64>>>,
    /// `[subset][slice][element]`: FBP with a basis element.
    inputs: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Reconstructs `orients` from several angle groups and filters at once.
///
/// Returns `[group][slice][filter]` images. The sinogram is streamed in angle
/// chunks so only one chunk of filtered projections is held at a time.
fn grouped_slices(
    s: &Sinogram,
    groups: &[Vec<usize>],
    filters: &[Filter],
    orients: &[SliceOrientation],
) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    let g = s.geometry();
    let plane = g.det_rows() * g.det_cols();
    let conv = RowConvolver::new(filters, g.det_cols())?;
    let nf = filters.len();
    let mut group_of = vec![usize::MAX; g.n_angles()];
    for (k, grp) in groups.iter().enumerate() {
        for &a in grp {
            group_of[a] = k;
        }
    }
    let weights: Vec<f64> = groups.iter().map(|grp| angular_weight(grp.len())).collect();
    let mut out: Vec<Vec<Vec<Vec<f64>>>> = groups
        .iter()
        .map(|_| orients.iter().map(|o| vec![vec![0.0; o.n_pixels()]; nf]).collect())
        .collect();
    let mut bufs: Vec<Vec<f32>> = vec![vec![0.0; ANGLE_CHUNK * plane]; nf];
    for start in (0..g.n_angles()).step_by(ANGLE_CHUNK) {
        let end = (start + ANGLE_CHUNK).min(g.n_angles());
        let n = end - start;
        {
            let mut per_angle: Vec<Vec<&mut [f32]>> = (0..n).map(|_| Vec::with_capacity(nf)).collect();
            for buf in bufs.iter_mut() {
                for (a, chunk) in buf[..n * plane].chunks_mut(plane).enumerate() {
                    per_angle[a].push(chunk);
                }
            }
            per_angle.par_iter_mut().enumerate().for_each(|(a, outs)| {
                let ai = start + a;
                conv.apply(&s.data()[ai * plane..(ai + 1) * plane], outs);
            });
        }
        for (k, w) in weights.iter().enumerate() {
            let angles: Vec<usize> = (start..end).filter(|&a| group_of[a] == k).collect();
            if angles.is_empty() {
                continue;
            }
            for (si, o) in orients.iter().enumerate() {
                for (f, buf) in bufs.iter().enumerate() {
                    let part = backproject_points(g, &buf[..n * plane], start, &angles, *w, o);
                    out[k][si][f].iter_mut().zip(part).for_each(|(acc, v)| *acc += v);
                }
            }
        }
    }
    Ok(out)
}

fn mean_except(items: &[Vec<f64>], skip: usize) -> Vec<f64> {
    let n = (items.len() - 1) as f64;
    let mut out = vec![0.0; items[0].len()];
    for (l, it) in items.iter().enumerate().filter(|(l, _)| *l != skip) {
        let _ = l;
        out.iter_mut().zip(it).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Computes the per-subset target and basis reconstructions on the ortho slices
/// of a cubic volume matching the detector height.
pub fn prepare_data(s: &Sinogram, n_splits: usize, basis: &ExpBinBasis, target_filter: &Filter) -> Result<PrepData> {
    let g = s.geometry();
    let n = g.det_rows();
    let orients = ortho_slices([n, n, n], g.pixel_size()).to_vec();
    prepare_data_on(s, n_splits, basis, target_filter, &orients)
}

pub fn prepare_data_on(
    s: &Sinogram,
    n_splits: usize,
    basis: &ExpBinBasis,
    target_filter: &Filter,
    orients: &[SliceOrientation],
) -> Result<PrepData> {
    let split = split_angles(s.geometry(), n_splits)?;
    let mut filters: Vec<Filter> = (0..basis.len()).map(|i| basis_element(basis, i)).collect::<Result<_>>()?;
    filters.push(target_filter.clone());
    let mut res = grouped_slices(s, split.subsets(), &filters, orients)?;
    let ne = basis.len();
    let target = res
        .iter_mut()
        .map(|per_slice| per_slice.iter_mut().map(|f| f.pop().expect("target image")).collect())
        .collect();
    Ok(PrepData {
        n_splits,
        n_elems: ne,
        orientations: orients.to_vec(),
        target,
        inputs: res,
    })
}

impl PrepData {
    pub fn n_splits(&self) -> usize {
        self.n_splits
    }

    pub fn n_elems(&self) -> usize {
        self.n_elems
    }

    pub fn orientations(&self) -> &[SliceOrientation] {
        &self.orientations
    }

    /// Single-subset target reconstruction of subset `j` on slice `si`.
    pub fn target(&self, j: usize, si: usize) -> &[f64] {
        &self.target[j][si]
    }

    /// Single-subset reconstruction with basis element `i`.
    pub fn input(&self, j: usize, si: usize, i: usize) -> &[f64] {
        &self.inputs[j][si][i]
    }

    /// Mean of the other subsets' target reconstructions.
    pub fn complement_target(&self, j: usize, si: usize) -> Vec<f64> {
        let items: Vec<Vec<f64>> = (0..self.n_splits).map(|l| self.target[l][si].clone()).collect();
        mean_except(&items, j)
    }

    /// Mean of the other subsets' basis reconstructions.
    pub fn complement_input(&self, j: usize, si: usize, i: usize) -> Vec<f64> {
        let items: Vec<Vec<f64>> = (0..self.n_splits).map(|l| self.inputs[l][si][i].clone()).collect();
        mean_except(&items, j)
    }

    fn n_candidates(&self) -> usize {
        self.n_splits * self.orientations.iter().map(SliceOrientation::n_pixels).sum::<usize>()
    }
}

/// Draws `n_train` training rows plus 10% validation rows uniformly without
/// replacement over (subset, ortho slice, pixel) triples.
pub fn sample_voxels(prep: &PrepData, strategy: Strategy, n_train: usize, seed: u64) -> Result<TrainingSet> {
    let total = n_train + validation_size(n_train);
    let avail = prep.n_candidates();
    if n_train == 0 || total > avail {
        return Err(Error::invalid(format!(
            "requested {total} samples (including validation) but only {avail} are available"
        )));
    }
    let ne = prep.n_elems;
    let ns = prep.n_splits;
    // materialize the images this strategy reads: [subset][slice] inputs and targets
    let n_slices = prep.orientations.len();
    let mut ins: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(ns);
    let mut tgs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(ns);
    for j in 0..ns {
        let mut per_slice_in = Vec::with_capacity(n_slices);
        let mut per_slice_t = Vec::with_capacity(n_slices);
        for si in 0..n_slices {
            match strategy {
                Strategy::X1 => {
                    per_slice_in.push((0..ne).map(|i| prep.input(j, si, i).to_vec()).collect());
                    per_slice_t.push(prep.complement_target(j, si));
                }
                Strategy::OneX => {
                    per_slice_in.push((0..ne).map(|i| prep.complement_input(j, si, i)).collect());
                    per_slice_t.push(prep.target(j, si).to_vec());
                }
            }
        }
        ins.push(per_slice_in);
        tgs.push(per_slice_t);
    }
    let offsets: Vec<usize> = prep
        .orientations
        .iter()
        .scan(0, |acc, o| {
            let start = *acc;
            *acc += o.n_pixels();
            Some(start)
        })
        .collect();
    let per_subset: usize = prep.orientations.iter().map(SliceOrientation::n_pixels).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, avail, total);
    let mut inputs = Vec::with_capacity(total * ne);
    let mut targets = Vec::with_capacity(total);
    for c in picks.iter() {
        let (j, rest) = (c / per_subset, c % per_subset);
        let si = offsets.iter().rposition(|&o| o <= rest).expect("slice offset");
        let px = rest - offsets[si];
        inputs.extend((0..ne).map(|i| ins[j][si][i][px]));
        targets.push(tgs[j][si][px]);
    }
    TrainingSet::new(ne, inputs, targets, n_train)
}

/// The three ortho slices of a cubic volume matching the detector height.
pub fn default_slices(g: &Geometry) -> Vec<SliceOrientation> {
    let n = g.det_rows();
    ortho_slices([n, n, n], g.pixel_size()).to_vec()
}

fn training_basis(g: &Geometry) -> Result<(ExpBinBasis, Filter)> {
    let hw = g.det_cols().saturating_sub(1).max(1);
    Ok((make_basis(hw)?, ram_lak(hw, g.pixel_size())?))
}

/// Trains a model from a single noisy sinogram.
pub fn train_noise2filter(s: &Sinogram, cfg: &N2FConfig) -> Result<(N2FModel, TrainReport)> {
    let g = s.geometry();
    let (basis, target) = training_basis(g)?;
    let t0 = Instant::now();
    let prep = prepare_data(s, cfg.n_splits, &basis, &target)?;
    let set = sample_voxels(&prep, cfg.strategy, cfg.n_train, cfg.seed)?;
    let prep_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (params, scaling, report) = train_lma(&set, cfg.n_hidden, cfg.seed)?;
    let fit_seconds = t1.elapsed().as_secs_f64();
    log::info!("noise2filter: prep {prep_seconds:.2}s, fit {fit_seconds:.2}s");
    let meta = TrainingMeta {
        training: Training::SelfSupervised {
            strategy: cfg.strategy,
            n_splits: cfg.n_splits,
        },
        seed: cfg.seed,
        n_train: set.n_train(),
        n_validation: set.n_validation(),
        iterations: report.iterations,
        best_validation_loss: report.best_validation_loss,
        prep_seconds,
        fit_seconds,
    };
    let model = N2FModel::new(params, scaling, basis, GeometryFingerprint::of(g)?, meta)?;
    Ok((model, report))
}

/// Basis reconstructions of full data on `orients`: `[slice][element]`.
pub fn basis_reconstructions(s: &Sinogram, basis: &ExpBinBasis, orients: &[SliceOrientation]) -> Result<Vec<Vec<Vec<f64>>>> {
    let filters: Vec<Filter> = (0..basis.len()).map(|i| basis_element(basis, i)).collect::<Result<_>>()?;
    let all: Vec<usize> = (0..s.geometry().n_angles()).collect();
    Ok(grouped_slices(s, &[all], &filters, orients)?.pop().expect("one group"))
}

/// Supervised training against a known volume on the ortho slices of a
/// separate training acquisition.
pub fn train_nnfbp_supervised(noisy: &Sinogram, ground_truth: &Volume, cfg: &N2FConfig) -> Result<(N2FModel, TrainReport)> {
    let g = noisy.geometry();
    let (basis, _) = training_basis(g)?;
    let t0 = Instant::now();
    let orients = ortho_slices(ground_truth.shape(), ground_truth.voxel_size()).to_vec();
    let recs = basis_reconstructions(noisy, &basis, &orients)?;
    let truths: Vec<Vec<f64>> = orients.iter().map(|o| sample_plane(ground_truth, o).into_data()).collect();
    let offsets: Vec<usize> = orients
        .iter()
        .scan(0, |acc, o| {
            let st = *acc;
            *acc += o.n_pixels();
            Some(st)
        })
        .collect();
    let avail: usize = orients.iter().map(SliceOrientation::n_pixels).sum();
    let total = cfg.n_train + validation_size(cfg.n_train);
    if cfg.n_train == 0 || total > avail {
        return Err(Error::invalid(format!(
            "requested {total} samples (including validation) but only {avail} are available"
        )));
    }
    let ne = basis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut inputs = Vec::with_capacity(total * ne);
    let mut targets = Vec::with_capacity(total);
    for c in index::sample(&mut rng, avail, total).iter() {
        let si = offsets.iter().rposition(|&o| o <= c).expect("slice offset");
        let px = c - offsets[si];
        inputs.extend((0..ne).map(|i| recs[si][i][px]));
        targets.push(truths[si][px]);
    }
    let set = TrainingSet::new(ne, inputs, targets, cfg.n_train)?;
    let prep_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (params, scaling, report) = train_lma(&set, cfg.n_hidden, cfg.seed)?;
    let meta = TrainingMeta {
        training: Training::Supervised,
        seed: cfg.seed,
        n_train: set.n_train(),
        n_validation: set.n_validation(),
        iterations: report.iterations,
        best_validation_loss: report.best_validation_loss,
        prep_seconds,
        fit_seconds: t1.elapsed().as_secs_f64(),
    };
    let model = N2FModel::new(params, scaling, basis, GeometryFingerprint::of(g)?, meta)?;
    Ok((model, report))
}

/// Reconstructs a slice by backprojecting each cached learned filter and
/// combining the results pixelwise through the network.
pub fn reconstruct_slice_n2f(
    model: &N2FModel,
    cache: &FilteredStack,
    o: &SliceOrientation,
    cor_shift: Option<f64>,
) -> Result<SliceImage> {
    model.check_cache(cache)?;
    let parts = cache.backproject_all(o, cor_shift)?;
    let lf = model.learned();
    let mut xs = vec![0.0; parts.len()];
    let data = (0..o.n_pixels())
        .map(|p| {
            for (x, img) in xs.iter_mut().zip(&parts) {
                *x = img.data()[p];
            }
            lf.combine(&xs)
        })
        .collect();
    SliceImage::new(o.clone(), data)
}

/// Same output computed by evaluating the network on each pixel's basis reconstructions.
pub fn reconstruct_slice_via_basis(model: &N2FModel, s: &Sinogram, o: &SliceOrientation) -> Result<SliceImage> {
    model.check_geometry(s.geometry())?;
    let recs = basis_reconstructions(s, model.basis(), std::slice::from_ref(o))?;
    let per = &recs[0];
    let mut z = vec![0.0; per.len()];
    let data = (0..o.n_pixels())
        .map(|p| {
            for (zi, img) in z.iter_mut().zip(per) {
                *zi = img[p];
            }
            mlp_forward(model.params(), model.scaling(), &z)
        })
        .collect::<Result<Vec<_>>>()?;
    SliceImage::new(o.clone(), data)
}
