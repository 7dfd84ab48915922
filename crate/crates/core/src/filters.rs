//! Detector-row filters: dense symmetric kernels, the exponentially binned
//! hat basis, Ram-Lak, the smoothing baselines, and FFT row convolution.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::Sinogram;

/// Symmetric convolution kernel with support `[-half_width, half_width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    half_width: usize,
    coeffs: Vec<f64>,
}

impl Filter {
    /// `coeffs[k + half_width]` is the tap at offset `k`.
    pub fn new(half_width: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != 2 * half_width + 1 {
            return Err(Error::invalid(format!(
                "filter with half width {half_width} needs {} taps, got {}",
                2 * half_width + 1,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("filter taps must be finite"));
        }
        let f = Self { half_width, coeffs };
        let asym = (1..=half_width)
            .map(|k| (f.at(k as i64) - f.at(-(k as i64))).abs())
            .fold(0.0, f64::max);
        let scale = f.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
        if asym > 1e-9 * scale {
            return Err(Error::invalid("filter must be symmetric"));
        }
        Ok(f)
    }

    /// Builds a symmetric filter from its taps at offsets `0..=half_width`.
    pub fn from_half(half: &[f64]) -> Result<Self> {
        if half.is_empty() {
            return Err(Error::invalid("filter needs at least the center tap"));
        }
        let hw = half.len() - 1;
        let coeffs = (0..=2 * hw).map(|i| half[i.abs_diff(hw)]).collect();
        Self::new(hw, coeffs)
    }

    pub fn delta(half_width: usize) -> Self {
        let mut coeffs = vec![0.0; 2 * half_width + 1];
        coeffs[half_width] = 1.0;
        Self { half_width, coeffs }
    }

    pub fn zeros(half_width: usize) -> Self {
        Self {
            half_width,
            coeffs: vec![0.0; 2 * half_width + 1],
        }
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Tap at signed offset `k`; zero outside the support.
    pub fn at(&self, k: i64) -> f64 {
        let hw = self.half_width as i64;
        if k.abs() > hw {
            0.0
        } else {
            self.coeffs[(k + hw) as usize]
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            half_width: self.half_width,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Hash of the exact tap values, used to match caches against models.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the bit patterns
        let mut h: u64 = 0xcbf29ce484222325;
        for c in std::iter::once(self.half_width as f64).chain(self.coeffs.iter().copied()) {
            for b in c.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Piecewise-linear hat basis on exponentially spaced knots `0, 1, 2, 4, …, half_width`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpBinBasis {
    half_width: usize,
    knots: Vec<usize>,
}

impl ExpBinBasis {
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn knots(&self) -> &[usize] {
        &self.knots
    }

    /// Number of basis elements.
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Rebuilds a basis from stored knots, checking the doubling rule.
    pub fn from_knots(half_width: usize, knots: Vec<usize>) -> Result<Self> {
        let expected = make_basis(half_width)?;
        if expected.knots != knots {
            return Err(Error::format(format!("knots {knots:?} do not match half width {half_width}")));
        }
        Ok(expected)
    }

    /// Hat weight of element `i` at non-negative offset `k`.
    fn weight(&self, i: usize, k: usize) -> f64 {
        let kn = &self.knots;
        let c = kn[i];
        if k == c {
            return 1.0;
        }
        if k < c {
            let lo = kn[i - 1];
            if k <= lo {
                0.0
            } else {
                (k - lo) as f64 / (c - lo) as f64
            }
        } else {
            match kn.get(i + 1) {
                Some(&hi) if k < hi => (hi - k) as f64 / (hi - c) as f64,
                _ => 0.0,
            }
        }
    }
}

pub fn make_basis(half_width: usize) -> Result<ExpBinBasis> {
    if half_width == 0 {
        return Err(Error::invalid("basis half width must be at least 1"));
    }
    let mut knots = vec![0, 1];
    while *knots.last().unwrap() < half_width {
        let next = (2 * knots.last().unwrap()).min(half_width);
        knots.push(next);
    }
    Ok(ExpBinBasis { half_width, knots })
}

pub fn basis_element(b: &ExpBinBasis, i: usize) -> Result<Filter> {
    if i >= b.len() {
        return Err(Error::invalid(format!("basis element {i} out of range 0..{}", b.len())));
    }
    let half: Vec<f64> = (0..=b.half_width).map(|k| b.weight(i, k)).collect();
    Filter::from_half(&half)
}

/// Dense filter `Σ c[i]·e_i`.
pub fn expand_filter(b: &ExpBinBasis, c: &[f64]) -> Result<Filter> {
    if c.len() != b.len() {
        return Err(Error::invalid(format!(
            "basis has {} elements, got {} coefficients",
            b.len(),
            c.len()
        )));
    }
    let kn = &b.knots;
    let mut half = vec![0.0; b.half_width + 1];
    for w in 0..kn.len() - 1 {
        let (lo, hi) = (kn[w], kn[w + 1]);
        let span = (hi - lo) as f64;
        for (k, h) in half.iter_mut().enumerate().take(hi).skip(lo) {
            let t = (k - lo) as f64 / span;
            *h = c[w] * (1.0 - t) + c[w + 1] * t;
        }
    }
    half[b.half_width] = c[kn.len() - 1];
    Filter::from_half(&half)
}

/// Band-limited ramp filter for detector spacing `pixel_size`.
///
/// Taps are the sampled ramp kernel multiplied by the sample spacing, so a
/// plain discrete convolution approximates the continuous one.
pub fn ram_lak(half_width: usize, pixel_size: f64) -> Result<Filter> {
    if half_width == 0 {
        return Err(Error::invalid("Ram-Lak half width must be at least 1"));
    }
    if !(pixel_size > 0.0) {
        return Err(Error::invalid("pixel size must be positive"));
    }
    let t = pixel_size;
    let half: Vec<f64> = (0..=half_width)
        .map(|k| match k {
            0 => t / (4.0 * t * t),
            k if k % 2 == 1 => -t / (PI * PI * (k * k) as f64 * t * t),
            _ => 0.0,
        })
        .collect();
    Filter::from_half(&half)
}

/// Normalized discrete Gaussian on offsets `[-⌈4σ⌉, ⌈4σ⌉]`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let r = (4.0 * sigma).ceil() as i64;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let mut g: Vec<f64> = (-r..=r)
        .map(|j| norm * (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    Ok(g)
}

/// `f ∗ G_σ`, cropped back to the half width of `f`.
pub fn gaussian_smooth(f: &Filter, sigma: f64) -> Result<Filter> {
    let g = gaussian_kernel(sigma)?;
    let r = (g.len() / 2) as i64;
    let hw = f.half_width as i64;
    let half: Vec<f64> = (0..=hw)
        .map(|k| {
            (-r..=r)
                .map(|j| g[(j + r) as usize] * f.at(k - j))
                .sum()
        })
        .collect();
    Filter::from_half(&half)
}

/// Circular DFT of the filter taps (offset `k` stored at index `k mod n`).
pub fn filter_spectrum(f: &Filter) -> Vec<Complex<f64>> {
    let n = f.coeffs.len();
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for k in -(f.half_width as i64)..=(f.half_width as i64) {
        buf[k.rem_euclid(n as i64) as usize] = Complex::new(f.at(k), 0.0);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// Zeroes every spectral component above `f_sc` times the Nyquist frequency.
pub fn frequency_scale(f: &Filter, f_sc: f64) -> Result<Filter> {
    if !(f_sc > 0.0 && f_sc <= 1.0) {
        return Err(Error::invalid(format!("f_sc must be in (0, 1], got {f_sc}")));
    }
    let n = f.coeffs.len();
    let mut spec = filter_spectrum(f);
    let cutoff = f_sc * 0.5;
    for (m, v) in spec.iter_mut().enumerate() {
        let freq = m.min(n - m) as f64 / n as f64;
        if freq > cutoff {
            *v = Complex::new(0.0, 0.0);
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let hw = f.half_width as i64;
    let half: Vec<f64> = (0..=hw)
        .map(|k| {
            let a = spec[k as usize].re;
            let b = spec[(-k).rem_euclid(n as i64) as usize].re;
            0.5 * (a + b) / n as f64
        })
        .collect();
    Filter::from_half(&half)
}

/// FFT length for exact linear convolution of `cols`-long rows, cropped to `cols`.
///
/// Outputs only need offsets up to `cols - 1 + half_width` to be free of
/// wrap-around, so `cols + half_width` suffices.
pub fn fft_len(cols: usize, half_width: usize) -> usize {
    (cols + half_width).next_power_of_two()
}

/// Row convolver sharing one forward transform between several filters.
///
/// Two real rows travel through one complex FFT (real and imaginary parts);
/// symmetric filters have real spectra, so the two results separate cleanly.
pub struct RowConvolver {
    cols: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    spectra: Vec<Vec<f64>>,
}

impl RowConvolver {
    pub fn new(filters: &[Filter], cols: usize) -> Result<Self> {
        if filters.is_empty() {
            return Err(Error::invalid("need at least one filter"));
        }
        let hw = filters.iter().map(Filter::half_width).max().unwrap();
        let len = fft_len(cols, hw);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let spectra = filters
            .iter()
            .map(|f| {
                let mut buf = vec![Complex::new(0.0, 0.0); len];
                let h = f.half_width as i64;
                for k in -h..=h {
                    buf[k.rem_euclid(len as i64) as usize].re += f.at(k);
                }
                fwd.process(&mut buf);
                // symmetric taps: imaginary parts are rounding noise
                buf.iter().map(|c| c.re / len as f64).collect()
            })
            .collect();
        Ok(Self {
            cols,
            len,
            fwd,
            inv,
            spectra,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.spectra.len()
    }

    /// Filters every `cols`-long row of `input`; `outputs[f]` receives the
    /// rows convolved with filter `f`.
    pub fn apply(&self, input: &[f32], outputs: &mut [&mut [f32]]) {
        assert_eq!(outputs.len(), self.spectra.len());
        let cols = self.cols;
        let n_rows = input.len() / cols;
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        let mut work = vec![Complex::new(0.0, 0.0); self.len];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())];
        let mut r = 0;
        while r < n_rows {
            let pair = r + 1 < n_rows;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for j in 0..cols {
                let re = input[r * cols + j] as f64;
                let im = if pair { input[(r + 1) * cols + j] as f64 } else { 0.0 };
                buf[j] = Complex::new(re, im);
            }
            self.fwd.process_with_scratch(&mut buf, &mut scratch);
            for (spec, out) in self.spectra.iter().zip(outputs.iter_mut()) {
                for ((w, b), s) in work.iter_mut().zip(&buf).zip(spec) {
                    *w = b * *s;
                }
                self.inv.process_with_scratch(&mut work, &mut scratch);
                for j in 0..cols {
                    out[r * cols + j] = work[j].re as f32;
                    if pair {
                        out[(r + 1) * cols + j] = work[j].im as f32;
                    }
                }
            }
            r += 2;
        }
    }
}

/// Convolves every detector row with `f` (zero padded, cropped to the detector width).
pub fn convolve_sinogram(s: &Sinogram, f: &Filter) -> Sinogram {
    convolve_many(s, std::slice::from_ref(f))
        .expect("one filter")
        .pop()
        .expect("one output")
}

/// [`convolve_sinogram`] for several filters with one forward FFT per row pair.
pub fn convolve_many(s: &Sinogram, filters: &[Filter]) -> Result<Vec<Sinogram>> {
    let g = s.geometry();
    let conv = RowConvolver::new(filters, g.det_cols())?;
    let plane = g.det_rows() * g.det_cols();
    let mut outs: Vec<Vec<f32>> = vec![vec![0.0; s.data().len()]; filters.len()];
    {
        let mut per_angle: Vec<Vec<&mut [f32]>> = (0..g.n_angles()).map(|_| Vec::new()).collect();
        for out in outs.iter_mut() {
            for (a, chunk) in out.chunks_mut(plane).enumerate() {
                per_angle[a].push(chunk);
            }
        }
        per_angle
            .par_iter_mut()
            .enumerate()
            .for_each(|(a, outs)| conv.apply(&s.data()[a * plane..(a + 1) * plane], outs));
    }
    outs.into_iter()
        .map(|d| Sinogram::new(g.clone(), d))
        .collect()
}

/// Noise-suppressing modifications of the Ram-Lak filter used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Ram-Lak smoothed by a Gaussian of width `sigma` (detector pixels).
    Gaussian,
    /// Ram-Lak with frequencies above `f_sc` times Nyquist removed.
    FreqScale,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Gaussian => "gaussian",
            BaselineKind::FreqScale => "freqscale",
        }
    }
}

/// Baseline filter of the given kind and parameter, built on `ram_lak(half_width, pixel_size)`.
pub fn baseline_filter(kind: BaselineKind, param: f64, half_width: usize, pixel_size: f64) -> Result<Filter> {
    let rl = ram_lak(half_width, pixel_size)?;
    match kind {
        BaselineKind::Gaussian => gaussian_smooth(&rl, param),
        BaselineKind::FreqScale => frequency_scale(&rl, param),
    }
}
