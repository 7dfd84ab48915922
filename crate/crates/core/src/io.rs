//! On-disk formats: datasets (raw f32 + TOML manifest), model files (JSON)
//! and slice images (16-bit PGM/PNG plus raw f32).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::ExpBinBasis;
use crate::geometry::Geometry;
use crate::mlp::{MLPParams, ScalingRecord};
use crate::noise2filter::{GeometryFingerprint, N2FModel, TrainingMeta};
use crate::phantom::{generate_foam, voxelize_foam, FoamPhantom, FoamSpec, NoiseSpec};
use crate::projector::{SliceImage, Sinogram, Volume};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DATA_LAYOUT: &str = "f32le[angle][row][col]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub n_angles: usize,
    pub det_rows: usize,
    pub det_cols: usize,
    pub pixel_size: f64,
    pub cor_shift: f64,
    pub angles: Vec<f64>,
}

impl GeometryRecord {
    pub fn from_geometry(g: &Geometry) -> Self {
        Self {
            n_angles: g.n_angles(),
            det_rows: g.det_rows(),
            det_cols: g.det_cols(),
            pixel_size: g.pixel_size(),
            cor_shift: g.cor_shift(),
            angles: g.angles().to_vec(),
        }
    }

    pub fn to_geometry(&self) -> Result<Geometry> {
        if self.angles.len() != self.n_angles {
            return Err(Error::format(format!(
                "manifest lists {} angles but n_angles = {}",
                self.angles.len(),
                self.n_angles
            )));
        }
        Geometry::new(self.angles.clone(), self.det_rows, self.det_cols, self.pixel_size, self.cor_shift)
            .map_err(|e| Error::format(format!("invalid geometry in manifest: {e}")))
    }
}

/// Parameters that regenerate the phantom behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomRecord {
    pub spec: FoamSpec,
    pub density: f64,
    pub volume_shape: [usize; 3],
    pub voxel_size: f64,
}

impl PhantomRecord {
    pub fn phantom(&self) -> Result<FoamPhantom> {
        let mut p = generate_foam(&self.spec)?;
        p.density = self.density;
        Ok(p)
    }

    pub fn ground_truth(&self) -> Result<Volume> {
        voxelize_foam(&self.phantom()?, self.volume_shape, self.voxel_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub data_file: String,
    pub data_layout: String,
    pub seed: u64,
    pub geometry: GeometryRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl DatasetManifest {
    pub fn new(g: &Geometry, data_file: impl Into<String>, seed: u64) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            data_file: data_file.into(),
            data_layout: DATA_LAYOUT.into(),
            seed,
            geometry: GeometryRecord::from_geometry(g),
            phantom: None,
            noise: None,
        }
    }

    /// Reconstruction grid: the phantom's when recorded, otherwise
    /// `[rows, cols, cols]` at detector pixel pitch.
    pub fn volume_grid(&self) -> ([usize; 3], f64) {
        match &self.phantom {
            Some(p) => (p.volume_shape, p.voxel_size),
            None => {
                let g = &self.geometry;
                ([g.det_rows, g.det_cols, g.det_cols], g.pixel_size)
            }
        }
    }
}

/// Data file written next to a manifest: same stem, `.f32` extension.
pub fn data_path_for(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes the sinogram and a manifest describing it. The data file name in
/// `manifest` is replaced by the sibling `.f32` path.
pub fn save_dataset(manifest_path: &Path, s: &Sinogram, manifest: &DatasetManifest) -> Result<()> {
    let data_path = data_path_for(manifest_path);
    let mut m = manifest.clone();
    m.geometry = GeometryRecord::from_geometry(s.geometry());
    m.data_file = data_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid("manifest path has no file name"))?
        .to_string();
    m.format_version = DATASET_FORMAT_VERSION;
    m.data_layout = DATA_LAYOUT.into();
    fs::write(&data_path, f32_bytes(s.data()))?;
    let text = toml::to_string(&m).map_err(|e| Error::format(e.to_string()))?;
    fs::write(manifest_path, text)?;
    Ok(())
}

pub fn read_manifest(manifest_path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(manifest_path)?;
    let m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::format(format!("bad manifest: {e}")))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(format!("unsupported dataset format version {}", m.format_version)));
    }
    if m.data_layout != DATA_LAYOUT {
        return Err(Error::format(format!("unsupported data layout '{}'", m.data_layout)));
    }
    Ok(m)
}

pub fn read_f32_file(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected_len * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn load_dataset(manifest_path: &Path) -> Result<(Sinogram, DatasetManifest)> {
    let m = read_manifest(manifest_path)?;
    let g = m.geometry.to_geometry()?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let data = read_f32_file(&dir.join(&m.data_file), g.sinogram_len())?;
    let s = Sinogram::new(g, data).map_err(|e| Error::format(e.to_string()))?;
    Ok((s, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRecord {
    pub half_width: usize,
    pub knots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub basis: BasisRecord,
    pub params: MLPParams,
    pub scaling: ScalingRecord,
    pub fingerprint: GeometryFingerprint,
    pub meta: TrainingMeta,
}

impl ModelFile {
    pub fn from_model(m: &N2FModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            basis: BasisRecord {
                half_width: m.basis().half_width(),
                knots: m.basis().knots().to_vec(),
            },
            params: m.params().clone(),
            scaling: m.scaling().clone(),
            fingerprint: m.fingerprint().clone(),
            meta: m.meta().clone(),
        }
    }

    pub fn into_model(self) -> Result<N2FModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::format(format!("unsupported model format version {}", self.format_version)));
        }
        let basis = ExpBinBasis::from_knots(self.basis.half_width, self.basis.knots)?;
        N2FModel::new(self.params, self.scaling, basis, self.fingerprint, self.meta)
    }
}

pub fn model_to_json(m: &N2FModel) -> Result<String> {
    serde_json::to_string_pretty(&ModelFile::from_model(m)).map_err(|e| Error::format(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<N2FModel> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::format(format!("bad model file: {e}")))?;
    f.into_model()
}

pub fn save_model(path: &Path, m: &N2FModel) -> Result<()> {
    fs::write(path, model_to_json(m)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<N2FModel> {
    model_from_json(&fs::read_to_string(path)?)
}

/// Display window mapping `lo` to black and `hi` to white.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn of(img: &SliceImage) -> Self {
        let (lo, hi) = img.min_max();
        Self { lo, hi }
    }

    pub fn to_u16(&self, v: f64) -> u16 {
        let span = self.hi - self.lo;
        if !(span > 0.0) {
            return 0;
        }
        ((v - self.lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
    }
}

pub fn to_u16_pixels(img: &SliceImage, w: Window) -> Vec<u16> {
    img.data().iter().map(|&v| w.to_u16(v)).collect()
}

/// Binary 16-bit PGM (big-endian samples).
pub fn encode_pgm16(img: &SliceImage, w: Window) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for v in to_u16_pixels(img, w) {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn encode_png16(img: &SliceImage, w: Window) -> Result<Vec<u8>> {
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        img.width() as u32,
        img.height() as u32,
        to_u16_pixels(img, w),
    )
    .ok_or_else(|| Error::format("image buffer size mismatch"))?;
    let mut bytes = Vec::new();
    image::DynamicImage::ImageLuma16(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::format(format!("PNG encoding failed: {e}")))?;
    Ok(bytes)
}

pub fn slice_f32_bytes(img: &SliceImage) -> Vec<u8> {
    img.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

/// Sidecar describing an exported slice image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub width: usize,
    pub height: usize,
    pub window_lo: f64,
    pub window_hi: f64,
    pub raw_file: String,
    pub image_file: String,
    pub method: String,
    pub cor_shift: f64,
}

/// Writes `<stem>.png` or `<stem>.pgm`, `<stem>.f32` and `<stem>.toml`.
pub fn export_slice(stem: &Path, img: &SliceImage, w: Window, png: bool, method: &str, cor_shift: f64) -> Result<ImageManifest> {
    let image_path = stem.with_extension(if png { "png" } else { "pgm" });
    let raw_path = stem.with_extension("f32");
    let bytes = if png { encode_png16(img, w)? } else { encode_pgm16(img, w) };
    fs::File::create(&image_path)?.write_all(&bytes)?;
    fs::write(&raw_path, slice_f32_bytes(img))?;
    let name = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let m = ImageManifest {
        width: img.width(),
        height: img.height(),
        window_lo: w.lo,
        window_hi: w.hi,
        raw_file: name(&raw_path),
        image_file: name(&image_path),
        method: method.into(),
        cor_shift,
    };
    fs::write(stem.with_extension("toml"), toml::to_string(&m).map_err(|e| Error::format(e.to_string()))?)?;
    Ok(m)
}
