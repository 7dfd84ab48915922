//! Slice reconstruction methods behind one interface, looked up by name.
//!
//! Every method is "filter the full sinogram with a few filters, cache, then
//! backproject and combine pixelwise", so a method is described by its
//! filters and its pointwise combination.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::{filter_and_cache, FilteredStack};
use crate::filters::{baseline_filter, ram_lak, BaselineKind, Filter};
use crate::geometry::{Geometry, SliceOrientation};
use crate::noise2filter::N2FModel;
use crate::projector::{SliceImage, Sinogram};

/// Optional per-method parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub sigma: Option<f64>,
    pub f_sc: Option<f64>,
}

pub const DEFAULT_SIGMA: f64 = 1.5;
pub const DEFAULT_F_SC: f64 = 0.5;

pub trait SliceReconstructor: Send + Sync {
    fn name(&self) -> &str;

    /// Filters whose filtered sinograms the method consumes.
    fn filters(&self) -> &[Filter];

    /// Combines the per-filter backprojections of one slice.
    fn combine(&self, parts: Vec<SliceImage>) -> Result<SliceImage>;

    /// Checks that a cache was built for this method.
    fn accepts(&self, cache: &FilteredStack) -> Result<()> {
        let want: Vec<u64> = self.filters().iter().map(Filter::fingerprint).collect();
        if cache.fingerprints() != want.as_slice() {
            return Err(Error::Mismatch(format!("cache was not built for method {}", self.name())));
        }
        Ok(())
    }
}

/// Plain FBP with a fixed filter.
pub struct FilterMethod {
    name: String,
    filter: [Filter; 1],
}

impl FilterMethod {
    pub fn new(name: impl Into<String>, filter: Filter) -> Self {
        Self {
            name: name.into(),
            filter: [filter],
        }
    }
}

impl SliceReconstructor for FilterMethod {
    fn name(&self) -> &str {
        &self.name
    }

    fn filters(&self) -> &[Filter] {
        &self.filter
    }

    fn combine(&self, mut parts: Vec<SliceImage>) -> Result<SliceImage> {
        parts.pop().ok_or_else(|| Error::invalid("no backprojection to combine"))
    }
}

/// Trained network applied to the backprojections of its learned filters.
pub struct LearnedMethod {
    model: Arc<N2FModel>,
}

impl LearnedMethod {
    pub fn new(model: Arc<N2FModel>) -> Self {
        Self { model }
    }
}

impl SliceReconstructor for LearnedMethod {
    fn name(&self) -> &str {
        "n2f"
    }

    fn filters(&self) -> &[Filter] {
        self.model.learned_filters()
    }

    fn combine(&self, parts: Vec<SliceImage>) -> Result<SliceImage> {
        let first = parts.first().ok_or_else(|| Error::invalid("no backprojection to combine"))?;
        let o = first.orientation().clone();
        let lf = self.model.learned();
        let mut xs = vec![0.0; parts.len()];
        let data = (0..o.n_pixels())
            .map(|p| {
                for (x, img) in xs.iter_mut().zip(&parts) {
                    *x = img.data()[p];
                }
                lf.combine(&xs)
            })
            .collect();
        SliceImage::new(o, data)
    }

    fn accepts(&self, cache: &FilteredStack) -> Result<()> {
        self.model.check_cache(cache)
    }
}

/// Everything a factory may need to build a method.
pub struct MethodContext<'a> {
    pub geometry: &'a Geometry,
    pub params: MethodParams,
    pub model: Option<Arc<N2FModel>>,
}

pub type MethodFactory = fn(&MethodContext<'_>) -> Result<Box<dyn SliceReconstructor>>;

fn half_width(g: &Geometry) -> usize {
    g.det_cols().saturating_sub(1).max(1)
}

fn make_fbp(ctx: &MethodContext<'_>) -> Result<Box<dyn SliceReconstructor>> {
    let f = ram_lak(half_width(ctx.geometry), ctx.geometry.pixel_size())?;
    Ok(Box::new(FilterMethod::new("fbp", f)))
}

fn make_fbp_g(ctx: &MethodContext<'_>) -> Result<Box<dyn SliceReconstructor>> {
    let sigma = ctx.params.sigma.unwrap_or(DEFAULT_SIGMA);
    let f = baseline_filter(BaselineKind::Gaussian, sigma, half_width(ctx.geometry), ctx.geometry.pixel_size())?;
    Ok(Box::new(FilterMethod::new("fbp_g", f)))
}

fn make_fbp_sc(ctx: &MethodContext<'_>) -> Result<Box<dyn SliceReconstructor>> {
    let f_sc = ctx.params.f_sc.unwrap_or(DEFAULT_F_SC);
    let f = baseline_filter(BaselineKind::FreqScale, f_sc, half_width(ctx.geometry), ctx.geometry.pixel_size())?;
    Ok(Box::new(FilterMethod::new("fbp_sc", f)))
}

fn make_n2f(ctx: &MethodContext<'_>) -> Result<Box<dyn SliceReconstructor>> {
    let model = ctx
        .model
        .clone()
        .ok_or_else(|| Error::invalid("method n2f needs a trained model"))?;
    model.check_geometry(ctx.geometry)?;
    Ok(Box::new(LearnedMethod::new(model)))
}

/// Name-to-factory table.
#[derive(Clone)]
pub struct MethodRegistry {
    factories: BTreeMap<String, MethodFactory>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("fbp", make_fbp);
        r.register("fbp_g", make_fbp_g);
        r.register("fbp_sc", make_fbp_sc);
        r.register("n2f", make_n2f);
        r
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: MethodFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    /// Accepts `fbp-g` as well as `fbp_g`.
    pub fn build(&self, name: &str, ctx: &MethodContext<'_>) -> Result<Box<dyn SliceReconstructor>> {
        let key = name.replace('-', "_");
        let f = self
            .factories
            .get(&key)
            .ok_or_else(|| Error::invalid(format!("unknown method '{name}'; available: {}", self.names().join(", "))))?;
        f(ctx)
    }
}

/// A method together with its filtered cache.
pub struct Prepared {
    method: Box<dyn SliceReconstructor>,
    cache: FilteredStack,
}

impl Prepared {
    pub fn new(method: Box<dyn SliceReconstructor>, s: &Sinogram) -> Result<Self> {
        let cache = filter_and_cache(s, method.filters())?;
        Ok(Self { method, cache })
    }

    pub fn method(&self) -> &dyn SliceReconstructor {
        self.method.as_ref()
    }

    pub fn cache(&self) -> &FilteredStack {
        &self.cache
    }

    pub fn reconstruct(&self, o: &SliceOrientation, cor_shift: Option<f64>) -> Result<SliceImage> {
        self.method.accepts(&self.cache)?;
        let parts = self.cache.backproject_all(o, cor_shift)?;
        self.method.combine(parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbp::fbp_slice;
    use crate::geometry::{make_parallel_geometry, ortho_slice, OrthoAxis};

    fn sino() -> Sinogram {
        let g = make_parallel_geometry(16, 8, 12, 0.0).unwrap();
        let d = (0..g.sinogram_len()).map(|i| ((i * 7919) % 101) as f32 / 101.0).collect();
        Sinogram::new(g, d).unwrap()
    }

    #[test]
    fn registry_lists_builtin_methods() {
        let r = MethodRegistry::default();
        assert_eq!(r.names(), vec!["fbp", "fbp_g", "fbp_sc", "n2f"]);
    }

    #[test]
    fn fbp_method_matches_fbp_slice() {
        let s = sino();
        let r = MethodRegistry::default();
        let ctx = MethodContext {
            geometry: s.geometry(),
            params: MethodParams::default(),
            model: None,
        };
        let p = Prepared::new(r.build("fbp", &ctx).unwrap(), &s).unwrap();
        let o = ortho_slice([8, 8, 8], 1.0, OrthoAxis::Frontal);
        let direct = fbp_slice(&s, &ram_lak(11, 1.0).unwrap(), &o);
        assert_eq!(p.reconstruct(&o, None).unwrap().data(), direct.data());
    }

    #[test]
    fn unknown_and_modelless_methods_fail() {
        let s = sino();
        let r = MethodRegistry::default();
        let ctx = MethodContext {
            geometry: s.geometry(),
            params: MethodParams::default(),
            model: None,
        };
        assert!(r.build("sirt", &ctx).is_err());
        assert!(r.build("n2f", &ctx).is_err());
        assert!(r.build("fbp-g", &ctx).is_ok());
    }

    #[test]
    fn custom_methods_can_be_registered() {
        fn delta(ctx: &MethodContext<'_>) -> Result<Box<dyn SliceReconstructor>> {
            Ok(Box::new(FilterMethod::new("bp", Filter::delta(ctx.geometry.det_cols() - 1))))
        }
        let mut r = MethodRegistry::default();
        r.register("bp", delta);
        let s = sino();
        let ctx = MethodContext {
            geometry: s.geometry(),
            params: MethodParams::default(),
            model: None,
        };
        let m = r.build("bp", &ctx).unwrap();
        assert_eq!(m.name(), "bp");
    }
}
