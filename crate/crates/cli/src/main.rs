//! `n2f` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use n2f_core::experiments::{
    accuracy_trial, make_scene, mean_std, n2f_trial, supervised_capacity, timing, Scene, SceneSpec, ACCURACY_METHODS,
};
use n2f_core::geometry::{ortho_slice, OrthoAxis, SliceOrientation, Vec3};
use n2f_core::io::{export_slice, load_dataset, load_model, save_dataset, save_model, DatasetManifest, Window};
use n2f_core::methods::{MethodContext, MethodParams, MethodRegistry, Prepared};
use n2f_core::noise2filter::{train_nnfbp_supervised, train_noise2filter, N2FConfig, Strategy};
use n2f_core::phantom::{apply_poisson_noise, NoiseSpec};
use n2f_service::{serve, ServeError, ServiceConfig};

#[derive(Parser)]
#[command(name = "n2f", version, about = "Self-supervised learned-filter tomography")]
struct Cli {
    /// Worker threads for numerical kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated foam phantoms.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Measurement noise.
    #[command(subcommand)]
    Noise(NoiseCmd),
    /// Train a learned-filter model.
    Train(TrainArgs),
    /// Reconstruct one slice to an image, a raw float dump and a manifest.
    Recon(ReconArgs),
    /// Benchmarks writing CSV.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Start the HTTP slice service.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct SceneArgs {
    /// Volume edge length in voxels.
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 256)]
    angles: usize,
    #[arg(long, default_value_t = 192)]
    cols: usize,
    #[arg(long, default_value_t = 1000)]
    balls: usize,
    /// Mean absorption over the cylinder (fraction of photons absorbed).
    #[arg(long, default_value_t = 0.10)]
    absorption: f64,
    /// Sub-rays per detector pixel along each axis.
    #[arg(long, default_value_t = 2)]
    supersampling: usize,
    #[arg(long, default_value_t = 0)]
    phantom_seed: u64,
}

impl SceneArgs {
    fn spec(&self) -> SceneSpec {
        SceneSpec {
            n: self.n,
            n_angles: self.angles,
            det_cols: self.cols,
            n_balls: self.balls,
            absorption: self.absorption,
            supersampling: self.supersampling,
        }
    }

    fn scene(&self, seed: u64) -> Result<Scene> {
        make_scene(&self.spec(), seed, 0.0).context("building the phantom scene")
    }
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Generate a foam phantom and write its noiseless projections.
    Gen {
        #[command(flatten)]
        scene: SceneArgs,
        /// Rotation-axis offset baked into the data, in detector pixels.
        #[arg(long, default_value_t = 0.0)]
        cor_shift: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NoiseCmd {
    /// Apply Poisson noise to a noiseless dataset.
    Apply {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Unattenuated photon count per detector pixel.
        #[arg(long)]
        i0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainKind {
    /// Self-supervised, from the noisy data alone.
    N2f,
    /// Supervised against the dataset's phantom.
    Nnfbp,
}

#[derive(Args)]
struct TrainArgs {
    kind: TrainKind,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    splits: usize,
    /// `x1` or `1x`.
    #[arg(long, default_value = "1x")]
    strategy: String,
    #[arg(long, default_value_t = 50_000)]
    ntrain: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SliceKind {
    Axial,
    Frontal,
    Longitudinal,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Png,
    Pgm,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// fbp, fbp-g, fbp-sc or n2f.
    #[arg(long, default_value = "fbp")]
    method: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "axial")]
    slice: SliceKind,
    /// Custom slice center `x,y,z` in voxel units.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    origin: Option<Vec3>,
    /// Custom slice horizontal axis `x,y,z` (unit length).
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    u: Option<Vec3>,
    /// Custom slice vertical axis `x,y,z` (unit length, orthogonal to u).
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    v: Option<Vec3>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pixel_size: f64,
    /// Rotation-axis offset in detector pixels; replaces the dataset's value.
    #[arg(long, allow_hyphen_values = true)]
    cor_shift: Option<f64>,
    /// Gaussian width for fbp-g, in detector pixels.
    #[arg(long)]
    sigma: Option<f64>,
    /// Frequency cutoff for fbp-sc, as a fraction of Nyquist.
    #[arg(long)]
    f_sc: Option<f64>,
    /// Display window `lo,hi`; defaults to the slice range.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<Window>,
    #[arg(long, value_enum, default_value = "png")]
    format: ImageFormat,
    /// Output stem; `.png`/`.pgm`, `.f32` and `.toml` are appended.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Per-trial PSNR/SSIM of every method over a range of photon counts.
    Accuracy {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000,16000,32000")]
        i0_list: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        #[arg(long, default_value_t = 50_000)]
        ntrain: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Accuracy of the self-supervised method per split count and strategy.
    Hyper {
        #[command(flatten)]
        scene: SceneArgs,
        /// Range `lo..hi` (inclusive) or a comma list.
        #[arg(long, default_value = "2..6")]
        splits: String,
        #[arg(long, value_delimiter = ',', default_value = "x1,1x")]
        strategies: Vec<String>,
        #[arg(long, default_value_t = 1000.0)]
        i0: f64,
        #[arg(long, default_value_t = 5)]
        trials: u64,
        #[arg(long, default_value_t = 50_000)]
        ntrain: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Accuracy of the self-supervised method per number of training voxels.
    Voxels {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, value_delimiter = ',', default_value = "1000,5000,10000,50000,100000,200000")]
        ntrain_list: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        splits: usize,
        #[arg(long, default_value_t = 1000.0)]
        i0: f64,
        #[arg(long, default_value_t = 5)]
        trials: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Training time and warm-cache per-slice latency.
    Timing {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = 1000.0)]
        i0: f64,
        #[arg(long, default_value_t = 100)]
        requests: usize,
        #[arg(long, default_value_t = 50_000)]
        ntrain: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Listen on all interfaces instead of localhost.
    #[arg(long)]
    public: bool,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

fn parse_window(s: &str) -> Result<Window, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err("window needs lo < hi".into());
    }
    Ok(Window { lo, hi })
}

fn parse_range(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| Ok(t.trim().parse()?)).collect()
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    Strategy::parse(s).ok_or_else(|| anyhow!(n2f_core::Error::InvalidArgument(format!("unknown strategy '{s}' (use x1 or 1x)"))))
}

fn phantom_gen(scene: &SceneArgs, cor_shift: f64, out: &Path) -> Result<()> {
    let s = make_scene(&scene.spec(), scene.phantom_seed, cor_shift).context("building the phantom scene")?;
    let mut m = DatasetManifest::new(s.clean.geometry(), "", scene.phantom_seed);
    m.phantom = Some(s.phantom.clone());
    save_dataset(out, &s.clean, &m).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {} ({} angles x {} rows x {} cols, density {:.5})",
        out.display(),
        scene.angles,
        scene.n,
        scene.cols,
        s.phantom.density
    );
    Ok(())
}

fn noise_apply(input: &Path, out: &Path, i0: f64, seed: u64) -> Result<()> {
    let (s, mut m) = load_dataset(input).with_context(|| format!("reading {}", input.display()))?;
    if m.noise.is_some() {
        bail!(n2f_core::Error::InvalidArgument(format!("{} is already noisy", input.display())));
    }
    let spec = NoiseSpec { photon_count: i0, seed };
    let noisy = apply_poisson_noise(&s, &spec)?;
    m.noise = Some(spec);
    m.seed = seed;
    save_dataset(out, &noisy, &m).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} (I0 = {i0}, seed {seed})", out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let (s, m) = load_dataset(&a.dataset).with_context(|| format!("reading {}", a.dataset.display()))?;
    let cfg = N2FConfig {
        n_splits: a.splits,
        strategy: parse_strategy(&a.strategy)?,
        n_train: a.ntrain,
        n_hidden: a.hidden,
        seed: a.seed,
    };
    let t = Instant::now();
    let (model, report) = match a.kind {
        TrainKind::N2f => train_noise2filter(&s, &cfg)?,
        TrainKind::Nnfbp => {
            let p = m.phantom.as_ref().ok_or_else(|| {
                anyhow!(n2f_core::Error::InvalidArgument("supervised training needs a dataset with a phantom".into()))
            })?;
            let truth = p.ground_truth()?;
            let cap = supervised_capacity(&truth);
            if cfg.n_train > cap {
                log::warn!("only {cap} labelled voxels available; using that many");
            }
            train_nnfbp_supervised(&s, &truth, &N2FConfig { n_train: cfg.n_train.min(cap), ..cfg })?
        }
    };
    save_model(&a.out, &model).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} in {:.1} s ({} iterations, stop: {:?}, best validation loss {:.4e})",
        a.out.display(),
        t.elapsed().as_secs_f64(),
        report.iterations,
        report.stop_reason,
        report.best_validation_loss
    );
    Ok(())
}

fn recon(a: &ReconArgs) -> Result<()> {
    let (s, m) = load_dataset(&a.dataset).with_context(|| format!("reading {}", a.dataset.display()))?;
    let (shape, vs) = m.volume_grid();
    let o = match a.slice {
        SliceKind::Axial => ortho_slice(shape, vs, OrthoAxis::Axial),
        SliceKind::Frontal => ortho_slice(shape, vs, OrthoAxis::Frontal),
        SliceKind::Longitudinal => ortho_slice(shape, vs, OrthoAxis::Longitudinal),
        SliceKind::Custom => {
            let need = |what: &str| anyhow!(n2f_core::Error::InvalidArgument(format!("--slice custom needs --{what}")));
            SliceOrientation::new(
                a.origin.ok_or_else(|| need("origin"))?,
                a.u.ok_or_else(|| need("u"))?,
                a.v.ok_or_else(|| need("v"))?,
                a.width.ok_or_else(|| need("width"))?,
                a.height.ok_or_else(|| need("height"))?,
                a.pixel_size,
            )?
        }
    };
    let model = match &a.model {
        Some(p) => Some(std::sync::Arc::new(load_model(p).with_context(|| format!("reading {}", p.display()))?)),
        None => None,
    };
    let ctx = MethodContext {
        geometry: s.geometry(),
        params: MethodParams {
            sigma: a.sigma,
            f_sc: a.f_sc,
        },
        model,
    };
    let method = MethodRegistry::default().build(&a.method, &ctx)?;
    let name = method.name().to_string();
    let prepared = Prepared::new(method, &s)?;
    let img = prepared.reconstruct(&o, a.cor_shift)?;
    let w = a.window.unwrap_or_else(|| Window::of(&img));
    let cor = a.cor_shift.unwrap_or(s.geometry().cor_shift());
    let im = export_slice(&a.out, &img, w, matches!(a.format, ImageFormat::Png), &name, cor)?;
    println!(
        "wrote {} and {} ({}x{}, window [{:.4e}, {:.4e}])",
        im.image_file, im.raw_file, im.width, im.height, w.lo, w.hi
    );
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AccuracyCsv {
    photon_count: f64,
    trial: u64,
    method: String,
    param: Option<f64>,
    psnr: f64,
    ssim: f64,
}

fn bench_accuracy(scene: &SceneArgs, i0s: &[f64], trials: u64, ntrain: usize, out: &Path) -> Result<()> {
    let test = scene.scene(scene.phantom_seed)?;
    let train_scene = scene.scene(scene.phantom_seed + 1)?;
    let cfg = N2FConfig {
        n_train: ntrain,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &i0 in i0s {
        for trial in 0..trials {
            for r in accuracy_trial(&test, &train_scene, i0, trial, &cfg)? {
                rows.push(AccuracyCsv {
                    photon_count: r.photon_count,
                    trial: r.trial,
                    method: r.method,
                    param: r.param,
                    psnr: r.psnr,
                    ssim: r.ssim,
                });
            }
            log::info!("I0 {i0} trial {trial} done");
        }
    }
    write_csv(out, &rows)?;
    println!("{:>8} {:>7} {:>16} {:>16}", "I0", "method", "PSNR (dB)", "SSIM");
    for &i0 in i0s {
        for m in ACCURACY_METHODS {
            let pick = |f: fn(&AccuracyCsv) -> f64| -> Vec<f64> {
                rows.iter().filter(|r| r.photon_count == i0 && r.method == m).map(f).collect()
            };
            let (p, ps) = mean_std(&pick(|r| r.psnr));
            let (q, qs) = mean_std(&pick(|r| r.ssim));
            println!("{i0:>8} {m:>7} {p:>9.2} ± {ps:<5.2} {q:>9.3} ± {qs:<5.3}");
        }
    }
    println!("wrote {} ({} rows)", out.display(), rows.len());
    Ok(())
}

#[derive(Serialize)]
struct HyperCsv {
    n_splits: usize,
    strategy: String,
    trial: u64,
    psnr: f64,
    ssim: f64,
}

fn bench_hyper(scene: &SceneArgs, splits: &str, strategies: &[String], i0: f64, trials: u64, ntrain: usize, out: &Path) -> Result<()> {
    let splits = parse_range(splits).map_err(|e| anyhow!(n2f_core::Error::InvalidArgument(format!("--splits: {e}"))))?;
    let strategies: Vec<Strategy> = strategies.iter().map(|s| parse_strategy(s)).collect::<Result<_>>()?;
    let test = scene.scene(scene.phantom_seed)?;
    let mut rows = Vec::new();
    for &n_splits in &splits {
        for &strategy in &strategies {
            for trial in 0..trials {
                let cfg = N2FConfig {
                    n_splits,
                    strategy,
                    n_train: ntrain,
                    seed: trial,
                    ..Default::default()
                };
                let s = n2f_trial(&test, i0, &cfg)?;
                rows.push(HyperCsv {
                    n_splits,
                    strategy: strategy.name().into(),
                    trial,
                    psnr: s.psnr,
                    ssim: s.ssim,
                });
            }
        }
    }
    write_csv(out, &rows)?;
    println!("wrote {} ({} rows)", out.display(), rows.len());
    Ok(())
}

#[derive(Serialize)]
struct VoxelsCsv {
    n_train: usize,
    trial: u64,
    psnr: f64,
    ssim: f64,
}

fn bench_voxels(scene: &SceneArgs, list: &[usize], splits: usize, i0: f64, trials: u64, out: &Path) -> Result<()> {
    let test = scene.scene(scene.phantom_seed)?;
    let mut rows = Vec::new();
    for &n_train in list {
        for trial in 0..trials {
            let cfg = N2FConfig {
                n_splits: splits,
                n_train,
                seed: trial,
                ..Default::default()
            };
            let s = n2f_trial(&test, i0, &cfg)?;
            rows.push(VoxelsCsv {
                n_train,
                trial,
                psnr: s.psnr,
                ssim: s.ssim,
            });
        }
    }
    write_csv(out, &rows)?;
    println!("wrote {} ({} rows)", out.display(), rows.len());
    Ok(())
}

fn bench_timing(scene: &SceneArgs, i0: f64, requests: usize, ntrain: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let test = scene.scene(scene.phantom_seed)?;
    let cfg = N2FConfig {
        seed,
        n_train: ntrain,
        ..Default::default()
    };
    let r = timing(&test, i0, &cfg, requests)?;
    println!("prep_seconds {:.3}", r.prep_seconds);
    println!("fit_seconds {:.3}", r.fit_seconds);
    println!("train_seconds {:.3}", r.train_seconds);
    println!("fbp_slice_ms {:.3}", r.fbp_slice_ms);
    println!("n2f_slice_ms {:.3}", r.n2f_slice_ms);
    println!("ratio {:.3}", r.ratio);
    if let Some(p) = out {
        write_csv(p, &[r])?;
    }
    Ok(())
}

fn run_serve(a: &ServeArgs, threads: Option<usize>) -> Result<()> {
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    rt.enable_all();
    if let Some(t) = threads {
        rt.worker_threads(t);
    }
    let cfg = ServiceConfig {
        dataset: a.dataset.clone(),
        model: a.model.clone(),
        port: a.port,
        bind: if a.public { [0, 0, 0, 0] } else { [127, 0, 0, 1] },
    };
    rt.build()?.block_on(serve(cfg))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(n2f_core::Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::Phantom(PhantomCmd::Gen { scene, cor_shift, out }) => phantom_gen(scene, *cor_shift, out),
        Command::Noise(NoiseCmd::Apply { input, out, i0, seed }) => noise_apply(input, out, *i0, *seed),
        Command::Train(a) => train(a),
        Command::Recon(a) => recon(a),
        Command::Bench(BenchCmd::Accuracy {
            scene,
            i0_list,
            trials,
            ntrain,
            out,
        }) => bench_accuracy(scene, i0_list, *trials, *ntrain, out),
        Command::Bench(BenchCmd::Hyper {
            scene,
            splits,
            strategies,
            i0,
            trials,
            ntrain,
            out,
        }) => bench_hyper(scene, splits, strategies, *i0, *trials, *ntrain, out),
        Command::Bench(BenchCmd::Voxels {
            scene,
            ntrain_list,
            splits,
            i0,
            trials,
            out,
        }) => bench_voxels(scene, ntrain_list, *splits, *i0, *trials, out),
        Command::Bench(BenchCmd::Timing {
            scene,
            i0,
            requests,
            ntrain,
            seed,
            out,
        }) => bench_timing(scene, *i0, *requests, *ntrain, *seed, out.as_deref()),
        Command::Serve(a) => run_serve(a, cli.threads),
    }
}

/// Exit status for a failure, from the innermost recognized cause.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        let core = cause
            .downcast_ref::<n2f_core::Error>()
            .or_else(|| match cause.downcast_ref::<ServeError>() {
                Some(ServeError::Core(c)) => Some(c),
                _ => None,
            });
        if let Some(c) = core {
            return match c {
                n2f_core::Error::InvalidArgument(_)
                | n2f_core::Error::CapacityExceeded(_)
                | n2f_core::Error::DegenerateData(_) => 3,
                n2f_core::Error::Format(_) => 4,
                n2f_core::Error::Io(_) => 5,
                n2f_core::Error::Mismatch(_) => 6,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return 5;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("n2f: error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_and_windows_parse() {
        assert_eq!(parse_vec3("1, -2,3.5").unwrap(), Vec3::new(1.0, -2.0, 3.5));
        assert!(parse_vec3("1,2").is_err());
        assert_eq!(parse_window("-1,2").unwrap(), Window { lo: -1.0, hi: 2.0 });
        assert!(parse_window("2,1").is_err());
    }

    #[test]
    fn split_ranges_parse() {
        assert_eq!(parse_range("2..6").unwrap(), vec![2, 3, 4, 5, 6]);
        assert_eq!(parse_range("3,5").unwrap(), vec![3, 5]);
        assert!(parse_range("6..2").is_err());
    }

    #[test]
    fn errors_map_to_stable_codes() {
        let e = anyhow::Error::new(n2f_core::Error::Mismatch("x".into())).context("loading");
        assert_eq!(exit_code(&e), 6);
        let e = anyhow::Error::new(n2f_core::Error::Format("x".into()));
        assert_eq!(exit_code(&e), 4);
        assert_eq!(exit_code(&anyhow!("plain")), 1);
    }

    #[test]
    fn command_line_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
