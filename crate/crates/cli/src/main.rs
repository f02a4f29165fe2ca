use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use srlocal_core::localmodel::{reconstruct, Interpolator};
use srlocal_core::neural::{init_weights, save_mlp, train_cg};
use srlocal_core::pca::{explained_variance, export_eigenimages, fit_pca, load_basis, save_basis};
use srlocal_core::pipeline::{
    benchmark_interpolators, benchmark_methods, build_training_set, dimension_sweep, load_samples, read_manifest,
    save_samples, superresolve_with_shifts, sweep_csv, to_training_samples, validation_records, write_manifest,
    ModelBundle, PipelineConfig, Provenance, RmsTable, BASIS_FILE, MANIFEST_FILE, MLP_FILE,
};
use srlocal_core::projection::project_sequence;
use srlocal_core::registration::{register, register_sequence, Transform};
use srlocal_core::synth::{generate_sequence, SequenceSpec};
use srlocal_core::{load_pgm, rms_error, save_pgm, GrayImage};

mod csv;

#[derive(Parser, Debug)]
#[command(name = "srlocal", version, about = "Superresolution of image sequences through local polynomial models")]
struct Cli {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for simulation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a shifted, decimated, noisy LR sequence from an HR image.
    Synth(SynthArgs),
    /// Estimate frame translations against a reference frame.
    Register(RegisterArgs),
    /// Reconstruct an HR image with a baseline interpolator.
    Interp(InterpArgs),
    /// Build training samples from a corpus and fit the PCA basis.
    TrainPca(TrainPcaArgs),
    /// Train the network on PCA-projected samples.
    TrainMlp(TrainMlpArgs),
    /// Superresolve a frame sequence with a trained model bundle.
    Superres(SuperresArgs),
    /// Compare baseline interpolators over noise levels.
    BenchInterp(BenchInterpArgs),
    /// Compare zoom, nearest neighbor and the learned model on a held-out image.
    BenchMethods(BenchMethodsArgs),
    /// Validation error as a function of the number of PCA components.
    Sweep(SweepArgs),
    /// Render the leading eigenvectors as eigenimages.
    Eigviz(EigvizArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Glob pattern for the frames, matched in lexicographic order.
    #[arg(long)]
    frames: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Nn,
    Idw,
    Poly1,
    Poly2,
    Poly3,
}

#[derive(Args, Debug)]
struct InterpArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    frames: String,
    /// Transforms CSV (frame,tx,ty); estimated when absent.
    #[arg(long)]
    shifts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Ground truth HR image for an RMS report line.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainPcaArgs {
    /// Training images (globs allowed).
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    /// Train on a single noise level instead of the configured list.
    #[arg(long)]
    train_sigma: Option<f64>,
    /// Explained-variance curve as CSV.
    #[arg(long)]
    variance_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainMlpArgs {
    #[arg(long)]
    pca: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    eigvecs: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Loss history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SuperresArgs {
    #[arg(long)]
    frames: String,
    /// Bundle directory holding basis, network and manifest.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    shifts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Projected pixels as CSV (x,y,value,frame).
    #[arg(long)]
    dump_cloud: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchInterpArgs {
    /// HR test images (globs allowed); several images are averaged.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchMethodsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,20")]
    sigmas: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Directory for the reconstructed images.
    #[arg(long)]
    images_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    pca: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    /// Validation samples file.
    #[arg(long, conflicts_with = "valid_input")]
    valid: Option<PathBuf>,
    /// Held-out image to draw validation samples from.
    #[arg(long)]
    valid_input: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    valid_budget: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,8,12,16,20,30,40,54")]
    ks: Vec<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EigvizArgs {
    #[arg(long)]
    pca: PathBuf,
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

macro_rules! note {
    ($v:expr, $($arg:tt)*) => {
        if $v {
            eprintln!($($arg)*);
        }
    };
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_kv_text(&text).with_context(|| format!("in config {}", path.display()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load_config(&cli)?;
    let v = cli.verbose;
    match cli.command {
        Command::Synth(a) => synth(a, cfg, v),
        Command::Register(a) => register_cmd(a, cfg, v),
        Command::Interp(a) => interp(a, cfg, v),
        Command::TrainPca(a) => train_pca(a, cfg, v),
        Command::TrainMlp(a) => train_mlp(a, cfg, cli.seed, v),
        Command::Superres(a) => superres(a, v),
        Command::BenchInterp(a) => bench_interp(a, cfg, v),
        Command::BenchMethods(a) => bench_methods(a, v),
        Command::Sweep(a) => sweep(a, cfg, v),
        Command::Eigviz(a) => eigviz(a),
    }
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let mut matched: Vec<PathBuf> = glob::glob(p)
            .with_context(|| format!("bad pattern {p:?}"))?
            .collect::<Result<_, _>>()?;
        if matched.is_empty() {
            bail!("no files match {p:?}");
        }
        matched.sort();
        out.extend(matched);
    }
    Ok(out)
}

fn load_images(paths: &[PathBuf]) -> Result<Vec<GrayImage>> {
    paths
        .iter()
        .map(|p| load_pgm(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs, cfg: PipelineConfig, v: bool) -> Result<()> {
    let hr = load_pgm(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let spec = SequenceSpec {
        n_frames: a.frames.unwrap_or(cfg.n_frames),
        scale: a.scale.unwrap_or(cfg.scale),
        sigma: a.sigma,
        seed: cfg.seed,
        ..Default::default()
    };
    let seq = generate_sequence(&hr, &spec)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (k, frame) in seq.frames.iter().enumerate() {
        save_pgm(frame, a.out_dir.join(format!("frame_{k:03}.pgm")))?;
    }
    write_text(&a.out_dir.join("shifts.csv"), &csv::transforms_to_csv(&seq.true_shifts))?;
    note!(v, "wrote {} frames to {}", seq.frames.len(), a.out_dir.display());
    Ok(())
}

fn register_cmd(a: RegisterArgs, cfg: PipelineConfig, v: bool) -> Result<()> {
    let reference = load_pgm(&a.reference).with_context(|| format!("loading {}", a.reference.display()))?;
    let paths = expand(&[a.frames])?;
    let frames = load_images(&paths)?;
    let transforms: Vec<Transform> = frames
        .iter()
        .zip(&paths)
        .map(|(f, p)| register(&reference, f, &cfg.registration).with_context(|| format!("registering {}", p.display())))
        .collect::<Result<_>>()?;
    write_text(&a.out, &csv::transforms_to_csv(&transforms))?;
    note!(v, "registered {} frames", transforms.len());
    Ok(())
}

/// Frames from a glob plus their transforms, read from CSV or estimated.
fn frames_and_shifts(pattern: String, shifts: Option<&Path>, cfg: &PipelineConfig) -> Result<(Vec<GrayImage>, Vec<Transform>)> {
    let frames = load_images(&expand(&[pattern])?)?;
    let transforms = match shifts {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let t = csv::transforms_from_csv(&text).with_context(|| format!("parsing {}", p.display()))?;
            if t.len() != frames.len() {
                bail!("{} frames but {} transforms", frames.len(), t.len());
            }
            t
        }
        None => register_sequence(&frames, &cfg.registration)?,
    };
    Ok((frames, transforms))
}

fn report_rms(image: &GrayImage, truth: Option<&Path>, border: usize) -> Result<()> {
    if let Some(path) = truth {
        let truth = load_pgm(path).with_context(|| format!("loading {}", path.display()))?;
        println!("rms = {:.4}", rms_error(image, &truth, border)?);
    }
    Ok(())
}

fn interp(a: InterpArgs, cfg: PipelineConfig, v: bool) -> Result<()> {
    let (frames, transforms) = frames_and_shifts(a.frames, a.shifts.as_deref(), &cfg)?;
    let cloud = project_sequence(&frames, &transforms, cfg.scale)?;
    let method = match a.method {
        Method::Nn => Interpolator::Nearest,
        Method::Idw => Interpolator::InverseDistance { radius: cfg.idw_radius },
        Method::Poly1 => Interpolator::Polynomial(1),
        Method::Poly2 => Interpolator::Polynomial(2),
        Method::Poly3 => Interpolator::Polynomial(3),
    };
    let rec = reconstruct(&cloud, method, &cfg.fit)?;
    save_pgm(&rec.image, &a.out)?;
    note!(v, "{}: {} fallback sites", method.label(), rec.fallback_sites);
    report_rms(&rec.image, a.truth.as_deref(), cfg.border())
}

fn train_pca(a: TrainPcaArgs, mut cfg: PipelineConfig, v: bool) -> Result<()> {
    if let Some(s) = a.train_sigma {
        cfg.noise_levels = vec![s];
    }
    let paths = expand(&a.corpus)?;
    let corpus = load_images(&paths)?;
    note!(v, "building samples from {} images", corpus.len());
    let set = build_training_set(&corpus, &cfg)?;
    let patches: Vec<_> = set.records.iter().map(|r| r.patch.clone()).collect();
    let basis = fit_pca(&patches)?;
    save_basis(&basis, &a.out)?;
    save_samples(&set.records, &a.samples)?;
    for s in &set.sources {
        note!(v, "  {} sigma={} seed={} samples={}", &s.image_hash[..12], s.sigma, s.seed, s.count);
    }
    let mut hashes: Vec<String> = corpus.iter().map(|c| c.content_hash()).collect();
    hashes.dedup();
    let provenance = Provenance {
        corpus_hashes: hashes,
        n_samples: set.records.len(),
        stop: "untrained".into(),
        ..Default::default()
    };
    write_manifest(sibling(&a.out, MANIFEST_FILE), &cfg, &provenance)?;
    if let Some(path) = &a.variance_csv {
        let mut text = String::from("k,explained_variance\n");
        for k in 1..=basis.dim() {
            text.push_str(&format!("{k},{:.6}\n", explained_variance(&basis, k)?));
        }
        write_text(path, &text)?;
    }
    println!("samples = {}", set.records.len());
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn train_mlp(a: TrainMlpArgs, cfg: PipelineConfig, seed: Option<u64>, v: bool) -> Result<()> {
    let basis = load_basis(&a.pca)?;
    let records = load_samples(&a.samples)?;
    // Prefer the manifest written by train-pca so the bundle stays consistent.
    let manifest_path = sibling(&a.pca, MANIFEST_FILE);
    let (mut cfg, mut provenance) = if manifest_path.exists() {
        let (mut m, p) = read_manifest(&manifest_path)?;
        if let Some(s) = seed {
            m.train.seed = s;
        }
        (m, p)
    } else {
        (cfg, Provenance::default())
    };
    if let Some(k) = a.eigvecs {
        cfg.eigvecs = k;
    }
    if let Some(n) = a.max_iters {
        cfg.train.max_iters = n;
    }
    cfg.validate()?;
    let samples = to_training_samples(&records, &basis, cfg.eigvecs)?;
    note!(v, "training on {} samples, k = {}", samples.len(), cfg.eigvecs);
    let outcome = train_cg(&init_weights(cfg.eigvecs, cfg.train.seed), &samples, &cfg.train)?;
    save_mlp(&outcome.params, &a.out)?;
    if let Some(path) = &a.history {
        let mut text = String::from("iteration,loss\n");
        for (i, l) in outcome.history.iter().enumerate() {
            text.push_str(&format!("{i},{l:?}\n"));
        }
        write_text(path, &text)?;
    }
    provenance.n_samples = records.len();
    provenance.iterations = outcome.iterations;
    provenance.stop = format!("{:?}", outcome.stop);
    provenance.final_loss = outcome.history.last().copied().unwrap_or(f64::NAN);
    let out_dir = a.out.parent().unwrap_or(Path::new("."));
    let pca_dir = a.pca.parent().unwrap_or(Path::new("."));
    if out_dir == pca_dir && a.pca.file_name() == Some(BASIS_FILE.as_ref()) && a.out.file_name() == Some(MLP_FILE.as_ref()) {
        write_manifest(out_dir.join(MANIFEST_FILE), &cfg, &provenance)?;
    }
    println!(
        "iterations = {} stop = {:?} loss = {:.6}",
        outcome.iterations, outcome.stop, provenance.final_loss
    );
    Ok(())
}

fn superres(a: SuperresArgs, v: bool) -> Result<()> {
    let bundle = ModelBundle::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let cfg = &bundle.config;
    let (frames, transforms) = frames_and_shifts(a.frames, a.shifts.as_deref(), cfg)?;
    if let Some(path) = &a.dump_cloud {
        let cloud = project_sequence(&frames, &transforms, cfg.scale)?;
        write_text(path, &csv::cloud_to_csv(&cloud))?;
    }
    let sr = superresolve_with_shifts(&frames, &transforms, &bundle)?;
    save_pgm(&sr.image, &a.out)?;
    note!(v, "{} fallback sites", sr.fallback_sites);
    report_rms(&sr.image, a.truth.as_deref(), cfg.border())
}

fn bench_interp(a: BenchInterpArgs, cfg: PipelineConfig, v: bool) -> Result<()> {
    let paths = expand(&a.input)?;
    let mut tables = Vec::new();
    for (p, img) in paths.iter().zip(load_images(&paths)?) {
        let t = benchmark_interpolators(&img, &cfg).with_context(|| format!("benchmarking {}", p.display()))?;
        note!(v, "{}\n{}", p.display(), t.to_csv());
        tables.push(t);
    }
    let table = if tables.len() == 1 { tables.remove(0) } else { RmsTable::mean(&tables)? };
    write_text(&a.out, &table.to_csv())?;
    print!("{}", table.to_csv());
    Ok(())
}

fn bench_methods(a: BenchMethodsArgs, v: bool) -> Result<()> {
    let bundle = ModelBundle::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let hr = load_pgm(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let table = benchmark_methods(&hr, &bundle, &a.sigmas, a.images_dir.as_deref())?;
    write_text(&a.out, &table.to_csv())?;
    note!(v, "wrote {}", a.out.display());
    print!("{}", table.to_csv());
    Ok(())
}

fn sweep(a: SweepArgs, cfg: PipelineConfig, v: bool) -> Result<()> {
    let basis = load_basis(&a.pca)?;
    let train = load_samples(&a.samples)?;
    let mut cfg = match sibling(&a.pca, MANIFEST_FILE) {
        p if p.exists() => read_manifest(&p)?.0,
        _ => cfg,
    };
    if let Some(n) = a.max_iters {
        cfg.train.max_iters = n;
    }
    let valid = match (&a.valid, &a.valid_input) {
        (Some(p), _) => load_samples(p)?,
        (None, Some(p)) => validation_records(&load_pgm(p)?, &cfg, a.valid_budget)?,
        (None, None) => bail!("give either --valid or --valid-input"),
    };
    note!(v, "sweeping k over {:?} ({} train, {} validation samples)", a.ks, train.len(), valid.len());
    let points = dimension_sweep(&train, &valid, &basis, &a.ks, &cfg.train)?;
    write_text(&a.out, &sweep_csv(&points))?;
    print!("{}", sweep_csv(&points));
    Ok(())
}

fn eigviz(a: EigvizArgs) -> Result<()> {
    let basis = load_basis(&a.pca)?;
    let sites = basis.dim() / 6;
    let window = (sites as f64).sqrt().round() as usize;
    if window * window * 6 != basis.dim() {
        bail!("basis dimension {} is not 6 w^2", basis.dim());
    }
    export_eigenimages(&basis, a.count, window, &a.out)?;
    Ok(())
}
