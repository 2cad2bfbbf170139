//! The `cscfuse` command line: training, fusion, evaluation, the ISTA
//! reference solver, gradient checks and synthetic data generation.
//!
//! Exit status: 0 on success, 1 when a gradient check fails, 2 for
//! configuration errors, 3 for data errors, 4 for numerical divergence.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::csc::{auto_rho, ista_solve, random_dictionary, IstaProblem};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::gradsuite::run_gradient_suite;
use crate::imaging::{load_image, save_image, save_image_with_depth, BitDepth, ColorSpace, ImagePlane, ImageStack};
use crate::metrics::{evaluate_all, reports_to_csv, reports_to_json, MetricReport, Provenance};
use crate::pipelines::{
    ivfn_fuse, ivfn_train, load_channels, load_exposure_stacks, load_ivf_images, load_mmf_samples, mefn_fuse,
    mefn_train, mmfn_fuse, mmfn_train, synth_exposure_stack_sized, synth_ivf_pair_sized, synth_spectral_scene_sized,
    Checkpoint, DatasetManifest, IvfnConfig, IvfnModel, ManifestEntry, MefnConfig, MefnModel, MmfnConfig, MmfnModel,
    TrainConfig, TrainLog, DEFAULT_BASE_STRATEGY, DEFAULT_DETAIL_STRATEGY, MANIFEST_FILE,
};
use crate::task::Task;
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.json";

#[derive(Debug, Parser)]
#[command(
    name = "cscfuse",
    version,
    about = "Convolutional sparse coding networks for image fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network on a dataset manifest and write a checkpoint.
    Train(TrainArgs),
    /// Fuse images with a trained checkpoint.
    Fuse(FuseArgs),
    /// Compute fusion or super-resolution metrics.
    Eval(EvalArgs),
    /// Run the ISTA solver on an image with a seeded random dictionary.
    Ista(IstaArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset with its manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    task: Task,
    /// Run configuration (JSON with optional "model" and "train" objects).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest, or a directory containing manifest.json.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    task: Task,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// ivf: infrared then visible; mef: the exposures; mmf: the
    /// low-resolution band images.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// High-resolution guide (mmf only).
    #[arg(long)]
    guide: Option<PathBuf>,
    /// Output image; for mmf a directory receiving one image per band.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fusion rule for base codes (ivf only).
    #[arg(long, default_value = "saliency")]
    base: FusionStrategy,
    /// Fusion rule for detail codes (ivf only).
    #[arg(long, default_value = "l1")]
    detail: FusionStrategy,
}

#[derive(Debug, Args)]
struct EvalArgs {
    task: Task,
    /// Source images (ivf, mef) or the estimate's band images (mmf).
    #[arg(long, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Fused image (ivf, mef).
    #[arg(long)]
    fused: Option<PathBuf>,
    /// Reference band images (mmf).
    #[arg(long = "ref", num_args = 1..)]
    reference: Vec<PathBuf>,
    /// Directory with a manifest whose entries list the inputs and, under
    /// "reference", the fused image (ivf, mef) or the ground truth (mmf).
    #[arg(long, conflicts_with_all = ["inputs", "fused", "reference"])]
    batch: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct IstaArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    dict_seed: u64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Step constant, or "auto" for 1.05 times the power-iteration
    /// estimate of the Lipschitz constant.
    #[arg(long, default_value = "auto")]
    rho: RhoArg,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Number of dictionary atoms.
    #[arg(long, default_value_t = 8)]
    atoms: usize,
    /// Atom side length (odd).
    #[arg(long, default_value_t = 3)]
    kernel: usize,
}

#[derive(Clone, Copy, Debug)]
enum RhoArg {
    Auto,
    Value(f64),
}

impl std::str::FromStr for RhoArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(RhoArg::Auto);
        }
        s.parse()
            .map(RhoArg::Value)
            .map_err(|_| format!("expected 'auto' or a number, got '{s}'"))
    }
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// "all" or one of tensor, csc, imaging, losses, pipelines.
    #[arg(long, default_value = "all")]
    module: String,
    /// Scale analytic gradients before comparison (negative control).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    task: Task,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of pairs, stacks or scenes.
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the (high-resolution) images.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    exposures: usize,
    #[arg(long, default_value_t = 8)]
    bands: usize,
    #[arg(long, default_value_t = 4)]
    scale: usize,
}

/// Contents of a `--config` file. Both sections are optional and take the
/// keys of the task's model configuration and of [`TrainConfig`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: serde_json::Value,
    #[serde(default)]
    pub train: serde_json::Value,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The model section parsed as `C`, defaults filling missing keys.
    pub fn model_config<C: DeserializeOwned>(&self) -> Result<C> {
        let value = if self.model.is_null() {
            serde_json::json!({})
        } else {
            self.model.clone()
        };
        serde_json::from_value(value).map_err(|e| Error::Config(format!("model: {e}")))
    }

    pub fn train_config(&self, task: Task, seed: Option<u64>) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::from_json(task, &self.train)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ista(a) => cmd_ista(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::Config(format!("missing required flag --{flag}")))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

enum ModelConfig {
    Ivf(IvfnConfig),
    Mef(MefnConfig),
    Mmf(MmfnConfig),
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let data = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = run.train_config(a.task, a.seed)?;
    let model = match a.task {
        Task::Ivf => ModelConfig::Ivf(run.model_config()?),
        Task::Mef => ModelConfig::Mef(run.model_config()?),
        Task::Mmf => ModelConfig::Mmf(run.model_config()?),
    };
    if !data.exists() {
        return Err(Error::Data(format!("dataset {} does not exist", data.display())));
    }
    let (manifest, root) = DatasetManifest::load(data)?;
    if manifest.task != a.task {
        return Err(Error::Data(format!(
            "{} holds a {} dataset, not {}",
            data.display(),
            manifest.task,
            a.task
        )));
    }
    ensure_dir(out)?;
    let (checkpoint, log) = match model {
        ModelConfig::Ivf(m) => {
            let o = ivfn_train(&load_ivf_images(&manifest, &root)?, &m, &cfg)?;
            (o.checkpoint, o.log)
        }
        ModelConfig::Mef(m) => {
            let o = mefn_train(&load_exposure_stacks(&manifest, &root)?, &m, &cfg)?;
            (o.checkpoint, o.log)
        }
        ModelConfig::Mmf(m) => {
            let o = mmfn_train(&load_mmf_samples(&manifest, &root)?, &m, &cfg)?;
            (o.checkpoint, o.log)
        }
    };
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(TRAIN_LOG_FILE);
    checkpoint.save(&ckpt_path)?;
    std::fs::write(&log_path, log.to_json()).map_err(|e| Error::io(&log_path, e))?;
    println!("checkpoint {}", ckpt_path.display());
    println!("log {}", log_path.display());
    report_training(&log, &checkpoint)
}

fn report_training(log: &TrainLog, checkpoint: &Checkpoint) -> Result<i32> {
    if let Some(last) = log.epochs.last() {
        println!("steps {} final epoch loss {:.6e}", log.steps, last.loss);
    }
    println!("digest {}", checkpoint.digest());
    match &log.diverged {
        None => Ok(0),
        Some(d) => {
            let mut msg = format!("{} at epoch {} step {} (loss {})", d.message, d.epoch, d.step, d.loss);
            if let Some(l) = d.lambda_mef {
                msg.push_str(&format!(", lambda_mef {l}"));
            }
            Err(Error::Divergence(format!("{msg}; last good checkpoint kept")))
        }
    }
}

fn luma_of(path: &Path) -> Result<Tensor<f32>> {
    Ok(load_image(path)?.luma()?.into_pixels())
}

fn cmd_fuse(a: FuseArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(required(&a.ckpt, "ckpt")?)?;
    let out = required(&a.out, "out")?;
    match a.task {
        Task::Ivf => {
            let model: IvfnModel = ckpt.to_model()?;
            let [ir, vis] = a.inputs.as_slice() else {
                return Err(Error::Config(format!(
                    "ivf fusion takes an infrared and a visible image, got {} inputs",
                    a.inputs.len()
                )));
            };
            let fused = ivfn_fuse(&model, &luma_of(ir)?, &luma_of(vis)?, a.base, a.detail)?;
            save_image(&ImagePlane::clamped(fused, ColorSpace::Gray)?, out)?;
            println!("{}", out.display());
        }
        Task::Mef => {
            let model: MefnModel = ckpt.to_model()?;
            let planes = a.inputs.iter().map(load_image).collect::<Result<Vec<_>>>()?;
            let stack = ImageStack::new(planes).map_err(|e| Error::Data(e.to_string()))?;
            let fused = mefn_fuse(&model, &stack)?;
            save_image(&fused.image, out)?;
            println!("{}", out.display());
        }
        Task::Mmf => {
            let model: MmfnModel = ckpt.to_model()?;
            let guide = load_image(required(&a.guide, "guide")?)?.into_pixels();
            let lr = load_channels(Path::new(""), &a.inputs)?;
            let hr = mmfn_fuse(&model, &lr, &guide)?.clamp(0.0, 1.0);
            ensure_dir(out)?;
            for b in 0..hr.shape().c {
                let path = out.join(format!("band_{b:02}.png"));
                save_image_with_depth(
                    &ImagePlane::new(hr.channel(b), ColorSpace::Gray)?,
                    &path,
                    BitDepth::Sixteen,
                )?;
                println!("{}", path.display());
            }
        }
    }
    if a.task != Task::Ivf && (a.base != DEFAULT_BASE_STRATEGY || a.detail != DEFAULT_DETAIL_STRATEGY) {
        eprintln!("note: --base and --detail only apply to ivf");
    }
    Ok(0)
}

fn display_all(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

/// One report from source files and a fused (or estimated) image.
fn evaluate_files(task: Task, inputs: &[PathBuf], other: &[PathBuf]) -> Result<MetricReport> {
    let mut report = match task {
        Task::Ivf | Task::Mef => {
            let [fused] = other else {
                return Err(Error::Config("evaluation needs exactly one fused image".into()));
            };
            let sources = inputs
                .iter()
                .map(|p| Ok(load_image(p)?.into_pixels()))
                .collect::<Result<Vec<_>>>()?;
            let fused = load_image(fused)?.into_pixels();
            evaluate_all(task, &sources, &fused).map_err(as_data)?
        }
        Task::Mmf => {
            let test = load_channels(Path::new(""), inputs)?;
            let reference = load_channels(Path::new(""), other)?;
            evaluate_all(task, &[reference], &test).map_err(as_data)?
        }
    };
    let (sources, fused) = match task {
        Task::Mmf => (display_all(other), display_all(inputs).join("+")),
        _ => (display_all(inputs), display_all(other).join("+")),
    };
    report.provenance = Provenance {
        sources,
        fused,
        timestamp: None,
    };
    Ok(report)
}

fn as_data(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Data(m),
        other => other,
    }
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let reports = if let Some(dir) = &a.batch {
        let (manifest, root) = DatasetManifest::read(dir)?;
        if manifest.task != a.task {
            return Err(Error::Data(format!(
                "{} lists {} pairs, not {}",
                dir.display(),
                manifest.task,
                a.task
            )));
        }
        let rooted = |ps: &[PathBuf]| ps.iter().map(|p| root.join(p)).collect::<Vec<_>>();
        manifest
            .entries
            .iter()
            .map(|e| evaluate_files(a.task, &rooted(&e.inputs), &rooted(&e.reference)))
            .collect::<Result<Vec<_>>>()?
    } else {
        if a.inputs.is_empty() {
            return Err(Error::Config("missing required flag --inputs".into()));
        }
        let other = match a.task {
            Task::Mmf if a.reference.is_empty() => return Err(Error::Config("missing required flag --ref".into())),
            Task::Mmf => a.reference.clone(),
            _ => vec![required(&a.fused, "fused")?.clone()],
        };
        vec![evaluate_files(a.task, &a.inputs, &other)?]
    };
    let text = match a.format {
        ReportFormat::Csv => reports_to_csv(&reports),
        ReportFormat::Json => reports_to_json(&reports),
    };
    match &a.out {
        Some(p) => std::fs::write(p, &text).map_err(|e| Error::io(p, e))?,
        None => {
            let _ = std::io::stdout().write_all(text.as_bytes());
        }
    }
    Ok(0)
}

fn cmd_ista(a: IstaArgs) -> Result<i32> {
    let image = load_image(required(&a.image, "image")?)?.into_pixels().cast::<f64>();
    let s = image.shape();
    if a.kernel.is_multiple_of(2) || a.atoms == 0 {
        return Err(Error::Config("--kernel must be odd and --atoms positive".into()));
    }
    let dict = random_dictionary(s.c, a.atoms, a.kernel, a.dict_seed)?;
    let rho = match a.rho {
        RhoArg::Auto => auto_rho(&dict, s.h, s.w)?,
        RhoArg::Value(v) => v,
    };
    let problem = IstaProblem::new(image, dict, a.lambda, rho, a.iters).map_err(|e| Error::Config(e.to_string()))?;
    let sol = ista_solve(&problem)?;
    println!("rho {rho:.12e}");
    println!("iter objective");
    for (k, f) in sol.trace.iter().enumerate() {
        println!("{k} {f:.12e}");
    }
    let total = sol.code.numel();
    let zeros = sol.code.data().iter().filter(|v| **v == 0.0).count();
    println!("nonzero {} of {}", total - zeros, total);
    println!("sparsity {:.2}%", 100.0 * zeros as f64 / total as f64);
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let module = (a.module != "all").then_some(a.module.as_str());
    let cases = run_gradient_suite(module, a.corrupt)?;
    let mut failing = Vec::new();
    for c in &cases {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{}/{}: worst relative error {:.3e} (tolerance {:.0e}, {} checked, {} excluded) {status}",
            c.module, c.name, c.report.max_rel_error, c.tolerance, c.report.checked, c.report.excluded
        );
        if !c.passed() {
            failing.push(format!("{}/{}", c.module, c.name));
        }
    }
    if failing.is_empty() {
        println!("all {} checks passed", cases.len());
        Ok(0)
    } else {
        println!("failing: {}", failing.join(", "));
        Ok(1)
    }
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let out = required(&a.out, "out")?;
    if a.count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    ensure_dir(out)?;
    let mut entries = Vec::with_capacity(a.count);
    let gray = |t: Tensor<f32>| ImagePlane::clamped(t, ColorSpace::Gray);
    for i in 0..a.count {
        let seed = a.seed + i as u64;
        let entry = match a.task {
            Task::Ivf => {
                let (ir, vis) = synth_ivf_pair_sized(seed, a.size, a.size).map_err(config_error)?;
                let names = [format!("pair_{i:03}_ir.png"), format!("pair_{i:03}_vis.png")];
                save_image(&ir, out.join(&names[0]))?;
                save_image(&vis, out.join(&names[1]))?;
                ManifestEntry {
                    inputs: names.iter().map(PathBuf::from).collect(),
                    ..Default::default()
                }
            }
            Task::Mef => {
                let stack = synth_exposure_stack_sized(seed, a.exposures, a.size, a.size).map_err(config_error)?;
                let mut inputs = Vec::new();
                for (k, plane) in stack.iter().enumerate() {
                    let name = format!("stack_{i:03}_exp{k}.png");
                    save_image(plane, out.join(&name))?;
                    inputs.push(PathBuf::from(name));
                }
                ManifestEntry {
                    inputs,
                    ..Default::default()
                }
            }
            Task::Mmf => {
                let (lr, guide, hr) =
                    synth_spectral_scene_sized(seed, a.bands, a.scale, a.size, a.size).map_err(config_error)?;
                let write_bands = |t: &Tensor<f32>, tag: &str| -> Result<Vec<PathBuf>> {
                    (0..t.shape().c)
                        .map(|b| {
                            let name = format!("scene_{i:03}_{tag}_b{b:02}.png");
                            save_image_with_depth(&gray(t.channel(b))?, out.join(&name), BitDepth::Sixteen)?;
                            Ok(PathBuf::from(name))
                        })
                        .collect()
                };
                let inputs = write_bands(&lr, "lr")?;
                let reference = write_bands(&hr, "hr")?;
                let guide_name = format!("scene_{i:03}_guide.png");
                let guide_img = ImagePlane::clamped(guide, ColorSpace::Rgb)?;
                save_image_with_depth(&guide_img, out.join(&guide_name), BitDepth::Sixteen)?;
                ManifestEntry {
                    inputs,
                    guide: Some(PathBuf::from(guide_name)),
                    reference,
                }
            }
        };
        entries.push(entry);
    }
    let manifest = DatasetManifest { task: a.task, entries };
    let path = out.join(MANIFEST_FILE);
    manifest.save(&path)?;
    println!("{}", path.display());
    Ok(0)
}

fn config_error(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}
