//! The `ipcc` command line: `generate`, `fit`, `eval` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 I/O failure,
//! 3 fit failure, 4 gradient check failure. Every run writes one
//! `RunManifest`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::Error;
use crate::fit::{self, Dataset, FitConfig, Parameterization};
use crate::metrics::{min_joint_ade, min_joint_fde, write_metrics_csv, MetricRow};
use crate::scene::{load_modes, load_scene, parse_json, save_scene};
use crate::scenes::{generate_dataset, ScenarioConfig, SceneTruth};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

/// Gradient check threshold on the worst relative component error.
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "ipcc", version, about = "Joint Gaussian multi-agent trajectory modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParamArg {
    DirectRho,
    RelevanceHead,
}

impl From<ParamArg> for Parameterization {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::DirectRho => Parameterization::DirectRho,
            ParamArg::RelevanceHead => Parameterization::RelevanceHead,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes with ground-truth sidecars.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit correlation parameters to a generated dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out dataset for the validation NLL.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        delta_reg: Option<f64>,
    },
    /// Score predicted modes with minJointADE / minJointFDE.
    Eval {
        /// Mode-set JSON file, or a directory of them named like the scenes.
        #[arg(long)]
        pred: PathBuf,
        /// Scene JSON file, or a directory of scenes.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the analytic NLL gradient with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        agents: usize,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        #[arg(long, value_enum, default_value_t = ParamArg::DirectRho)]
        parameterization: ParamArg,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        delta_reg: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Perturbs one analytic gradient component (negative control).
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
}

/// Provenance record written by every command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub duration_secs: f64,
    pub version: String,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(&config, &out, seed),
        Command::Fit {
            dataset,
            config,
            out,
            validation,
            seed,
            delta_reg,
        } => cmd_fit(&dataset, &config, &out, validation.as_deref(), seed, delta_reg),
        Command::Eval { pred, gt, out } => cmd_eval(&pred, &gt, &out),
        Command::Gradcheck {
            seed,
            agents,
            steps,
            scenes,
            parameterization,
            step,
            delta_reg,
            out,
            inject_bug,
        } => cmd_gradcheck(
            GradcheckArgs {
                seed,
                agents,
                steps,
                scenes,
                parameterization: parameterization.into(),
                step,
                delta_reg,
                inject_bug,
            },
            &out,
        ),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_text(path, &text)
}

fn manifest(command: &str, config: impl Serialize, seed: Option<u64>, artifacts: Vec<String>, started: Instant) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config: serde_json::to_value(config).expect("config serializes"),
        seed,
        artifacts,
        duration_secs: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn scene_file_name(k: usize) -> String {
    format!("scene_{k:05}.json")
}

fn truth_path(scene: &Path) -> PathBuf {
    let stem = scene.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    scene.with_file_name(format!("{stem}.truth.json"))
}

fn is_scene_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    name.starts_with("scene_") && name.ends_with(".json") && !name.ends_with(".truth.json")
}

fn list_scenes(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::from(Error::io(dir, e)))?.path();
        if is_scene_file(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_generate(config_path: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let started = Instant::now();
    let text = read_text(config_path)?;
    let mut config: ScenarioConfig = parse_json(&text, config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let scenes = generate_dataset(&config)?;
    create_dir(out)?;
    let mut artifacts = Vec::with_capacity(2 * scenes.len());
    for (k, g) in scenes.iter().enumerate() {
        let name = scene_file_name(k);
        let path = out.join(&name);
        save_scene(&g.scene, &path)?;
        let truth = truth_path(&path);
        let mut t = g.truth().to_json();
        t.push('\n');
        write_text(&truth, &t)?;
        artifacts.push(name);
        artifacts.push(truth.file_name().unwrap().to_string_lossy().into_owned());
    }
    let seed = config.seed;
    write_manifest(&out.join("manifest.json"), &manifest("generate", &config, Some(seed), artifacts, started))?;
    println!("wrote {} scene(s) to {}", scenes.len(), out.display());
    Ok(EXIT_OK)
}

fn load_dataset(dir: &Path, latent_dim: Option<usize>) -> Result<Dataset, Failure> {
    let files = list_scenes(dir)?;
    if files.is_empty() {
        return Err(Failure::config(format!("no scene files in {}", dir.display())));
    }
    let mut scenes = Vec::with_capacity(files.len());
    for f in &files {
        let scene = load_scene(f)?;
        let tp = truth_path(f);
        let truth = SceneTruth::from_json(&read_text(&tp)?, &tp)?;
        scenes.push((scene, truth.increments));
    }
    let data = Dataset::new(scenes)?;
    Ok(match latent_dim {
        Some(d) => data.with_latents(d)?,
        None => data,
    })
}

#[derive(Serialize)]
struct FitRun<'a> {
    dataset: &'a Path,
    validation: Option<&'a Path>,
    fit: &'a FitConfig,
}

fn cmd_fit(dataset: &Path, config_path: &Path, out: &Path, validation: Option<&Path>, seed: Option<u64>, delta_reg: Option<f64>) -> CmdResult {
    let started = Instant::now();
    let text = read_text(config_path)?;
    let mut config: FitConfig = parse_json(&text, config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(d) = delta_reg {
        config.delta_reg = d;
    }
    config.validate()?;
    let latent_dim = (config.parameterization == Parameterization::RelevanceHead).then_some(config.latent_dim);
    let train = load_dataset(dataset, latent_dim)?;
    let val = validation.map(|v| load_dataset(v, latent_dim)).transpose()?;
    let report = fit::fit_with_validation(&config, &train, val.as_ref())?;

    create_dir(out)?;
    let mut report_text = report.to_json();
    report_text.push('\n');
    write_text(&out.join("fit_report.json"), &report_text)?;
    write_text(&out.join("nll_trace.csv"), &report.trace_csv())?;
    let mut rho_text = serde_json::to_string_pretty(&report.recovered_rho).expect("rho serializes");
    rho_text.push('\n');
    write_text(&out.join("recovered_rho.json"), &rho_text)?;
    let artifacts = vec![
        "fit_report.json".to_string(),
        "nll_trace.csv".to_string(),
        "recovered_rho.json".to_string(),
    ];
    let run = FitRun {
        dataset,
        validation,
        fit: &config,
    };
    write_manifest(&out.join("manifest.json"), &manifest("fit", &run, Some(config.seed), artifacts, started))?;

    if let Some(reason) = &report.failure {
        eprintln!("fit failed: {reason}");
        return Ok(EXIT_FIT);
    }
    println!(
        "fit finished after {} iterations, final NLL {}",
        report.iterations_run,
        report.final_nll.unwrap_or(f64::NAN)
    );
    Ok(EXIT_OK)
}

fn scene_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scene".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_eval(pred: &Path, gt: &Path, out: &Path) -> CmdResult {
    let started = Instant::now();
    let pairs: Vec<(PathBuf, PathBuf)> = if gt.is_dir() {
        list_scenes(gt)?
            .into_iter()
            .map(|g| {
                let p = pred.join(g.file_name().expect("listed file"));
                (p, g)
            })
            .collect()
    } else {
        vec![(pred.to_path_buf(), gt.to_path_buf())]
    };
    if pairs.is_empty() {
        return Err(Failure::config(format!("no scenes in {}", gt.display())));
    }
    let mut rows = Vec::new();
    let (mut ade_sum, mut fde_sum) = (0.0, 0.0);
    for (p, g) in &pairs {
        let scene = load_scene(g)?;
        let modes = load_modes(p)?;
        let ade = min_joint_ade(&modes, scene.future())?;
        let fde = min_joint_fde(&modes, scene.future())?;
        let id = scene_id(g);
        ade_sum += ade.value;
        fde_sum += fde.value;
        rows.push(MetricRow {
            scene_id: id.clone(),
            metric: "minJointADE".into(),
            value: ade.value,
            argmin_mode: Some(ade.argmin_mode),
        });
        rows.push(MetricRow {
            scene_id: id,
            metric: "minJointFDE".into(),
            value: fde.value,
            argmin_mode: Some(fde.argmin_mode),
        });
    }
    let count = pairs.len() as f64;
    for (metric, sum) in [("minJointADE", ade_sum), ("minJointFDE", fde_sum)] {
        rows.push(MetricRow {
            scene_id: "mean".into(),
            metric: metric.into(),
            value: sum / count,
            argmin_mode: None,
        });
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(out).map_err(|e| Failure::from(Error::io(out, e)))?;
    write_metrics_csv(&rows, file)?;
    let name = out.file_name().map_or_else(|| "metrics.csv".into(), |n| n.to_string_lossy().into_owned());
    let manifest_path = out.with_file_name(format!("{name}.manifest.json"));
    let config = serde_json::json!({ "pred": pred, "gt": gt, "out": out });
    write_manifest(&manifest_path, &manifest("eval", config, None, vec![name], started))?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct GradcheckArgs {
    seed: u64,
    agents: usize,
    steps: usize,
    scenes: usize,
    parameterization: Parameterization,
    step: f64,
    delta_reg: f64,
    inject_bug: bool,
}

fn cmd_gradcheck(args: GradcheckArgs, out: &Path) -> CmdResult {
    let started = Instant::now();
    if args.agents == 0 || args.steps == 0 || args.scenes == 0 {
        return Err(Failure::config("agents, steps and scenes must be positive"));
    }
    if !(args.step > 0.0) {
        return Err(Failure::config("step must be positive"));
    }
    let (model, params, data) = fit::synthetic_problem(args.parameterization, args.agents, args.steps, args.scenes, args.seed)?;
    let mut analytic = fit::grad_nll(&model, &params, &data, args.delta_reg)?;
    if args.inject_bug {
        if let Some(g) = analytic.first_mut() {
            *g += 1e-2 * g.abs().max(1.0);
        }
    }
    let numeric = fit::central_difference(|x| fit::nll_objective(&model, x, &data, args.delta_reg), &params, args.step)?;
    let (err, worst) = fit::max_relative_error(&analytic, &numeric);
    println!("max relative gradient error: {err:e} (component {worst} of {})", params.len());
    create_dir(out)?;
    write_manifest(&out.join("manifest.json"), &manifest("gradcheck", &args, Some(args.seed), vec![], started))?;
    Ok(if err < GRADCHECK_TOL { EXIT_OK } else { EXIT_GRADCHECK })
}
