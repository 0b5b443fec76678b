use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use splat_oed_core::dataset::{self, load_dataset, CameraModel, DatasetConfig, RigKind, SceneKind, Split};
use splat_oed_core::info::DEFAULT_LAMBDA_PRIOR;
use splat_oed_core::optimize::{load_optimizer_state, load_scene, save_checkpoint, Trainer};
use splat_oed_core::{render, CameraView};
use splat_oed_harness::output::{ensure_dir, write_json, write_metrics_csv, write_sparsification_csv, MetricsRow};
use splat_oed_harness::{
    ablation_mask, initial_model, run_ablation, run_keyframes, run_selection_experiment, run_sparsification,
    ExperimentOptions, Method, Schedule,
};

const THREADS_ENV: &str = "SPLAT_OED_THREADS";

#[derive(Parser)]
#[command(name = "splat-oed", version, about = "Information-driven view selection for Gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a reference scene, a camera rig and rendered images.
    GenDataset(GenDatasetArgs),
    /// Render a scene from one camera to a PPM file.
    Render(RenderArgs),
    /// Fit a fresh model to training views.
    Train(TrainArgs),
    /// Run a view-selection experiment.
    Select(SelectArgs),
    /// Select keyframes against a fixed trained scene and retrain on them.
    Keyframes(KeyframesArgs),
    /// Sparsification curves of candidate rankings.
    Sparsify(SparsifyArgs),
    /// D-block selection with parameter groups removed from the information.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Gaussians in the trained model.
    #[arg(long, default_value_t = 100)]
    gaussians: usize,
    /// Prior information added to the Hessian diagonal.
    #[arg(long, default_value_t = DEFAULT_LAMBDA_PRIOR)]
    lambda: f64,
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long, default_value = "blobs")]
    scene: String,
    #[arg(long, default_value_t = 200)]
    gaussians: usize,
    #[arg(long, default_value = "hemisphere")]
    rig: String,
    /// Candidate views.
    #[arg(long, default_value_t = 60)]
    views: usize,
    /// Held-out evaluation views (hemisphere rig).
    #[arg(long, default_value_t = 10)]
    test_views: usize,
    /// Exact copies of every candidate view.
    #[arg(long, default_value_t = 0)]
    duplicates: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 45.0)]
    fov: f64,
    /// Camera distance from the scene center.
    #[arg(long, default_value_t = 4.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    sh_degree: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Camera JSON, or a map of cameras (then `--view` picks one).
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    view: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training view ids (default: every candidate view).
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<String>>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    method: String,
    #[arg(long, default_value = "single10")]
    schedule: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct KeyframesArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Fixed trained scene the keyframes are scored against.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    method: String,
    #[arg(long)]
    seed: u64,
    /// Retraining steps on the keyframes (default 100 per keyframe).
    #[arg(long)]
    retrain_steps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SparsifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Views the scene was trained on (default: the checkpoint's record).
    #[arg(long, value_delimiter = ',')]
    train_views: Option<Vec<String>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "sh,alpha,geom,none")]
    masks: Vec<String>,
    #[arg(long, default_value = "single10")]
    schedule: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(s.parse()?)
}

fn write_config(path: &Path, value: serde_json::Value) -> Result<()> {
    write_json(path, &value)?;
    Ok(())
}

fn experiment_options(ds: &dataset::Dataset, model: &ModelArgs) -> ExperimentOptions {
    let mut o = ExperimentOptions::for_dataset(ds);
    o.n_gaussians = model.gaussians;
    o.lambda_prior = model.lambda;
    o
}

fn check_model(model: &ModelArgs) -> Result<()> {
    if model.gaussians == 0 {
        bail!("--gaussians must be at least 1");
    }
    if !(model.lambda > 0.0) {
        bail!("--lambda must be positive");
    }
    Ok(())
}

fn gen_dataset(a: GenDatasetArgs) -> Result<()> {
    let config = DatasetConfig {
        scene: a.scene.parse::<SceneKind>()?,
        gaussians: a.gaussians,
        sh_degree: a.sh_degree,
        rig: a.rig.parse::<RigKind>()?,
        views: a.views,
        test_views: a.test_views,
        duplicates: a.duplicates,
        radius: a.radius,
        camera: CameraModel {
            width: a.width,
            height: a.height,
            fov_y_deg: a.fov,
        },
        background: [0.0; 3],
        seed: a.seed,
    };
    if config.sh_degree > splat_oed_core::scene::MAX_SH_DEGREE {
        bail!("--sh-degree must be at most {}", splat_oed_core::scene::MAX_SH_DEGREE);
    }
    let ds = dataset::generate_dataset(&config, &a.out)?;
    write_config(
        &a.out.join("config.json"),
        json!({ "command": "gen-dataset", "dataset": config, "n_images": ds.images.len() }),
    )
}

fn load_camera(path: &Path, view: Option<&str>) -> Result<CameraView> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let single = value.get("fx").is_some();
    match (single, view) {
        (true, None) => Ok(serde_json::from_value(value).with_context(|| format!("parsing camera {}", path.display()))?),
        (true, Some(_)) => bail!("--view given but {} holds a single camera", path.display()),
        (false, Some(id)) => {
            let cam = value
                .get(id)
                .with_context(|| format!("view {id:?} not found in {}", path.display()))?;
            Ok(serde_json::from_value(cam.clone())?)
        }
        (false, None) => bail!("{} holds several cameras; pick one with --view", path.display()),
    }
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let cam = load_camera(&a.camera, a.view.as_deref())?;
    let img = render(&scene, &cam);
    dataset::write_ppm(&a.out, &img)?;
    write_config(
        &sidecar_config(&a.out),
        json!({ "command": "render", "scene": a.scene, "camera": a.camera, "view": a.view, "out": a.out }),
    )
}

/// `config.json` companion of a single-file output.
fn sidecar_config(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.config.json"))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    check_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let ids = match a.views {
        Some(v) => v,
        None => ds.ids(Split::Train),
    };
    if ids.is_empty() {
        bail!("no training views");
    }
    let pairs = ds.pairs(&ids)?;
    let opts = experiment_options(&ds, &a.model);
    let (mut scene, adam) = initial_model(&ds, &opts, a.seed)?;
    let mut trainer = Trainer::new(&scene, adam, a.seed);
    trainer.run(&mut scene, &pairs, a.steps)?;
    let mut state = trainer.into_state();
    state.train_views = ids.clone();
    save_checkpoint(&a.out, &scene, &state)?;
    write_config(
        &sidecar_config(&a.out),
        json!({
            "command": "train", "dataset": a.dataset, "steps": a.steps, "seed": a.seed,
            "train_views": ids, "options": opts, "adam": adam, "out": a.out,
        }),
    )
}

fn select_cmd(a: SelectArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    let schedule = Schedule::named(&a.schedule, a.seed)?;
    check_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let opts = experiment_options(&ds, &a.model);
    let (result, scene) = run_selection_experiment(&ds, method, &schedule, &opts)?;
    let dir = a.out.join(format!("select-{method}-{}-seed{}", a.schedule, a.seed));
    ensure_dir(&dir)?;
    write_json(&dir.join("report.json"), &result)?;
    write_json(&dir.join("selection.json"), &result.selection)?;
    write_metrics_csv(&dir.join("metrics.csv"), &[MetricsRow::from_run(method.to_string(), &result)])?;
    fs::write(dir.join("scene.json"), scene.to_json())?;
    write_config(
        &dir.join("config.json"),
        json!({
            "command": "select", "dataset": a.dataset, "method": method, "schedule_name": a.schedule,
            "schedule": schedule, "seed": a.seed, "options": opts,
        }),
    )
}

fn keyframes_cmd(a: KeyframesArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    check_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let pretrained = load_scene(&a.scene)?;
    let opts = ExperimentOptions {
        sh_degree: pretrained.sh_degree,
        ..experiment_options(&ds, &a.model)
    };
    let retrain = a.retrain_steps.unwrap_or(100 * a.k as u64);
    let (result, _) = run_keyframes(&ds, &pretrained, method, a.k, retrain, a.seed, &opts)?;
    let dir = a.out.join(format!("keyframes-{method}-k{}-seed{}", a.k, a.seed));
    ensure_dir(&dir)?;
    write_json(&dir.join("report.json"), &result)?;
    write_json(&dir.join("selection.json"), &result.selection)?;
    write_metrics_csv(&dir.join("metrics.csv"), &[MetricsRow::from_run(method.to_string(), &result)])?;
    write_config(
        &dir.join("config.json"),
        json!({
            "command": "keyframes", "dataset": a.dataset, "scene": a.scene, "k": a.k, "method": method,
            "seed": a.seed, "retrain_steps": retrain, "options": opts,
        }),
    )
}

fn sparsify_cmd(a: SparsifyArgs) -> Result<()> {
    let methods = a.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        bail!("--methods needs at least one method");
    }
    check_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let scene = load_scene(&a.scene)?;
    let train_views = match a.train_views {
        Some(v) => v,
        None => load_optimizer_state(&a.scene)?
            .map(|s| s.train_views)
            .filter(|v| !v.is_empty())
            .context("no --train-views given and the scene checkpoint records none")?,
    };
    let opts = ExperimentOptions {
        sh_degree: scene.sh_degree,
        ..experiment_options(&ds, &a.model)
    };
    let result = run_sparsification(&ds, &scene, &train_views, &methods, a.seed, &opts)?;
    let dir = a.out.join(format!("sparsify-seed{}", a.seed));
    ensure_dir(&dir)?;
    write_sparsification_csv(&dir.join("sparsification.csv"), &result.curve)?;
    write_json(&dir.join("report.json"), &result)?;
    write_config(
        &dir.join("config.json"),
        json!({
            "command": "sparsify", "dataset": a.dataset, "scene": a.scene, "methods": methods,
            "train_views": train_views, "seed": a.seed, "options": opts,
        }),
    )
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    for m in &a.masks {
        if ablation_mask(m)?.is_empty() {
            bail!("mask {m:?} removes every parameter group");
        }
    }
    let schedule = Schedule::named(&a.schedule, a.seed)?;
    check_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let opts = experiment_options(&ds, &a.model);
    let runs = run_ablation(&ds, &schedule, &a.masks, &opts)?;
    let dir = a.out.join(format!("ablate-{}-seed{}", a.schedule, a.seed));
    ensure_dir(&dir)?;
    let rows: Vec<MetricsRow> = runs
        .iter()
        .map(|(mask, r)| MetricsRow::from_run(format!("{}:mask={mask}", r.method), r))
        .collect();
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    let report: serde_json::Map<String, serde_json::Value> = runs
        .iter()
        .map(|(mask, r)| Ok((mask.clone(), serde_json::to_value(r)?)))
        .collect::<Result<_>>()?;
    write_json(&dir.join("report.json"), &report)?;
    write_config(
        &dir.join("config.json"),
        json!({
            "command": "ablate", "dataset": a.dataset, "masks": a.masks, "schedule_name": a.schedule,
            "schedule": schedule, "seed": a.seed, "options": opts,
        }),
    )
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenDataset(a) => gen_dataset(a),
        Command::Render(a) => render_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Select(a) => select_cmd(a),
        Command::Keyframes(a) => keyframes_cmd(a),
        Command::Sparsify(a) => sparsify_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
