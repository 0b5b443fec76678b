//! View-selection, keyframe and ablation experiments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use splat_oed_core::dataset::{Dataset, Split};
use splat_oed_core::info::{
    select_batch_info, select_keyframes, view_informations, Approximation, HessianApprox, SelectionReport,
    SelectionRound, DEFAULT_LAMBDA_PRIOR,
};
use splat_oed_core::metrics::evaluate;
use splat_oed_core::optimize::{init_scene, scene_extent, AdamConfig, LearningRates, Trainer};
use splat_oed_core::{CameraView, Image, ParamMask, Scene};

use crate::error::{HarnessError, Result};
use crate::schedule::{ablation_mask, Method, Schedule};

/// Model and information settings shared by all experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub n_gaussians: usize,
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub lambda_prior: f64,
    pub mask: ParamMask,
    pub lr: LearningRates,
}

impl ExperimentOptions {
    /// Defaults matching the dataset's reference scene degree and background.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let (sh_degree, background) = ds
            .scene
            .as_ref()
            .map(|s| (s.sh_degree, s.background))
            .unwrap_or((0, [0.0; 3]));
        ExperimentOptions {
            n_gaussians: 100,
            sh_degree,
            background,
            lambda_prior: DEFAULT_LAMBDA_PRIOR,
            mask: ParamMask::ALL,
            lr: LearningRates::default(),
        }
    }
}

/// Outcome of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    /// Training views in the order they were added.
    pub chosen: Vec<String>,
    pub n_views: usize,
    pub steps: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub selection: SelectionReport,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn candidate_cameras(ds: &Dataset) -> Vec<CameraView> {
    ds.cameras(Split::Train)
}

/// Seeded initial model over the dataset's candidate cameras.
pub fn initial_model(ds: &Dataset, opts: &ExperimentOptions, seed: u64) -> Result<(Scene, AdamConfig)> {
    let cams = candidate_cameras(ds);
    let scene = init_scene(&cams, seed, opts.n_gaussians, opts.sh_degree, opts.background)?;
    let config = AdamConfig {
        lr: opts.lr,
        ..AdamConfig::default()
    }
    .with_extent(scene_extent(&cams));
    Ok((scene, config))
}

/// Information matrix of `ids` at `scene`, starting from the prior.
pub fn training_hessian(
    ds: &Dataset,
    scene: &Scene,
    ids: &[String],
    kind: Approximation,
    mask: ParamMask,
    lambda_prior: f64,
) -> Result<HessianApprox> {
    let mut h = HessianApprox::for_scene(kind, scene, mask, lambda_prior)?;
    let cams = ids.iter().map(|id| ds.camera(id)).collect::<splat_oed_core::Result<Vec<_>>>()?;
    for info in view_informations(scene, &cams, mask, kind).values() {
        h.add_information(info)?;
    }
    Ok(h)
}

fn test_pairs(ds: &Dataset) -> Result<Vec<(&CameraView, &Image)>> {
    let ids = ds.ids(Split::Test);
    if ids.is_empty() {
        return Err(HarnessError::InsufficientViews {
            what: "held-out",
            needed: 1,
            available: 0,
        });
    }
    Ok(ds.pairs(&ids)?)
}

fn train_until(trainer: &mut Trainer, scene: &mut Scene, ds: &Dataset, ids: &[String], until: u64) -> Result<()> {
    let pairs = ds.pairs(ids)?;
    let remaining = until.saturating_sub(trainer.steps_taken());
    trainer.run(scene, &pairs, remaining)?;
    Ok(())
}

/// Start from seeded uniform views, alternate training and selection until
/// the target count, finish training and evaluate on the held-out views.
pub fn run_selection_experiment(
    ds: &Dataset,
    method: Method,
    schedule: &Schedule,
    opts: &ExperimentOptions,
) -> Result<(RunResult, Scene)> {
    schedule.validate()?;
    let mut candidates = ds.ids(Split::Train);
    if candidates.len() < schedule.target_views {
        return Err(HarnessError::InsufficientViews {
            what: "candidate",
            needed: schedule.target_views,
            available: candidates.len(),
        });
    }
    let tests = test_pairs(ds)?;
    let seed = schedule.seed;

    let mut chosen: Vec<String> = candidates
        .choose_multiple(&mut rng(seed, 1), schedule.start_views)
        .cloned()
        .collect();
    candidates.retain(|c| !chosen.contains(c));
    let mut uniform_rng = rng(seed, 2);

    let (mut scene, config) = initial_model(ds, opts, seed)?;
    let mut trainer = Trainer::new(&scene, config, seed);
    let mut report = match method {
        Method::Uniform => uniform_report(),
        Method::Oed {
            functional,
            approximation,
        } => SelectionReport::new(functional, approximation),
    };

    while chosen.len() < schedule.target_views {
        train_until(&mut trainer, &mut scene, ds, &chosen, schedule.iters_per_view * chosen.len() as u64)?;
        let k = schedule.step_views.min(schedule.target_views - chosen.len());
        let picks = match method {
            Method::Uniform => {
                let picks: Vec<String> = candidates.choose_multiple(&mut uniform_rng, k).cloned().collect();
                for p in &picks {
                    report.rounds.push(SelectionRound {
                        picked: p.clone(),
                        scores: BTreeMap::new(),
                    });
                }
                picks
            }
            Method::Oed {
                functional,
                approximation,
            } => {
                let h = training_hessian(ds, &scene, &chosen, approximation, opts.mask, opts.lambda_prior)?;
                let cams = candidates.iter().map(|id| ds.camera(id)).collect::<splat_oed_core::Result<Vec<_>>>()?;
                let infos = view_informations(&scene, &cams, opts.mask, approximation);
                let (r, _) = select_batch_info(&h, infos, functional, k)?;
                report.rounds.extend(r.rounds);
                r.chosen
            }
        };
        report.chosen.extend(picks.iter().cloned());
        candidates.retain(|c| !picks.contains(c));
        chosen.extend(picks);
    }
    let final_steps = schedule.total_steps.max(schedule.iters_per_view * chosen.len() as u64);
    train_until(&mut trainer, &mut scene, ds, &chosen, final_steps)?;

    let (psnr, ssim) = evaluate(&scene, &tests)?;
    Ok((
        RunResult {
            method,
            seed,
            n_views: chosen.len(),
            chosen,
            steps: trainer.steps_taken(),
            psnr,
            ssim,
            selection: report,
        },
        scene,
    ))
}

fn uniform_report() -> SelectionReport {
    SelectionReport {
        functional: "uniform".into(),
        approximation: "none".into(),
        chosen: Vec::new(),
        rounds: Vec::new(),
    }
}

/// Picks `k` keyframes from the candidate pool against the fixed
/// `pretrained` scene, retrains a fresh model on them for `retrain_steps`
/// and evaluates it on the held-out views.
pub fn run_keyframes(
    ds: &Dataset,
    pretrained: &Scene,
    method: Method,
    k: usize,
    retrain_steps: u64,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<(RunResult, Scene)> {
    let pool = ds.cameras(Split::Train);
    if pool.len() < k {
        return Err(HarnessError::InsufficientViews {
            what: "candidate",
            needed: k,
            available: pool.len(),
        });
    }
    let tests = test_pairs(ds)?;
    let selection = match method {
        Method::Uniform => {
            let ids: Vec<String> = pool.iter().map(|c| c.id.clone()).collect();
            let mut r = uniform_report();
            r.chosen = ids.choose_multiple(&mut rng(seed, 3), k).cloned().collect();
            r.rounds = r
                .chosen
                .iter()
                .map(|p| SelectionRound {
                    picked: p.clone(),
                    scores: BTreeMap::new(),
                })
                .collect();
            r
        }
        Method::Oed {
            functional,
            approximation,
        } => select_keyframes(pretrained, &pool, functional, approximation, opts.mask, opts.lambda_prior, k)?,
    };
    let chosen = selection.chosen.clone();
    let (mut scene, config) = initial_model(ds, opts, seed)?;
    let mut trainer = Trainer::new(&scene, config, seed);
    train_until(&mut trainer, &mut scene, ds, &chosen, retrain_steps)?;
    let (psnr, ssim) = evaluate(&scene, &tests)?;
    Ok((
        RunResult {
            method,
            seed,
            n_views: chosen.len(),
            chosen,
            steps: trainer.steps_taken(),
            psnr,
            ssim,
            selection,
        },
        scene,
    ))
}

/// Trains a model on every candidate view (the fixed model for keyframe
/// selection).
pub fn pretrain_on_pool(ds: &Dataset, steps: u64, seed: u64, opts: &ExperimentOptions) -> Result<Scene> {
    let ids = ds.ids(Split::Train);
    let (mut scene, config) = initial_model(ds, opts, seed)?;
    let mut trainer = Trainer::new(&scene, config, seed);
    train_until(&mut trainer, &mut scene, ds, &ids, steps)?;
    Ok(scene)
}

/// One D-block selection experiment per named mask.
pub fn run_ablation(
    ds: &Dataset,
    schedule: &Schedule,
    masks: &[String],
    opts: &ExperimentOptions,
) -> Result<Vec<(String, RunResult)>> {
    let method = Method::oed(splat_oed_core::info::UncertaintyFunctional::D, Approximation::BlockDiagonal);
    masks
        .iter()
        .map(|name| {
            let mask = ablation_mask(name)?;
            let o = ExperimentOptions { mask, ..*opts };
            let (r, _) = run_selection_experiment(ds, method, schedule, &o)?;
            Ok((name.clone(), r))
        })
        .collect()
}
