//! Scene initialization and Adam training on the per-view L1 loss.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{l1_loss, l1_loss_and_gradient};
use crate::render::render;
use crate::scene::{flatten_params, unflatten_params, CameraView, Gaussian, Image, ParamGroup, ParamLayout, ParamMask, Scene};

/// Depth range of the frusta used to place initial Gaussians.
pub const INIT_DEPTH: (f64, f64) = (0.5, 5.0);
/// Global gradient-norm clip.
pub const GRAD_CLIP: f64 = 1e3;

const INIT_GRID: usize = 32;

/// Per-group Adam learning rates. `position` is multiplied by the scene
/// extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 2e-3,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
        }
    }
}

impl LearningRates {
    fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Sh => self.sh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: LearningRates,
    /// Multiplier of the position learning rate.
    pub extent: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: LearningRates::default(),
            extent: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            clip_norm: GRAD_CLIP,
        }
    }
}

impl AdamConfig {
    pub fn with_extent(mut self, extent: f64) -> Self {
        self.extent = extent;
        self
    }
}

/// `1.1 ×` the largest distance of a camera center from the centers'
/// centroid (at least 1).
pub fn scene_extent<'a>(cams: impl IntoIterator<Item = &'a CameraView>) -> f64 {
    let centers: Vec<Vector3<f64>> = cams.into_iter().map(CameraView::center).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

fn in_frustum(cam: &CameraView, p: &Vector3<f64>) -> bool {
    let q = cam.to_camera(p);
    if q.z < INIT_DEPTH.0 || q.z > INIT_DEPTH.1 {
        return false;
    }
    let u = cam.fx * q.x / q.z + cam.cx;
    let v = cam.fy * q.y / q.z + cam.cy;
    (0.0..=cam.width as f64).contains(&u) && (0.0..=cam.height as f64).contains(&v)
}

fn frustum_corners(cam: &CameraView) -> Vec<Vector3<f64>> {
    let r_t = cam.rotation.transpose();
    let mut out = Vec::with_capacity(8);
    for z in [INIT_DEPTH.0, INIT_DEPTH.1] {
        for u in [0.0, cam.width as f64] {
            for v in [0.0, cam.height as f64] {
                let q = Vector3::new((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
                out.push(r_t * (q - cam.translation));
            }
        }
    }
    out
}

fn aabb(points: impl IntoIterator<Item = Vector3<f64>>) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let mut it = points.into_iter();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p))))
}

/// Axis-aligned box around the intersection of all camera frusta over
/// [`INIT_DEPTH`], found by grid sampling the union's bounding box; falls
/// back to the union's box when the sampled intersection is empty.
pub fn frusta_box(views: &[CameraView]) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let (lo, hi) = aabb(views.iter().flat_map(frustum_corners))
        .ok_or_else(|| Error::InvalidInput("no cameras to initialize from".into()))?;
    let step = (hi - lo) / INIT_GRID as f64;
    let mut inside = Vec::new();
    for i in 0..=INIT_GRID {
        for j in 0..=INIT_GRID {
            for k in 0..=INIT_GRID {
                let p = lo + Vector3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z);
                if views.iter().all(|c| in_frustum(c, &p)) {
                    inside.push(p);
                }
            }
        }
    }
    Ok(aabb(inside).unwrap_or((lo, hi)))
}

/// Seeded initial scene: positions uniform in [`frusta_box`], identity
/// rotations, isotropic scale `0.1·diag/∛n`, opacity ½ and mid-gray color.
pub fn init_scene(views: &[CameraView], seed: u64, n_gaussians: usize, sh_degree: usize, background: [f64; 3]) -> Result<Scene> {
    if n_gaussians == 0 {
        return Err(Error::InvalidInput("n_gaussians must be at least 1".into()));
    }
    let (lo, hi) = frusta_box(views)?;
    let diag = (hi - lo).norm();
    let scale = 0.1 * diag / (n_gaussians as f64).cbrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::new(sh_degree, background);
    for _ in 0..n_gaussians {
        let p = Vector3::from_fn(|i, _| lo[i] + rng.gen::<f64>() * (hi[i] - lo[i]));
        let mut g = Gaussian::new(p, scale, 0.5, [0.5; 3], sh_degree);
        g.opacity_logit = 0.0;
        scene.gaussians.push(g);
    }
    scene.validate()?;
    Ok(scene)
}

/// A training view: camera and target image.
pub type TrainSet = BTreeMap<String, (CameraView, Image)>;

/// Adam moments and step counter over the flat (all-groups) layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_views: Vec<String>,
}

impl OptimizerState {
    pub fn zeros(len: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            train_views: Vec::new(),
        }
    }
}

/// Stateful Adam trainer; the view sampled at step `k` depends only on the
/// seed and `k`.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: AdamConfig,
    seed: u64,
    layout: ParamLayout,
    lr: Vec<f64>,
    state: OptimizerState,
}

impl Trainer {
    pub fn new(scene: &Scene, config: AdamConfig, seed: u64) -> Self {
        let layout = ParamLayout::for_scene(scene, ParamMask::ALL);
        let state = OptimizerState::zeros(layout.len());
        Self::assemble(layout, config, seed, state)
    }

    pub fn from_state(scene: &Scene, config: AdamConfig, seed: u64, state: OptimizerState) -> Result<Self> {
        let layout = ParamLayout::for_scene(scene, ParamMask::ALL);
        if state.m.len() != layout.len() || state.v.len() != layout.len() {
            return Err(Error::dims(layout.len(), state.m.len()));
        }
        Ok(Self::assemble(layout, config, seed, state))
    }

    fn assemble(layout: ParamLayout, config: AdamConfig, seed: u64, state: OptimizerState) -> Self {
        let mut lr = vec![0.0; layout.len()];
        for (k, slot) in lr.iter_mut().enumerate() {
            let (_, group, _) = layout.locate(k).expect("index within layout");
            let mut rate = config.lr.for_group(group);
            if group == ParamGroup::Position {
                rate *= config.extent;
            }
            *slot = rate;
        }
        Trainer {
            config,
            seed,
            layout,
            lr,
            state,
        }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn into_state(self) -> OptimizerState {
        self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    fn pick(&self, n: usize) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.state.step);
        rng.gen_range(0..n)
    }

    /// One Adam step on a uniformly sampled view; returns that view's loss
    /// before the update.
    pub fn step(&mut self, scene: &mut Scene, views: &[(&CameraView, &Image)]) -> Result<f64> {
        if views.is_empty() {
            return Err(Error::InvalidInput("no training views".into()));
        }
        let (cam, target) = views[self.pick(views.len())];
        let (loss, mut grad) = l1_loss_and_gradient(scene, cam, target, ParamMask::ALL)?;
        if grad.iter().any(|g| !g.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > self.config.clip_norm {
            let s = self.config.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }

        let (mut params, layout) = flatten_params(scene, ParamMask::ALL);
        if layout != self.layout {
            return Err(Error::MaskMismatch("scene layout changed during training".into()));
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for k in 0..params.len() {
            let g = grad[k];
            let m = b1 * self.state.m[k] + (1.0 - b1) * g;
            let v = b2 * self.state.v[k] + (1.0 - b2) * g * g;
            self.state.m[k] = m;
            self.state.v[k] = v;
            let update = self.lr[k] * (m / c1) / ((v / c2).sqrt() + self.config.eps);
            if update.is_finite() {
                params[k] -= update;
            }
        }
        *scene = unflatten_params(scene, &layout, &params)?;
        Ok(loss)
    }

    pub fn run(&mut self, scene: &mut Scene, views: &[(&CameraView, &Image)], steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step(scene, views)?;
        }
        Ok(())
    }
}

/// Trains a copy of `scene` for `steps` Adam steps.
pub fn train(scene: &Scene, views: &TrainSet, steps: u64, config: AdamConfig, seed: u64) -> Result<Scene> {
    let refs: Vec<(&CameraView, &Image)> = views.values().map(|(c, i)| (c, i)).collect();
    let mut out = scene.clone();
    let mut trainer = Trainer::new(scene, config, seed);
    trainer.run(&mut out, &refs, steps)?;
    Ok(out)
}

/// Mean L1 loss over views.
pub fn training_loss(scene: &Scene, views: &[(&CameraView, &Image)]) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::InvalidInput("no views".into()));
    }
    let mut total = 0.0;
    for (cam, target) in views {
        total += l1_loss(&render(scene, cam), target)?;
    }
    Ok(total / views.len() as f64)
}

/// Sidecar path holding the optimizer state of a scene checkpoint.
pub fn sidecar_path(scene_path: &Path) -> PathBuf {
    let stem = scene_path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    scene_path.with_file_name(format!("{stem}.optim.json"))
}

pub fn save_checkpoint(scene_path: &Path, scene: &Scene, state: &OptimizerState) -> Result<()> {
    fs::write(scene_path, scene.to_json()).map_err(|e| Error::io(scene_path, e))?;
    let side = sidecar_path(scene_path);
    let json = serde_json::to_string_pretty(state).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scene::from_json(&text).map_err(|e| Error::json(path, e))
}

/// Loads the optimizer sidecar of `scene_path`, if present.
pub fn load_optimizer_state(scene_path: &Path) -> Result<Option<OptimizerState>> {
    let side = sidecar_path(scene_path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::json(&side, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn ring(n: usize) -> Vec<CameraView> {
        (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                let eye = Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.5);
                CameraView::look_at(format!("v{i}"), eye, Vector3::zeros(), [20.0, 20.0, 8.0, 8.0], (16, 16)).unwrap()
            })
            .collect()
    }

    #[test]
    fn init_is_seeded_and_inside_box() {
        let views = ring(4);
        let a = init_scene(&views, 7, 10, 0, [0.0; 3]).unwrap();
        let b = init_scene(&views, 7, 10, 0, [0.0; 3]).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = frusta_box(&views).unwrap();
        for g in &a.gaussians {
            assert!((0..3).all(|i| g.position[i] >= lo[i] && g.position[i] <= hi[i]));
            assert_eq!(g.rotation(), [1.0, 0.0, 0.0, 0.0]);
            assert_eq!(g.opacity_logit, 0.0);
        }
        assert!(init_scene(&views, 7, 0, 0, [0.0; 3]).is_err());
        let one = init_scene(&views, 1, 1, 0, [0.0; 3]).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn frusta_box_contains_target() {
        let (lo, hi) = frusta_box(&ring(6)).unwrap();
        assert!((0..3).all(|i| lo[i] <= 0.0 && hi[i] >= 0.0));
    }

    #[test]
    fn zero_steps_is_identity() {
        let views = ring(2);
        let scene = init_scene(&views, 3, 4, 0, [0.0; 3]).unwrap();
        let set: TrainSet = views
            .iter()
            .map(|c| (c.id.clone(), (c.clone(), Image::filled(16, 16, [0.3; 3]))))
            .collect();
        assert_eq!(train(&scene, &set, 0, AdamConfig::default(), 1).unwrap(), scene);
    }

    #[test]
    fn extent_of_ring() {
        let e = scene_extent(&ring(4));
        assert!((e - 1.1 * 3.0).abs() < 1e-12);
        let single = CameraView::new("a", [1.0, 1.0, 0.5, 0.5], (1, 1), Matrix3::identity(), Vector3::zeros()).unwrap();
        assert_eq!(scene_extent([&single]), 1.0);
    }
}
