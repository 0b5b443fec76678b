//! Synthetic camera rigs, reference scenes and on-disk datasets.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json   view id -> { camera, image_path, split }
//! cameras.json    view id -> camera
//! scene.json      reference scene
//! images/*.ppm    8-bit binary PPM renders
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::render;
use crate::scene::{CameraView, Gaussian, Image, Scene};

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigKind {
    Orbit,
    Hemisphere,
    Cluster,
}

impl FromStr for RigKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(RigKind::Orbit),
            "hemisphere" => Ok(RigKind::Hemisphere),
            "cluster" => Ok(RigKind::Cluster),
            _ => Err(Error::InvalidInput(format!("unknown rig {s:?}; expected orbit, hemisphere or cluster"))),
        }
    }
}

impl fmt::Display for RigKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RigKind::Orbit => "orbit",
            RigKind::Hemisphere => "hemisphere",
            RigKind::Cluster => "cluster",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Blobs,
    Boxes,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SceneKind::Blobs),
            "boxes" => Ok(SceneKind::Boxes),
            _ => Err(Error::InvalidInput(format!("unknown scene {s:?}; expected blobs or boxes"))),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Blobs => "blobs",
            SceneKind::Boxes => "boxes",
        })
    }
}

/// Image size and vertical field of view shared by a rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            width: 64,
            height: 64,
            fov_y_deg: 45.0,
        }
    }
}

impl CameraModel {
    pub fn intrinsics(&self) -> [f64; 4] {
        let f = 0.5 * self.height as f64 / (0.5 * self.fov_y_deg.to_radians()).tan();
        [f, f, 0.5 * self.width as f64, 0.5 * self.height as f64]
    }
}

/// Unit direction from azimuth and elevation (radians), z up.
fn direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

/// Fibonacci lattice over the upper hemisphere, azimuth offset `phase`.
fn fibonacci_hemisphere(n: usize, phase: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = phase + i as f64 * GOLDEN_ANGLE;
            Vector3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

/// Uniform sample of the spherical cap of half-angle `half` around `axis`.
fn cap_sample(rng: &mut ChaCha8Rng, axis: &Vector3<f64>, half: f64) -> Vector3<f64> {
    let cos_t = 1.0 - rng.gen::<f64>() * (1.0 - half.cos());
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    let phi = rng.gen::<f64>() * 2.0 * PI;
    let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    (axis * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t).normalize()
}

/// Fraction of `cluster` views inside the cap.
pub const CLUSTER_FRACTION: f64 = 0.8;
/// Half-angle of the `cluster` cap in degrees.
pub const CLUSTER_HALF_ANGLE_DEG: f64 = 25.0;

/// Cameras on a sphere of `radius` around `target`, all looking at it.
/// View ids are `{prefix}{index:03}`.
pub fn make_rig(
    kind: RigKind,
    n_views: usize,
    radius: f64,
    target: Vector3<f64>,
    seed: u64,
    model: CameraModel,
    prefix: &str,
) -> Result<Vec<CameraView>> {
    if n_views == 0 {
        return Err(Error::InvalidInput("n_views must be at least 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vector3<f64>> = match kind {
        RigKind::Orbit => (0..n_views)
            .map(|i| direction(2.0 * PI * i as f64 / n_views as f64, 0.0))
            .collect(),
        RigKind::Hemisphere => fibonacci_hemisphere(n_views, rng.gen::<f64>() * 2.0 * PI),
        RigKind::Cluster => {
            let axis = direction(rng.gen::<f64>() * 2.0 * PI, rng.gen_range(20f64..50.0).to_radians());
            let n_cap = ((n_views as f64) * CLUSTER_FRACTION).round() as usize;
            let half = CLUSTER_HALF_ANGLE_DEG.to_radians();
            let mut d: Vec<Vector3<f64>> = (0..n_cap).map(|_| cap_sample(&mut rng, &axis, half)).collect();
            d.extend(fibonacci_hemisphere(n_views - n_cap, rng.gen::<f64>() * 2.0 * PI));
            d
        }
    };
    dirs.iter()
        .enumerate()
        .map(|(i, d)| CameraView::look_at(format!("{prefix}{i:03}"), target + d * radius, target, model.intrinsics(), (model.width, model.height)))
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q = UnitQuaternion::from_euler_angles(
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
    );
    [q.w, q.i, q.j, q.k]
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95)]
}

/// Seeded ground-truth scene centered at the origin with extent about one
/// unit. Bands above zero get small random view-dependent coefficients.
pub fn make_reference_scene(kind: SceneKind, n_gaussians: usize, seed: u64, sh_degree: usize, background: [f64; 3]) -> Result<Scene> {
    if n_gaussians == 0 {
        return Err(Error::InvalidInput("n_gaussians must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::new(sh_degree, background);
    match kind {
        SceneKind::Blobs => {
            if n_gaussians == 1 {
                scene.gaussians.push(Gaussian::new(Vector3::zeros(), 0.3, 0.9, [0.8, 0.4, 0.2], sh_degree));
            } else {
                for _ in 0..n_gaussians {
                    let p = loop {
                        let p = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                        if p.norm() <= 1.0 {
                            break p;
                        }
                    };
                    let mut g = Gaussian::new(p, 0.1, rng.gen_range(0.6..0.95), random_color(&mut rng), sh_degree);
                    g.log_scale = Vector3::from_fn(|_, _| rng.gen_range(0.04f64..0.2).ln());
                    g.set_rotation(random_rotation(&mut rng))?;
                    scene.gaussians.push(g);
                }
            }
        }
        SceneKind::Boxes => {
            let n_boxes = 3;
            let boxes: Vec<(Vector3<f64>, Vector3<f64>)> = (0..n_boxes)
                .map(|_| {
                    let c = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.3..0.3));
                    let h = Vector3::from_fn(|_, _| rng.gen_range(0.15..0.4));
                    (c, h)
                })
                .collect();
            let face_colors: Vec<[f64; 3]> = (0..n_boxes * 6).map(|_| random_color(&mut rng)).collect();
            for i in 0..n_gaussians {
                let b = i % n_boxes;
                let (c, h) = boxes[b];
                let face = rng.gen_range(0..6);
                let axis = face / 2;
                let side = if face % 2 == 0 { -1.0 } else { 1.0 };
                let mut p = Vector3::from_fn(|k, _| c[k] + rng.gen_range(-1.0..1.0) * h[k]);
                p[axis] = c[axis] + side * h[axis];
                let mut g = Gaussian::new(p, 0.1, 0.9, face_colors[b * 6 + face], sh_degree);
                let tangent = 0.6 * (h.x * h.y * h.z).cbrt() / ((n_gaussians / n_boxes).max(1) as f64).sqrt() * 2.0;
                g.log_scale = Vector3::from_fn(|k, _| if k == axis { 0.01f64.ln() } else { tangent.max(0.03).ln() });
                scene.gaussians.push(g);
            }
        }
    }
    for g in &mut scene.gaussians {
        for c in g.sh_coeffs.iter_mut().skip(1) {
            *c = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
        }
    }
    scene.validate()?;
    Ok(scene)
}

/// Rounds to the 8-bit grid used by PPM files.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// The image as it will read back from a PPM file.
pub fn quantized(img: &Image) -> Image {
    Image {
        width: img.width,
        height: img.height,
        pixels: img
            .pixels
            .iter()
            .map(|p| p.map(|v| f64::from(quantize(v)) / 255.0))
            .collect(),
    }
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().flat_map(|p| p.map(quantize)));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn ppm_token(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8];
        if r.read(&mut b).map_err(|e| Error::io(path, e))? == 0 {
            break;
        }
        match b[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip).map_err(|e| Error::io(path, e))?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    if tok.is_empty() {
        return Err(Error::MalformedImage {
            path: path.into(),
            reason: "truncated header".into(),
        });
    }
    String::from_utf8(tok).map_err(|_| Error::MalformedImage {
        path: path.into(),
        reason: "non-ASCII header".into(),
    })
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::MalformedImage {
        path: path.into(),
        reason: reason.into(),
    };
    if ppm_token(&mut r, path)? != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let mut num = || -> Result<usize> { ppm_token(&mut r, path)?.parse().map_err(|_| bad("bad header number")) };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let mut data = vec![0u8; w * h * 3];
    r.read_exact(&mut data).map_err(|_| bad("truncated pixel data"))?;
    let pixels = data
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]].map(|v| f64::from(v) / 255.0))
        .collect();
    Image::from_pixels(w, h, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Candidate (trainable) view.
    Train,
    /// Held-out evaluation view.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub camera: CameraView,
    pub image_path: String,
    pub split: Split,
}

/// A loaded dataset; images are the 8-bit values stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub scene: Option<Scene>,
    pub manifest: BTreeMap<String, ManifestEntry>,
    pub images: BTreeMap<String, Image>,
}

impl Dataset {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.manifest
            .iter()
            .filter(|(_, e)| e.split == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn camera(&self, id: &str) -> Result<&CameraView> {
        self.manifest
            .get(id)
            .map(|e| &e.camera)
            .ok_or_else(|| Error::InvalidInput(format!("unknown view id {id:?}")))
    }

    pub fn image(&self, id: &str) -> Result<&Image> {
        self.images
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown view id {id:?}")))
    }

    /// `(camera, image)` pairs of the given ids.
    pub fn pairs(&self, ids: &[String]) -> Result<Vec<(&CameraView, &Image)>> {
        ids.iter().map(|id| Ok((self.camera(id)?, self.image(id)?))).collect()
    }

    pub fn cameras(&self, split: Split) -> Vec<CameraView> {
        self.manifest
            .values()
            .filter(|e| e.split == split)
            .map(|e| e.camera.clone())
            .collect()
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Renders every view of `scene` and writes the dataset under `dir`.
pub fn render_dataset(scene: &Scene, views: &[(CameraView, Split)], dir: &Path) -> Result<Dataset> {
    let mut seen = std::collections::BTreeSet::new();
    for (c, _) in views {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate view id {:?}", c.id)));
        }
    }
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let rendered = views
        .par_iter()
        .map(|(cam, _)| {
            let img = quantized(&render(scene, cam));
            write_ppm(&images_dir.join(format!("{}.ppm", cam.id)), &img)?;
            Ok((cam.id.clone(), img))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest: BTreeMap<String, ManifestEntry> = views
        .iter()
        .map(|(cam, split)| {
            (
                cam.id.clone(),
                ManifestEntry {
                    camera: cam.clone(),
                    image_path: format!("images/{}.ppm", cam.id),
                    split: *split,
                },
            )
        })
        .collect();
    let cameras: BTreeMap<&String, &CameraView> = manifest.iter().map(|(id, e)| (id, &e.camera)).collect();
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("cameras.json"), &cameras)?;
    let scene_path = dir.join("scene.json");
    fs::write(&scene_path, scene.to_json()).map_err(|e| Error::io(&scene_path, e))?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        scene: Some(scene.clone()),
        manifest,
        images: rendered.into_iter().collect(),
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: BTreeMap<String, ManifestEntry> = read_json(&dir.join("manifest.json"))?;
    let scene_path = dir.join("scene.json");
    let scene = if scene_path.exists() {
        Some(crate::optimize::load_scene(&scene_path)?)
    } else {
        None
    };
    let images = manifest
        .par_iter()
        .map(|(id, e)| {
            let img = read_ppm(&dir.join(&e.image_path))?;
            if img.width != e.camera.width || img.height != e.camera.height {
                return Err(Error::MalformedImage {
                    path: dir.join(&e.image_path),
                    reason: format!(
                        "size {}x{} does not match camera {}x{}",
                        img.width, img.height, e.camera.width, e.camera.height
                    ),
                });
            }
            Ok((id.clone(), img))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        scene,
        manifest,
        images: images.into_iter().collect(),
    })
}

/// Everything needed to synthesize a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scene: SceneKind,
    pub gaussians: usize,
    pub sh_degree: usize,
    pub rig: RigKind,
    pub views: usize,
    pub test_views: usize,
    /// Exact copies of every candidate view added to the pool
    /// (ids `{id}d{k}`).
    #[serde(default)]
    pub duplicates: usize,
    pub radius: f64,
    pub camera: CameraModel,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneKind::Blobs,
            gaussians: 200,
            sh_degree: 0,
            rig: RigKind::Hemisphere,
            views: 60,
            test_views: 10,
            duplicates: 0,
            radius: 4.0,
            camera: CameraModel::default(),
            background: [0.0; 3],
            seed: 0,
        }
    }
}

/// Candidate views (`v000…`) follow `config.rig`; held-out views (`t000…`)
/// always cover the whole upper hemisphere.
pub fn generate_dataset(config: &DatasetConfig, dir: &Path) -> Result<Dataset> {
    let scene = make_reference_scene(config.scene, config.gaussians, config.seed, config.sh_degree, config.background)?;
    let target = Vector3::zeros();
    let cand = make_rig(config.rig, config.views, config.radius, target, config.seed, config.camera, "v")?;
    let mut views: Vec<(CameraView, Split)> = Vec::with_capacity(cand.len() * (1 + config.duplicates));
    for c in cand {
        for k in 1..=config.duplicates {
            let mut copy = c.clone();
            copy.id = format!("{}d{k}", c.id);
            views.push((copy, Split::Train));
        }
        views.push((c, Split::Train));
    }
    if config.test_views > 0 {
        let test = make_rig(
            RigKind::Hemisphere,
            config.test_views,
            config.radius,
            target,
            config.seed.wrapping_add(0x9e37_79b9),
            config.camera,
            "t",
        )?;
        views.extend(test.into_iter().map(|c| (c, Split::Test)));
    }
    render_dataset(&scene, &views, dir)
}
