//! Scene, Gaussian, camera and image types, plus the flat parameter layout
//! shared by the Jacobian, Hessian and optimizer code.
//!
//! Parameters are stored raw (pre-activation): opacity as a logit, scale as
//! a per-axis log, rotation as a quaternion `[w, x, y, z]` that is kept at unit
//! norm whenever it is written.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest spherical-harmonics degree the renderer evaluates.
pub const MAX_SH_DEGREE: usize = 3;

/// Number of SH coefficients per channel for degree `d`.
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn normalized_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::InvalidInput(format!("degenerate quaternion {q:?}")));
    }
    // Already-unit quaternions are left bit-for-bit untouched.
    if (n - 1.0).abs() <= 1e-14 {
        return Ok(q);
    }
    Ok(q.map(|v| v / n))
}

/// One 3D Gaussian in raw parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRecord", into = "GaussianRecord")]
pub struct Gaussian {
    pub position: Vector3<f64>,
    rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// `(d+1)²` RGB triples, degree-major.
    pub sh_coeffs: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct GaussianRecord {
    position: [f64; 3],
    rotation: [f64; 4],
    log_scale: [f64; 3],
    opacity_logit: f64,
    sh_coeffs: Vec<[f64; 3]>,
}

impl TryFrom<GaussianRecord> for Gaussian {
    type Error = Error;

    fn try_from(r: GaussianRecord) -> Result<Self> {
        if r.sh_coeffs.is_empty() {
            return Err(Error::InvalidInput("gaussian without sh_coeffs".into()));
        }
        Ok(Gaussian {
            position: Vector3::from(r.position),
            rotation: normalized_quat(r.rotation)?,
            log_scale: Vector3::from(r.log_scale),
            opacity_logit: r.opacity_logit,
            sh_coeffs: r.sh_coeffs,
        })
    }
}

impl From<Gaussian> for GaussianRecord {
    fn from(g: Gaussian) -> Self {
        GaussianRecord {
            position: g.position.into(),
            rotation: g.rotation,
            log_scale: g.log_scale.into(),
            opacity_logit: g.opacity_logit,
            sh_coeffs: g.sh_coeffs,
        }
    }
}

impl Gaussian {
    /// An isotropic, identity-rotated Gaussian with a flat color.
    ///
    /// `color` is the *activated* RGB value; it is converted to the degree-0
    /// SH coefficient and higher bands are zero.
    pub fn new(position: Vector3<f64>, scale: f64, opacity: f64, color: [f64; 3], sh_degree: usize) -> Self {
        let mut sh_coeffs = vec![[0.0; 3]; sh_coeff_count(sh_degree)];
        sh_coeffs[0] = color.map(|c| (c - 0.5) / crate::sh::SH_C0);
        let opacity = opacity.clamp(1e-9, 1.0 - 1e-9);
        Gaussian {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: (opacity / (1.0 - opacity)).ln(),
            sh_coeffs,
        }
    }

    pub fn rotation(&self) -> [f64; 4] {
        self.rotation
    }

    /// Stores `q` normalized to unit length.
    pub fn set_rotation(&mut self, q: [f64; 4]) -> Result<()> {
        self.rotation = normalized_quat(q)?;
        Ok(())
    }

    pub fn with_rotation(mut self, q: [f64; 4]) -> Result<Self> {
        self.set_rotation(q)?;
        Ok(self)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn sh_degree(&self) -> Option<usize> {
        (0..=MAX_SH_DEGREE).find(|&d| sh_coeff_count(d) == self.sh_coeffs.len())
    }
}

/// Σ = R S Sᵀ Rᵀ for a Gaussian.
pub fn shape_matrix(g: &Gaussian) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let s2 = Matrix3::from_diagonal(&g.log_scale.map(|s| (2.0 * s).exp()));
    r * s2 * r.transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneRecord")]
pub struct Scene {
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub gaussians: Vec<Gaussian>,
}

#[derive(Deserialize)]
struct SceneRecord {
    sh_degree: usize,
    background: [f64; 3],
    gaussians: Vec<Gaussian>,
}

impl TryFrom<SceneRecord> for Scene {
    type Error = Error;

    fn try_from(r: SceneRecord) -> Result<Self> {
        let scene = Scene {
            sh_degree: r.sh_degree,
            background: r.background,
            gaussians: r.gaussians,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl Scene {
    pub fn new(sh_degree: usize, background: [f64; 3]) -> Self {
        Scene {
            sh_degree,
            background,
            gaussians: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidInput(format!(
                "sh_degree {} exceeds {MAX_SH_DEGREE}",
                self.sh_degree
            )));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("background outside [0,1]".into()));
        }
        let want = sh_coeff_count(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh_coeffs.len() != want {
                return Err(Error::InvalidInput(format!(
                    "gaussian {i} has {} SH coefficients, degree {} needs {want}",
                    g.sh_coeffs.len(),
                    self.sh_degree
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Total raw parameter count with every group enabled.
    pub fn param_count(&self) -> usize {
        self.gaussians.len() * ParamMask::ALL.per_gaussian(self.sh_degree)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization is infallible")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// The five parameter groups of a Gaussian, in flat-layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    Sh,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::Scale,
        ParamGroup::Opacity,
        ParamGroup::Sh,
    ];

    pub fn len(self, sh_degree: usize) -> usize {
        match self {
            ParamGroup::Position => 3,
            ParamGroup::Rotation => 4,
            ParamGroup::Scale => 3,
            ParamGroup::Opacity => 1,
            ParamGroup::Sh => 3 * sh_coeff_count(sh_degree),
        }
    }
}

/// Which parameter groups take part in a Jacobian / Hessian / update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamMask {
    pub position: bool,
    pub rotation: bool,
    pub scale: bool,
    pub opacity: bool,
    pub sh: bool,
}

impl Default for ParamMask {
    fn default() -> Self {
        ParamMask::ALL
    }
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask {
        position: true,
        rotation: true,
        scale: true,
        opacity: true,
        sh: true,
    };

    pub const NONE: ParamMask = ParamMask {
        position: false,
        rotation: false,
        scale: false,
        opacity: false,
        sh: false,
    };

    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Sh => self.sh,
        }
    }

    pub fn set(&mut self, group: ParamGroup, on: bool) {
        match group {
            ParamGroup::Position => self.position = on,
            ParamGroup::Rotation => self.rotation = on,
            ParamGroup::Scale => self.scale = on,
            ParamGroup::Opacity => self.opacity = on,
            ParamGroup::Sh => self.sh = on,
        }
    }

    pub fn without(mut self, groups: &[ParamGroup]) -> Self {
        for &g in groups {
            self.set(g, false);
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        ParamGroup::ALL.iter().all(|&g| !self.contains(g))
    }

    /// Masked parameter count of one Gaussian.
    pub fn per_gaussian(&self, sh_degree: usize) -> usize {
        ParamGroup::ALL
            .iter()
            .filter(|&&g| self.contains(g))
            .map(|g| g.len(sh_degree))
            .sum()
    }

    /// Offset of `group` inside one Gaussian's masked slice, if present.
    pub fn offset(&self, group: ParamGroup, sh_degree: usize) -> Option<usize> {
        if !self.contains(group) {
            return None;
        }
        Some(
            ParamGroup::ALL
                .iter()
                .take_while(|&&g| g != group)
                .filter(|&&g| self.contains(g))
                .map(|g| g.len(sh_degree))
                .sum(),
        )
    }
}

/// Flat index layout for a scene under a mask.
///
/// Gaussians are laid out in sequence order; within a Gaussian the enabled
/// groups follow [`ParamGroup::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub mask: ParamMask,
    pub sh_degree: usize,
    pub n_gaussians: usize,
    pub per_gaussian: usize,
    offsets: [Option<usize>; 5],
}

impl ParamLayout {
    pub fn new(mask: ParamMask, sh_degree: usize, n_gaussians: usize) -> Self {
        let offsets = ParamGroup::ALL.map(|g| mask.offset(g, sh_degree));
        ParamLayout {
            mask,
            sh_degree,
            n_gaussians,
            per_gaussian: mask.per_gaussian(sh_degree),
            offsets,
        }
    }

    pub fn for_scene(scene: &Scene, mask: ParamMask) -> Self {
        Self::new(mask, scene.sh_degree, scene.len())
    }

    pub fn len(&self) -> usize {
        self.per_gaussian * self.n_gaussians
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group_offset(&self, group: ParamGroup) -> Option<usize> {
        self.offsets[group as usize]
    }

    /// Flat index of `(gaussian, group, component)`.
    pub fn index(&self, gaussian: usize, group: ParamGroup, component: usize) -> Option<usize> {
        let off = self.group_offset(group)?;
        if gaussian >= self.n_gaussians || component >= group.len(self.sh_degree) {
            return None;
        }
        Some(gaussian * self.per_gaussian + off + component)
    }

    /// Inverse of [`ParamLayout::index`].
    pub fn locate(&self, flat: usize) -> Option<(usize, ParamGroup, usize)> {
        if flat >= self.len() {
            return None;
        }
        let gaussian = flat / self.per_gaussian;
        let local = flat % self.per_gaussian;
        ParamGroup::ALL.iter().find_map(|&g| {
            let off = self.group_offset(g)?;
            (local >= off && local < off + g.len(self.sh_degree)).then_some((gaussian, g, local - off))
        })
    }
}

fn group_values(g: &Gaussian, group: ParamGroup) -> Vec<f64> {
    match group {
        ParamGroup::Position => g.position.iter().copied().collect(),
        ParamGroup::Rotation => g.rotation.to_vec(),
        ParamGroup::Scale => g.log_scale.iter().copied().collect(),
        ParamGroup::Opacity => vec![g.opacity_logit],
        ParamGroup::Sh => g.sh_coeffs.iter().flatten().copied().collect(),
    }
}

/// Flattens the masked parameters of `scene`.
pub fn flatten_params(scene: &Scene, mask: ParamMask) -> (Vec<f64>, ParamLayout) {
    let layout = ParamLayout::for_scene(scene, mask);
    let mut out = Vec::with_capacity(layout.len());
    for g in &scene.gaussians {
        for group in ParamGroup::ALL {
            if mask.contains(group) {
                out.extend(group_values(g, group));
            }
        }
    }
    (out, layout)
}

/// Writes `values` back into a copy of `template`; masked-out groups keep the
/// template's values. Quaternions are renormalized on write.
pub fn unflatten_params(template: &Scene, layout: &ParamLayout, values: &[f64]) -> Result<Scene> {
    if layout.n_gaussians != template.len() || layout.sh_degree != template.sh_degree {
        return Err(Error::dims(
            format!("{} gaussians, degree {}", template.len(), template.sh_degree),
            format!("{} gaussians, degree {}", layout.n_gaussians, layout.sh_degree),
        ));
    }
    if values.len() != layout.len() {
        return Err(Error::dims(layout.len(), values.len()));
    }
    let mut scene = template.clone();
    for (gi, g) in scene.gaussians.iter_mut().enumerate() {
        let base = gi * layout.per_gaussian;
        for group in ParamGroup::ALL {
            let Some(off) = layout.group_offset(group) else {
                continue;
            };
            let v = &values[base + off..base + off + group.len(layout.sh_degree)];
            match group {
                ParamGroup::Position => g.position = Vector3::new(v[0], v[1], v[2]),
                ParamGroup::Rotation => g.set_rotation([v[0], v[1], v[2], v[3]])?,
                ParamGroup::Scale => g.log_scale = Vector3::new(v[0], v[1], v[2]),
                ParamGroup::Opacity => g.opacity_logit = v[0],
                ParamGroup::Sh => {
                    for (k, c) in g.sh_coeffs.iter_mut().enumerate() {
                        *c = [v[3 * k], v[3 * k + 1], v[3 * k + 2]];
                    }
                }
            }
        }
    }
    Ok(scene)
}

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera frame convention: +x right, +y down, +z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraView {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    id: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// Row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<CameraRecord> for CameraView {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let m = r.rotation;
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        CameraView::new(
            r.id,
            [r.fx, r.fy, r.cx, r.cy],
            (r.width, r.height),
            rotation,
            Vector3::from(r.translation),
        )
    }
}

impl From<CameraView> for CameraRecord {
    fn from(c: CameraView) -> Self {
        let r = &c.rotation;
        CameraRecord {
            id: c.id,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: c.translation.into(),
        }
    }
}

impl CameraView {
    /// `intrinsics` is `[fx, fy, cx, cy]`, `size` is `(width, height)`.
    pub fn new(
        id: impl Into<String>,
        intrinsics: [f64; 4],
        size: (usize, usize),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        let cam = CameraView {
            id: id.into(),
            fx,
            fy,
            cx,
            cy,
            width: size.0,
            height: size.1,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, world +z up.
    pub fn look_at(
        id: impl Into<String>,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        intrinsics: [f64; 4],
        size: (usize, usize),
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("camera eye coincides with target".into()))?;
        let mut right = forward.cross(&Vector3::z());
        if right.norm() < 1e-6 {
            right = forward.cross(&Vector3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        CameraView::new(id, intrinsics, size, rotation, translation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!("camera {}: focal lengths must be positive", self.id)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(format!("camera {}: empty image size", self.id)));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax();
        if !(err <= 1e-9) || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidInput(format!(
                "camera {}: rotation is not orthonormal (error {err:e})",
                self.id
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit viewing direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Row-major RGB image with channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Image {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dims(width * height, pixels.len()));
        }
        let mut img = Image { width, height, pixels };
        img.finalize();
        Ok(img)
    }

    /// Clamps every channel to [0, 1].
    pub fn finalize(&mut self) {
        for p in &mut self.pixels {
            for c in p.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f64 {
        let n = (self.pixels.len() * 3) as f64;
        self.pixels.iter().flatten().sum::<f64>() / n
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let n = (self.pixels.len() * 3) as f64;
        self.pixels.iter().flatten().map(|c| (c - m).powi(2)).sum::<f64>() / n
    }
}
