//! Forward rendering: EWA projection of each Gaussian into a 2D splat,
//! Gaussian kernel evaluation and front-to-back alpha compositing.
//!
//! Splats are sorted once per view by `(depth, gaussian index)`. For speed the
//! image is split into 16×16 bins holding the depth-ordered splats whose
//! non-negligible footprint touches the bin; the bin lists are a pure culling
//! aid and never change a pixel's value.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::scene::{CameraView, Gaussian, Image, Scene};
use crate::sh;

pub const NEAR_PLANE: f64 = 0.01;
/// Added to both diagonal entries of the projected covariance (px²).
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

const BIN: usize = 16;

/// A Gaussian projected into one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian in the scene.
    pub gaussian: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub base_opacity: f64,
    pub color: [f64; 3],
}

/// Pixel-center coordinates of `(row, col)`.
pub fn pixel_center(row: usize, col: usize) -> Vector2<f64> {
    Vector2::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// Affine Jacobian of the pinhole map at camera-frame point `p`.
pub(crate) fn pinhole_jacobian(cam: &CameraView, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

/// View-dependent color before clamping, one value per channel.
pub(crate) fn raw_color(g: &Gaussian, degree: usize, dir: &Vector3<f64>, basis: &mut [f64; 16]) -> [f64; 3] {
    let n = crate::scene::sh_coeff_count(degree);
    sh::eval_basis(degree, dir, &mut basis[..n], None);
    let mut c = [0.5; 3];
    for (k, coeff) in g.sh_coeffs.iter().enumerate().take(n) {
        for ch in 0..3 {
            c[ch] += coeff[ch] * basis[k];
        }
    }
    c
}

/// Unit direction from the camera center to `position`.
pub(crate) fn view_direction(cam: &CameraView, position: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let d = position - cam.center();
    let n = d.norm();
    if n > 0.0 {
        (d / n, n)
    } else {
        (Vector3::z(), 0.0)
    }
}

/// Projects one Gaussian; `None` when it is culled (behind the near plane or
/// with its 3σ ellipse entirely outside the image).
pub fn project(g: &Gaussian, index: usize, cam: &CameraView, sh_degree: usize) -> Option<Splat2D> {
    let p = cam.to_camera(&g.position);
    if p.z <= NEAR_PLANE {
        return None;
    }
    let a = pinhole_jacobian(cam, &p);
    let m = cam.rotation * crate::scene::shape_matrix(g) * cam.rotation.transpose();
    let mut cov2d = a * m * a.transpose();
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    // Keep it exactly symmetric.
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;

    let mean2d = Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);
    let hx = 3.0 * cov2d[(0, 0)].sqrt();
    let hy = 3.0 * cov2d[(1, 1)].sqrt();
    if mean2d.x + hx < 0.0
        || mean2d.x - hx > cam.width as f64
        || mean2d.y + hy < 0.0
        || mean2d.y - hy > cam.height as f64
    {
        return None;
    }
    let conic = cov2d.try_inverse()?;

    let (dir, _) = view_direction(cam, &g.position);
    let mut basis = [0.0; 16];
    let color = raw_color(g, sh_degree, &dir, &mut basis).map(|c| c.clamp(0.0, 1.0));

    Some(Splat2D {
        gaussian: index,
        mean2d,
        cov2d,
        conic,
        depth: p.z,
        base_opacity: g.opacity(),
        color,
    })
}

/// The unclamped kernel value `exp(-½ dᵀ Σ'⁻¹ d)` at `pixel`.
fn kernel_falloff(s: &Splat2D, pixel: &Vector2<f64>) -> f64 {
    let d = pixel - s.mean2d;
    let q = s.conic[(0, 0)] * d.x * d.x + 2.0 * s.conic[(0, 1)] * d.x * d.y + s.conic[(1, 1)] * d.y * d.y;
    (-0.5 * q).exp()
}

/// Contribution α′ of a splat at `pixel`, clamped to [`ALPHA_MAX`] and zeroed
/// below [`ALPHA_MIN`].
pub fn kernel_alpha(s: &Splat2D, pixel: &Vector2<f64>) -> f64 {
    let a = (s.base_opacity * kernel_falloff(s, pixel)).min(ALPHA_MAX);
    if a < ALPHA_MIN {
        0.0
    } else {
        a
    }
}

/// One splat's share in a pixel, in compositing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Contribution {
    /// Position in the depth-sorted splat list.
    pub splat: usize,
    pub alpha: f64,
    /// Kernel falloff `exp(-½ q)`.
    pub falloff: f64,
    /// Whether `alpha` was clamped at [`ALPHA_MAX`].
    pub clamped: bool,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelResult {
    pub color: [f64; 3],
    pub transmittance: f64,
    pub terminated: bool,
}

fn composite_iter<'a>(
    splats: impl Iterator<Item = (usize, &'a Splat2D)>,
    pixel: &Vector2<f64>,
    background: [f64; 3],
    mut record: Option<&mut Vec<Contribution>>,
) -> PixelResult {
    let mut c = [0.0; 3];
    let mut t = 1.0;
    let mut terminated = false;
    for (idx, s) in splats {
        let falloff = kernel_falloff(s, pixel);
        let raw = s.base_opacity * falloff;
        let clamped = raw > ALPHA_MAX;
        let alpha = if clamped { ALPHA_MAX } else { raw };
        if alpha < ALPHA_MIN {
            continue;
        }
        for ch in 0..3 {
            c[ch] += s.color[ch] * alpha * t;
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                splat: idx,
                alpha,
                falloff,
                clamped,
                transmittance: t,
            });
        }
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_MIN {
            terminated = true;
            break;
        }
    }
    for ch in 0..3 {
        c[ch] += background[ch] * t;
    }
    PixelResult {
        color: c,
        transmittance: t,
        terminated,
    }
}

/// Front-to-back compositing of depth-sorted splats at `pixel`.
pub fn composite(splats: &[Splat2D], pixel: &Vector2<f64>, background: [f64; 3]) -> [f64; 3] {
    composite_iter(splats.iter().enumerate(), pixel, background, None).color
}

/// Like [`composite`] but also returns the final transmittance.
pub fn composite_with_transmittance(splats: &[Splat2D], pixel: &Vector2<f64>, background: [f64; 3]) -> ([f64; 3], f64) {
    let r = composite_iter(splats.iter().enumerate(), pixel, background, None);
    (r.color, r.transmittance)
}

/// Projected, sorted and binned splats of one scene in one view.
pub(crate) struct PreparedView {
    pub background: [f64; 3],
    pub splats: Vec<Splat2D>,
    bins_x: usize,
    bins: Vec<Vec<usize>>,
}

impl PreparedView {
    pub fn new(scene: &Scene, cam: &CameraView) -> Self {
        let mut splats: Vec<Splat2D> = scene
            .gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project(g, i, cam, scene.sh_degree))
            .collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.gaussian.cmp(&b.gaussian)));

        let bins_x = cam.width.div_ceil(BIN);
        let bins_y = cam.height.div_ceil(BIN);
        let mut bins = vec![Vec::new(); bins_x * bins_y];
        for (idx, s) in splats.iter().enumerate() {
            let level = 255.0 * s.base_opacity;
            if level <= 1.0 {
                continue;
            }
            // Exact axis-aligned extent of the α′ ≥ 1/255 region, plus slack.
            let k = 2.0 * level.ln();
            let hx = (k * s.cov2d[(0, 0)]).sqrt() + 1.0;
            let hy = (k * s.cov2d[(1, 1)]).sqrt() + 1.0;
            let Some((c0, c1)) = span(s.mean2d.x - hx, s.mean2d.x + hx, cam.width) else {
                continue;
            };
            let Some((r0, r1)) = span(s.mean2d.y - hy, s.mean2d.y + hy, cam.height) else {
                continue;
            };
            for by in r0 / BIN..=r1 / BIN {
                for bx in c0 / BIN..=c1 / BIN {
                    bins[by * bins_x + bx].push(idx);
                }
            }
        }
        PreparedView {
            background: scene.background,
            splats,
            bins_x,
            bins,
        }
    }

    pub fn pixel(&self, row: usize, col: usize, record: Option<&mut Vec<Contribution>>) -> PixelResult {
        let bin = &self.bins[(row / BIN) * self.bins_x + col / BIN];
        composite_iter(
            bin.iter().map(|&i| (i, &self.splats[i])),
            &pixel_center(row, col),
            self.background,
            record,
        )
    }
}

/// Pixel index range `[lo, hi]` whose centers fall in `[a, b]`.
fn span(a: f64, b: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (a - 0.5).ceil().max(0.0);
    let hi = (b - 0.5).floor().min(n as f64 - 1.0);
    (lo <= hi).then(|| (lo as usize, hi as usize))
}

/// Renders `scene` from `cam`.
pub fn render(scene: &Scene, cam: &CameraView) -> Image {
    let view = PreparedView::new(scene, cam);
    let mut pixels = vec![[0.0; 3]; cam.pixel_count()];
    pixels.par_chunks_mut(cam.width).enumerate().for_each(|(row, out)| {
        for (col, px) in out.iter_mut().enumerate() {
            *px = view.pixel(row, col, None).color;
        }
    });
    let mut img = Image {
        width: cam.width,
        height: cam.height,
        pixels,
    };
    img.finalize();
    img
}

/// Which splats touch each pixel and in what state. Two renders with equal
/// traces lie on the same smooth branch of the renderer (no cutoff, clamp,
/// early-stop or ordering event separates them).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderTrace {
    /// Visible Gaussians in compositing order.
    pub order: Vec<usize>,
    /// Per visible Gaussian (same order), whether each color channel clamps.
    pub color_clamped: Vec<[bool; 3]>,
    /// Per pixel: `(gaussian, alpha clamped)` in compositing order.
    pub pixels: Vec<Vec<(usize, bool)>>,
    pub terminated: Vec<bool>,
}

pub fn render_trace(scene: &Scene, cam: &CameraView) -> RenderTrace {
    let view = PreparedView::new(scene, cam);
    let mut basis = [0.0; 16];
    let color_clamped = view
        .splats
        .iter()
        .map(|s| {
            let g = &scene.gaussians[s.gaussian];
            let (dir, _) = view_direction(cam, &g.position);
            raw_color(g, scene.sh_degree, &dir, &mut basis).map(|c| !(0.0..=1.0).contains(&c))
        })
        .collect();
    let mut pixels = Vec::with_capacity(cam.pixel_count());
    let mut terminated = Vec::with_capacity(cam.pixel_count());
    let mut rec = Vec::new();
    for row in 0..cam.height {
        for col in 0..cam.width {
            rec.clear();
            let r = view.pixel(row, col, Some(&mut rec));
            pixels.push(rec.iter().map(|c| (view.splats[c.splat].gaussian, c.clamped)).collect());
            terminated.push(r.terminated);
        }
    }
    RenderTrace {
        order: view.splats.iter().map(|s| s.gaussian).collect(),
        color_clamped,
        pixels,
        terminated,
    }
}

/// Camera-frame covariance `W Σ Wᵀ`, exposed for tests and diagnostics.
pub fn camera_covariance(g: &Gaussian, cam: &CameraView) -> Matrix3<f64> {
    cam.rotation * crate::scene::shape_matrix(g) * cam.rotation.transpose()
}
