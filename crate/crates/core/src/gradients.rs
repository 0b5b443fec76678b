//! Analytic derivatives of rendered pixel colors with respect to the raw scene
//! parameters.
//!
//! Per view, each visible Gaussian gets a small forward-mode Jacobian of its
//! splat (2D mean and conic) with respect to position, quaternion and
//! log-scale. Per pixel, compositing is differentiated in reverse (back to
//! front), giving `∂C/∂α′ₙ` per channel, which is then chained through the
//! kernel and the splat Jacobian. Clamped or cut-off contributions have zero
//! local derivative; depth order is treated as locally constant.

use nalgebra::{DMatrix, Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::Result;
use crate::render::{self, Contribution, PreparedView};
use crate::scene::{sh_coeff_count, CameraView, Gaussian, Image, ParamGroup, ParamLayout, ParamMask, Scene};
use crate::sh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Derivatives of one pixel-channel with respect to the masked parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianRow {
    /// `(row, col)`.
    pub pixel: (usize, usize),
    pub channel: Channel,
    /// `(flat index, ∂C/∂θ)`, sorted by index.
    pub entries: Vec<(usize, f64)>,
}

/// All non-empty Jacobian rows of one view, in row-major pixel order and
/// R, G, B order within a pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewJacobian {
    pub view_id: String,
    pub layout: ParamLayout,
    pub width: usize,
    pub height: usize,
    pub rows: Vec<JacobianRow>,
}

impl ViewJacobian {
    pub fn empty(view_id: impl Into<String>, layout: ParamLayout, width: usize, height: usize) -> Self {
        ViewJacobian {
            view_id: view_id.into(),
            layout,
            width,
            height,
            rows: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense `3·W·H × l` matrix; omitted rows are zero.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(3 * self.width * self.height, self.layout.len());
        for r in &self.rows {
            let i = (r.pixel.0 * self.width + r.pixel.1) * 3 + r.channel.index();
            for &(k, v) in &r.entries {
                m[(i, k)] = v;
            }
        }
        m
    }

    /// Multiplies every entry by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            for e in &mut r.entries {
                e.1 *= s;
            }
        }
        out
    }
}

/// Per-view derivatives of one splat.
struct SplatDerivs {
    dmean_dpos: Matrix2x3<f64>,
    /// Rows: conic entries (a, b, c) of `[[a, b], [b, c]]`; columns:
    /// position (3), quaternion (4), log-scale (3).
    dconic: [[f64; 10]; 3],
    /// `dσ(logit)/dlogit`.
    dopacity: f64,
    basis: [f64; 16],
    color_active: [bool; 3],
    dcolor_dpos: [Vector3<f64>; 3],
}

/// `∂R/∂q̂ⱼ` for the unit quaternion `q̂ = [w, x, y, z]`.
fn rotation_partials(q: &[f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = *q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Matrix3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Matrix3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

fn splat_derivs(g: &Gaussian, cam: &CameraView, sh_degree: usize) -> SplatDerivs {
    let w = &cam.rotation;
    let p = cam.to_camera(&g.position);
    let a = render::pinhole_jacobian(cam, &p);
    let r = g.rotation_matrix();
    let d = Matrix3::from_diagonal(&g.log_scale.map(|s| (2.0 * s).exp()));
    let sigma = r * d * r.transpose();
    let m = w * sigma * w.transpose();
    let mut cov = a * m * a.transpose();
    cov[(0, 0)] += render::LOW_PASS;
    cov[(1, 1)] += render::LOW_PASS;
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    let conic = cov.try_inverse().unwrap_or_else(Matrix2::zeros);

    let mut dconic = [[0.0; 10]; 3];
    let mut put = |j: usize, dcov: Matrix2<f64>| {
        let dc = -(conic * dcov * conic);
        dconic[0][j] = dc[(0, 0)];
        dconic[1][j] = 0.5 * (dc[(0, 1)] + dc[(1, 0)]);
        dconic[2][j] = dc[(1, 1)];
    };

    // Position: moves the camera-frame point, which changes A.
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / p.z;
    for k in 0..3 {
        let dp = w.column(k);
        let mut da = Matrix2x3::zeros();
        da[(0, 0)] = -fx * iz * iz * dp.z;
        da[(0, 2)] = -fx * (dp.x * iz * iz - 2.0 * p.x * dp.z * iz * iz * iz);
        da[(1, 1)] = -fy * iz * iz * dp.z;
        da[(1, 2)] = -fy * (dp.y * iz * iz - 2.0 * p.y * dp.z * iz * iz * iz);
        let am = a * m;
        put(k, da * m * a.transpose() + am * da.transpose());
    }

    // Quaternion, through the normalization q̂ = q / |q|.
    let q = g.rotation();
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let qh = q.map(|v| v / qn);
    let partials = rotation_partials(&qh);
    let aw = a * w;
    for k in 0..4 {
        let mut dr = Matrix3::zeros();
        for (j, pj) in partials.iter().enumerate() {
            let delta = if j == k { 1.0 } else { 0.0 };
            dr += pj * ((delta - qh[j] * qh[k]) / qn);
        }
        let rd = dr * d * r.transpose();
        let dsigma = rd + rd.transpose();
        put(3 + k, aw * dsigma * aw.transpose());
    }

    // Log-scale.
    for k in 0..3 {
        let col = r.column(k);
        let dsigma = col * col.transpose() * (2.0 * d[(k, k)]);
        put(7 + k, aw * dsigma * aw.transpose());
    }

    // Color and its dependence on position through the view direction.
    let (dir, dist) = render::view_direction(cam, &g.position);
    let n = sh_coeff_count(sh_degree);
    let mut basis = [0.0; 16];
    let mut grads = [Vector3::zeros(); 16];
    sh::eval_basis(sh_degree, &dir, &mut basis[..n], Some(&mut grads[..n]));
    let tangent = if dist > 0.0 {
        (Matrix3::identity() - dir * dir.transpose()) / dist
    } else {
        Matrix3::zeros()
    };
    let mut color_active = [true; 3];
    let mut dcolor_dpos = [Vector3::zeros(); 3];
    for ch in 0..3 {
        let mut raw = 0.5;
        let mut gdir = Vector3::zeros();
        for k in 0..n {
            raw += g.sh_coeffs[k][ch] * basis[k];
            gdir += grads[k] * g.sh_coeffs[k][ch];
        }
        color_active[ch] = (0.0..=1.0).contains(&raw);
        dcolor_dpos[ch] = tangent * gdir;
    }

    let o = g.opacity();
    SplatDerivs {
        dmean_dpos: a * w,
        dconic,
        dopacity: o * (1.0 - o),
        basis,
        color_active,
        dcolor_dpos,
    }
}

/// Kernel-side derivatives of one contribution.
struct LocalGrad {
    /// `∂α′/∂(position, quaternion, log-scale)`.
    geom: [f64; 10],
    /// `∂α′/∂logit`.
    opacity: f64,
}

fn local_grad(c: &Contribution, view: &PreparedView, derivs: &SplatDerivs, pixel: &Vector2<f64>) -> LocalGrad {
    if c.clamped {
        return LocalGrad {
            geom: [0.0; 10],
            opacity: 0.0,
        };
    }
    let s = &view.splats[c.splat];
    let d = pixel - s.mean2d;
    let a = c.alpha;
    let dmean = (s.conic * d) * a;
    let dconic = [-0.5 * a * d.x * d.x, -a * d.x * d.y, -0.5 * a * d.y * d.y];
    let mut geom = [0.0; 10];
    for (j, gj) in geom.iter_mut().enumerate() {
        let mut v = dconic[0] * derivs.dconic[0][j] + dconic[1] * derivs.dconic[1][j] + dconic[2] * derivs.dconic[2][j];
        if j < 3 {
            v += dmean.x * derivs.dmean_dpos[(0, j)] + dmean.y * derivs.dmean_dpos[(1, j)];
        }
        *gj = v;
    }
    LocalGrad {
        geom,
        opacity: c.falloff * derivs.dopacity,
    }
}

/// `∂C_ch/∂α′ₙ` for every recorded contribution (reverse sweep).
fn alpha_sensitivities(contribs: &[Contribution], view: &PreparedView, t_final: f64, out: &mut Vec<[f64; 3]>) {
    out.clear();
    out.resize(contribs.len(), [0.0; 3]);
    let mut after = view.background.map(|b| b * t_final);
    for (i, c) in contribs.iter().enumerate().rev() {
        let color = view.splats[c.splat].color;
        for ch in 0..3 {
            out[i][ch] = c.transmittance * color[ch] - after[ch] / (1.0 - c.alpha);
            after[ch] += color[ch] * c.alpha * c.transmittance;
        }
    }
}

/// Jacobian of every pixel-channel of the render of `scene` from `cam`.
pub fn view_jacobian(scene: &Scene, cam: &CameraView, mask: ParamMask) -> ViewJacobian {
    let layout = ParamLayout::for_scene(scene, mask);
    let view = PreparedView::new(scene, cam);
    let derivs: Vec<SplatDerivs> = view
        .splats
        .iter()
        .map(|s| splat_derivs(&scene.gaussians[s.gaussian], cam, scene.sh_degree))
        .collect();
    let n_sh = sh_coeff_count(scene.sh_degree);
    let off = |g: ParamGroup| layout.group_offset(g);
    let (o_pos, o_rot, o_scale, o_op, o_sh) = (
        off(ParamGroup::Position),
        off(ParamGroup::Rotation),
        off(ParamGroup::Scale),
        off(ParamGroup::Opacity),
        off(ParamGroup::Sh),
    );

    let per_row: Vec<Vec<JacobianRow>> = (0..cam.height)
        .into_par_iter()
        .map(|row| {
            let mut out = Vec::new();
            let mut contribs = Vec::new();
            let mut sens = Vec::new();
            let mut order: Vec<usize> = Vec::new();
            let mut locals: Vec<LocalGrad> = Vec::new();
            for col in 0..cam.width {
                contribs.clear();
                let res = view.pixel(row, col, Some(&mut contribs));
                if contribs.is_empty() {
                    continue;
                }
                alpha_sensitivities(&contribs, &view, res.transmittance, &mut sens);
                let pixel = render::pixel_center(row, col);
                locals.clear();
                locals.extend(contribs.iter().map(|c| local_grad(c, &view, &derivs[c.splat], &pixel)));
                order.clear();
                order.extend(0..contribs.len());
                order.sort_by_key(|&i| view.splats[contribs[i].splat].gaussian);

                for ch in Channel::ALL {
                    let chi = ch.index();
                    let mut entries = Vec::with_capacity(order.len() * layout.per_gaussian);
                    for &i in &order {
                        let c = &contribs[i];
                        let gi = view.splats[c.splat].gaussian;
                        let dv = &derivs[c.splat];
                        let lg = &locals[i];
                        let s = sens[i][chi];
                        let weight = c.alpha * c.transmittance;
                        let active = dv.color_active[chi];
                        let base = gi * layout.per_gaussian;
                        if let Some(o) = o_pos {
                            for k in 0..3 {
                                let mut v = s * lg.geom[k];
                                if active {
                                    v += weight * dv.dcolor_dpos[chi][k];
                                }
                                entries.push((base + o + k, v));
                            }
                        }
                        if let Some(o) = o_rot {
                            for k in 0..4 {
                                entries.push((base + o + k, s * lg.geom[3 + k]));
                            }
                        }
                        if let Some(o) = o_scale {
                            for k in 0..3 {
                                entries.push((base + o + k, s * lg.geom[7 + k]));
                            }
                        }
                        if let Some(o) = o_op {
                            entries.push((base + o, s * lg.opacity));
                        }
                        if let Some(o) = o_sh {
                            for k in 0..n_sh {
                                let v = if active { weight * dv.basis[k] } else { 0.0 };
                                entries.push((base + o + 3 * k + chi, v));
                            }
                        }
                    }
                    if entries.iter().any(|e| e.1 != 0.0) {
                        out.push(JacobianRow {
                            pixel: (row, col),
                            channel: ch,
                            entries,
                        });
                    }
                }
            }
            out
        })
        .collect();

    ViewJacobian {
        view_id: cam.id.clone(),
        layout,
        width: cam.width,
        height: cam.height,
        rows: per_row.into_iter().flatten().collect(),
    }
}

/// 2D-space accumulators of one splat for the loss-gradient path.
#[derive(Clone, Copy, Default)]
struct SplatAccum {
    dmean: Vector2<f64>,
    dconic: [f64; 3],
    dlogit: f64,
    dcolor: [f64; 3],
}

const ROW_CHUNK: usize = 8;

/// Gradient of a per-pixel loss. `weights(index, color)` returns the loss
/// value at that pixel and `∂loss/∂C` for the three channels, where `color`
/// is the rendered (clamped) color. Returns the summed loss and the gradient
/// over the full (unmasked) layout, with masked-out groups zeroed.
pub fn loss_gradient(
    scene: &Scene,
    cam: &CameraView,
    mask: ParamMask,
    weights: impl Fn(usize, [f64; 3]) -> (f64, [f64; 3]) + Sync,
) -> (f64, Vec<f64>) {
    let full = ParamLayout::for_scene(scene, ParamMask::ALL);
    let view = PreparedView::new(scene, cam);
    let n = view.splats.len();

    let chunks: Vec<(f64, Vec<SplatAccum>)> = (0..cam.height.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = vec![SplatAccum::default(); n];
            let mut loss = 0.0;
            let mut contribs = Vec::new();
            let mut sens = Vec::new();
            let rows = chunk * ROW_CHUNK..((chunk + 1) * ROW_CHUNK).min(cam.height);
            for row in rows {
                for col in 0..cam.width {
                    contribs.clear();
                    let res = view.pixel(row, col, Some(&mut contribs));
                    let color = res.color.map(|c| c.clamp(0.0, 1.0));
                    let (l, w) = weights(row * cam.width + col, color);
                    loss += l;
                    if contribs.is_empty() || w == [0.0; 3] {
                        continue;
                    }
                    alpha_sensitivities(&contribs, &view, res.transmittance, &mut sens);
                    let pixel = render::pixel_center(row, col);
                    for (i, c) in contribs.iter().enumerate() {
                        let a = &mut acc[c.splat];
                        let weight = c.alpha * c.transmittance;
                        for ch in 0..3 {
                            a.dcolor[ch] += w[ch] * weight;
                        }
                        if c.clamped {
                            continue;
                        }
                        let s = w[0] * sens[i][0] + w[1] * sens[i][1] + w[2] * sens[i][2];
                        let sp = &view.splats[c.splat];
                        let d = pixel - sp.mean2d;
                        let al = c.alpha;
                        a.dmean += (sp.conic * d) * (al * s);
                        a.dconic[0] += -0.5 * al * d.x * d.x * s;
                        a.dconic[1] += -al * d.x * d.y * s;
                        a.dconic[2] += -0.5 * al * d.y * d.y * s;
                        a.dlogit += c.falloff * s;
                    }
                }
            }
            (loss, acc)
        })
        .collect();

    let mut loss = 0.0;
    let mut acc = vec![SplatAccum::default(); n];
    for (l, part) in chunks {
        loss += l;
        for (a, p) in acc.iter_mut().zip(part) {
            a.dmean += p.dmean;
            for k in 0..3 {
                a.dconic[k] += p.dconic[k];
                a.dcolor[k] += p.dcolor[k];
            }
            a.dlogit += p.dlogit;
        }
    }

    let mut grad = vec![0.0; full.len()];
    let n_sh = sh_coeff_count(scene.sh_degree);
    for (si, a) in acc.iter().enumerate() {
        let gi = view.splats[si].gaussian;
        let dv = splat_derivs(&scene.gaussians[gi], cam, scene.sh_degree);
        let base = gi * full.per_gaussian;
        let mut geom = [0.0; 10];
        for (j, gj) in geom.iter_mut().enumerate() {
            let mut v = a.dconic[0] * dv.dconic[0][j] + a.dconic[1] * dv.dconic[1][j] + a.dconic[2] * dv.dconic[2][j];
            if j < 3 {
                v += a.dmean.x * dv.dmean_dpos[(0, j)] + a.dmean.y * dv.dmean_dpos[(1, j)];
            }
            *gj = v;
        }
        for ch in 0..3 {
            if dv.color_active[ch] {
                for k in 0..3 {
                    geom[k] += a.dcolor[ch] * dv.dcolor_dpos[ch][k];
                }
            }
        }
        grad[base..base + 10].copy_from_slice(&geom);
        grad[base + 10] = a.dlogit * dv.dopacity;
        for k in 0..n_sh {
            for ch in 0..3 {
                if dv.color_active[ch] {
                    grad[base + 11 + 3 * k + ch] = a.dcolor[ch] * dv.basis[k];
                }
            }
        }
    }
    zero_masked(&mut grad, &full, mask);
    (loss, grad)
}

fn zero_masked(grad: &mut [f64], full: &ParamLayout, mask: ParamMask) {
    for g in 0..full.n_gaussians {
        for group in ParamGroup::ALL {
            if mask.contains(group) {
                continue;
            }
            let off = full.group_offset(group).expect("full layout has every group");
            let start = g * full.per_gaussian + off;
            grad[start..start + group.len(full.sh_degree)].fill(0.0);
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error between the render and `target` together with its
/// gradient over the full parameter layout (masked groups zeroed).
pub fn l1_loss_and_gradient(scene: &Scene, cam: &CameraView, target: &Image, mask: ParamMask) -> Result<(f64, Vec<f64>)> {
    if target.width != cam.width || target.height != cam.height {
        return Err(crate::Error::dims(
            format!("{}x{}", cam.width, cam.height),
            format!("{}x{}", target.width, target.height),
        ));
    }
    let norm = 1.0 / (3 * cam.pixel_count()) as f64;
    let (loss, grad) = loss_gradient(scene, cam, mask, |i, c| {
        let t = target.pixels[i];
        let mut l = 0.0;
        let mut w = [0.0; 3];
        for ch in 0..3 {
            let e = c[ch] - t[ch];
            l += e.abs() * norm;
            w[ch] = sign(e) * norm;
        }
        (l, w)
    });
    Ok((loss, grad))
}

/// Gradient of the mean absolute error; see [`l1_loss_and_gradient`].
pub fn l1_gradient(scene: &Scene, cam: &CameraView, target: &Image, mask: ParamMask) -> Result<Vec<f64>> {
    l1_loss_and_gradient(scene, cam, target, mask).map(|(_, g)| g)
}

/// Mean absolute error over all pixels and channels.
pub fn l1_loss(rendered: &Image, target: &Image) -> Result<f64> {
    rendered.same_size(target)?;
    let n = (3 * rendered.pixels.len()) as f64;
    Ok(rendered
        .pixels
        .iter()
        .zip(&target.pixels)
        .flat_map(|(a, b)| (0..3).map(move |ch| (a[ch] - b[ch]).abs()))
        .sum::<f64>()
        / n)
}
