#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splat_oed_core::render::{render, render_trace, RenderTrace};
use splat_oed_core::{flatten_params, unflatten_params, view_jacobian, CameraView, Gaussian, ParamMask, Scene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussians inside a ball of radius 0.6 around the origin.
pub fn random_scene(seed: u64, n: usize, sh_degree: usize) -> Scene {
    let mut r = rng(seed);
    let mut scene = Scene::new(sh_degree, [r.gen_range(0.0..0.3), r.gen_range(0.0..0.3), r.gen_range(0.0..0.3)]);
    for _ in 0..n {
        let p = Vector3::new(r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6));
        let color = [r.gen_range(0.15..0.85), r.gen_range(0.15..0.85), r.gen_range(0.15..0.85)];
        let mut g = Gaussian::new(p, 0.2, r.gen_range(0.3..0.9), color, sh_degree);
        g.log_scale = Vector3::from_fn(|_, _| r.gen_range(0.1f64..0.35).ln());
        let q = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        g.set_rotation(q).unwrap();
        for c in g.sh_coeffs.iter_mut().skip(1) {
            *c = [r.gen_range(-0.15..0.15), r.gen_range(-0.15..0.15), r.gen_range(-0.15..0.15)];
        }
        scene.gaussians.push(g);
    }
    scene
}

/// Camera on a sphere of radius 3 looking at the origin.
pub fn random_camera(seed: u64, id: &str, width: usize, height: usize) -> CameraView {
    let mut r = rng(seed ^ 0x5eed);
    let az = r.gen_range(0.0..std::f64::consts::TAU);
    let el: f64 = r.gen_range(-1.2..1.2);
    let eye = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * 3.0;
    let f = 1.1 * width as f64;
    CameraView::look_at(id, eye, Vector3::zeros(), [f, f, 0.5 * width as f64, 0.5 * height as f64], (width, height)).unwrap()
}

fn clamp_map(t: &RenderTrace) -> BTreeMap<usize, [bool; 3]> {
    t.order.iter().copied().zip(t.color_clamped.iter().copied()).collect()
}

/// Whether pixel `p` has the same discrete state (contributors, α clamps,
/// termination, color clamps) in both traces.
fn same_state(a: &RenderTrace, b: &RenderTrace, ca: &BTreeMap<usize, [bool; 3]>, cb: &BTreeMap<usize, [bool; 3]>, p: usize) -> bool {
    a.pixels[p] == b.pixels[p]
        && a.terminated[p] == b.terminated[p]
        && a.pixels[p].iter().all(|(g, _)| ca.get(g) == cb.get(g))
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub excluded: usize,
    pub nonzero: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    pub worst_excess: f64,
}

/// Central finite differences of every pixel-channel with respect to every
/// masked parameter, compared with the analytic Jacobian. Entries whose
/// pixel changes discrete state within ±h are skipped.
pub fn fd_check(scene: &Scene, cam: &CameraView, mask: ParamMask, h: f64, abs_tol: f64, rel_tol: f64) -> FdReport {
    let vj = view_jacobian(scene, cam, mask);
    let analytic: DMatrix<f64> = vj.to_dense();
    let (theta, layout) = flatten_params(scene, mask);
    let t0 = render_trace(scene, cam);
    let c0 = clamp_map(&t0);
    let mut rep = FdReport::default();
    for k in 0..layout.len() {
        let mut plus = theta.clone();
        plus[k] += h;
        let mut minus = theta.clone();
        minus[k] -= h;
        let sp = unflatten_params(scene, &layout, &plus).unwrap();
        let sm = unflatten_params(scene, &layout, &minus).unwrap();
        let (ip, im) = (render(&sp, cam), render(&sm, cam));
        let (tp, tm) = (render_trace(&sp, cam), render_trace(&sm, cam));
        let (cp, cm) = (clamp_map(&tp), clamp_map(&tm));
        for p in 0..cam.pixel_count() {
            let stable = same_state(&t0, &tp, &c0, &cp, p) && same_state(&t0, &tm, &c0, &cm, p);
            for ch in 0..3 {
                let row = p * 3 + ch;
                let fd = (ip.pixels[p][ch] - im.pixels[p][ch]) / (2.0 * h);
                let a = analytic[(row, k)];
                if !stable {
                    rep.excluded += 1;
                    continue;
                }
                rep.checked += 1;
                if a != 0.0 {
                    rep.nonzero += 1;
                }
                let tol = abs_tol.max(rel_tol * fd.abs());
                let err = (a - fd).abs();
                rep.worst_excess = rep.worst_excess.max(err / tol);
                if err > tol {
                    rep.failed += 1;
                }
                if err > tol && rep.failures.len() < 20 {
                    rep.failures.push(format!("param {k} {:?} pixel {p} ch {ch}: analytic {a:e} fd {fd:e}", layout.locate(k)));
                }
            }
        }
    }
    rep
}
