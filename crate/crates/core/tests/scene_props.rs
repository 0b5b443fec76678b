mod common;

use common::{random_scene, rng};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::Rng;
use splat_oed_core::scene::shape_matrix;
use splat_oed_core::{flatten_params, unflatten_params, Gaussian, ParamGroup, ParamLayout, ParamMask, Scene};

fn mask_from_bits(bits: u8) -> ParamMask {
    let mut m = ParamMask::ALL;
    for (i, g) in ParamGroup::ALL.iter().enumerate() {
        m.set(*g, bits & (1 << i) != 0);
    }
    m
}

/// `R S Sᵀ Rᵀ` with the rotation written out from the quaternion and every
/// product done by explicit loops.
fn naive_shape(g: &Gaussian) -> [[f64; 3]; 3] {
    let [w, x, y, z] = g.rotation();
    let r = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let s2: Vec<f64> = g.log_scale.iter().map(|v| (2.0 * v).exp()).collect();
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += r[i][k] * s2[k] * r[j][k];
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(128) })]

    #[test]
    fn flatten_unflatten_is_bijective(seed in 0u64..1_000_000, n in 0usize..6, degree in 0usize..4, bits in 1u8..32) {
        let scene = random_scene(seed, n, degree);
        let mask = mask_from_bits(bits);
        let (x, layout) = flatten_params(&scene, mask);
        prop_assert_eq!(x.len(), n * mask.per_gaussian(degree));
        let back = unflatten_params(&scene, &layout, &x).unwrap();
        prop_assert_eq!(&back, &scene);
        // The index map is invertible.
        for k in 0..layout.len() {
            let (g, group, c) = layout.locate(k).unwrap();
            prop_assert!(mask.contains(group));
            prop_assert_eq!(layout.index(g, group, c), Some(k));
        }
        // Writing new values into another scene and flattening again returns them.
        let other = random_scene(seed + 1, n, degree);
        let moved = unflatten_params(&other, &layout, &x).unwrap();
        prop_assert_eq!(flatten_params(&moved, mask).0, x);
    }

    #[test]
    fn shape_matrix_spectrum_is_squared_scales(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let mut g = random_scene(seed, 1, 0).gaussians.remove(0);
        g.log_scale = nalgebra::Vector3::from_fn(|_, _| r.gen_range(-3.0..1.0));
        let m = shape_matrix(&g);
        prop_assert!((m - m.transpose()).norm() == 0.0 || (m - m.transpose()).amax() <= 1e-15 * m.amax());
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        let mut expected: Vec<f64> = g.log_scale.iter().map(|v| (2.0 * v).exp()).collect();
        ev.sort_by(f64::total_cmp);
        expected.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-9 * expected[2], "{:?} vs {:?}", ev, expected);
        }
        let naive = naive_shape(&g);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((m[(i, j)] - naive[i][j]).abs() <= 1e-12 * expected[2].max(1.0));
            }
        }
    }

    #[test]
    fn scene_json_roundtrip_is_exact(seed in 0u64..1_000_000, n in 0usize..5, degree in 0usize..4) {
        let scene = random_scene(seed, n, degree);
        let back = Scene::from_json(&scene.to_json()).unwrap();
        prop_assert_eq!(back, scene);
    }

    #[test]
    fn rotation_stays_unit_after_writes(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let mut g = Gaussian::new(nalgebra::Vector3::zeros(), 1.0, 0.5, [0.5; 3], 0);
        for _ in 0..10 {
            let q = [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)];
            g.set_rotation(q).unwrap();
            let n: f64 = g.rotation().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn layout_lengths() {
    let one = random_scene(0, 1, 0);
    assert_eq!(flatten_params(&one, ParamMask::ALL).0.len(), 14);
    let two = random_scene(0, 2, 0);
    assert_eq!(flatten_params(&two, ParamMask::ALL.without(&[ParamGroup::Sh])).0.len(), 22);
    for d in 0..4 {
        assert_eq!(ParamLayout::new(ParamMask::ALL, d, 3).len(), 3 * (11 + 3 * (d + 1) * (d + 1)));
    }
}
