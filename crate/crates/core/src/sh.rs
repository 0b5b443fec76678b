//! Real spherical-harmonics basis up to degree 3, with gradients with respect
//! to the (unit) view direction. Band constants follow the usual 3D-GS layout.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Evaluates the basis at `dir` (assumed unit) into `values`, and, when
/// `grads` is given, the Cartesian gradient of each basis function.
///
/// The gradient is of the polynomial in (x, y, z); callers project it onto
/// the tangent plane of the unit sphere.
pub fn eval_basis(degree: usize, dir: &Vector3<f64>, values: &mut [f64], mut grads: Option<&mut [Vector3<f64>]>) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut put = |k: usize, v: f64, g: [f64; 3]| {
        values[k] = v;
        if let Some(gr) = grads.as_deref_mut() {
            gr[k] = Vector3::from(g);
        }
    };
    put(0, SH_C0, [0.0; 3]);
    if degree < 1 {
        return;
    }
    put(1, -SH_C1 * y, [0.0, -SH_C1, 0.0]);
    put(2, SH_C1 * z, [0.0, 0.0, SH_C1]);
    put(3, -SH_C1 * x, [-SH_C1, 0.0, 0.0]);
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let c = SH_C2;
    put(4, c[0] * x * y, [c[0] * y, c[0] * x, 0.0]);
    put(5, c[1] * y * z, [0.0, c[1] * z, c[1] * y]);
    put(6, c[2] * (2.0 * zz - xx - yy), [-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z]);
    put(7, c[3] * x * z, [c[3] * z, 0.0, c[3] * x]);
    put(8, c[4] * (xx - yy), [2.0 * c[4] * x, -2.0 * c[4] * y, 0.0]);
    if degree < 3 {
        return;
    }
    let c = SH_C3;
    put(
        9,
        c[0] * y * (3.0 * xx - yy),
        [6.0 * c[0] * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0],
    );
    put(10, c[1] * x * y * z, [c[1] * y * z, c[1] * x * z, c[1] * x * y]);
    put(
        11,
        c[2] * y * (4.0 * zz - xx - yy),
        [-2.0 * c[2] * x * y, c[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * c[2] * y * z],
    );
    put(
        12,
        c[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        [-6.0 * c[3] * x * z, -6.0 * c[3] * y * z, c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)],
    );
    put(
        13,
        c[4] * x * (4.0 * zz - xx - yy),
        [c[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * c[4] * x * y, 8.0 * c[4] * x * z],
    );
    put(14, c[5] * z * (xx - yy), [2.0 * c[5] * x * z, -2.0 * c[5] * y * z, c[5] * (xx - yy)]);
    put(
        15,
        c[6] * x * (xx - 3.0 * yy),
        [c[6] * (3.0 * xx - 3.0 * yy), -6.0 * c[6] * x * y, 0.0],
    );
}
