//! Real spherical-harmonics color evaluation (degrees 0 through 3).

use nalgebra::Vector3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the raw SH sum so zero coefficients give mid-gray.
pub const SH_COLOR_OFFSET: f64 = 0.5;

pub fn sh_coeff_count(degree: u8) -> usize {
    (degree as usize + 1).pow(2)
}

/// DC coefficient that produces `color` for a degree-0 primitive.
pub fn rgb_to_dc(color: f64) -> f64 {
    (color - SH_COLOR_OFFSET) / C0
}

/// Basis values at unit direction `d`, in coefficient order.
pub fn sh_basis(degree: u8, d: &Vector3<f64>) -> Vec<f64> {
    let mut b = Vec::with_capacity(sh_coeff_count(degree));
    sh_basis_with_grad(degree, d, &mut b, None);
    b
}

/// Basis values and, optionally, their gradients with respect to `d`.
pub fn sh_basis_with_grad(
    degree: u8,
    d: &Vector3<f64>,
    out: &mut Vec<f64>,
    mut grad: Option<&mut Vec<Vector3<f64>>>,
) {
    let (x, y, z) = (d.x, d.y, d.z);
    out.clear();
    let mut push = |v: f64, g: [f64; 3], grad: &mut Option<&mut Vec<Vector3<f64>>>| {
        out.push(v);
        if let Some(gv) = grad.as_deref_mut() {
            gv.push(Vector3::new(g[0], g[1], g[2]));
        }
    };
    if let Some(g) = grad.as_deref_mut() {
        g.clear();
    }
    push(C0, [0.0; 3], &mut grad);
    if degree == 0 {
        return;
    }
    push(-C1 * y, [0.0, -C1, 0.0], &mut grad);
    push(C1 * z, [0.0, 0.0, C1], &mut grad);
    push(-C1 * x, [-C1, 0.0, 0.0], &mut grad);
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    push(C2[0] * x * y, [C2[0] * y, C2[0] * x, 0.0], &mut grad);
    push(C2[1] * y * z, [0.0, C2[1] * z, C2[1] * y], &mut grad);
    push(
        C2[2] * (2.0 * zz - xx - yy),
        [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z],
        &mut grad,
    );
    push(C2[3] * x * z, [C2[3] * z, 0.0, C2[3] * x], &mut grad);
    push(
        C2[4] * (xx - yy),
        [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0],
        &mut grad,
    );
    if degree == 2 {
        return;
    }
    push(
        C3[0] * y * (3.0 * xx - yy),
        [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0],
        &mut grad,
    );
    push(
        C3[1] * x * y * z,
        [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y],
        &mut grad,
    );
    push(
        C3[2] * y * (4.0 * zz - xx - yy),
        [
            -2.0 * C3[2] * x * y,
            C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * C3[2] * y * z,
        ],
        &mut grad,
    );
    push(
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        [
            -6.0 * C3[3] * x * z,
            -6.0 * C3[3] * y * z,
            C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ],
        &mut grad,
    );
    push(
        C3[4] * x * (4.0 * zz - xx - yy),
        [
            C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * C3[4] * x * y,
            8.0 * C3[4] * x * z,
        ],
        &mut grad,
    );
    push(
        C3[5] * z * (xx - yy),
        [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)],
        &mut grad,
    );
    push(
        C3[6] * x * (xx - 3.0 * yy),
        [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0],
        &mut grad,
    );
}

/// Evaluated color before clamping; add [`SH_COLOR_OFFSET`] and clamp for display.
pub fn sh_raw_color(coeffs: &[[f64; 3]], basis: &[f64]) -> [f64; 3] {
    let mut c = [SH_COLOR_OFFSET; 3];
    for (k, b) in basis.iter().enumerate() {
        for ch in 0..3 {
            c[ch] += coeffs[k][ch] * b;
        }
    }
    c
}

/// RGB in `[0, 1]` seen from unit direction `view_dir`.
pub fn eval_sh_color(degree: u8, coeffs: &[[f64; 3]], view_dir: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(degree, view_dir);
    sh_raw_color(coeffs, &basis).map(|c| c.clamp(0.0, 1.0))
}
