//! Real spherical-harmonic basis up to degree 3 and its gradient with respect
//! to the (unit) viewing direction.
//!
//! Degree 0 is the identity: the DC coefficient is the colour itself, so the
//! basis value for `k = 0` is 1 rather than the usual `1 / (2√π)`.

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

/// Basis values and their gradients for the first `(degree + 1)²` functions.
pub fn basis(degree: usize, d: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = (degree + 1) * (degree + 1);
    let mut val = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    let [x, y, z] = d;
    val.push(1.0);
    grad.push([0.0; 3]);
    if degree >= 1 {
        val.extend([-C1 * y, C1 * z, -C1 * x]);
        grad.extend([[0.0, -C1, 0.0], [0.0, 0.0, C1], [-C1, 0.0, 0.0]]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        val.extend([
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]);
        grad.extend([
            [C2[0] * y, C2[0] * x, 0.0],
            [0.0, C2[1] * z, C2[1] * y],
            [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z],
            [C2[3] * z, 0.0, C2[3] * x],
            [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0],
        ]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        val.extend([
            C3[0] * y * (3.0 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4.0 * zz - xx - yy),
            C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * x * (4.0 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3.0 * yy),
        ]);
        grad.extend([
            [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0],
            [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y],
            [
                -2.0 * C3[2] * x * y,
                C3[2] * (4.0 * zz - xx - 3.0 * yy),
                8.0 * C3[2] * y * z,
            ],
            [
                -6.0 * C3[3] * x * z,
                -6.0 * C3[3] * y * z,
                C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ],
            [
                C3[4] * (4.0 * zz - 3.0 * xx - yy),
                -2.0 * C3[4] * x * y,
                8.0 * C3[4] * x * z,
            ],
            [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)],
            [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0],
        ]);
    }
    (val, grad)
}

/// RGB colour for coefficients laid out `sh[k * 3 + channel]`.
pub fn eval(degree: usize, sh: &[f64], dir: [f64; 3]) -> [f64; 3] {
    if degree == 0 {
        return [sh[0], sh[1], sh[2]];
    }
    let (val, _) = basis(degree, dir);
    let mut out = [0.0; 3];
    for (k, y) in val.iter().enumerate() {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += y * sh[k * 3 + ch];
        }
    }
    out
}
