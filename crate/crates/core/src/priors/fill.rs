//! Scalar-plane completion used by the mock inpainters.

/// Jacobi-iterated Laplace fill: every unknown pixel converges to the mean of
/// its in-image 4-neighbours. Known pixels are copied unchanged. Stops when
/// the largest update falls below `tol` or after `max_iter` sweeps.
pub fn harmonic_fill(values: &[f64], width: usize, height: usize, unknown: &[bool], tol: f64, max_iter: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    let known: Vec<f64> = values.iter().zip(unknown).filter(|(_, &u)| !u).map(|(&v, _)| v).collect();
    if known.is_empty() || known.len() == values.len() {
        return cur;
    }
    let seed = known.iter().sum::<f64>() / known.len() as f64;
    for (c, &u) in cur.iter_mut().zip(unknown) {
        if u {
            *c = seed;
        }
    }
    let holes: Vec<usize> = (0..values.len()).filter(|&p| unknown[p]).collect();
    let mut next = cur.clone();
    for _ in 0..max_iter {
        let mut delta = 0.0f64;
        for &p in &holes {
            let (col, row) = (p % width, p / width);
            let mut sum = 0.0;
            let mut n = 0.0;
            if col > 0 {
                sum += cur[p - 1];
                n += 1.0;
            }
            if col + 1 < width {
                sum += cur[p + 1];
                n += 1.0;
            }
            if row > 0 {
                sum += cur[p - width];
                n += 1.0;
            }
            if row + 1 < height {
                sum += cur[p + width];
                n += 1.0;
            }
            let v = if n > 0.0 { sum / n } else { cur[p] };
            delta = delta.max((v - cur[p]).abs());
            next[p] = v;
        }
        std::mem::swap(&mut cur, &mut next);
        if delta < tol {
            break;
        }
    }
    cur
}

/// `out += DᵀD z` where `D` stacks every horizontal, vertical and (weighted
/// √2) mixed second difference on the grid.
fn apply_bending(z: &[f64], width: usize, height: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in 0..height {
        let base = row * width;
        for col in 1..width.saturating_sub(1) {
            let p = base + col;
            let s = z[p - 1] - 2.0 * z[p] + z[p + 1];
            out[p - 1] += s;
            out[p] -= 2.0 * s;
            out[p + 1] += s;
        }
    }
    for row in 1..height.saturating_sub(1) {
        for col in 0..width {
            let p = row * width + col;
            let s = z[p - width] - 2.0 * z[p] + z[p + width];
            out[p - width] += s;
            out[p] -= 2.0 * s;
            out[p + width] += s;
        }
    }
    for row in 0..height.saturating_sub(1) {
        for col in 0..width.saturating_sub(1) {
            let p = row * width + col;
            let q = p + width;
            let s = 2.0 * (z[q + 1] - z[q] - z[p + 1] + z[p]);
            out[q + 1] += s;
            out[q] -= s;
            out[p + 1] -= s;
            out[p] += s;
        }
    }
}

/// Thin-plate fill: the unknown pixels minimise the discrete bending energy
/// `Σ z_uu² + 2 z_uv² + z_vv²` with known pixels held fixed, solved by
/// conjugate gradients. Affine data is continued exactly, including into
/// regions that touch the image border.
pub fn thin_plate_fill(values: &[f64], width: usize, height: usize, unknown: &[bool], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = values.len();
    let known_count = unknown.iter().filter(|&&u| !u).count();
    if known_count == 0 || known_count == n {
        return values.to_vec();
    }
    let mask = |v: &mut [f64]| {
        for (x, &u) in v.iter_mut().zip(unknown) {
            if !u {
                *x = 0.0;
            }
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut fixed: Vec<f64> = values.to_vec();
    mask_known_complement(&mut fixed, unknown);
    let mut tmp = vec![0.0; n];
    apply_bending(&fixed, width, height, &mut tmp);
    let mut b: Vec<f64> = tmp.iter().map(|v| -v).collect();
    mask(&mut b);

    let seed = fixed.iter().sum::<f64>() / known_count as f64;
    let mut x: Vec<f64> = unknown.iter().map(|&u| if u { seed } else { 0.0 }).collect();
    apply_bending(&x, width, height, &mut tmp);
    mask(&mut tmp);
    let mut r: Vec<f64> = b.iter().zip(&tmp).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = tol * tol * dot(&b, &b).max(1.0);
    for _ in 0..max_iter {
        if rr <= stop {
            break;
        }
        apply_bending(&p, width, height, &mut tmp);
        mask(&mut tmp);
        let pap = dot(&p, &tmp);
        if !(pap > 0.0) {
            break;
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * tmp[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    values
        .iter()
        .zip(unknown)
        .zip(&x)
        .map(|((&v, &u), &xi)| if u { xi } else { v })
        .collect()
}

/// Zeroes the unknown entries, leaving the known values.
fn mask_known_complement(v: &mut [f64], unknown: &[bool]) {
    for (x, &u) in v.iter_mut().zip(unknown) {
        if u {
            *x = 0.0;
        }
    }
}
