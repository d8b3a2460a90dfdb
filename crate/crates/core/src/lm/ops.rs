//! Row-major f32 kernels shared by the training pass and the cached decoder.
//! Weight matrices are stored `[in, out]`.

pub const LN_EPS: f32 = 1e-5;

/// `y[r] = x[r] @ w + b` for `rows` rows.
pub fn linear(x: &[f32], w: &[f32], b: &[f32], rows: usize, n_in: usize, n_out: usize, y: &mut [f32]) {
    debug_assert_eq!(x.len(), rows * n_in);
    debug_assert_eq!(w.len(), n_in * n_out);
    for r in 0..rows {
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        yr.copy_from_slice(b);
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            let wi = &w[i * n_out..(i + 1) * n_out];
            for (yo, &wo) in yr.iter_mut().zip(wi) {
                *yo += xi * wo;
            }
        }
    }
}

/// Accumulate gradients of [`linear`]: `dx += dy @ w^T`, `dw += x^T dy`, `db += Σ dy`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f32],
    dy: &[f32],
    w: &[f32],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dx: &mut [f32],
    dw: &mut [f32],
    db: &mut [f32],
) {
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
        for i in 0..n_in {
            let wi = &w[i * n_out..(i + 1) * n_out];
            let dwi = &mut dw[i * n_out..(i + 1) * n_out];
            let xi = xr[i];
            let mut acc = 0.0f32;
            for o in 0..n_out {
                acc += dyr[o] * wi[o];
                dwi[o] += xi * dyr[o];
            }
            dxr[i] += acc;
        }
    }
}

/// Layer norm over rows of width `d`. Stores normalized input and inverse std
/// for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm(
    x: &[f32],
    g: &[f32],
    b: &[f32],
    d: usize,
    y: &mut [f32],
    xhat: &mut [f32],
    rstd: &mut [f32],
) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let n = (row[i] - mean) * rs;
            xhat[r * d + i] = n;
            y[r * d + i] = n * g[i] + b[i];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    dy: &[f32],
    xhat: &[f32],
    rstd: &[f32],
    g: &[f32],
    d: usize,
    dx: &mut [f32],
    dg: &mut [f32],
    db: &mut [f32],
) {
    let mut dxhat = vec![0.0f32; d];
    for (r, &rs) in rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut m1 = 0.0f32;
        let mut m2 = 0.0f32;
        for i in 0..d {
            dxhat[i] = dyr[i] * g[i];
            dg[i] += dyr[i] * xr[i];
            db[i] += dyr[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * xr[i];
        }
        m1 /= d as f32;
        m2 /= d as f32;
        for i in 0..d {
            dx[r * d + i] += rs * (dxhat[i] - m1 - xr[i] * m2);
        }
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)

/// tanh approximation of GELU.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softmax_in_place(v: &mut [f32]) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Numerically stable softmax in f64.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}
