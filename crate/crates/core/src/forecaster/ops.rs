//! Dense kernels with hand-written backward passes. Weight matrices are
//! row-major `(out, in)`; backward functions accumulate into their outputs.

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = W x + b`
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), n_in * y.len());
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = b[i] + dot(&w[i * n_in..(i + 1) * n_in], x);
    }
}

pub(crate) fn affine_back(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: Option<(&mut [f64], &mut [f64])>,
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    if let Some((dw, db)) = dw {
        for (i, &g) in dy.iter().enumerate() {
            db[i] += g;
            if g == 0.0 {
                continue;
            }
            for (d, &xj) in dw[i * n_in..(i + 1) * n_in].iter_mut().zip(x) {
                *d += g * xj;
            }
        }
    }
    if let Some(dx) = dx {
        for (i, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &wij) in dx.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                *d += g * wij;
            }
        }
    }
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: f64,
}

pub(crate) fn layer_norm(x: &[f64], g: &[f64], b: &[f64], y: &mut [f64]) -> LnCache {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    for i in 0..x.len() {
        y[i] = g[i] * xhat[i] + b[i];
    }
    LnCache { xhat, inv_std }
}

pub(crate) fn layer_norm_back(
    cache: &LnCache,
    g: &[f64],
    dy: &[f64],
    dgb: Option<(&mut [f64], &mut [f64])>,
    dx: &mut [f64],
) {
    let n = dy.len() as f64;
    if let Some((dg, db)) = dgb {
        for i in 0..dy.len() {
            dg[i] += dy[i] * cache.xhat[i];
            db[i] += dy[i];
        }
    }
    let dxhat: Vec<f64> = dy.iter().zip(g).map(|(a, b)| a * b).collect();
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dot(&dxhat, &cache.xhat) / n;
    for i in 0..dy.len() {
        dx[i] += cache.inv_std * (dxhat[i] - mean_d - cache.xhat[i] * mean_dx);
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
