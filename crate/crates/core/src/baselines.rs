//! Statistical baselines: ARIMA(2,0,2) fit by conditional sum of squares and
//! a least-squares VAR(p).

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

const ARIMA_MIN_LEN: usize = 50;
const ARIMA_STARTS: usize = 6;
const ARIMA_MAX_ITERS: u64 = 4000;
/// Relative cost margin treated as a tie between equally sized subsets.
const ARIMA_TIE: f64 = 1e-7;
/// Significance level for keeping extra ARMA coefficients.
const ARIMA_LR_ALPHA: f64 = 0.01;
const INFEASIBLE: f64 = 1e30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub phi: [f64; 2],
    pub theta: [f64; 2],
    pub intercept: f64,
    pub sigma2: f64,
    /// False when the AR polynomial has a root on or inside the unit circle.
    pub stationary: bool,
}

impl ArimaModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn ar_stationary(phi: [f64; 2]) -> bool {
    phi[1].abs() < 1.0 && phi[0] + phi[1] < 1.0 && phi[1] - phi[0] < 1.0
}

fn ma_invertible(theta: [f64; 2]) -> bool {
    theta[1].abs() < 1.0 && theta[1] + theta[0] > -1.0 && theta[1] - theta[0] > -1.0
}

/// Residuals of one segment with zero pre-sample innovations; the first two
/// observations only serve as lags.
fn css_residuals(y: &[f64], c: f64, phi: [f64; 2], theta: [f64; 2]) -> Vec<f64> {
    let mut e = vec![0.0; y.len()];
    for t in 2..y.len() {
        e[t] = y[t] - c - phi[0] * y[t - 1] - phi[1] * y[t - 2] - theta[0] * e[t - 1] - theta[1] * e[t - 2];
    }
    e
}

/// CSS objective over the free coefficients selected by `mask`
/// (`[phi1, phi2, theta1, theta2]`); the intercept is always free.
struct Css<'a> {
    segments: &'a [Vec<f64>],
    mask: [bool; 4],
}

impl Css<'_> {
    fn expand(&self, x: &[f64]) -> [f64; 5] {
        let mut full = [x[0], 0.0, 0.0, 0.0, 0.0];
        let mut next = 1;
        for (i, &free) in self.mask.iter().enumerate() {
            if free {
                full[i + 1] = x[next];
                next += 1;
            }
        }
        full
    }
}

impl CostFunction for Css<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let f = self.expand(x);
        let (phi, theta) = ([f[1], f[2]], [f[3], f[4]]);
        if !ma_invertible(theta) || !x.iter().all(|v| v.is_finite()) {
            return Ok(INFEASIBLE);
        }
        let mut ss = 0.0;
        for seg in self.segments {
            ss += css_residuals(seg, f[0], phi, theta).iter().map(|e| e * e).sum::<f64>();
        }
        Ok(if ss.is_finite() { ss } else { INFEASIBLE })
    }
}

pub fn fit_arima(series: &[f64], seed: u64) -> Result<ArimaModel> {
    fit_arima_segments(&[series.to_vec()], seed)
}

/// Multi-start Nelder-Mead on one coefficient subset. Returns the best
/// converged `(cost, full parameter vector)`.
fn fit_subset(z: &[Vec<f64>], mask: [bool; 4], starts: usize, rng: &mut ChaCha8Rng, trace: &mut Vec<String>) -> Result<Option<(f64, [f64; 5])>> {
    let problem = Css { segments: z, mask };
    let dim = 1 + mask.iter().filter(|m| **m).count();
    let mut best: Option<(f64, [f64; 5])> = None;
    for s in 0..starts {
        let x0: Vec<f64> = (0..dim)
            .map(|i| if i == 0 || s == 0 { 0.0 } else { rng.random_range(-0.5..0.5) })
            .collect();
        let mut simplex = vec![x0.clone()];
        for i in 0..dim {
            let mut v = x0.clone();
            v[i] += 0.1;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let res = Executor::new(Css { segments: z, mask }, solver)
            .configure(|st| st.max_iters(ARIMA_MAX_ITERS))
            .run()
            .map_err(|e| Error::Numerical(format!("ARIMA optimizer failed: {e}")))?;
        let state = res.state();
        let cost = state.get_best_cost();
        let converged = matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged));
        trace.push(format!("mask {mask:?} start {s}: cost {cost:.6e} after {} iters", state.get_iter()));
        if !converged || cost >= INFEASIBLE {
            continue;
        }
        if let Some(p) = state.get_best_param() {
            if best.is_none_or(|b| cost < b.0) {
                best = Some((cost, problem.expand(p)));
            }
        }
    }
    Ok(best)
}

/// Fits one ARIMA(2,0,2) across several contiguous segments; innovations
/// restart at every segment boundary.
///
/// ARMA(2,2) is not identified when the true process has lower order (AR
/// and MA factors cancel), so every coefficient subset is fit and the most
/// parsimonious one that a likelihood-ratio test cannot tell apart from the
/// best fit is kept. Dropped coefficients are reported as zero.
pub fn fit_arima_segments(segments: &[Vec<f64>], seed: u64) -> Result<ArimaModel> {
    let segments: Vec<&Vec<f64>> = segments.iter().filter(|s| s.len() >= 3).collect();
    let n: usize = segments.iter().map(|s| s.len()).sum();
    if n < ARIMA_MIN_LEN {
        return Err(Error::invalid(format!("ARIMA needs at least {ARIMA_MIN_LEN} observations, got {n}")));
    }
    let all: Vec<f64> = segments.iter().flat_map(|s| s.iter().copied()).collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in ARIMA series"));
    }
    let mean = all.iter().sum::<f64>() / n as f64;
    let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::Numerical("ARIMA series has degenerate variance".into()));
    }
    let z: Vec<Vec<f64>> = segments.iter().map(|s| s.iter().map(|v| (v - mean) / sd).collect()).collect();
    let n_resid: usize = z.iter().map(|s| s.len() - 2).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut fits: Vec<(usize, f64, [f64; 5])> = Vec::new();
    for bits in 0..16u8 {
        let mask = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0];
        let free = bits.count_ones() as usize;
        let starts = if free == 4 { ARIMA_STARTS } else { 2 };
        if let Some((cost, x)) = fit_subset(&z, mask, starts, &mut rng, &mut trace)? {
            fits.push((free, cost, x));
        }
    }
    let Some(&(best_free, best_cost, _)) = fits.iter().min_by(|a, b| a.1.total_cmp(&b.1)) else {
        return Err(Error::Numerical(format!(
            "ARIMA CSS did not converge within budget: {}",
            trace.join("; ")
        )));
    };
    let accept = |free: usize, cost: f64| {
        if free >= best_free {
            return cost <= best_cost * (1.0 + ARIMA_TIE);
        }
        let lr = n_resid as f64 * (cost / best_cost).ln();
        let crit = ChiSquared::new((best_free - free) as f64).unwrap().inverse_cdf(1.0 - ARIMA_LR_ALPHA);
        lr <= crit
    };
    let (_, cost, x) = fits
        .iter()
        .copied()
        .filter(|f| accept(f.0, f.1))
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .unwrap();

    let phi = [x[1], x[2]];
    let theta = [x[3], x[4]];
    let stationary = ar_stationary(phi);
    if !stationary {
        log::warn!("fitted ARIMA AR polynomial is not stationary: phi = {phi:?}");
    }
    Ok(ArimaModel {
        phi,
        theta,
        intercept: mean * (1.0 - phi[0] - phi[1]) + sd * x[0],
        sigma2: sd * sd * cost / n_resid as f64,
        stationary,
    })
}

/// Residuals are rebuilt over the context (zero innovations before it),
/// then the recursion runs forward with future innovations set to zero.
pub fn forecast_arima(model: &ArimaModel, context: &[f64], steps: usize) -> Result<Vec<f64>> {
    if context.len() < 2 {
        return Err(Error::invalid("ARIMA forecast needs at least 2 context values"));
    }
    let (c, phi, theta) = (model.intercept, model.phi, model.theta);
    let mut y = context.to_vec();
    let mut e = css_residuals(context, c, phi, theta);
    for _ in 0..steps {
        let t = y.len();
        let next = c + phi[0] * y[t - 1] + phi[1] * y[t - 2] + theta[0] * e[t - 1] + theta[1] * e[t - 2];
        y.push(next);
        e.push(0.0);
    }
    Ok(y.split_off(context.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub lags: usize,
    pub schema: Vec<String>,
    /// Variables whose future values are known and substituted during
    /// forecasting.
    pub known: Vec<bool>,
    pub intercept: Vec<f64>,
    /// `coefs[i][r][c]`: effect of variable `c` at lag `i + 1` on variable `r`.
    pub coefs: Vec<Vec<Vec<f64>>>,
}

impl VarModel {
    pub fn k(&self) -> usize {
        self.intercept.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn fit_var(series: &[Vec<f64>], lags: usize) -> Result<VarModel> {
    let k = series.first().map(Vec::len).unwrap_or(0);
    fit_var_segments(&[series.to_vec()], lags, (0..k).map(|i| format!("v{i}")).collect(), vec![false; k])
}

/// Per-equation OLS on `[1, y_{t-1}, ..., y_{t-p}]`; regression rows never
/// straddle a segment boundary.
pub fn fit_var_segments(segments: &[Vec<Vec<f64>>], lags: usize, schema: Vec<String>, known: Vec<bool>) -> Result<VarModel> {
    let k = schema.len();
    if k == 0 || lags == 0 || known.len() != k {
        return Err(Error::Config("VAR needs at least one variable, one lag and a matching known mask".into()));
    }
    let n: usize = segments.iter().map(Vec::len).sum();
    if n <= 10 * k * lags {
        return Err(Error::invalid(format!(
            "VAR({lags}) with {k} variables needs more than {} observations, got {n}",
            10 * k * lags
        )));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for seg in segments {
        if seg.iter().any(|r| r.len() != k) {
            return Err(Error::DimMismatch {
                expected: k,
                got: seg.iter().map(Vec::len).find(|&l| l != k).unwrap(),
            });
        }
        for t in lags..seg.len() {
            let mut x = Vec::with_capacity(1 + k * lags);
            x.push(1.0);
            for i in 1..=lags {
                x.extend_from_slice(&seg[t - i]);
            }
            rows.push(x);
            targets.push(seg[t].clone());
        }
    }
    let m = rows.len();
    let cols = 1 + k * lags;
    if m < cols {
        return Err(Error::Numerical("VAR design matrix has fewer rows than regressors".into()));
    }
    let x = DMatrix::from_fn(m, cols, |r, c| rows[r][c]);
    // column scaling keeps the rank test meaningful across units
    let scales: Vec<f64> = (0..cols)
        .map(|c| {
            let norm = x.column(c).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let xs = DMatrix::from_fn(m, cols, |r, c| x[(r, c)] / scales[c]);
    let svd = xs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Numerical(format!(
            "VAR design matrix is rank deficient (condition {:.3e})",
            smax / smin
        )));
    }
    let y = DMatrix::from_fn(m, k, |r, c| targets[r][c]);
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Numerical(format!("VAR least squares failed: {e}")))?;
    let coef = |row: usize, eq: usize| beta[(row, eq)] / scales[row];

    let intercept = (0..k).map(|eq| coef(0, eq)).collect();
    let coefs = (0..lags)
        .map(|i| {
            (0..k)
                .map(|r| (0..k).map(|c| coef(1 + i * k + c, r)).collect())
                .collect()
        })
        .collect();
    Ok(VarModel {
        lags,
        schema,
        known,
        intercept,
        coefs,
    })
}

/// Iterates the VAR recursion. Where `known_future` is given, variables
/// marked known are overwritten with its values after each step.
pub fn forecast_var(model: &VarModel, context: &[Vec<f64>], steps: usize, known_future: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
    let k = model.k();
    if context.len() < model.lags {
        return Err(Error::invalid(format!(
            "VAR forecast needs {} context rows, got {}",
            model.lags,
            context.len()
        )));
    }
    if context.iter().any(|r| r.len() != k) {
        return Err(Error::DimMismatch {
            expected: k,
            got: context.iter().map(Vec::len).find(|&l| l != k).unwrap(),
        });
    }
    if let Some(f) = known_future {
        if f.len() < steps || f.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("known future rows do not cover the forecast"));
        }
    }
    let mut hist: Vec<Vec<f64>> = context.to_vec();
    for s in 0..steps {
        let t = hist.len();
        let mut next = model.intercept.clone();
        for (i, a) in model.coefs.iter().enumerate() {
            let prev = &hist[t - 1 - i];
            for r in 0..k {
                next[r] += a[r].iter().zip(prev).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        if let Some(f) = known_future {
            for c in 0..k {
                if model.known[c] {
                    next[c] = f[s][c];
                }
            }
        }
        hist.push(next);
    }
    Ok(hist.split_off(context.len()))
}
