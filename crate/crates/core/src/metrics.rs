//! Accuracy metrics, paired t-tests and confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent.
    pub nmap: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn evaluate(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
    if y.len() != yhat.len() {
        return Err(Error::invalid(format!(
            "{} actuals but {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("cannot evaluate zero samples"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::Numerical(format!("nMAP undefined: mean of actuals is {mean}")));
    }
    let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(Metrics {
        nmap: 100.0 * mae / mean,
        mae,
        rmse: (ss_res / n).sqrt(),
        r2,
        n: y.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub units: String,
    #[serde(flatten)]
    pub overall: Metrics,
    /// One entry per forecast horizon; empty for nowcasts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_horizon: Vec<HorizonMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon_minutes: i64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl MetricsReport {
    pub fn nowcast(units: &str, y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(Self {
            units: units.to_string(),
            overall: evaluate(y, yhat)?,
            per_horizon: Vec::new(),
        })
    }

    /// `y[h]` and `yhat[h]` hold the (already masked) pairs for horizon `h`.
    pub fn forecast(units: &str, horizons: &[i64], y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<Self> {
        if horizons.len() != y.len() || y.len() != yhat.len() {
            return Err(Error::invalid("horizon lists differ in length"));
        }
        let per_horizon = horizons
            .iter()
            .zip(y.iter().zip(yhat))
            .map(|(&h, (a, b))| {
                Ok(HorizonMetrics {
                    horizon_minutes: h,
                    metrics: evaluate(a, b)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let all_y: Vec<f64> = y.iter().flatten().copied().collect();
        let all_hat: Vec<f64> = yhat.iter().flatten().copied().collect();
        Ok(Self {
            units: units.to_string(),
            overall: evaluate(&all_y, &all_hat)?,
            per_horizon,
        })
    }
}

/// Keeps pairs whose mask entry is true (daytime by default).
pub fn apply_mask(y: &[f64], yhat: &[f64], keep: &[bool]) -> (Vec<f64>, Vec<f64>) {
    y.iter()
        .zip(yhat)
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|((a, b), _)| (*a, *b))
        .unzip()
}

pub fn daytime_mask(zenith_deg: &[f64]) -> Vec<bool> {
    zenith_deg.iter().map(|z| *z < 90.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub dof: usize,
    pub p_two_sided: f64,
    pub significant_at_0001: bool,
    pub mean_difference: f64,
}

/// Student-t CDF through the regularized incomplete beta function.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::invalid("paired samples differ in length"));
    }
    if a.len() < 2 {
        return Err(Error::invalid("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_sd(&d);
    if !(sd > 1e-12 * mean.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical("paired differences have zero variance".into()));
    }
    let n = d.len();
    let t = mean / (sd / (n as f64).sqrt());
    let dof = n - 1;
    let p = beta_reg(dof as f64 / 2.0, 0.5, dof as f64 / (dof as f64 + t * t)).clamp(0.0, 1.0);
    Ok(TTestResult {
        t,
        dof,
        p_two_sided: p,
        significant_at_0001: p < SIGNIFICANCE_LEVEL,
        mean_difference: mean,
    })
}

/// `mean ± t_crit · sd / sqrt(n)` with sample standard deviation.
pub fn confidence_interval(xs: &[f64], level: f64) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::invalid("confidence interval needs at least 2 values"));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let (mean, sd) = mean_sd(xs);
    let dist = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let half = dist.inverse_cdf(0.5 + level / 2.0) * sd / (xs.len() as f64).sqrt();
    Ok((mean - half, mean + half))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [3.0, 1.0, 4.0];
        let m = evaluate(&y, &y).unwrap();
        assert_eq!((m.nmap, m.mae, m.rmse, m.r2), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let y = [1.0, 2.0, 6.0];
        let m = evaluate(&y, &[3.0; 3]).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn nmap_needs_positive_mean() {
        assert!(evaluate(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(evaluate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_differences_rejected() {
        let a = [2.0, 3.0, 4.0, 5.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(paired_ttest(&a, &b), Err(Error::Numerical(_))));
    }

    #[test]
    fn jitter_around_zero_is_not_significant() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.1, 1.9, 3.1, 3.9, 5.1, 5.9];
        let r = paired_ttest(&a, &b).unwrap();
        assert!(r.t.abs() < 1e-9);
        assert!(r.p_two_sided > 0.99);
    }

    #[test]
    fn interval_properties() {
        assert_eq!(confidence_interval(&[2.0; 4], 0.95).unwrap(), (2.0, 2.0));
        let (lo, hi) = confidence_interval(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95).unwrap();
        assert!(((lo + hi) / 2.0 - 3.0).abs() < 1e-12);
        assert!(confidence_interval(&[1.0], 0.95).is_err());
    }

    #[test]
    fn report_serializes_units() {
        let r = MetricsReport::nowcast("W/m^2", &[100.0, 300.0], &[150.0, 250.0]).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["units"], "W/m^2");
        assert_eq!(json["nmap"], 25.0);
    }
}
