use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Example, ForecasterModel, Net, Trainable};
use crate::error::{Error, Result};

/// Examples per gradient chunk. Chunks run in parallel and are summed in
/// order, so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Linear warmup length; defaults to 5% of all steps.
    pub warmup_steps: Option<usize>,
    /// Cosine annealing length after warmup; defaults to the remaining steps.
    pub anneal_steps: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fixed optimizer step budget, overriding `epochs`.
    pub steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.00032,
            momentum: 0.9,
            warmup_steps: None,
            anneal_steps: None,
            epochs: 50,
            batch_size: 32,
            steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    fn schedule(&self, n_examples: usize) -> (usize, usize, usize) {
        let per_epoch = n_examples.div_ceil(self.batch_size);
        let total = self.steps.unwrap_or(self.epochs * per_epoch);
        let warmup = self
            .warmup_steps
            .unwrap_or_else(|| (0.05 * total as f64).round() as usize)
            .min(total);
        let anneal = self.anneal_steps.unwrap_or(total - warmup);
        (total, warmup, anneal)
    }
}

/// Linear warmup from 0 to `lr_max` over `warmup` steps, then cosine decay
/// to 0 over `anneal` steps.
pub fn lr_at(step: usize, warmup: usize, anneal: usize, lr_max: f64) -> f64 {
    if step < warmup {
        return lr_max * step as f64 / warmup as f64;
    }
    let s = step - warmup;
    if anneal == 0 || s >= anneal {
        return if anneal == 0 { lr_max } else { 0.0 };
    }
    lr_max * 0.5 * (1.0 + (std::f64::consts::PI * s as f64 / anneal as f64).cos())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub warmup_steps: usize,
    pub anneal_steps: usize,
}

fn dropout_rng(seed: u64, step: usize, idx: usize) -> ChaCha8Rng {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (idx as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 31)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z)
}

/// Per-window latents for head-only training; the encoder is frozen, so
/// they are computed once.
enum Inputs<'a> {
    Full(&'a [Example]),
    Cached(&'a [Example], Vec<Vec<f64>>),
}

impl Inputs<'_> {
    fn len(&self) -> usize {
        match self {
            Inputs::Full(e) | Inputs::Cached(e, _) => e.len(),
        }
    }
}

fn batch_gradient(net: Net<'_>, inputs: &Inputs<'_>, batch: &[usize], seed: u64, step: usize) -> (f64, Vec<f64>) {
    let horizons = net.cfg.horizons;
    let weight = 1.0 / (batch.len() * horizons) as f64;
    let n_params = net.lay.num_params();
    let use_dropout = net.cfg.dropout > 0.0;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n_params];
            let mut loss = 0.0;
            for &i in chunk {
                let mut rng = use_dropout.then(|| dropout_rng(seed, step, i));
                loss += match inputs {
                    Inputs::Full(ex) => net.accumulate(&ex[i], Trainable::All, weight, rng.as_mut(), &mut g),
                    Inputs::Cached(ex, latents) => {
                        let e = &ex[i];
                        let (y, cache) = net.head(&latents[i], &e.input.covariates, &e.input.cs_z, rng.as_mut());
                        let mut l = 0.0;
                        let dy: Vec<f64> = y
                            .iter()
                            .zip(&e.target)
                            .map(|(a, b)| {
                                l += (a - b).powi(2);
                                2.0 * (a - b) * weight
                            })
                            .collect();
                        net.head_back(&cache, &dy, &mut g);
                        l
                    }
                };
            }
            (loss, g)
        })
        .collect();
    let mut total = vec![0.0; n_params];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    (loss * weight, total)
}

fn optimize(model: &mut ForecasterModel, inputs: Inputs<'_>, cfg: &TrainConfig, trainable: Trainable) -> Result<TrainReport> {
    let n = inputs.len();
    let (total, warmup, anneal) = cfg.schedule(n);
    let start = match trainable {
        Trainable::All => 0,
        Trainable::HeadOnly => model.layout.head_start(),
    };
    let mut velocity = vec![0.0; model.params.len() - start];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        warmup_steps: warmup,
        anneal_steps: anneal,
        ..TrainReport::default()
    };
    let mut order: Vec<usize> = (0..n).collect();
    while report.steps < total {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if report.steps >= total {
                break;
            }
            let (loss, grad) = batch_gradient(model.net(), &inputs, batch, cfg.seed, report.steps);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "training diverged at step {} (loss {loss})",
                    report.steps
                )));
            }
            let lr = lr_at(report.steps, warmup, anneal, cfg.learning_rate);
            for (k, (p, v)) in model.params[start..].iter_mut().zip(velocity.iter_mut()).enumerate() {
                *v = cfg.momentum * *v + grad[start + k];
                if lr != 0.0 {
                    *p -= lr * *v;
                }
            }
            sum += loss;
            batches += 1;
            report.steps += 1;
        }
        report.epoch_losses.push(sum / batches as f64);
        log::debug!("epoch {} loss {:.6}", report.epoch_losses.len(), sum / batches as f64);
    }
    Ok(report)
}

/// Trains every parameter with SGD + momentum on mean squared error.
pub fn train(model: &mut ForecasterModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("training needs at least one window"));
    }
    for e in examples {
        model.check_input(&e.input)?;
    }
    optimize(model, Inputs::Full(examples), cfg, Trainable::All)
}

/// Updates only the residual MLP head and final layer; the input projection,
/// positional encodings and transformer stay bitwise unchanged.
pub fn finetune_head(model: &mut ForecasterModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Ok(TrainReport::default());
    }
    for e in examples {
        model.check_input(&e.input)?;
    }
    let net = model.net();
    let latents: Vec<Vec<f64>> = examples.par_iter().map(|e| net.encode(&e.input.context).0).collect();
    optimize(model, Inputs::Cached(examples, latents), cfg, Trainable::HeadOnly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at(0, 10, 90, 0.1), 0.0);
        assert_eq!(lr_at(10, 10, 90, 0.1), 0.1);
        assert!(lr_at(99, 10, 90, 0.1) < 1e-4);
        assert_eq!(lr_at(100, 10, 90, 0.1), 0.0);
        assert!((lr_at(55, 10, 90, 0.1) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn default_warmup_is_five_percent() {
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.schedule(100), (100, 5, 95));
    }
}
