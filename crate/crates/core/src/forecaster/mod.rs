//! Transformer forecaster: a pre-norm encoder summarizes the context window
//! into `L`, the head maps `h = L ⊕ C` through residual MLP blocks, and the
//! final affine layer sees the z-scored clear-sky GHI both as an input and as
//! an additive skip.
//!
//! All parameters live in one flat `f64` vector; [`Layout`] names the
//! tensors inside it. Encoder tensors precede head tensors, so freezing the
//! encoder means leaving a prefix of the vector untouched.

mod ops;
mod train;

pub use train::{finetune_head, lr_at, train, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::gbdt::ByteReader;
use ops::{affine, affine_back, gelu, gelu_grad, layer_norm, layer_norm_back, softmax_in_place, LnCache};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPFC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub context: usize,
    pub horizons: usize,
    pub mlp_blocks: usize,
    pub input_dim: usize,
    pub covariate_dim: usize,
    pub activation: Activation,
    /// Inverted dropout on the residual-block hidden activations, training only.
    pub dropout: f64,
    pub pooling: Pooling,
}

impl ForecasterConfig {
    pub fn full(features: &FeatureConfig) -> Self {
        Self::with_dims(6, 8, 1104, features)
    }

    pub fn desk(features: &FeatureConfig) -> Self {
        Self::with_dims(2, 4, 64, features)
    }

    fn with_dims(layers: usize, heads: usize, model_dim: usize, features: &FeatureConfig) -> Self {
        let horizons = crate::dataset::HORIZONS_MINUTES.len();
        Self {
            layers,
            heads,
            model_dim,
            ff_dim: 2 * model_dim,
            context: crate::dataset::CONTEXT_STEPS,
            horizons,
            mlp_blocks: 10,
            input_dim: features.input_dim(),
            covariate_dim: features.q() * horizons,
            activation: Activation::Gelu,
            dropout: 0.0,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.context == 0 || self.horizons == 0 || self.input_dim == 0 || self.ff_dim == 0 {
            return bad("context, horizons, input_dim and ff_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Width of `h = L ⊕ C`.
    pub fn head_dim(&self) -> usize {
        self.model_dim + self.covariate_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub off: usize,
    pub len: usize,
}

impl Span {
    #[inline]
    pub fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.off..self.off + self.len]
    }
}

/// Mutable weight and bias gradients for a `(w, b)` pair laid out back to back.
fn wb_mut(g: &mut [f64], w: Span, b: Span) -> (&mut [f64], &mut [f64]) {
    debug_assert!(w.off + w.len <= b.off);
    let (lo, hi) = g.split_at_mut(b.off);
    (&mut lo[w.off..w.off + w.len], &mut hi[..b.len])
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct TensorSpec {
    name: String,
    span: Span,
    shape: (usize, usize),
    init: Init,
}

#[derive(Debug, Clone)]
struct LayerSpans {
    ln1_g: Span,
    ln1_b: Span,
    wq: Span,
    bq: Span,
    wk: Span,
    bk: Span,
    wv: Span,
    bv: Span,
    wo: Span,
    bo: Span,
    ln2_g: Span,
    ln2_b: Span,
    w1: Span,
    b1: Span,
    w2: Span,
    b2: Span,
}

#[derive(Debug, Clone)]
struct BlockSpans {
    w1: Span,
    b1: Span,
    w2: Span,
    b2: Span,
}

#[derive(Debug, Clone)]
pub struct Layout {
    w_in: Span,
    b_in: Span,
    pos: Span,
    layers: Vec<LayerSpans>,
    lnf_g: Span,
    lnf_b: Span,
    blocks: Vec<BlockSpans>,
    wf: Span,
    bf: Span,
    head_start: usize,
    total: usize,
    tensors: Vec<TensorSpec>,
}

#[derive(Default)]
struct LayoutBuilder {
    next: usize,
    tensors: Vec<TensorSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> Span {
        let span = Span {
            off: self.next,
            len: rows * cols,
        };
        self.next += span.len;
        self.tensors.push(TensorSpec {
            name,
            span,
            shape: (rows, cols),
            init,
        });
        span
    }
}

impl Layout {
    pub fn new(cfg: &ForecasterConfig) -> Self {
        let (m, f, din, hd) = (cfg.model_dim, cfg.ff_dim, cfg.input_dim, cfg.head_dim());
        let depth_scale = 1.0 / (2.0 * cfg.layers.max(1) as f64).sqrt();
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let mut b = LayoutBuilder::default();
        let w_in = b.add("input.w".into(), m, din, Init::Normal(inv(din)));
        let b_in = b.add("input.b".into(), 1, m, Init::Zeros);
        let pos = b.add("pos".into(), cfg.context, m, Init::Normal(0.02));
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut add = |n: &str, r, c, init| b.add(format!("layer{l}.{n}"), r, c, init);
                LayerSpans {
                    ln1_g: add("ln1.g", 1, m, Init::Ones),
                    ln1_b: add("ln1.b", 1, m, Init::Zeros),
                    wq: add("attn.wq", m, m, Init::Normal(inv(m))),
                    bq: add("attn.bq", 1, m, Init::Zeros),
                    wk: add("attn.wk", m, m, Init::Normal(inv(m))),
                    bk: add("attn.bk", 1, m, Init::Zeros),
                    wv: add("attn.wv", m, m, Init::Normal(inv(m))),
                    bv: add("attn.bv", 1, m, Init::Zeros),
                    wo: add("attn.wo", m, m, Init::Normal(inv(m) * depth_scale)),
                    bo: add("attn.bo", 1, m, Init::Zeros),
                    ln2_g: add("ln2.g", 1, m, Init::Ones),
                    ln2_b: add("ln2.b", 1, m, Init::Zeros),
                    w1: add("ff.w1", f, m, Init::Normal(inv(m))),
                    b1: add("ff.b1", 1, f, Init::Zeros),
                    w2: add("ff.w2", m, f, Init::Normal(inv(f) * depth_scale)),
                    b2: add("ff.b2", 1, m, Init::Zeros),
                }
            })
            .collect();
        let lnf_g = b.add("final_ln.g".into(), 1, m, Init::Ones);
        let lnf_b = b.add("final_ln.b".into(), 1, m, Init::Zeros);
        let head_start = b.next;
        let block_scale = 0.5 / (cfg.mlp_blocks.max(1) as f64).sqrt();
        let blocks = (0..cfg.mlp_blocks)
            .map(|j| BlockSpans {
                w1: b.add(format!("head.block{j}.w1"), hd, hd, Init::Normal(inv(hd))),
                b1: b.add(format!("head.block{j}.b1"), 1, hd, Init::Zeros),
                w2: b.add(format!("head.block{j}.w2"), hd, hd, Init::Normal(inv(hd) * block_scale)),
                b2: b.add(format!("head.block{j}.b2"), 1, hd, Init::Zeros),
            })
            .collect();
        let wf = b.add("head.final.w".into(), cfg.horizons, hd + cfg.horizons, Init::Zeros);
        let bf = b.add("head.final.b".into(), 1, cfg.horizons, Init::Zeros);
        Self {
            w_in,
            b_in,
            pos,
            layers,
            lnf_g,
            lnf_b,
            blocks,
            wf,
            bf,
            head_start,
            total: b.next,
            tensors: b.tensors,
        }
    }

    pub fn num_params(&self) -> usize {
        self.total
    }

    /// Parameters before this offset belong to the encoder.
    pub fn head_start(&self) -> usize {
        self.head_start
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Per-dimension input standardization fit on source training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub features: Vec<NormStats>,
    pub covariates: Vec<NormStats>,
}

impl InputStats {
    pub fn identity(cfg: &ForecasterConfig) -> Self {
        let unit = NormStats { mean: 0.0, std: 1.0 };
        Self {
            features: vec![unit; cfg.input_dim],
            covariates: vec![unit; cfg.covariate_dim],
        }
    }

    pub fn fit(windows: &[RawWindow], cfg: &ForecasterConfig) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::invalid("cannot fit input statistics on zero windows"));
        }
        let features = (0..cfg.input_dim)
            .map(|j| {
                let col: Vec<f64> = windows.iter().flat_map(|w| w.context.iter().map(move |r| r[j])).collect();
                NormStats::fit_or_unit(&col)
            })
            .collect();
        let covariates = (0..cfg.covariate_dim)
            .map(|j| NormStats::fit_or_unit(&windows.iter().map(|w| w.covariates[j]).collect::<Vec<_>>()))
            .collect();
        Ok(Self { features, covariates })
    }
}

/// One window in physical units, as built from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub context: Vec<Vec<f64>>,
    pub covariates: Vec<f64>,
    pub clearsky_ghi: Vec<f64>,
    pub target: Vec<f64>,
}

/// Network-ready window: everything standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInput {
    /// `context x input_dim`, row-major.
    pub context: Vec<f64>,
    pub covariates: Vec<f64>,
    pub cs_z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: WindowInput,
    /// Normalized targets, one per horizon.
    pub target: Vec<f64>,
}

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    HeadOnly,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: Vec<LnCache>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    o: Vec<f64>,
    ln2: Vec<LnCache>,
    bn: Vec<f64>,
    u: Vec<f64>,
    gu: Vec<f64>,
}

#[derive(Debug, Clone)]
struct EncoderCache {
    layers: Vec<LayerCache>,
    lnf: Vec<LnCache>,
}

#[derive(Debug, Clone)]
struct HeadCache {
    hs: Vec<Vec<f64>>,
    rs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    u: Vec<f64>,
}

/// The network proper, borrowed from a model or a training copy.
#[derive(Clone, Copy)]
pub(crate) struct Net<'a> {
    cfg: &'a ForecasterConfig,
    lay: &'a Layout,
    p: &'a [f64],
}

impl Net<'_> {
    fn encode(&self, ctx: &[f64]) -> (Vec<f64>, EncoderCache) {
        let (t_len, m, din, f) = (self.cfg.context, self.cfg.model_dim, self.cfg.input_dim, self.cfg.ff_dim);
        let (p, lay) = (self.p, self.lay);
        let heads = self.cfg.heads;
        let dh = m / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = vec![0.0; t_len * m];
        for t in 0..t_len {
            let xt = &mut x[t * m..(t + 1) * m];
            affine(lay.w_in.of(p), lay.b_in.of(p), &ctx[t * din..(t + 1) * din], xt);
            for (xi, pi) in xt.iter_mut().zip(&lay.pos.of(p)[t * m..(t + 1) * m]) {
                *xi += pi;
            }
        }

        let mut layers = Vec::with_capacity(self.cfg.layers);
        for sp in &lay.layers {
            let mut a = vec![0.0; t_len * m];
            let ln1: Vec<LnCache> = (0..t_len)
                .map(|t| layer_norm(&x[t * m..(t + 1) * m], sp.ln1_g.of(p), sp.ln1_b.of(p), &mut a[t * m..(t + 1) * m]))
                .collect();
            let (mut q, mut k, mut v) = (vec![0.0; t_len * m], vec![0.0; t_len * m], vec![0.0; t_len * m]);
            for t in 0..t_len {
                let at = &a[t * m..(t + 1) * m];
                affine(sp.wq.of(p), sp.bq.of(p), at, &mut q[t * m..(t + 1) * m]);
                affine(sp.wk.of(p), sp.bk.of(p), at, &mut k[t * m..(t + 1) * m]);
                affine(sp.wv.of(p), sp.bv.of(p), at, &mut v[t * m..(t + 1) * m]);
            }
            let mut att = vec![0.0; heads * t_len * t_len];
            let mut o = vec![0.0; t_len * m];
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                for t in 0..t_len {
                    let row = &mut att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                    let qt = &q[t * m + hs.start..t * m + hs.end];
                    for (s, r) in row.iter_mut().enumerate() {
                        *r = scale * ops::dot(qt, &k[s * m + hs.start..s * m + hs.end]);
                    }
                    softmax_in_place(row);
                    for s in 0..t_len {
                        let w = row[s];
                        for j in hs.clone() {
                            o[t * m + j] += w * v[s * m + j];
                        }
                    }
                }
            }
            let mut y = vec![0.0; m];
            for t in 0..t_len {
                affine(sp.wo.of(p), sp.bo.of(p), &o[t * m..(t + 1) * m], &mut y);
                for j in 0..m {
                    x[t * m + j] += y[j];
                }
            }
            let mut bn = vec![0.0; t_len * m];
            let ln2: Vec<LnCache> = (0..t_len)
                .map(|t| layer_norm(&x[t * m..(t + 1) * m], sp.ln2_g.of(p), sp.ln2_b.of(p), &mut bn[t * m..(t + 1) * m]))
                .collect();
            let mut u = vec![0.0; t_len * f];
            let mut gu = vec![0.0; t_len * f];
            let mut z = vec![0.0; m];
            for t in 0..t_len {
                affine(sp.w1.of(p), sp.b1.of(p), &bn[t * m..(t + 1) * m], &mut u[t * f..(t + 1) * f]);
                for j in t * f..(t + 1) * f {
                    gu[j] = gelu(u[j]);
                }
                affine(sp.w2.of(p), sp.b2.of(p), &gu[t * f..(t + 1) * f], &mut z);
                for j in 0..m {
                    x[t * m + j] += z[j];
                }
            }
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                att,
                o,
                ln2,
                bn,
                u,
                gu,
            });
        }

        let mut xf = vec![0.0; t_len * m];
        let lnf: Vec<LnCache> = (0..t_len)
            .map(|t| layer_norm(&x[t * m..(t + 1) * m], lay.lnf_g.of(p), lay.lnf_b.of(p), &mut xf[t * m..(t + 1) * m]))
            .collect();
        let latent = match self.cfg.pooling {
            Pooling::Mean => (0..m)
                .map(|j| (0..t_len).map(|t| xf[t * m + j]).sum::<f64>() / t_len as f64)
                .collect(),
            Pooling::Last => xf[(t_len - 1) * m..].to_vec(),
        };
        (latent, EncoderCache { layers, lnf })
    }

    fn encode_back(&self, ctx: &[f64], cache: &EncoderCache, dl: &[f64], g: &mut [f64]) {
        let (t_len, m, din, f) = (self.cfg.context, self.cfg.model_dim, self.cfg.input_dim, self.cfg.ff_dim);
        let (p, lay) = (self.p, self.lay);
        let heads = self.cfg.heads;
        let dh = m / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dx = vec![0.0; t_len * m];
        for t in 0..t_len {
            let dxf: Vec<f64> = match self.cfg.pooling {
                Pooling::Mean => dl.iter().map(|v| v / t_len as f64).collect(),
                Pooling::Last if t == t_len - 1 => dl.to_vec(),
                Pooling::Last => continue,
            };
            let (dg, db) = wb_mut(g, lay.lnf_g, lay.lnf_b);
            layer_norm_back(&cache.lnf[t], lay.lnf_g.of(p), &dxf, Some((dg, db)), &mut dx[t * m..(t + 1) * m]);
        }

        for (sp, c) in lay.layers.iter().zip(&cache.layers).rev() {
            // feed-forward sublayer
            let mut dx1 = dx.clone();
            let mut dgu = vec![0.0; t_len * f];
            for t in 0..t_len {
                affine_back(
                    sp.w2.of(p),
                    &c.gu[t * f..(t + 1) * f],
                    &dx[t * m..(t + 1) * m],
                    Some(wb_mut(g, sp.w2, sp.b2)),
                    Some(&mut dgu[t * f..(t + 1) * f]),
                );
            }
            for j in 0..t_len * f {
                dgu[j] *= gelu_grad(c.u[j]);
            }
            let mut dbn = vec![0.0; t_len * m];
            for t in 0..t_len {
                affine_back(
                    sp.w1.of(p),
                    &c.bn[t * m..(t + 1) * m],
                    &dgu[t * f..(t + 1) * f],
                    Some(wb_mut(g, sp.w1, sp.b1)),
                    Some(&mut dbn[t * m..(t + 1) * m]),
                );
            }
            for t in 0..t_len {
                layer_norm_back(
                    &c.ln2[t],
                    sp.ln2_g.of(p),
                    &dbn[t * m..(t + 1) * m],
                    Some(wb_mut(g, sp.ln2_g, sp.ln2_b)),
                    &mut dx1[t * m..(t + 1) * m],
                );
            }

            // attention sublayer
            let mut dxin = dx1.clone();
            let mut d_o = vec![0.0; t_len * m];
            for t in 0..t_len {
                affine_back(
                    sp.wo.of(p),
                    &c.o[t * m..(t + 1) * m],
                    &dx1[t * m..(t + 1) * m],
                    Some(wb_mut(g, sp.wo, sp.bo)),
                    Some(&mut d_o[t * m..(t + 1) * m]),
                );
            }
            let (mut dq, mut dk, mut dv) = (vec![0.0; t_len * m], vec![0.0; t_len * m], vec![0.0; t_len * m]);
            let mut dp = vec![0.0; t_len];
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                for t in 0..t_len {
                    let row = &c.att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                    let dot_t = &d_o[t * m + hs.start..t * m + hs.end];
                    for s in 0..t_len {
                        dp[s] = ops::dot(dot_t, &c.v[s * m + hs.start..s * m + hs.end]);
                        for (jj, j) in hs.clone().enumerate() {
                            dv[s * m + j] += row[s] * dot_t[jj];
                        }
                    }
                    let mix = ops::dot(row, &dp);
                    for s in 0..t_len {
                        let ds = scale * row[s] * (dp[s] - mix);
                        if ds == 0.0 {
                            continue;
                        }
                        for j in hs.clone() {
                            dq[t * m + j] += ds * c.k[s * m + j];
                            dk[s * m + j] += ds * c.q[t * m + j];
                        }
                    }
                }
            }
            let mut da = vec![0.0; t_len * m];
            for t in 0..t_len {
                let at = &c.a[t * m..(t + 1) * m];
                let dat = &mut da[t * m..(t + 1) * m];
                affine_back(sp.wq.of(p), at, &dq[t * m..(t + 1) * m], Some(wb_mut(g, sp.wq, sp.bq)), Some(&mut *dat));
                affine_back(sp.wk.of(p), at, &dk[t * m..(t + 1) * m], Some(wb_mut(g, sp.wk, sp.bk)), Some(&mut *dat));
                affine_back(sp.wv.of(p), at, &dv[t * m..(t + 1) * m], Some(wb_mut(g, sp.wv, sp.bv)), Some(dat));
            }
            for t in 0..t_len {
                layer_norm_back(
                    &c.ln1[t],
                    sp.ln1_g.of(p),
                    &da[t * m..(t + 1) * m],
                    Some(wb_mut(g, sp.ln1_g, sp.ln1_b)),
                    &mut dxin[t * m..(t + 1) * m],
                );
            }
            dx = dxin;
        }

        for t in 0..t_len {
            let dxt = &dx[t * m..(t + 1) * m];
            for (gp, d) in g[lay.pos.off + t * m..lay.pos.off + (t + 1) * m].iter_mut().zip(dxt) {
                *gp += d;
            }
            affine_back(
                lay.w_in.of(p),
                &ctx[t * din..(t + 1) * din],
                dxt,
                Some(wb_mut(g, lay.w_in, lay.b_in)),
                None,
            );
        }
    }

    fn head(&self, latent: &[f64], cov: &[f64], cs_z: &[f64], mut dropout: Option<&mut ChaCha8Rng>) -> (Vec<f64>, HeadCache) {
        let (p, lay) = (self.p, self.lay);
        let hd = self.cfg.head_dim();
        let rate = self.cfg.dropout;
        let mut h: Vec<f64> = latent.iter().chain(cov).copied().collect();
        let n = lay.blocks.len();
        let (mut hs, mut rs, mut acts, mut masks) =
            (Vec::with_capacity(n + 1), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut out = vec![0.0; hd];
        for b in &lay.blocks {
            let mut r = vec![0.0; hd];
            affine(b.w1.of(p), b.b1.of(p), &h, &mut r);
            let mask: Vec<f64> = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => (0..hd)
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / (1.0 - rate) })
                    .collect(),
                _ => Vec::new(),
            };
            let a: Vec<f64> = r
                .iter()
                .enumerate()
                .map(|(i, &ri)| gelu(ri) * mask.get(i).copied().unwrap_or(1.0))
                .collect();
            affine(b.w2.of(p), b.b2.of(p), &a, &mut out);
            hs.push(h.clone());
            for (hi, oi) in h.iter_mut().zip(&out) {
                *hi += oi;
            }
            rs.push(r);
            acts.push(a);
            masks.push(mask);
        }
        let u: Vec<f64> = h.iter().chain(cs_z).copied().collect();
        let mut y = vec![0.0; self.cfg.horizons];
        affine(lay.wf.of(p), lay.bf.of(p), &u, &mut y);
        for (yi, c) in y.iter_mut().zip(cs_z) {
            *yi += c;
        }
        hs.push(h);
        (y, HeadCache { hs, rs, acts, masks, u })
    }

    /// Returns the gradient with respect to the latent `L`.
    fn head_back(&self, cache: &HeadCache, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let (p, lay) = (self.p, self.lay);
        let hd = self.cfg.head_dim();
        let mut du = vec![0.0; cache.u.len()];
        affine_back(lay.wf.of(p), &cache.u, dy, Some(wb_mut(g, lay.wf, lay.bf)), Some(&mut du));
        let mut dh = du[..hd].to_vec();
        for (j, b) in lay.blocks.iter().enumerate().rev() {
            let mut da = vec![0.0; hd];
            affine_back(b.w2.of(p), &cache.acts[j], &dh, Some(wb_mut(g, b.w2, b.b2)), Some(&mut da));
            let mask = &cache.masks[j];
            let dr: Vec<f64> = da
                .iter()
                .enumerate()
                .map(|(i, d)| d * gelu_grad(cache.rs[j][i]) * mask.get(i).copied().unwrap_or(1.0))
                .collect();
            let mut dprev = dh.clone();
            affine_back(b.w1.of(p), &cache.hs[j], &dr, Some(wb_mut(g, b.w1, b.b1)), Some(&mut dprev));
            dh = dprev;
        }
        dh.truncate(self.cfg.model_dim);
        dh
    }

    fn forward(&self, input: &WindowInput) -> Vec<f64> {
        let (latent, _) = self.encode(&input.context);
        self.head(&latent, &input.covariates, &input.cs_z, None).0
    }

    /// Squared-error loss summed over horizons for one example, with its
    /// gradient (scaled by `weight`) accumulated into `g`.
    fn accumulate(
        &self,
        ex: &Example,
        trainable: Trainable,
        weight: f64,
        dropout: Option<&mut ChaCha8Rng>,
        g: &mut [f64],
    ) -> f64 {
        let (latent, enc) = self.encode(&ex.input.context);
        let (y, head) = self.head(&latent, &ex.input.covariates, &ex.input.cs_z, dropout);
        let mut loss = 0.0;
        let dy: Vec<f64> = y
            .iter()
            .zip(&ex.target)
            .map(|(a, b)| {
                loss += (a - b).powi(2);
                2.0 * (a - b) * weight
            })
            .collect();
        let dl = self.head_back(&head, &dy, g);
        if trainable == Trainable::All {
            self.encode_back(&ex.input.context, &enc, &dl, g);
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ForecasterConfig,
    features: FeatureConfig,
    target_stats: NormStats,
    input_stats: InputStats,
}

#[derive(Debug, Clone)]
pub struct ForecasterModel {
    pub config: ForecasterConfig,
    pub features: FeatureConfig,
    pub target_stats: NormStats,
    pub input_stats: InputStats,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for ForecasterModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.features == other.features
            && self.target_stats == other.target_stats
            && self.input_stats == other.input_stats
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ForecasterModel {
    /// Seeded initialization; the final head layer starts at zero so a fresh
    /// model predicts the clear-sky skip exactly.
    pub fn init(config: ForecasterConfig, features: FeatureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.input_dim != features.input_dim() {
            return Err(Error::DimMismatch {
                expected: features.input_dim(),
                got: config.input_dim,
            });
        }
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for t in &layout.tensors {
            let dst = &mut params[t.span.off..t.span.off + t.span.len];
            match t.init {
                Init::Zeros => {}
                Init::Ones => dst.fill(1.0),
                Init::Normal(std) => {
                    for v in dst {
                        *v = std * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
        Ok(Self {
            input_stats: InputStats::identity(&config),
            config,
            features,
            target_stats: NormStats { mean: 0.0, std: 1.0 },
            layout,
            params,
        })
    }

    pub(crate) fn net(&self) -> Net<'_> {
        Net {
            cfg: &self.config,
            lay: &self.layout,
            p: &self.params,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn encoder_params(&self) -> &[f64] {
        &self.params[..self.layout.head_start]
    }

    pub fn encoder_bytes(&self) -> Vec<u8> {
        self.encoder_params().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|t| t.span.of(&self.params))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let span = self.layout.find(name)?.span;
        Some(&mut self.params[span.off..span.off + span.len])
    }

    pub fn tensor_shape(&self, name: &str) -> Option<(usize, usize)> {
        self.layout.find(name).map(|t| t.shape)
    }

    /// Standardizes a raw window with this model's statistics.
    pub fn prepare(&self, raw: &RawWindow) -> Result<WindowInput> {
        self.prepare_with(raw, self.target_stats)
    }

    /// As [`prepare`](Self::prepare) but z-scoring clear-sky GHI with
    /// `target_stats` instead of the model's own.
    pub fn prepare_with(&self, raw: &RawWindow, target_stats: NormStats) -> Result<WindowInput> {
        let cfg = &self.config;
        if raw.context.len() != cfg.context {
            return Err(Error::invalid(format!(
                "window has {} context rows, model expects {}",
                raw.context.len(),
                cfg.context
            )));
        }
        let mut context = Vec::with_capacity(cfg.context * cfg.input_dim);
        for row in &raw.context {
            if row.len() != cfg.input_dim {
                return Err(Error::DimMismatch {
                    expected: cfg.input_dim,
                    got: row.len(),
                });
            }
            context.extend(row.iter().zip(&self.input_stats.features).map(|(v, s)| s.apply(*v)));
        }
        if raw.covariates.len() != cfg.covariate_dim {
            return Err(Error::DimMismatch {
                expected: cfg.covariate_dim,
                got: raw.covariates.len(),
            });
        }
        if raw.clearsky_ghi.len() != cfg.horizons {
            return Err(Error::DimMismatch {
                expected: cfg.horizons,
                got: raw.clearsky_ghi.len(),
            });
        }
        Ok(WindowInput {
            context,
            covariates: raw
                .covariates
                .iter()
                .zip(&self.input_stats.covariates)
                .map(|(v, s)| s.apply(*v))
                .collect(),
            cs_z: raw.clearsky_ghi.iter().map(|&c| target_stats.apply(c)).collect(),
        })
    }

    pub fn example(&self, raw: &RawWindow) -> Result<Example> {
        self.example_with(raw, self.target_stats)
    }

    pub fn example_with(&self, raw: &RawWindow, target_stats: NormStats) -> Result<Example> {
        if raw.target.len() != self.config.horizons {
            return Err(Error::DimMismatch {
                expected: self.config.horizons,
                got: raw.target.len(),
            });
        }
        Ok(Example {
            input: self.prepare_with(raw, target_stats)?,
            target: raw.target.iter().map(|&y| target_stats.apply(y)).collect(),
        })
    }

    fn check_input(&self, input: &WindowInput) -> Result<()> {
        let cfg = &self.config;
        let checks = [
            (cfg.context * cfg.input_dim, input.context.len()),
            (cfg.covariate_dim, input.covariates.len()),
            (cfg.horizons, input.cs_z.len()),
        ];
        for (expected, got) in checks {
            if expected != got {
                return Err(Error::DimMismatch { expected, got });
            }
        }
        Ok(())
    }

    /// Predictions in normalized target space.
    pub fn forward(&self, input: &WindowInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let y = self.net().forward(input);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite forecaster output".into()));
        }
        Ok(y)
    }

    /// The pooled encoder output `L`.
    pub fn encode(&self, input: &WindowInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.net().encode(&input.context).0)
    }

    /// Mean squared error over all horizons and examples, and its gradient.
    /// Parameters outside `trainable` get exactly zero gradient.
    pub fn loss_and_grad(&self, examples: &[Example], trainable: Trainable) -> Result<(f64, Vec<f64>)> {
        if examples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut g = vec![0.0; self.layout.total];
        let weight = 1.0 / (examples.len() * self.config.horizons) as f64;
        let mut loss = 0.0;
        for ex in examples {
            self.check_input(&ex.input)?;
            loss += self.net().accumulate(ex, trainable, weight, None, &mut g);
        }
        Ok((loss * weight, g))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config,
            features: self.features,
            target_stats: self.target_stats,
            input_stats: self.input_stats.clone(),
        })?;
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a forecaster checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported forecaster checkpoint version {version}")));
        }
        let header_len = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)?;
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        let n = r.u64()? as usize;
        if n != layout.total {
            return Err(Error::Format(format!(
                "checkpoint has {n} parameters, config implies {}",
                layout.total
            )));
        }
        let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes in forecaster checkpoint".into()));
        }
        if header.input_stats.features.len() != header.config.input_dim
            || header.input_stats.covariates.len() != header.config.covariate_dim
        {
            return Err(Error::Format("input statistics do not match config".into()));
        }
        Ok(Self {
            config: header.config,
            features: header.features,
            target_stats: header.target_stats,
            input_stats: header.input_stats,
            layout,
            params,
        })
    }
}

/// Mean over all `N x H` squared errors.
pub fn loss_forecast(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::invalid("prediction and target batches differ in size or are empty"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::DimMismatch {
                expected: t.len(),
                got: p.len(),
            });
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += p.len();
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ForecasterConfig, FeatureConfig) {
        let fc = FeatureConfig {
            d: 3,
            k: 0,
            p: 0,
            feature_schema_version: 1,
            phase_encodings: false,
        };
        let cfg = ForecasterConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ff_dim: 8,
            context: 2,
            horizons: 1,
            mlp_blocks: 2,
            input_dim: 3,
            covariate_dim: 2,
            activation: Activation::Gelu,
            dropout: 0.0,
            pooling: Pooling::Mean,
        };
        (cfg, fc)
    }

    fn input(cfg: &ForecasterConfig, seed: u64) -> WindowInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<_>>();
        WindowInput {
            context: draw(cfg.context * cfg.input_dim),
            covariates: draw(cfg.covariate_dim),
            cs_z: draw(cfg.horizons),
        }
    }

    #[test]
    fn fresh_model_returns_clearsky_skip() {
        let (cfg, fc) = tiny();
        let m = ForecasterModel::init(cfg, fc, 3).unwrap();
        let x = input(&cfg, 1);
        assert_eq!(m.forward(&x).unwrap(), x.cs_z);
    }

    #[test]
    fn heads_must_divide_model_dim() {
        let (mut cfg, fc) = tiny();
        cfg.heads = 3;
        assert!(matches!(ForecasterModel::init(cfg, fc, 0), Err(Error::Config(_))));
    }

    #[test]
    fn full_layout_shapes() {
        let fc = FeatureConfig::new(1280, true);
        let cfg = ForecasterConfig::full(&fc);
        assert_eq!((cfg.layers, cfg.heads, cfg.model_dim, cfg.mlp_blocks), (6, 8, 1104, 10));
        assert_eq!(cfg.covariate_dim, 44);
        let lay = Layout::new(&cfg);
        assert_eq!(lay.tensors.iter().map(|t| t.span.len).sum::<usize>(), lay.num_params());
        assert_eq!(lay.tensor_names().filter(|n| n.starts_with("layer")).count(), 6 * 16);
        assert_eq!(lay.find("head.final.w").unwrap().shape, (4, 1104 + 44 + 4));
    }

    #[test]
    fn loss_definition() {
        assert_eq!(loss_forecast(&[vec![1.0, 3.0]], &[vec![0.0, 0.0]]).unwrap(), 5.0);
        assert_eq!(loss_forecast(&[vec![2.0]], &[vec![2.0]]).unwrap(), 0.0);
        assert!(loss_forecast(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (cfg, fc) = tiny();
        let m = ForecasterModel::init(cfg, fc, 9).unwrap();
        let bytes = m.to_bytes().unwrap();
        let back = ForecasterModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(ForecasterModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn head_only_gradient_leaves_encoder_zero() {
        let (cfg, fc) = tiny();
        let mut m = ForecasterModel::init(cfg, fc, 2).unwrap();
        m.tensor_mut("head.final.w").unwrap().fill(0.3);
        let ex = Example {
            input: input(&cfg, 5),
            target: vec![0.7],
        };
        let (_, g) = m.loss_and_grad(std::slice::from_ref(&ex), Trainable::HeadOnly).unwrap();
        let hs = m.layout().head_start();
        assert!(g[..hs].iter().all(|v| *v == 0.0));
        assert!(g[hs..].iter().any(|v| *v != 0.0));
    }
}
