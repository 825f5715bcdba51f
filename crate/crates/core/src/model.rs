//! Linear or one-hidden-layer scorer.
//!
//! Parameters live in one flat vector so the optimizer can treat them
//! uniformly. Layout, row-major:
//!
//! ```text
//! [W1 (h x d), b1 (h)]   only with a hidden layer
//! W (L x m)              m = h with a hidden layer, d otherwise
//! b (L)                  only without normalization
//! ```
//!
//! With `normalize`, the last activation `a` and every class row `w_c` are
//! L2-normalized and the cosine scores are multiplied by `score_scale`:
//! `s_c = score_scale * <w_c, a> / (|w_c| |a|)`. The backward pass
//! differentiates through both normalizations.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::noise::rng_from_seed;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hidden: Option<usize>,
    pub normalize: bool,
    pub score_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            normalize: false,
            score_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    dim: usize,
    classes: usize,
    config: ModelConfig,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, reused by [`Model::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pre: Vec<f64>,
    act: Vec<f64>,
    act_norm: f64,
    pub scores: Vec<f64>,
}

/// Per-step cache of the class-row norms (empty without normalization).
#[derive(Debug, Clone, Default)]
pub struct RowNorms(Vec<f64>);

impl Model {
    /// Random init: weights `N(0, 1/fan_in)`, biases zero.
    pub fn new(dim: usize, classes: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        if dim == 0 || classes < 2 || config.hidden == Some(0) {
            return Err(Error::InvalidArgument(format!(
                "invalid model shape d={dim} L={classes} hidden={:?}",
                config.hidden
            )));
        }
        if !(config.score_scale > 0.0 && config.score_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "score scale must be positive, got {}",
                config.score_scale
            )));
        }
        let mut m = Self {
            dim,
            classes,
            config,
            params: Vec::new(),
        };
        m.params = vec![0.0; m.num_params()];
        let mut rng = rng_from_seed(seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, params: &mut [f64]| {
            let sd = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = sd * rng.sample::<f64, _>(StandardNormal);
            }
        };
        if let Some(h) = config.hidden {
            fill(0..h * dim, dim, &mut m.params);
        }
        let w = m.out_offset();
        fill(w..w + classes * m.width(), m.width(), &mut m.params);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        let hidden = self.config.hidden.map_or(0, |h| h * self.dim + h);
        let bias = if self.config.normalize { 0 } else { self.classes };
        hidden + self.classes * self.width() + bias
    }

    /// Width of the activation fed to the class layer.
    fn width(&self) -> usize {
        self.config.hidden.unwrap_or(self.dim)
    }

    fn out_offset(&self) -> usize {
        self.config.hidden.map_or(0, |h| h * self.dim + h)
    }

    fn out_weights(&self) -> &[f64] {
        let o = self.out_offset();
        &self.params[o..o + self.classes * self.width()]
    }

    pub fn row_norms(&self) -> RowNorms {
        if !self.config.normalize {
            return RowNorms::default();
        }
        RowNorms(
            self.out_weights()
                .chunks_exact(self.width())
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR))
                .collect(),
        )
    }

    pub fn forward(&self, norms: &RowNorms, x: &[f64], t: &mut Trace) {
        debug_assert_eq!(x.len(), self.dim);
        let m = self.width();
        t.act.clear();
        t.pre.clear();
        match self.config.hidden {
            Some(h) => {
                let (w1, b1) = self.params[..h * self.dim + h].split_at(h * self.dim);
                for (row, b) in w1.chunks_exact(self.dim).zip(b1) {
                    t.pre.push(dot(row, x) + b);
                }
                t.act.extend(t.pre.iter().map(|&v| v.max(0.0)));
            }
            None => t.act.extend_from_slice(x),
        }
        let w = self.out_weights();
        t.scores.clear();
        if self.config.normalize {
            t.act_norm = dot(&t.act, &t.act).sqrt().max(NORM_FLOOR);
            let scale = self.config.score_scale / t.act_norm;
            for (row, n) in w.chunks_exact(m).zip(&norms.0) {
                t.scores.push(scale * dot(row, &t.act) / n);
            }
        } else {
            let b = &self.params[self.out_offset() + self.classes * m..];
            let scale = self.config.score_scale;
            for (row, b) in w.chunks_exact(m).zip(b) {
                t.scores.push(scale * (dot(row, &t.act) + b));
            }
        }
    }

    /// Accumulates `d loss / d params` into `grad`, given `d loss / d scores`.
    pub fn backward(&self, norms: &RowNorms, x: &[f64], t: &Trace, g: &[f64], grad: &mut [f64]) {
        let m = self.width();
        let o = self.out_offset();
        let alpha = self.config.score_scale;
        let mut d_act = vec![0.0; m];
        let (head, tail) = grad.split_at_mut(o);
        let w = self.out_weights();
        if self.config.normalize {
            let inv_a = 1.0 / t.act_norm;
            // d/d(unit activation) accumulated here, projected below
            for (c, (row, gw)) in w.chunks_exact(m).zip(tail.chunks_exact_mut(m)).enumerate() {
                if g[c] == 0.0 {
                    continue;
                }
                let inv_w = 1.0 / norms.0[c];
                let cos = t.scores[c] / alpha;
                let f = alpha * g[c] * inv_w;
                for j in 0..m {
                    let a_hat = t.act[j] * inv_a;
                    let w_hat = row[j] * inv_w;
                    gw[j] += f * (a_hat - cos * w_hat);
                    d_act[j] += alpha * g[c] * w_hat;
                }
            }
            let proj: f64 = d_act.iter().zip(&t.act).map(|(u, a)| u * a * inv_a).sum();
            for (d, a) in d_act.iter_mut().zip(&t.act) {
                *d = (*d - proj * a * inv_a) * inv_a;
            }
        } else {
            let (gw, gb) = tail.split_at_mut(self.classes * m);
            for (c, (row, gw)) in w.chunks_exact(m).zip(gw.chunks_exact_mut(m)).enumerate() {
                let gc = alpha * g[c];
                if gc == 0.0 {
                    continue;
                }
                gb[c] += gc;
                for j in 0..m {
                    gw[j] += gc * t.act[j];
                    d_act[j] += gc * row[j];
                }
            }
        }
        if let Some(h) = self.config.hidden {
            let (gw1, gb1) = head.split_at_mut(h * self.dim);
            for (i, (gr, gb)) in gw1.chunks_exact_mut(self.dim).zip(gb1).enumerate() {
                if t.pre[i] <= 0.0 || d_act[i] == 0.0 {
                    continue;
                }
                *gb += d_act[i];
                for (g, xv) in gr.iter_mut().zip(x) {
                    *g += d_act[i] * xv;
                }
            }
        }
    }

    /// Scores for one input.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut t = Trace::default();
        self.forward(&self.row_norms(), x, &mut t);
        t.scores
    }

    /// Text checkpoint: a `key value` header, then one parameter per line.
    /// Values use Rust's shortest round-trip float formatting, so reading a
    /// checkpoint back reproduces the model bit for bit.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "noised-topk-model 1")?;
        writeln!(w, "dim {}", self.dim)?;
        writeln!(w, "classes {}", self.classes)?;
        match self.config.hidden {
            Some(h) => writeln!(w, "hidden {h}")?,
            None => writeln!(w, "hidden none")?,
        }
        writeln!(w, "normalize {}", self.config.normalize)?;
        writeln!(w, "score_scale {}", self.config.score_scale)?;
        writeln!(w, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(w, "{p}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("checkpoint ends before `{key}`")))??;
            if key.is_empty() {
                return Ok(line.trim().to_string());
            }
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(Error::Parse(format!("expected `{key}`, found `{line}`"))),
            }
        };
        let num = |v: String| v.parse::<usize>().map_err(|e| Error::Parse(format!("{v}: {e}")));
        if next("noised-topk-model")? != "1" {
            return Err(Error::Parse("unsupported checkpoint version".into()));
        }
        let dim = num(next("dim")?)?;
        let classes = num(next("classes")?)?;
        let hidden = match next("hidden")?.as_str() {
            "none" => None,
            v => Some(num(v.to_string())?),
        };
        let normalize = next("normalize")?
            .parse()
            .map_err(|_| Error::Parse("normalize must be true or false".into()))?;
        let score_scale: f64 = next("score_scale")?
            .parse()
            .map_err(|_| Error::Parse("bad score_scale".into()))?;
        let config = ModelConfig {
            hidden,
            normalize,
            score_scale,
        };
        let mut model = Model::new(dim, classes, config, 0)?;
        let n = num(next("params")?)?;
        if n != model.num_params() {
            return Err(Error::Parse(format!(
                "checkpoint has {n} parameters, shape needs {}",
                model.num_params()
            )));
        }
        for p in model.params.iter_mut() {
            let v = next("")?;
            *p = v.parse().map_err(|_| Error::Parse(format!("bad parameter `{v}`")))?;
        }
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
