//! Masked multi-entity transformer: feature assembly, the causal mask, a
//! pre-norm encoder stack and the trajectory and event heads.

mod features;
mod mask;

pub use features::{FeatureParams, FeatureSource};
pub use mask::{build_attention_mask, pack_mask, unpack_mask, AttentionMask, RowIndex, RowKind};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::objectives::{N_BINS, N_REGIONS};
use crate::play::N_EVENTS;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    /// Model width F.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward hidden width as a multiple of F.
    pub ffn_mult: usize,
    /// Width of the learned player-identity embedding.
    pub id_width: usize,
    /// Longest supported number of usable steps (timestep embedding rows).
    pub max_steps: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            width: 64,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            id_width: 16,
            max_steps: 128,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("transformer.width", self.width),
            ("transformer.layers", self.layers),
            ("transformer.heads", self.heads),
            ("transformer.ffn_mult", self.ffn_mult),
            ("transformer.id_width", self.id_width),
            ("transformer.max_steps", self.max_steps),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::config(
                "transformer.heads",
                format!("width {} is not divisible by {} heads", self.width, self.heads),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Pre-norm stack: `x += attn(ln1(x))`, `x += ffn(ln2(x))`. No final norm,
/// so zeroed branches leave the input untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerStack {
    pub layers: Vec<EncoderLayer>,
    pub heads: usize,
    pub width: usize,
}

impl TransformerStack {
    pub fn new<T: Real, R: Rng>(cfg: &TransformerConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.width;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("transformer.layer{l}");
                EncoderLayer {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), f),
                    q: Linear::new(store, &format!("{p}.q"), f, f, rng),
                    k: Linear::new(store, &format!("{p}.k"), f, f, rng),
                    v: Linear::new(store, &format!("{p}.v"), f, f, rng),
                    o: Linear::new(store, &format!("{p}.o"), f, f, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), f),
                    ff1: Linear::new(store, &format!("{p}.ff1"), f, f * cfg.ffn_mult, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), f * cfg.ffn_mult, f, rng),
                }
            })
            .collect();
        Ok(TransformerStack {
            layers,
            heads: cfg.heads,
            width: f,
        })
    }

    /// Masked multi-head self-attention of already-normalized rows.
    pub fn attention<T: Real>(&self, g: &mut Graph<T>, layer: &EncoderLayer, x: Var, mask: &Array2<bool>) -> Var {
        let (q, k, v) = (layer.q.forward(g, x), layer.k.forward(g, x), layer.v.forward(g, x));
        let dh = self.width / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let heads: Vec<Var> = (0..self.heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let s = g.matmul_nt(qh, kh);
                let s = g.scale(s, scale);
                let a = g.masked_softmax(s, mask);
                g.matmul(a, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        layer.o.forward(g, cat)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, mut x: Var, mask: &Array2<bool>) -> Result<Var> {
        let (rows, cols) = g.value(x).dim();
        if cols != self.width || mask.dim() != (rows, rows) {
            return Err(Error::Shape(format!(
                "transformer expects rows of width {} and a {rows} x {rows} mask, got width {cols} and mask {:?}",
                self.width,
                mask.dim()
            )));
        }
        for layer in &self.layers {
            let h = layer.ln1.forward(g, x);
            let a = self.attention(g, layer, h, mask);
            x = g.add(x, a);
            let h = layer.ln2.forward(g, x);
            let h = layer.ff1.forward(g, h);
            let h = g.relu(h);
            let h = layer.ff2.forward(g, h);
            x = g.add(x, h);
        }
        Ok(x)
    }
}

/// Trajectory head (softmax over displacement bins) and one logistic event
/// projection per temporal region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub trajectory: Linear,
    pub events: [Linear; N_REGIONS],
}

impl Heads {
    pub fn new<T: Real, R: Rng>(width: usize, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let trajectory = Linear::new(store, "heads.trajectory", width, N_BINS, rng);
        let events = crate::objectives::Region::ALL
            .map(|r| Linear::new(store, &format!("heads.events.{}", r.name()), width, N_EVENTS, rng));
        Heads { trajectory, events }
    }

    /// Bin logits, one row per input row.
    pub fn trajectory_logits<T: Real>(&self, g: &mut Graph<T>, zhat: Var) -> Var {
        self.trajectory.forward(g, zhat)
    }

    /// Event logits, region-major: columns `region * 9 + event`.
    pub fn event_logits<T: Real>(&self, g: &mut Graph<T>, zhat: Var) -> Var {
        let parts: Vec<Var> = self.events.iter().map(|l| l.forward(g, zhat)).collect();
        g.concat_cols(&parts)
    }
}

#[cfg(test)]
mod tests;
