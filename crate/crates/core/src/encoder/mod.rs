//! Skeletal-graph pose encoder.
//!
//! Each block updates joints from their summed incoming and outgoing bone
//! features, then bones from their updated endpoints, then runs a causal
//! temporal convolution over both streams with a stride. Strides multiply to
//! 6, taking 30 Hz skeleton frames to 5 Hz embeddings. Joint and bone streams
//! are mean-pooled and mapped to the pose embedding by a final linear layer.

mod state;

pub use state::{aggregate_incoming, aggregate_outgoing, init_graph_state, GraphState};

use std::sync::Arc;

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var, NO_ROW};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BnUpdate, Linear, NormMode};
use crate::play::sequence::FRAMES_PER_STEP;
use crate::play::topology::SkeletonTopology;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub widths: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub d_r: usize,
    /// One convolution weight set for the joint and bone streams.
    pub share_conv: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            widths: vec![16, 32, 32, 64, 64],
            kernels: vec![3; 5],
            strides: vec![2, 3, 1, 1, 1],
            d_r: 64,
            share_conv: true,
        }
    }
}

impl EncoderConfig {
    pub fn n_blocks(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if n == 0 {
            return Err(Error::config("encoder.widths", "need at least one block"));
        }
        if self.kernels.len() != n || self.strides.len() != n {
            return Err(Error::config(
                "encoder.kernels",
                format!(
                    "widths, kernels and strides must have equal lengths ({n}, {}, {})",
                    self.kernels.len(),
                    self.strides.len()
                ),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("encoder.widths", "widths must be >= 1"));
        }
        if self.kernels.contains(&0) {
            return Err(Error::config("encoder.kernels", "kernel sizes must be >= 1"));
        }
        if self.strides.contains(&0) {
            return Err(Error::config("encoder.strides", "strides must be >= 1"));
        }
        let prod: usize = self.strides.iter().product();
        if prod != FRAMES_PER_STEP {
            return Err(Error::config(
                "encoder.strides",
                format!("stride product is {prod}, must be {FRAMES_PER_STEP}"),
            ));
        }
        if self.d_r == 0 {
            return Err(Error::config("encoder.d_r", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub vertex: Linear,
    pub vertex_bn: BatchNorm,
    pub edge: Linear,
    pub edge_bn: BatchNorm,
    pub conv_vertex: Linear,
    pub conv_edge: Linear,
    pub kernel: usize,
    pub stride: usize,
}

/// Row layout of a batch of skeleton sequences: rows are
/// `(sequence, frame, entity)` in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub n_seq: usize,
    pub frames: usize,
}

impl SeqLayout {
    pub fn rows(&self, entities: usize) -> usize {
        self.n_seq * self.frames * entities
    }

    pub fn strided(&self, stride: usize) -> SeqLayout {
        SeqLayout {
            n_seq: self.n_seq,
            frames: self.frames.div_ceil(stride),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEncoder {
    pub cfg: EncoderConfig,
    pub topology: SkeletonTopology,
    pub blocks: Vec<EncoderBlock>,
    pub out: Linear,
}

/// For each edge row, the joint row of its source (or target) joint.
fn endpoint_rows(topo: &SkeletonTopology, layout: SeqLayout, source: bool) -> Arc<[u32]> {
    let (nj, ne) = (topo.n_joints(), topo.n_edges());
    let mut idx = Vec::with_capacity(layout.rows(ne));
    for sf in 0..layout.n_seq * layout.frames {
        for &(m, j) in topo.edges() {
            let v = if source { m } else { j };
            idx.push((sf * nj + v) as u32);
        }
    }
    Arc::from(idx)
}

/// Tap `k` of a causal strided convolution: output `(s, τ', x)` reads input
/// `(s, stride·τ' - k, x)`, or nothing before the first frame.
fn tap_rows(layout: SeqLayout, entities: usize, stride: usize, k: usize) -> Arc<[u32]> {
    let out = layout.strided(stride);
    let mut idx = Vec::with_capacity(out.rows(entities));
    for s in 0..layout.n_seq {
        for tau in 0..out.frames {
            let f = (stride * tau) as isize - k as isize;
            for x in 0..entities {
                idx.push(if f >= 0 {
                    ((s * layout.frames + f as usize) * entities + x) as u32
                } else {
                    NO_ROW
                });
            }
        }
    }
    Arc::from(idx)
}

/// Causal strided convolution over `(sequence, frame, entity)` rows.
///
/// `conv.w` stacks the per-tap weights `W_0..W_{K-1}` vertically; output
/// frame `τ'` is `relu(sum_k x[stride·τ' - k] W_k + b)` with frames before
/// the start treated as zeros.
pub fn causal_conv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    conv: &Linear,
    kernel: usize,
    stride: usize,
    layout: SeqLayout,
    entities: usize,
) -> Var {
    let taps: Vec<Var> = (0..kernel)
        .map(|k| g.gather_rows(x, tap_rows(layout, entities, stride, k)))
        .collect();
    let cols = if taps.len() == 1 { taps[0] } else { g.concat_cols(&taps) };
    let y = conv.forward(g, cols);
    g.relu(y)
}

impl PoseEncoder {
    pub fn new<T: Real, R: Rng>(
        cfg: EncoderConfig,
        topology: SkeletonTopology,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if topology.n_joints() < 2 {
            return Err(Error::Topology("the encoder needs at least one bone".into()));
        }
        let mut blocks = Vec::with_capacity(cfg.n_blocks());
        let (mut dv, mut de) = (3usize, 3usize);
        for (b, &w) in cfg.widths.iter().enumerate() {
            let name = format!("encoder.block{b}");
            let vertex = Linear::new(store, &format!("{name}.vertex"), dv + 2 * de, w, rng);
            let vertex_bn = BatchNorm::new(store, &format!("{name}.vertex_bn"), w);
            let edge = Linear::new(store, &format!("{name}.edge"), de + 2 * w, w, rng);
            let edge_bn = BatchNorm::new(store, &format!("{name}.edge_bn"), w);
            let k = cfg.kernels[b];
            let (conv_vertex, conv_edge) = if cfg.share_conv {
                let c = Linear::new(store, &format!("{name}.conv"), k * w, w, rng);
                (c, c)
            } else {
                (
                    Linear::new(store, &format!("{name}.conv_vertex"), k * w, w, rng),
                    Linear::new(store, &format!("{name}.conv_edge"), k * w, w, rng),
                )
            };
            blocks.push(EncoderBlock {
                vertex,
                vertex_bn,
                edge,
                edge_bn,
                conv_vertex,
                conv_edge,
                kernel: k,
                stride: cfg.strides[b],
            });
            dv = w;
            de = w;
        }
        let last = *cfg.widths.last().expect("validated non-empty");
        let out = Linear::new(store, "encoder.out", 2 * last, cfg.d_r, rng);
        Ok(PoseEncoder {
            cfg,
            topology,
            blocks,
            out,
        })
    }

    /// Joint coordinates and bone vectors for every `(player, frame)`, as
    /// constant graph inputs.
    pub fn inputs<T: Real>(&self, g: &mut Graph<T>, joints30: &Array4<f32>) -> Result<(Var, Var, SeqLayout)> {
        let (frames, n, nj, c) = joints30.dim();
        if nj != self.topology.n_joints() || c != 3 {
            return Err(Error::Shape(format!(
                "joint tensor has {nj} joints x {c} coordinates, rig `{}` has {} joints",
                self.topology.name(),
                self.topology.n_joints()
            )));
        }
        if frames == 0 {
            return Err(Error::Shape("no skeleton frames".into()));
        }
        let ne = self.topology.n_edges();
        let layout = SeqLayout { n_seq: n, frames };
        let mut v = Array2::<T>::zeros((layout.rows(nj), 3));
        let mut e = Array2::<T>::zeros((layout.rows(ne), 3));
        for s in 0..n {
            for f in 0..frames {
                let base = (s * frames + f) * nj;
                for j in 0..nj {
                    for a in 0..3 {
                        let x = joints30[[f, s, j, a]];
                        if !x.is_finite() {
                            return Err(Error::NonFinite(format!(
                                "joint {j} of player {s} at frame {f}"
                            )));
                        }
                        v[[base + j, a]] = T::of(x as f64);
                    }
                }
                let ebase = (s * frames + f) * ne;
                for (k, &(m, j)) in self.topology.edges().iter().enumerate() {
                    for a in 0..3 {
                        e[[ebase + k, a]] = v[[base + m, a]] - v[[base + j, a]];
                    }
                }
            }
        }
        Ok((g.constant(v), g.constant(e), layout))
    }

    /// One spatial update: joints first, then bones from the updated joints.
    #[allow(clippy::too_many_arguments)]
    pub fn dgn_block<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: usize,
        h: Var,
        e: Var,
        layout: SeqLayout,
        mode: NormMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> (Var, Var) {
        let blk = &self.blocks[b];
        let nv = layout.rows(self.topology.n_joints());
        let src = endpoint_rows(&self.topology, layout, true);
        let tgt = endpoint_rows(&self.topology, layout, false);
        let e_in = g.scatter_add_rows(e, tgt.clone(), nv);
        let e_out = g.scatter_add_rows(e, src.clone(), nv);
        let cat = g.concat_cols(&[h, e_in, e_out]);
        let hv = blk.vertex.forward(g, cat);
        let hv = blk.vertex_bn.forward(g, hv, mode, updates);
        let h2 = g.relu(hv);
        let hs = g.gather_rows(h2, src);
        let ht = g.gather_rows(h2, tgt);
        let cat = g.concat_cols(&[e, hs, ht]);
        let he = blk.edge.forward(g, cat);
        let he = blk.edge_bn.forward(g, he, mode, updates);
        let e2 = g.relu(he);
        (h2, e2)
    }

    /// Runs every block and the pooling head. Returns rows `(player, step)`
    /// of width `d_r` and the output layout.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        joints30: &Array4<f32>,
        mode: NormMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<(Var, SeqLayout)> {
        let (h, e, layout) = self.inputs(g, joints30)?;
        Ok(self.forward_from(g, h, e, layout, mode, updates))
    }

    pub fn forward_from<T: Real>(
        &self,
        g: &mut Graph<T>,
        mut h: Var,
        mut e: Var,
        mut layout: SeqLayout,
        mode: NormMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> (Var, SeqLayout) {
        let (nj, ne) = (self.topology.n_joints(), self.topology.n_edges());
        for (b, blk) in self.blocks.iter().enumerate() {
            let (h2, e2) = self.dgn_block(g, b, h, e, layout, mode, updates);
            h = causal_conv(g, h2, &blk.conv_vertex, blk.kernel, blk.stride, layout, nj);
            e = causal_conv(g, e2, &blk.conv_edge, blk.kernel, blk.stride, layout, ne);
            layout = layout.strided(blk.stride);
        }
        let cells = layout.n_seq * layout.frames;
        let pool = |g: &mut Graph<T>, x: Var, entities: usize| {
            let idx: Vec<u32> = (0..cells)
                .flat_map(|c| std::iter::repeat_n(c as u32, entities))
                .collect();
            let s = g.scatter_add_rows(x, Arc::from(idx), cells);
            g.scale(s, T::of(1.0 / entities as f64))
        };
        let hp = pool(g, h, nj);
        let ep = pool(g, e, ne);
        let cat = g.concat_cols(&[hp, ep]);
        (self.out.forward(g, cat), layout)
    }

    /// Inference-mode embeddings, `(steps, players, d_r)`.
    pub fn embed<T: Real>(&self, store: &ParamStore<T>, joints30: &Array4<f32>) -> Result<Array3<T>> {
        let mut g = Graph::new(store);
        let (r, layout) = self.forward(&mut g, joints30, NormMode::Running, &mut Vec::new())?;
        let v = g.value(r);
        let d = v.ncols();
        Ok(Array3::from_shape_fn((layout.frames, layout.n_seq, d), |(t, s, k)| {
            v[[s * layout.frames + t, k]]
        }))
    }
}

#[cfg(test)]
mod tests;
