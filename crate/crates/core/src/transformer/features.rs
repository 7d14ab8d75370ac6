//! Start, state and look-ahead feature rows.
//!
//! With `p~` the court-normalized position and `s = [p~, r, n]` the player
//! state (position, pose embedding, shoulder normal):
//!
//! * start row: `g_r([psi, p~_0, s_0]) + e_start`
//! * state row: `g_z([psi, p~_t, s_t]) + e_t`
//! * look-ahead row: `g_u([psi, p~_{t+1}, s_t, dp_t / 5, s_{t+1} - s_t]) + e_t`
//!
//! where `psi` is the player-identity embedding and `e_t` a learned timestep
//! embedding. Step `T - 1` only supplies look-ahead targets, so there are
//! `T - 1` usable steps.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::Rng;

use super::mask::{RowIndex, RowKind};
use super::TransformerConfig;
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp2;
use crate::play::geometry::{COURT_LENGTH, COURT_WIDTH};
use crate::real::Real;

/// Displacements are divided by this many feet before entering `g_u`.
pub const DISPLACEMENT_SCALE: f64 = 5.0;

/// Per-play constants feeding the assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSource {
    /// (T, N, 2) court feet.
    pub positions: Array3<f32>,
    /// (T, N, 2) unit shoulder normals, or zeros when the channel is dropped.
    pub normals: Array3<f64>,
    /// Identity-table row per player.
    pub ids: Vec<usize>,
}

impl FeatureSource {
    pub fn n_steps(&self) -> usize {
        self.positions.dim().0
    }

    pub fn n_players(&self) -> usize {
        self.positions.dim().1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub identities: Vec<String>,
    pub psi: ParamId,
    pub g_z: Mlp2,
    pub g_u: Mlp2,
    pub g_r: Mlp2,
    pub step_embedding: ParamId,
    pub start_embedding: ParamId,
    pub pose_width: usize,
    pub width: usize,
}

fn normalized(p: [f64; 2]) -> [f64; 2] {
    let (hx, hy) = (COURT_LENGTH / 2.0, COURT_WIDTH / 2.0);
    [(p[0] - hx) / hx, (p[1] - hy) / hy]
}

impl FeatureParams {
    pub fn new<T: Real, R: Rng>(
        cfg: &TransformerConfig,
        identities: Vec<String>,
        pose_width: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let f = cfg.width;
        let state = 2 + pose_width + 2;
        let z_in = cfg.id_width + 2 + state;
        let u_in = cfg.id_width + 2 + state + 2 + state;
        let psi = store.add(
            "features.psi",
            Array2::from_shape_fn((identities.len(), cfg.id_width), |_| T::of(rng.random_range(-0.1..0.1))),
            true,
        );
        let g_z = Mlp2::new(store, "features.g_z", z_in, f, f, rng);
        let g_u = Mlp2::new(store, "features.g_u", u_in, f, f, rng);
        let g_r = Mlp2::new(store, "features.g_r", z_in, f, f, rng);
        let step_embedding = store.add(
            "features.step_embedding",
            Array2::from_shape_fn((cfg.max_steps, f), |_| T::of(rng.random_range(-0.1..0.1))),
            true,
        );
        let start_embedding = store.add(
            "features.start_embedding",
            Array2::from_shape_fn((1, f), |_| T::of(rng.random_range(-0.1..0.1))),
            true,
        );
        FeatureParams {
            identities,
            psi,
            g_z,
            g_u,
            g_r,
            step_embedding,
            start_embedding,
            pose_width,
            width: f,
        }
    }

    /// Identity-table rows for a play's player ids.
    pub fn lookup_ids(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.identities
                    .iter()
                    .position(|k| k == id)
                    .ok_or_else(|| Error::UnknownPlayer(id.clone()))
            })
            .collect()
    }

    /// Assembles the input matrix in [`RowIndex`] layout. `pose` holds rows
    /// `player * T + t` of width `pose_width`, or `None` for a zeroed pose
    /// channel. Slot `k` of every block holds player `order[k]`.
    pub fn assemble<T: Real>(
        &self,
        g: &mut Graph<T>,
        src: &FeatureSource,
        pose: Option<Var>,
        order: &[usize],
    ) -> Result<(Var, RowIndex)> {
        let (t_n, n) = (src.n_steps(), src.n_players());
        if t_n < 2 {
            return Err(Error::Shape(format!("feature assembly needs at least 2 steps, got {t_n}")));
        }
        let t_eff = t_n - 1;
        let max_steps = g.params().get(self.step_embedding).nrows();
        if t_eff > max_steps {
            return Err(Error::Shape(format!(
                "{t_eff} usable steps exceed the timestep embedding's {max_steps}"
            )));
        }
        if src.normals.dim() != (t_n, n, 2) || src.ids.len() != n {
            return Err(Error::Shape("normals or ids do not match positions".into()));
        }
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("player order {order:?} is not a permutation of 0..{n}")));
        }
        if let Some(r) = pose {
            let d = g.value(r).dim();
            if d != (n * t_n, self.pose_width) {
                return Err(Error::Shape(format!(
                    "pose embeddings are {d:?}, expected ({}, {})",
                    n * t_n,
                    self.pose_width
                )));
            }
        }
        let index = RowIndex::new(t_eff, n)?;
        let m = t_eff * n;

        // (t, slot) row keys for state/look-ahead rows, then the start rows.
        let keys: Vec<(usize, usize)> = (0..t_eff).flat_map(|t| order.iter().map(move |&p| (t, p))).collect();
        let pos = |t: usize, p: usize| [src.positions[[t, p, 0]] as f64, src.positions[[t, p, 1]] as f64];
        let table = |rows: &[(usize, usize)], f: &dyn Fn(usize, usize) -> [f64; 2]| {
            let mut a = Array2::<T>::zeros((rows.len(), 2));
            for (r, &(t, p)) in rows.iter().enumerate() {
                let v = f(t, p);
                a[[r, 0]] = T::of(v[0]);
                a[[r, 1]] = T::of(v[1]);
            }
            a
        };
        let normal = |t: usize, p: usize| [src.normals[[t, p, 0]], src.normals[[t, p, 1]]];
        let starts: Vec<(usize, usize)> = order.iter().map(|&p| (0, p)).collect();

        let p_now = g.constant(table(&keys, &|t, p| normalized(pos(t, p))));
        let p_next = g.constant(table(&keys, &|t, p| normalized(pos(t + 1, p))));
        let n_now = g.constant(table(&keys, &normal));
        let n_next = g.constant(table(&keys, &|t, p| normal(t + 1, p)));
        let dp = g.constant(table(&keys, &|t, p| {
            let (a, b) = (pos(t, p), pos(t + 1, p));
            [(b[0] - a[0]) / DISPLACEMENT_SCALE, (b[1] - a[1]) / DISPLACEMENT_SCALE]
        }));
        let dp_norm = g.sub(p_next, p_now);
        let dn = g.sub(n_next, n_now);
        let p0 = g.constant(table(&starts, &|t, p| normalized(pos(t, p))));
        let n0 = g.constant(table(&starts, &normal));

        let (r_now, r_next, r0) = match pose {
            Some(r) => {
                let idx = |rows: &[(usize, usize)], shift: usize| -> Arc<[u32]> {
                    rows.iter().map(|&(t, p)| (p * t_n + t + shift) as u32).collect()
                };
                (
                    g.gather_rows(r, idx(&keys, 0)),
                    g.gather_rows(r, idx(&keys, 1)),
                    g.gather_rows(r, idx(&starts, 0)),
                )
            }
            None => {
                let z = g.constant(Array2::zeros((m, self.pose_width)));
                let z0 = g.constant(Array2::zeros((n, self.pose_width)));
                (z, z, z0)
            }
        };
        let dr = g.sub(r_next, r_now);

        let psi = g.param(self.psi);
        let id_rows = |slots: usize| -> Arc<[u32]> { (0..slots).map(|k| src.ids[order[k % n]] as u32).collect() };
        let psi_m = g.gather_rows(psi, id_rows(m));
        let psi_0 = g.gather_rows(psi, id_rows(n));

        let z_in = g.concat_cols(&[psi_m, p_now, p_now, r_now, n_now]);
        let u_in = g.concat_cols(&[psi_m, p_next, p_now, r_now, n_now, dp, dp_norm, dr, dn]);
        let s_in = g.concat_cols(&[psi_0, p0, p0, r0, n0]);

        let steps = g.param(self.step_embedding);
        let step_rows: Arc<[u32]> = keys.iter().map(|&(t, _)| t as u32).collect();
        let e_t = g.gather_rows(steps, step_rows);
        let z = self.g_z.forward(g, z_in);
        let z = g.add(z, e_t);
        let u = self.g_u.forward(g, u_in);
        let u = g.add(u, e_t);
        let s = self.g_r.forward(g, s_in);
        let e0 = g.param(self.start_embedding);
        let s = g.add_row(s, e0);

        // stacked [start; state (t, slot); look-ahead (t, slot)] -> layout order
        let perm: Arc<[u32]> = (0..index.len())
            .map(|flat| {
                let (kind, t, k) = index.decode(flat);
                (match kind {
                    RowKind::Start => k,
                    RowKind::State => n + t * n + k,
                    RowKind::Lookahead => n + m + t * n + k,
                }) as u32
            })
            .collect();
        let stacked = g.concat_rows(&[s, z, u]);
        Ok((g.gather_rows(stacked, perm), index))
    }
}
