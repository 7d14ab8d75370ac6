//! Rooted skeleton trees.

use crate::error::{Error, Result};

pub const PRESETS: &[&str] = &["default17", "minimal5"];

/// Joint graph with edges pointing from the more central joint (source) to the
/// more peripheral one (target). Edge `k` is `edges[k] = (source, target)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    name: String,
    joints: Vec<String>,
    root: usize,
    edges: Vec<(usize, usize)>,
    topo_order: Vec<usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
}

impl SkeletonTopology {
    /// Builds one of the named rigs in [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let spec: &[(&str, Option<&str>)] = match name {
            "default17" => &[
                ("mid_hip", None),
                ("neck", Some("mid_hip")),
                ("head", Some("neck")),
                ("l_shoulder", Some("neck")),
                ("l_elbow", Some("l_shoulder")),
                ("l_wrist", Some("l_elbow")),
                ("r_shoulder", Some("neck")),
                ("r_elbow", Some("r_shoulder")),
                ("r_wrist", Some("r_elbow")),
                ("l_hip", Some("mid_hip")),
                ("l_knee", Some("l_hip")),
                ("l_ankle", Some("l_knee")),
                ("r_hip", Some("mid_hip")),
                ("r_knee", Some("r_hip")),
                ("r_ankle", Some("r_knee")),
                ("l_foot_tip", Some("l_ankle")),
                ("r_foot_tip", Some("r_ankle")),
            ],
            "minimal5" => &[
                ("mid_hip", None),
                ("neck", Some("mid_hip")),
                ("head", Some("neck")),
                ("l_shoulder", Some("neck")),
                ("r_shoulder", Some("neck")),
            ],
            _ => {
                return Err(Error::UnknownPreset {
                    name: name.to_string(),
                    available: PRESETS.join(", "),
                })
            }
        };
        let joints: Vec<String> = spec.iter().map(|(j, _)| j.to_string()).collect();
        let parents = spec
            .iter()
            .map(|(_, p)| p.map(|p| joints.iter().position(|j| j == p).expect("parent listed")))
            .collect::<Vec<_>>();
        Self::from_parents(name, joints, &parents)
    }

    /// Builds a topology from a parent table; exactly one joint has no parent.
    pub fn from_parents(name: &str, joints: Vec<String>, parents: &[Option<usize>]) -> Result<Self> {
        let n = joints.len();
        if n == 0 || parents.len() != n {
            return Err(Error::Topology(format!(
                "{} joints but {} parent entries",
                n,
                parents.len()
            )));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parents[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Topology(format!("expected one root, found {roots:?}")));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); n];
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::Topology(format!("joint {j} has parent {p} out of range")));
                }
                children[p].push(j);
            }
        }
        // breadth-first from the root gives depths and a parent-first order
        let mut depth = vec![usize::MAX; n];
        let mut order = vec![root];
        depth[root] = 0;
        let mut head = 0;
        while head < order.len() {
            let j = order[head];
            head += 1;
            for &c in &children[j] {
                if depth[c] != usize::MAX {
                    return Err(Error::Topology("parent table has a cycle".into()));
                }
                depth[c] = depth[j] + 1;
                order.push(c);
            }
        }
        if order.len() != n {
            return Err(Error::Topology("joints unreachable from the root".into()));
        }
        let edges = order[1..]
            .iter()
            .map(|&c| (parents[c].expect("non-root"), c))
            .collect();
        let topo = SkeletonTopology {
            name: name.to_string(),
            joints,
            root,
            edges,
            topo_order: order,
            parent: parents.to_vec(),
            depth,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Checks the rooted-tree invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if self.edges.len() + 1 != n {
            return Err(Error::Topology(format!("{} joints need {} edges", n, n - 1)));
        }
        let mut incoming = vec![0usize; n];
        for &(s, t) in &self.edges {
            incoming[t] += 1;
            if self.depth[s] + 1 != self.depth[t] {
                return Err(Error::Topology(format!(
                    "edge {}->{} does not point outward",
                    self.joints[s], self.joints[t]
                )));
            }
        }
        for (j, &count) in incoming.iter().enumerate() {
            let want = usize::from(j != self.root);
            if count != want {
                return Err(Error::Topology(format!(
                    "joint {} has {} incoming edges",
                    self.joints[j], count
                )));
            }
        }
        let mut seen = vec![false; n];
        for &j in &self.topo_order {
            if seen[j] {
                return Err(Error::Topology("topological order repeats a joint".into()));
            }
            if let Some(p) = self.parent[j] {
                if !seen[p] {
                    return Err(Error::Topology(format!(
                        "joint {} precedes its parent",
                        self.joints[j]
                    )));
                }
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Topology("topological order misses joints".into()));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn hop_distance(&self, j: usize) -> usize {
        self.depth[j]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }

    fn require(&self, name: &str) -> usize {
        self.joint_index(name)
            .unwrap_or_else(|| panic!("rig `{}` has no `{name}` joint", self.name))
    }

    pub fn left_shoulder(&self) -> usize {
        self.require("l_shoulder")
    }

    pub fn right_shoulder(&self) -> usize {
        self.require("r_shoulder")
    }

    /// Edge indices pointing into `j`.
    pub fn incoming(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, &(_, t))| t == j)
            .map(|(k, _)| k)
    }

    /// Edge indices leaving `j`.
    pub fn outgoing(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, &(s, _))| s == j)
            .map(|(k, _)| k)
    }

    /// Relabels joints so that new joint `k` is old joint `perm[k]`; edges are
    /// rewritten in the same order they had before.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let n = self.n_joints();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        SkeletonTopology {
            name: self.name.clone(),
            joints: perm.iter().map(|&o| self.joints[o].clone()).collect(),
            root: inv[self.root],
            edges: self.edges.iter().map(|&(s, t)| (inv[s], inv[t])).collect(),
            topo_order: self.topo_order.iter().map(|&o| inv[o]).collect(),
            parent: perm.iter().map(|&o| self.parent[o].map(|p| inv[p])).collect(),
            depth: perm.iter().map(|&o| self.depth[o]).collect(),
        }
    }
}
