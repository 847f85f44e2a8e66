//! Joint topologies and the three graph kernels used by the local graph
//! layers: first-order adjacency `Ã = A + I`, the symmetric-pair kernel `Ã_s`
//! and the kinematic kernel `Ã_c` with second-order links for distal joints.
//!
//! The kernel contents are reconstructed from their construction rules; the
//! published figures only sketch them.

use std::collections::VecDeque;

use crate::error::{GastError, Result};
use crate::tensor::{Real, Tensor};

/// Square 0/1 matrix over joints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    cells: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn identity(n: usize) -> Self {
        let mut m = AdjacencyMatrix { n, cells: vec![0; n * n] };
        for i in 0..n {
            m.cells[i * n + i] = 1;
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cells[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn link(&mut self, i: usize, j: usize) {
        self.cells[i * self.n + j] = 1;
        self.cells[j * self.n + i] = 1;
    }

    pub fn nnz(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn has_unit_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 1)
    }

    pub fn rows_nonempty(&self) -> bool {
        self.cells.chunks(self.n).all(|r| r.iter().any(|&c| c != 0))
    }

    pub fn transpose(&self) -> Self {
        let mut t = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                t.cells[j * self.n + i] = self.get(i, j);
            }
        }
        t
    }

    /// Elementwise `self ≥ other`.
    pub fn contains(&self, other: &AdjacencyMatrix) -> bool {
        self.n == other.n && self.cells.iter().zip(&other.cells).all(|(a, b)| a >= b)
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::from_fn(&[self.n, self.n], |i| F::of(self.cells[i] as f64))
    }
}

struct SkeletonDef {
    name: &'static str,
    joints: &'static [(&'static str, Option<usize>)],
    /// (left, right)
    symmetric: &'static [(usize, usize)],
    distal: &'static [usize],
}

const H36M17: SkeletonDef = SkeletonDef {
    name: "h36m17",
    joints: &[
        ("pelvis", None),
        ("r_hip", Some(0)),
        ("r_knee", Some(1)),
        ("r_ankle", Some(2)),
        ("l_hip", Some(0)),
        ("l_knee", Some(4)),
        ("l_ankle", Some(5)),
        ("spine", Some(0)),
        ("thorax", Some(7)),
        ("neck", Some(8)),
        ("head", Some(9)),
        ("l_shoulder", Some(8)),
        ("l_elbow", Some(11)),
        ("l_wrist", Some(12)),
        ("r_shoulder", Some(8)),
        ("r_elbow", Some(14)),
        ("r_wrist", Some(15)),
    ],
    symmetric: &[(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)],
    distal: &[3, 6, 10, 13, 16],
};

const HUMANEVA15: SkeletonDef = SkeletonDef {
    name: "humaneva15",
    joints: &[
        ("pelvis", None),
        ("r_hip", Some(0)),
        ("r_knee", Some(1)),
        ("r_ankle", Some(2)),
        ("l_hip", Some(0)),
        ("l_knee", Some(4)),
        ("l_ankle", Some(5)),
        ("thorax", Some(0)),
        ("head", Some(7)),
        ("l_shoulder", Some(7)),
        ("l_elbow", Some(9)),
        ("l_wrist", Some(10)),
        ("r_shoulder", Some(7)),
        ("r_elbow", Some(12)),
        ("r_wrist", Some(13)),
    ],
    symmetric: &[(4, 1), (5, 2), (6, 3), (9, 12), (10, 13), (11, 14)],
    distal: &[3, 6, 8, 11, 14],
};

pub const SKELETON_NAMES: [&str; 2] = ["h36m17", "humaneva15"];

/// Joint topology plus its derived graph kernels. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    pub name: String,
    pub n_joints: usize,
    pub root: usize,
    pub joint_names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub edges: Vec<(usize, usize)>,
    pub symmetric_pairs: Vec<(usize, usize)>,
    /// (distal joint, its second-order neighbour along the chain)
    pub distal_joints: Vec<(usize, usize)>,
    pub adjacency: AdjacencyMatrix,
    pub symmetric_kernel: AdjacencyMatrix,
    pub kinematic_kernel: AdjacencyMatrix,
}

pub fn build_skeleton(name: &str) -> Result<SkeletonGraph> {
    let def = match name {
        "h36m17" => &H36M17,
        "humaneva15" => &HUMANEVA15,
        _ => return Err(GastError::UnknownSkeleton(name.to_string())),
    };
    let n = def.joints.len();
    let parents: Vec<Option<usize>> = def.joints.iter().map(|j| j.1).collect();
    let root = parents.iter().position(Option::is_none).expect("skeleton has a root");
    let edges: Vec<(usize, usize)> = parents.iter().enumerate().filter_map(|(c, p)| p.map(|p| (p, c))).collect();
    let distal_joints = def
        .distal
        .iter()
        .map(|&j| {
            let second = parents[j].and_then(|p| parents[p]).expect("distal joint sits two links below another joint");
            (j, second)
        })
        .collect();
    let mut g = SkeletonGraph {
        name: def.name.to_string(),
        n_joints: n,
        root,
        joint_names: def.joints.iter().map(|j| j.0.to_string()).collect(),
        parents,
        edges,
        symmetric_pairs: def.symmetric.to_vec(),
        distal_joints,
        adjacency: AdjacencyMatrix::identity(n),
        symmetric_kernel: AdjacencyMatrix::identity(n),
        kinematic_kernel: AdjacencyMatrix::identity(n),
    };
    g.adjacency = first_order_kernel(&g);
    g.symmetric_kernel = build_symmetric_kernel(&g);
    g.kinematic_kernel = build_kinematic_kernel(&g);
    Ok(g)
}

/// `Ã = A + I`.
pub fn first_order_kernel(g: &SkeletonGraph) -> AdjacencyMatrix {
    let mut m = AdjacencyMatrix::identity(g.n_joints);
    for &(a, b) in &g.edges {
        m.link(a, b);
    }
    m
}

/// Identity plus a link between the two sides of every symmetric pair.
pub fn build_symmetric_kernel(g: &SkeletonGraph) -> AdjacencyMatrix {
    let mut m = AdjacencyMatrix::identity(g.n_joints);
    for &(l, r) in &g.symmetric_pairs {
        m.link(l, r);
    }
    m
}

/// `Ã` plus a link from each distal joint to its second-order neighbour.
pub fn build_kinematic_kernel(g: &SkeletonGraph) -> AdjacencyMatrix {
    let mut m = first_order_kernel(g);
    for &(j, second) in &g.distal_joints {
        m.link(j, second);
    }
    m
}

/// Permutation swapping every left/right pair; axial joints map to themselves.
pub fn flip_map(g: &SkeletonGraph) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..g.n_joints).collect();
    for &(l, r) in &g.symmetric_pairs {
        perm[l] = r;
        perm[r] = l;
    }
    perm
}

impl SkeletonGraph {
    pub fn flip_map(&self) -> Vec<usize> {
        flip_map(self)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|j| j == name)
    }

    /// Joints reachable from the root over the edge list.
    pub fn reachable_from_root(&self) -> usize {
        let mut seen = vec![false; self.n_joints];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        let mut count = 1;
        while let Some(j) = queue.pop_front() {
            for &(a, b) in &self.edges {
                let next = if a == j { b } else if b == j { a } else { continue };
                if !seen[next] {
                    seen[next] = true;
                    count += 1;
                    queue.push_back(next);
                }
            }
        }
        count
    }
}
