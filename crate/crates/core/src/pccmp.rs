//! The construction message-passing graph: `N` variable nodes, `N` check
//! nodes, bipartite edges from the generator matrix and forward check-to-check
//! edges.
//!
//! The edge structure depends on `N` only and is shared behind an [`Arc`];
//! a [`PccmpGraph`] adds the per-state check-node types and the SNR.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::SnrDb;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    V,
    I,
    F,
}

impl NodeType {
    pub fn index(self) -> usize {
        match self {
            NodeType::V => 0,
            NodeType::I => 1,
            NodeType::F => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageType {
    C2v,
    V2c,
    C2c,
}

impl MessageType {
    pub const ALL: [MessageType; 3] = [MessageType::C2v, MessageType::V2c, MessageType::C2c];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::C2v => "c2v",
            MessageType::V2c => "v2c",
            MessageType::C2c => "c2c",
        }
    }
}

/// In-neighborhoods per message type, each sorted by source index.
#[derive(Debug, PartialEq, Eq)]
pub struct PccmpStructure {
    n: usize,
    /// `c2v[i]`: check nodes `c_j` with `G[i, j] = 1`.
    c2v: Vec<Vec<usize>>,
    /// `v2c[j]`: variable nodes `v_i` with `G[i, j] = 1`.
    v2c: Vec<Vec<usize>>,
}

impl PccmpStructure {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Argument(format!("N = {n} must be a power of two ≥ 2")));
        }
        if n > 1 << 15 {
            return Err(Error::Size(format!("N = {n} too large for a dense message-passing graph")));
        }
        // G[i, j] = 1 iff the bits of j are a subset of the bits of i
        let c2v = (0..n).map(|i| (0..n).filter(|&j| i & j == j).collect()).collect();
        let v2c = (0..n).map(|j| (0..n).filter(|&i| i & j == j).collect()).collect();
        Ok(PccmpStructure { n, c2v, v2c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The same graph with variable node `v_i` renamed `v_{perm[i]}`.
    pub fn relabel_variables(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n || perm.iter().any(|&p| p >= self.n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Argument("relabeling must be a permutation of 0..N".into()));
        }
        let mut c2v = vec![Vec::new(); self.n];
        for (i, nb) in self.c2v.iter().enumerate() {
            c2v[perm[i]] = nb.clone();
        }
        let v2c = self
            .v2c
            .iter()
            .map(|nb| {
                let mut v: Vec<usize> = nb.iter().map(|&i| perm[i]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        Ok(PccmpStructure { n: self.n, c2v, v2c })
    }

    /// Check nodes sending c2v messages to `v_i`.
    pub fn c2v_neighbors(&self, i: usize) -> &[usize] {
        &self.c2v[i]
    }

    /// Variable nodes sending v2c messages to `c_j`.
    pub fn v2c_neighbors(&self, j: usize) -> &[usize] {
        &self.v2c[j]
    }

    /// Check nodes sending c2c messages to `c_j`: `c_0 … c_{j−1}`.
    pub fn c2c_neighbors(&self, j: usize) -> std::ops::Range<usize> {
        0..j
    }

    pub fn edge_count(&self, mt: MessageType) -> usize {
        match mt {
            MessageType::C2v => self.c2v.iter().map(Vec::len).sum(),
            MessageType::V2c => self.v2c.iter().map(Vec::len).sum(),
            MessageType::C2c => self.n * (self.n - 1) / 2,
        }
    }
}

/// One state of the graph: shared structure, check-node types and `γ`.
#[derive(Clone, Debug)]
pub struct PccmpGraph {
    structure: Arc<PccmpStructure>,
    check_types: Vec<NodeType>,
    gamma: SnrDb,
}

/// Builds the graph for blocklength `n` with every check node non-frozen.
pub fn build_pccmp(n: usize, gamma: SnrDb) -> Result<PccmpGraph> {
    Ok(PccmpGraph::from_structure(Arc::new(PccmpStructure::new(n)?), gamma))
}

impl PccmpGraph {
    pub fn from_structure(structure: Arc<PccmpStructure>, gamma: SnrDb) -> Self {
        let n = structure.n();
        PccmpGraph {
            structure,
            check_types: vec![NodeType::I; n],
            gamma,
        }
    }

    pub fn with_frozen_mask(structure: Arc<PccmpStructure>, gamma: SnrDb, frozen: &[bool]) -> Result<Self> {
        if frozen.len() != structure.n() {
            return Err(Error::Argument(format!(
                "frozen mask has length {}, graph has N = {}",
                frozen.len(),
                structure.n()
            )));
        }
        let mut g = PccmpGraph::from_structure(structure, gamma);
        for (t, &f) in g.check_types.iter_mut().zip(frozen) {
            if f {
                *t = NodeType::F;
            }
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.structure.n()
    }

    pub fn structure(&self) -> &Arc<PccmpStructure> {
        &self.structure
    }

    pub fn gamma(&self) -> SnrDb {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: SnrDb) {
        self.gamma = gamma;
    }

    pub fn check_type(&self, j: usize) -> NodeType {
        self.check_types[j]
    }

    pub fn check_types(&self) -> &[NodeType] {
        &self.check_types
    }

    pub fn is_frozen(&self, j: usize) -> bool {
        self.check_types[j] == NodeType::F
    }

    pub fn frozen_count(&self) -> usize {
        self.check_types.iter().filter(|&&t| t == NodeType::F).count()
    }

    pub fn frozen_mask(&self) -> Vec<bool> {
        self.check_types.iter().map(|&t| t == NodeType::F).collect()
    }

    /// Initial message of every variable node.
    pub fn x_v(&self) -> f64 {
        self.gamma.0
    }

    /// Initial message of `c_j`.
    pub fn x_c(&self, j: usize) -> f64 {
        j as f64 / self.n() as f64
    }

    /// Returns a copy with `c_j` frozen.
    pub fn freeze_node(&self, j: usize) -> Result<PccmpGraph> {
        let mut g = self.clone();
        g.freeze_in_place(j)?;
        Ok(g)
    }

    pub fn freeze_in_place(&mut self, j: usize) -> Result<()> {
        match self.check_types.get(j) {
            None => Err(Error::Argument(format!("check node {j} out of range for N = {}", self.n()))),
            Some(NodeType::F) => Err(Error::State(format!("check node c_{j} is already frozen"))),
            Some(_) => {
                self.check_types[j] = NodeType::F;
                Ok(())
            }
        }
    }
}
