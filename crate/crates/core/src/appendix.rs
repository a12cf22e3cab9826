//! Hand-specified message-passing instantiation that reproduces a
//! reliability-recursion construction on the construction graph, plus the
//! executable equivalence check against [`crate::classical`].
//!
//! Every node carries a length-`2N` vector over the reals extended with `−∞`.
//! Slot 0 holds the node's identity payload; slot `k = 2^l + t` converges to
//! `Z[l, t]`. All aggregations are element-wise maxima, check-node updates
//! apply the left operator and variable-node updates the right operator.

use std::fmt;

use serde::Serialize;

use crate::channel::SnrDb;
use crate::classical::{fill_structure, run_abstract_construction, ConstructionOps, StepStructure, ZLayout};
use crate::error::{Error, Result};
use crate::imp::PriorityModel;
use crate::pccmp::{build_pccmp, PccmpGraph, PccmpStructure};
use crate::polar::{CodeSpec, Construction};

/// A slot value: `−∞` or a finite real.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtSlot {
    NegInf,
    Finite(f64),
}

impl ExtSlot {
    pub fn max(self, other: ExtSlot) -> ExtSlot {
        match (self, other) {
            (ExtSlot::NegInf, x) | (x, ExtSlot::NegInf) => x,
            (ExtSlot::Finite(a), ExtSlot::Finite(b)) => ExtSlot::Finite(if b > a { b } else { a }),
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtSlot::Finite(_))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            ExtSlot::Finite(x) => Some(x),
            ExtSlot::NegInf => None,
        }
    }

    /// Lifts `f` to the extended domain with `f(−∞) = −∞`.
    fn map(self, f: impl FnOnce(f64) -> Result<f64>) -> Result<ExtSlot> {
        match self {
            ExtSlot::NegInf => Ok(ExtSlot::NegInf),
            ExtSlot::Finite(x) => f(x).map(ExtSlot::Finite),
        }
    }
}

impl fmt::Display for ExtSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtSlot::NegInf => write!(f, "-inf"),
            ExtSlot::Finite(x) => write!(f, "{x}"),
        }
    }
}

pub type ExtEmbedding = Vec<ExtSlot>;

fn floor_log2(k: usize) -> u32 {
    usize::BITS - 1 - k.leading_zeros()
}

/// Slot written by the left operator from source slot `k'`.
pub fn left_target(layout: ZLayout, k: usize) -> usize {
    match layout {
        ZLayout::Natural => 2 * k,
        ZLayout::Offset => k + (1 << floor_log2(k)),
    }
}

/// Slot written by the right operator from source slot `k'`.
pub fn right_target(layout: ZLayout, k: usize) -> usize {
    match layout {
        ZLayout::Natural => 2 * k + 1,
        ZLayout::Offset => k + (1 << (floor_log2(k) + 1)),
    }
}

fn maxpool_into(acc: &mut [ExtSlot], h: &[ExtSlot]) {
    for (a, &x) in acc.iter_mut().zip(h) {
        *a = a.max(x);
    }
}

/// Node index: `v_i ↦ i`, `c_j ↦ N + j`.
fn node_name(n: usize, u: usize) -> String {
    if u < n {
        format!("v_{u}")
    } else {
        format!("c_{}", u - n)
    }
}

/// State of the special-case message passing.
pub struct ScMessagePassing<'a> {
    structure: &'a PccmpStructure,
    ops: &'a dyn ConstructionOps,
    layout: ZLayout,
    /// Rows `0..N` are variable nodes, `N..2N` check nodes.
    h: Vec<ExtEmbedding>,
    iterations: usize,
}

impl<'a> ScMessagePassing<'a> {
    pub fn new(graph: &'a PccmpGraph, ops: &'a dyn ConstructionOps, k: usize, layout: ZLayout) -> Self {
        let n = graph.n();
        let mut h = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let mut v = vec![ExtSlot::NegInf; 2 * n];
            v[0] = ExtSlot::Finite(graph.gamma().0);
            v[1] = ExtSlot::Finite(ops.init(graph.gamma(), n, k));
            h.push(v);
        }
        for j in 0..n {
            let mut c = vec![ExtSlot::NegInf; 2 * n];
            c[0] = ExtSlot::Finite(j as f64);
            h.push(c);
        }
        ScMessagePassing {
            structure: graph.structure(),
            ops,
            layout,
            h,
            iterations: 0,
        }
    }

    pub fn embeddings(&self) -> &[ExtEmbedding] {
        &self.h
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Finite entries among slots `1..2N` of every node.
    pub fn finite_counts(&self) -> Vec<usize> {
        self.h.iter().map(|v| v[1..].iter().filter(|s| s.is_finite()).count()).collect()
    }

    pub fn is_full(&self) -> bool {
        self.h.iter().all(|v| v.iter().all(|s| s.is_finite()))
    }

    fn update(&self, own: &[ExtSlot], neighbors: impl Iterator<Item = usize>, right: bool) -> Result<ExtEmbedding> {
        let n = self.structure.n();
        let mut bar = own.to_vec();
        for w in neighbors {
            maxpool_into(&mut bar, &self.h[w]);
        }
        let mut y = bar.clone();
        y[0] = own[0];
        for src in 1..n {
            let dst = if right {
                right_target(self.layout, src)
            } else {
                left_target(self.layout, src)
            };
            if bar[dst] == ExtSlot::NegInf {
                y[dst] = if right {
                    bar[src].map(|x| self.ops.right(x))?
                } else {
                    bar[src].map(|x| self.ops.left(x))?
                };
            }
        }
        Ok(y)
    }

    /// One synchronous iteration over all nodes.
    pub fn step(&mut self) -> Result<()> {
        let n = self.structure.n();
        let mut next = Vec::with_capacity(2 * n);
        for i in 0..n {
            let nb = self.structure.c2v_neighbors(i).iter().map(|&j| n + j);
            next.push(self.update(&self.h[i], nb, true)?);
        }
        for j in 0..n {
            let own = &self.h[n + j];
            let mut out = self.update(own, self.structure.v2c_neighbors(j).iter().copied(), false)?;
            if j > 0 {
                let c2c = self.update(own, self.structure.c2c_neighbors(j).map(|w| n + w), false)?;
                maxpool_into(&mut out, &c2c);
            }
            next.push(out);
        }
        self.h = next;
        self.iterations += 1;
        Ok(())
    }

    /// `z_j = F_post(h_{c_j}[N + h_{c_j}[0]])`.
    pub fn priorities(&self) -> Result<Vec<f64>> {
        let n = self.structure.n();
        (0..n)
            .map(|j| {
                let c = &self.h[n + j];
                let id = c[0].value().ok_or_else(|| Error::Invariant(format!("c_{j} lost its identity slot")))?;
                let slot = n + id as usize;
                match c[slot] {
                    ExtSlot::Finite(x) => Ok(self.ops.post(x)),
                    ExtSlot::NegInf => Err(Error::IncompleteFill {
                        iterations: self.iterations,
                        node: j,
                        slot,
                    }),
                }
            })
            .collect()
    }
}

/// Runs `iterations` rounds and returns the check-node priorities.
pub fn sc_priorities(graph: &PccmpGraph, ops: &dyn ConstructionOps, k: usize, iterations: usize, layout: ZLayout) -> Result<Vec<f64>> {
    let mut mp = ScMessagePassing::new(graph, ops, k, layout);
    for _ in 0..iterations {
        mp.step()?;
    }
    mp.priorities()
}

/// The special-case instantiation as a drop-in scorer for the construction loop.
pub struct ScPriorityModel<'a> {
    pub ops: &'a dyn ConstructionOps,
    pub k: usize,
    pub iterations: usize,
    pub layout: ZLayout,
}

impl PriorityModel for ScPriorityModel<'_> {
    fn priorities(&self, graph: &PccmpGraph, _theta: f64) -> Result<Vec<f64>> {
        sc_priorities(graph, self.ops, self.k, self.iterations, self.layout)
    }
}

/// Constructs `P(N, K)` by freezing the argmax of the special-case priorities
/// `N − K` times. Priorities are recomputed after each freeze and must not
/// change.
pub fn imp_sc_construct(
    n: usize,
    k: usize,
    ops: &dyn ConstructionOps,
    gamma: SnrDb,
    iterations: Option<usize>,
    layout: ZLayout,
) -> Result<Construction> {
    let spec = CodeSpec::new(n, k, 0, None)?;
    let iterations = iterations.unwrap_or(2 * n + 1);
    let mut graph = build_pccmp(n, gamma)?;
    let first = sc_priorities(&graph, ops, k, iterations, layout)?;
    for step in 0..n - k {
        let z = if step == 0 {
            first.clone()
        } else {
            sc_priorities(&graph, ops, k, iterations, layout)?
        };
        if z != first {
            return Err(Error::Invariant(format!("special-case priorities changed at step {step}")));
        }
        let j = argmax_unfrozen(&z, &graph).expect("fewer than N freezes");
        graph.freeze_in_place(j)?;
    }
    Construction::from_frozen_mask(spec, &graph.frozen_mask())
}

pub(crate) fn argmax_unfrozen(z: &[f64], graph: &PccmpGraph) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in z.iter().enumerate() {
        if graph.is_frozen(j) {
            continue;
        }
        match best {
            Some(b) if v <= z[b] => {}
            _ => best = Some(j),
        }
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct Mismatch {
    pub node: String,
    pub slot: usize,
    pub expected: f64,
    pub got: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Claim1Report {
    pub n: usize,
    pub k: usize,
    pub ops: String,
    pub layout: ZLayout,
    pub passed: bool,
    /// Iterations until every slot of every node was finite.
    pub fill_iterations: Option<usize>,
    /// First finite slot that disagreed with the recursion during the run.
    pub wrong_finite: Option<Mismatch>,
    /// First final slot that disagreed with the recursion.
    pub final_mismatch: Option<Mismatch>,
    pub frozen_classical: Vec<usize>,
    pub frozen_message_passing: Vec<usize>,
}

fn slots_agree(expected: f64, got: f64, exact: bool) -> bool {
    if exact {
        expected == got
    } else {
        expected == got || (expected - got).abs() <= 1e-9 * expected.abs().max(got.abs())
    }
}

/// Checks that the special-case message passing reproduces the recursion's
/// step structure at every node and picks the same frozen set.
pub fn verify_claim1(n: usize, k: usize, ops: &dyn ConstructionOps, gamma: SnrDb, layout: ZLayout) -> Result<Claim1Report> {
    let spec = CodeSpec::new(n, k, 0, None)?;
    let classical = run_abstract_construction(spec, ops, gamma, layout)?;
    let z: &StepStructure = &classical.z;
    let exact = ops.is_exact();
    let graph = build_pccmp(n, gamma)?;
    let mut mp = ScMessagePassing::new(&graph, ops, k, layout);
    let mut wrong_finite = None;
    let mut fill_iterations = None;
    let check_finite = |mp: &ScMessagePassing| -> Option<Mismatch> {
        for (u, h) in mp.embeddings().iter().enumerate() {
            for slot in 1..2 * n {
                if let ExtSlot::Finite(x) = h[slot] {
                    if !slots_agree(z.flat(slot), x, exact) {
                        return Some(Mismatch {
                            node: node_name(n, u),
                            slot,
                            expected: z.flat(slot),
                            got: x.to_string(),
                        });
                    }
                }
            }
        }
        None
    };
    for _ in 0..2 * n + 1 {
        mp.step()?;
        if wrong_finite.is_none() {
            wrong_finite = check_finite(&mp);
        }
        if fill_iterations.is_none() && mp.is_full() {
            fill_iterations = Some(mp.iterations());
        }
    }
    let mut final_mismatch = None;
    'outer: for (u, h) in mp.embeddings().iter().enumerate() {
        for slot in 1..2 * n {
            let ok = matches!(h[slot], ExtSlot::Finite(x) if slots_agree(z.flat(slot), x, exact));
            if !ok {
                final_mismatch = Some(Mismatch {
                    node: node_name(n, u),
                    slot,
                    expected: z.flat(slot),
                    got: h[slot].to_string(),
                });
                break 'outer;
            }
        }
    }
    let frozen_message_passing = match imp_sc_construct(n, k, ops, gamma, None, layout) {
        Ok(c) => c.frozen_set(),
        Err(_) => Vec::new(),
    };
    let frozen_classical = classical.construction.frozen_set();
    let passed = wrong_finite.is_none()
        && final_mismatch.is_none()
        && frozen_classical == frozen_message_passing
        && fill_iterations.is_some();
    Ok(Claim1Report {
        n,
        k,
        ops: ops.name().to_string(),
        layout,
        passed,
        fill_iterations,
        wrong_finite,
        final_mismatch,
        frozen_classical,
        frozen_message_passing,
    })
}

/// Reference step structure for the given operators, for callers that want
/// to inspect `Z*` directly.
pub fn reference_structure(n: usize, k: usize, ops: &dyn ConstructionOps, gamma: SnrDb, layout: ZLayout) -> Result<StepStructure> {
    fill_structure(n, k, ops, gamma, layout)
}
