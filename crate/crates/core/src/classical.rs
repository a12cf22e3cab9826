//! Reliability-recursion constructions: a step-shaped structure `Z` is filled
//! level by level with a left (degrading) and a right (upgrading) operator,
//! mapped through a post function, and the `N − K` largest metrics are frozen.
//!
//! Two instantiations are provided: Bhattacharyya parameters and Gaussian
//! approximation of mean LLRs.

use serde::{Deserialize, Serialize};

use crate::channel::SnrDb;
use crate::error::{Error, Result};
use crate::polar::{CodeSpec, Construction};

/// The four operators of a reliability recursion.
pub trait ConstructionOps: Send + Sync {
    fn init(&self, snr: SnrDb, n: usize, k: usize) -> f64;
    fn left(&self, x: f64) -> Result<f64>;
    fn right(&self, x: f64) -> Result<f64>;
    /// Larger output means frozen first.
    fn post(&self, x: f64) -> f64;
    /// Whether values are computed exactly (no iterative numerics).
    fn is_exact(&self) -> bool;
    fn name(&self) -> &'static str;
}

/// Where the children of `Z[l, t]` land in row `l + 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZLayout {
    /// Children at `2t` (left) and `2t + 1` (right). Row `n` is indexed like
    /// the source vector of the natural-order encoder; this is the default.
    #[default]
    Natural,
    /// Children at `t` and `t + 2^l`. Row `n` comes out bit-reversed relative
    /// to the natural-order encoder.
    Offset,
}

impl ZLayout {
    /// Row-`l + 1` indices of the (left, right) children of `Z[l, t]`.
    pub fn children(self, l: usize, t: usize) -> (usize, usize) {
        match self {
            ZLayout::Natural => (2 * t, 2 * t + 1),
            ZLayout::Offset => (t, t + (1 << l)),
        }
    }
}

/// Step-shaped structure: row `l` has `2^l` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStructure {
    rows: Vec<Vec<f64>>,
}

impl StepStructure {
    pub fn new(n_levels: usize) -> Self {
        StepStructure {
            rows: (0..=n_levels).map(|l| vec![f64::NAN; 1 << l]).collect(),
        }
    }

    /// `Z[l, t]`.
    pub fn get(&self, l: usize, t: usize) -> f64 {
        self.rows[l][t]
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    pub fn levels(&self) -> usize {
        self.rows.len() - 1
    }

    /// Flattened entry `k = 2^l + t` for `k ≥ 1`.
    pub fn flat(&self, k: usize) -> f64 {
        let l = (usize::BITS - 1 - k.leading_zeros()) as usize;
        self.rows[l][k - (1 << l)]
    }
}

/// Output of [`run_abstract_construction`].
#[derive(Clone, Debug)]
pub struct ClassicalConstruction {
    pub construction: Construction,
    pub z: StepStructure,
    /// `z*[t] = F_post(Z[n, t])`.
    pub metrics: Vec<f64>,
}

/// Fills the structure with `ops` and freezes the `N − K` largest metrics.
pub fn fill_structure(
    n: usize,
    k: usize,
    ops: &dyn ConstructionOps,
    snr: SnrDb,
    layout: ZLayout,
) -> Result<StepStructure> {
    if n < 1 || !n.is_power_of_two() {
        return Err(Error::Argument(format!("N = {n} is not a power of two")));
    }
    let levels = n.trailing_zeros() as usize;
    let mut z = StepStructure::new(levels);
    z.rows[0][0] = ops.init(snr, n, k);
    for l in 0..levels {
        for t in 0..(1 << l) {
            let v = z.rows[l][t];
            let (a, b) = layout.children(l, t);
            z.rows[l + 1][a] = ops.left(v)?;
            z.rows[l + 1][b] = ops.right(v)?;
        }
    }
    Ok(z)
}

/// Indices of the `count` largest metrics; ties freeze the lower index first.
pub fn largest_indices(metrics: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..metrics.len()).collect();
    order.sort_by(|&a, &b| metrics[b].total_cmp(&metrics[a]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

pub fn run_abstract_construction(
    spec: CodeSpec,
    ops: &dyn ConstructionOps,
    snr: SnrDb,
    layout: ZLayout,
) -> Result<ClassicalConstruction> {
    let n = spec.n();
    let z = fill_structure(n, spec.k(), ops, snr, layout)?;
    let metrics: Vec<f64> = z.row(z.levels()).iter().map(|&v| ops.post(v)).collect();
    let frozen = largest_indices(&metrics, n - spec.k());
    let mut mask = vec![false; n];
    for f in frozen {
        mask[f] = true;
    }
    Ok(ClassicalConstruction {
        construction: Construction::from_frozen_mask(spec, &mask)?,
        z,
        metrics,
    })
}

/// Bhattacharyya-parameter recursion with design erasure parameter `ε`.
#[derive(Clone, Copy, Debug)]
pub struct BhattacharyyaOps {
    epsilon: f64,
}

impl BhattacharyyaOps {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Argument(format!("ε must lie in (0, 1), got {epsilon}")));
        }
        Ok(BhattacharyyaOps { epsilon })
    }

    /// Design parameter `exp(−Es/N0)`, the Bhattacharyya parameter of the
    /// per-bit AWGN channel at `γ`.
    pub fn for_awgn(snr: SnrDb) -> Result<Self> {
        BhattacharyyaOps::new((-snr.linear() / 1.0).exp().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16))
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl ConstructionOps for BhattacharyyaOps {
    fn init(&self, _snr: SnrDb, _n: usize, _k: usize) -> f64 {
        self.epsilon
    }
    fn left(&self, z: f64) -> Result<f64> {
        Ok(2.0 * z - z * z)
    }
    fn right(&self, z: f64) -> Result<f64> {
        Ok(z * z)
    }
    fn post(&self, z: f64) -> f64 {
        z
    }
    fn is_exact(&self) -> bool {
        true
    }
    fn name(&self) -> &'static str {
        "bhattacharyya"
    }
}

/// How the GA initial mean LLR is derived from `γ` (dB).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaInit {
    /// `4 · 10^(γ/10)`.
    #[default]
    Linear,
    /// `4 · γ`, with γ used as the raw dB number.
    DbLiteral,
    /// `2 · 10^(γ/10)`, the mean LLR actually produced by the QPSK demodulator.
    ChannelMatched,
}

/// Gaussian approximation of density evolution over mean LLRs.
#[derive(Clone, Copy, Debug, Default)]
pub struct GaOps {
    pub init: GaInit,
}

impl GaOps {
    pub fn new(init: GaInit) -> Self {
        GaOps { init }
    }
}

const PHI_A: f64 = 0.4527;
const PHI_B: f64 = 0.0218;
const PHI_C: f64 = 0.86;
const PHI_SWITCH: f64 = 10.0;

/// `ln φ(x)` for `x ≥ 0`.
pub fn ln_phi(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < PHI_SWITCH {
        -PHI_A * x.powf(PHI_C) + PHI_B
    } else {
        0.5 * (std::f64::consts::PI / x).ln() - x / 4.0 + (1.0 - 10.0 / (7.0 * x)).ln()
    }
}

/// Two-branch interpolation of `φ(x) = 1 − E[tanh(L/2)]`, `L ~ N(x, 2x)`.
pub fn phi(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        ln_phi(x).exp()
    }
}

/// Inverse of `φ` from `ln y`.
///
/// `φ` jumps up slightly at the branch switch; values of `y` above the lower
/// branch's value at 10 are inverted on the lower branch, the rest on the
/// upper one, which keeps the inverse monotone.
pub fn phi_inv_ln(ln_y: f64) -> Result<f64> {
    if ln_y.is_nan() {
        return Err(Error::Numerical("φ⁻¹ of NaN".into()));
    }
    if ln_y >= 0.0 {
        return Ok(0.0);
    }
    let lower_at_switch = -PHI_A * PHI_SWITCH.powf(PHI_C) + PHI_B;
    let (lo, hi, f): (f64, f64, fn(f64) -> f64) = if ln_y > lower_at_switch {
        (0.0, PHI_SWITCH, |x| -PHI_A * x.powf(PHI_C) + PHI_B)
    } else {
        let mut hi = 2.0 * PHI_SWITCH;
        while ln_phi(hi) > ln_y {
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(Error::Numerical(format!(
                    "φ⁻¹ bracket expansion failed for ln y = {ln_y}"
                )));
            }
        }
        (PHI_SWITCH, hi, ln_phi)
    };
    bisect_decreasing(f, ln_y, lo, hi)
}

pub fn phi_inv(y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Numerical(format!("φ⁻¹ undefined for y = {y}")));
    }
    phi_inv_ln(y.ln())
}

// Solves f(x) = target for decreasing f on [lo, hi], relative tolerance well
// below 1e-9.
fn bisect_decreasing(f: fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            return Ok(mid);
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(format!(
        "bisection did not converge: bracket [{lo}, {hi}] for target {target}"
    )))
}

impl ConstructionOps for GaOps {
    fn init(&self, snr: SnrDb, _n: usize, _k: usize) -> f64 {
        match self.init {
            GaInit::Linear => 4.0 * snr.linear(),
            GaInit::DbLiteral => 4.0 * snr.0,
            GaInit::ChannelMatched => 2.0 * snr.linear(),
        }
    }
    fn left(&self, x: f64) -> Result<f64> {
        // 1 − (1 − φ)² = φ(2 − φ), evaluated in the log domain
        let lp = ln_phi(x.max(0.0));
        phi_inv_ln(lp + (2.0 - lp.exp()).ln())
    }
    fn right(&self, x: f64) -> Result<f64> {
        Ok(2.0 * x)
    }
    fn post(&self, x: f64) -> f64 {
        -x
    }
    fn is_exact(&self) -> bool {
        false
    }
    fn name(&self) -> &'static str {
        "ga"
    }
}
