//! Successive-cancellation decoding and its list / CRC-aided variants.
//!
//! The decoder follows the natural-order recursion of `c = u·G^{⊗n}`: a node
//! of size `2s` with LLRs `α` hands `f(α[i], α[i+s])` to its left child and,
//! once the left child's partial sums `β_l` are known,
//! `α[i+s] + (1 − 2β_l[i])·α[i]` to its right child. `f` is the min-sum
//! approximation and path metrics use the matching LLR-domain update
//! (`PM += |λ|` when the decision disagrees with the sign of `λ`). Together
//! they make the metric of a complete path equal to its correlation
//! discrepancy, so an unpruned list decodes to the ML codeword.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::polar::{BitVector, Construction};

/// One surviving path at the end of list decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub u_hat: BitVector,
    pub path_metric: f64,
}

/// Decoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub u_hat: BitVector,
    pub info_hat: BitVector,
    /// Whether the CRC verified; `true` when the code has no CRC.
    pub crc_pass: bool,
    pub path_metric: f64,
}

#[derive(Clone, Debug)]
struct Path {
    // layer of node size s lives at [s, 2s)
    alpha: Vec<f64>,
    beta: Vec<u8>,
    u: Vec<u8>,
    metric: f64,
}

impl Path {
    fn new(n: usize) -> Self {
        Path {
            alpha: vec![0.0; 2 * n],
            beta: vec![0; 2 * n],
            u: vec![0; n],
            metric: 0.0,
        }
    }

    /// Computes the LLR of leaf `phi` from the stored layers.
    fn leaf_llr(&mut self, phi: usize, n: usize) -> f64 {
        let a = &mut self.alpha;
        let mut size = if phi == 0 {
            n
        } else {
            let s = 2usize << phi.trailing_zeros();
            let h = s / 2;
            for i in 0..h {
                let top = a[s + i];
                let bottom = a[s + h + i];
                a[h + i] = if self.beta[s + i] == 0 { bottom + top } else { bottom - top };
            }
            h
        };
        while size > 1 {
            let h = size / 2;
            for i in 0..h {
                a[h + i] = min_sum(a[size + i], a[size + h + i]);
            }
            size = h;
        }
        a[1]
    }

    /// Records decision `bit` at leaf `phi` and folds partial sums upward.
    fn commit(&mut self, phi: usize, bit: u8, n: usize) {
        self.u[phi] = bit;
        let b = &mut self.beta;
        if phi & 1 == 0 {
            b[2] = bit;
            return;
        }
        b[2] ^= bit;
        b[3] = bit;
        let mut size = 2;
        while size < n {
            let (lo, hi) = b.split_at_mut(2 * size);
            let child = &lo[size..2 * size];
            if (phi >> size.trailing_zeros()) & 1 == 0 {
                hi[..size].copy_from_slice(child);
                break;
            }
            for i in 0..size {
                hi[i] ^= child[i];
                hi[size + i] = child[i];
            }
            size *= 2;
        }
    }
}

#[inline]
fn min_sum(a: f64, b: f64) -> f64 {
    let m = a.abs().min(b.abs());
    if (a < 0.0) != (b < 0.0) {
        -m
    } else {
        m
    }
}

/// Cost of deciding `bit` against LLR `llr`.
#[inline]
fn penalty(llr: f64, bit: u8) -> f64 {
    if (bit == 0 && llr < 0.0) || (bit == 1 && llr > 0.0) {
        llr.abs()
    } else {
        0.0
    }
}

/// Reusable SC / SCL decoder with per-instance scratch.
#[derive(Debug, Default)]
pub struct ListDecoder {
    paths: Vec<Path>,
    pool: Vec<Path>,
    forks: Vec<(f64, usize, u8)>,
    n: usize,
}

impl ListDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_input(llrs: &[f64], construction: &Construction, list_size: usize) -> Result<()> {
        if list_size == 0 {
            return Err(Error::Argument("list size L must be at least 1".into()));
        }
        let n = construction.spec().n();
        if llrs.len() != n {
            return Err(Error::Argument(format!(
                "got {} LLRs for a length-{n} code",
                llrs.len()
            )));
        }
        Ok(())
    }

    fn take_path(&mut self) -> Path {
        self.pool.pop().unwrap_or_else(|| Path::new(self.n))
    }

    /// Runs list decoding, leaving the survivors in `self.paths` sorted by
    /// ascending metric (ties: lower path index first).
    fn run(&mut self, llrs: &[f64], construction: &Construction, list_size: usize) -> Result<()> {
        Self::check_input(llrs, construction, list_size)?;
        let n = construction.spec().n();
        if n != self.n {
            self.paths.clear();
            self.pool.clear();
            self.n = n;
        }
        self.pool.append(&mut self.paths);
        let mut root = self.take_path();
        root.alpha[n..2 * n].copy_from_slice(llrs);
        root.metric = 0.0;
        self.paths.push(root);

        for phi in 0..n {
            if construction.is_frozen(phi) {
                for p in &mut self.paths {
                    let llr = p.leaf_llr(phi, n);
                    p.metric += penalty(llr, 0);
                    p.commit(phi, 0, n);
                }
                continue;
            }
            self.forks.clear();
            for (idx, p) in self.paths.iter_mut().enumerate() {
                let llr = p.leaf_llr(phi, n);
                self.forks.push((p.metric + penalty(llr, 0), idx, 0));
                self.forks.push((p.metric + penalty(llr, 1), idx, 1));
            }
            if self.forks.len() > list_size {
                self.forks.sort_by(|a, b| {
                    a.0.partial_cmp(&b.0)
                        .unwrap_or(Ordering::Equal)
                        .then(a.1.cmp(&b.1))
                        .then(a.2.cmp(&b.2))
                });
                self.forks.truncate(list_size);
                // survivors keep lineage order
                self.forks.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.cmp(&b.2)));
            }
            let old = std::mem::take(&mut self.paths);
            let mut old: Vec<Option<Path>> = old.into_iter().map(Some).collect();
            for k in 0..self.forks.len() {
                let (metric, idx, bit) = self.forks[k];
                let shared = k + 1 < self.forks.len() && self.forks[k + 1].1 == idx;
                let mut p = if shared {
                    let mut q = self.take_path();
                    let src = old[idx].as_ref().expect("parent still alive");
                    q.alpha.copy_from_slice(&src.alpha);
                    q.beta.copy_from_slice(&src.beta);
                    q.u.copy_from_slice(&src.u);
                    q
                } else {
                    old[idx].take().expect("parent used once")
                };
                p.metric = metric;
                p.commit(phi, bit, n);
                self.paths.push(p);
            }
            self.pool.extend(old.into_iter().flatten());
        }
        // stable sort keeps lower index first among equal metrics
        self.paths
            .sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap_or(Ordering::Equal));
        Ok(())
    }

    /// SCL decoding: up to `L` candidates by ascending path metric.
    pub fn scl_decode(
        &mut self,
        llrs: &[f64],
        construction: &Construction,
        list_size: usize,
    ) -> Result<Vec<Candidate>> {
        self.run(llrs, construction, list_size)?;
        Ok(self
            .paths
            .iter()
            .map(|p| Candidate {
                u_hat: BitVector::from_bits(p.u.iter().copied()),
                path_metric: p.metric,
            })
            .collect())
    }

    /// SC decoding (hard decisions, ties to 0).
    pub fn sc_decode(&mut self, llrs: &[f64], construction: &Construction) -> Result<DecodeResult> {
        self.run(llrs, construction, 1)?;
        Ok(self.result(0, construction))
    }

    /// CA-SCL: lowest-metric candidate passing the CRC, else the lowest-metric
    /// candidate with `crc_pass = false`. With `m = 0` this is pure SCL.
    pub fn cascl_decode(
        &mut self,
        llrs: &[f64],
        construction: &Construction,
        list_size: usize,
    ) -> Result<DecodeResult> {
        let (idx, _) = self.cascl_select(llrs, construction, list_size)?;
        Ok(self.result(idx, construction))
    }

    /// Allocation-free CA-SCL: returns the chosen survivor's source vector
    /// and whether it passed the CRC.
    pub fn cascl_u(
        &mut self,
        llrs: &[f64],
        construction: &Construction,
        list_size: usize,
    ) -> Result<(&[u8], bool)> {
        let (idx, pass) = self.cascl_select(llrs, construction, list_size)?;
        Ok((&self.paths[idx].u, pass))
    }

    fn cascl_select(
        &mut self,
        llrs: &[f64],
        construction: &Construction,
        list_size: usize,
    ) -> Result<(usize, bool)> {
        self.run(llrs, construction, list_size)?;
        if construction.spec().m() == 0 {
            return Ok((0, true));
        }
        Ok(self
            .paths
            .iter()
            .position(|p| construction.crc_ok(&p.u))
            .map_or((0, false), |i| (i, true)))
    }

    fn result(&self, idx: usize, construction: &Construction) -> DecodeResult {
        let p = &self.paths[idx];
        DecodeResult {
            u_hat: BitVector::from_bits(p.u.iter().copied()),
            info_hat: construction.extract_info(&p.u),
            crc_pass: construction.crc_ok(&p.u),
            path_metric: p.metric,
        }
    }
}

pub fn sc_decode(llrs: &[f64], construction: &Construction) -> Result<DecodeResult> {
    ListDecoder::new().sc_decode(llrs, construction)
}

pub fn scl_decode(llrs: &[f64], construction: &Construction, list_size: usize) -> Result<Vec<Candidate>> {
    ListDecoder::new().scl_decode(llrs, construction, list_size)
}

pub fn cascl_decode(llrs: &[f64], construction: &Construction, list_size: usize) -> Result<DecodeResult> {
    ListDecoder::new().cascl_decode(llrs, construction, list_size)
}
