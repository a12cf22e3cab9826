//! Gray-mapped QPSK over AWGN with per-bit LLR demodulation.
//!
//! Each QPSK symbol carries two code bits on orthogonal dimensions, so the
//! channel seen by every code bit is BPSK with amplitude `√(Es/2)` and noise
//! variance `N0/2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// LLR magnitude clamp.
pub const LLR_CLAMP: f64 = 60.0;

/// `γ = 10·log10(Es/N0)` in dB.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnrDb(pub f64);

impl SnrDb {
    pub fn linear(self) -> f64 {
        10f64.powf(self.0 / 10.0)
    }

    pub fn offset(self, delta_db: f64) -> SnrDb {
        SnrDb(self.0 + delta_db)
    }

    /// `N0` for the given symbol energy.
    pub fn n0(self, es: f64) -> f64 {
        es * 10f64.powf(-self.0 / 10.0)
    }
}

/// Per-code-bit LLRs, `log P(c=0|y) / P(c=1|y)`.
pub type LlrVector = Vec<f64>;

/// Per-dimension noise standard deviation `√(N0/2)`, `N0 = es·10^(−γ/10)`.
pub fn snr_to_noise_sigma(snr: SnrDb, es: f64) -> f64 {
    (snr.n0(es) / 2.0).sqrt()
}

/// Reproducible random source: ChaCha8 keyed by a master seed, with a
/// 64-bit stream id selecting an independent substream.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Precomputed channel constants for one operating point.
#[derive(Clone, Copy, Debug)]
pub struct AwgnQpsk {
    amplitude: f64,
    sigma: f64,
    llr_scale: f64,
}

impl AwgnQpsk {
    pub fn new(snr: SnrDb, es: f64) -> Result<Self> {
        if !(es > 0.0) || !es.is_finite() {
            return Err(Error::Argument(format!("symbol energy must be positive, got {es}")));
        }
        if !snr.0.is_finite() && snr.0 != f64::INFINITY {
            return Err(Error::Argument(format!("SNR must be finite, got {}", snr.0)));
        }
        let amplitude = (es / 2.0).sqrt();
        let n0 = snr.n0(es);
        let sigma = (n0 / 2.0).sqrt();
        let llr_scale = if n0 > 0.0 {
            4.0 * amplitude / n0
        } else {
            f64::INFINITY
        };
        Ok(AwgnQpsk {
            amplitude,
            sigma,
            llr_scale,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// LLR of a received dimension value `y`, clamped to `±LLR_CLAMP`.
    pub fn llr(&self, y: f64) -> f64 {
        let l = if self.llr_scale.is_infinite() {
            if y > 0.0 {
                LLR_CLAMP
            } else if y < 0.0 {
                -LLR_CLAMP
            } else {
                0.0
            }
        } else {
            self.llr_scale * y
        };
        l.clamp(-LLR_CLAMP, LLR_CLAMP)
    }

    /// Transmits `codeword` and writes LLRs into `out`.
    ///
    /// Bits are mapped in pairs (b0 → I, b1 → Q); one standard normal draw
    /// is consumed per code bit, in order.
    pub fn transmit_into<R: Rng + ?Sized>(&self, codeword: &[u8], rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(codeword.len(), out.len());
        for (o, &c) in out.iter_mut().zip(codeword) {
            let x = if c == 0 { self.amplitude } else { -self.amplitude };
            let noise: f64 = rng.sample(StandardNormal);
            *o = self.llr(x + self.sigma * noise);
        }
    }
}

/// QPSK-over-AWGN transmission with `Es = 1`.
pub fn transmit<R: Rng + ?Sized>(codeword: &[u8], snr: SnrDb, rng: &mut R) -> Result<LlrVector> {
    transmit_with_es(codeword, snr, 1.0, rng)
}

pub fn transmit_with_es<R: Rng + ?Sized>(
    codeword: &[u8],
    snr: SnrDb,
    es: f64,
    rng: &mut R,
) -> Result<LlrVector> {
    if codeword.len() % 2 != 0 {
        return Err(Error::Argument(format!(
            "QPSK needs an even number of bits, got {}",
            codeword.len()
        )));
    }
    let ch = AwgnQpsk::new(snr, es)?;
    let mut out = vec![0.0; codeword.len()];
    ch.transmit_into(codeword, rng, &mut out);
    Ok(out)
}

/// Gaussian tail `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_examples() {
        assert!((snr_to_noise_sigma(SnrDb(0.0), 1.0) - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((snr_to_noise_sigma(SnrDb(10.0 * 2f64.log10()), 1.0) - 0.5).abs() < 1e-12);
        assert!(snr_to_noise_sigma(SnrDb(300.0), 1.0) < 1e-14);
    }

    #[test]
    fn llr_formula_example() {
        let ch = AwgnQpsk::new(SnrDb(0.0), 1.0).unwrap();
        assert!((ch.llr(0.5f64.sqrt()) - 2.0).abs() < 1e-12);
        assert_eq!(ch.llr(1e6), LLR_CLAMP);
        assert_eq!(ch.llr(-1e6), -LLR_CLAMP);
    }

    #[test]
    fn noiseless_signs_follow_bits() {
        let cw = [0u8, 1, 1, 0, 1, 0, 0, 1];
        let mut rng = substream(1, 0);
        let llr = transmit(&cw, SnrDb(f64::INFINITY), &mut rng).unwrap();
        for (l, c) in llr.iter().zip(cw) {
            assert_eq!(l.signum(), if c == 0 { 1.0 } else { -1.0 });
        }
        let llr = transmit(&cw, SnrDb(200.0), &mut rng).unwrap();
        for (l, c) in llr.iter().zip(cw) {
            assert_eq!(l.signum(), if c == 0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn transmit_is_deterministic_and_rejects_odd_lengths() {
        let cw = [0u8, 1, 0, 0];
        let a = transmit(&cw, SnrDb(1.0), &mut substream(9, 3)).unwrap();
        let b = transmit(&cw, SnrDb(1.0), &mut substream(9, 3)).unwrap();
        assert_eq!(a, b);
        let c = transmit(&cw, SnrDb(1.0), &mut substream(9, 4)).unwrap();
        assert_ne!(a, c);
        assert!(transmit(&[0, 1, 0], SnrDb(1.0), &mut substream(0, 0)).is_err());
    }

    #[test]
    fn q_function_reference_values() {
        // scipy.stats.norm.sf
        let cases = [
            (0.0, 0.5),
            (1.0, 0.158_655_253_931_457_05),
            (0.3, 0.382_088_577_811_047_4),
            (3.0, 1.349_898_031_630_093_3e-3),
            (-1.0, 0.841_344_746_068_542_9),
            (6.0, 9.865_876_450_376_946e-10),
        ];
        for (x, q) in cases {
            assert!((q_function(x) / q - 1.0).abs() < 1e-9, "Q({x})");
        }
    }
}
