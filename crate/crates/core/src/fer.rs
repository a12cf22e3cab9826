//! Monte Carlo frame-error-rate estimation.
//!
//! Frames are grouped into fixed blocks of [`FRAMES_PER_BLOCK`]. Block `b`
//! draws its payload bits and its channel noise from two independent
//! substreams keyed by `(seed, b)`, so codes with different `K` see the same
//! noise realizations, and per-frame outcomes are scanned in frame order to
//! find the exact stopping frame. Results therefore do not depend on the
//! number of workers.

use std::io::Write;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{substream, AwgnQpsk, SnrDb};
use crate::decoder::ListDecoder;
use crate::error::{Error, Result};
use crate::polar::{polar_transform, Construction};

pub const FRAMES_PER_BLOCK: u64 = 1024;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopMode {
    /// Stop once `errors ≥ min_errors` and `frames ≥ min_frames`, or at the
    /// `max_frames` safety cap.
    Evaluation,
    /// Stop once `errors ≥ min_errors` or `frames ≥ max_frames`.
    Training,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub min_errors: u64,
    pub min_frames: u64,
    pub max_frames: u64,
    pub mode: StopMode,
}

impl StopRule {
    pub fn evaluation(min_errors: u64, min_frames: u64, max_frames: u64) -> Result<Self> {
        StopRule {
            min_errors,
            min_frames,
            max_frames,
            mode: StopMode::Evaluation,
        }
        .validated()
    }

    pub fn training(max_errors: u64, max_frames: u64) -> Result<Self> {
        StopRule {
            min_errors: max_errors,
            min_frames: 0,
            max_frames,
            mode: StopMode::Training,
        }
        .validated()
    }

    /// 500 errors and 10^6 frames, capped at 10^8 frames.
    pub fn default_evaluation() -> Self {
        StopRule::evaluation(500, 1_000_000, 100_000_000).expect("valid")
    }

    /// At most 100 errors and at most 10^5 frames.
    pub fn default_training() -> Self {
        StopRule::training(100, 100_000).expect("valid")
    }

    pub fn validated(self) -> Result<Self> {
        if self.max_frames == 0 {
            return Err(Error::Config("max_frames must be positive".into()));
        }
        if self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "min_frames {} exceeds max_frames {}",
                self.min_frames, self.max_frames
            )));
        }
        if self.mode == StopMode::Training && self.min_errors == 0 {
            return Err(Error::Config("training budget needs a positive error count".into()));
        }
        Ok(self)
    }

    pub fn done(&self, frames: u64, errors: u64) -> bool {
        if frames >= self.max_frames {
            return true;
        }
        match self.mode {
            StopMode::Evaluation => errors >= self.min_errors && frames >= self.min_frames,
            StopMode::Training => errors >= self.min_errors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FerEstimate {
    pub fer: f64,
    pub frames: u64,
    pub errors: u64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub seed: u64,
    /// True when an evaluation run stopped at the frame cap before meeting
    /// its error and frame targets.
    pub capped: bool,
}

impl FerEstimate {
    pub fn from_counts(frames: u64, errors: u64, seed: u64, capped: bool) -> Self {
        let (ci_low, ci_high) = wilson_interval(errors, frames, Z_95);
        FerEstimate {
            fer: if frames == 0 { 0.0 } else { errors as f64 / frames as f64 },
            frames,
            errors,
            ci_low,
            ci_high,
            confidence: 0.95,
            seed,
            capped,
        }
    }

    /// FER with zero-error runs floored at `1 / (2·frames)`.
    pub fn floored(&self) -> f64 {
        if self.errors == 0 {
            0.5 / self.frames.max(1) as f64
        } else {
            self.fer
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Wilson score interval for `errors` successes in `frames` trials.
pub fn wilson_interval(errors: u64, frames: u64, z: f64) -> (f64, f64) {
    if frames == 0 {
        return (0.0, 1.0);
    }
    let n = frames as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Seed derived from a master seed and a tag.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    substream(master, 0x5eed_0000_0000_0000 ^ tag).next_u64()
}

/// Seed of the sweep row at `snr`; independent of the construction so all
/// constructions at one SNR share noise realizations.
pub fn row_seed(master: u64, snr: SnrDb) -> u64 {
    derive_seed(master, snr.0.to_bits())
}

struct BlockSim<'a> {
    construction: &'a Construction,
    list_size: usize,
    channel: AwgnQpsk,
    info_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    info: Vec<u8>,
    cw: Vec<u8>,
    llr: Vec<f64>,
}

impl<'a> BlockSim<'a> {
    fn new(construction: &'a Construction, list_size: usize, channel: AwgnQpsk, seed: u64, block: u64) -> Self {
        let n = construction.spec().n();
        BlockSim {
            construction,
            list_size,
            channel,
            info_rng: substream(seed, 2 * block),
            noise_rng: substream(seed, 2 * block + 1),
            info: vec![0; construction.spec().info_len()],
            cw: vec![0; n],
            llr: vec![0.0; n],
        }
    }

    /// Simulates one frame; true on a frame error.
    fn frame(&mut self, dec: &mut ListDecoder) -> Result<bool> {
        for b in &mut self.info {
            *b = self.info_rng.random::<bool>() as u8;
        }
        let u = self.construction.source_vector(&self.info)?;
        self.cw.copy_from_slice(&u);
        polar_transform(&mut self.cw);
        self.channel.transmit_into(&self.cw, &mut self.noise_rng, &mut self.llr);
        let (u_hat, _) = dec.cascl_u(&self.llr, self.construction, self.list_size)?;
        let data = &self.construction.info_set()[..self.construction.spec().info_len()];
        Ok(data.iter().any(|&p| u_hat[p] != u[p]))
    }
}

/// FER estimator with an optional worker pool.
pub struct FerEngine {
    pool: Option<rayon::ThreadPool>,
    workers: usize,
}

impl FerEngine {
    pub fn new(workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(FerEngine { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn estimate(
        &self,
        construction: &Construction,
        list_size: usize,
        snr: SnrDb,
        rule: &StopRule,
        seed: u64,
    ) -> Result<FerEstimate> {
        if list_size == 0 {
            return Err(Error::Argument("list size L must be at least 1".into()));
        }
        rule.validated()?;
        let channel = AwgnQpsk::new(snr, 1.0)?;
        let (frames, errors) = match &self.pool {
            None => {
                let mut dec = ListDecoder::new();
                let (mut frames, mut errors) = (0u64, 0u64);
                let mut block = 0;
                'blocks: loop {
                    let mut sim = BlockSim::new(construction, list_size, channel, seed, block);
                    for _ in 0..FRAMES_PER_BLOCK {
                        frames += 1;
                        errors += sim.frame(&mut dec)? as u64;
                        if rule.done(frames, errors) {
                            break 'blocks;
                        }
                    }
                    block += 1;
                }
                (frames, errors)
            }
            Some(pool) => pool.install(|| self.parallel_counts(construction, list_size, channel, rule, seed))?,
        };
        let capped = rule.mode == StopMode::Evaluation && !(errors >= rule.min_errors && frames >= rule.min_frames);
        Ok(FerEstimate::from_counts(frames, errors, seed, capped))
    }

    fn parallel_counts(
        &self,
        construction: &Construction,
        list_size: usize,
        channel: AwgnQpsk,
        rule: &StopRule,
        seed: u64,
    ) -> Result<(u64, u64)> {
        let (mut frames, mut errors) = (0u64, 0u64);
        let mut next_block = 0u64;
        loop {
            let blocks: Vec<u64> = (next_block..next_block + self.workers as u64).collect();
            next_block += self.workers as u64;
            let outcomes: Vec<Result<Vec<bool>>> = blocks
                .par_iter()
                .map_init(ListDecoder::new, |dec, &b| {
                    let mut sim = BlockSim::new(construction, list_size, channel, seed, b);
                    (0..FRAMES_PER_BLOCK).map(|_| sim.frame(dec)).collect()
                })
                .collect();
            for block in outcomes {
                for err in block? {
                    frames += 1;
                    errors += err as u64;
                    if rule.done(frames, errors) {
                        return Ok((frames, errors));
                    }
                }
            }
        }
    }
}

/// Single-threaded FER estimate.
pub fn estimate_fer(
    construction: &Construction,
    list_size: usize,
    snr: SnrDb,
    rule: &StopRule,
    seed: u64,
) -> Result<FerEstimate> {
    FerEngine::new(1)?.estimate(construction, list_size, snr, rule, seed)
}

/// One row of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub snr_db: f64,
    pub frames: u64,
    pub errors: u64,
    pub fer: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

impl SweepRow {
    pub fn new(label: &str, c: &Construction, l: usize, snr: SnrDb, est: &FerEstimate) -> Self {
        SweepRow {
            label: label.to_string(),
            n: c.spec().n(),
            k: c.spec().k(),
            m: c.spec().m(),
            l,
            snr_db: snr.0,
            frames: est.frames,
            errors: est.errors,
            fer: est.fer,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            seed: est.seed,
        }
    }
}

/// Cross product of constructions and SNRs, ordered by `(label, γ)`.
pub fn sweep(
    engine: &FerEngine,
    constructions: &[(String, Construction)],
    snrs: &[SnrDb],
    list_size: usize,
    rule: &StopRule,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if constructions.is_empty() || snrs.is_empty() {
        return Err(Error::Argument("sweep needs at least one construction and one SNR".into()));
    }
    let mut order: Vec<usize> = (0..constructions.len()).collect();
    order.sort_by(|&a, &b| constructions[a].0.cmp(&constructions[b].0).then(a.cmp(&b)));
    let mut gammas = snrs.to_vec();
    gammas.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rows = Vec::new();
    for i in order {
        let (label, c) = &constructions[i];
        for &g in &gammas {
            let est = engine.estimate(c, list_size, g, rule, row_seed(master_seed, g))?;
            rows.push(SweepRow::new(label, c, list_size, g, &est));
        }
    }
    Ok(rows)
}

pub const CSV_COLUMNS: [&str; 12] = [
    "label", "N", "K", "m", "L", "snr_db", "frames", "errors", "fer", "ci_low", "ci_high", "seed",
];

/// CSV with `#`-prefixed header comment lines followed by the fixed columns.
pub fn write_csv<W: Write>(out: W, comments: &[String], rows: &[SweepRow]) -> Result<()> {
    let mut out = out;
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses rows written by [`write_csv`], skipping comment lines.
pub fn read_csv(text: &str) -> Result<Vec<SweepRow>> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.deserialize().map(|row| row.map_err(|e| Error::Format(e.to_string()))).collect()
}
