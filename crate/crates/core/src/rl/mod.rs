//! Construction as a Markov decision process, and deep Q-learning over it.
//!
//! A state is the partially frozen graph; the action freezes one more check
//! node; the reward is the drop in log FER of the intermediate code.

mod replay;

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use replay::ReplayBuffer;

use crate::channel::{substream, SnrDb};
use crate::error::{Error, Result};
use crate::fer::{derive_seed, FerEngine, StopRule};
use crate::imp::theta_at;
use crate::model::{backward, forward, ImpHyper, ImpParams, StateInput};
use crate::pccmp::{PccmpGraph, PccmpStructure};
use crate::polar::{CodeSpec, Construction, CrcPoly};

/// Source of FER values for rewards.
pub trait FerModel: Sync {
    /// Positive FER of `code` at `gamma`. Calls with equal `seed` share
    /// random numbers.
    fn fer(&self, code: &Construction, list_size: usize, gamma: SnrDb, seed: u64) -> Result<f64>;
}

/// Monte Carlo FER with zero-error estimates floored.
pub struct McFer<'a> {
    pub engine: &'a FerEngine,
    pub rule: StopRule,
}

impl FerModel for McFer<'_> {
    fn fer(&self, code: &Construction, list_size: usize, gamma: SnrDb, seed: u64) -> Result<f64> {
        Ok(self.engine.estimate(code, list_size, gamma, &self.rule, seed)?.floored())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    mask: Vec<bool>,
    t: usize,
    gamma: SnrDb,
    spec: CodeSpec,
    list_size: usize,
}

impl EnvState {
    /// The rate-one start state of an episode targeting `spec`.
    pub fn initial(spec: &CodeSpec, gamma: SnrDb, list_size: usize) -> Result<Self> {
        if spec.k() >= spec.n() {
            return Err(Error::Argument(format!("target K={} leaves nothing to freeze", spec.k())));
        }
        if list_size == 0 {
            return Err(Error::Argument("list size must be positive".into()));
        }
        Ok(EnvState {
            mask: vec![false; spec.n()],
            t: 0,
            gamma,
            spec: spec.clone(),
            list_size,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.spec.n() - self.spec.k()
    }

    pub fn theta(&self) -> f64 {
        theta_at(self.t, self.steps())
    }

    pub fn gamma(&self) -> SnrDb {
        self.gamma
    }

    pub fn spec(&self) -> &CodeSpec {
        &self.spec
    }

    pub fn list_size(&self) -> usize {
        self.list_size
    }

    pub fn is_terminal(&self) -> bool {
        self.t == self.steps()
    }

    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &f)| !f).map(|(j, _)| j)
    }

    /// The intermediate code `P(N, N − t, m)`.
    pub fn code(&self) -> Result<Construction> {
        let s = &self.spec;
        Construction::from_frozen_mask(CodeSpec::new(s.n(), s.n() - self.t, s.m(), s.crc())?, &self.mask)
    }

    pub fn graph(&self, structure: &Arc<PccmpStructure>) -> Result<PccmpGraph> {
        PccmpGraph::with_frozen_mask(structure.clone(), self.gamma, &self.mask)
    }

    pub fn freeze(&self, action: usize) -> Result<EnvState> {
        if self.is_terminal() {
            return Err(Error::State("episode already terminated".into()));
        }
        match self.mask.get(action) {
            None => Err(Error::Argument(format!("action {action} out of range"))),
            Some(true) => Err(Error::State(format!("action {action} is already frozen"))),
            Some(false) => {
                let mut next = self.clone();
                next.mask[action] = true;
                next.t += 1;
                Ok(next)
            }
        }
    }
}

fn checked_ln(p: f64, what: &str) -> Result<f64> {
    if p > 0.0 && p.is_finite() {
        Ok(p.ln())
    } else {
        Err(Error::Numerical(format!("{what} FER {p} has no finite logarithm")))
    }
}

/// One transition. `before` reuses a known FER of the current code instead
/// of simulating it again. Returns the next state, the reward and the FER of
/// the next code.
pub fn env_step_with(
    state: &EnvState,
    action: usize,
    fer: &dyn FerModel,
    seed: u64,
    before: Option<f64>,
) -> Result<(EnvState, f64, f64)> {
    let next = state.freeze(action)?;
    let p0 = match before {
        Some(p) => p,
        None => fer.fer(&state.code()?, state.list_size, state.gamma, seed)?,
    };
    let p1 = fer.fer(&next.code()?, state.list_size, state.gamma, seed)?;
    let reward = checked_ln(p0, "current")? - checked_ln(p1, "next")?;
    Ok((next, reward, p1))
}

/// `r = ln P̂(I_t) − ln P̂(I_{t+1})`, both estimates drawn with `seed`.
pub fn env_step(state: &EnvState, action: usize, fer: &dyn FerModel, seed: u64) -> Result<(EnvState, f64)> {
    env_step_with(state, action, fer, seed, None).map(|(s, r, _)| (s, r))
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub mask: Vec<bool>,
    pub theta: f64,
    pub gamma: SnrDb,
    pub action: usize,
    pub reward: f64,
    pub next_theta: f64,
    pub terminal: bool,
}

impl Transition {
    pub fn next_mask(&self) -> Vec<bool> {
        let mut m = self.mask.clone();
        m[self.action] = true;
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub crc: Option<CrcPoly>,
    pub list_size: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub episodes: usize,
    pub eps_init: f64,
    pub eps_decay: f64,
    /// Defaults to `1/(5N)`.
    pub eps_floor: Option<f64>,
    pub beta_init: f64,
    pub beta_ramp_episodes: usize,
    pub reward_max_errors: u64,
    pub reward_max_frames: u64,
    pub replay_capacity: usize,
    pub target_period: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub cache_rewards: bool,
    pub seed: u64,
    /// Runtime only: results do not depend on it, so it is never serialized.
    #[serde(skip)]
    pub workers: usize,
    pub hyper: ImpHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 32,
            k: 16,
            m: 4,
            crc: Some(CrcPoly::CRC4_0X3),
            list_size: 2,
            gamma_min: 1.0,
            gamma_max: 4.0,
            episodes: 2000,
            eps_init: 0.5,
            eps_decay: 0.999,
            eps_floor: None,
            beta_init: 0.8,
            beta_ramp_episodes: 20,
            reward_max_errors: 100,
            reward_max_frames: 100_000,
            replay_capacity: 10_000,
            target_period: 2,
            minibatch: 32,
            learning_rate: 1e-3,
            cache_rewards: false,
            seed: 0,
            workers: 1,
            hyper: ImpHyper::default(),
        }
    }
}

impl TrainConfig {
    pub fn spec(&self) -> Result<CodeSpec> {
        CodeSpec::new(self.n, self.k, self.m, self.crc)
    }

    pub fn eps_floor(&self) -> f64 {
        self.eps_floor.unwrap_or(1.0 / (5.0 * self.n as f64))
    }

    /// `ε` after `tau` environment steps.
    pub fn epsilon(&self, tau: u64) -> f64 {
        let e = self.eps_init * self.eps_decay.powf(tau as f64);
        e.max(self.eps_floor())
    }

    /// Discount at episode `e` (0-based).
    pub fn beta(&self, e: usize) -> f64 {
        if self.beta_ramp_episodes == 0 {
            return 1.0;
        }
        let r = (e as f64 / self.beta_ramp_episodes as f64).min(1.0);
        (self.beta_init + (1.0 - self.beta_init) * r).min(1.0)
    }

    pub fn reward_rule(&self) -> Result<StopRule> {
        StopRule::training(self.reward_max_errors, self.reward_max_frames)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec()?;
        if spec.k() >= spec.n() {
            return Err(Error::Config("training needs K < N".into()));
        }
        if self.list_size == 0 {
            return Err(Error::Config("list size must be positive".into()));
        }
        if !(self.gamma_min.is_finite() && self.gamma_max.is_finite() && self.gamma_min <= self.gamma_max) {
            return Err(Error::Config(format!(
                "need finite gamma_min <= gamma_max, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.eps_init) || !unit(self.eps_decay) || !(0.0..=1.0).contains(&self.eps_floor()) {
            return Err(Error::Config("exploration schedule must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_init) {
            return Err(Error::Config("beta_init must lie in [0, 1]".into()));
        }
        if self.replay_capacity == 0 || self.minibatch == 0 || self.target_period == 0 {
            return Err(Error::Config("replay capacity, minibatch and target period must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.reward_rule()?;
        self.hyper.validate()
    }
}

/// Per-episode training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub gamma_db: f64,
    pub episode_return: f64,
    /// Mean return over the last (up to) 50 episodes.
    pub mean_return: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub mean_loss: Option<f64>,
    pub updates: usize,
    pub buffer_len: usize,
    pub final_log_fer: f64,
    pub frozen: Vec<usize>,
}

pub struct TrainOutcome {
    pub params: ImpParams,
    pub logs: Vec<EpisodeLog>,
}

const RETURN_WINDOW: usize = 50;

/// Q-values of several states in one batched forward pass.
fn q_values(params: &ImpParams, graphs: &[PccmpGraph], thetas: &[f64]) -> Result<Array2<f64>> {
    let inputs: Vec<StateInput> = graphs
        .iter()
        .zip(thetas)
        .map(|(graph, &theta)| StateInput { graph, theta })
        .collect();
    Ok(forward(params, &inputs)?.into_z())
}

fn masked_argmax(z: impl Iterator<Item = f64>, mask: &[bool]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in z.enumerate() {
        if mask[j] {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

struct Learner<'a> {
    cfg: &'a TrainConfig,
    structure: Arc<PccmpStructure>,
    online: ImpParams,
    target: ImpParams,
}

impl Learner<'_> {
    /// One squared-TD-error SGD step; returns the minibatch loss.
    fn update(&mut self, batch: &[&Transition], beta: f64, episode: usize, step: usize) -> Result<f64> {
        let b = batch.len();
        let n = self.cfg.n;
        let live: Vec<&&Transition> = batch.iter().filter(|t| !t.terminal).collect();
        let mut bootstrap = vec![0.0; b];
        if !live.is_empty() {
            let masks: Vec<Vec<bool>> = live.iter().map(|t| t.next_mask()).collect();
            let graphs = live
                .iter()
                .zip(&masks)
                .map(|(t, m)| PccmpGraph::with_frozen_mask(self.structure.clone(), t.gamma, m))
                .collect::<Result<Vec<_>>>()?;
            let thetas: Vec<f64> = live.iter().map(|t| t.next_theta).collect();
            let zt = q_values(&self.target, &graphs, &thetas)?;
            let mut li = 0;
            for (i, t) in batch.iter().enumerate() {
                if t.terminal {
                    continue;
                }
                let (_, q) = masked_argmax(zt.row(li).iter().copied(), &masks[li])
                    .ok_or_else(|| Error::Invariant("non-terminal state without actions".into()))?;
                bootstrap[i] = q;
                li += 1;
            }
        }
        let graphs = batch
            .iter()
            .map(|t| PccmpGraph::with_frozen_mask(self.structure.clone(), t.gamma, &t.mask))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<StateInput> = graphs
            .iter()
            .zip(batch)
            .map(|(graph, t)| StateInput { graph, theta: t.theta })
            .collect();
        let fp = forward(&self.online, &inputs)?;
        let mut dz = Array2::zeros((b, n));
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let y = t.reward + beta * bootstrap[i];
            let diff = fp.z()[[i, t.action]] - y;
            loss += diff * diff;
            dz[[i, t.action]] = 2.0 * diff / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { episode, step, loss });
        }
        let grads = backward(&self.online, &fp, dz.view())?;
        self.online.axpy(-self.cfg.learning_rate, &grads);
        if !self.online.is_finite() {
            return Err(Error::Divergence { episode, step, loss });
        }
        Ok(loss)
    }
}

/// Runs deep Q-learning from `init`.
pub fn train_with(
    cfg: &TrainConfig,
    init: ImpParams,
    fer: &dyn FerModel,
    on_episode: &mut dyn FnMut(&EpisodeLog, &ImpParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if init.hyper != cfg.hyper {
        return Err(Error::Config("initial parameters do not match the configured architecture".into()));
    }
    let spec = cfg.spec()?;
    let mut learner = Learner {
        cfg,
        structure: Arc::new(PccmpStructure::new(cfg.n)?),
        target: init.clone(),
        online: init,
    };
    let mut gamma_rng = substream(cfg.seed, 101);
    let mut explore_rng = substream(cfg.seed, 102);
    let mut replay_rng = substream(cfg.seed, 103);
    let reward_master = derive_seed(cfg.seed, 104);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(cfg.replay_capacity);
    let mut logs: Vec<EpisodeLog> = Vec::with_capacity(cfg.episodes);
    let mut tau: u64 = 0;
    for e in 0..cfg.episodes {
        let gamma = if cfg.gamma_min == cfg.gamma_max {
            SnrDb(cfg.gamma_min)
        } else {
            SnrDb(gamma_rng.random_range(cfg.gamma_min..=cfg.gamma_max))
        };
        let beta = cfg.beta(e);
        let episode_seed = derive_seed(reward_master, e as u64);
        let mut state = EnvState::initial(&spec, gamma, cfg.list_size)?;
        let mut ret = 0.0;
        let (mut loss_sum, mut updates) = (0.0, 0usize);
        let mut known: Option<f64> = None;
        let mut last_fer = f64::NAN;
        let mut eps = cfg.epsilon(tau);
        while !state.is_terminal() {
            let step = state.t();
            eps = cfg.epsilon(tau);
            let action = if explore_rng.random::<f64>() < eps {
                let free: Vec<usize> = state.actions().collect();
                free[explore_rng.random_range(0..free.len())]
            } else {
                let g = state.graph(&learner.structure)?;
                let z = q_values(&learner.online, std::slice::from_ref(&g), &[state.theta()])?;
                if let Some(j) = z.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Divergence { episode: e, step, loss: z[[0, j]] });
                }
                masked_argmax(z.row(0).iter().copied(), state.mask()).expect("non-terminal state has actions").0
            };
            if state.mask()[action] {
                return Err(Error::Invariant(format!("policy chose frozen index {action}")));
            }
            let seed = derive_seed(episode_seed, step as u64);
            let before = if cfg.cache_rewards { known } else { None };
            let (next, reward, p1) = env_step_with(&state, action, fer, seed, before)?;
            known = Some(p1);
            last_fer = p1;
            ret += reward;
            buffer.push(Transition {
                mask: state.mask().to_vec(),
                theta: state.theta(),
                gamma,
                action,
                reward,
                next_theta: next.theta(),
                terminal: next.is_terminal(),
            });
            if buffer.len() >= cfg.minibatch {
                let batch = buffer.sample(&mut replay_rng, cfg.minibatch);
                loss_sum += learner.update(&batch, beta, e, step)?;
                updates += 1;
            }
            tau += 1;
            state = next;
        }
        if (e + 1) % cfg.target_period == 0 {
            learner.target = learner.online.clone();
        }
        let window = logs.iter().rev().take(RETURN_WINDOW - 1).map(|l| l.episode_return);
        let count = logs.len().min(RETURN_WINDOW - 1) + 1;
        let mean_return = (window.sum::<f64>() + ret) / count as f64;
        let log = EpisodeLog {
            episode: e,
            gamma_db: gamma.0,
            episode_return: ret,
            mean_return,
            epsilon: eps,
            beta,
            mean_loss: (updates > 0).then(|| loss_sum / updates as f64),
            updates,
            buffer_len: buffer.len(),
            final_log_fer: last_fer.ln(),
            frozen: state.mask().iter().enumerate().filter(|(_, &f)| f).map(|(j, _)| j).collect(),
        };
        on_episode(&log, &learner.online);
        logs.push(log);
    }
    Ok(TrainOutcome {
        params: learner.online,
        logs,
    })
}

/// Trains from a seeded random initialization with Monte Carlo rewards.
pub fn dqn_train(cfg: &TrainConfig, on_episode: &mut dyn FnMut(&EpisodeLog, &ImpParams)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let engine = FerEngine::new(cfg.workers)?;
    let fer = McFer {
        engine: &engine,
        rule: cfg.reward_rule()?,
    };
    let init = ImpParams::random(cfg.hyper.clone(), cfg.seed)?;
    train_with(cfg, init, &fer, on_episode)
}

/// Configuration for continuing training at a single SNR: every episode uses
/// `gamma_eval`, exploration starts at its floor and the discount at 1.
pub fn fine_tune_config(cfg: &TrainConfig, gamma_eval: SnrDb, episodes: usize) -> TrainConfig {
    let mut c = cfg.clone();
    c.gamma_min = gamma_eval.0;
    c.gamma_max = gamma_eval.0;
    c.episodes = episodes;
    c.eps_init = c.eps_floor();
    c.beta_init = 1.0;
    c
}

/// Continues training a copy of `params` at `gamma_eval`.
pub fn fine_tune(
    params: &ImpParams,
    gamma_eval: SnrDb,
    episodes: usize,
    cfg: &TrainConfig,
    on_episode: &mut dyn FnMut(&EpisodeLog, &ImpParams),
) -> Result<TrainOutcome> {
    if episodes == 0 {
        return Ok(TrainOutcome {
            params: params.clone(),
            logs: Vec::new(),
        });
    }
    let mut c = fine_tune_config(cfg, gamma_eval, episodes);
    c.hyper = params.hyper.clone();
    c.validate()?;
    let engine = FerEngine::new(c.workers)?;
    let fer = McFer {
        engine: &engine,
        rule: c.reward_rule()?,
    };
    train_with(&c, params.clone(), &fer, on_episode)
}

#[cfg(test)]
mod tests;
