use super::*;
use crate::channel::q_function;
use crate::decoder::ListDecoder;

/// Exact FER over a hard-quantized channel: every one of the `2^N` error
/// patterns of the all-zero codeword is decoded and weighted by its
/// probability.
struct QuantizedExact;

impl FerModel for QuantizedExact {
    fn fer(&self, code: &Construction, list_size: usize, gamma: SnrDb, _seed: u64) -> Result<f64> {
        let n = code.spec().n();
        let p = q_function(gamma.linear().sqrt());
        let mut dec = ListDecoder::new();
        let mut total = 0.0;
        let mut llr = vec![0.0; n];
        for pattern in 0u32..(1 << n) {
            for (i, l) in llr.iter_mut().enumerate() {
                *l = if pattern >> i & 1 == 1 { -1.0 } else { 1.0 };
            }
            let (u, _) = dec.cascl_u(&llr, code, list_size)?;
            if u.iter().any(|&b| b != 0) {
                let w = pattern.count_ones() as i32;
                total += p.powi(w) * (1.0 - p).powi(n as i32 - w);
            }
        }
        Ok(total)
    }
}

fn tiny_hyper() -> ImpHyper {
    ImpHyper {
        iterations: 1,
        d_emb: 3,
        d_init: 2,
        hidden: vec![6],
        d_pool: 1,
        mlp_hidden: vec![8],
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        n: 8,
        k: 4,
        m: 0,
        crc: None,
        list_size: 1,
        gamma_min: 0.0,
        gamma_max: 3.0,
        episodes: 6,
        minibatch: 4,
        replay_capacity: 10,
        reward_max_errors: 20,
        reward_max_frames: 400,
        seed: 3,
        hyper: tiny_hyper(),
        ..TrainConfig::default()
    }
}

fn spec84() -> CodeSpec {
    CodeSpec::new(8, 4, 0, None).unwrap()
}

#[test]
fn episode_has_n_minus_k_steps() {
    let mut s = EnvState::initial(&spec84(), SnrDb(1.0), 1).unwrap();
    assert_eq!(s.theta(), 1.0);
    let mut steps = 0;
    while !s.is_terminal() {
        let a = s.actions().next().unwrap();
        s = s.freeze(a).unwrap();
        steps += 1;
        assert_eq!(s.mask().iter().filter(|&&f| f).count(), s.t());
    }
    assert_eq!(steps, 4);
    assert_eq!(s.theta(), 0.0);
    assert!(s.freeze(7).is_err());
    let s0 = EnvState::initial(&spec84(), SnrDb(1.0), 1).unwrap().freeze(2).unwrap();
    assert!(matches!(s0.freeze(2), Err(Error::State(_))));
    assert_eq!(s0.code().unwrap().spec().k(), 7);
}

#[test]
fn telescoping_return_with_exact_fer() {
    let gamma = SnrDb(1.0);
    let mut s = EnvState::initial(&spec84(), gamma, 1).unwrap();
    let start = QuantizedExact.fer(&s.code().unwrap(), 1, gamma, 0).unwrap();
    let mut ret = 0.0;
    for a in [0, 1, 2, 4] {
        let (next, r) = env_step(&s, a, &QuantizedExact, a as u64).unwrap();
        ret += r;
        s = next;
    }
    let end = QuantizedExact.fer(&s.code().unwrap(), 1, gamma, 0).unwrap();
    assert!((ret - (start.ln() - end.ln())).abs() < 1e-12);
    // rate-one FER over a hard-decision channel is 1 − (1 − p)^N
    let p = q_function(gamma.linear().sqrt());
    assert!((start - (1.0 - (1.0 - p).powi(8))).abs() < 1e-12);
}

#[test]
fn freezing_the_weakest_bit_pays_off() {
    let gamma = SnrDb(1.0);
    let s = EnvState::initial(&spec84(), gamma, 1).unwrap();
    let (_, exact) = env_step(&s, 0, &QuantizedExact, 0).unwrap();
    assert!(exact > 0.0);
    let engine = FerEngine::new(1).unwrap();
    let mc = McFer {
        engine: &engine,
        rule: StopRule::training(2000, 200_000).unwrap(),
    };
    let (_, r) = env_step(&s, 0, &mc, 11).unwrap();
    assert!(r > 0.0, "{r}");
}

#[test]
fn schedules() {
    let c = TrainConfig::default();
    assert_eq!(c.epsilon(0), 0.5);
    assert!((c.epsilon(100) - 0.5 * 0.999f64.powi(100)).abs() < 1e-15);
    assert_eq!(c.epsilon(100_000), 1.0 / 160.0);
    assert_eq!(c.beta(0), 0.8);
    assert!((c.beta(10) - 0.9).abs() < 1e-15);
    assert_eq!(c.beta(20), 1.0);
    assert_eq!(c.beta(500), 1.0);
    let f = fine_tune_config(&c, SnrDb(2.5), 7);
    assert_eq!((f.gamma_min, f.gamma_max, f.episodes), (2.5, 2.5, 7));
    assert_eq!(f.epsilon(0), 1.0 / 160.0);
}

#[test]
fn config_round_trips_and_validates() {
    let c = TrainConfig::default();
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
    let partial: TrainConfig = serde_json::from_str(r#"{"n": 16, "k": 8, "crc": "0x3"}"#).unwrap();
    assert_eq!((partial.n, partial.k, partial.crc), (16, 8, Some(CrcPoly(0x3))));
    let bad = TrainConfig {
        gamma_min: 3.0,
        gamma_max: 1.0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
}

#[test]
fn training_is_deterministic_and_bounded() {
    let cfg = tiny_config();
    let init = ImpParams::random(cfg.hyper.clone(), 1).unwrap();
    let mut seen = 0;
    let a = train_with(&cfg, init.clone(), &QuantizedExact, &mut |l, _| {
        assert!(l.buffer_len <= 10);
        assert_eq!(l.frozen.len(), 4);
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 6);
    let b = train_with(&cfg, init.clone(), &QuantizedExact, &mut |_, _| {}).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.logs, b.logs);
    assert_ne!(a.params, init);
    assert!(a.logs.iter().all(|l| l.beta <= 1.0 && l.epsilon <= 0.5));
}

#[test]
fn monte_carlo_training_runs() {
    let cfg = tiny_config();
    let a = dqn_train(&cfg, &mut |_, _| {}).unwrap();
    let b = dqn_train(&TrainConfig { workers: 3, ..cfg.clone() }, &mut |_, _| {}).unwrap();
    assert_eq!(a.params, b.params);
    let ft = fine_tune(&a.params, SnrDb(2.0), 0, &cfg, &mut |_, _| {}).unwrap();
    assert_eq!(ft.params, a.params);
    let f1 = fine_tune(&a.params, SnrDb(2.0), 3, &cfg, &mut |_, _| {}).unwrap();
    let f2 = fine_tune(&a.params, SnrDb(2.0), 3, &cfg, &mut |_, _| {}).unwrap();
    assert_eq!(f1.params, f2.params);
    assert!(f1.logs.iter().all(|l| l.gamma_db == 2.0));
}

#[test]
fn divergence_is_reported() {
    let cfg = TrainConfig {
        learning_rate: 1e300,
        ..tiny_config()
    };
    let init = ImpParams::random(cfg.hyper.clone(), 1).unwrap();
    let err = train_with(&cfg, init, &QuantizedExact, &mut |_, _| {}).err().unwrap();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
    assert!(err.is_numerical());
}
