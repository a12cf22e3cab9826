use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use polar_imp::appendix::verify_claim1 as run_claim1;
use polar_imp::classical::{run_abstract_construction, BhattacharyyaOps, ConstructionOps, GaInit, GaOps, ZLayout};
use polar_imp::fer::{sweep, write_csv, FerEngine, StopRule, SweepRow};
use polar_imp::imp::{construct_imp, neighborhood_search, DEFAULT_NS_OFFSETS};
use polar_imp::model::{gradcheck as run_gradcheck, load_checkpoint, save_checkpoint, ImpHyper, ImpParams, StateInput};
use polar_imp::pccmp::{PccmpGraph, PccmpStructure};
use polar_imp::rl::{self, EpisodeLog, TrainConfig};
use polar_imp::{substream, CodeSpec, Construction, ConstructionFile, CrcPoly, SnrDb};

use crate::config::{csv_comments, file_sha256, merge, output_path, provenance, resolve, write_json};
use crate::{CliError, Runtime};

type CliResult = Result<(), CliError>;

fn spec_of(n: usize, k: usize, m: usize, crc: Option<CrcPoly>) -> Result<CodeSpec, CliError> {
    CodeSpec::new(n, k, m, crc).map_err(|e| CliError::usage(e.to_string()))
}

fn make_ops(name: &str, gamma: SnrDb) -> Result<Box<dyn ConstructionOps>, CliError> {
    Ok(match name {
        "ga" | "ga-linear" => Box::new(GaOps::new(GaInit::Linear)),
        "ga-db" => Box::new(GaOps::new(GaInit::DbLiteral)),
        "ga-matched" => Box::new(GaOps::new(GaInit::ChannelMatched)),
        "bhatt" | "bhattacharyya" => Box::new(BhattacharyyaOps::for_awgn(gamma)?),
        other => {
            return Err(CliError::usage(format!(
                "unknown construction method {other:?} (ga, ga-db, ga-matched, bhattacharyya)"
            )))
        }
    })
}

fn eval_rule(min_errors: u64, min_frames: u64, max_frames: u64) -> Result<StopRule, CliError> {
    StopRule::evaluation(min_errors, min_frames, max_frames).map_err(|e| CliError::usage(e.to_string()))
}

fn budget_defaults(m: &mut Map<String, Value>) {
    m.insert("min_errors".into(), json!(500));
    m.insert("min_frames".into(), json!(1_000_000));
    m.insert("max_frames".into(), json!(100_000_000));
    m.insert("seed".into(), json!(0));
}

fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

#[derive(Args, Serialize, Debug)]
pub struct BudgetFlags {
    /// Minimum frame errors before stopping.
    #[arg(long)]
    min_errors: Option<u64>,
    /// Minimum frames before stopping.
    #[arg(long)]
    min_frames: Option<u64>,
    /// Frame cap.
    #[arg(long)]
    max_frames: Option<u64>,
}

// ---------------------------------------------------------------- baseline

#[derive(Args, Serialize, Debug)]
pub struct BaselineArgs {
    /// ga, ga-db, ga-matched or bhattacharyya.
    #[arg(long)]
    method: Option<String>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// CRC polynomial in hex, leading term implicit.
    #[arg(long)]
    crc: Option<String>,
    /// Design Es/N0 in dB.
    #[arg(long)]
    gamma: Option<f64>,
    /// natural or offset.
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineCfg {
    method: String,
    n: usize,
    k: usize,
    m: usize,
    crc: Option<CrcPoly>,
    gamma: f64,
    layout: ZLayout,
    seed: u64,
}

pub fn baseline(a: BaselineArgs) -> CliResult {
    let defaults = json!({"method": "ga", "m": 0, "crc": null, "layout": "natural", "seed": 0});
    let cfg: BaselineCfg = resolve(merge(defaults, a.rt.config.as_deref(), &a)?)?;
    let spec = spec_of(cfg.n, cfg.k, cfg.m, cfg.crc)?;
    let gamma = SnrDb(cfg.gamma);
    let ops = make_ops(&cfg.method, gamma)?;
    let c = run_abstract_construction(spec, ops.as_ref(), gamma, cfg.layout)?;
    let prov = provenance("baseline", &cfg, cfg.seed, json!({"ops": ops.name()}));
    let path = output_path(&a.rt.out, "construction.json")?;
    write_construction(&path, &c.construction, prov)?;
    println!("{}", path.display());
    Ok(())
}

fn write_construction(path: &Path, c: &Construction, prov: Value) -> CliResult {
    let file = ConstructionFile::from_construction(c, Some(prov));
    fs::write(path, file.to_json()).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn load_construction(path: &Path) -> Result<Construction, CliError> {
    let file = ConstructionFile::load(path)
        .map_err(|e| CliError::usage(format!("cannot load construction {}: {e}", path.display())))?;
    Ok(file.to_construction()?)
}

// ---------------------------------------------------------------- construct

#[derive(Args, Serialize, Debug)]
pub struct ConstructArgs {
    /// Model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    crc: Option<String>,
    /// Design Es/N0 in dB (the evaluation SNR with --ns).
    #[arg(long)]
    gamma: Option<f64>,
    /// Pick the best of the constructions at gamma + offsets by simulated FER.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    ns: Option<bool>,
    /// Neighborhood-search offsets in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    offsets: Option<Vec<f64>>,
    /// List size used by the neighborhood search.
    #[arg(long = "L")]
    list_size: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    budget: BudgetFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstructCfg {
    checkpoint: PathBuf,
    n: usize,
    k: usize,
    m: usize,
    crc: Option<CrcPoly>,
    gamma: f64,
    ns: bool,
    offsets: Vec<f64>,
    list_size: usize,
    min_errors: u64,
    min_frames: u64,
    max_frames: u64,
    seed: u64,
}

pub fn construct(a: ConstructArgs) -> CliResult {
    let mut d = obj(json!({"m": 0, "crc": null, "ns": false, "offsets": DEFAULT_NS_OFFSETS, "list_size": 2}));
    budget_defaults(&mut d);
    let cfg: ConstructCfg = resolve(merge(Value::Object(d), a.rt.config.as_deref(), &a)?)?;
    let spec = spec_of(cfg.n, cfg.k, cfg.m, cfg.crc)?;
    let (params, meta) = load_checkpoint(&cfg.checkpoint)
        .map_err(|e| CliError::usage(format!("cannot load checkpoint {}: {e}", cfg.checkpoint.display())))?;
    let gamma = SnrDb(cfg.gamma);
    let run = construct_imp(&spec, gamma, &params)?;
    let mut extra = json!({
        "checkpoint_sha256": meta.sha256,
        "design_snr_db": cfg.gamma,
        "theta_schedule": run.thetas,
        "freeze_order": run.order,
    });
    let construction = if cfg.ns {
        let engine = FerEngine::new(a.rt.workers)?;
        let rule = eval_rule(cfg.min_errors, cfg.min_frames, cfg.max_frames)?;
        let ns = neighborhood_search(&spec, gamma, &params, &cfg.offsets, cfg.list_size, &rule, cfg.seed, &engine)?;
        extra["neighborhood_search"] = serde_json::to_value(&ns).expect("serializes");
        extra["design_snr_db"] = json!(gamma.offset(ns.offset_db).0);
        let chosen = construct_imp(&spec, gamma.offset(ns.offset_db), &params)?;
        extra["theta_schedule"] = json!(chosen.thetas);
        extra["freeze_order"] = json!(chosen.order);
        ns.construction
    } else {
        run.construction
    };
    let prov = provenance("construct", &cfg, cfg.seed, extra);
    let path = output_path(&a.rt.out, "construction.json")?;
    write_construction(&path, &construction, prov)?;
    println!("{}", path.display());
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Serialize, Debug)]
pub struct TrainFlags {
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    crc: Option<String>,
    #[arg(long = "L")]
    list_size: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    gamma_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma_max: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    eps_init: Option<f64>,
    #[arg(long)]
    eps_decay: Option<f64>,
    #[arg(long)]
    eps_floor: Option<f64>,
    #[arg(long)]
    beta_init: Option<f64>,
    #[arg(long)]
    beta_ramp_episodes: Option<usize>,
    #[arg(long)]
    reward_max_errors: Option<u64>,
    #[arg(long)]
    reward_max_frames: Option<u64>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    #[arg(long)]
    target_period: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Reuse the previous step's FER estimate of the current code.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    cache_rewards: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a checkpoint every this many episodes (0 = final only).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Serialize, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

fn split_train_config(merged: Value, keys: &[&str]) -> Result<(TrainConfig, Map<String, Value>), CliError> {
    let mut m = obj(merged);
    let mut extra = Map::new();
    for k in keys {
        if let Some(v) = m.remove(*k) {
            extra.insert(k.to_string(), v);
        }
    }
    let cfg: TrainConfig = resolve(Value::Object(m))?;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok((cfg, extra))
}

fn run_training(
    command: &str,
    rt: &Runtime,
    cfg: TrainConfig,
    extra_cfg: Map<String, Value>,
    extra_prov: Value,
    go: impl FnOnce(&TrainConfig, &mut dyn FnMut(&EpisodeLog, &ImpParams)) -> polar_imp::Result<rl::TrainOutcome>,
) -> CliResult {
    let every = extra_cfg.get("checkpoint_every").and_then(Value::as_u64).unwrap_or(0) as usize;
    let mut echo = obj(serde_json::to_value(&cfg).expect("serializes"));
    echo.extend(extra_cfg);
    let prov = provenance(command, &echo, cfg.seed, extra_prov);
    let meta = json!({"provenance": prov, "train_config": cfg});
    let log_path = output_path(&rt.out, "train_log.jsonl")?;
    let io = |e: std::io::Error| CliError::usage(format!("cannot write {}: {e}", log_path.display()));
    let mut log = fs::File::create(&log_path).map_err(io)?;
    writeln!(log, "{}", json!({ "provenance": prov })).map_err(io)?;
    let started = Instant::now();
    let mut failure: Option<CliError> = None;
    let total = cfg.episodes;
    let mut on_episode = |l: &EpisodeLog, p: &ImpParams| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = writeln!(log, "{}", serde_json::to_string(l).expect("serializes")) {
            failure = Some(CliError::usage(format!("cannot write training log: {e}")));
        }
        let done = l.episode + 1;
        if done % 10 == 0 || done == total {
            eprintln!(
                "episode {done}/{total} return {:.4} mean {:.4} eps {:.4} beta {:.3} wall {:.1}s",
                l.episode_return,
                l.mean_return,
                l.epsilon,
                l.beta,
                started.elapsed().as_secs_f64()
            );
        }
        if every > 0 && done % every == 0 && done < total {
            let path = rt.out.join(format!("checkpoint_ep{done}.ckpt"));
            if let Err(e) = save_checkpoint(&path, p, &meta) {
                failure = Some(e.into());
            }
        }
    };
    let outcome = go(&cfg, &mut on_episode)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let path = output_path(&rt.out, "checkpoint.ckpt")?;
    let hash = save_checkpoint(&path, &outcome.params, &meta)?;
    eprintln!("wall time {:.1}s", started.elapsed().as_secs_f64());
    println!("{} sha256:{hash}", path.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut d = obj(serde_json::to_value(TrainConfig::default()).expect("serializes"));
    d.insert("checkpoint_every".into(), json!(0));
    let merged = merge(Value::Object(d), a.rt.config.as_deref(), &a)?;
    let (mut cfg, extra) = split_train_config(merged, &["checkpoint_every"])?;
    cfg.workers = a.rt.workers;
    run_training("train", &a.rt, cfg, extra, json!({}), |c, cb| rl::dqn_train(c, cb))
}

#[derive(Args, Serialize, Debug)]
pub struct FineTuneArgs {
    /// Trained model to start from.
    #[arg(long)]
    #[serde(skip)]
    checkpoint: PathBuf,
    /// SNR in dB used by every fine-tuning episode.
    #[arg(long, allow_hyphen_values = true)]
    gamma_eval: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

pub fn fine_tune(a: FineTuneArgs) -> CliResult {
    let (params, meta) = load_checkpoint(&a.checkpoint)
        .map_err(|e| CliError::usage(format!("cannot load checkpoint {}: {e}", a.checkpoint.display())))?;
    let base = meta
        .meta
        .get("train_config")
        .cloned()
        .unwrap_or_else(|| serde_json::to_value(TrainConfig::default()).expect("serializes"));
    let mut d = obj(base);
    d.insert("episodes".into(), json!(100));
    d.insert("checkpoint_every".into(), json!(0));
    let merged = merge(Value::Object(d), a.rt.config.as_deref(), &a)?;
    let (mut cfg, extra) = split_train_config(merged, &["checkpoint_every", "gamma_eval"])?;
    let gamma = extra
        .get("gamma_eval")
        .and_then(Value::as_f64)
        .ok_or_else(|| CliError::usage("--gamma-eval is required"))?;
    cfg.workers = a.rt.workers;
    cfg.hyper = params.hyper.clone();
    let episodes = cfg.episodes;
    let tuned = rl::fine_tune_config(&cfg, SnrDb(gamma), episodes);
    let prov = json!({"base_checkpoint_sha256": meta.sha256, "base_checkpoint": a.checkpoint});
    run_training("fine-tune", &a.rt, tuned, extra, prov, |_, cb| {
        rl::fine_tune(&params, SnrDb(gamma), episodes, &cfg, cb)
    })
}

// ---------------------------------------------------------------- evaluate / compare

#[derive(Args, Serialize, Debug)]
pub struct EvaluateArgs {
    /// Construction JSON file.
    #[arg(long)]
    construction: Option<PathBuf>,
    /// Row label (defaults to the file stem).
    #[arg(long)]
    label: Option<String>,
    #[arg(long = "L")]
    list_size: Option<usize>,
    /// Es/N0 grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snrs: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    budget: BudgetFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateCfg {
    construction: PathBuf,
    label: Option<String>,
    list_size: usize,
    snrs: Vec<f64>,
    min_errors: u64,
    min_frames: u64,
    max_frames: u64,
    seed: u64,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "construction".into())
}

fn run_sweep(
    command: &str,
    rt: &Runtime,
    cfg: &impl Serialize,
    inputs: Vec<(String, PathBuf)>,
    list_size: usize,
    snrs: &[f64],
    rule: StopRule,
    seed: u64,
    file: &str,
) -> CliResult {
    let mut constructions = Vec::new();
    let mut hashes = Map::new();
    for (label, path) in inputs {
        constructions.push((label.clone(), load_construction(&path)?));
        hashes.insert(label, json!(file_sha256(&path)?));
    }
    let engine = FerEngine::new(rt.workers)?;
    let gammas: Vec<SnrDb> = snrs.iter().map(|&g| SnrDb(g)).collect();
    let started = Instant::now();
    let rows: Vec<SweepRow> = sweep(&engine, &constructions, &gammas, list_size, &rule, seed)?;
    eprintln!("wall time {:.1}s", started.elapsed().as_secs_f64());
    let prov = provenance(command, cfg, seed, json!({"construction_sha256": hashes}));
    let path = output_path(&rt.out, file)?;
    let f = fs::File::create(&path).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    write_csv(f, &csv_comments(&prov), &rows)?;
    println!("{}", path.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let mut d = obj(json!({"label": null}));
    budget_defaults(&mut d);
    let cfg: EvaluateCfg = resolve(merge(Value::Object(d), a.rt.config.as_deref(), &a)?)?;
    let label = cfg.label.clone().unwrap_or_else(|| stem(&cfg.construction));
    let rule = eval_rule(cfg.min_errors, cfg.min_frames, cfg.max_frames)?;
    let inputs = vec![(label, cfg.construction.clone())];
    run_sweep("evaluate", &a.rt, &cfg, inputs, cfg.list_size, &cfg.snrs, rule, cfg.seed, "fer.csv")
}

#[derive(Args, Serialize, Debug)]
pub struct CompareArgs {
    /// Construction files as `label=path` or `path`; repeatable.
    #[arg(long = "construction")]
    constructions: Option<Vec<String>>,
    #[arg(long = "L")]
    list_size: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snrs: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    budget: BudgetFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareCfg {
    constructions: Vec<String>,
    list_size: usize,
    snrs: Vec<f64>,
    min_errors: u64,
    min_frames: u64,
    max_frames: u64,
    seed: u64,
}

pub fn compare(a: CompareArgs) -> CliResult {
    let mut d = Map::new();
    budget_defaults(&mut d);
    let cfg: CompareCfg = resolve(merge(Value::Object(d), a.rt.config.as_deref(), &a)?)?;
    if cfg.constructions.is_empty() {
        return Err(CliError::usage("compare needs at least one --construction"));
    }
    let inputs = cfg
        .constructions
        .iter()
        .map(|s| match s.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => (stem(Path::new(s)), PathBuf::from(s)),
        })
        .collect();
    let rule = eval_rule(cfg.min_errors, cfg.min_frames, cfg.max_frames)?;
    run_sweep("compare", &a.rt, &cfg, inputs, cfg.list_size, &cfg.snrs, rule, cfg.seed, "compare.csv")
}

// ---------------------------------------------------------------- verify-claim1

#[derive(Args, Serialize, Debug)]
pub struct Claim1Args {
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    /// ga or bhatt.
    #[arg(long)]
    ops: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    layout: Option<String>,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Claim1Cfg {
    n: usize,
    k: usize,
    ops: String,
    gamma: f64,
    layout: ZLayout,
}

pub fn verify_claim1(a: Claim1Args) -> CliResult {
    let defaults = json!({"ops": "bhatt", "gamma": 0.0, "layout": "natural"});
    let cfg: Claim1Cfg = resolve(merge(defaults, a.rt.config.as_deref(), &a)?)?;
    let ops = make_ops(&cfg.ops, SnrDb(cfg.gamma))?;
    let report = run_claim1(cfg.n, cfg.k, ops.as_ref(), SnrDb(cfg.gamma), cfg.layout)?;
    let path = output_path(&a.rt.out, "claim1.json")?;
    write_json(&path, &json!({"provenance": provenance("verify-claim1", &cfg, 0, json!({})), "report": report}))?;
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    println!("{verdict} N={} K={} ops={} layout={:?}", cfg.n, cfg.k, report.ops, cfg.layout);
    if let Some(m) = report.wrong_finite.as_ref().or(report.final_mismatch.as_ref()) {
        println!("first mismatch: node {} slot {} expected {} got {}", m.node, m.slot, m.expected, m.got);
    }
    if report.frozen_classical != report.frozen_message_passing {
        println!(
            "frozen sets differ: classical {:?} message passing {:?}",
            report.frozen_classical, report.frozen_message_passing
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::failed("claim check failed"))
    }
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args, Serialize, Debug)]
pub struct GradcheckArgs {
    #[arg(long = "N")]
    n: Option<usize>,
    /// Number of seeds, starting at --seed.
    #[arg(long)]
    seeds: Option<u64>,
    /// States per batch.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    rt: Runtime,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradcheckCfg {
    n: usize,
    seeds: u64,
    batch: usize,
    step: f64,
    floor: f64,
    tolerance: f64,
    seed: u64,
    hyper: ImpHyper,
}

/// Random states and cotangent for a gradient check.
pub fn gradcheck_inputs(n: usize, batch: usize, seed: u64) -> polar_imp::Result<(Vec<PccmpGraph>, Vec<f64>, Array2<f64>)> {
    let structure = std::sync::Arc::new(PccmpStructure::new(n)?);
    let mut rng = substream(seed, 0x9c);
    let mut graphs = Vec::new();
    let mut thetas = Vec::new();
    for _ in 0..batch {
        let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        let gamma = SnrDb(rng.random_range(0.0..4.0));
        graphs.push(PccmpGraph::with_frozen_mask(structure.clone(), gamma, &mask)?);
        thetas.push(rng.random::<f64>());
    }
    let dz = Array2::from_shape_fn((batch, n), |_| rng.random_range(-1.0..1.0));
    Ok((graphs, thetas, dz))
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult {
    let defaults = json!({
        "n": 8, "seeds": 5, "batch": 2, "step": 1e-4, "floor": 1e-7, "tolerance": 1e-4, "seed": 0,
        "hyper": ImpHyper::default(),
    });
    let cfg: GradcheckCfg = resolve(merge(defaults, a.rt.config.as_deref(), &a)?)?;
    let mut runs = Vec::new();
    let mut worst: f64 = 0.0;
    for s in cfg.seed..cfg.seed + cfg.seeds {
        let params = ImpParams::random(cfg.hyper.clone(), s)?;
        let (graphs, thetas, dz) = gradcheck_inputs(cfg.n, cfg.batch, s)?;
        let inputs: Vec<StateInput> =
            graphs.iter().zip(&thetas).map(|(graph, &theta)| StateInput { graph, theta }).collect();
        let report = run_gradcheck(&params, &inputs, &dz, cfg.step, cfg.floor)?;
        eprintln!("seed {s}: max relative error {:.3e}", report.max_rel_err);
        worst = worst.max(report.max_rel_err);
        runs.push(json!({"seed": s, "report": report}));
    }
    let passed = worst < cfg.tolerance;
    let path = output_path(&a.rt.out, "gradcheck.json")?;
    let prov = provenance("gradcheck", &cfg, cfg.seed, json!({}));
    write_json(&path, &json!({"provenance": prov, "max_rel_err": worst, "passed": passed, "runs": runs}))?;
    println!("{} max relative error {worst:.3e} (tolerance {:.0e})", if passed { "PASS" } else { "FAIL" }, cfg.tolerance);
    if passed {
        Ok(())
    } else {
        Err(CliError {
            code: 3,
            message: format!("gradient check exceeded tolerance: {worst:.3e}"),
        })
    }
}
