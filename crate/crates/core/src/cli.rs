//! The `dmc` command-line front end.
//!
//! Every command reads an optional JSON run config holding a global `seed`,
//! an output directory `out` and exactly one section named after the
//! command. Flags override the config. Exit codes: 0 success, 2 config
//! error, 3 I/O error, 4 numerical failure (a `diagnostic.json` is written
//! to the output directory).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::crb::{records_to_csv, run_mismatch_experiment, MismatchConfig};
use crate::error::{DmcError, Result};
use crate::estimator::{estimate_multimode_with, FitReport, LmOptions};
use crate::model::{sample_observation, ChannelObservation, DmcModel};
use crate::nn::{labelled_sample, load_net, predict, train_to_dir, GenConfig, NetConfig, SampleStream, TrainOptions};
use crate::pdp::Pdp;
use crate::seed;
use crate::tensor_io::Tensor;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const OBSERVATION_FILE: &str = "observation.dmct";
pub const MODEL_FILE: &str = "model.json";
pub const INFER_FILE: &str = "infer.json";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const CRB_FILE: &str = "crb.csv";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

#[derive(Debug, Parser)]
#[command(name = "dmc", version, about = "Multi-modal dense multipath component estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize observations, ground-truth models and training shards.
    Generate(CommonArgs),
    /// Train the autoencoder; resumes an interrupted run in the same directory.
    Train(CommonArgs),
    /// Predict the model order and separated mode profiles of an observation.
    Infer(InferArgs),
    /// Fit a multi-mode model to an observation.
    Estimate(EstimateArgs),
    /// Run the model-order mismatch CRB sweep.
    Crb(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Observation tensor, complex `[n_f, M]`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub infer: InferArgs,
    /// Model order; with `--separations` this bypasses the network.
    #[arg(long)]
    pub order: Option<usize>,
    /// Separated mode profiles, real `[n_f]` tensors, one per mode.
    #[arg(long, num_args = 1..)]
    pub separations: Vec<PathBuf>,
}

/// The `generate` section. Without `model`, scenarios are drawn from `gen`;
/// with it, every observation comes from that fixed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub count: usize,
    pub shard_size: usize,
    pub gen: GenConfig,
    pub model: Option<DmcModel>,
    pub m_snapshots: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { count: 16, shard_size: 1024, gen: GenConfig::default(), model: None, m_snapshots: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub gen: GenConfig,
    pub options: TrainOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { net: NetConfig::desk(), gen: GenConfig::default(), options: TrainOptions::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub input: Option<PathBuf>,
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub input: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub order: Option<usize>,
    pub separations: Vec<PathBuf>,
    pub lm: LmOptions,
}

/// Output of `infer`: the predicted order and the files holding the
/// separated profiles, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferOutput {
    pub order: usize,
    pub separations: Vec<String>,
    pub logits: Vec<f64>,
}

/// A parsed run config: global settings plus the raw active section.
#[derive(Debug)]
struct RunConfig {
    seed: u64,
    out: PathBuf,
    section: Value,
}

const SECTIONS: [&str; 5] = ["generate", "train", "infer", "estimate", "crb"];

impl RunConfig {
    fn load(path: Option<&Path>, command: &str, args: &CommonArgs) -> Result<Self> {
        let mut map = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(DmcError::Config("run config must be a JSON object".into())),
                    Err(e) => return Err(DmcError::Config(format!("{}: {e}", p.display()))),
                }
            }
            None => Map::new(),
        };
        for key in map.keys() {
            if key != "seed" && key != "out" && !SECTIONS.contains(&key.as_str()) {
                return Err(DmcError::Config(format!("unknown key `{key}`")));
            }
        }
        let others: Vec<&String> = map.keys().filter(|k| SECTIONS.contains(&k.as_str()) && *k != command).collect();
        if !others.is_empty() {
            return Err(DmcError::Config(format!("`{command}` cannot run a config with section {others:?}")));
        }
        let seed = match map.remove("seed") {
            Some(v) => v.as_u64().ok_or_else(|| DmcError::Config("seed must be an unsigned integer".into()))?,
            None => 0,
        };
        let out = match map.remove("out") {
            Some(Value::String(s)) => PathBuf::from(s),
            Some(_) => return Err(DmcError::Config("out must be a string".into())),
            None => PathBuf::from("out"),
        };
        let section = map.remove(command).unwrap_or(Value::Object(Map::new()));
        Ok(Self { seed: args.seed.unwrap_or(seed), out: args.out.clone().unwrap_or(out), section })
    }

    fn section<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.section.clone()).map_err(|e| DmcError::Config(e.to_string()))
    }
}

/// Maps an error onto the exit-code contract.
pub fn exit_code(e: &DmcError) -> i32 {
    match e {
        DmcError::Io(_) | DmcError::Format(_) => EXIT_IO,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn error_kind(e: &DmcError) -> &'static str {
    match exit_code(e) {
        EXIT_IO => "io",
        EXIT_NUMERICAL => "numerical",
        _ => "config",
    }
}

/// Runs one command and returns the process exit code. Errors are reported
/// on stderr as a JSON line.
pub fn run(cli: Cli) -> i32 {
    let (name, common) = match &cli.command {
        Command::Generate(c) => ("generate", c),
        Command::Train(c) => ("train", c),
        Command::Infer(a) => ("infer", &a.common),
        Command::Estimate(a) => ("estimate", &a.infer.common),
        Command::Crb(c) => ("crb", c),
    };
    let outcome = RunConfig::load(common.config.as_deref(), name, common).and_then(|cfg| {
        if let Some(n) = common.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| DmcError::Config(e.to_string()))?;
        }
        let result = dispatch(&cli.command, &cfg);
        if let Err(e) = &result {
            if exit_code(e) == EXIT_NUMERICAL {
                let diag = diagnostic(name, e);
                if fs::create_dir_all(&cfg.out).is_ok() {
                    let _ = fs::write(cfg.out.join(DIAGNOSTIC_FILE), format!("{diag:#}\n"));
                }
            }
        }
        result
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", diagnostic(name, &e));
            exit_code(&e)
        }
    }
}

fn diagnostic(command: &str, e: &DmcError) -> Value {
    serde_json::json!({ "command": command, "kind": error_kind(e), "error": e.to_string() })
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Generate(_) => cmd_generate(&cfg.section()?, cfg.seed, &cfg.out),
        Command::Train(_) => cmd_train(&cfg.section()?, cfg.seed, &cfg.out),
        Command::Infer(a) => {
            let mut c: InferConfig = cfg.section()?;
            override_opt(&mut c.input, &a.input);
            override_opt(&mut c.weights, &a.weights);
            cmd_infer(&c, &cfg.out)
        }
        Command::Estimate(a) => {
            let mut c: EstimateConfig = cfg.section()?;
            override_opt(&mut c.input, &a.infer.input);
            override_opt(&mut c.weights, &a.infer.weights);
            if a.order.is_some() {
                c.order = a.order;
            }
            if !a.separations.is_empty() {
                c.separations = a.separations.clone();
            }
            cmd_estimate(&c, &cfg.out)
        }
        Command::Crb(_) => {
            let mut c: MismatchConfig = cfg.section()?;
            c.seed = cfg.seed;
            cmd_crb(&c, &cfg.out)
        }
    }
}

fn override_opt(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| DmcError::Format(format!("{}: {e}", path.as_ref().display())))
}

pub fn save_observation(path: impl AsRef<Path>, obs: &ChannelObservation) -> Result<()> {
    Tensor::complex(vec![obs.n_f(), obs.m_snapshots()], obs.to_rows())?.save(path)
}

pub fn load_observation(path: impl AsRef<Path>) -> Result<ChannelObservation> {
    let t = Tensor::load(path)?;
    let dims = t.dims().to_vec();
    if dims.len() != 2 {
        return Err(DmcError::Format(format!("observation must have rank 2, got {}", dims.len())));
    }
    ChannelObservation::from_rows(dims[0], dims[1], &t.into_complex()?)
}

pub fn save_profile(path: impl AsRef<Path>, d: &Pdp) -> Result<()> {
    Tensor::real(vec![d.len()], d.values().to_vec())?.save(path)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<Pdp> {
    let t = Tensor::load(path)?;
    if t.dims().len() != 1 {
        return Err(DmcError::Format("separation must have rank 1".into()));
    }
    Pdp::linear(t.into_real()?)
}

/// Name of the `i`-th scenario directory written by `generate`.
pub fn scenario_dir(i: usize) -> String {
    format!("scenario_{i:05}")
}

/// Writes `count` scenarios, each a directory with the observation and its
/// ground-truth model, and the labelled samples as JSON-lines shards.
pub fn cmd_generate(cfg: &GenerateConfig, seed: u64, out: &Path) -> Result<()> {
    if cfg.count == 0 || cfg.shard_size == 0 || cfg.m_snapshots == 0 {
        return Err(DmcError::Config("count, shard_size and m_snapshots must be positive".into()));
    }
    let stream = SampleStream::new(cfg.gen.clone(), seed)?;
    if let Some(m) = &cfg.model {
        if m.order() > cfg.gen.max_order {
            return Err(DmcError::Config("model order exceeds gen.max_order".into()));
        }
    }
    fs::create_dir_all(out)?;
    let mut shard = String::new();
    for i in 0..cfg.count {
        let (sample, obs) = match &cfg.model {
            Some(model) => {
                let obs = sample_observation(model, cfg.m_snapshots, seed::derive(seed, &[i as u64]))?;
                (labelled_sample(model.clone(), &obs, cfg.gen.max_order)?, obs)
            }
            None => stream.draw(i as u64)?,
        };
        let dir = out.join(scenario_dir(i));
        fs::create_dir_all(&dir)?;
        save_observation(dir.join(OBSERVATION_FILE), &obs)?;
        write_json(&dir.join(MODEL_FILE), &sample.model)?;
        shard.push_str(&serde_json::to_string(&sample)?);
        shard.push('\n');
        if (i + 1) % cfg.shard_size == 0 || i + 1 == cfg.count {
            fs::write(out.join(format!("shard_{:04}.jsonl", i / cfg.shard_size)), &shard)?;
            shard.clear();
        }
    }
    log::info!("wrote {} scenarios to {}", cfg.count, out.display());
    Ok(())
}

pub fn cmd_train(cfg: &TrainConfig, seed: u64, out: &Path) -> Result<()> {
    let t = train_to_dir(out, cfg.net.clone(), cfg.gen.clone(), cfg.options.clone(), seed)?;
    log::info!("trained {} steps into {}", t.step_count(), out.display());
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| DmcError::Config(format!("missing {what}")))
}

/// Writes `infer.json` and the separated profiles `separation_k.dmct`.
pub fn cmd_infer(cfg: &InferConfig, out: &Path) -> Result<()> {
    let obs = load_observation(required(&cfg.input, "input observation")?)?;
    let net = load_net(required(&cfg.weights, "weights")?)?;
    let p = predict(&net, &obs)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::with_capacity(p.order);
    for (k, sep) in p.separations.iter().enumerate() {
        let name = format!("separation_{k}.dmct");
        save_profile(out.join(&name), sep)?;
        files.push(name);
    }
    write_json(&out.join(INFER_FILE), &InferOutput { order: p.order, separations: files, logits: p.logits })
}

/// Writes the fitted `model.json` and `fit_report.json`. The order and
/// separations come from the config or flags; otherwise the network
/// predicts them.
pub fn cmd_estimate(cfg: &EstimateConfig, out: &Path) -> Result<()> {
    cfg.lm.validate().map_err(|e| DmcError::Config(e.to_string()))?;
    let obs = load_observation(required(&cfg.input, "input observation")?)?;
    let (order, separations) = match cfg.order {
        Some(k) => {
            let seps = cfg.separations.iter().map(load_profile).collect::<Result<Vec<_>>>()?;
            if seps.len() != k {
                return Err(DmcError::OrderMismatch { order: k, separations: seps.len() });
            }
            (k, seps)
        }
        None => {
            let net = load_net(required(&cfg.weights, "weights or --order")?)?;
            let p = predict(&net, &obs)?;
            (p.order, p.separations)
        }
    };
    let (model, report): (DmcModel, FitReport) = estimate_multimode_with(&obs, &separations, order, &cfg.lm)?;
    fs::create_dir_all(out)?;
    write_json(&out.join(MODEL_FILE), &model)?;
    write_json(&out.join(FIT_REPORT_FILE), &report)
}

pub fn cmd_crb(cfg: &MismatchConfig, out: &Path) -> Result<()> {
    cfg.validate().map_err(|e| DmcError::Config(e.to_string()))?;
    let records = run_mismatch_experiment(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CRB_FILE), records_to_csv(&records))?;
    Ok(())
}
