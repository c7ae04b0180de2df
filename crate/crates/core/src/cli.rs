//! The `oavat` command line: dataset generation, planner training, theory
//! verification, episode evaluation and gradient checks.
//!
//! Every command writes into a run directory and finishes by writing
//! `manifest.json` there with the resolved configuration, the seed, the
//! `git describe` string and a SHA-256 of every output file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Arg, ArgMatches, Args, FromArgMatches, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::agent::{Agent, AgentConfig, PlannerHandle, Variant, VARIANTS};
use crate::dataset::{generate_samples, read_samples, write_samples, DatasetConfig, PlanSample};
use crate::features::theory::{run_trials, TheoryParams, Trial};
use crate::features::ManifoldSpec;
use crate::planner::{build_schedule, grad_check, train, write_loss_curve, Checkpoint, NetConfig, NoisePredictor, TrainConfig};
use crate::rng;
use crate::sim::{compute_metrics, run_batch, EpisodeConfig, EpisodeLog, Metrics, ScenarioConfig, StepRecord, CROP_CELLS};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "oavat", version, about = "Occlusion-aware visual active tracking at desk scale")]
pub struct Cli {
    /// Global seed; every output is a function of the arguments and this.
    #[arg(long, env = "OAVAT_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Run directory. Defaults to `runs/<command>-<seed>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planning dataset of occlusion scenarios with expert paths.
    Dataset(DatasetArgs),
    /// Train the diffusion planner on a dataset.
    Train(TrainArgs),
    /// Monte-Carlo check of the prototype separation results.
    VerifyTheory(TheoryArgs),
    /// Run seeded episode batches for one or more agent variants.
    Eval(EvalArgs),
    /// Compare analytic planner gradients with central differences.
    GradCheck(GradArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DatasetArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Fraction of samples with size jitter and flipped occupancy bits.
    #[arg(long, default_value_t = 0.6)]
    pub randomized: f64,
}

impl DatasetArgs {
    fn config(&self, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n: self.n,
            randomized_fraction: self.randomized,
            seed,
            ..DatasetConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset file from `oavat dataset`; generated in place when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Samples to generate when no dataset file is given.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Diffusion steps.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    /// Zero the box part of every condition.
    #[arg(long)]
    pub no_bbox: bool,
}

impl Default for TrainArgs {
    fn default() -> Self {
        Self {
            data: None,
            n: 500,
            epochs: 60,
            batch: 64,
            lr: 1e-3,
            momentum: 0.9,
            k: 50,
            no_bbox: false,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.8)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eta: f64,
    /// Augmented views per reference.
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// References sampled per instance in each trial.
    #[arg(long, default_value_t = 20)]
    pub per_instance: usize,
}

impl TheoryArgs {
    pub fn spec(&self) -> ManifoldSpec {
        ManifoldSpec {
            num_instances: self.instances,
            dim: self.dim,
            cohesion_delta: self.delta,
            separation_eta: self.eta,
            ..ManifoldSpec::default()
        }
    }

    pub fn params(&self) -> TheoryParams {
        TheoryParams {
            n_per_instance: self.per_instance,
            n_views: self.views,
            ..TheoryParams::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Scenario preset: open, distractors2, distractors4 or occlusion_heavy.
    #[arg(long, default_value = "open")]
    pub preset: String,
    /// Variants to run, comma separated, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "full")]
    pub variant: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 500)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 50)]
    pub lost_limit: usize,
    /// Planner checkpoint. Without one, planner variants train a default
    /// planner first and save it into the run directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint for `planner_no_bbox`; falls back to `--checkpoint`.
    #[arg(long)]
    pub no_bbox_checkpoint: Option<PathBuf>,
    /// Agent config file of `key = value` lines.
    #[arg(long)]
    pub agent_config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: AgentOverrides,
}

impl EvalArgs {
    pub fn variants(&self) -> Result<Vec<Variant>> {
        let mut out = Vec::new();
        for v in &self.variant {
            if v == "all" {
                out.extend(VARIANTS);
            } else {
                out.push(v.parse()?);
            }
        }
        out.dedup();
        if out.is_empty() {
            return Err(Error::InvalidArgument("no variant given".into()));
        }
        Ok(out)
    }

    pub fn agent_config(&self) -> Result<AgentConfig> {
        let mut cfg = match &self.agent_config {
            Some(p) => AgentConfig::load(p)?,
            None => AgentConfig::default(),
        };
        for (k, v) in &self.overrides.0 {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One optional `--<field>` flag per agent config field, built from the
/// config's key list so no field can be missed.
#[derive(Debug, Clone, Default)]
pub struct AgentOverrides(pub Vec<(String, String)>);

impl FromArgMatches for AgentOverrides {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let pairs = AgentConfig::KEYS
            .iter()
            .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
            .collect();
        Ok(Self(pairs))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for AgentOverrides {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        AgentConfig::KEYS.iter().fold(cmd, |cmd, key| {
            cmd.arg(
                Arg::new(*key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .help_heading("Agent config overrides"),
            )
        })
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradArgs {
    /// Central-difference step, within [1e-6, 1e-3].
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Parameters to probe.
    #[arg(long, default_value_t = 200)]
    pub params: usize,
    /// Check a trained checkpoint instead of a fresh network.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// What a finished command leaves behind.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub git_describe: String,
    /// Output file name to hex SHA-256.
    pub outputs: BTreeMap<String, String>,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Collects output files and writes the manifest last.
struct Run {
    dir: PathBuf,
    command: &'static str,
    seed: u64,
    outputs: Vec<String>,
}

impl Run {
    fn new(dir: PathBuf, command: &'static str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            command,
            seed,
            outputs: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn finish(self, config: serde_json::Value) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(&self.dir.join(name))?);
        }
        let manifest = Manifest {
            command: self.command.to_string(),
            seed: self.seed,
            config,
            git_describe: git_describe(),
            outputs,
        };
        let mut f = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(manifest)
    }
}

fn announce(command: &str, seed: u64, config: &serde_json::Value) {
    println!("{command}: seed {seed}");
    println!("{}", serde_json::to_string_pretty(config).unwrap_or_default());
}

pub fn cmd_dataset(args: &DatasetArgs, seed: u64, dir: PathBuf) -> Result<Manifest> {
    let cfg = args.config(seed);
    let config = serde_json::to_value(cfg)?;
    announce("dataset", seed, &config);
    let mut run = Run::new(dir, "dataset", seed)?;
    let samples = generate_samples(&cfg)?;
    write_samples(run.create("dataset.jsonl")?, &samples)?;
    println!("wrote {} samples", samples.len());
    run.finish(config)
}

fn strip_bbox(samples: &mut [PlanSample]) {
    for s in samples {
        s.bbox = [0.0; 4];
    }
}

/// Trains a planner from scratch. Returns the checkpoint and the loss curve.
pub fn train_planner(args: &TrainArgs, seed: u64) -> Result<(Checkpoint, Vec<f64>)> {
    let mut data = match &args.data {
        Some(p) => read_samples(std::io::BufReader::new(File::open(p)?))?,
        None => generate_samples(&DatasetConfig {
            n: args.n,
            seed,
            ..DatasetConfig::default()
        })?,
    };
    if args.no_bbox {
        strip_bbox(&mut data);
    }
    let horizon = data.first().map_or(0, |s| s.traj.len());
    let net = NetConfig {
        traj_dim: 2 * horizon,
        cond_dim: CROP_CELLS * CROP_CELLS + 4,
        ..NetConfig::default()
    };
    let schedule = build_schedule(args.k)?;
    let mut model = NoisePredictor::new(net, &mut rng::child(seed, &[0x1e7]));
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch: args.batch,
        lr: args.lr,
        momentum: args.momentum,
        seed,
    };
    let curve = train(&mut model, &data, &schedule, &cfg)?;
    Ok((
        Checkpoint {
            model,
            k: args.k,
            horizon,
        },
        curve,
    ))
}

pub fn cmd_train(args: &TrainArgs, seed: u64, dir: PathBuf) -> Result<Manifest> {
    let config = serde_json::to_value(args)?;
    announce("train", seed, &config);
    let mut run = Run::new(dir, "train", seed)?;
    let (ckpt, curve) = train_planner(args, seed)?;
    ckpt.save(&run.path("planner.bin"))?;
    write_loss_curve(run.create("loss.csv")?, &curve)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!("loss {first:.4} -> {last:.4} over {} epochs", curve.len() - 1);
    }
    run.finish(config)
}

#[derive(Debug, Clone, Serialize)]
pub struct TheorySummary {
    pub trials: usize,
    pub certified: usize,
    pub lemma1_rate: f64,
    pub lemma2_rate: f64,
    pub prop1_rate: f64,
    pub min_lemma1_margin: f64,
    pub min_lemma2_margin: f64,
    pub min_prop1_margin: f64,
    pub mean_coverage_rate: f64,
}

pub fn summarize_trials(trials: &[Trial]) -> TheorySummary {
    let reports: Vec<_> = trials.iter().filter_map(|t| t.report).collect();
    let n = reports.len().max(1) as f64;
    let rate = |f: fn(&crate::features::theory::TheoryReport) -> bool| reports.iter().filter(|r| f(r)).count() as f64 / n;
    let min = |f: fn(&crate::features::theory::TheoryReport) -> f64| reports.iter().map(f).fold(f64::INFINITY, f64::min);
    TheorySummary {
        trials: trials.len(),
        certified: reports.len(),
        lemma1_rate: rate(|r| r.lemma1_holds),
        lemma2_rate: rate(|r| r.lemma2_holds),
        prop1_rate: rate(|r| r.prop1_holds),
        min_lemma1_margin: min(|r| r.margins.lemma1),
        min_lemma2_margin: min(|r| r.margins.lemma2),
        min_prop1_margin: min(|r| r.margins.prop1),
        mean_coverage_rate: reports.iter().map(|r| r.coverage_rate).sum::<f64>() / n,
    }
}

pub fn cmd_verify_theory(args: &TheoryArgs, seed: u64, dir: PathBuf) -> Result<Manifest> {
    if args.trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let config = serde_json::to_value(args)?;
    announce("verify-theory", seed, &config);
    let mut run = Run::new(dir, "verify-theory", seed)?;
    let trials = run_trials(&args.spec(), &args.params(), args.trials, seed);

    #[derive(Serialize)]
    struct Row<'a> {
        trial: usize,
        seed: u64,
        lemma1: Option<f64>,
        lemma2: Option<f64>,
        prop1: Option<f64>,
        coverage_rate: Option<f64>,
        error: Option<&'a str>,
    }
    let mut w = csv::Writer::from_writer(run.create("trials.csv")?);
    for t in &trials {
        w.serialize(Row {
            trial: t.trial,
            seed: t.seed,
            lemma1: t.report.map(|r| r.margins.lemma1),
            lemma2: t.report.map(|r| r.margins.lemma2),
            prop1: t.report.map(|r| r.margins.prop1),
            coverage_rate: t.report.map(|r| r.coverage_rate),
            error: t.error.as_deref(),
        })?;
    }
    w.flush()?;
    drop(w);

    let summary = summarize_trials(&trials);
    let mut f = run.create("report.json")?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    f.flush()?;
    drop(f);
    println!(
        "{} of {} trials certified; pass rates lemma1 {:.3} lemma2 {:.3} prop1 {:.3}",
        summary.certified, summary.trials, summary.lemma1_rate, summary.lemma2_rate, summary.prop1_rate
    );
    println!(
        "min margins lemma1 {:.3e} lemma2 {:.3e} prop1 {:.3e}",
        summary.min_lemma1_margin, summary.min_lemma2_margin, summary.min_prop1_margin
    );
    if let Some(e) = trials.iter().find_map(|t| t.error.as_deref()) {
        println!("first failure: {e}");
    }
    run.finish(config)
}

/// Seeds of the episodes in a batch.
pub fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|i| rng::derive_seed(seed, &[0xe915, i])).collect()
}

/// Runs `episodes` seeded episodes of `variant` and returns the logs in
/// seed order.
pub fn eval_variant(
    variant: Variant,
    cfg: AgentConfig,
    planner: Option<Arc<PlannerHandle>>,
    scenario: &ScenarioConfig,
    episode: &EpisodeConfig,
    seeds: &[u64],
) -> Result<Vec<EpisodeLog>> {
    Agent::new(cfg, variant, planner.clone())?;
    run_batch(
        || Agent::new(cfg, variant, planner.clone()).expect("validated above"),
        scenario,
        episode,
        seeds,
    )
}

#[derive(Debug, Clone, Serialize)]
struct EvalConfig<'a> {
    preset: &'a str,
    variants: Vec<&'static str>,
    episodes: usize,
    episode: EpisodeConfig,
    agent: BTreeMap<String, String>,
    checkpoint: Option<String>,
    no_bbox_checkpoint: Option<String>,
}

#[derive(Serialize)]
struct StepLine<'a> {
    episode: usize,
    seed: u64,
    mode: &'static str,
    #[serde(flatten)]
    step: &'a StepRecord,
}

/// Flat CSV row; the csv writer cannot flatten nested structs.
#[derive(Serialize)]
struct SummaryRow<'a> {
    variant: &'static str,
    scenario: &'a str,
    #[serde(rename = "AR")]
    ar: f64,
    #[serde(rename = "EL")]
    el: f64,
    #[serde(rename = "SR")]
    sr: f64,
    #[serde(rename = "TSR")]
    tsr: Option<f64>,
    #[serde(rename = "CAR")]
    car: Option<f64>,
    episodes: usize,
    errors: usize,
    seed: u64,
}

impl<'a> SummaryRow<'a> {
    fn new(variant: Variant, m: &'a Metrics, errors: usize) -> Self {
        Self {
            variant: variant.name(),
            scenario: &m.scenario,
            ar: m.ar,
            el: m.el,
            sr: m.sr,
            tsr: m.tsr,
            car: m.car,
            episodes: m.episodes,
            errors,
            seed: m.seed,
        }
    }
}

fn load_planner(path: &Path) -> Result<Arc<PlannerHandle>> {
    Ok(Arc::new(PlannerHandle::new(Checkpoint::load(path)?)?))
}

pub fn cmd_eval(args: &EvalArgs, seed: u64, dir: PathBuf) -> Result<Manifest> {
    let variants = args.variants()?;
    let agent_cfg = args.agent_config()?;
    let scenario = ScenarioConfig::preset(&args.preset)?;
    if args.episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    let episode = EpisodeConfig {
        max_steps: args.max_steps,
        lost_limit: args.lost_limit,
        ..EpisodeConfig::default()
    };
    let agent = agent_cfg
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let config = serde_json::to_value(EvalConfig {
        preset: &args.preset,
        variants: variants.iter().map(|v| v.name()).collect(),
        episodes: args.episodes,
        episode,
        agent,
        checkpoint: args.checkpoint.as_ref().map(|p| p.display().to_string()),
        no_bbox_checkpoint: args.no_bbox_checkpoint.as_ref().map(|p| p.display().to_string()),
    })?;
    announce("eval", seed, &config);
    let mut run = Run::new(dir, "eval", seed)?;

    let needs = |v: Variant| variants.iter().any(|&x| x == v);
    let with_box = variants.iter().any(|v| v.uses_planner() && *v != Variant::PlannerNoBbox);
    let mut planner = None;
    if with_box || (needs(Variant::PlannerNoBbox) && args.no_bbox_checkpoint.is_none()) {
        planner = Some(match &args.checkpoint {
            Some(p) => load_planner(p)?,
            None => {
                println!("no checkpoint given; training the default planner");
                let (ckpt, _) = train_planner(&TrainArgs::default(), seed)?;
                ckpt.save(&run.path("planner.bin"))?;
                Arc::new(PlannerHandle::new(ckpt)?)
            }
        });
    }
    let mut no_bbox_planner = None;
    if needs(Variant::PlannerNoBbox) {
        no_bbox_planner = match (&args.no_bbox_checkpoint, &args.checkpoint) {
            (Some(p), _) => Some(load_planner(p)?),
            (None, Some(_)) => planner.clone(),
            (None, None) => {
                let (ckpt, _) = train_planner(
                    &TrainArgs {
                        no_bbox: true,
                        ..TrainArgs::default()
                    },
                    seed,
                )?;
                ckpt.save(&run.path("planner_no_bbox.bin"))?;
                Some(Arc::new(PlannerHandle::new(ckpt)?))
            }
        };
    }

    let seeds = episode_seeds(seed, args.episodes);
    let mut rows = Vec::new();
    for &v in &variants {
        let p = match v {
            Variant::NoPlannerPid => None,
            Variant::PlannerNoBbox => no_bbox_planner.clone(),
            _ => planner.clone(),
        };
        let logs = eval_variant(v, agent_cfg, p, &scenario, &episode, &seeds)?;
        let metrics = compute_metrics(&logs, episode.max_steps, &scenario.name, seed)?;
        let errors = logs.iter().filter(|l| l.error.is_some()).count();

        let mut w = run.create(&format!("{}.episodes.jsonl", v.name()))?;
        for (i, (log, &s)) in logs.iter().zip(&seeds).enumerate() {
            for step in &log.steps {
                serde_json::to_writer(
                    &mut w,
                    &StepLine {
                        episode: i,
                        seed: s,
                        mode: step.mode,
                        step,
                    },
                )?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        drop(w);

        let mut c = csv::Writer::from_writer(run.create(&format!("{}.metrics.csv", v.name()))?);
        c.serialize(SummaryRow::new(v, &metrics, errors))?;
        c.flush()?;
        drop(c);

        println!(
            "{:16} SR {:.3}  AR {:8.2}  EL {:6.1}  CAR {}",
            v.name(),
            metrics.sr,
            metrics.ar,
            metrics.el,
            metrics.car.map_or("n/a".into(), |c| format!("{c:.3}"))
        );
        rows.push((v, metrics, errors));
    }

    let mut c = csv::Writer::from_writer(run.create("metrics.csv")?);
    for (v, m, errors) in &rows {
        c.serialize(SummaryRow::new(*v, m, *errors))?;
    }
    c.flush()?;
    drop(c);
    run.finish(config)
}

pub fn cmd_grad_check(args: &GradArgs, seed: u64, dir: PathBuf) -> Result<Manifest> {
    let config = serde_json::to_value(args)?;
    announce("grad-check", seed, &config);
    let mut run = Run::new(dir, "grad-check", seed)?;
    let (model, k) = match &args.checkpoint {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            (c.model, c.k)
        }
        None => (NoisePredictor::new(NetConfig::default(), &mut rng::child(seed, &[0x1e7])), 50),
    };
    let sample = generate_samples(&DatasetConfig {
        n: 1,
        seed,
        ..DatasetConfig::default()
    })?
    .remove(0);
    let schedule = build_schedule(k)?;
    let g = grad_check(&model, &sample, &schedule, args.h, args.params, seed)?;

    #[derive(Serialize)]
    struct Report {
        max_relative_error: f64,
        checked: usize,
        h: f64,
    }
    let mut f = run.create("grad_check.json")?;
    serde_json::to_writer_pretty(
        &mut f,
        &Report {
            max_relative_error: g.max_relative_error,
            checked: g.checked,
            h: args.h,
        },
    )?;
    f.write_all(b"\n")?;
    f.flush()?;
    drop(f);
    println!("max relative error {:.3e} over {} parameters", g.max_relative_error, g.checked);
    run.finish(config)
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dataset(_) => "dataset",
            Command::Train(_) => "train",
            Command::VerifyTheory(_) => "verify-theory",
            Command::Eval(_) => "eval",
            Command::GradCheck(_) => "grad-check",
        }
    }
}

pub fn run(cli: Cli) -> Result<Manifest> {
    let dir = cli
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cli.command.name(), cli.seed)));
    match &cli.command {
        Command::Dataset(a) => cmd_dataset(a, cli.seed, dir),
        Command::Train(a) => cmd_train(a, cli.seed, dir),
        Command::VerifyTheory(a) => cmd_verify_theory(a, cli.seed, dir),
        Command::Eval(a) => cmd_eval(a, cli.seed, dir),
        Command::GradCheck(a) => cmd_grad_check(a, cli.seed, dir),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<Manifest>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    run(cli)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_agent_field_has_a_flag() {
        let cmd = Cli::command();
        let eval = cmd.find_subcommand("eval").unwrap();
        for key in AgentConfig::KEYS {
            let long = key.replace('_', "-");
            assert!(eval.get_arguments().any(|a| a.get_long() == Some(long.as_str())), "{key}");
        }
    }

    #[test]
    fn overrides_apply_on_top_of_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.cfg");
        std::fs::write(&path, "eta_s = 0.6\nbeta = 0.7\n").unwrap();
        let cli = Cli::try_parse_from([
            "oavat",
            "eval",
            "--agent-config",
            path.to_str().unwrap(),
            "--beta",
            "0.9",
            "--trigger-len",
            "4",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        let cfg = a.agent_config().unwrap();
        assert_eq!((cfg.eta_s, cfg.beta, cfg.trigger_len), (0.6, 0.9, 4));

        let bad = Cli::try_parse_from(["oavat", "eval", "--eta-s", "1.5"]).unwrap();
        let Command::Eval(a) = bad.command else { panic!() };
        assert_eq!(a.agent_config().unwrap_err().code(), 2);
    }

    #[test]
    fn variant_lists() {
        let cli = Cli::try_parse_from(["oavat", "eval", "--variant", "full,no_kf"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.variants().unwrap(), vec![Variant::Full, Variant::NoKf]);
        let cli = Cli::try_parse_from(["oavat", "eval", "--variant", "all"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.variants().unwrap().len(), 7);
        let cli = Cli::try_parse_from(["oavat", "eval", "--variant", "bogus"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert!(a.variants().is_err());
    }

    #[test]
    fn seed_falls_back_to_the_environment() {
        // Only this test touches the variable.
        std::env::set_var("OAVAT_SEED", "41");
        let cli = Cli::try_parse_from(["oavat", "dataset"]).unwrap();
        assert_eq!(cli.seed, 41);
        let cli = Cli::try_parse_from(["oavat", "--seed", "3", "dataset"]).unwrap();
        assert_eq!(cli.seed, 3);
        std::env::remove_var("OAVAT_SEED");
    }

    #[test]
    fn empty_dataset_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_from(["oavat", "--out", dir.path().to_str().unwrap(), "dataset", "--n", "0"]).unwrap_err();
        assert_eq!(e.code(), 2);
    }
}
