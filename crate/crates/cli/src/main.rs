//! `tscn`: synthesize data, train, evaluate, run ablations and the
//! numerical checks.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};
use tscn::config::RunConfig;
use tscn::data::{export, load_dataset, split, synth_generate, SequenceSample, SynthSpec};
use tscn::eval::{evaluate, run_ablation, worker_pool, AblationKind, CmcCurve, ExperimentSetup};
use tscn::network::Network;
use tscn::training::train;
use tscn::verification::{fusion_algebra_suite, gradient_suite, oracle_suite, SuiteReport};

#[derive(Parser)]
#[command(name = "tscn", version, about = "Multi-stream fusion networks for video re-identification")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// Preset name or path of a `key = value` config file.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// `key=value`, applied after the config; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Write a synthetic two-camera dataset as PNG frames.
    Synth {
        #[arg(long, default_value_t = 10)]
        ids: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Frame size as HxW.
        #[arg(long, default_value = "32x32")]
        extent: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory (or fresh synthetic data) and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset root; synthesized from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write its CMC curve.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on every identity instead of the held-out half.
        #[arg(long)]
        all: bool,
    },
    /// Run one ablation grid over several seeds.
    Ablate {
        /// stream_pairs, stream_count, fusion_method or fusion_layer.
        kind: String,
        #[command(flatten)]
        common: Common,
        /// Number of seeds, counted up from --seed.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Finite-difference gradient checks of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force oracle and fusion algebra checks.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failures caused by the invocation rather than by the run.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(r: tscn::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| UsageError(e.into()).into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = usage(worker_pool()).and_then(|pool| pool.install(|| run(cli.verb)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(verb: Verb) -> anyhow::Result<()> {
    match verb {
        Verb::Synth {
            ids,
            frames,
            extent,
            seed,
            out,
        } => synth(ids, frames, &extent, seed, &out),
        Verb::Train { common, data } => train_verb(&common, data.as_deref()),
        Verb::Eval {
            common,
            data,
            checkpoint,
            all,
        } => eval_verb(&common, data.as_deref(), &checkpoint, all),
        Verb::Ablate { kind, common, seeds } => ablate(&kind, &common, seeds),
        Verb::Gradcheck { instances, seed, out } => {
            check("gradcheck", vec![gradient_suite(instances, seed)?], instances, seed, out)
        }
        Verb::OracleCheck { instances, seed, out } => check(
            "oracle-check",
            vec![oracle_suite(instances, seed)?, fusion_algebra_suite(instances, seed)?],
            instances,
            seed,
            out,
        ),
    }
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = usage(RunConfig::load(&common.config))?;
    usage(cfg.apply_overrides(&common.overrides))?;
    if let Some(e) = common.epochs {
        cfg.training.epochs = e;
    }
    if let Some(s) = common.seed {
        cfg.training.seed = s;
    }
    usage(cfg.validate())?;
    Ok(cfg)
}

fn out_dir(out: &Option<PathBuf>, verb: &str) -> anyhow::Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("runs").join(verb));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn parse_extent(s: &str) -> anyhow::Result<(usize, usize)> {
    let bad = || UsageError(anyhow!("extent must look like 32x32, got `{s}`"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad().into());
    }
    Ok((h, w))
}

fn synth(ids: usize, frames: usize, extent: &str, seed: u64, out: &Path) -> anyhow::Result<()> {
    let extent = parse_extent(extent)?;
    if ids < 2 || frames == 0 {
        bail!(UsageError(anyhow!("need --ids >= 2 and --frames >= 1")));
    }
    let samples = synth_generate(&SynthSpec::new(ids, frames, extent, seed))?;
    std::fs::create_dir_all(out)?;
    export(&samples, out)?;
    let manifest = json!({
        "verb": "synth",
        "seed": seed,
        "config": { "ids": ids, "frames": frames, "extent": [extent.0, extent.1] },
        "sequences": samples.len(),
        "artifacts": {},
    });
    write_manifest(out, manifest, &[])?;
    println!("wrote {} sequences of {ids} identities to {}", samples.len(), out.display());
    Ok(())
}

/// Loads `data` or synthesizes the config's dataset, and points the
/// network at the frame size actually present.
fn dataset(cfg: &mut RunConfig, data: Option<&Path>) -> anyhow::Result<Vec<SequenceSample>> {
    let samples = match data {
        Some(root) => load_dataset(root)?,
        None => synth_generate(&SynthSpec::new(
            cfg.data.num_ids,
            cfg.data.frames_per_seq,
            cfg.network.input_extent,
            cfg.data.seed,
        ))?,
    };
    let first = samples.first().and_then(|s| s.frames.first()).context("dataset is empty")?;
    let extent = (first.shape()[0], first.shape()[1]);
    if extent != cfg.network.input_extent {
        cfg.network.input_extent = extent;
        usage(cfg.validate())?;
    }
    Ok(samples)
}

fn train_verb(common: &Common, data: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    let samples = dataset(&mut cfg, data)?;
    let out = out_dir(&common.out, "train")?;
    let seed = cfg.training.seed;
    let parts = split(&samples, seed)?;
    let net = Network::build(cfg.network.clone(), seed)?;
    println!(
        "training {} ({}) on {} identities for {} epochs",
        cfg.preset,
        cfg.network.stream_label(),
        parts.train_ids().len(),
        cfg.training.epochs
    );
    let outcome = train(net, &parts.train, &cfg.training)?;
    outcome.network.save_checkpoint(&out.join("checkpoint.bin"))?;
    std::fs::write(out.join("loss.csv"), outcome.trace.to_csv())?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    let curve = evaluate(&outcome.network, &parts.test, cfg.training.test_seq_len)?;
    std::fs::write(out.join("cmc.csv"), cmc_csv(&curve))?;
    println!("held-out rank-1 {:.3}  rank-5 {:.3}", curve.at(1), curve.at(5));
    let manifest = run_manifest("train", &cfg, seed, data);
    write_manifest(&out, manifest, &["checkpoint.bin", "loss.csv", "config.txt", "cmc.csv"])
}

fn eval_verb(common: &Common, data: Option<&Path>, checkpoint: &Path, all: bool) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    let samples = dataset(&mut cfg, data)?;
    let out = out_dir(&common.out, "eval")?;
    let seed = cfg.training.seed;
    let mut net = Network::build(cfg.network.clone(), seed)?;
    net.load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let probes = if all { samples } else { split(&samples, seed)?.test };
    let curve = evaluate(&net, &probes, cfg.training.test_seq_len)?;
    std::fs::write(out.join("cmc.csv"), cmc_csv(&curve))?;
    println!("rank-1 {:.3}  rank-5 {:.3}  gallery {}", curve.at(1), curve.at(5), curve.gallery_size());
    let mut manifest = run_manifest("eval", &cfg, seed, data);
    manifest["checkpoint"] = json!(checkpoint.display().to_string());
    manifest["checkpoint_sha256"] = json!(sha256_file(checkpoint)?);
    write_manifest(&out, manifest, &["cmc.csv"])
}

fn ablate(kind: &str, common: &Common, seeds: Option<usize>) -> anyhow::Result<()> {
    let kind: AblationKind = usage(kind.parse())?;
    let cfg = resolve(common)?;
    let out = out_dir(&common.out, "ablate")?;
    let first = cfg.training.seed;
    let count = seeds.unwrap_or(cfg.seeds);
    if count == 0 {
        bail!(UsageError(anyhow!("--seeds must be at least 1")));
    }
    let setup = ExperimentSetup {
        training: cfg.training.clone(),
        num_ids: cfg.data.num_ids,
        frames_per_seq: cfg.data.frames_per_seq,
        data_seed: cfg.data.seed,
        seeds: (first..first + count as u64).collect(),
    };
    let report = run_ablation(kind, &cfg.network, &setup)?;
    let stem = kind.name();
    let files = [
        (format!("{stem}.csv"), report.to_csv()),
        (format!("{stem}_seeds.csv"), report.per_seed_csv()),
        (format!("{stem}.json"), report.to_json()?),
        (format!("{stem}.svg"), report.to_svg()),
        ("config.txt".to_string(), cfg.to_text()),
    ];
    for (name, body) in &files {
        std::fs::write(out.join(name), body)?;
    }
    print!("{}", report.to_csv());
    let failed: usize = report.rows.iter().map(|r| r.failures()).sum();
    let mut manifest = run_manifest("ablate", &cfg, first, None);
    manifest["ablation"] = json!(stem);
    manifest["seeds"] = json!(setup.seeds);
    manifest["failed_runs"] = json!(failed);
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    write_manifest(&out, manifest, &names)?;
    if failed > 0 {
        bail!("{failed} cell runs failed; see {stem}_seeds.csv");
    }
    Ok(())
}

fn check(verb: &str, reports: Vec<SuiteReport>, instances: usize, seed: u64, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!(
            "{}: {} ({:.1}s)\n",
            r.suite,
            if r.passed() { "pass" } else { "FAIL" },
            r.elapsed.as_secs_f64()
        ));
        for line in r.lines() {
            text.push_str(&format!("  {line}\n"));
        }
    }
    print!("{text}");
    let out = out_dir(&out, verb)?;
    std::fs::write(out.join("report.txt"), &text)?;
    let passed = reports.iter().all(SuiteReport::passed);
    let manifest = json!({
        "verb": verb,
        "seed": seed,
        "config": { "instances": instances },
        "passed": passed,
    });
    write_manifest(&out, manifest, &["report.txt"])?;
    if !passed {
        bail!("{verb} found failing cases");
    }
    Ok(())
}

fn cmc_csv(curve: &CmcCurve) -> String {
    let mut s = String::from("rank,rate\n");
    for (k, r) in curve.rates.iter().enumerate() {
        s.push_str(&format!("{},{r}\n", k + 1));
    }
    s
}

fn run_manifest(verb: &str, cfg: &RunConfig, seed: u64, data: Option<&Path>) -> serde_json::Value {
    json!({
        "verb": verb,
        "seed": seed,
        "data": data.map(|d| d.display().to_string()),
        "config_text": cfg.to_text(),
        "config": cfg,
    })
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(dir: &Path, mut manifest: serde_json::Value, artifacts: &[&str]) -> anyhow::Result<()> {
    let mut hashes = serde_json::Map::new();
    for name in artifacts {
        hashes.insert(name.to_string(), json!(sha256_file(&dir.join(name))?));
    }
    manifest["artifacts"] = serde_json::Value::Object(hashes);
    manifest["version"] = json!(env!("CARGO_PKG_VERSION"));
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
