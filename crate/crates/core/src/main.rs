//! Experiment runner: config loading, seeding, sweeps, CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use oac::feel::{self, FeelConfig};
use oac::numerals::{self, CodecConfig};
use oac::phy::PhyConfig;
use oac::stats::{self, GradientDist, Scheme};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "oac", version, about = "Over-the-air gradient aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode a value into balanced numerals (JSON line on stdout).
    Encode {
        #[arg(long)]
        v: f64,
        #[arg(long)]
        beta: u32,
        #[arg(long)]
        digits: u32,
        #[arg(long, default_value_t = 1.0)]
        vmax: f64,
    },
    /// Decode balanced numerals back to a value (JSON line on stdout).
    Decode {
        /// Comma-separated numerals, most significant first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        numerals: Vec<f64>,
        #[arg(long)]
        beta: u32,
        #[arg(long)]
        digits: u32,
        #[arg(long, default_value_t = 1.0)]
        vmax: f64,
    },
    /// Monte-Carlo vs closed-form BMSE over a (scheme, beta, D, R) grid.
    Mse(Common),
    /// Aggregation-error histogram with sample skewness.
    Hist(Common),
    /// Federated training run with per-round telemetry.
    Train(Common),
    /// Cartesian sweep over another subcommand's config.
    Sweep(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; unknown keys are rejected.
    #[arg(long)]
    config: PathBuf,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV and manifest artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Dotted-path config overrides, e.g. --set channel.noise_var=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(3),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Encode { v, beta, digits, vmax } => {
            let codec = CodecConfig::new(beta, digits, vmax)
                .map_err(|e| config_err(format!("beta/digits/vmax: {e}")))?;
            let seq = numerals::encode(v, &codec).map_err(|e| config_err(format!("v: {e}")))?;
            println!("{}", serde_json::json!({ "numerals": seq.numerals() }));
            Ok(())
        }
        Cmd::Decode { numerals: nums, beta, digits, vmax } => {
            let codec = CodecConfig::new(beta, digits, vmax)
                .map_err(|e| config_err(format!("beta/digits/vmax: {e}")))?;
            let v = numerals::decode(&nums, &codec)
                .map_err(|e| config_err(format!("numerals: {e}")))?;
            println!("{}", serde_json::json!({ "value": v }));
            Ok(())
        }
        Cmd::Mse(c) => run_artifact(&c, "mse", run_mse),
        Cmd::Hist(c) => run_artifact(&c, "hist", run_hist),
        Cmd::Train(c) => run_artifact(&c, "train", run_train),
        Cmd::Sweep(c) => run_sweep(&c),
    }
}

// ---------------------------------------------------------------------------
// config plumbing

fn load_config(path: &Path, overrides: &[String]) -> Result<Value, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&raw)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    Ok(value)
}

fn apply_override(root: &mut Value, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{item}` is not KEY=VALUE")))?;
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("override `{key}`: `{part}` is not an object")))?;
        if i == parts.len() - 1 {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn config_hash(value: &Value) -> String {
    let canonical = serde_json::to_string(value).expect("serializable config");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(
    dir: &Path,
    stem: &str,
    subcommand: &str,
    hash: &str,
    seed: u64,
    config: &Value,
) -> Result<(), CliError> {
    let manifest = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": subcommand,
        "config_hash": hash,
        "seed": seed,
        "config": config,
    });
    let path = dir.join(format!("{stem}.manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializable"))
        .map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

/// 17 significant digits: enough to round-trip any f64 byte-identically.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn run_artifact(
    common: &Common,
    name: &str,
    task: fn(&Value, u64, &Path, &str) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let config = load_config(&common.config, &common.set)?;
    let hash = config_hash(&config);
    let stem = format!("{name}-{}-{}", &hash[..8], common.seed);
    std::fs::create_dir_all(&common.out)
        .map_err(|e| runtime_err(format!("{}: {e}", common.out.display())))?;
    task(&config, common.seed, &common.out, &stem)?;
    write_manifest(&common.out, &stem, name, &hash, common.seed, &config)
}

// ---------------------------------------------------------------------------
// mse

fn default_subcarriers() -> usize {
    1200
}

fn default_ofdm_symbols() -> usize {
    14
}

fn default_fft() -> usize {
    2048
}

/// Channel scalars shared by the analysis subcommands; grid dimensions default
/// to an LTE-like 1200 x 14 slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelParams {
    num_eds: usize,
    noise_var: f64,
    #[serde(default)]
    sync_error_samples: u32,
    #[serde(default)]
    sync_spread: f64,
    #[serde(default)]
    clip_counts: bool,
    #[serde(default = "default_subcarriers")]
    num_subcarriers: usize,
    #[serde(default = "default_ofdm_symbols")]
    num_symbols: usize,
    #[serde(default = "default_fft")]
    fft_size: usize,
}

impl ChannelParams {
    fn phy(&self, num_antennas: usize, symbol_energy: f64) -> PhyConfig {
        PhyConfig {
            num_eds: self.num_eds,
            num_antennas,
            noise_var: self.noise_var,
            symbol_energy,
            num_subcarriers: self.num_subcarriers,
            num_symbols: self.num_symbols,
            sync_error_samples: self.sync_error_samples,
            fft_size: self.fft_size,
            sync_spread: self.sync_spread,
            clip_counts: self.clip_counts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MseConfig {
    schemes: Vec<Scheme>,
    betas: Vec<u32>,
    digits: Vec<u32>,
    antennas: Vec<usize>,
    trials: u64,
    distribution: GradientDist,
    channel: ChannelParams,
    /// Codec range; `None` selects `(beta^D - 1) / beta^D`.
    #[serde(default)]
    v_max: Option<f64>,
    /// Per-subcarrier energy; `None` selects `beta - 1`.
    #[serde(default)]
    symbol_energy: Option<f64>,
}

fn parse_config<T: for<'de> Deserialize<'de>>(value: &Value) -> Result<T, CliError> {
    serde_json::from_value(value.clone()).map_err(|e| config_err(format!("config: {e}")))
}

fn codec_for(
    beta: u32,
    digits: u32,
    v_max_override: Option<f64>,
) -> Result<CodecConfig, CliError> {
    let levels = (beta as f64).powi(digits as i32);
    let v_max = v_max_override.unwrap_or((levels - 1.0) / levels);
    CodecConfig::new(beta, digits, v_max).map_err(|e| config_err(format!("betas/digits: {e}")))
}

fn scheme_label(scheme: &Scheme) -> String {
    match scheme {
        Scheme::Balanced => "balanced".into(),
        Scheme::Goldenbaum { seq_len } => format!("goldenbaum{seq_len}"),
        Scheme::Fskmv => "fskmv".into(),
        Scheme::Ideal => "ideal".into(),
    }
}

fn dist_label(dist: &GradientDist) -> String {
    match dist {
        GradientDist::Uniform => "uniform".into(),
        GradientDist::Gaussian { variance } => format!("gaussian{variance}"),
    }
}

fn run_mse(config: &Value, seed: u64, out: &Path, stem: &str) -> Result<(), CliError> {
    let cfg: MseConfig = parse_config(config)?;
    let snr_db = -10.0 * cfg.channel.noise_var.log10();
    let mut csv = String::from(
        "scheme,beta,D,R,K,snr_db,distribution,bmse_sim,ci,bmse_theory\n",
    );
    for scheme in &cfg.schemes {
        for &beta in &cfg.betas {
            for &digits in &cfg.digits {
                let codec = codec_for(beta, digits, cfg.v_max)?;
                let es = cfg.symbol_energy.unwrap_or((beta - 1) as f64);
                for &r in &cfg.antennas {
                    let phy = cfg.channel.phy(r, es);
                    let est = stats::mc_bmse(scheme, &codec, &phy, &cfg.distribution, cfg.trials, seed)
                        .map_err(runtime_err)?;
                    let theory = match scheme {
                        Scheme::Balanced => {
                            stats::theoretical_bmse(&codec, &phy).map_err(runtime_err)?.total
                        }
                        _ => f64::NAN,
                    };
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{},{},{},{}",
                        scheme_label(scheme),
                        beta,
                        digits,
                        r,
                        cfg.channel.num_eds,
                        fmt_f64(snr_db),
                        dist_label(&cfg.distribution),
                        fmt_f64(est.mean),
                        fmt_f64(est.ci_halfwidth),
                        fmt_f64(theory),
                    );
                }
            }
        }
    }
    let path = out.join(format!("{stem}.csv"));
    std::fs::write(&path, csv).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// hist

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistConfig {
    scheme: Scheme,
    beta: u32,
    digits: u32,
    antennas: usize,
    trials: u64,
    bins: usize,
    distribution: GradientDist,
    channel: ChannelParams,
    #[serde(default)]
    v_max: Option<f64>,
    #[serde(default)]
    symbol_energy: Option<f64>,
}

fn run_hist(config: &Value, seed: u64, out: &Path, stem: &str) -> Result<(), CliError> {
    let cfg: HistConfig = parse_config(config)?;
    let codec = codec_for(cfg.beta, cfg.digits, cfg.v_max)?;
    let es = cfg.symbol_energy.unwrap_or((cfg.beta - 1) as f64);
    let phy = cfg.channel.phy(cfg.antennas, es);
    let hist = stats::error_histogram(
        &cfg.scheme,
        &codec,
        &phy,
        &cfg.distribution,
        cfg.trials,
        cfg.bins,
        seed,
    )
    .map_err(runtime_err)?;
    let mut csv = String::from("scheme,bin_lo,bin_hi,count,mean,skewness,trials\n");
    for (b, &count) in hist.counts.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            scheme_label(&cfg.scheme),
            fmt_f64(hist.edges[b]),
            fmt_f64(hist.edges[b + 1]),
            count,
            fmt_f64(hist.mean),
            fmt_f64(hist.skewness),
            hist.trials,
        );
    }
    let path = out.join(format!("{stem}.csv"));
    std::fs::write(&path, csv).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// train

fn run_train(config: &Value, seed: u64, out: &Path, stem: &str) -> Result<(), CliError> {
    let cfg: FeelConfig = parse_config(config)?;
    let result = feel::train(&cfg, seed).map_err(|e| match e {
        feel::FeelError::InvalidConfig(_) | feel::FeelError::Codec(_) => {
            config_err(format!("config: {e}"))
        }
        other => runtime_err(other),
    })?;
    let mut csv =
        String::from("round,v_max,train_loss,test_accuracy,grad_norm,bmse_proxy\n");
    for t in &result.traces {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            t.round,
            fmt_f64(t.v_max),
            fmt_f64(t.train_loss),
            fmt_f64(t.test_accuracy),
            fmt_f64(t.grad_norm),
            fmt_f64(t.bmse_proxy),
        );
    }
    let csv_path = out.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, csv)
        .map_err(|e| runtime_err(format!("{}: {e}", csv_path.display())))?;

    let last = result.traces.last().expect("rounds >= 1");
    let summary = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "final_accuracy": last.test_accuracy,
        "final_loss": last.train_loss,
        "rounds": result.traces.len(),
        "config": config,
    });
    let sum_path = out.join(format!("{stem}.summary.json"));
    std::fs::write(&sum_path, serde_json::to_string_pretty(&summary).expect("serializable"))
        .map_err(|e| runtime_err(format!("{}: {e}", sum_path.display())))
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    /// Which subcommand each grid point runs.
    task: SweepTask,
    /// Dotted config key -> list of values; cartesian product in key order.
    grid: BTreeMap<String, Vec<Value>>,
    /// Base config for the task, patched per point.
    base: Value,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SweepTask {
    Mse,
    Hist,
    Train,
}

fn point_seed(master: u64, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(index.to_le_bytes());
    hasher.update(b"oacsweep");
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn run_sweep(common: &Common) -> Result<(), CliError> {
    let config = load_config(&common.config, &common.set)?;
    let cfg: SweepConfig = parse_config(&config)?;
    if cfg.grid.is_empty() || cfg.grid.values().any(|v| v.is_empty()) {
        return Ok(());
    }
    let points: u64 = cfg.grid.values().map(|v| v.len() as u64).product();
    if points > 10_000 {
        return Err(config_err(format!("grid: {points} points exceed the 10000-point limit")));
    }
    std::fs::create_dir_all(&common.out)
        .map_err(|e| runtime_err(format!("{}: {e}", common.out.display())))?;

    let keys: Vec<&String> = cfg.grid.keys().collect();
    let lists: Vec<&Vec<Value>> = cfg.grid.values().collect();
    let task: fn(&Value, u64, &Path, &str) -> Result<(), CliError> = match cfg.task {
        SweepTask::Mse => run_mse,
        SweepTask::Hist => run_hist,
        SweepTask::Train => run_train,
    };
    let name = match cfg.task {
        SweepTask::Mse => "mse",
        SweepTask::Hist => "hist",
        SweepTask::Train => "train",
    };
    for p in 0..points {
        let mut point = cfg.base.clone();
        let mut rem = p;
        for (key, list) in keys.iter().zip(&lists) {
            let v = &list[(rem % list.len() as u64) as usize];
            rem /= list.len() as u64;
            set_path(&mut point, key, v.clone())?;
        }
        let seed = point_seed(common.seed, p);
        let hash = config_hash(&point);
        let stem = format!("{name}-{}-{}-p{p}", &hash[..8], seed);
        task(&point, seed, &common.out, &stem)?;
        write_manifest(&common.out, &stem, name, &hash, seed, &point)?;
    }
    Ok(())
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("grid key `{key}`: `{part}` is not an object")))?;
        if i == parts.len() - 1 {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
