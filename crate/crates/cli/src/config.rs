//! Run configuration: built-in defaults, overridden by a `key = value` file,
//! overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aprnet_core::{CoreKind, GateActivation, SplitRatios};
use clap::{Args, Parser, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Train a model and write checkpoint, per-epoch report and test metrics.
    Train,
    /// Score a checkpoint on the test split.
    Eval,
    /// Predict the steps after the last look-back window of a file.
    Forecast,
    /// Write a synthetic multi-frequency series.
    Synth,
    /// Train every cell of the ablation grid.
    Ablate,
}

#[derive(Debug, Parser)]
#[command(name = "aprnet", version, about = "Amplitude-phase spectral forecaster")]
pub struct Cli {
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Input series (comma-separated, header row).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Local-correlation core: kan, linear or conv1d.
    #[arg(long)]
    pub klc: Option<CoreKind>,
    #[arg(long)]
    pub no_seq_branch: bool,
    #[arg(long)]
    pub no_chan_branch: bool,
    #[arg(long)]
    pub no_amp: bool,
    #[arg(long)]
    pub no_phase: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for all artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Z-score every channel with train-split statistics before windowing.
    #[arg(long)]
    pub standardize: bool,
    /// Checkpoint to read (eval, forecast); defaults to `<out>/checkpoint.bin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated horizons averaged by `ablate`.
    #[arg(long)]
    pub horizons: Option<String>,
    /// Train/val/test ratios, e.g. `0.7,0.1,0.2`.
    #[arg(long)]
    pub split: Option<String>,
    /// Gate activation: sigmoid or softmax.
    #[arg(long)]
    pub gate: Option<String>,
    /// Ablation grid: full or one-factor.
    #[arg(long)]
    pub grid: Option<String>,
    /// Synthetic series length.
    #[arg(long)]
    pub length: Option<usize>,
    /// Synthetic channel count.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Synthetic linear phase drift in radians per step.
    #[arg(long)]
    pub drift: Option<f64>,
    /// Synthetic noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Full,
    OneFactor,
}

impl FromStr for GridKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(GridKind::Full),
            "one-factor" | "one_factor" => Ok(GridKind::OneFactor),
            other => Err(format!("unknown grid {other:?} (expected full or one-factor)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub lookback: usize,
    pub horizon: usize,
    pub latent_dim: usize,
    /// `None` means not chosen: `kan` for training, all kinds for `ablate`.
    pub klc: Option<CoreKind>,
    pub seq_branch: bool,
    pub chan_branch: bool,
    pub amp: bool,
    pub phase: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub standardize: bool,
    pub checkpoint: Option<PathBuf>,
    pub horizons: Vec<usize>,
    pub split: Option<SplitRatios>,
    pub gate: GateActivation,
    pub grid: GridKind,
    pub length: usize,
    pub channels: usize,
    pub drift: f64,
    pub noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            lookback: 512,
            horizon: 96,
            latent_dim: 128,
            klc: None,
            seq_branch: true,
            chan_branch: true,
            amp: true,
            phase: true,
            seed: 0,
            out: PathBuf::from("aprnet-out"),
            epochs: 30,
            batch_size: 32,
            patience: 5,
            learning_rate: 1e-3,
            standardize: false,
            checkpoint: None,
            horizons: vec![96, 192, 336, 720],
            split: None,
            gate: GateActivation::Sigmoid,
            grid: GridKind::Full,
            length: 4000,
            channels: 3,
            drift: 0.001,
            noise: 0.1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    let list = value
        .split(',')
        .map(|v| parse::<usize>(key, v.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if list.is_empty() || list.contains(&0) {
        return Err(CliError::Usage(format!("{key} needs positive integers, got {value:?}")));
    }
    Ok(list)
}

fn parse_split(value: &str) -> Result<SplitRatios, CliError> {
    let parts = value
        .split(',')
        .map(|v| parse::<f64>("split", v.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let [train, val, test] = parts[..] else {
        return Err(CliError::Usage(format!("split needs three ratios, got {value:?}")));
    };
    let r = SplitRatios { train, val, test };
    r.validate()?;
    Ok(r)
}

fn parse_gate(value: &str) -> Result<GateActivation, CliError> {
    match value {
        "sigmoid" => Ok(GateActivation::Sigmoid),
        "softmax" => Ok(GateActivation::Softmax),
        other => Err(CliError::Usage(format!("unknown gate {other:?} (expected sigmoid or softmax)"))),
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_owned());
    }
    Ok(out)
}

impl RunConfig {
    pub fn apply_file(&mut self, entries: &BTreeMap<String, String>) -> Result<(), CliError> {
        for (key, value) in entries {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "data" => self.data = Some(PathBuf::from(v)),
                "lookback" => self.lookback = parse(k, v)?,
                "horizon" => self.horizon = parse(k, v)?,
                "latent_dim" => self.latent_dim = parse(k, v)?,
                "klc" => self.klc = Some(parse(k, v)?),
                "seq_branch" => self.seq_branch = parse_bool(k, v)?,
                "chan_branch" => self.chan_branch = parse_bool(k, v)?,
                "amp" => self.amp = parse_bool(k, v)?,
                "phase" => self.phase = parse_bool(k, v)?,
                "no_seq_branch" => self.seq_branch = !parse_bool(k, v)?,
                "no_chan_branch" => self.chan_branch = !parse_bool(k, v)?,
                "no_amp" => self.amp = !parse_bool(k, v)?,
                "no_phase" => self.phase = !parse_bool(k, v)?,
                "seed" => self.seed = parse(k, v)?,
                "out" => self.out = PathBuf::from(v),
                "epochs" => self.epochs = parse(k, v)?,
                "batch_size" => self.batch_size = parse(k, v)?,
                "patience" => self.patience = parse(k, v)?,
                "lr" | "learning_rate" => self.learning_rate = parse(k, v)?,
                "standardize" => self.standardize = parse_bool(k, v)?,
                "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
                "horizons" => self.horizons = parse_list(k, v)?,
                "split" => self.split = Some(parse_split(v)?),
                "gate" => self.gate = parse_gate(v)?,
                "grid" => self.grid = parse(k, v)?,
                "length" => self.length = parse(k, v)?,
                "channels" => self.channels = parse(k, v)?,
                "drift" => self.drift = parse(k, v)?,
                "noise" => self.noise = parse(k, v)?,
                other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, f: &Flags) -> Result<(), CliError> {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if f.data.is_some() {
            self.data = f.data.clone();
        }
        set(&mut self.lookback, &f.lookback);
        set(&mut self.horizon, &f.horizon);
        set(&mut self.latent_dim, &f.latent_dim);
        if f.klc.is_some() {
            self.klc = f.klc;
        }
        self.seq_branch &= !f.no_seq_branch;
        self.chan_branch &= !f.no_chan_branch;
        self.amp &= !f.no_amp;
        self.phase &= !f.no_phase;
        set(&mut self.seed, &f.seed);
        set(&mut self.out, &f.out);
        set(&mut self.epochs, &f.epochs);
        set(&mut self.batch_size, &f.batch_size);
        set(&mut self.patience, &f.patience);
        set(&mut self.learning_rate, &f.lr);
        self.standardize |= f.standardize;
        if f.checkpoint.is_some() {
            self.checkpoint = f.checkpoint.clone();
        }
        if let Some(v) = &f.horizons {
            self.horizons = parse_list("horizons", v)?;
        }
        if let Some(v) = &f.split {
            self.split = Some(parse_split(v)?);
        }
        if let Some(v) = &f.gate {
            self.gate = parse_gate(v)?;
        }
        if let Some(v) = &f.grid {
            self.grid = parse("grid", v)?;
        }
        set(&mut self.length, &f.length);
        set(&mut self.channels, &f.channels);
        set(&mut self.drift, &f.drift);
        set(&mut self.noise, &f.noise);
        Ok(())
    }

    /// Defaults, then the config file named by `--config`, then flags.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = &flags.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_file(&parse_config_text(&text)?)?;
        }
        cfg.apply_flags(flags)?;
        Ok(cfg)
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("--data is required for this command".into()))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.bin"))
    }

    pub fn ratios_for(&self, path: &Path) -> SplitRatios {
        self.split.unwrap_or_else(|| SplitRatios::for_path(path))
    }
}
