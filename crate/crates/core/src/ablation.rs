//! Ablation grid over branch set, head set and core kind.

use std::fmt;

use crate::data::{make_windows, SeriesTable, Split, SplitRatios};
use crate::error::{Error, Result};
use crate::kan::CoreKind;
use crate::model::{AprnetModel, ModelConfig};
use crate::train::{evaluate, train, TrainConfig};

/// Which spectral branches are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branches {
    ChannelOnly,
    SequenceOnly,
    Both,
}

/// Which heads are active inside each branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heads {
    AmpOnly,
    PhaseOnly,
    Both,
}

impl Branches {
    pub const ALL: [Branches; 3] = [Branches::ChannelOnly, Branches::SequenceOnly, Branches::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Branches::ChannelOnly => "chan",
            Branches::SequenceOnly => "seq",
            Branches::Both => "seqchan",
        }
    }
}

impl Heads {
    pub const ALL: [Heads; 3] = [Heads::AmpOnly, Heads::PhaseOnly, Heads::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Heads::AmpOnly => "amp",
            Heads::PhaseOnly => "phase",
            Heads::Both => "ampphase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationCell {
    pub branches: Branches,
    pub heads: Heads,
    pub core: CoreKind,
}

impl AblationCell {
    pub const FULL: Self = Self {
        branches: Branches::Both,
        heads: Heads::Both,
        core: CoreKind::Kan,
    };

    /// `branches-heads-core`, e.g. `seqchan-ampphase-kan`.
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.branches.as_str(), self.heads.as_str(), self.core.as_str())
    }

    /// Applies the cell's switches to a model configuration.
    pub fn configure(&self, cfg: &mut ModelConfig) {
        let a = &mut cfg.aplc;
        a.seq_enabled = self.branches != Branches::ChannelOnly;
        a.chan_enabled = self.branches != Branches::SequenceOnly;
        a.amp_enabled = self.heads != Heads::PhaseOnly;
        a.phase_enabled = self.heads != Heads::AmpOnly;
        a.core = self.core;
    }
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Restrictions on the full 3×3×3 grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridFilter {
    pub seq: bool,
    pub chan: bool,
    pub amp: bool,
    pub phase: bool,
    /// `None` keeps all three core kinds.
    pub core: Option<CoreKind>,
}

impl Default for GridFilter {
    fn default() -> Self {
        Self {
            seq: true,
            chan: true,
            amp: true,
            phase: true,
            core: None,
        }
    }
}

/// Cells of the full grid allowed by `filter`, in a fixed order.
pub fn grid(filter: &GridFilter) -> Vec<AblationCell> {
    let branches = Branches::ALL.into_iter().filter(|b| match b {
        Branches::ChannelOnly => filter.chan,
        Branches::SequenceOnly => filter.seq,
        Branches::Both => filter.seq && filter.chan,
    });
    let heads: Vec<Heads> = Heads::ALL
        .into_iter()
        .filter(|h| match h {
            Heads::AmpOnly => filter.amp,
            Heads::PhaseOnly => filter.phase,
            Heads::Both => filter.amp && filter.phase,
        })
        .collect();
    let cores: Vec<CoreKind> = match filter.core {
        Some(k) => vec![k],
        None => CoreKind::ALL.to_vec(),
    };
    let mut out = Vec::new();
    for b in branches {
        for &h in &heads {
            for &c in &cores {
                out.push(AblationCell {
                    branches: b,
                    heads: h,
                    core: c,
                });
            }
        }
    }
    out
}

/// The full cell plus every single-factor departure from it.
pub fn one_factor_grid() -> Vec<AblationCell> {
    let full = AblationCell::FULL;
    let mut out = vec![full];
    for b in [Branches::ChannelOnly, Branches::SequenceOnly] {
        out.push(AblationCell { branches: b, ..full });
    }
    for h in [Heads::AmpOnly, Heads::PhaseOnly] {
        out.push(AblationCell { heads: h, ..full });
    }
    for c in [CoreKind::Linear, CoreKind::Conv1d] {
        out.push(AblationCell { core: c, ..full });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// The horizon when one was evaluated, otherwise 0 for an average over several.
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub seed: u64,
}

impl AblationRow {
    pub const HEADER: &'static str = "cell,horizon,mse,mae,seed";

    pub fn to_csv_line(&self) -> String {
        format!("{},{},{:?},{:?},{}", self.cell.id(), self.horizon, self.mse, self.mae, self.seed)
    }
}

/// Shared settings for every cell.
#[derive(Debug, Clone)]
pub struct AblationSetup {
    pub base: ModelConfig,
    pub horizons: Vec<usize>,
    pub ratios: SplitRatios,
    pub train: TrainConfig,
}

/// Trains one cell for every horizon and averages test MSE/MAE.
pub fn run_cell(table: &SeriesTable, cell: AblationCell, setup: &AblationSetup) -> Result<AblationRow> {
    if setup.horizons.is_empty() {
        return Err(Error::Config("ablation needs at least one horizon".into()));
    }
    let (mut mse, mut mae) = (0.0, 0.0);
    for &h in &setup.horizons {
        let data = make_windows(table.clone(), setup.base.lookback, h, setup.ratios)?;
        let mut cfg = setup.base.clone();
        cfg.horizon = h;
        cfg.channels = table.channels();
        cell.configure(&mut cfg);
        let mut model = AprnetModel::<f32>::new(cfg, setup.train.seed)?;
        train(&mut model, &data, &setup.train).map_err(|e| e.source)?;
        let (m, a) = evaluate(&model, &data, Split::Test, setup.train.batch_size, setup.train.threads)?;
        log::info!("{cell} horizon {h}: test mse {m:.6} mae {a:.6}");
        mse += m;
        mae += a;
    }
    let n = setup.horizons.len() as f64;
    Ok(AblationRow {
        cell,
        horizon: if setup.horizons.len() == 1 { setup.horizons[0] } else { 0 },
        mse: mse / n,
        mae: mae / n,
        seed: setup.train.seed,
    })
}
