pub mod ablation;
pub mod aplc;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod kan;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod spectral;
pub mod spline;
pub mod tensor;
pub mod train;

pub use ablation::{one_factor_grid, run_cell, AblationCell, AblationRow, AblationSetup, GridFilter};
pub use aplc::{branch_forward, AplcBlock, AplcConfig, BranchAxis, GateActivation, HeadPath, KlcHead};
pub use autodiff::{Gradients, Reduce, Tape, Unary, Var};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{
    load_csv, make_windows, synth_multifreq, write_csv, Batch, Component, SeriesTable, Split, SplitRatios,
    TimestampColumn, WindowedDataset,
};
pub use error::{Error, Result};
pub use kan::{swap_core, Conv1dCore, CoreKind, KanLayer, KanOptions, KlcCore, Linear};
pub use metrics::{mse_mae, smape_mase_owa, ScaledErrors};
pub use model::{AprnetModel, Forecast, LayerNorm, ModelConfig, NormStats};
pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};
pub use scalar::Real;
pub use spectral::Spectrum;
pub use spline::SplineGrid;
pub use tensor::Tensor;
pub use train::{evaluate, train, TrainAbort, TrainConfig, TrainReport};
