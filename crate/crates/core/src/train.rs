//! Mini-batch training with early stopping on validation MSE.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::save_checkpoint;
use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::mse_mae;
use crate::model::AprnetModel;
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Written whenever validation improves.
    pub checkpoint_path: Option<PathBuf>,
    /// Batch reader threads.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            patience: 5,
            seed: 0,
            learning_rate: 1e-3,
            checkpoint_path: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub wall_seconds: f64,
    pub skipped_steps: u64,
}

impl TrainReport {
    pub const HEADER: &'static str = "epoch,train_mse,val_mse,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", e.epoch, e.train_mse, e.val_mse, e.seconds);
        }
        s
    }
}

/// Training stopped early; the report covers the epochs that finished.
#[derive(Debug, thiserror::Error)]
#[error("training aborted after {} epoch(s): {source}", report.epochs.len())]
pub struct TrainAbort {
    #[source]
    pub source: Error,
    pub report: TrainReport,
}

/// `mean((pred - target)²)` as a tape scalar.
pub fn mse_loss<'t>(pred: Var<'t, f32>, target: &Tensor<f32>) -> Result<Var<'t, f32>> {
    let t = pred.tape().constant(target.clone());
    Ok(pred.sub(t)?.square()?.mean_all())
}

/// MSE and MAE of the model over every window of `split`.
pub fn evaluate(
    model: &AprnetModel<f32>,
    data: &WindowedDataset,
    split: Split,
    batch_size: usize,
    threads: usize,
) -> Result<(f64, f64)> {
    let order: Vec<usize> = (0..data.len(split)).collect();
    let (mut pred, mut target) = (Vec::new(), Vec::new());
    data.for_each_batch::<f32, _>(split, &order, batch_size, threads, |b| {
        let p = model.predict(&b.x)?;
        pred.extend(p.data().iter().map(|&v| v as f64));
        target.extend(b.y.data().iter().map(|&v| v as f64));
        Ok(())
    })?;
    mse_mae(&pred, &target)
}

fn snapshot(store: &ParamStore<f32>) -> Vec<Vec<f32>> {
    store.iter().map(|(_, p)| p.tensor.data().to_vec()).collect()
}

fn restore(store: &mut ParamStore<f32>, snap: &[Vec<f32>]) {
    let ids: Vec<_> = store.ids().collect();
    for (id, vals) in ids.into_iter().zip(snap) {
        store.get_mut(id).data_mut().copy_from_slice(vals);
    }
}

/// Trains in place and leaves the best-validation parameters in `model`.
pub fn train(
    model: &mut AprnetModel<f32>,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> std::result::Result<TrainReport, TrainAbort> {
    let mut report = TrainReport {
        best_val_mse: f64::INFINITY,
        ..TrainReport::default()
    };
    let abort = |source: Error, report: &TrainReport| TrainAbort {
        source,
        report: report.clone(),
    };
    if let Err(e) = cfg.validate() {
        return Err(abort(e, &report));
    }
    for split in [Split::Train, Split::Val] {
        if data.is_empty(split) {
            let e = Error::Config(format!("{} split has no windows", split.as_str()));
            return Err(abort(e, &report));
        }
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(&model.params, cfg.learning_rate);
    let mut best = snapshot(&model.params);
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        let epoch_start = Instant::now();
        let order = data.permutation(Split::Train, &mut rng);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let step = data.for_each_batch::<f32, _>(
            Split::Train,
            &order,
            cfg.batch_size,
            cfg.threads,
            |b| {
                let tape = Tape::new();
                let fc = model.forward(&tape, &b.x)?;
                let loss = mse_loss(fc.prediction, &b.y)?;
                model.params.zero_grad();
                tape.backward_into(loss, &mut model.params)?;
                opt.step(&mut model.params);
                let n = b.x.shape()[0];
                loss_sum += loss.value().item() as f64 * n as f64;
                seen += n;
                Ok(())
            },
        );
        if let Err(e) = step {
            return Err(abort(e, &report));
        }
        let val_mse = match evaluate(model, data, Split::Val, cfg.batch_size, cfg.threads) {
            Ok((mse, _)) => mse,
            Err(e) => return Err(abort(e, &report)),
        };
        let train_mse = loss_sum / seen as f64;
        report.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train {train_mse:.6} val {val_mse:.6}");

        if val_mse < report.best_val_mse {
            report.best_val_mse = val_mse;
            report.best_epoch = epoch;
            best = snapshot(&model.params);
            stale = 0;
            if let Some(path) = &cfg.checkpoint_path {
                if let Err(e) = save_checkpoint(path, model, Some(&opt), Some(val_mse)) {
                    report.wall_seconds = start.elapsed().as_secs_f64();
                    restore(&mut model.params, &best);
                    return Err(abort(e, &report));
                }
            }
        } else {
            stale += 1;
        }
        if stale >= cfg.patience {
            break;
        }
    }
    restore(&mut model.params, &best);
    report.wall_seconds = start.elapsed().as_secs_f64();
    report.skipped_steps = opt.skipped_steps;
    Ok(report)
}
