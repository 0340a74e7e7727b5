use std::fs;
use std::path::Path;

use aprnet_core::ablation::{grid, one_factor_grid, run_cell, AblationRow, AblationSetup, GridFilter};
use aprnet_core::data::{reader_threads, two_sinusoid_components};
use aprnet_core::{
    evaluate, load_checkpoint, load_csv, make_windows, synth_multifreq, train, write_csv, AprnetModel,
    CoreKind, Error, ModelConfig, SeriesTable, Split, TimestampColumn, TrainConfig, WindowedDataset,
};

use crate::config::{GridKind, RunConfig};
use crate::error::CliError;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn load_table(cfg: &RunConfig) -> Result<(SeriesTable, &Path), CliError> {
    let path = cfg.data_path()?;
    Ok((load_csv(path, TimestampColumn::Auto)?, path))
}

fn windows(cfg: &RunConfig, table: SeriesTable, path: &Path, lookback: usize, horizon: usize) -> Result<WindowedDataset, CliError> {
    let ds = make_windows(table, lookback, horizon, cfg.ratios_for(path))?;
    Ok(if cfg.standardize { ds.standardized()? } else { ds })
}

pub fn model_config(cfg: &RunConfig, channels: usize) -> ModelConfig {
    let mut m = ModelConfig::new(cfg.lookback, cfg.horizon, channels, cfg.latent_dim);
    let a = &mut m.aplc;
    a.seq_enabled = cfg.seq_branch;
    a.chan_enabled = cfg.chan_branch;
    a.amp_enabled = cfg.amp;
    a.phase_enabled = cfg.phase;
    a.core = cfg.klc.unwrap_or(CoreKind::Kan);
    a.gate = cfg.gate;
    m
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        patience: cfg.patience,
        seed: cfg.seed,
        learning_rate: cfg.learning_rate,
        checkpoint_path: None,
        threads: reader_threads(),
    }
}

fn metrics_csv(rows: &[(Split, f64, f64)]) -> String {
    let mut s = String::from("split,mse,mae\n");
    for (split, mse, mae) in rows {
        s.push_str(&format!("{},{mse:?},{mae:?}\n", split.as_str()));
    }
    s
}

pub fn run_train(cfg: &RunConfig) -> Result<(), CliError> {
    let (table, path) = load_table(cfg)?;
    let data = windows(cfg, table, path, cfg.lookback, cfg.horizon)?;
    ensure_dir(&cfg.out)?;
    let mut model = AprnetModel::<f32>::new(model_config(cfg, data.channels()), cfg.seed)?;
    let mut tc = train_config(cfg);
    tc.checkpoint_path = Some(cfg.out.join("checkpoint.bin"));
    log::info!(
        "training {} parameters on {} windows",
        model.count_parameters(),
        data.len(Split::Train)
    );
    let report_path = cfg.out.join("report.csv");
    let report = match train(&mut model, &data, &tc) {
        Ok(r) => r,
        Err(abort) => {
            write_text(&report_path, &abort.report.to_csv())?;
            return Err(abort.source.into());
        }
    };
    write_text(&report_path, &report.to_csv())?;
    let mut rows = Vec::new();
    for split in [Split::Val, Split::Test] {
        let (mse, mae) = evaluate(&model, &data, split, cfg.batch_size, tc.threads)?;
        rows.push((split, mse, mae));
    }
    write_text(&cfg.out.join("metrics.csv"), &metrics_csv(&rows))?;
    let (_, mse, mae) = rows[1];
    println!(
        "best epoch {} of {}; test mse {mse:.6} mae {mae:.6}; {:.1}s",
        report.best_epoch,
        report.epochs.len(),
        report.wall_seconds
    );
    Ok(())
}

fn check_channels(model: &AprnetModel<f32>, table: &SeriesTable) -> Result<(), CliError> {
    if table.channels() != model.config.channels {
        return Err(CliError::Core(Error::Config(format!(
            "data has {} channels, checkpoint expects {}",
            table.channels(),
            model.config.channels
        ))));
    }
    Ok(())
}

pub fn run_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg.checkpoint_path())?;
    let model = ck.model;
    let (table, path) = load_table(cfg)?;
    check_channels(&model, &table)?;
    let names = table.channel_names.clone();
    let data = windows(cfg, table, path, model.config.lookback, model.config.horizon)?;
    let threads = reader_threads();
    let (mse, mae) = evaluate(&model, &data, Split::Test, cfg.batch_size, threads)?;
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("eval.csv"), &metrics_csv(&[(Split::Test, mse, mae)]))?;

    // Prediction and target of the last test window, one column pair per channel.
    let last = data.len(Split::Test) - 1;
    let batch = data.batch::<f32>(Split::Test, &[last]);
    let pred = model.predict(&batch.x)?;
    let c = names.len();
    let mut cols = Vec::with_capacity(2 * c);
    for n in &names {
        cols.push(format!("{n}_pred"));
        cols.push(format!("{n}_target"));
    }
    let mut values = Vec::with_capacity(model.config.horizon * 2 * c);
    for t in 0..model.config.horizon {
        for ch in 0..c {
            values.push(pred.data()[t * c + ch] as f64);
            values.push(batch.y.data()[t * c + ch] as f64);
        }
    }
    write_csv(&SeriesTable::new(cols, values, None)?, cfg.out.join("test_predictions.csv"))?;
    println!("test mse {mse:.6} mae {mae:.6}");
    Ok(())
}

pub fn run_forecast(cfg: &RunConfig) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg.checkpoint_path())?;
    let model = ck.model;
    let (table, _) = load_table(cfg)?;
    check_channels(&model, &table)?;
    let l = model.config.lookback;
    let available = table.rows();
    if available < l {
        return Err(CliError::Core(Error::Config(format!(
            "input has {available} rows, shorter than the model look-back {l}"
        ))));
    }
    let c = table.channels();
    let start = (available - l) * c;
    let x = aprnet_core::Tensor::<f32>::new(
        &[1, l, c],
        table.values[start..].iter().map(|&v| v as f32).collect(),
    )?;
    let pred = model.predict(&x)?;
    let values = pred.data().iter().map(|&v| v as f64).collect();
    ensure_dir(&cfg.out)?;
    let out = cfg.out.join("forecast.csv");
    write_csv(&SeriesTable::new(table.channel_names.clone(), values, None)?, &out)?;
    println!("wrote {} steps x {c} channels to {}", model.config.horizon, out.display());
    Ok(())
}

pub fn run_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let comps = two_sinusoid_components(cfg.channels, cfg.seed);
    let table = synth_multifreq(cfg.length, cfg.channels, &comps, cfg.drift, cfg.noise, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    let out = cfg.out.join("synthetic.csv");
    write_csv(&table, &out)?;
    println!("wrote {} rows x {} channels to {}", table.rows(), table.channels(), out.display());
    Ok(())
}

pub fn run_ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let (table, path) = load_table(cfg)?;
    let cells = match cfg.grid {
        GridKind::Full => grid(&GridFilter {
            seq: cfg.seq_branch,
            chan: cfg.chan_branch,
            amp: cfg.amp,
            phase: cfg.phase,
            core: cfg.klc,
        }),
        GridKind::OneFactor => one_factor_grid(),
    };
    if cells.is_empty() {
        return Err(CliError::Usage("flags exclude every ablation cell".into()));
    }
    let table = if cfg.standardize {
        // Statistics come from the train split of the longest horizon's windows.
        let max_h = cfg.horizons.iter().copied().max().unwrap_or(cfg.horizon);
        windows(cfg, table, path, cfg.lookback, max_h)?.table
    } else {
        table
    };
    let setup = AblationSetup {
        base: model_config(cfg, table.channels()),
        horizons: cfg.horizons.clone(),
        ratios: cfg.ratios_for(path),
        train: train_config(cfg),
    };
    ensure_dir(&cfg.out)?;
    let out = cfg.out.join("ablation.csv");
    let mut text = String::from(AblationRow::HEADER);
    text.push('\n');
    println!("{}", AblationRow::HEADER);
    for cell in cells {
        let row = run_cell(&table, cell, &setup)?;
        let line = row.to_csv_line();
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
        write_text(&out, &text)?;
    }
    Ok(())
}
