//! Series ingestion, sliding windows over contiguous splits, and synthetic series.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Whether the first column holds timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestampColumn {
    /// Detect from the header name or a non-numeric first cell.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub timestamps: Option<Vec<String>>,
    pub channel_names: Vec<String>,
    /// Row-major `[rows, channels]`.
    pub values: Vec<f64>,
    rows: usize,
}

impl SeriesTable {
    pub fn new(
        channel_names: Vec<String>,
        values: Vec<f64>,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        let c = channel_names.len();
        if c == 0 {
            return Err(Error::Data("table has no channels".into()));
        }
        if values.len() % c != 0 {
            return Err(Error::Data(format!(
                "{} values do not fill {c} channels",
                values.len()
            )));
        }
        let rows = values.len() / c;
        if let Some(ts) = &timestamps {
            if ts.len() != rows {
                return Err(Error::Data(format!("{} timestamps for {rows} rows", ts.len())));
            }
        }
        Ok(Self {
            timestamps,
            channel_names,
            values,
            rows,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.channels();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn column(&self, ch: usize) -> Vec<f64> {
        self.values.iter().skip(ch).step_by(self.channels()).copied().collect()
    }
}

fn looks_like_time_header(name: &str) -> bool {
    matches!(
        name.trim().to_ascii_lowercase().as_str(),
        "date" | "time" | "timestamp" | "datetime" | "ds" | "cell"
    )
}

/// Reads a table from comma-separated text with a header row.
///
/// Row numbers in parse errors count file lines from 1 (the header).
pub fn read_csv<R: Read>(reader: R, timestamps: TimestampColumn) -> Result<SeriesTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 2,
            column: 0,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Data("table has a header but no data rows".into()));
    }
    let has_ts = match timestamps {
        TimestampColumn::Present => true,
        TimestampColumn::Absent => false,
        TimestampColumn::Auto => {
            looks_like_time_header(&header[0])
                || records[0].get(0).is_some_and(|v| v.parse::<f64>().is_err())
        }
    };
    let skip = usize::from(has_ts);
    let channel_names = header[skip..].to_vec();
    if channel_names.is_empty() {
        return Err(Error::Data("table has no value columns".into()));
    }
    let mut values = Vec::with_capacity(records.len() * channel_names.len());
    let mut stamps = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: i + 2,
                column: rec.len() + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        if has_ts {
            stamps.push(rec[0].to_owned());
        }
        for (j, cell) in rec.iter().enumerate().skip(skip) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: i + 2,
                column: j + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: i + 2,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    SeriesTable::new(channel_names, values, has_ts.then_some(stamps))
}

pub fn load_csv(path: impl AsRef<Path>, timestamps: TimestampColumn) -> Result<SeriesTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), timestamps).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes the table; numbers use the shortest representation that parses back exactly.
pub fn write_csv_to<W: Write>(table: &SeriesTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let map = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    let mut header = Vec::with_capacity(table.channels() + 1);
    if table.timestamps.is_some() {
        header.push("date".to_owned());
    }
    header.extend(table.channel_names.iter().cloned());
    w.write_record(&header).map_err(map)?;
    let mut rec = Vec::with_capacity(header.len());
    for r in 0..table.rows() {
        rec.clear();
        if let Some(ts) = &table.timestamps {
            rec.push(ts[r].clone());
        }
        rec.extend(table.row(r).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(map)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))
}

pub fn write_csv(table: &SeriesTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(table, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Data(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// 0.6 / 0.2 / 0.2, the usual layout for ETT files.
    pub const ETT: Self = Self {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };
    /// 0.7 / 0.1 / 0.2
    pub const STANDARD: Self = Self {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };

    /// Picks [`Self::ETT`] for files named `ETT*`, otherwise [`Self::STANDARD`].
    pub fn for_path(path: &Path) -> Self {
        let ett = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.to_ascii_uppercase().starts_with("ETT"));
        if ett {
            Self::ETT
        } else {
            Self::STANDARD
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r) || !r.is_finite()) {
            return Err(Error::Config(format!("split ratios out of range: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Per-channel affine used for optional train-split z-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// One mini-batch: `x: [B, L, C]`, `y: [B, τ, C]`.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
}

/// Stride-1 sliding windows over contiguous train/val/test ranges.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub table: SeriesTable,
    pub lookback: usize,
    pub horizon: usize,
    /// Half-open row ranges per split.
    pub bounds: [(usize, usize); 3],
    pub scaler: Option<ChannelScaler>,
}

pub fn make_windows(
    table: SeriesTable,
    lookback: usize,
    horizon: usize,
    ratios: SplitRatios,
) -> Result<WindowedDataset> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config("lookback and horizon must be positive".into()));
    }
    ratios.validate()?;
    let n = table.rows();
    let train_end = (n as f64 * ratios.train).floor() as usize;
    let val_end = train_end + (n as f64 * ratios.val).floor() as usize;
    let bounds = [(0, train_end), (train_end, val_end), (val_end, n)];
    for split in Split::ALL {
        let (s, e) = bounds[split.index()];
        if e - s < lookback + horizon {
            return Err(Error::Config(format!(
                "{} split has {} rows, needs at least lookback + horizon = {}",
                split.as_str(),
                e - s,
                lookback + horizon
            )));
        }
    }
    Ok(WindowedDataset {
        table,
        lookback,
        horizon,
        bounds,
        scaler: None,
    })
}

/// Number of stride-1 windows in a range of `len` rows.
pub fn window_count(len: usize, lookback: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(lookback + horizon)
}

impl WindowedDataset {
    pub fn channels(&self) -> usize {
        self.table.channels()
    }

    pub fn split_range(&self, split: Split) -> (usize, usize) {
        self.bounds[split.index()]
    }

    pub fn len(&self, split: Split) -> usize {
        let (s, e) = self.split_range(split);
        window_count(e - s, self.lookback, self.horizon)
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    /// First row of window `i` of `split`.
    pub fn window_start(&self, split: Split, i: usize) -> usize {
        self.split_range(split).0 + i
    }

    /// Z-scores every value with statistics of the train range.
    pub fn standardized(mut self) -> Result<Self> {
        let (s, e) = self.split_range(Split::Train);
        let c = self.channels();
        let len = (e - s) as f64;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for r in s..e {
            for (m, v) in mean.iter_mut().zip(self.table.row(r)) {
                *m += v / len;
            }
        }
        for r in s..e {
            for ((sd, m), v) in std.iter_mut().zip(&mean).zip(self.table.row(r)) {
                *sd += (v - m) * (v - m) / len;
            }
        }
        for (ch, sd) in std.iter_mut().enumerate() {
            *sd = sd.sqrt();
            if *sd == 0.0 {
                return Err(Error::Degenerate(format!(
                    "channel {} is constant over the train split",
                    self.table.channel_names[ch]
                )));
            }
        }
        for (i, v) in self.table.values.iter_mut().enumerate() {
            let ch = i % c;
            *v = (*v - mean[ch]) / std[ch];
        }
        self.scaler = Some(ChannelScaler { mean, std });
        Ok(self)
    }

    /// Copies window `i` of `split` into `x` (`L×C`) and `y` (`τ×C`).
    pub fn window_into<T: Real>(&self, split: Split, i: usize, x: &mut [T], y: &mut [T]) {
        let c = self.channels();
        let start = self.window_start(split, i);
        let vals = &self.table.values;
        let xs = &vals[start * c..(start + self.lookback) * c];
        let ys = &vals[(start + self.lookback) * c..(start + self.lookback + self.horizon) * c];
        for (d, &s) in x.iter_mut().zip(xs) {
            *d = T::c(s);
        }
        for (d, &s) in y.iter_mut().zip(ys) {
            *d = T::c(s);
        }
    }

    pub fn batch<T: Real>(&self, split: Split, indices: &[usize]) -> Batch<T> {
        let c = self.channels();
        let (lx, ly) = (self.lookback * c, self.horizon * c);
        let mut x = vec![T::zero(); indices.len() * lx];
        let mut y = vec![T::zero(); indices.len() * ly];
        for (b, &i) in indices.iter().enumerate() {
            self.window_into(split, i, &mut x[b * lx..(b + 1) * lx], &mut y[b * ly..(b + 1) * ly]);
        }
        let b = indices.len();
        Batch {
            x: Tensor::from_parts(vec![b, self.lookback, c], x),
            y: Tensor::from_parts(vec![b, self.horizon, c], y),
        }
    }

    /// Window indices of `split` in a seeded random order.
    pub fn permutation<R: Rng + ?Sized>(&self, split: Split, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len(split)).collect();
        order.shuffle(rng);
        order
    }

    /// Visits batches of `order` in sequence.
    ///
    /// With `threads > 1`, reader `r` assembles batches `r, r + threads, ...` ahead of
    /// the consumer; delivery order is unchanged.
    pub fn for_each_batch<T: Real, F>(
        &self,
        split: Split,
        order: &[usize],
        batch_size: usize,
        threads: usize,
        mut f: F,
    ) -> Result<()>
    where
        F: FnMut(Batch<T>) -> Result<()>,
    {
        let batch_size = batch_size.max(1);
        let chunks: Vec<&[usize]> = order.chunks(batch_size).collect();
        let threads = threads.clamp(1, chunks.len().max(1));
        if threads == 1 {
            for chunk in chunks {
                f(self.batch(split, chunk))?;
            }
            return Ok(());
        }
        std::thread::scope(|scope| {
            let mut receivers = Vec::with_capacity(threads);
            for r in 0..threads {
                let (tx, rx) = mpsc::sync_channel::<Batch<T>>(2);
                receivers.push(rx);
                let chunks = &chunks;
                scope.spawn(move || {
                    for chunk in chunks.iter().skip(r).step_by(threads) {
                        if tx.send(self.batch(split, chunk)).is_err() {
                            break;
                        }
                    }
                });
            }
            for k in 0..chunks.len() {
                let batch = receivers[k % threads]
                    .recv()
                    .map_err(|_| Error::Data("batch reader stopped early".into()))?;
                f(batch)?;
            }
            Ok(())
        })
    }
}

/// Reader threads allowed by `APRNET_THREADS` (default 1).
pub fn reader_threads() -> usize {
    std::env::var("APRNET_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// `a·sin(2π·f·t + p)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub freq: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Multi-frequency series: `x_c(t) = Σ_j a_j·sin(2π f_j t + p_j + drift·t) + N(0, noise_sd)`.
///
/// `components` holds one list per channel, or a single list shared by all channels.
pub fn synth_multifreq(
    len: usize,
    channels: usize,
    components: &[Vec<Component>],
    drift: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<SeriesTable> {
    if len == 0 || channels == 0 {
        return Err(Error::Argument("synthetic series needs len, channels > 0".into()));
    }
    if components.len() != channels && components.len() != 1 {
        return Err(Error::Argument(format!(
            "{} component lists for {channels} channels",
            components.len()
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Argument(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Argument(e.to_string()))?;
    let tau = std::f64::consts::TAU;
    let mut values = Vec::with_capacity(len * channels);
    for t in 0..len {
        let tf = t as f64;
        for c in 0..channels {
            let comps = &components[if components.len() == 1 { 0 } else { c }];
            let clean: f64 = comps
                .iter()
                .map(|k| k.amplitude * (tau * k.freq * tf + k.phase + drift * tf).sin())
                .sum();
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push(clean + eps);
        }
    }
    let names = (0..channels).map(|c| format!("ch{c}")).collect();
    SeriesTable::new(names, values, None)
}

/// Two sinusoids per channel with seeded periods, amplitudes and phases.
pub fn two_sinusoid_components(channels: usize, seed: u64) -> Vec<Vec<Component>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    (0..channels)
        .map(|_| {
            vec![
                Component {
                    freq: 1.0 / rng.gen_range(20.0..40.0),
                    amplitude: rng.gen_range(0.8..1.2),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                },
                Component {
                    freq: 1.0 / rng.gen_range(5.0..12.0),
                    amplitude: rng.gen_range(0.3..0.6),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                },
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: usize, c: usize) -> SeriesTable {
        let names = (0..c).map(|i| format!("c{i}")).collect();
        SeriesTable::new(names, (0..rows * c).map(|v| v as f64).collect(), None).unwrap()
    }

    #[test]
    fn reads_small_file_in_order() {
        let text = "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6.5\n";
        let t = read_csv(text.as_bytes(), TimestampColumn::Auto).unwrap();
        assert_eq!(t.rows(), 3);
        assert_eq!(t.channel_names, ["a", "b"]);
        assert_eq!(t.values, [1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        assert_eq!(t.timestamps.as_ref().unwrap()[2], "2020-01-03");
    }

    #[test]
    fn header_only_is_error() {
        assert!(matches!(
            read_csv("a,b\n".as_bytes(), TimestampColumn::Auto),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn parse_error_reports_position() {
        let err = read_csv("a,b\n1,2\n3,x\n".as_bytes(), TimestampColumn::Absent).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn numeric_first_column_is_a_channel() {
        let t = read_csv("a,b\n1,2\n".as_bytes(), TimestampColumn::Auto).unwrap();
        assert!(t.timestamps.is_none());
        assert_eq!(t.channels(), 2);
    }

    #[test]
    fn window_count_single_split() {
        assert_eq!(window_count(10, 3, 2), 6);
        assert_eq!(window_count(4, 3, 2), 0);
    }

    #[test]
    fn too_short_split_names_it() {
        let err = make_windows(table(5, 1), 3, 3, SplitRatios::STANDARD).unwrap_err();
        assert!(err.to_string().contains("train"));
        let err = make_windows(table(40, 1), 3, 2, SplitRatios::STANDARD).unwrap_err();
        assert!(err.to_string().contains("val split"), "{err}");
    }

    #[test]
    fn windows_stay_inside_split() {
        let ds = make_windows(table(100, 2), 5, 3, SplitRatios::STANDARD).unwrap();
        for split in Split::ALL {
            let (s, e) = ds.split_range(split);
            let n = ds.len(split);
            assert_eq!(n, e - s - 8 + 1);
            let last = ds.window_start(split, n - 1);
            assert!(last >= s && last + 8 <= e);
        }
        let b = ds.batch::<f64>(Split::Val, &[0]);
        assert_eq!(b.x.data()[0], 140.0);
        assert_eq!(b.y.data()[0], 150.0);
    }

    #[test]
    fn threaded_batches_match_inline() {
        let ds = make_windows(table(200, 3), 8, 4, SplitRatios::STANDARD).unwrap();
        let order = ds.permutation(Split::Train, &mut ChaCha8Rng::seed_from_u64(1));
        let collect = |threads| {
            let mut out = Vec::new();
            ds.for_each_batch::<f32, _>(Split::Train, &order, 7, threads, |b| {
                out.extend_from_slice(b.x.data());
                Ok(())
            })
            .unwrap();
            out
        };
        assert_eq!(collect(1), collect(3));
    }

    #[test]
    fn synthetic_single_component_is_exact() {
        let comp = vec![vec![Component {
            freq: 0.1,
            amplitude: 2.0,
            phase: 0.3,
        }]];
        let t = synth_multifreq(50, 1, &comp, 0.0, 0.0, 7).unwrap();
        for (i, v) in t.values.iter().enumerate() {
            let want = 2.0 * (std::f64::consts::TAU * 0.1 * i as f64 + 0.3).sin();
            assert_eq!(*v, want);
        }
    }
}
