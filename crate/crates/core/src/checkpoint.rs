//! Binary checkpoints.
//!
//! Layout (little-endian): magic `APRNETCK`, `u32` version, `u32` record count, then
//! per record `u32` name length, UTF-8 name, `u32` rank, `rank × u32` extents and
//! the `f32` values. Model configuration lives in rank-0 `meta.*` records and
//! optimizer moments in `adam.*` records.

use std::io::{Read, Write};
use std::path::Path;

use crate::aplc::GateActivation;
use crate::error::{Error, Result};
use crate::kan::CoreKind;
use crate::model::{AprnetModel, ModelConfig};
use crate::optim::Adam;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"APRNETCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Record {
    fn scalar(name: &str, v: f64) -> Self {
        Self {
            name: name.to_owned(),
            shape: vec![],
            values: vec![v as f32],
        }
    }
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AprnetModel<f32>,
    pub optim: Option<Adam<f32>>,
    pub best_val_loss: Option<f64>,
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
        for &e in &r.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in &r.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_records(buf: &[u8]) -> Result<Vec<Record>> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing APRNETCK magic".into()));
    }
    let mut cur = Cursor {
        buf,
        pos: MAGIC.len(),
    };
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = cur.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Corrupt("record name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = cur.take(n.saturating_mul(4), &name)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record {
            name,
            shape,
            values,
        });
    }
    if cur.pos != buf.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(records)
}

fn meta_records(cfg: &ModelConfig) -> Vec<Record> {
    let a = &cfg.aplc;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let core = CoreKind::ALL.iter().position(|&k| k == a.core).unwrap_or(0) as f64;
    let gate = match a.gate {
        GateActivation::Sigmoid => 0.0,
        GateActivation::Softmax => 1.0,
    };
    [
        ("meta.lookback", cfg.lookback as f64),
        ("meta.horizon", cfg.horizon as f64),
        ("meta.channels", cfg.channels as f64),
        ("meta.latent_dim", cfg.latent_dim as f64),
        ("meta.norm_eps", cfg.norm_eps),
        ("meta.gamma_floor", cfg.gamma_floor),
        ("meta.layer_norm_eps", cfg.layer_norm_eps),
        ("meta.seq_enabled", flag(a.seq_enabled)),
        ("meta.chan_enabled", flag(a.chan_enabled)),
        ("meta.amp_enabled", flag(a.amp_enabled)),
        ("meta.phase_enabled", flag(a.phase_enabled)),
        ("meta.klc", core),
        ("meta.conv_kernel", a.conv_kernel as f64),
        ("meta.gate", gate),
        ("meta.gate_init", a.gate_init),
        ("meta.kan.grid_intervals", a.kan.grid_intervals as f64),
        ("meta.kan.degree", a.kan.degree as f64),
        ("meta.kan.lo", a.kan.range.0),
        ("meta.kan.hi", a.kan.range.1),
        ("meta.kan.squash", flag(a.kan.squash)),
        ("meta.kan.residual", flag(a.kan.residual)),
        ("meta.kan.coeff_init_scale", a.kan.coeff_init_scale),
    ]
    .into_iter()
    .map(|(n, v)| Record::scalar(n, v))
    .collect()
}

/// Recovers the decimal a configuration value was written from (`1e-5` rather than
/// the nearest `f32` widened to `f64`).
fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

fn config_from_meta(records: &[Record]) -> Result<ModelConfig> {
    let get = |name: &str| -> Result<f64> {
        records
            .iter()
            .find(|r| r.name == name)
            .and_then(|r| r.values.first())
            .map(|&v| widen(v))
            .ok_or_else(|| Error::Format(format!("missing {name} record")))
    };
    let count = |name: &str| -> Result<usize> {
        let v = get(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Corrupt(format!("{name} = {v} is not a count")));
        }
        Ok(v as usize)
    };
    let flag = |name: &str| get(name).map(|v| v != 0.0);
    let mut cfg = ModelConfig::new(
        count("meta.lookback")?,
        count("meta.horizon")?,
        count("meta.channels")?,
        count("meta.latent_dim")?,
    );
    cfg.norm_eps = get("meta.norm_eps")?;
    cfg.gamma_floor = get("meta.gamma_floor")?;
    cfg.layer_norm_eps = get("meta.layer_norm_eps")?;
    let a = &mut cfg.aplc;
    a.seq_enabled = flag("meta.seq_enabled")?;
    a.chan_enabled = flag("meta.chan_enabled")?;
    a.amp_enabled = flag("meta.amp_enabled")?;
    a.phase_enabled = flag("meta.phase_enabled")?;
    a.core = *CoreKind::ALL
        .get(count("meta.klc")?)
        .ok_or_else(|| Error::Corrupt("unknown core kind".into()))?;
    a.conv_kernel = count("meta.conv_kernel")?;
    a.gate = if flag("meta.gate")? {
        GateActivation::Softmax
    } else {
        GateActivation::Sigmoid
    };
    a.gate_init = get("meta.gate_init")?;
    a.kan.grid_intervals = count("meta.kan.grid_intervals")?;
    a.kan.degree = count("meta.kan.degree")?;
    a.kan.range = (get("meta.kan.lo")?, get("meta.kan.hi")?);
    a.kan.squash = flag("meta.kan.squash")?;
    a.kan.residual = flag("meta.kan.residual")?;
    a.kan.coeff_init_scale = get("meta.kan.coeff_init_scale")?;
    Ok(cfg)
}

/// Serializes a model, optional optimizer state and best validation loss.
pub fn to_records<T: Real>(
    model: &AprnetModel<T>,
    optim: Option<&Adam<T>>,
    best_val_loss: Option<f64>,
) -> Vec<Record> {
    let mut out = meta_records(&model.config);
    if let Some(v) = best_val_loss {
        out.push(Record::scalar("meta.best_val_loss", v));
    }
    let f32s = |xs: &[T]| xs.iter().map(|v| v.as_f64() as f32).collect::<Vec<_>>();
    for (_, p) in model.params.iter() {
        out.push(Record {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            values: f32s(p.tensor.data()),
        });
    }
    if let Some(opt) = optim {
        out.push(Record::scalar("adam.step", opt.step_count as f64));
        for (id, p) in model.params.iter() {
            let k = id.index();
            for (prefix, moments) in [("adam.m.", &opt.m[k]), ("adam.v.", &opt.v[k])] {
                out.push(Record {
                    name: format!("{prefix}{}", p.name),
                    shape: p.tensor.shape().to_vec(),
                    values: f32s(moments),
                });
            }
        }
    }
    out
}

pub fn from_records(records: &[Record]) -> Result<Checkpoint> {
    let config = config_from_meta(records)?;
    let mut model = AprnetModel::<f32>::new(config, 0)?;
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        let name = model.params.name(id).to_owned();
        let rec = find(&name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
        let t = model.params.get_mut(id);
        if rec.shape != t.shape() {
            return Err(Error::Format(format!(
                "parameter {name} has shape {:?}, model expects {:?}",
                rec.shape,
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&rec.values);
    }
    let optim = match find("adam.step") {
        None => None,
        Some(step) => {
            let mut opt = Adam::new(&model.params, 1e-3);
            opt.step_count = step.values[0] as u64;
            for &id in &ids {
                let name = model.params.name(id);
                for (prefix, dst) in [("adam.m.", &mut opt.m), ("adam.v.", &mut opt.v)] {
                    let rec = find(&format!("{prefix}{name}"))
                        .ok_or_else(|| Error::Format(format!("missing {prefix}{name}")))?;
                    if rec.values.len() != dst[id.index()].len() {
                        return Err(Error::Format(format!("{prefix}{name} has wrong length")));
                    }
                    dst[id.index()].copy_from_slice(&rec.values);
                }
            }
            Some(opt)
        }
    };
    let best_val_loss = find("meta.best_val_loss").map(|r| r.values[0] as f64);
    Ok(Checkpoint {
        model,
        optim,
        best_val_loss,
    })
}

/// Writes through a sibling temporary file so a failed write leaves any old file intact.
pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    model: &AprnetModel<T>,
    optim: Option<&Adam<T>>,
    best_val_loss: Option<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let records = to_records(model, optim, best_val_loss);
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let file = std::fs::File::create(&tmp)?;
        write_records(std::io::BufWriter::new(file), &records)?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    from_records(&parse_records(&buf)?)
}

/// Reads a single named tensor out of a checkpoint file.
pub fn read_tensor(path: impl AsRef<Path>, name: &str) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let rec = parse_records(&buf)?
        .into_iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Format(format!("no record named {name}")))?;
    if rec.shape.is_empty() {
        return Ok(Tensor::scalar(rec.values[0]));
    }
    Tensor::new(&rec.shape, rec.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AprnetModel<f32> {
        AprnetModel::new(ModelConfig::new(8, 3, 2, 4), 3).unwrap()
    }

    fn bytes(m: &AprnetModel<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_records(&mut buf, &to_records(m, None, Some(0.25))).unwrap();
        buf
    }

    #[test]
    fn round_trip_parameters() {
        let m = small();
        let ck = from_records(&parse_records(&bytes(&m)).unwrap()).unwrap();
        for ((_, a), (_, b)) in m.params.iter().zip(ck.model.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
        assert_eq!(ck.model.config, m.config);
        assert_eq!(ck.best_val_loss, Some(0.25));
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut buf = bytes(&small());
        buf[0] = b'X';
        assert!(matches!(parse_records(&buf), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_format_error() {
        let mut buf = bytes(&small());
        buf[8] = 9;
        assert!(matches!(parse_records(&buf), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_corruption() {
        let buf = bytes(&small());
        for cut in [12, 20, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(parse_records(&buf[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
    }
}
