//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "UNCD"                      magic
//! u32                         format version
//! u32 + bytes                 UTF-8 config block, one `key=value` per line
//! u32                         record count
//! repeated:
//!   u32 + bytes               UTF-8 parameter name
//!   u32                       rank
//!   u32 × rank                dims
//!   f32 × Π dims              payload
//! ```
//!
//! Config keys: `input_size`, `input_channels`, `num_classes`,
//! `base_channels`, `levels`, `leaky_slope`, `bn_momentum`, `bn_epsilon`, and
//! zero or more `history=epoch,train_loss,holdout_accuracy` lines (accuracy
//! `-` when absent). Records cover every model parameter and running
//! statistic plus `input_norm.mean` and `input_norm.std`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::train::EpochRecord;
use crate::error::{Error, Result};
use crate::synthdata::NormalizationStats;
use crate::unet::{UNetConfig, UNetModel};

const MAGIC: &[u8; 4] = b"UNCD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: UNetModel,
    pub history: Vec<EpochRecord>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    put_u32(out, b.len())?;
    out.extend_from_slice(b);
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    put_bytes(out, name.as_bytes())?;
    put_u32(out, dims.len())?;
    for &d in dims {
        put_u32(out, d)?;
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn config_block(model: &UNetModel, history: &[EpochRecord]) -> String {
    let c = &model.config;
    let bn = &model.encoder[0].first.bn;
    let mut s = format!(
        "input_size={}\ninput_channels={}\nnum_classes={}\nbase_channels={}\nlevels={}\nleaky_slope={}\nbn_momentum={}\nbn_epsilon={}\n",
        c.input_size, c.input_channels, c.num_classes, c.base_channels, c.levels, c.leaky_slope, bn.momentum, bn.epsilon
    );
    for h in history {
        let acc = h.holdout_accuracy.map_or("-".to_string(), |a| a.to_string());
        s.push_str(&format!("history={},{},{}\n", h.epoch, h.train_loss, acc));
    }
    s
}

/// Serializes a model and its training history.
pub fn write_checkpoint(model: &UNetModel, history: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_bytes(&mut out, config_block(model, history).as_bytes())?;
    let params = model.params();
    put_u32(&mut out, params.len() + 2)?;
    for p in &params {
        put_record(&mut out, &p.name, &p.dims, p.data)?;
    }
    let n = model.norm.channels();
    put_record(&mut out, "input_norm.mean", &[n], &model.norm.mean)?;
    put_record(&mut out, "input_norm.std", &[n], &model.norm.std)?;
    Ok(out)
}

pub fn save_checkpoint(model: &UNetModel, history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(model, history)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("non-UTF-8 string in checkpoint".into()))
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Format(format!("bad value {v:?} for checkpoint key {key}")))
}

fn parse_history(v: &str) -> Result<EpochRecord> {
    let f: Vec<&str> = v.split(',').collect();
    if f.len() != 3 {
        return Err(Error::Format(format!("bad history line {v:?}")));
    }
    Ok(EpochRecord {
        epoch: parse("history", f[0])?,
        train_loss: parse("history", f[1])?,
        holdout_accuracy: if f[2] == "-" { None } else { Some(parse("history", f[2])?) },
    })
}

/// Parses a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let block = r.string()?;
    let mut kv = HashMap::new();
    let mut history = Vec::new();
    for line in block.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
        if k == "history" {
            history.push(parse_history(v)?);
        } else {
            kv.insert(k, v);
        }
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Format(format!("missing config key {k}")));
    let config = UNetConfig {
        input_size: parse("input_size", get("input_size")?)?,
        input_channels: parse("input_channels", get("input_channels")?)?,
        num_classes: parse("num_classes", get("num_classes")?)?,
        base_channels: parse("base_channels", get("base_channels")?)?,
        levels: parse("levels", get("levels")?)?,
        leaky_slope: parse("leaky_slope", get("leaky_slope")?)?,
    };
    let momentum: f32 = parse("bn_momentum", get("bn_momentum")?)?;
    let epsilon: f32 = parse("bn_epsilon", get("bn_epsilon")?)?;
    let mut model = UNetModel::init(config, 0).map_err(|e| Error::Format(format!("invalid stored config: {e}")))?;
    for level in &mut model.encoder {
        for b in [&mut level.first, &mut level.second] {
            b.bn.momentum = momentum;
            b.bn.epsilon = epsilon;
        }
    }
    for level in &mut model.decoder {
        for b in [&mut level.up, &mut level.first, &mut level.second] {
            b.bn.momentum = momentum;
            b.bn.epsilon = epsilon;
        }
    }

    let count = r.u32()?;
    let mut records: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("record {name} is too large")))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Format(format!("record {name} is too large")))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if records.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::Format(format!("duplicate record {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }

    let mut take = |name: &str, dims: &[usize]| -> Result<Vec<f32>> {
        let (d, data) = records
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing record {name}")))?;
        if d != dims {
            return Err(Error::Format(format!("record {name} has dims {d:?}, expected {dims:?}")));
        }
        Ok(data)
    };
    for p in model.params_mut() {
        let data = take(&p.name, &p.dims)?;
        p.data.copy_from_slice(&data);
    }
    let n = model.config.input_channels;
    model.norm = NormalizationStats {
        mean: take("input_norm.mean", &[n])?,
        std: take("input_norm.std", &[n])?,
    };
    model
        .norm
        .validate()
        .map_err(|e| Error::Format(format!("stored normalization: {e}")))?;
    if let Some(extra) = records.keys().next() {
        return Err(Error::Format(format!("unknown record {extra}")));
    }
    Ok(Checkpoint { model, history })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed_model() -> UNetModel {
        let mut m = UNetModel::init(UNetConfig::new(32, 4), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in m.params_mut() {
            for v in p.data.iter_mut() {
                *v += rng.gen_range(0.0..0.5);
            }
        }
        m.norm = NormalizationStats {
            mean: vec![101.25, 99.0, 80.5],
            std: vec![30.0, 31.5, 29.75],
        };
        m
    }

    fn history() -> Vec<EpochRecord> {
        vec![
            EpochRecord { epoch: 1, train_loss: 0.912345678901, holdout_accuracy: Some(0.61) },
            EpochRecord { epoch: 2, train_loss: 0.5, holdout_accuracy: None },
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let m = perturbed_model();
        let bytes = write_checkpoint(&m, &history()).unwrap();
        let c = read_checkpoint(&bytes).unwrap();
        assert_eq!(c.model, m);
        assert_eq!(c.history, history());
        let x = Tensor::from_fn([1, 3, 32, 32], |_, c, h, w| ((c * 7 + h * 3 + w) % 11) as f32 / 11.0);
        assert!(c.model.segment(&x).unwrap().bitwise_eq(&m.segment(&x).unwrap()));
        assert_eq!(write_checkpoint(&c.model, &c.history).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_corruption_are_format_errors() {
        let bytes = write_checkpoint(&perturbed_model(), &[]).unwrap();
        for cut in [0, 3, 8, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(&extra), Err(Error::Format(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(read_checkpoint(&magic), Err(Error::Format(_))));
    }

    #[test]
    fn other_versions_are_refused() {
        let mut bytes = write_checkpoint(&perturbed_model(), &[]).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = read_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.uncd");
        let m = perturbed_model();
        save_checkpoint(&m, &[], &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap().model, m);
    }
}
