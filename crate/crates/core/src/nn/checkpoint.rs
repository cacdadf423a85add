//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "SCNN" | version u8 | record count u16 |
//!   { name_len u16 | name | rank u8 | dims u32 * rank | values f32 * prod(dims) } *
//! ```
//!
//! The first record, `arch`, carries the layout as small integers so a file
//! is self-describing: `[input_h, input_w, hidden, classes, (out_channels,
//! pool)*]`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{ConvSpec, Model, ModelSpec};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCNN";
pub const VERSION: u8 = 1;
const ARCH: &str = "arch";

fn push_record(out: &mut Vec<u8>, name: &str, shape: &[usize], values: impl Iterator<Item = f32>) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend((d as u32).to_le_bytes());
    }
    for v in values {
        out.extend(v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.push(VERSION);
    out.extend(((model.params().len() + 1) as u16).to_le_bytes());

    let mut arch = vec![spec.input_h, spec.input_w, spec.hidden, spec.classes];
    for c in &spec.convs {
        arch.push(c.out_channels);
        arch.push(c.pool as usize);
    }
    push_record(&mut out, ARCH, &[arch.len()], arch.iter().map(|&v| v as f32));
    for (name, p) in spec.param_names().iter().zip(model.params()) {
        push_record(&mut out, name, p.shape(), p.data().iter().map(|&v| v as f32));
    }
    out
}

/// Hex SHA-256 of the checkpoint encoding.
pub fn fingerprint(model: &Model) -> String {
    let digest = Sha256::digest(checkpoint_bytes(model));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint {
                offset: self.pos,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

struct Record {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    offset: usize,
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            msg: "bad magic, expected \"SCNN\"".into(),
        });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = r.u16("record count")? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|_| Error::Checkpoint {
            offset,
            msg: "record name is not UTF-8".into(),
        })?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint {
            offset,
            msg: "record too large".into(),
        })?, &format!("values of {name}"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        records.push(Record { name, shape, values, offset });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            offset: r.pos,
            msg: "trailing bytes after last record".into(),
        });
    }

    let mut it = records.into_iter();
    let arch = it.next().filter(|a| a.name == ARCH).ok_or_else(|| Error::Checkpoint {
        offset: 7,
        msg: "first record must be the architecture".into(),
    })?;
    let a: Vec<usize> = arch.values.iter().map(|&v| v as usize).collect();
    if a.len() < 6 || !a.len().is_multiple_of(2) {
        return Err(Error::Checkpoint {
            offset: arch.offset,
            msg: "malformed architecture record".into(),
        });
    }
    let spec = ModelSpec {
        input_h: a[0],
        input_w: a[1],
        hidden: a[2],
        classes: a[3],
        convs: a[4..]
            .chunks_exact(2)
            .map(|c| ConvSpec { out_channels: c[0], pool: c[1] != 0 })
            .collect(),
    };
    spec.validate().map_err(|e| Error::Checkpoint {
        offset: arch.offset,
        msg: e.to_string(),
    })?;

    let names = spec.param_names();
    let shapes = spec.param_shapes();
    let mut params = Vec::with_capacity(names.len());
    for (name, shape) in names.iter().zip(&shapes) {
        let rec = it.next().ok_or_else(|| Error::Checkpoint {
            offset: bytes.len(),
            msg: format!("missing record {name}"),
        })?;
        if &rec.name != name || &rec.shape != shape {
            return Err(Error::Checkpoint {
                offset: rec.offset,
                msg: format!("expected {name} {shape:?}, found {} {:?}", rec.name, rec.shape),
            });
        }
        params.push(Tensor::new(rec.shape, rec.values)?);
    }
    if let Some(extra) = it.next() {
        return Err(Error::Checkpoint {
            offset: extra.offset,
            msg: format!("unexpected record {}", extra.name),
        });
    }
    Model::from_params(spec, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::Setup(format!("cannot read checkpoint {}: {e}", path.display())))?;
    model_from_bytes(&bytes)
}
