//! Parameter snapshot container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "HRRLSNAP"
//! version    u32       1
//! header_len u32
//! header     UTF-8     `key=value` lines: arch, input_dim, classes,
//!                      [width, activation], config_hash, seed
//! n_arrays   u32
//! per array: name_len u32, name bytes, count u64, count × f64 (IEEE-754 LE)
//! ```
//!
//! Arrays are `hidden.weight`, `hidden.bias` (hidden arch only),
//! `classifier.weight`, `classifier.bias`. Values are stored as raw bits, so a
//! write/read cycle is bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, Arch, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HRRLSNAP";
const VERSION: u32 = 1;

/// Provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnapshotMeta {
    pub config_hash: String,
    pub seed: u64,
}

fn header_text(arch: &Arch, meta: &SnapshotMeta) -> String {
    let mut s = String::new();
    match *arch {
        Arch::Linear { input_dim, classes } => {
            s.push_str(&format!(
                "arch=linear\ninput_dim={input_dim}\nclasses={classes}\n"
            ));
        }
        Arch::Hidden {
            input_dim,
            width,
            classes,
            activation,
        } => {
            s.push_str(&format!(
                "arch=hidden\ninput_dim={input_dim}\nwidth={width}\nclasses={classes}\nactivation={}\n",
                activation.name()
            ));
        }
    }
    s.push_str(&format!(
        "config_hash={}\nseed={}\n",
        meta.config_hash, meta.seed
    ));
    s
}

fn split_arrays(params: &ModelParams) -> Vec<(&'static str, &[f64])> {
    let arch = params.arch;
    let mut out = Vec::new();
    if let Arch::Hidden {
        input_dim, width, ..
    } = arch
    {
        let (w, b) = params.delta.split_at(width * input_dim);
        out.push(("hidden.weight", w));
        out.push(("hidden.bias", b));
    }
    let (w, b) = params.omega.split_at(arch.classes() * arch.feature_dim());
    out.push(("classifier.weight", w));
    out.push(("classifier.bias", b));
    out
}

pub fn encode_snapshot(params: &ModelParams, meta: &SnapshotMeta) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let header = header_text(&params.arch, meta);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    let arrays = split_arrays(params);
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, values) in arrays {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Snapshot(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(ModelParams, SnapshotMeta)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let header_len = cur.u32()? as usize;
    let header = std::str::from_utf8(cur.take(header_len)?)
        .map_err(|_| Error::Snapshot("header is not UTF-8".into()))?;
    let mut fields = BTreeMap::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Snapshot(format!("malformed header line `{line}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Snapshot(format!("header missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Snapshot(format!("header `{k}` is not an integer")))
    };
    let arch = match get("arch")? {
        "linear" => Arch::Linear {
            input_dim: num("input_dim")?,
            classes: num("classes")?,
        },
        "hidden" => Arch::Hidden {
            input_dim: num("input_dim")?,
            width: num("width")?,
            classes: num("classes")?,
            activation: get("activation")?.parse::<Activation>()?,
        },
        other => return Err(Error::Snapshot(format!("unknown arch `{other}`"))),
    };
    let meta = SnapshotMeta {
        config_hash: get("config_hash").unwrap_or("").to_string(),
        seed: get("seed").ok().and_then(|s| s.parse().ok()).unwrap_or(0),
    };

    let n_arrays = cur.u32()? as usize;
    let mut arrays = BTreeMap::new();
    for _ in 0..n_arrays {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Snapshot("array name is not UTF-8".into()))?
            .to_string();
        let count = cur.u64()? as usize;
        let raw = cur.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Snapshot("array too large".into()))?,
        )?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        arrays.insert(name, values);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Snapshot("trailing bytes after last array".into()));
    }
    let mut take = |name: &str| -> Result<Vec<f64>> {
        arrays
            .remove(name)
            .ok_or_else(|| Error::Snapshot(format!("missing array `{name}`")))
    };
    let mut delta = Vec::new();
    if matches!(arch, Arch::Hidden { .. }) {
        delta.extend(take("hidden.weight")?);
        delta.extend(take("hidden.bias")?);
    }
    let mut omega = take("classifier.weight")?;
    omega.extend(take("classifier.bias")?);
    if let Some(extra) = arrays.keys().next() {
        return Err(Error::Snapshot(format!("unexpected array `{extra}`")));
    }
    let params =
        ModelParams::new(arch, delta, omega).map_err(|e| Error::Snapshot(e.to_string()))?;
    Ok((params, meta))
}

pub fn write_snapshot(path: &Path, params: &ModelParams, meta: &SnapshotMeta) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_snapshot(params, meta))
        .map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<(ModelParams, SnapshotMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}
