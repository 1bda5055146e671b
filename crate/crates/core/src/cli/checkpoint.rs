//! Binary checkpoint container.
//!
//! ```text
//! "RACD" | version: u32 | count: u64 | count × record | trailer_len: u64 | trailer
//! record  = name_len: u64 | name | rank: u64 | rank × dim: u64 | Π dims × f64
//! ```
//!
//! All integers and floats are little-endian. Record names are
//! `param:<name>`, `buffer:<name>`, `opt.first:<name>` and
//! `opt.second:<name>`; the trailer is JSON holding the run configuration
//! and optimizer hyper-state.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::nn::ParamStore;
use crate::optim::{OptimState, OptimizerKind};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RACD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub store: ParamStore,
    pub optimizer: Option<OptimState>,
    pub config: RunConfig,
}

#[derive(Serialize, Deserialize)]
struct OptimMeta {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    config: RunConfig,
    optimizer: Option<OptimMeta>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u64(out, name.len() as u64);
    out.extend_from_slice(name.as_bytes());
    put_u64(out, shape.len() as u64);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("{what} {v} exceeds file size")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records: Vec<(String, &[usize], &[f64])> = Vec::new();
        for (name, t) in self.store.params() {
            records.push((format!("param:{name}"), t.shape(), t.data()));
        }
        for (name, t) in self.store.buffers() {
            records.push((format!("buffer:{name}"), t.shape(), t.data()));
        }
        let lens: BTreeMap<&String, [usize; 1]> = self
            .optimizer
            .iter()
            .flat_map(|o| o.first.iter().chain(&o.second))
            .map(|(k, v)| (k, [v.len()]))
            .collect();
        if let Some(o) = &self.optimizer {
            for (tag, map) in [("opt.first", &o.first), ("opt.second", &o.second)] {
                for (name, v) in map {
                    records.push((format!("{tag}:{name}"), &lens[name][..], v));
                }
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u64(&mut out, records.len() as u64);
        for (name, shape, data) in &records {
            put_record(&mut out, name, shape, data);
        }
        let trailer = Trailer {
            config: self.config.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimMeta {
                kind: o.kind,
                lr: o.lr,
                step: o.step,
            }),
        };
        let json = serde_json::to_vec(&trailer).expect("trailer serializes");
        put_u64(&mut out, json.len() as u64);
        out.extend_from_slice(&json);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let count = r.len("record count")?;
        let mut store = ParamStore::new();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for _ in 0..count {
            let n = r.len("name length")?;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
                .to_string();
            let rank = r.len("rank")?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len("dimension")?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l <= bytes.len() / 8)
                .ok_or_else(|| Error::Checkpoint(format!("record {name} is too large")))?;
            let raw = r.take(len * 8, "payload")?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let (tag, key) = name
                .split_once(':')
                .ok_or_else(|| Error::Checkpoint(format!("record name {name:?} has no tag")))?;
            match tag {
                "param" => store.insert_param(key, Tensor::from_vec(&shape, data)?),
                "buffer" => store.insert_buffer(key, Tensor::from_vec(&shape, data)?),
                "opt.first" => {
                    first.insert(key.to_string(), data);
                }
                "opt.second" => {
                    second.insert(key.to_string(), data);
                }
                _ => return Err(Error::Checkpoint(format!("unknown record tag {tag:?}"))),
            }
        }
        let n = r.len("trailer length")?;
        let trailer: Trailer = serde_json::from_slice(r.take(n, "trailer")?)
            .map_err(|e| Error::Checkpoint(format!("invalid trailer: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let optimizer = trailer.optimizer.map(|m| OptimState {
            kind: m.kind,
            lr: m.lr,
            step: m.step,
            first,
            second,
        });
        Ok(Checkpoint {
            store,
            optimizer,
            config: trailer.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Rejects checkpoints whose tensors disagree in shape with `template`,
    /// or that lack any of its parameters.
    pub fn check_against(&self, template: &ParamStore) -> Result<()> {
        for (name, t) in template.params() {
            let got = self
                .store
                .param(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        for (name, t) in template.buffers() {
            match self.store.buffer(name) {
                Some(got) if got.shape() == t.shape() => {}
                _ => return Err(Error::Checkpoint(format!("missing or mis-shaped buffer {name}"))),
            }
        }
        Ok(())
    }
}
