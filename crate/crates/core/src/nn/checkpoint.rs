//! Text checkpoint format, version 1.
//!
//! ```text
//! commlab-checkpoint 1
//! meta <key> <value>
//! ...
//! tensor <key> <rank> <d0> <d1> ...
//! <row-major values separated by spaces>
//! ...
//! end
//! ```
//!
//! Keys are `section/layer/path` strings without whitespace. Values are
//! written with Rust's shortest round-trip formatting, so save then load is
//! bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &str = "commlab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    /// Adds every entry of `store` under `section/`.
    pub fn put_store(&mut self, section: &str, store: &ParamStore) {
        for (_, name, t) in store.iter() {
            self.tensors.insert(format!("{section}/{name}"), t.clone());
        }
    }

    /// Overwrites `store` from the entries under `section/`; every parameter
    /// must be present with a matching shape.
    pub fn restore_store(&self, section: &str, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let key = format!("{section}/{}", store.name(id));
            let t = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            store
                .set(id, t.clone())
                .map_err(|e| Error::Checkpoint(format!("{key}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (k, t) in &self.tensors {
            let _ = write!(out, "tensor {k} {}", t.shape().len());
            for d in t.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let vals: Vec<String> = t.data().iter().map(|v| v.to_string()).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: &str| Error::Checkpoint(format!("line {}: {reason}", line + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) => {
                let mut parts = header.split_whitespace();
                if parts.next() != Some(MAGIC) {
                    return Err(bad(0, "not a checkpoint file"));
                }
                let version: u32 = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(0, "missing version"))?;
                if version != VERSION {
                    return Err(bad(0, &format!("unsupported version {version}")));
                }
            }
            None => return Err(bad(0, "empty file")),
        }
        let mut ckpt = Checkpoint::new();
        while let Some((n, line)) = lines.next() {
            if line == "end" {
                return Ok(ckpt);
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_whitespace();
                let key = parts.next().ok_or_else(|| bad(n, "missing key"))?;
                let rank: usize = parts
                    .next()
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(|| bad(n, "bad rank"))?;
                let shape = parts
                    .map(|d| d.parse::<usize>().map_err(|_| bad(n, "bad extent")))
                    .collect::<Result<Vec<_>>>()?;
                if shape.len() != rank {
                    return Err(bad(n, "rank does not match extents"));
                }
                let (vn, values) = lines.next().ok_or_else(|| bad(n, "missing values"))?;
                let data = values
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(vn, "bad value")))
                    .collect::<Result<Vec<_>>>()?;
                let t = Tensor::new(shape, data).map_err(|e| bad(vn, &e.to_string()))?;
                ckpt.tensors.insert(key.to_string(), t);
            } else {
                return Err(bad(n, "unrecognized record"));
            }
        }
        Err(Error::Checkpoint("truncated file (no end marker)".into()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }
}
