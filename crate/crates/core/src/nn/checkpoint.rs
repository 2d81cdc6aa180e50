//! Text checkpoint container.
//!
//! ```text
//! ykrl-checkpoint v1
//! meta <key> <value>                  (zero or more)
//! param <name> <rows> <cols>          (one per tensor)
//! <rows*cols values, row-major, whitespace separated>
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! write/read cycle reproduces every tensor bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::nn::{Parameterized, Tensor};

pub const CHECKPOINT_MAGIC: &str = "ykrl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &impl Parameterized) -> Self {
        let params = model
            .param_names()
            .into_iter()
            .zip(model.params().into_iter().cloned())
            .collect();
        Self {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_owned(), value.to_string());
        self
    }

    /// Copies stored tensors into `model`, matching names and shapes.
    pub fn load_into(&self, model: &mut impl Parameterized) -> Result<()> {
        let names = model.param_names();
        if names.len() != self.params.len() {
            return Err(Error::shape("checkpoint tensor count", names.len(), self.params.len()));
        }
        for ((name, (stored_name, stored)), dst) in names
            .iter()
            .zip(&self.params)
            .zip(model.params_mut())
        {
            if name != stored_name || dst.shape() != stored.shape() {
                return Err(Error::Format {
                    what: "checkpoint",
                    reason: format!(
                        "expected {name} {:?}, found {stored_name} {:?}",
                        dst.shape(),
                        stored.shape()
                    ),
                });
            }
            *dst = stored.clone();
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.params {
            let _ = writeln!(out, "param {name} {} {}", t.rows(), t.cols());
            for row in 0..t.rows() {
                let line: Vec<String> = (0..t.cols()).map(|c| format!("{}", t.get(row, c))).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_text().as_bytes())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "checkpoint",
            reason,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let expected = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        if header.trim() != expected {
            return Err(bad(format!("unsupported header {header:?}")));
        }

        let mut ckpt = Checkpoint::default();
        let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some((name, rows, cols, values)) = pending.as_mut() {
                for tok in trimmed.split_whitespace() {
                    values.push(tok.parse().map_err(|_| bad(format!("bad value {tok:?}")))?);
                }
                if values.len() >= *rows * *cols {
                    if values.len() > *rows * *cols {
                        return Err(bad(format!("too many values for {name}")));
                    }
                    let (name, rows, cols, values) = pending.take().unwrap();
                    ckpt.params.push((name, Tensor::from_vec(rows, cols, values)));
                }
                continue;
            }
            let mut toks = trimmed.split_whitespace();
            match toks.next() {
                Some("meta") => {
                    let key = toks.next().ok_or_else(|| bad("meta without key".into()))?;
                    let value = toks.collect::<Vec<_>>().join(" ");
                    ckpt.meta.insert(key.to_owned(), value);
                }
                Some("param") => {
                    let name = toks.next().ok_or_else(|| bad("param without name".into()))?;
                    let mut dim = || -> Result<usize> {
                        toks.next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| bad(format!("bad shape for {name}")))
                    };
                    let (rows, cols) = (dim()?, dim()?);
                    if rows * cols == 0 {
                        ckpt.params.push((name.to_owned(), Tensor::zeros(rows, cols)));
                    } else {
                        pending = Some((name.to_owned(), rows, cols, Vec::with_capacity(rows * cols)));
                    }
                }
                _ => return Err(bad(format!("unexpected line {trimmed:?}"))),
            }
        }
        if let Some((name, ..)) = pending {
            return Err(bad(format!("truncated payload for {name}")));
        }
        Ok(ckpt)
    }
}
