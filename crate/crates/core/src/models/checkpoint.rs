use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{LayeredParams, Linear, ModelError};
use crate::autodiff::Tensor;

const HEADER: &str = "metaforget-checkpoint v1";

/// Named tensors plus string metadata, stored as plain text.
///
/// Values are written with `{:e}`, which round-trips every finite f64
/// exactly, so a reloaded model evaluates bit-identically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str, ModelError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| ModelError::Checkpoint(format!("missing meta `{key}`")))
    }

    pub fn tensor(&self, key: &str) -> Result<&Tensor, ModelError> {
        self.tensors.get(key).ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{key}`")))
    }

    /// Stores layers as `<prefix>layer.<j>.weight` / `.bias`.
    pub fn put_layers(&mut self, prefix: &str, params: &LayeredParams) {
        for (j, l) in params.layers().iter().enumerate() {
            self.tensors.insert(format!("{prefix}layer.{j}.weight"), l.weight.clone());
            self.tensors.insert(format!("{prefix}layer.{j}.bias"), l.bias.clone());
        }
    }

    pub fn get_layers(&self, prefix: &str) -> Result<LayeredParams, ModelError> {
        let mut layers = Vec::new();
        loop {
            let j = layers.len();
            let w = format!("{prefix}layer.{j}.weight");
            if !self.tensors.contains_key(&w) {
                break;
            }
            layers.push(Linear {
                weight: self.tensor(&w)?.clone(),
                bias: self.tensor(&format!("{prefix}layer.{j}.bias"))?.clone(),
            });
        }
        LayeredParams::new(layers)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (k, t) in &self.tensors {
            let dims = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
            };
            let _ = write!(out, "tensor {k} {dims}");
            for v in t.data() {
                let _ = write!(out, " {v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let bad = |line: usize, msg: &str| ModelError::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(ModelError::Checkpoint(format!("missing `{HEADER}` header"))),
        }
        let mut ck = Checkpoint::default();
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad(n, "meta without key"))?;
                    let rest = line.splitn(3, char::is_whitespace).nth(2).unwrap_or("").trim();
                    ck.meta.insert(key.to_string(), rest.to_string());
                }
                Some("tensor") => {
                    let key = parts.next().ok_or_else(|| bad(n, "tensor without key"))?;
                    let dims = parts.next().ok_or_else(|| bad(n, "tensor without shape"))?;
                    let shape: Vec<usize> = if dims == "-" {
                        Vec::new()
                    } else {
                        dims.split(',').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(n, "bad shape"))?
                    };
                    let data: Vec<f64> =
                        parts.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(n, "bad number"))?;
                    let t = Tensor::new(shape, data).map_err(|e| bad(n, &e.to_string()))?;
                    ck.tensors.insert(key.to_string(), t);
                }
                Some(other) => return Err(bad(n, &format!("unknown record `{other}`"))),
                None => {}
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_text()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
