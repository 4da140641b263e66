//! Plain-text weight snapshots.
//!
//! ```text
//! lrcl-snapshot 1 <dtype> <tensor count>
//! tensor <name> <group> <ndim> <dim_0> ... <dim_{ndim-1}>
//! <value> <value> ...        (row-major, one line per tensor)
//! ```
//!
//! Values use Rust's shortest round-trip exponent notation, so reading a
//! snapshot back reproduces every bit.

use std::fmt::Write as _;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::params::{capture, ParamGroup, Parameterized};
use crate::Scalar;

const MAGIC: &str = "lrcl-snapshot";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: ArrayD<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub tensors: Vec<TensorRecord<T>>,
}

fn dtype<T>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

impl<T: Scalar> Snapshot<T> {
    pub fn capture(net: &impl Parameterized<T>) -> Self {
        let tensors = capture(net)
            .into_iter()
            .map(|(name, (group, value))| TensorRecord { name, group, value })
            .collect();
        Self { tensors }
    }

    /// Writes every tensor back into `net`; names, groups and shapes must match.
    pub fn restore(&self, net: &mut impl Parameterized<T>) -> Result<()> {
        let mut failure = None;
        let mut seen = 0;
        net.visit_params_mut("", &mut |name, group, mut view| {
            if failure.is_some() {
                return;
            }
            match self.tensors.iter().find(|t| t.name == name) {
                Some(t) if t.group == group && t.value.shape() == view.shape() => {
                    view.assign(&t.value);
                    seen += 1;
                }
                _ => failure = Some(Error::RegistryMismatch(format!("snapshot lacks {name}"))),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if seen != self.tensors.len() {
            return Err(Error::RegistryMismatch("snapshot has extra tensors".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION} {} {}", dtype::<T>(), self.tensors.len());
        for t in &self.tensors {
            let _ = write!(out, "tensor {} {} {}", t.name, t.group.as_str(), t.value.ndim());
            for d in t.value.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let mut first = true;
            for v in t.value.iter() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Snapshot(msg.to_string());
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != MAGIC {
            return Err(bad("bad header"));
        }
        if header[1] != VERSION.to_string() {
            return Err(bad("unsupported version"));
        }
        if header[2] != dtype::<T>() {
            return Err(bad("dtype mismatch"));
        }
        let count: usize = header[3].parse().map_err(|_| bad("bad tensor count"))?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let meta: Vec<&str> = lines
                .next()
                .ok_or_else(|| bad("truncated"))?
                .split_whitespace()
                .collect();
            if meta.len() < 4 || meta[0] != "tensor" {
                return Err(bad("bad tensor line"));
            }
            let group = ParamGroup::parse(meta[2]).ok_or_else(|| bad("bad group"))?;
            let ndim: usize = meta[3].parse().map_err(|_| bad("bad ndim"))?;
            if meta.len() != 4 + ndim {
                return Err(bad("bad shape"));
            }
            let shape = meta[4..]
                .iter()
                .map(|d| d.parse::<usize>().map_err(|_| bad("bad dim")))
                .collect::<Result<Vec<_>>>()?;
            let values = lines
                .next()
                .ok_or_else(|| bad("truncated"))?
                .split_whitespace()
                .map(|v| v.parse::<T>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<_>>>()?;
            let value = ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|_| bad("value count"))?;
            tensors.push(TensorRecord {
                name: meta[1].to_string(),
                group,
                value,
            });
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data"));
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Snapshot(e.to_string()))?;
        Self::from_text(&text)
    }
}
