//! Plain-text parameter checkpoints.
//!
//! ```text
//! dynacal-checkpoint 1
//! meta <key> <value...>
//! param <name> <rows> <cols>
//! <row 0 values>
//! ...
//! end
//! ```
//!
//! Reals are written in scientific notation with 17 significant digits, so a
//! write/read cycle reproduces every value bit-for-bit. Metadata values run to
//! the end of their line and must not contain newlines.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::mat::Mat;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "dynacal-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

/// 17-significant-digit scientific notation.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::InvalidInput(format!("metadata entry `{k}` cannot be written on one line")));
            }
            let _ = writeln!(s, "meta {k} {v}");
        }
        for id in self.params.ids() {
            let m = self.params.get(id);
            let _ = writeln!(s, "param {} {} {}", self.params.name(id), m.rows(), m.cols());
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|&x| fmt_real(x)).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s.push_str("end\n");
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse(format!("checkpoint line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate();
        let (n, header) = lines.next().ok_or_else(|| Error::Parse("empty checkpoint".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(n, "missing checkpoint header"));
        }
        let version: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(n, "bad version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(n, &format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::default();
        while let Some((n, line)) = lines.next() {
            if line == "end" {
                return Ok(ck);
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("param ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(bad(n, "expected `param <name> <rows> <cols>`"));
                }
                let rows: usize = f[1].parse().map_err(|_| bad(n, "bad row count"))?;
                let cols: usize = f[2].parse().map_err(|_| bad(n, "bad column count"))?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rn, row) = lines.next().ok_or_else(|| bad(n, "truncated parameter"))?;
                    let before = data.len();
                    for tok in row.split_whitespace() {
                        data.push(tok.parse::<f64>().map_err(|_| bad(rn, &format!("bad real `{tok}`")))?);
                    }
                    if data.len() - before != cols {
                        return Err(bad(rn, &format!("expected {cols} values")));
                    }
                }
                ck.params.add(f[0], Mat::from_vec(rows, cols, data)?)?;
            } else {
                return Err(bad(n, "unrecognized record"));
            }
        }
        Err(Error::Parse("checkpoint missing `end`".into()))
    }
}
