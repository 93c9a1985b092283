//! Trajectory files: one header record followed by one record per frame,
//! each a single JSON object on its own line.
//!
//! ```text
//! {"record":"header","schema":1,"scene":"oblique","n":2,"dt":...,"radius":...,
//!  "masses":[...],"inertias":[...],"material":{...},"boundaries":{"boundary":[...]},
//!  "gravity":[x,y,z],"seed":7,"substeps":50}
//! {"record":"frame","index":0,"t":...,"r":[[x,y,z],...],"v":[...],"omega":[...]}
//! ```
//!
//! Every real is written in scientific notation with 17 significant digits.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use super::contact::Material;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::BoundarySet;

pub const TRAJECTORY_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: u32,
    pub scene: String,
    pub n: usize,
    pub dt: f64,
    pub radius: f64,
    pub masses: Vec<f64>,
    pub inertias: Vec<f64>,
    pub material: Material,
    pub boundaries: BoundarySet,
    pub gravity: Vec3,
    pub seed: u64,
    /// Simulator steps per frame.
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub index: usize,
    pub t: f64,
    pub r: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub omega: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Header(Header),
    Frame(Frame),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub header: Header,
    pub frames: Vec<Frame>,
}

/// JSON formatter writing every float as `{:.16e}`.
struct FixedDigits;

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Serializes `value` as one line of JSON with 17-digit reals.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value.serialize(&mut ser)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.schema != TRAJECTORY_SCHEMA {
            return Err(Error::Parse(format!("unsupported trajectory schema {}", h.schema)));
        }
        if h.masses.len() != h.n || h.inertias.len() != h.n {
            return Err(Error::dims("trajectory masses", h.n, h.masses.len().min(h.inertias.len())));
        }
        for (k, f) in self.frames.iter().enumerate() {
            if f.r.len() != h.n || f.v.len() != h.n || f.omega.len() != h.n {
                return Err(Error::Parse(format!("frame {k} does not hold {} bodies", h.n)));
            }
            let finite = f.r.iter().chain(&f.v).chain(&f.omega).all(|x| x.is_finite());
            if !finite || !f.t.is_finite() {
                return Err(Error::Parse(format!("frame {k} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", to_json_line(&Record::Header(self.header.clone()))?)?;
        for f in &self.frames {
            writeln!(w, "{}", to_json_line(&Record::Frame(f.clone()))?)?;
        }
        Ok(())
    }

    pub fn to_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut frames = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("trajectory line {}: {e}", k + 1)))?;
            match (rec, header.is_some()) {
                (Record::Header(h), false) => header = Some(h),
                (Record::Frame(f), true) => frames.push(f),
                (Record::Header(_), true) => return Err(Error::Parse(format!("line {}: second header", k + 1))),
                (Record::Frame(_), false) => return Err(Error::Parse("frame before header".into())),
            }
        }
        let header = header.ok_or_else(|| Error::Parse("trajectory has no header".into()))?;
        let t = Trajectory { header, frames };
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_string()?)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
