//! Sampled contour functions on a uniform time grid.
//!
//! A [`PathGrid`] is the raw material every tree in this crate is built
//! from. Its binary container is
//!
//! ```text
//! magic "CRTC" | version u32 | kind u8 | origin_time f64 | step f64 | count u64 | count x f64
//! ```
//!
//! with all multi-byte fields little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CRTC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathKind {
    /// Nonnegative excursion: zero at both ends, positive inside.
    Excursion,
    /// One half of a two-sided pair; starts at zero.
    Bes3PairHalf,
    /// Contour of a spine decorated with a Poisson forest; starts at zero.
    SpineForest,
}

impl PathKind {
    pub fn code(self) -> u8 {
        match self {
            PathKind::Excursion => 0,
            PathKind::Bes3PairHalf => 1,
            PathKind::SpineForest => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PathKind::Excursion),
            1 => Ok(PathKind::Bes3PairHalf),
            2 => Ok(PathKind::SpineForest),
            other => Err(Error::Format(format!("unknown path kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PathKind::Excursion => "excursion",
            PathKind::Bes3PairHalf => "bes3_pair_half",
            PathKind::SpineForest => "spine_forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    origin_time: f64,
    step: f64,
    values: Vec<f64>,
    kind: PathKind,
}

impl PathGrid {
    /// Builds a grid, checking the kind-specific boundary invariants.
    pub fn new(kind: PathKind, origin_time: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("grid step must be positive, got {step}")));
        }
        if !origin_time.is_finite() {
            return Err(Error::invalid("origin time must be finite"));
        }
        if values.is_empty() {
            return Err(Error::invalid("a path needs at least one value"));
        }
        if let Some(bad) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvariantViolation(format!(
                "value {} at index {bad} is negative or not finite",
                values[bad]
            )));
        }
        match kind {
            PathKind::Excursion => {
                let n = values.len();
                if n < 2 || values[0] != 0.0 || values[n - 1] != 0.0 {
                    return Err(Error::InvariantViolation(
                        "excursion must start and end at exactly 0".into(),
                    ));
                }
                if let Some(i) = values[1..n - 1].iter().position(|v| *v <= 0.0) {
                    return Err(Error::InvariantViolation(format!(
                        "excursion touches 0 at interior index {}",
                        i + 1
                    )));
                }
            }
            PathKind::Bes3PairHalf | PathKind::SpineForest => {
                if values[0] != 0.0 {
                    return Err(Error::InvariantViolation(format!(
                        "{} must start at 0",
                        kind.name()
                    )));
                }
            }
        }
        Ok(PathGrid { origin_time, step, values, kind })
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn origin_time(&self) -> f64 {
        self.origin_time
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.origin_time + self.step * i as f64
    }

    /// Duration covered by the grid.
    pub fn horizon(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Largest absolute change between neighbouring grid values.
    pub fn max_increment(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.code()])?;
        w.write_all(&self.origin_time.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, expected CRTC".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = PathKind::from_code(kind[0])?;
        let origin_time = read_f64(&mut r)?;
        let step = read_f64(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        PathGrid::new(kind, origin_time, step, values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(33 + 8 * self.values.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
