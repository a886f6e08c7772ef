//! Per-shape SDF samples and the SDFD container.

use std::io::{self, Read, Write};

use thiserror::Error;

const MAGIC: &[u8; 4] = b"SDFD";
const VERSION: u32 = 1;

/// Largest distance inside the sampling cube.
pub const MAX_ABS_SDF: f64 = 2.0 * 1.732_050_807_568_877_2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not an SDFD file")]
    BadMagic,
    #[error("unsupported SDFD version {0}")]
    Version(u32),
    #[error("shape `{id}`: {msg}")]
    Invalid { id: String, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Uniform,
    NearSurface,
}

/// Points with signed distances for one shape.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SdfSampleSet {
    pub id: String,
    pub points: Vec<[f64; 3]>,
    pub values: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl SdfSampleSet {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, p: [f64; 3], s: f64, provenance: Provenance) {
        self.points.push(p);
        self.values.push(s);
        self.provenance.push(provenance);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of entries with the given provenance.
    pub fn indices(&self, provenance: Provenance) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.provenance[i] == provenance).collect()
    }

    /// Fraction of uniform samples with a negative value.
    pub fn interior_fraction(&self) -> f64 {
        let uniform = self.indices(Provenance::Uniform);
        if uniform.is_empty() {
            return 0.0;
        }
        uniform.iter().filter(|&&i| self.values[i] < 0.0).count() as f64 / uniform.len() as f64
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| DatasetError::Invalid {
            id: self.id.clone(),
            msg,
        };
        if self.values.len() != self.points.len() || self.provenance.len() != self.points.len() {
            return Err(bad("column lengths differ".into()));
        }
        for (p, s) in self.points.iter().zip(&self.values) {
            if !s.is_finite() || s.abs() > MAX_ABS_SDF + 1e-6 {
                return Err(bad(format!("value {s} at {p:?} out of range")));
            }
            if p.iter().any(|c| !c.is_finite() || c.abs() > 1.0 + 1e-6) {
                return Err(bad(format!("point {p:?} outside the unit cube")));
            }
        }
        Ok(())
    }
}

pub fn write_dataset(mut w: impl Write, shapes: &[SdfSampleSet]) -> Result<(), DatasetError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for s in shapes {
        s.validate()?;
        let id = s.id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| DatasetError::Invalid {
            id: s.id.clone(),
            msg: "id longer than 65535 bytes".into(),
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        for (p, v) in s.points.iter().zip(&s.values) {
            for x in [p[0], p[1], p[2], *v] {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        let prov: Vec<u8> = s
            .provenance
            .iter()
            .map(|p| match p {
                Provenance::Uniform => 0,
                Provenance::NearSurface => 1,
            })
            .collect();
        w.write_all(&prov)?;
    }
    Ok(())
}

pub fn read_dataset(mut r: impl Read) -> Result<Vec<SdfSampleSet>, DatasetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(DatasetError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len)?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let n = read_u32(&mut r)? as usize;
        let mut raw = vec![0u8; n * 16];
        r.read_exact(&mut raw)?;
        let mut prov = vec![0u8; n];
        r.read_exact(&mut prov)?;
        let mut set = SdfSampleSet::new(id);
        for (rec, &pv) in raw.chunks_exact(16).zip(&prov) {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            let provenance = match pv {
                0 => Provenance::Uniform,
                1 => Provenance::NearSurface,
                other => {
                    return Err(DatasetError::Invalid {
                        id: set.id.clone(),
                        msg: format!("unknown provenance tag {other}"),
                    })
                }
            };
            set.push([f(0), f(1), f(2)], f(3), provenance);
        }
        set.validate()?;
        shapes.push(set);
    }
    Ok(shapes)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut a = SdfSampleSet::new("a");
        a.push([0.5, -0.25, 1.0], -0.125, Provenance::Uniform);
        a.push([0.0, 0.0, 0.0], 0.5, Provenance::NearSurface);
        let b = SdfSampleSet::new("empty");
        let mut buf = Vec::new();
        write_dataset(&mut buf, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(&buf[..4], b"SDFD");
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn rejects_out_of_range_values() {
        let mut a = SdfSampleSet::new("x");
        a.push([0.0; 3], 10.0, Provenance::Uniform);
        assert!(write_dataset(Vec::new(), &[a]).is_err());
    }

    #[test]
    fn interior_fraction_counts_uniform_only() {
        let mut a = SdfSampleSet::new("x");
        a.push([0.0; 3], -0.1, Provenance::Uniform);
        a.push([0.0; 3], 0.1, Provenance::Uniform);
        a.push([0.0; 3], -0.1, Provenance::NearSurface);
        assert_eq!(a.interior_fraction(), 0.5);
    }
}
