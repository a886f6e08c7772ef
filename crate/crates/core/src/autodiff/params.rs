//! Named trainable arrays, RMSprop state and the `SGPC` checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "SGPC" | version u32 | count u32 |
//!   count x ( name_len u16 | name utf-8 | rank u8 | extents u32 x rank | values f64 x prod(extents) )
//! ```

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{self, Read, Write};

use rand::Rng;
use thiserror::Error;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGPC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Prefix under which optimizer state entries are written.
const STATE_PREFIX: &str = "rmsprop:";

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter `{0}` already exists")]
    Duplicate(String),
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{name}` has shape {expected:?}, got {got:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value in parameter `{0}`")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    sq_avg: Tensor,
}

/// Ordered collection of uniquely named parameters.
///
/// Shapes are fixed at insertion. Shared references allow concurrent reads;
/// updates need exclusive access.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), ParamError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(ParamError::Duplicate(name));
        }
        let sq_avg = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, sq_avg });
        Ok(())
    }

    /// Inserts a tensor with entries drawn uniformly from `[-bound, bound]`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<(), ParamError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    /// Replaces a value; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), ParamError> {
        let &i = self.index.get(name).ok_or_else(|| ParamError::Unknown(name.into()))?;
        let e = &mut self.entries[i];
        if e.value.shape() != value.shape() {
            return Err(ParamError::Shape {
                name: name.into(),
                expected: e.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn map_values(&mut self, f: impl Fn(&str, &mut Tensor)) {
        for e in &mut self.entries {
            f(&e.name, &mut e.value);
        }
    }

    /// Records every parameter on `tape`, tracked or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if trainable {
                    tape.var(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> Result<(), ParamError> {
        match self.entries.iter().find(|e| !e.value.is_finite()) {
            Some(e) => Err(ParamError::NonFinite(e.name.clone())),
            None => Ok(()),
        }
    }

    /// Hash of every value's bit pattern; changes whenever any parameter changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for e in &self.entries {
            e.name.hash(&mut h);
            for v in e.value.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Values followed by optimizer state, as named tensors.
    pub fn to_named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .entries
            .iter()
            .map(|e| (format!("{prefix}{}", e.name), e.value.clone()))
            .collect();
        out.extend(
            self.entries
                .iter()
                .map(|e| (format!("{STATE_PREFIX}{prefix}{}", e.name), e.sq_avg.clone())),
        );
        out
    }

    /// Rebuilds a store from the entries of [`ParameterStore::to_named`] that carry `prefix`.
    pub fn from_named(named: &[(String, Tensor)], prefix: &str) -> Result<Self, ParamError> {
        let mut store = Self::new();
        for (name, value) in named {
            if let Some(short) = name.strip_prefix(prefix) {
                store.insert(short, value.clone())?;
            }
        }
        let state_prefix = format!("{STATE_PREFIX}{prefix}");
        for (name, value) in named {
            if let Some(short) = name.strip_prefix(&state_prefix) {
                let &i = store.index.get(short).ok_or_else(|| ParamError::Unknown(short.into()))?;
                if store.entries[i].value.shape() != value.shape() {
                    return Err(ParamError::Shape {
                        name: short.into(),
                        expected: store.entries[i].value.shape().to_vec(),
                        got: value.shape().to_vec(),
                    });
                }
                store.entries[i].sq_avg = value.clone();
            }
        }
        Ok(store)
    }
}

/// Parameters recorded on a tape, addressable by name.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Panics on unknown names; layer code asks only for parameters it created.
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no bound parameter `{name}`"),
        }
    }

    /// Vars in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// RMSprop with a fixed learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            alpha: 0.99,
            eps: 1e-8,
        }
    }

    /// Applies one update; `grads` follows store order.
    pub fn step(&self, store: &mut ParameterStore, grads: &[Tensor]) -> Result<(), ParamError> {
        assert_eq!(grads.len(), store.entries.len(), "one gradient per parameter");
        for (e, g) in store.entries.iter_mut().zip(grads) {
            if g.shape() != e.value.shape() {
                return Err(ParamError::Shape {
                    name: e.name.clone(),
                    expected: e.value.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(ParamError::NonFinite(e.name.clone()));
            }
            let sq = e.sq_avg.data_mut();
            let v = e.value.data_mut();
            for ((s, p), &gi) in sq.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *s = self.alpha * *s + (1.0 - self.alpha) * gi * gi;
                *p -= self.learning_rate * gi / (s.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn write_checkpoint(mut w: impl Write, named: &[(String, Tensor)]) -> Result<(), ParamError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, t) in named {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| ParamError::Format(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        let rank = u8::try_from(t.rank()).map_err(|_| ParamError::Format(format!("rank too large: {name}")))?;
        w.write_all(&[rank])?;
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| ParamError::Format(format!("extent too large: {name}")))?;
            w.write_all(&e.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Vec<(String, Tensor)>, ParamError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ParamError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ParamError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| ParamError::Format("name is not utf-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
