//! Latent-factor matrices keyed by external entity id, and their file formats.
//!
//! Text format:
//!
//! ```text
//! # dcdcsr-factors v1
//! model=PMF dim=2 count=3 seed=42
//! u1	0.5	-1.25
//! ...
//! ```
//!
//! Binary format: magic `DCDF`, then little-endian `u32` version, `u8` model
//! tag length plus tag bytes, `u32` dim, `u64` count, `u64` seed, then for
//! every entity a `u32` id length, the UTF-8 id bytes and `dim` `f64` values.

use std::io::{self, BufRead, Read, Write};

use indexmap::IndexMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("vector for {id} has length {got}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite component in vector for {0}")]
    NonFinite(String),
    #[error("factor dimension must be positive")]
    ZeroDim,
    #[error("duplicate entity {0}")]
    Duplicate(String),
    #[error("malformed factor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// K-dimensional latent vectors for a set of entities.
///
/// Iteration order is insertion order, which keeps serialization and every
/// per-entity loop deterministic.
#[derive(Debug, Clone)]
pub struct FactorMatrix {
    dim: usize,
    index: IndexMap<String, usize>,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(dim: usize) -> Result<Self, FactorError> {
        if dim == 0 {
            return Err(FactorError::ZeroDim);
        }
        Ok(Self {
            dim,
            index: IndexMap::new(),
            data: Vec::new(),
        })
    }

    /// Builds a matrix from ids and a row-major `ids.len() x dim` buffer.
    pub fn from_rows<I, S>(dim: usize, ids: I, data: Vec<f64>) -> Result<Self, FactorError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut m = Self::new(dim)?;
        let mut rows = data.chunks_exact(dim);
        for id in ids {
            let id = id.into();
            let row = rows.next().ok_or_else(|| FactorError::DimensionMismatch {
                id: id.clone(),
                expected: dim,
                got: 0,
            })?;
            m.insert(id, row)?;
        }
        if rows.next().is_some() || !rows.remainder().is_empty() {
            return Err(FactorError::Format("more values than ids".into()));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&r| self.row(r))
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut [f64]> {
        let r = *self.index.get(id)?;
        Some(&mut self.data[r * self.dim..(r + 1) * self.dim])
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// Inserts a new entity; fails on duplicates, wrong length or non-finite values.
    pub fn insert(&mut self, id: impl Into<String>, v: &[f64]) -> Result<(), FactorError> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(FactorError::DimensionMismatch {
                id,
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FactorError::NonFinite(id));
        }
        if self.index.contains_key(&id) {
            return Err(FactorError::Duplicate(id));
        }
        self.index.insert(id, self.index.len());
        self.data.extend_from_slice(v);
        Ok(())
    }

    /// Overwrites an existing vector or inserts a new one.
    pub fn set(&mut self, id: &str, v: &[f64]) -> Result<(), FactorError> {
        match self.index.get(id) {
            Some(&r) => {
                if v.len() != self.dim {
                    return Err(FactorError::DimensionMismatch {
                        id: id.to_string(),
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(FactorError::NonFinite(id.to_string()));
                }
                self.data[r * self.dim..(r + 1) * self.dim].copy_from_slice(v);
                Ok(())
            }
            None => self.insert(id, v),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.index.iter().map(|(id, &r)| (id.as_str(), self.row(r)))
    }

    /// Row-major values in iteration order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn write_text<W: Write>(&self, w: &mut W, header: &FactorHeader) -> io::Result<()> {
        writeln!(w, "# dcdcsr-factors v1")?;
        writeln!(
            w,
            "model={} dim={} count={} seed={}",
            header.model,
            self.dim,
            self.len(),
            header.seed
        )?;
        for (id, v) in self.iter() {
            write!(w, "{id}")?;
            for x in v {
                write!(w, "\t{x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<(Self, FactorHeader), FactorError> {
        let mut lines = r.lines();
        let magic = lines
            .next()
            .transpose()?
            .ok_or_else(|| FactorError::Format("empty file".into()))?;
        if magic.trim() != "# dcdcsr-factors v1" {
            return Err(FactorError::Format(format!("bad magic line {magic:?}")));
        }
        let head = lines
            .next()
            .transpose()?
            .ok_or_else(|| FactorError::Format("missing header".into()))?;
        let mut model = None;
        let mut dim = None;
        let mut count = None;
        let mut seed = None;
        for kv in head.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| FactorError::Format(format!("bad header field {kv:?}")))?;
            let bad = || FactorError::Format(format!("bad header value {kv:?}"));
            match k {
                "model" => model = Some(v.to_string()),
                "dim" => dim = Some(v.parse::<usize>().map_err(|_| bad())?),
                "count" => count = Some(v.parse::<usize>().map_err(|_| bad())?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let missing = |f: &str| FactorError::Format(format!("header lacks {f}"));
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let count = count.ok_or_else(|| missing("count"))?;
        let header = FactorHeader {
            model: model.ok_or_else(|| missing("model"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        };
        let mut m = Self::new(dim)?;
        let mut v = Vec::with_capacity(dim);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let id = cols.next().unwrap_or_default();
            v.clear();
            for c in cols {
                v.push(
                    c.parse::<f64>()
                        .map_err(|_| FactorError::Format(format!("bad value {c:?} for {id}")))?,
                );
            }
            m.insert(id, &v)?;
        }
        if m.len() != count {
            return Err(FactorError::Format(format!(
                "header says {count} entities, found {}",
                m.len()
            )));
        }
        Ok((m, header))
    }

    pub fn write_binary<W: Write>(&self, w: &mut W, header: &FactorHeader) -> io::Result<()> {
        w.write_all(b"DCDF")?;
        w.write_all(&1u32.to_le_bytes())?;
        let tag = header.model.as_bytes();
        w.write_all(&[tag.len() as u8])?;
        w.write_all(tag)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&header.seed.to_le_bytes())?;
        for (id, v) in self.iter() {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<(Self, FactorHeader), FactorError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"DCDF" {
            return Err(FactorError::Format("bad binary magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(FactorError::Format(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 1];
        r.read_exact(&mut len)?;
        let mut tag = vec![0u8; len[0] as usize];
        r.read_exact(&mut tag)?;
        let model = String::from_utf8(tag).map_err(|_| FactorError::Format("model tag".into()))?;
        let dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let mut m = Self::new(dim)?;
        let mut v = vec![0.0; dim];
        for _ in 0..count {
            let n = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; n];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| FactorError::Format("entity id".into()))?;
            for x in v.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                *x = f64::from_le_bytes(b);
            }
            m.insert(id, &v)?;
        }
        Ok((m, FactorHeader { model, seed }))
    }
}

/// Equality by entity: same dimension, same key set, same vector per key.
/// Insertion order is ignored.
impl PartialEq for FactorMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.len() == other.len()
            && self.iter().all(|(id, v)| other.get(id) == Some(v))
    }
}

impl FactorMatrix {
    /// Like `==` but compares the bit patterns of every component.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.len() == other.len()
            && self.iter().all(|(id, v)| {
                other.get(id).is_some_and(|w| {
                    v.iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits())
                })
            })
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Provenance written alongside a factor matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorHeader {
    pub model: String,
    pub seed: u64,
}

impl FactorHeader {
    pub fn new(model: impl Into<String>, seed: u64) -> Self {
        Self {
            model: model.into(),
            seed,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}
