//! Token sequences and the similarity kernel shared by every stage.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// An ordered run of `dim`-dimensional token features.
///
/// Each token carries a merge weight (`size`, 1.0 for a fresh token) and a
/// source id that identifies it across compression and dropout. Features are
/// stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    dim: usize,
    features: Vec<f64>,
    sizes: Vec<f64>,
    ids: Vec<u64>,
}

impl TokenSeq {
    pub fn new(dim: usize, features: Vec<f64>, sizes: Vec<f64>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("token dim must be positive"));
        }
        if features.len() != ids.len() * dim {
            return Err(Error::invalid(format!(
                "feature buffer holds {} values, expected {} tokens × {dim}",
                features.len(),
                ids.len()
            )));
        }
        if sizes.len() != ids.len() {
            return Err(Error::invalid("sizes and ids differ in length"));
        }
        if let Some(s) = sizes.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("token size {s} is not positive")));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::invalid(format!("duplicate token id {dup}")));
        }
        Ok(Self {
            dim,
            features,
            sizes,
            ids,
        })
    }

    /// Fresh tokens (size 1.0) from feature rows.
    pub fn from_rows(rows: &[Vec<f64>], ids: Vec<u64>) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("cannot infer dim from zero rows"))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("feature rows differ in length"));
        }
        let features = rows.iter().flatten().copied().collect();
        let sizes = vec![1.0; rows.len()];
        Self::new(dim, features, sizes, ids)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            sizes: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn total_size(&self) -> f64 {
        self.sizes.iter().sum()
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Gathers the tokens at `positions`, in the order given.
    pub fn select(&self, positions: &[usize]) -> Self {
        let mut features = Vec::with_capacity(positions.len() * self.dim);
        let mut sizes = Vec::with_capacity(positions.len());
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            features.extend_from_slice(self.feature(p));
            sizes.push(self.sizes[p]);
            ids.push(self.ids[p]);
        }
        Self {
            dim: self.dim,
            features,
            sizes,
            ids,
        }
    }

    /// Same ids and sizes, new features.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, features, self.sizes.clone(), self.ids.clone())
    }

    /// Appends one token; the id must not already be present.
    pub fn push(&mut self, feature: &[f64], size: f64, id: u64) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::invalid(format!(
                "feature has dim {}, sequence has {}",
                feature.len(),
                self.dim
            )));
        }
        if !(size > 0.0) {
            return Err(Error::invalid("token size must be positive"));
        }
        if self.ids.contains(&id) {
            return Err(Error::invalid(format!("duplicate token id {id}")));
        }
        self.features.extend_from_slice(feature);
        self.sizes.push(size);
        self.ids.push(id);
        Ok(())
    }

    /// Concatenates sequences of equal dim; ids must stay unique.
    pub fn concat<'a>(dim: usize, parts: impl IntoIterator<Item = &'a TokenSeq>) -> Result<Self> {
        let mut features = Vec::new();
        let mut sizes = Vec::new();
        let mut ids = Vec::new();
        for part in parts {
            if part.dim != dim {
                return Err(Error::invalid("cannot concatenate sequences of different dim"));
            }
            features.extend_from_slice(&part.features);
            sizes.extend_from_slice(&part.sizes);
            ids.extend_from_slice(&part.ids);
        }
        Self::new(dim, features, sizes, ids)
    }

    pub(crate) fn from_parts_unchecked(
        dim: usize,
        features: Vec<f64>,
        sizes: Vec<f64>,
        ids: Vec<u64>,
    ) -> Self {
        debug_assert_eq!(features.len(), ids.len() * dim);
        debug_assert_eq!(sizes.len(), ids.len());
        Self {
            dim,
            features,
            sizes,
            ids,
        }
    }
}

/// Inner product with four interleaved partial sums.
///
/// The summation order is fixed, so results are reproducible, and symmetric
/// in its arguments bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; a zero-norm operand yields 0.0 instead of NaN.
///
/// The product of the norms is computed symmetrically, so
/// `cosine_sim(a, b) == cosine_sim(b, a)` holds bit for bit.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    cosine_with_norms(a, b, norm(a), norm(b))
}

/// [`cosine_sim`] with precomputed norms; bit-identical to it when the norms
/// come from [`norm`].
#[inline]
pub fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Scales `v` to unit norm in place; zero vectors are left untouched.
pub fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
