//! Dense complex-valued functions on a power `Sigma^n` of a finite alphabet,
//! together with the product probability weights used for inner products.
//!
//! Values are stored row-major with coordinate 0 most significant, so the
//! index of a tuple `(t_0, .., t_{n-1})` is `((t_0 * m + t_1) * m + ..)`.

use num_complex::Complex64;
use num_traits::ToPrimitive;

use crate::dist::{Coord, TripleDist};
use crate::error::{Error, Result};
use crate::tolerance;

/// A function `Sigma^n -> C` carrying the single-coordinate probability
/// weights of `Sigma`. Inner products are taken against the product measure.
#[derive(Clone, Debug)]
pub struct TensorFunction {
    alphabet_size: usize,
    n: usize,
    weights: Vec<f64>,
    values: Vec<Complex64>,
}

/// Single-coordinate marginal of `dist` as f64 weights, in symbol order.
pub fn marginal_weights(dist: &TripleDist, c: Coord) -> Vec<f64> {
    dist.single_marginal(c)
        .iter()
        .map(|p| p.to_f64().expect("marginal probability fits in f64"))
        .collect()
}

impl TensorFunction {
    /// `weights` is a probability vector over the alphabet; `values` has
    /// length `alphabet_size^n`.
    pub fn new(n: usize, weights: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::Argument("tensor function needs a nonempty alphabet".into()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Argument("tensor weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tolerance::EQ {
            return Err(Error::Argument(format!(
                "tensor weights sum to {total}, expected 1"
            )));
        }
        let want = m.checked_pow(n as u32).ok_or_else(|| {
            Error::Resource(format!("value table {m}^{n} overflows"))
        })?;
        if values.len() != want {
            return Err(Error::Argument(format!(
                "value table has {} entries, expected {}^{} = {}",
                values.len(),
                m,
                n,
                want
            )));
        }
        Ok(Self { alphabet_size: m, n, weights, values })
    }

    /// Constant function `c` on `Sigma^n`.
    pub fn constant(n: usize, weights: Vec<f64>, c: Complex64) -> Result<Self> {
        let m = weights.len();
        let want = m
            .checked_pow(n as u32)
            .ok_or_else(|| Error::Resource(format!("value table {m}^{n} overflows")))?;
        Self::new(n, weights, vec![c; want])
    }

    /// Tabulate `f` over all tuples.
    pub fn from_fn(
        n: usize,
        weights: Vec<f64>,
        mut f: impl FnMut(&[usize]) -> Complex64,
    ) -> Result<Self> {
        let m = weights.len();
        let len = m
            .checked_pow(n as u32)
            .ok_or_else(|| Error::Resource(format!("value table {m}^{n} overflows")))?;
        let mut values = Vec::with_capacity(len);
        let mut tuple = vec![0usize; n];
        for idx in 0..len {
            Self::decode(idx, m, &mut tuple);
            values.push(f(&tuple));
        }
        Self::new(n, weights, values)
    }

    fn decode(mut idx: usize, m: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = idx % m;
            idx /= m;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major index of `tuple`.
    pub fn index_of(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.n);
        tuple.iter().fold(0, |acc, &t| {
            debug_assert!(t < self.alphabet_size);
            acc * self.alphabet_size + t
        })
    }

    /// Tuple at row-major index `idx`.
    pub fn tuple_of(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.n];
        Self::decode(idx, self.alphabet_size, &mut out);
        out
    }

    pub fn eval(&self, tuple: &[usize]) -> Complex64 {
        self.values[self.index_of(tuple)]
    }

    /// Product-measure weight of `tuple`.
    pub fn point_weight(&self, tuple: &[usize]) -> f64 {
        tuple.iter().map(|&t| self.weights[t]).product()
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.alphabet_size != other.alphabet_size {
            return Err(Error::Argument(format!(
                "shape mismatch: {}^{} vs {}^{}",
                self.alphabet_size, self.n, other.alphabet_size, other.n
            )));
        }
        if self
            .weights
            .iter()
            .zip(&other.weights)
            .any(|(a, b)| (a - b).abs() > tolerance::EQ)
        {
            return Err(Error::Argument("tensor functions carry different weights".into()));
        }
        Ok(())
    }

    /// `E[f conj(g)]` under the product measure.
    pub fn inner_product(&self, other: &Self) -> Result<Complex64> {
        self.same_shape(other)?;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut tuple = vec![0usize; self.n];
        for idx in 0..self.values.len() {
            Self::decode(idx, self.alphabet_size, &mut tuple);
            let w = self.point_weight(&tuple);
            if w > 0.0 {
                acc += w * self.values[idx] * other.values[idx].conj();
            }
        }
        Ok(acc)
    }

    /// `E[|f|^2]`.
    pub fn norm2(&self) -> f64 {
        let mut acc = 0.0;
        let mut tuple = vec![0usize; self.n];
        for idx in 0..self.values.len() {
            Self::decode(idx, self.alphabet_size, &mut tuple);
            acc += self.point_weight(&tuple) * self.values[idx].norm_sqr();
        }
        acc
    }

    /// `E[f]`.
    pub fn mean(&self) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut tuple = vec![0usize; self.n];
        for idx in 0..self.values.len() {
            Self::decode(idx, self.alphabet_size, &mut tuple);
            acc += self.point_weight(&tuple) * self.values[idx];
        }
        acc
    }

    /// Largest `|f|` over the whole table, zero-weight points included.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// True when `sup |f| <= 1` up to the shared slack.
    pub fn is_one_bounded(&self) -> bool {
        self.sup_norm() <= 1.0 + tolerance::SUP_SLACK
    }

    pub fn conj(&self) -> Self {
        Self {
            alphabet_size: self.alphabet_size,
            n: self.n,
            weights: self.weights.clone(),
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            alphabet_size: self.alphabet_size,
            n: self.n,
            weights: self.weights.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn mul_pointwise(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            alphabet_size: self.alphabet_size,
            n: self.n,
            weights: self.weights.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            alphabet_size: self.alphabet_size,
            n: self.n,
            weights: self.weights.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            alphabet_size: self.alphabet_size,
            n: self.n,
            weights: self.weights.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// JSON with the domain descriptor and the value table as flat [re, im]
    /// pairs in row-major tuple order.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "alphabet_size": self.alphabet_size,
            "n": self.n,
            "weights": self.weights,
            "values": self.values.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let field = |name: &str| {
            v.get(name)
                .ok_or_else(|| Error::Format(format!("tensor function JSON lacks \"{name}\"")))
        };
        let n = field("n")?
            .as_u64()
            .ok_or_else(|| Error::Format("\"n\" must be an unsigned integer".into()))?
            as usize;
        let weights: Vec<f64> = serde_json::from_value(field("weights")?.clone())?;
        let m = field("alphabet_size")?
            .as_u64()
            .ok_or_else(|| Error::Format("\"alphabet_size\" must be an unsigned integer".into()))?
            as usize;
        if m != weights.len() {
            return Err(Error::Format(format!(
                "alphabet size {m} disagrees with {} weights",
                weights.len()
            )));
        }
        let pairs: Vec<[f64; 2]> = serde_json::from_value(field("values")?.clone())?;
        Self::new(
            n,
            weights,
            pairs
                .into_iter()
                .map(|[re, im]| Complex64::new(re, im))
                .collect(),
        )
    }
}
