//! Product functions over a power of a weighted alphabet, finite dictionaries
//! of univariate factors, correlation lists against arbitrary dense functions,
//! greedy short lists, and the symbolic distance between dictionary members.

use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::group::{all_characters, AbelianGroup, GroupElem};
use crate::tensor::TensorFunction;
use crate::tolerance;

/// Factors closer than this in sup distance count as the same dictionary entry.
const DUP_TOL: f64 = 1e-12;

/// Cap on the number of members a list scan may enumerate.
const MEMBER_BUDGET: usize = 1_000_000;

/// Cap on members times table size for one scan.
const WORK_BUDGET: u128 = 50_000_000;

static CLASS_IDS: AtomicU64 = AtomicU64::new(1);

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Argument("weight vector is empty".into()));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::Argument("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > tolerance::EQ {
        return Err(Error::Argument(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// `sum_a w[a] p(a) conj(q(a))`, the single-coordinate pairing all the
/// factored identities below reduce to.
fn uni_inner(weights: &[f64], p: &[Complex64], q: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..weights.len() {
        acc += weights[a] * p[a] * q[a].conj();
    }
    acc
}

fn check_fixed(fixed: &[(usize, usize)], n: usize, m: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &(coord, symbol) in fixed {
        if coord >= n {
            return Err(Error::Argument(format!("fixed coordinate {coord} out of range, n = {n}")));
        }
        if seen[coord] {
            return Err(Error::Argument(format!("coordinate {coord} fixed twice")));
        }
        seen[coord] = true;
        if symbol >= m {
            return Err(Error::Argument(format!("fixed symbol {symbol} out of range, alphabet {m}")));
        }
    }
    Ok(())
}

/// A function on `Sigma^n` of the form `prod_i p_i(x_i)` with every factor
/// 1-bounded, carried together with the single-coordinate weights.
#[derive(Clone, Debug)]
pub struct ProductFunction {
    weights: Vec<f64>,
    factors: Vec<Vec<Complex64>>,
}

impl ProductFunction {
    pub fn new(weights: Vec<f64>, factors: Vec<Vec<Complex64>>) -> Result<Self> {
        check_weights(&weights)?;
        if factors.is_empty() {
            return Err(Error::Argument("product function needs at least one factor".into()));
        }
        for (i, f) in factors.iter().enumerate() {
            if f.len() != weights.len() {
                return Err(Error::Argument(format!(
                    "factor {i} has {} values, alphabet has {}",
                    f.len(),
                    weights.len()
                )));
            }
            let sup = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if sup > 1.0 + tolerance::SUP_SLACK {
                return Err(Error::Argument(format!("factor {i} has sup norm {sup} > 1")));
            }
        }
        Ok(Self { weights, factors })
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factors(&self) -> &[Vec<Complex64>] {
        &self.factors
    }

    pub fn value(&self, point: &[usize]) -> Complex64 {
        let mut acc = Complex64::new(1.0, 0.0);
        for (f, &x) in self.factors.iter().zip(point) {
            acc *= f[x];
        }
        acc
    }

    pub fn to_tensor(&self) -> Result<TensorFunction> {
        TensorFunction::from_fn(self.n(), self.weights.clone(), |t| self.value(t))
    }

    /// `prod_i <p_i, q_i>`; equals the tensor inner product of the two
    /// materialized functions.
    pub fn inner_product(&self, other: &Self) -> Result<Complex64> {
        if self.n() != other.n() || self.weights.len() != other.weights.len() {
            return Err(Error::Argument("product functions have different shapes".into()));
        }
        let mut acc = Complex64::new(1.0, 0.0);
        for (p, q) in self.factors.iter().zip(&other.factors) {
            acc *= uni_inner(&self.weights, p, q);
        }
        Ok(acc)
    }

    /// Fix the listed coordinates. The constant the fixed factors contribute
    /// is folded into the first remaining factor, whose leading nonzero value
    /// is then rotated to be positive real; the second return value is the
    /// unimodular phase taken out, so `phase * restricted` is the plain
    /// substitution. A restriction that vanishes identically reports phase 1.
    pub fn restrict(&self, fixed: &[(usize, usize)]) -> Result<(Self, Complex64)> {
        check_fixed(fixed, self.n(), self.weights.len())?;
        if fixed.len() == self.n() {
            return Err(Error::Argument("restriction must keep at least one coordinate".into()));
        }
        let mut theta = Complex64::new(1.0, 0.0);
        let mut drop = vec![false; self.n()];
        for &(coord, symbol) in fixed {
            drop[coord] = true;
            theta *= self.factors[coord][symbol];
        }
        let mut factors: Vec<Vec<Complex64>> =
            self.factors.iter().zip(&drop).filter(|(_, &d)| !d).map(|(f, _)| f.clone()).collect();
        for v in factors[0].iter_mut() {
            *v *= theta;
        }
        let mut phase = Complex64::new(1.0, 0.0);
        if let Some(lead) = factors[0].iter().find(|v| v.norm() > DUP_TOL) {
            phase = lead / lead.norm();
            for v in factors[0].iter_mut() {
                *v *= phase.conj();
            }
        }
        Ok((Self { weights: self.weights.clone(), factors }, phase))
    }
}

/// A member of a [`ProductClass`]: one dictionary index per coordinate.
/// Members compare and combine only within the class that produced them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductMember {
    class_id: u64,
    indices: Vec<usize>,
}

impl ProductMember {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn n(&self) -> usize {
        self.indices.len()
    }
}

/// A finite dictionary of unimodular univariate factors over a weighted
/// alphabet. Members are products of dictionary entries, one per coordinate;
/// fixing coordinates of a member multiplies a shorter member by a constant
/// of absolute value one, so the family is closed under restriction up to
/// such constants. That closure is exactly why every dictionary value must
/// lie on the unit circle, which the constructors enforce.
#[derive(Clone, Debug)]
pub struct ProductClass {
    id: u64,
    weights: Vec<f64>,
    dict: Vec<Vec<Complex64>>,
    separation: f64,
}

impl ProductClass {
    /// Build from explicit factors. Duplicated entries are rejected: they
    /// would make the separation constant zero and the member indexing
    /// ambiguous.
    pub fn from_dictionary(weights: Vec<f64>, dict: Vec<Vec<Complex64>>) -> Result<Self> {
        check_weights(&weights)?;
        if dict.is_empty() {
            return Err(Error::Argument("dictionary is empty".into()));
        }
        for (i, f) in dict.iter().enumerate() {
            if f.len() != weights.len() {
                return Err(Error::Argument(format!(
                    "dictionary entry {i} has {} values, alphabet has {}",
                    f.len(),
                    weights.len()
                )));
            }
            for (a, v) in f.iter().enumerate() {
                if (v.norm() - 1.0).abs() > tolerance::INEQ_SLACK {
                    return Err(Error::Argument(format!(
                        "dictionary entry {i} has |value| = {} at symbol {a}; \
                         restriction closure needs unit modulus everywhere",
                        v.norm()
                    )));
                }
            }
        }
        for i in 0..dict.len() {
            for j in i + 1..dict.len() {
                let far = dict[i]
                    .iter()
                    .zip(&dict[j])
                    .map(|(u, v)| (u - v).norm())
                    .fold(0.0, f64::max);
                if far <= DUP_TOL {
                    return Err(Error::Argument(format!("dictionary entries {i} and {j} coincide")));
                }
            }
        }
        let separation = separation_of(&weights, &dict);
        Ok(Self { id: CLASS_IDS.fetch_add(1, Ordering::Relaxed), weights, dict, separation })
    }

    /// Characters of `group` composed with the labeling `sigma`. Distinct
    /// characters that induce the same factor (sigma need not be surjective)
    /// collapse to a single dictionary entry.
    pub fn from_embedding(
        weights: Vec<f64>,
        group: &AbelianGroup,
        sigma: &[GroupElem],
    ) -> Result<Self> {
        check_weights(&weights)?;
        if sigma.len() != weights.len() {
            return Err(Error::Argument(format!(
                "sigma labels {} symbols, alphabet has {}",
                sigma.len(),
                weights.len()
            )));
        }
        for (a, v) in sigma.iter().enumerate() {
            if !group.is_elem(v) {
                return Err(Error::Argument(format!("sigma({a}) = {v:?} is not a group element")));
            }
        }
        let mut dict: Vec<Vec<Complex64>> = Vec::new();
        for chi in all_characters(group) {
            let f = chi.compose(sigma);
            let dup = dict.iter().any(|g| {
                f.iter().zip(g).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max) <= DUP_TOL
            });
            if !dup {
                dict.push(f);
            }
        }
        let separation = separation_of(&weights, &dict);
        Ok(Self { id: CLASS_IDS.fetch_add(1, Ordering::Relaxed), weights, dict, separation })
    }

    pub fn len(&self) -> usize {
        self.dict.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dict.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factor(&self, i: usize) -> &[Complex64] {
        &self.dict[i]
    }

    /// Separation constant: the least `1 - |<p, q>|` over distinct dictionary
    /// entries, or 1 for dictionaries with fewer than two entries.
    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn member(&self, indices: Vec<usize>) -> Result<ProductMember> {
        if indices.is_empty() {
            return Err(Error::Argument("member needs at least one coordinate".into()));
        }
        for &i in &indices {
            if i >= self.dict.len() {
                return Err(Error::Argument(format!(
                    "factor index {i} out of range, dictionary has {}",
                    self.dict.len()
                )));
            }
        }
        Ok(ProductMember { class_id: self.id, indices })
    }

    fn own(&self, m: &ProductMember) -> Result<()> {
        if m.class_id != self.id {
            return Err(Error::Argument("member belongs to a different class".into()));
        }
        Ok(())
    }

    pub fn member_function(&self, m: &ProductMember) -> Result<ProductFunction> {
        self.own(m)?;
        let factors = m.indices.iter().map(|&i| self.dict[i].clone()).collect();
        ProductFunction::new(self.weights.clone(), factors)
    }

    /// Fix coordinates of a member. The rest of the member survives verbatim
    /// and the fixed factors contribute the returned constant, which has
    /// absolute value one.
    pub fn restrict_member(
        &self,
        m: &ProductMember,
        fixed: &[(usize, usize)],
    ) -> Result<(ProductMember, Complex64)> {
        self.own(m)?;
        check_fixed(fixed, m.n(), self.weights.len())?;
        if fixed.len() == m.n() {
            return Err(Error::Argument("restriction must keep at least one coordinate".into()));
        }
        let mut theta = Complex64::new(1.0, 0.0);
        let mut drop = vec![false; m.n()];
        for &(coord, symbol) in fixed {
            drop[coord] = true;
            theta *= self.dict[m.indices[coord]][symbol];
        }
        let indices =
            m.indices.iter().zip(&drop).filter(|(_, &d)| !d).map(|(&i, _)| i).collect();
        Ok((ProductMember { class_id: self.id, indices }, theta))
    }

    /// `<p, q>` via the per-coordinate factorization.
    pub fn member_inner(&self, a: &ProductMember, b: &ProductMember) -> Result<Complex64> {
        self.own(a)?;
        self.own(b)?;
        if a.n() != b.n() {
            return Err(Error::Argument(format!(
                "members have {} and {} coordinates",
                a.n(),
                b.n()
            )));
        }
        let mut acc = Complex64::new(1.0, 0.0);
        for (&i, &j) in a.indices.iter().zip(&b.indices) {
            acc *= uni_inner(&self.weights, &self.dict[i], &self.dict[j]);
        }
        Ok(acc)
    }

    /// Number of coordinates whose factor identities differ.
    pub fn symbolic_distance(&self, a: &ProductMember, b: &ProductMember) -> Result<usize> {
        self.own(a)?;
        self.own(b)?;
        if a.n() != b.n() {
            return Err(Error::Argument(format!(
                "members have {} and {} coordinates",
                a.n(),
                b.n()
            )));
        }
        Ok(a.indices.iter().zip(&b.indices).filter(|(i, j)| i != j).count())
    }

    /// Whether `|<a, b>| <= (1 - separation)^distance` holds, up to 1e-12.
    pub fn correlation_bound_check(&self, a: &ProductMember, b: &ProductMember) -> Result<bool> {
        let inner = self.member_inner(a, b)?.norm();
        let dist = self.symbolic_distance(a, b)?;
        Ok(inner <= (1.0 - self.separation).powi(dist as i32) + 1e-12)
    }

    fn check_scan_input(&self, f: &TensorFunction) -> Result<usize> {
        if f.n() == 0 {
            return Err(Error::Argument("list scan needs at least one coordinate".into()));
        }
        if f.alphabet_size() != self.weights.len() {
            return Err(Error::Argument(format!(
                "function alphabet {} does not match class alphabet {}",
                f.alphabet_size(),
                self.weights.len()
            )));
        }
        let drift = f
            .weights()
            .iter()
            .zip(&self.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if drift > tolerance::INEQ_SLACK {
            return Err(Error::Argument("function weights do not match class weights".into()));
        }
        let members = self
            .dict
            .len()
            .checked_pow(f.n() as u32)
            .ok_or_else(|| Error::Resource(format!("{}^{} members overflow", self.dict.len(), f.n())))?;
        if members > MEMBER_BUDGET {
            return Err(Error::Resource(format!(
                "scan of {members} members exceeds the budget {MEMBER_BUDGET}"
            )));
        }
        let work = members as u128 * f.len() as u128;
        if work > WORK_BUDGET {
            return Err(Error::Resource(format!(
                "scan work {work} exceeds the budget {WORK_BUDGET}"
            )));
        }
        Ok(members)
    }

    fn decode_member(&self, mut code: usize, n: usize) -> Vec<usize> {
        let mut indices = vec![0usize; n];
        for slot in indices.iter_mut().rev() {
            *slot = code % self.dict.len();
            code /= self.dict.len();
        }
        indices
    }

    /// All members whose correlation with `f` is at least `eps` in absolute
    /// value, with the correlations, in lexicographic index order. The scan
    /// is exhaustive over all `len^n` members.
    pub fn correlation_list(
        &self,
        f: &TensorFunction,
        eps: f64,
    ) -> Result<Vec<(ProductMember, Complex64)>> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::Argument(format!("correlation threshold {eps} must be >= 0")));
        }
        let members = self.check_scan_input(f)?;
        let n = f.n();
        let m = self.weights.len();
        let hits: Vec<Option<(ProductMember, Complex64)>> = (0..members)
            .into_par_iter()
            .map(|code| {
                let indices = self.decode_member(code, n);
                let mut acc = Complex64::new(0.0, 0.0);
                let mut tuple = vec![0usize; n];
                for (idx, value) in f.values().iter().enumerate() {
                    let mut rest = idx;
                    for slot in tuple.iter_mut().rev() {
                        *slot = rest % m;
                        rest /= m;
                    }
                    let mut w = 1.0;
                    let mut p = Complex64::new(1.0, 0.0);
                    for (pos, &x) in tuple.iter().enumerate() {
                        w *= self.weights[x];
                        p *= self.dict[indices[pos]][x];
                    }
                    acc += w * value * p.conj();
                }
                if acc.norm() >= eps {
                    Some((ProductMember { class_id: self.id, indices }, acc))
                } else {
                    None
                }
            })
            .collect();
        Ok(hits.into_iter().flatten().collect())
    }

    /// Greedy short list: walk the correlation list in its canonical order
    /// and keep each member at most `delta`-correlated with everything kept
    /// so far. Requires `delta < eps^2`; the kept size never exceeds
    /// `1 / (eps^2 - delta)` and every list member is `delta`-covered by
    /// some kept member.
    pub fn short_list(&self, f: &TensorFunction, eps: f64, delta: f64) -> Result<ShortList> {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::Argument(format!("correlation threshold {eps} must be positive")));
        }
        if !delta.is_finite() || delta < 0.0 || delta >= eps * eps {
            return Err(Error::Argument(format!(
                "coverage level {delta} must satisfy 0 <= delta < eps^2 = {}",
                eps * eps
            )));
        }
        let list = self.correlation_list(f, eps)?;
        let mut chosen: Vec<usize> = Vec::new();
        for (pos, (mem, _)) in list.iter().enumerate() {
            let mut clear = true;
            for &c in &chosen {
                if self.member_inner(mem, &list[c].0)?.norm() > delta {
                    clear = false;
                    break;
                }
            }
            if clear {
                chosen.push(pos);
            }
        }
        let members = chosen.iter().map(|&c| list[c].0.clone()).collect();
        let correlations = chosen.iter().map(|&c| list[c].1).collect();
        Ok(ShortList { members, correlations, list_len: list.len(), bound: 1.0 / (eps * eps - delta) })
    }

    /// Whether every entry of `list` has inner product at least `delta` in
    /// absolute value with some entry of `short`.
    pub fn covers(
        &self,
        list: &[(ProductMember, Complex64)],
        short: &ShortList,
        delta: f64,
    ) -> Result<bool> {
        for (mem, _) in list {
            let mut hit = false;
            for q in &short.members {
                if self.member_inner(mem, q)?.norm() >= delta {
                    hit = true;
                    break;
                }
            }
            if !hit {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn separation_of(weights: &[f64], dict: &[Vec<Complex64>]) -> f64 {
    if dict.len() < 2 {
        return 1.0;
    }
    let mut tau = f64::INFINITY;
    for i in 0..dict.len() {
        for j in i + 1..dict.len() {
            tau = tau.min(1.0 - uni_inner(weights, &dict[i], &dict[j]).norm());
        }
    }
    tau.max(0.0)
}

/// Output of [`ProductClass::short_list`].
#[derive(Clone, Debug)]
pub struct ShortList {
    pub members: Vec<ProductMember>,
    pub correlations: Vec<Complex64>,
    /// Size of the full correlation list the members were drawn from.
    pub list_len: usize,
    /// The guaranteed size cap `1 / (eps^2 - delta)`.
    pub bound: f64,
}

impl ShortList {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "size": self.members.len(),
            "list_len": self.list_len,
            "bound": self.bound,
            "members": self.members.iter().zip(&self.correlations).map(|(m, c)| json!({
                "indices": m.indices(),
                "correlation": [c.re, c.im],
            })).collect::<Vec<_>>(),
        })
    }
}

/// Fix the listed `(coordinate, symbol)` pairs of a dense function; the
/// remaining coordinates keep their relative order. Fixing everything leaves
/// a 0-ary function holding the single substituted value.
pub fn restrict_function(f: &TensorFunction, fixed: &[(usize, usize)]) -> Result<TensorFunction> {
    let n = f.n();
    let m = f.alphabet_size();
    check_fixed(fixed, n, m)?;
    let mut pinned: Vec<Option<usize>> = vec![None; n];
    for &(coord, symbol) in fixed {
        pinned[coord] = Some(symbol);
    }
    let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
    TensorFunction::from_fn(free.len(), f.weights().to_vec(), |t| {
        let mut idx = 0usize;
        let mut at = 0usize;
        for i in 0..n {
            let sym = match pinned[i] {
                Some(s) => s,
                None => {
                    let s = t[at];
                    at += 1;
                    s
                }
            };
            idx = idx * m + sym;
        }
        f.values()[idx]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn z3_class(weights: Vec<f64>) -> ProductClass {
        let g = AbelianGroup::cyclic(3);
        let sigma: Vec<GroupElem> = (0..3u64).map(|v| vec![v]).collect();
        ProductClass::from_embedding(weights, &g, &sigma).unwrap()
    }

    fn random_tensor(n: usize, weights: &[f64], seed: u64, label: &str) -> TensorFunction {
        let mut r = rng::substream(seed, label);
        let len = weights.len().pow(n as u32);
        let values = (0..len)
            .map(|_| c(r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0))
            .collect();
        TensorFunction::new(n, weights.to_vec(), values).unwrap()
    }

    #[test]
    fn orthogonal_characters_have_full_separation() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        assert_eq!(class.len(), 3);
        assert_abs_diff_eq!(class.separation(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn biased_measure_separation_matches_the_pairwise_oracle() {
        // oracle first: with weights (1/2, 1/4, 1/4) every distinct character
        // pair on Z_3 has |<p,q>| = |1/2 + (1/4)(w + w^2)| = 1/4, so the
        // separation constant is 3/4
        let class = z3_class(vec![0.5, 0.25, 0.25]);
        let mut worst = f64::INFINITY;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mut acc = c(0.0, 0.0);
                for (a, w) in [0.5, 0.25, 0.25].iter().enumerate() {
                    acc += w * class.factor(i)[a] * class.factor(j)[a].conj();
                }
                worst = worst.min(1.0 - acc.norm());
            }
        }
        assert_abs_diff_eq!(worst, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(class.separation(), 0.75, epsilon = 1e-12);
        assert!(class.separation() > 0.0 && class.separation() < 1.0);
    }

    #[test]
    fn duplicated_dictionary_entries_are_rejected() {
        let p = vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)];
        let err = ProductClass::from_dictionary(vec![1.0 / 3.0; 3], vec![p.clone(), p]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn closure_requires_unit_modulus_factors() {
        let p = vec![c(1.0, 0.0), c(0.5, 0.0), c(-1.0, 0.0)];
        let q = vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)];
        let err = ProductClass::from_dictionary(vec![1.0 / 3.0; 3], vec![p, q]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn collapsing_sigma_dedupes_characters() {
        // constant sigma: every character composes to the all-ones factor
        let g = AbelianGroup::cyclic(3);
        let sigma = vec![vec![0u64], vec![0], vec![0]];
        let class = ProductClass::from_embedding(vec![1.0 / 3.0; 3], &g, &sigma).unwrap();
        assert_eq!(class.len(), 1);
        assert_abs_diff_eq!(class.separation(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn member_function_matches_factor_products() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let m = class.member(vec![1, 2, 0]).unwrap();
        let f = class.member_function(&m).unwrap();
        assert_eq!(f.n(), 3);
        let point = [2usize, 1, 0];
        let want = class.factor(1)[2] * class.factor(2)[1] * class.factor(0)[0];
        assert_abs_diff_eq!(f.value(&point).re, want.re, epsilon = 1e-15);
        assert_abs_diff_eq!(f.value(&point).im, want.im, epsilon = 1e-15);
    }

    #[test]
    fn factored_inner_product_matches_the_tensor_inner_product() {
        let class = z3_class(vec![0.5, 0.3, 0.2]);
        let a = class.member(vec![0, 1, 2, 1]).unwrap();
        let b = class.member(vec![2, 1, 0, 1]).unwrap();
        let fast = class.member_inner(&a, &b).unwrap();
        let full = class
            .member_function(&a)
            .unwrap()
            .to_tensor()
            .unwrap()
            .inner_product(&class.member_function(&b).unwrap().to_tensor().unwrap())
            .unwrap();
        assert!((fast - full).norm() <= 1e-12, "{fast} vs {full}");
    }

    #[test]
    fn correlation_list_of_a_member_is_that_member() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let m = class.member(vec![2, 0, 1]).unwrap();
        let f = class.member_function(&m).unwrap().to_tensor().unwrap();
        let list = class.correlation_list(&f, 1.0 - 1e-9).unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].0.indices(), &[2, 0, 1]);
        assert_abs_diff_eq!(list[0].1.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(list[0].1.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_function_yields_an_empty_list() {
        // class of one character only; an orthogonal character never enters
        let g = AbelianGroup::cyclic(3);
        let sigma: Vec<GroupElem> = (0..3u64).map(|v| vec![v]).collect();
        let chars = all_characters(&g);
        let dict = vec![chars[1].compose(&sigma)];
        let class = ProductClass::from_dictionary(vec![1.0 / 3.0; 3], dict).unwrap();
        assert_abs_diff_eq!(class.separation(), 1.0, epsilon = 0.0);
        let f = TensorFunction::new(1, vec![1.0 / 3.0; 3], chars[2].compose(&sigma)).unwrap();
        let list = class.correlation_list(&f, 0.1).unwrap();
        assert!(list.is_empty());
    }

    #[test]
    fn random_scan_matches_a_bruteforce_oracle() {
        let weights = vec![0.5, 0.25, 0.25];
        let class = z3_class(weights.clone());
        let f = random_tensor(4, &weights, 31, "product.test.scan");
        let eps = 0.3;
        let list = class.correlation_list(&f, eps).unwrap();

        // oracle: re-enumerate with plain nested loops and a direct pointwise
        // inner product
        let mut oracle: Vec<(Vec<usize>, Complex64)> = Vec::new();
        let mut idx = [0usize; 4];
        loop {
            let mut acc = c(0.0, 0.0);
            let mut point = [0usize; 4];
            loop {
                let w: f64 = point.iter().map(|&x| weights[x]).product();
                let fv = {
                    let mut code = 0;
                    for &x in &point {
                        code = code * 3 + x;
                    }
                    f.values()[code]
                };
                let pv: Complex64 =
                    point.iter().zip(&idx).map(|(&x, &k)| class.factor(k)[x]).product();
                acc += w * fv * pv.conj();
                let mut at = 3;
                loop {
                    point[at] += 1;
                    if point[at] < 3 {
                        break;
                    }
                    point[at] = 0;
                    if at == 0 {
                        break;
                    }
                    at -= 1;
                }
                if point == [0, 0, 0, 0] {
                    break;
                }
            }
            if acc.norm() >= eps {
                oracle.push((idx.to_vec(), acc));
            }
            let mut at = 3;
            loop {
                idx[at] += 1;
                if idx[at] < 3 {
                    break;
                }
                idx[at] = 0;
                if at == 0 {
                    break;
                }
                at -= 1;
            }
            if idx == [0, 0, 0, 0] {
                break;
            }
        }

        assert!(!list.is_empty(), "fixture should correlate with something");
        assert_eq!(list.len(), oracle.len());
        for ((mem, got), (want_idx, want)) in list.iter().zip(&oracle) {
            assert_eq!(mem.indices(), &want_idx[..]);
            assert!((got - want).norm() <= 1e-12);
        }
    }

    #[test]
    fn scan_rejects_mismatched_weights() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let f = random_tensor(2, &[0.5, 0.25, 0.25], 1, "product.test.mismatch");
        assert!(matches!(class.correlation_list(&f, 0.5), Err(Error::Argument(_))));
    }

    #[test]
    fn scan_budget_is_enforced() {
        // 3^13 members over 3^13 points blows the work budget
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let f = TensorFunction::constant(13, vec![1.0 / 3.0; 3], c(1.0, 0.0)).unwrap();
        assert!(matches!(class.correlation_list(&f, 0.5), Err(Error::Resource(_))));
    }

    #[test]
    fn short_list_requires_delta_below_eps_squared() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let f = random_tensor(2, &[1.0 / 3.0; 3], 2, "product.test.args");
        assert!(matches!(class.short_list(&f, 0.3, 0.09), Err(Error::Argument(_))));
        assert!(matches!(class.short_list(&f, 0.3, -0.1), Err(Error::Argument(_))));
        assert!(class.short_list(&f, 0.3, 0.05).is_ok());
    }

    #[test]
    fn short_list_of_a_single_character_is_that_character() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let m = class.member(vec![1]).unwrap();
        let f = class.member_function(&m).unwrap().to_tensor().unwrap();
        let sl = class.short_list(&f, 0.9, 0.5).unwrap();
        assert_eq!(sl.len(), 1);
        assert_eq!(sl.members[0].indices(), &[1]);
        assert_eq!(sl.list_len, 1);
    }

    #[test]
    fn empty_list_gives_an_empty_short_list() {
        let g = AbelianGroup::cyclic(3);
        let sigma: Vec<GroupElem> = (0..3u64).map(|v| vec![v]).collect();
        let chars = all_characters(&g);
        let dict = vec![chars[1].compose(&sigma)];
        let class = ProductClass::from_dictionary(vec![1.0 / 3.0; 3], dict).unwrap();
        let f = TensorFunction::new(1, vec![1.0 / 3.0; 3], chars[2].compose(&sigma)).unwrap();
        let sl = class.short_list(&f, 0.5, 0.1).unwrap();
        assert!(sl.is_empty());
        assert_eq!(sl.list_len, 0);
    }

    #[test]
    fn spread_correlation_keeps_the_short_list_within_the_bound() {
        // f is a balanced mix of five pairwise-orthogonal members, each of
        // correlation 1/sqrt(5) ~ 0.447 with f
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let picks = [
            vec![1usize, 1, 1, 1, 1],
            vec![2, 2, 2, 2, 2],
            vec![1, 2, 1, 2, 1],
            vec![2, 1, 2, 1, 2],
            vec![1, 1, 2, 2, 0],
        ];
        let mut values = vec![c(0.0, 0.0); 3usize.pow(5)];
        for p in &picks {
            let m = class.member(p.clone()).unwrap();
            let t = class.member_function(&m).unwrap().to_tensor().unwrap();
            for (v, add) in values.iter_mut().zip(t.values()) {
                *v += add / 5f64.sqrt();
            }
        }
        let f = TensorFunction::new(5, vec![1.0 / 3.0; 3], values).unwrap();
        let eps = 0.3;
        let delta = 0.05;
        let list = class.correlation_list(&f, eps).unwrap();
        assert!(list.len() >= picks.len());
        let sl = class.short_list(&f, eps, delta).unwrap();
        assert!((sl.len() as f64) < 1.0 / (eps * eps - delta), "{} members", sl.len());
        assert!(class.covers(&list, &sl, delta).unwrap());
        // kept members are pairwise at most delta-correlated
        for i in 0..sl.len() {
            for j in i + 1..sl.len() {
                let ip = class.member_inner(&sl.members[i], &sl.members[j]).unwrap().norm();
                assert!(ip <= delta + 1e-12, "pair ({i},{j}) correlates at {ip}");
            }
        }
    }

    #[test]
    fn short_list_is_deterministic_and_lexicographic() {
        let weights = vec![0.5, 0.25, 0.25];
        let class = z3_class(weights.clone());
        let f = random_tensor(3, &weights, 77, "product.test.canon");
        let a = class.short_list(&f, 0.25, 0.03).unwrap();
        let b = class.short_list(&f, 0.25, 0.03).unwrap();
        let ai: Vec<_> = a.members.iter().map(|m| m.indices().to_vec()).collect();
        let bi: Vec<_> = b.members.iter().map(|m| m.indices().to_vec()).collect();
        assert_eq!(ai, bi);
        let mut sorted = ai.clone();
        sorted.sort();
        assert_eq!(ai, sorted, "kept members should arrive in lexicographic order");
    }

    #[test]
    fn symbolic_distance_counts_differing_factors() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let a = class.member(vec![0, 1, 2, 1]).unwrap();
        assert_eq!(class.symbolic_distance(&a, &a).unwrap(), 0);
        let b = class.member(vec![0, 2, 2, 1]).unwrap();
        assert_eq!(class.symbolic_distance(&a, &b).unwrap(), 1);
        // one differing coordinate: |<a,b>| <= 1 - separation
        let ip = class.member_inner(&a, &b).unwrap().norm();
        assert!(ip <= 1.0 - class.separation() + 1e-12);
        assert!(class.correlation_bound_check(&a, &b).unwrap());
    }

    #[test]
    fn fully_distinct_characters_meet_the_zero_bound() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let a = class.member(vec![1, 1, 1, 1]).unwrap();
        let b = class.member(vec![2, 2, 2, 2]).unwrap();
        assert_eq!(class.symbolic_distance(&a, &b).unwrap(), 4);
        // uniform measure: distinct characters are orthogonal, so the inner
        // product is 0 <= (1 - 1)^4
        assert_abs_diff_eq!(class.member_inner(&a, &b).unwrap().norm(), 0.0, epsilon = 1e-12);
        assert!(class.correlation_bound_check(&a, &b).unwrap());
    }

    #[test]
    fn correlation_bound_holds_over_seeded_members(){
        let weights = vec![0.5, 0.3, 0.2];
        let class = z3_class(weights);
        let mut r = rng::substream(5, "product.test.bound");
        for _ in 0..200 {
            let n = r.random_range(1..=5usize);
            let a = class.member((0..n).map(|_| r.random_range(0..3usize)).collect()).unwrap();
            let b = class.member((0..n).map(|_| r.random_range(0..3usize)).collect()).unwrap();
            assert!(class.correlation_bound_check(&a, &b).unwrap());
        }
    }

    #[test]
    fn cross_class_comparisons_are_rejected() {
        let c1 = z3_class(vec![1.0 / 3.0; 3]);
        let c2 = z3_class(vec![1.0 / 3.0; 3]);
        let a = c1.member(vec![0, 1]).unwrap();
        let b = c2.member(vec![0, 1]).unwrap();
        assert!(matches!(c1.symbolic_distance(&a, &b), Err(Error::Argument(_))));
        assert!(matches!(c1.member_inner(&a, &b), Err(Error::Argument(_))));
        assert!(matches!(c2.member_function(&a), Err(Error::Argument(_))));
    }

    #[test]
    fn restricting_a_member_keeps_the_tail_and_a_unit_constant() {
        let class = z3_class(vec![0.5, 0.25, 0.25]);
        let m = class.member(vec![1, 2, 0, 1]).unwrap();
        let (rest, theta) = class.restrict_member(&m, &[(1, 2), (3, 0)]).unwrap();
        assert_eq!(rest.indices(), &[1, 0]);
        assert_abs_diff_eq!(theta.norm(), 1.0, epsilon = 1e-12);
        let want = class.factor(2)[2] * class.factor(1)[0];
        assert!((theta - want).norm() <= 1e-12);
        // substitution agrees pointwise with theta times the short member
        let full = class.member_function(&m).unwrap();
        let short = class.member_function(&rest).unwrap();
        for x0 in 0..3 {
            for x2 in 0..3 {
                let lhs = full.value(&[x0, 2, x2, 0]);
                let rhs = theta * short.value(&[x0, x2]);
                assert!((lhs - rhs).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn restricted_product_normalizes_its_leading_value() {
        let class = z3_class(vec![1.0 / 3.0; 3]);
        let m = class.member(vec![1, 2, 1]).unwrap();
        let f = class.member_function(&m).unwrap();
        let (g, phase) = f.restrict(&[(0, 2)]).unwrap();
        assert_eq!(g.n(), 2);
        assert_abs_diff_eq!(phase.norm(), 1.0, epsilon = 1e-12);
        let lead = g.factors()[0][0];
        assert!(lead.re > 0.0 && lead.im.abs() <= 1e-12, "leading value {lead}");
        // phase * g is the plain substitution
        for y in 0..3 {
            for z in 0..3 {
                let lhs = f.value(&[2, y, z]);
                let rhs = phase * g.value(&[y, z]);
                assert!((lhs - rhs).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_restriction_reports_unit_phase() {
        let weights = vec![0.5, 0.5];
        let p = vec![c(0.0, 0.0), c(1.0, 0.0)];
        let q = vec![c(1.0, 0.0), c(-1.0, 0.0)];
        let f = ProductFunction::new(weights, vec![p, q]).unwrap();
        let (g, phase) = f.restrict(&[(0, 0)]).unwrap();
        assert_eq!(phase, c(1.0, 0.0));
        assert!(g.factors()[0].iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn overlong_factors_and_bad_indices_are_rejected() {
        let err = ProductFunction::new(vec![0.5, 0.5], vec![vec![c(2.0, 0.0), c(0.0, 0.0)]]);
        assert!(matches!(err, Err(Error::Argument(_))));
        let class = z3_class(vec![1.0 / 3.0; 3]);
        assert!(matches!(class.member(vec![0, 3]), Err(Error::Argument(_))));
        assert!(matches!(class.member(vec![]), Err(Error::Argument(_))));
    }

    #[test]
    fn restrict_function_fixes_coordinates_in_place() {
        let weights = vec![0.5, 0.25, 0.25];
        let f = random_tensor(3, &weights, 13, "product.test.restrict");
        let g = restrict_function(&f, &[(1, 2)]).unwrap();
        assert_eq!(g.n(), 2);
        for a in 0..3usize {
            for b in 0..3usize {
                let full = f.values()[(a * 3 + 2) * 3 + b];
                let cut = g.values()[a * 3 + b];
                assert_eq!(full, cut);
            }
        }
        // fixing everything leaves the single substituted value
        let point = restrict_function(&f, &[(0, 1), (1, 0), (2, 2)]).unwrap();
        assert_eq!(point.n(), 0);
        assert_eq!(point.values().len(), 1);
        assert_eq!(point.values()[0], f.values()[(1 * 3 + 0) * 3 + 2]);
        assert!(matches!(restrict_function(&f, &[(0, 1), (0, 2)]), Err(Error::Argument(_))));
        assert!(matches!(restrict_function(&f, &[(5, 0)]), Err(Error::Argument(_))));
    }

    #[test]
    fn unit_vector_families_overfilling_their_dimension_must_correlate() {
        // l unit vectors in C^k with k <= l - 1: some pair has
        // |<u_i, u_j>| >= 1 / (k l), by the Gram trace argument
        for (seed, k) in [(1u64, 2usize), (2, 3), (3, 4), (4, 5)] {
            let l = k + 1;
            let mut r = rng::substream(seed, "product.test.dim");
            let vecs: Vec<Vec<Complex64>> = (0..l)
                .map(|_| {
                    let mut v: Vec<Complex64> = (0..k)
                        .map(|_| c(r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0))
                        .collect();
                    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    for z in v.iter_mut() {
                        *z /= norm;
                    }
                    v
                })
                .collect();
            let mut best = 0.0f64;
            for i in 0..l {
                for j in i + 1..l {
                    let ip: Complex64 =
                        vecs[i].iter().zip(&vecs[j]).map(|(u, v)| u * v.conj()).sum();
                    best = best.max(ip.norm());
                }
            }
            assert!(
                best >= 1.0 / (k * l) as f64,
                "k = {k}: best pair correlation {best} below 1/{}",
                k * l
            );
        }
    }

    #[test]
    fn restrictions_keep_a_quarter_eta_squared_of_the_correlation() {
        // for |<f,g>| = eta, restricting the coordinates outside I keeps
        // |<f_rest, g_rest>| >= eta/2 with probability >= eta^2/4; exact
        // enumeration over all substitutions
        let weight_sets = [vec![0.5, 0.5], vec![0.7, 0.3]];
        for (wi, weights) in weight_sets.iter().enumerate() {
            for n in 2..=4usize {
                for seed in 0..6u64 {
                    let label = format!("product.test.keep.{wi}.{n}");
                    let raw = random_tensor(n, weights, seed, &label);
                    let scale = raw.norm2().sqrt().max(1.0);
                    let f = raw.scale(c(1.0 / scale, 0.0));
                    let mut g = random_tensor(n, weights, seed + 100, &label);
                    let sup = g.sup_norm();
                    if sup > 1.0 {
                        g = g.scale(c(1.0 / sup, 0.0));
                    }
                    let eta = f.inner_product(&g).unwrap().norm();
                    if eta < 1e-3 {
                        continue;
                    }
                    // fix the complement of I = {0}: coordinates 1..n
                    let outside: Vec<usize> = (1..n).collect();
                    let mut good_mass = 0.0;
                    let mut total = 0.0;
                    let m = weights.len();
                    let count = m.pow(outside.len() as u32);
                    for code in 0..count {
                        let mut sub = Vec::new();
                        let mut rest = code;
                        for &coordinate in outside.iter().rev() {
                            sub.push((coordinate, rest % m));
                            rest /= m;
                        }
                        let w: f64 = sub.iter().map(|&(_, s)| weights[s]).product();
                        let fr = restrict_function(&f, &sub).unwrap();
                        let gr = restrict_function(&g, &sub).unwrap();
                        let ip = fr.inner_product(&gr).unwrap().norm();
                        if ip >= eta / 2.0 {
                            good_mass += w;
                        }
                        total += w;
                    }
                    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
                    assert!(
                        good_mass >= eta * eta / 4.0 - 1e-12,
                        "n = {n} seed = {seed}: mass {good_mass} below {}",
                        eta * eta / 4.0
                    );
                }
            }
        }
    }

    #[test]
    fn product_event_probability_survives_tensoring() {
        // Pr[E] >= delta over independent X, Y implies the k x l grid of
        // independent copies satisfies all events with probability at least
        // delta^(k l); exact enumeration
        let mut r = rng::substream(9, "product.test.holder");
        for trial in 0..30 {
            let nx = r.random_range(2..=4usize);
            let ny = r.random_range(2..=4usize);
            let px: Vec<f64> = {
                let raw: Vec<f64> = (0..nx).map(|_| r.random::<f64>() + 0.1).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            };
            let py: Vec<f64> = {
                let raw: Vec<f64> = (0..ny).map(|_| r.random::<f64>() + 0.1).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            };
            let event: Vec<Vec<bool>> =
                (0..nx).map(|_| (0..ny).map(|_| r.random::<f64>() < 0.6).collect()).collect();
            let delta: f64 = (0..nx)
                .map(|x| {
                    (0..ny).map(|y| if event[x][y] { px[x] * py[y] } else { 0.0 }).sum::<f64>()
                })
                .sum();
            for (k, l) in [(1usize, 2usize), (2, 1), (2, 2)] {
                // enumerate all tuples (x_1..x_k, y_1..y_l)
                let mut joint = 0.0;
                let tuples = nx.pow(k as u32) * ny.pow(l as u32);
                for code in 0..tuples {
                    let mut rest = code;
                    let xs: Vec<usize> = (0..k)
                        .map(|_| {
                            let v = rest % nx;
                            rest /= nx;
                            v
                        })
                        .collect();
                    let ys: Vec<usize> = (0..l)
                        .map(|_| {
                            let v = rest % ny;
                            rest /= ny;
                            v
                        })
                        .collect();
                    let all = xs.iter().all(|&x| ys.iter().all(|&y| event[x][y]));
                    if all {
                        let w: f64 = xs.iter().map(|&x| px[x]).product::<f64>()
                            * ys.iter().map(|&y| py[y]).product::<f64>();
                        joint += w;
                    }
                }
                assert!(
                    joint >= delta.powi((k * l) as i32) - 1e-12,
                    "trial {trial} k={k} l={l}: {joint} < {}",
                    delta.powi((k * l) as i32)
                );
            }
        }
    }
}
