//! L2 machinery on product spaces `Sigma^n`: the embedding / non-embedding /
//! modest split of the univariate function space, degree and Efron-Stein
//! decompositions, noise operators with their closed-form eigenvalues,
//! stabilities, influences, restrictions, Markov chain spectra, and the wrap
//! that moves functions of the determined coordinate onto the pair space.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::ToPrimitive;
use rayon::prelude::*;

use crate::dist::{Coord, TripleDist};
use crate::error::{Error, Result};
use crate::group::{all_characters, AbelianGroup, GroupElem};
use crate::tensor::TensorFunction;
use crate::tolerance;

/// `E_w[u conj(v)]` for univariate tables.
fn uni_ip(weights: &[f64], u: &[Complex64], v: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for ((&w, a), b) in weights.iter().zip(u).zip(v) {
        acc += w * a * b.conj();
    }
    acc
}

/// Project `cand` off the span of `elements` and normalize. Returns None when
/// the residual is below the rank cutoff. Two projection passes keep the Gram
/// matrix of the accepted set near identity.
fn orthonormalize_against(
    weights: &[f64],
    elements: &[Vec<Complex64>],
    cand: &[Complex64],
) -> Option<Vec<Complex64>> {
    let mut r = cand.to_vec();
    for _ in 0..2 {
        for b in elements {
            let c = uni_ip(weights, &r, b);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= c * bi;
            }
        }
    }
    let norm = uni_ip(weights, &r, &r).re.max(0.0).sqrt();
    if norm <= tolerance::RANK {
        return None;
    }
    let s = 1.0 / norm;
    Some(r.into_iter().map(|v| v * s).collect())
}

/// Where a basis element sits in the split.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BasisTag {
    /// A character composed with the embedding map; carries the character index.
    Embed(usize),
    /// Orthogonal to the embedding span and constant on the modest set.
    NonEmbed,
    /// Supported on the modest set with zero mean there.
    Modest,
}

/// Orthonormal univariate basis split into the embedding span, its
/// modest-constant complement, and the remainder carried by the modest set.
#[derive(Clone, Debug)]
pub struct SplitBasis {
    weights: Vec<f64>,
    elements: Vec<Vec<Complex64>>,
    tags: Vec<BasisTag>,
    group: AbelianGroup,
    sigma: Vec<GroupElem>,
    modest: Option<Vec<usize>>,
}

impl SplitBasis {
    /// Pivoted Gram-Schmidt over three candidate tiers: characters composed
    /// with `sigma` in character order, then indicators merged over the modest
    /// set, then plain indicators. Dependent candidates are dropped, so the
    /// embedding tier has exactly the rank of the composed character family.
    pub fn build(
        weights: &[f64],
        group: &AbelianGroup,
        sigma: &[GroupElem],
        modest: Option<&[usize]>,
    ) -> Result<SplitBasis> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::Argument("split basis needs a nonempty alphabet".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Argument(
                "split basis needs strictly positive weights".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tolerance::EQ {
            return Err(Error::Argument(format!(
                "split basis weights sum to {total}, expected 1"
            )));
        }
        if sigma.len() != m {
            return Err(Error::Argument(format!(
                "embedding map covers {} symbols, alphabet has {m}",
                sigma.len()
            )));
        }
        if sigma.iter().any(|v| !group.is_elem(v)) {
            return Err(Error::Argument("embedding map leaves the group".into()));
        }
        let modest = match modest {
            None => None,
            Some(list) => {
                let mut v = list.to_vec();
                v.sort_unstable();
                v.dedup();
                if v.len() != list.len() {
                    return Err(Error::Argument("modest symbols repeat".into()));
                }
                if v.len() < 2 {
                    return Err(Error::Argument(
                        "modest set needs at least two symbols".into(),
                    ));
                }
                if *v.last().expect("nonempty") >= m {
                    return Err(Error::Argument("modest symbol out of range".into()));
                }
                let lead = &sigma[v[0]];
                if v.iter().any(|&s| sigma[s] != *lead) {
                    return Err(Error::Argument(
                        "modest symbols must share one embedding value".into(),
                    ));
                }
                Some(v)
            }
        };

        let mut elements: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        let mut tags: Vec<BasisTag> = Vec::with_capacity(m);

        for (a, ch) in all_characters(group).iter().enumerate() {
            let cand = ch.compose(sigma);
            if let Some(b) = orthonormalize_against(weights, &elements, &cand) {
                elements.push(b);
                tags.push(BasisTag::Embed(a));
            }
        }
        for s in 0..m {
            let cand: Vec<Complex64> = match &modest {
                Some(ms) if ms.binary_search(&s).is_ok() => {
                    if s != ms[0] {
                        continue;
                    }
                    // one merged indicator keeps the tier constant on the set
                    (0..m)
                        .map(|t| {
                            Complex64::new(
                                if ms.binary_search(&t).is_ok() { 1.0 } else { 0.0 },
                                0.0,
                            )
                        })
                        .collect()
                }
                _ => (0..m)
                    .map(|t| Complex64::new(if t == s { 1.0 } else { 0.0 }, 0.0))
                    .collect(),
            };
            if let Some(b) = orthonormalize_against(weights, &elements, &cand) {
                elements.push(b);
                tags.push(BasisTag::NonEmbed);
            }
        }
        for s in 0..m {
            let cand: Vec<Complex64> = (0..m)
                .map(|t| Complex64::new(if t == s { 1.0 } else { 0.0 }, 0.0))
                .collect();
            if let Some(b) = orthonormalize_against(weights, &elements, &cand) {
                elements.push(b);
                tags.push(BasisTag::Modest);
            }
        }
        if elements.len() != m {
            return Err(Error::Argument(format!(
                "weights too degenerate to complete the basis: rank {} of {m}",
                elements.len()
            )));
        }
        Ok(SplitBasis {
            weights: weights.to_vec(),
            elements,
            tags,
            group: group.clone(),
            sigma: sigma.to_vec(),
            modest,
        })
    }

    /// Basis with no embedding structure: the constant plus indicator
    /// complements. Used for plain degree decompositions.
    pub fn plain(weights: &[f64]) -> Result<SplitBasis> {
        let sigma = vec![Vec::new(); weights.len()];
        SplitBasis::build(weights, &AbelianGroup::trivial(), &sigma, None)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn element(&self, k: usize) -> &[Complex64] {
        &self.elements[k]
    }

    pub fn tag(&self, k: usize) -> BasisTag {
        self.tags[k]
    }

    pub fn tags(&self) -> &[BasisTag] {
        &self.tags
    }

    pub fn group(&self) -> &AbelianGroup {
        &self.group
    }

    pub fn sigma(&self) -> &[GroupElem] {
        &self.sigma
    }

    pub fn modest_set(&self) -> Option<&[usize]> {
        self.modest.as_deref()
    }

    /// (embed, nonembed, modest) tier sizes.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for t in &self.tags {
            match t {
                BasisTag::Embed(_) => c.0 += 1,
                BasisTag::NonEmbed => c.1 += 1,
                BasisTag::Modest => c.2 += 1,
            }
        }
        c
    }

    /// Fiber label per symbol: symbols sharing an embedding value share a label.
    pub fn fiber_classes(&self) -> Vec<usize> {
        let mut seen: BTreeMap<&GroupElem, usize> = BTreeMap::new();
        for v in &self.sigma {
            let next = seen.len();
            seen.entry(v).or_insert(next);
        }
        self.sigma.iter().map(|v| seen[v]).collect()
    }

    /// Gram matrix entry, for diagnostics.
    pub fn gram(&self, a: usize, b: usize) -> Complex64 {
        uni_ip(&self.weights, &self.elements[a], &self.elements[b])
    }
}

/// One coefficient slot of an expansion: per-coordinate basis indices with the
/// degree counts cached.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Monomial {
    pub indices: Vec<usize>,
    /// coordinates carrying a non-constant element
    pub deg: usize,
    /// coordinates carrying an embedding element
    pub embeddeg: usize,
    /// coordinates carrying anything outside the embedding tier
    pub nedeg: usize,
    /// coordinates carrying a modest element
    pub effnon: usize,
    /// embedding coordinates bucketed by character index
    pub embeddeg_by_char: BTreeMap<usize, usize>,
}

impl Monomial {
    pub fn embeddeg_of(&self, char_index: usize) -> usize {
        self.embeddeg_by_char.get(&char_index).copied().unwrap_or(0)
    }
}

pub fn monomial_of(basis: &SplitBasis, indices: &[usize]) -> Result<Monomial> {
    let m = basis.len();
    if indices.iter().any(|&k| k >= m) {
        return Err(Error::Argument("monomial index outside the basis".into()));
    }
    let mut deg = 0;
    let mut embeddeg = 0;
    let mut nedeg = 0;
    let mut effnon = 0;
    let mut by_char: BTreeMap<usize, usize> = BTreeMap::new();
    for &k in indices {
        if k != 0 {
            deg += 1;
        }
        match basis.tags()[k] {
            BasisTag::Embed(a) => {
                embeddeg += 1;
                *by_char.entry(a).or_insert(0) += 1;
            }
            BasisTag::NonEmbed => nedeg += 1,
            BasisTag::Modest => {
                nedeg += 1;
                effnon += 1;
            }
        }
    }
    Ok(Monomial {
        indices: indices.to_vec(),
        deg,
        embeddeg,
        nedeg,
        effnon,
        embeddeg_by_char: by_char,
    })
}

/// The product function `x -> prod_j b_{k_j}(x_j)` as a table.
pub fn monomial_function(basis: &SplitBasis, indices: &[usize]) -> Result<TensorFunction> {
    let m = basis.len();
    if indices.iter().any(|&k| k >= m) {
        return Err(Error::Argument("monomial index outside the basis".into()));
    }
    let idx = indices.to_vec();
    TensorFunction::from_fn(idx.len(), basis.weights().to_vec(), |t| {
        idx.iter()
            .zip(t)
            .map(|(&k, &s)| basis.element(k)[s])
            .product()
    })
}

/// Apply the complex matrix `mat[out][in]` to coordinate `j` of a row-major
/// table. Pure gather per output entry, so the parallel and serial paths
/// produce identical bits.
fn coord_transform(
    values: &[Complex64],
    m: usize,
    n: usize,
    j: usize,
    mat: &[Vec<Complex64>],
) -> Vec<Complex64> {
    let stride = m.pow((n - 1 - j) as u32);
    let gather = |idx: usize| {
        let x = (idx / stride) % m;
        let base = idx - x * stride;
        let mut acc = Complex64::new(0.0, 0.0);
        for (xp, row) in mat[x].iter().enumerate() {
            acc += row * values[base + xp * stride];
        }
        acc
    };
    if values.len() >= 1 << 12 {
        (0..values.len()).into_par_iter().map(gather).collect()
    } else {
        (0..values.len()).map(gather).collect()
    }
}

/// Coefficients of a function in a tensor power of a split basis, stored
/// row-major over basis indices like the value table they came from.
#[derive(Clone, Debug)]
pub struct Expansion {
    basis: SplitBasis,
    n: usize,
    coeffs: Vec<Complex64>,
}

pub fn expand(f: &TensorFunction, basis: &SplitBasis) -> Result<Expansion> {
    let m = basis.len();
    if f.alphabet_size() != m {
        return Err(Error::Argument(format!(
            "function alphabet {} does not fit basis of size {m}",
            f.alphabet_size()
        )));
    }
    if f.weights()
        .iter()
        .zip(basis.weights())
        .any(|(a, b)| (a - b).abs() > tolerance::EQ)
    {
        return Err(Error::Argument(
            "function and basis carry different weights".into(),
        ));
    }
    // coefficient transform per coordinate: c_k = sum_s w(s) conj(b_k(s)) f(s)
    let mat: Vec<Vec<Complex64>> = (0..m)
        .map(|k| {
            (0..m)
                .map(|s| basis.weights()[s] * basis.element(k)[s].conj())
                .collect()
        })
        .collect();
    let mut cur = f.values().to_vec();
    for j in 0..f.n() {
        cur = coord_transform(&cur, m, f.n(), j, &mat);
    }
    Ok(Expansion { basis: basis.clone(), n: f.n(), coeffs: cur })
}

impl Expansion {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &SplitBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn indices_of(&self, flat: usize) -> Vec<usize> {
        let m = self.basis.len();
        let mut out = vec![0usize; self.n];
        let mut idx = flat;
        for slot in out.iter_mut().rev() {
            *slot = idx % m;
            idx /= m;
        }
        out
    }

    pub fn coeff(&self, indices: &[usize]) -> Complex64 {
        let m = self.basis.len();
        let flat = indices.iter().fold(0, |acc, &k| acc * m + k);
        self.coeffs[flat]
    }

    pub fn monomial_at(&self, flat: usize) -> Monomial {
        monomial_of(&self.basis, &self.indices_of(flat)).expect("stored indices are in range")
    }

    pub fn synthesize(&self) -> TensorFunction {
        let m = self.basis.len();
        let mat: Vec<Vec<Complex64>> = (0..m)
            .map(|s| (0..m).map(|k| self.basis.element(k)[s]).collect())
            .collect();
        let mut cur = self.coeffs.clone();
        for j in 0..self.n {
            cur = coord_transform(&cur, m, self.n, j, &mat);
        }
        TensorFunction::new(self.n, self.basis.weights().to_vec(), cur)
            .expect("expansion dimensions are consistent")
    }

    pub fn total_weight(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Mass on monomials of degree at most `d`, the constant included.
    pub fn low_weight(&self, d: usize) -> f64 {
        let m = self.basis.len();
        let mut acc = 0.0;
        for (flat, c) in self.coeffs.iter().enumerate() {
            let mut idx = flat;
            let mut deg = 0;
            for _ in 0..self.n {
                if idx % m != 0 {
                    deg += 1;
                }
                idx /= m;
            }
            if deg <= d {
                acc += c.norm_sqr();
            }
        }
        acc
    }

    /// Zero out every coefficient of degree above `d`.
    pub fn truncate(&self, d: usize) -> Expansion {
        let m = self.basis.len();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(flat, c)| {
                let mut idx = flat;
                let mut deg = 0;
                for _ in 0..self.n {
                    if idx % m != 0 {
                        deg += 1;
                    }
                    idx /= m;
                }
                if deg <= d {
                    *c
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Expansion { basis: self.basis.clone(), n: self.n, coeffs }
    }

    /// Zero out every coefficient whose monomial fails the predicate.
    pub fn retain(&self, mut keep: impl FnMut(&Monomial) -> bool) -> Expansion {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(flat, c)| {
                if c.norm_sqr() > 0.0 && keep(&self.monomial_at(flat)) {
                    *c
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Expansion { basis: self.basis.clone(), n: self.n, coeffs }
    }
}

/// Restrict a function to the symbols of positive weight, renaming them to
/// `0..k`. Values at dropped symbols are invisible to every inner product.
fn support_compress(f: &TensorFunction) -> (Vec<usize>, TensorFunction) {
    let sup: Vec<usize> = (0..f.alphabet_size())
        .filter(|&s| f.weights()[s] > 0.0)
        .collect();
    if sup.len() == f.alphabet_size() {
        return (sup, f.clone());
    }
    let w: Vec<f64> = sup.iter().map(|&s| f.weights()[s]).collect();
    let g = TensorFunction::from_fn(f.n(), w, |t| {
        let full: Vec<usize> = t.iter().map(|&i| sup[i]).collect();
        f.eval(&full)
    })
    .expect("compressed table keeps the invariants");
    (sup, g)
}

fn expand_plain(f: &TensorFunction) -> Result<(Vec<usize>, Expansion)> {
    let (sup, cf) = support_compress(f);
    let basis = SplitBasis::plain(cf.weights())?;
    let ex = expand(&cf, &basis)?;
    Ok((sup, ex))
}

/// Orthogonal pieces `f^{=S}` indexed by coordinate bitmask. Values at
/// zero-weight symbols resynthesize to zero.
pub struct EfronStein {
    pub n: usize,
    parts: Vec<TensorFunction>,
}

pub fn efron_stein(f: &TensorFunction) -> Result<EfronStein> {
    let n = f.n();
    if n >= usize::BITS as usize {
        return Err(Error::Resource(format!("{n} coordinates overflow the mask")));
    }
    let count = 1usize << n;
    if count.saturating_mul(f.len()) > 4_000_000 {
        return Err(Error::Resource(format!(
            "decomposition table {count} x {} too large",
            f.len()
        )));
    }
    let (sup, ex) = expand_plain(f)?;
    let mc = sup.len();
    let m = f.alphabet_size();
    // symbol -> compressed index, usize::MAX off support
    let mut back = vec![usize::MAX; m];
    for (i, &s) in sup.iter().enumerate() {
        back[s] = i;
    }
    let mut parts = Vec::with_capacity(count);
    for mask in 0..count {
        let kept: Vec<Complex64> = ex
            .coeffs()
            .iter()
            .enumerate()
            .map(|(flat, c)| {
                let mut idx = flat;
                let mut got = 0usize;
                for j in (0..n).rev() {
                    if idx % mc != 0 {
                        got |= 1 << j;
                    }
                    idx /= mc;
                }
                if got == mask {
                    *c
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let small = Expansion { basis: ex.basis().clone(), n, coeffs: kept }.synthesize();
        let part = TensorFunction::from_fn(n, f.weights().to_vec(), |t| {
            let mut ct = Vec::with_capacity(n);
            for &s in t {
                if back[s] == usize::MAX {
                    return Complex64::new(0.0, 0.0);
                }
                ct.push(back[s]);
            }
            small.eval(&ct)
        })
        .expect("part table keeps the invariants");
        parts.push(part);
    }
    Ok(EfronStein { n, parts })
}

impl EfronStein {
    pub fn part(&self, mask: usize) -> &TensorFunction {
        &self.parts[mask]
    }

    pub fn weight(&self, mask: usize) -> f64 {
        self.parts[mask].norm2()
    }

    /// Total mass on levels up to `d`, the empty set included.
    pub fn low_weight(&self, d: usize) -> f64 {
        self.parts
            .iter()
            .enumerate()
            .filter(|(mask, _)| mask.count_ones() as usize <= d)
            .map(|(_, p)| p.norm2())
            .sum()
    }

    /// Pointwise sum of the parts at levels up to `d`.
    pub fn truncate(&self, d: usize) -> TensorFunction {
        let mut acc = self.parts[0].clone();
        for (mask, p) in self.parts.iter().enumerate().skip(1) {
            if mask.count_ones() as usize <= d {
                acc = acc.add(p).expect("parts share a shape");
            }
        }
        acc
    }
}

/// Mass of `f` on degrees up to `d`, the constant included.
pub fn low_weight(f: &TensorFunction, d: usize) -> Result<f64> {
    let (_, ex) = expand_plain(f)?;
    Ok(ex.low_weight(d))
}

/// Degree truncation of `f`; values at zero-weight symbols come back as zero.
pub fn truncate_degree(f: &TensorFunction, d: usize) -> Result<TensorFunction> {
    let n = f.n();
    let m = f.alphabet_size();
    let (sup, ex) = expand_plain(f)?;
    let small = ex.truncate(d).synthesize();
    let mut back = vec![usize::MAX; m];
    for (i, &s) in sup.iter().enumerate() {
        back[s] = i;
    }
    TensorFunction::from_fn(n, f.weights().to_vec(), |t| {
        let mut ct = Vec::with_capacity(n);
        for &s in t {
            if back[s] == usize::MAX {
                return Complex64::new(0.0, 0.0);
            }
            ct.push(back[s]);
        }
        small.eval(&ct)
    })
}

/// Row-stochastic single-coordinate chain, validated to be reversible with
/// the declared stationary law.
#[derive(Clone, Debug)]
pub struct MarkovChain {
    matrix: Vec<Vec<f64>>,
    stationary: Vec<f64>,
}

impl MarkovChain {
    pub fn new(matrix: Vec<Vec<f64>>, stationary: Vec<f64>) -> Result<MarkovChain> {
        let m = stationary.len();
        if m == 0 || matrix.len() != m || matrix.iter().any(|row| row.len() != m) {
            return Err(Error::Argument("chain matrix must be square over the alphabet".into()));
        }
        if stationary.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Argument(
                "chain stationary law must be strictly positive".into(),
            ));
        }
        let total: f64 = stationary.iter().sum();
        if (total - 1.0).abs() > tolerance::EQ {
            return Err(Error::Argument(format!(
                "chain stationary law sums to {total}, expected 1"
            )));
        }
        let mut cleaned = matrix;
        for row in cleaned.iter_mut() {
            let mut sum = 0.0;
            for e in row.iter_mut() {
                if !e.is_finite() || *e < -1e-12 {
                    return Err(Error::Argument("chain entries must be nonnegative".into()));
                }
                *e = e.max(0.0);
                sum += *e;
            }
            if (sum - 1.0).abs() > tolerance::EQ {
                return Err(Error::Argument(format!(
                    "chain row sums to {sum}, expected 1"
                )));
            }
        }
        for xp in 0..m {
            let hit: f64 = (0..m).map(|x| stationary[x] * cleaned[x][xp]).sum();
            if (hit - stationary[xp]).abs() > tolerance::EQ {
                return Err(Error::Argument(
                    "declared law is not stationary for the chain".into(),
                ));
            }
        }
        for x in 0..m {
            for xp in (x + 1)..m {
                let fwd = stationary[x] * cleaned[x][xp];
                let bwd = stationary[xp] * cleaned[xp][x];
                if (fwd - bwd).abs() > tolerance::EQ {
                    return Err(Error::Argument("chain is not reversible".into()));
                }
            }
        }
        Ok(MarkovChain { matrix: cleaned, stationary })
    }

    pub fn size(&self) -> usize {
        self.stationary.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Connected components of the transition graph (an undirected graph by
    /// reversibility).
    pub fn components(&self) -> usize {
        let m = self.size();
        let mut label = vec![usize::MAX; m];
        let mut count = 0;
        for start in 0..m {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = count;
            while let Some(x) = stack.pop() {
                for xp in 0..m {
                    if label[xp] == usize::MAX
                        && (self.matrix[x][xp] > 0.0 || self.matrix[xp][x] > 0.0)
                    {
                        label[xp] = count;
                        stack.push(xp);
                    }
                }
            }
            count += 1;
        }
        count
    }

    /// Averaging operator tensorized over every coordinate.
    pub fn apply(&self, f: &TensorFunction) -> Result<TensorFunction> {
        let m = self.size();
        if f.alphabet_size() != m {
            return Err(Error::Argument(format!(
                "function alphabet {} does not fit chain of size {m}",
                f.alphabet_size()
            )));
        }
        if f.weights()
            .iter()
            .zip(&self.stationary)
            .any(|(a, b)| (a - b).abs() > tolerance::EQ)
        {
            return Err(Error::Argument(
                "function measure differs from the chain's stationary law".into(),
            ));
        }
        let mat: Vec<Vec<Complex64>> = self
            .matrix
            .iter()
            .map(|row| row.iter().map(|&e| Complex64::new(e, 0.0)).collect())
            .collect();
        let mut cur = f.values().to_vec();
        for j in 0..f.n() {
            cur = coord_transform(&cur, m, f.n(), j, &mat);
        }
        TensorFunction::new(f.n(), f.weights().to_vec(), cur)
    }
}

/// Stay with probability `rho`, otherwise resample from `weights`.
pub fn standard_chain(weights: &[f64], rho: f64) -> Result<MarkovChain> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Argument(format!("noise rate {rho} outside [0,1]")));
    }
    let m = weights.len();
    let matrix = (0..m)
        .map(|x| {
            (0..m)
                .map(|xp| {
                    let stay = if x == xp { rho } else { 0.0 };
                    stay + (1.0 - rho) * weights[xp]
                })
                .collect()
        })
        .collect();
    MarkovChain::new(matrix, weights.to_vec())
}

/// Stay with probability `rho`, otherwise resample from `weights` conditioned
/// on the class of the current symbol.
pub fn partition_chain(weights: &[f64], classes: &[usize], rho: f64) -> Result<MarkovChain> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Argument(format!("noise rate {rho} outside [0,1]")));
    }
    let m = weights.len();
    if classes.len() != m {
        return Err(Error::Argument("class labels must cover the alphabet".into()));
    }
    let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
    for (s, &c) in classes.iter().enumerate() {
        *mass.entry(c).or_insert(0.0) += weights[s];
    }
    let matrix = (0..m)
        .map(|x| {
            let me = mass[&classes[x]];
            (0..m)
                .map(|xp| {
                    let stay = if x == xp { rho } else { 0.0 };
                    let jump = if classes[xp] == classes[x] {
                        (1.0 - rho) * weights[xp] / me
                    } else {
                        0.0
                    };
                    stay + jump
                })
                .collect()
        })
        .collect();
    MarkovChain::new(matrix, weights.to_vec())
}

/// One modest step: symbols outside the set stay put, symbols inside resample
/// from `weights` conditioned on the set.
pub fn modest_step_chain(weights: &[f64], modest: &[usize]) -> Result<MarkovChain> {
    let m = weights.len();
    let mut ms = modest.to_vec();
    ms.sort_unstable();
    ms.dedup();
    if ms.len() != modest.len() || ms.iter().any(|&s| s >= m) {
        return Err(Error::Argument("modest symbols must be distinct and in range".into()));
    }
    let mass: f64 = ms.iter().map(|&s| weights[s]).sum();
    if mass <= 0.0 {
        return Err(Error::Argument("modest set carries no mass".into()));
    }
    let inside = |s: usize| ms.binary_search(&s).is_ok();
    let matrix = (0..m)
        .map(|x| {
            (0..m)
                .map(|xp| {
                    if inside(x) {
                        if inside(xp) {
                            weights[xp] / mass
                        } else {
                            0.0
                        }
                    } else if x == xp {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    MarkovChain::new(matrix, weights.to_vec())
}

/// Eigenvalues of the averaging operator, descending, plus the component
/// count of the transition graph.
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub components: usize,
}

pub fn markov_spectrum(chain: &MarkovChain) -> Spectrum {
    let m = chain.size();
    let mu = chain.stationary();
    let raw = DMatrix::from_fn(m, m, |x, xp| {
        (mu[x] / mu[xp]).sqrt() * chain.matrix()[x][xp]
    });
    // reversibility makes this symmetric up to rounding; force it exactly
    let sym = (&raw + raw.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalues are finite"));
    Spectrum { eigenvalues: ev, components: chain.components() }
}

/// Which single-coordinate averaging chain a noise operator tensorizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// stay/resample against the full measure; eigenvalue `rho^deg`
    Standard { rho: f64 },
    /// stay/resample within the embedding fiber; eigenvalue `rho^nedeg`
    NonEmbed { rho: f64 },
    /// stay/modest step; eigenvalue `rho^effnon`
    Effective { rho: f64 },
}

/// A validated noise operator: the kind fixes the closed-form eigenvalues and
/// the chain carries the actual matrix.
#[derive(Clone, Debug)]
pub struct NoiseOperatorSpec {
    kind: NoiseKind,
    chain: MarkovChain,
}

impl NoiseOperatorSpec {
    pub fn standard(weights: &[f64], rho: f64) -> Result<NoiseOperatorSpec> {
        Ok(NoiseOperatorSpec {
            kind: NoiseKind::Standard { rho },
            chain: standard_chain(weights, rho)?,
        })
    }

    pub fn nonembed(basis: &SplitBasis, rho: f64) -> Result<NoiseOperatorSpec> {
        Ok(NoiseOperatorSpec {
            kind: NoiseKind::NonEmbed { rho },
            chain: partition_chain(basis.weights(), &basis.fiber_classes(), rho)?,
        })
    }

    pub fn effective(basis: &SplitBasis, rho: f64) -> Result<NoiseOperatorSpec> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Argument(format!("noise rate {rho} outside [0,1]")));
        }
        let ms = basis
            .modest_set()
            .ok_or_else(|| Error::Argument("effective noise needs a modest set".into()))?;
        let step = modest_step_chain(basis.weights(), ms)?;
        let m = basis.len();
        let matrix = (0..m)
            .map(|x| {
                (0..m)
                    .map(|xp| {
                        let stay = if x == xp { rho } else { 0.0 };
                        stay + (1.0 - rho) * step.matrix()[x][xp]
                    })
                    .collect()
            })
            .collect();
        Ok(NoiseOperatorSpec {
            kind: NoiseKind::Effective { rho },
            chain: MarkovChain::new(matrix, basis.weights().to_vec())?,
        })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn apply(&self, f: &TensorFunction) -> Result<TensorFunction> {
        self.chain.apply(f)
    }

    /// Closed-form eigenvalue on a monomial of the matching split basis.
    pub fn eigenvalue_on(&self, mono: &Monomial) -> f64 {
        match self.kind {
            NoiseKind::Standard { rho } => rho.powi(mono.deg as i32),
            NoiseKind::NonEmbed { rho } => rho.powi(mono.nedeg as i32),
            NoiseKind::Effective { rho } => rho.powi(mono.effnon as i32),
        }
    }
}

/// `<f, T f>` for the fiber-resample operator at stay probability `rho`.
/// Real because the operator is self-adjoint, nonnegative because it is a
/// convex blend of the identity and a projection.
pub fn nestab(f: &TensorFunction, basis: &SplitBasis, rho: f64) -> Result<f64> {
    let op = NoiseOperatorSpec::nonembed(basis, rho)?;
    let tf = op.apply(f)?;
    Ok(f.inner_product(&tf)?.re)
}

fn influence_formula(
    f: &TensorFunction,
    basis: &SplitBasis,
    pick: impl Fn(BasisTag) -> bool,
) -> Result<Vec<f64>> {
    let ex = expand(f, basis)?;
    let m = basis.len();
    let n = f.n();
    let mut out = vec![0.0; n];
    for (flat, c) in ex.coeffs().iter().enumerate() {
        let w = c.norm_sqr();
        if w == 0.0 {
            continue;
        }
        let mut idx = flat;
        for j in (0..n).rev() {
            let k = idx % m;
            idx /= m;
            if pick(basis.tags()[k]) {
                out[j] += 2.0 * w;
            }
        }
    }
    Ok(out)
}

/// Coefficient-formula influence of coordinate `j` under fiber resampling:
/// twice the mass of monomials whose j-th element leaves the embedding tier.
pub fn nonembed_influence(f: &TensorFunction, basis: &SplitBasis, j: usize) -> Result<f64> {
    let all = influence_formula(f, basis, |t| !matches!(t, BasisTag::Embed(_)))?;
    all.get(j)
        .copied()
        .ok_or_else(|| Error::Argument(format!("coordinate {j} out of range")))
}

pub fn total_nonembed_influence(f: &TensorFunction, basis: &SplitBasis) -> Result<f64> {
    Ok(influence_formula(f, basis, |t| !matches!(t, BasisTag::Embed(_)))?
        .iter()
        .sum())
}

/// Coefficient-formula influence of coordinate `j` under the modest step.
pub fn modest_influence(f: &TensorFunction, basis: &SplitBasis, j: usize) -> Result<f64> {
    if basis.modest_set().is_none() {
        return Err(Error::Argument("modest influence needs a modest set".into()));
    }
    let all = influence_formula(f, basis, |t| matches!(t, BasisTag::Modest))?;
    all.get(j)
        .copied()
        .ok_or_else(|| Error::Argument(format!("coordinate {j} out of range")))
}

pub fn total_modest_influence(f: &TensorFunction, basis: &SplitBasis) -> Result<f64> {
    if basis.modest_set().is_none() {
        return Err(Error::Argument("modest influence needs a modest set".into()));
    }
    Ok(influence_formula(f, basis, |t| matches!(t, BasisTag::Modest))?
        .iter()
        .sum())
}

/// The defining expectation: resample coordinate `j` by one step of `chain`
/// from its stationary start and average `|f(..a..) - f(..b..)|^2`.
fn influence_by_definition(f: &TensorFunction, chain: &MarkovChain, j: usize) -> Result<f64> {
    let m = f.alphabet_size();
    if chain.size() != m {
        return Err(Error::Argument("chain does not fit the function alphabet".into()));
    }
    if j >= f.n() {
        return Err(Error::Argument(format!("coordinate {j} out of range")));
    }
    let mut acc = 0.0;
    let mut tuple;
    for idx in 0..f.len() {
        tuple = f.tuple_of(idx);
        let w = f.point_weight(&tuple);
        if w == 0.0 {
            continue;
        }
        let a = tuple[j];
        let fa = f.values()[idx];
        for b in 0..m {
            let p = chain.matrix()[a][b];
            if p == 0.0 {
                continue;
            }
            tuple[j] = b;
            let fb = f.eval(&tuple);
            acc += w * p * (fa - fb).norm_sqr();
            tuple[j] = a;
        }
    }
    Ok(acc)
}

/// Fiber-resample influence computed from its definition (a stationary start
/// and one pure resample step within the fiber).
pub fn nonembed_influence_by_definition(
    f: &TensorFunction,
    basis: &SplitBasis,
    j: usize,
) -> Result<f64> {
    let chain = partition_chain(basis.weights(), &basis.fiber_classes(), 0.0)?;
    influence_by_definition(f, &chain, j)
}

/// Modest influence computed from its definition (one modest step).
pub fn modest_influence_by_definition(
    f: &TensorFunction,
    basis: &SplitBasis,
    j: usize,
) -> Result<f64> {
    let ms = basis
        .modest_set()
        .ok_or_else(|| Error::Argument("modest influence needs a modest set".into()))?;
    let chain = modest_step_chain(basis.weights(), ms)?;
    influence_by_definition(f, &chain, j)
}

/// A two-part mixture of the function's measure: `mixture = rho live + (1-rho) fixed`.
#[derive(Clone, Debug)]
pub struct SplitLaw {
    pub rho: f64,
    pub live: Vec<f64>,
    pub fixed: Vec<f64>,
}

fn check_law(name: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Argument(format!("{name} part must be nonnegative")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > tolerance::EQ {
        return Err(Error::Argument(format!("{name} part sums to {total}, expected 1")));
    }
    Ok(())
}

impl SplitLaw {
    /// Solve `mu = rho live + (1-rho) fixed` for the fixed part.
    pub fn new(mu: &[f64], rho: f64, live: &[f64]) -> Result<SplitLaw> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Argument(format!("mixture weight {rho} outside (0,1)")));
        }
        if live.len() != mu.len() {
            return Err(Error::Argument("mixture parts share the alphabet".into()));
        }
        check_law("live", live)?;
        let mut fixed = Vec::with_capacity(mu.len());
        for (s, (&m, &l)) in mu.iter().zip(live).enumerate() {
            let v = (m - rho * l) / (1.0 - rho);
            if v < -tolerance::EQ {
                return Err(Error::Argument(format!(
                    "infeasible split: symbol {s} has mass {m} but needs at least {}",
                    rho * l
                )));
            }
            fixed.push(v.max(0.0));
        }
        Ok(SplitLaw { rho, live: live.to_vec(), fixed })
    }

    /// Declare both parts and check the mixture identity.
    pub fn with_parts(mu: &[f64], rho: f64, live: &[f64], fixed: &[f64]) -> Result<SplitLaw> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Argument(format!("mixture weight {rho} outside (0,1)")));
        }
        if live.len() != mu.len() || fixed.len() != mu.len() {
            return Err(Error::Argument("mixture parts share the alphabet".into()));
        }
        check_law("live", live)?;
        check_law("fixed", fixed)?;
        for (s, &m) in mu.iter().enumerate() {
            let mix = rho * live[s] + (1.0 - rho) * fixed[s];
            if (mix - m).abs() > tolerance::EQ {
                return Err(Error::Argument(format!(
                    "mixture identity fails at symbol {s}: {mix} vs {m}"
                )));
            }
        }
        Ok(SplitLaw { rho, live: live.to_vec(), fixed: fixed.to_vec() })
    }

    pub fn mixture(&self) -> Vec<f64> {
        self.live
            .iter()
            .zip(&self.fixed)
            .map(|(&l, &x)| self.rho * l + (1.0 - self.rho) * x)
            .collect()
    }
}

/// How a restriction treats the measure on the surviving coordinates.
pub enum RestrictMode<'a> {
    /// keep the original weights
    Preserve,
    /// live coordinates switch to the mixture's live part
    Split(&'a SplitLaw),
}

/// `f` with the coordinates outside `live` pinned to `z` (in increasing
/// coordinate order). `live` must be strictly increasing.
pub fn restrict(
    f: &TensorFunction,
    live: &[usize],
    z: &[usize],
    mode: RestrictMode,
) -> Result<TensorFunction> {
    let n = f.n();
    let m = f.alphabet_size();
    if live.windows(2).any(|w| w[0] >= w[1]) || live.iter().any(|&i| i >= n) {
        return Err(Error::Argument(
            "live coordinates must be strictly increasing and in range".into(),
        ));
    }
    if z.len() != n - live.len() {
        return Err(Error::Argument(format!(
            "{} pinned symbols for {} pinned coordinates",
            z.len(),
            n - live.len()
        )));
    }
    if z.iter().any(|&s| s >= m) {
        return Err(Error::Argument("pinned symbol out of range".into()));
    }
    let weights = match mode {
        RestrictMode::Preserve => f.weights().to_vec(),
        RestrictMode::Split(law) => {
            if law.live.len() != m {
                return Err(Error::Argument("split law does not fit the alphabet".into()));
            }
            let mix = law.mixture();
            if mix
                .iter()
                .zip(f.weights())
                .any(|(a, b)| (a - b).abs() > tolerance::EQ)
            {
                return Err(Error::Argument(
                    "split law does not reproduce the function weights".into(),
                ));
            }
            law.live.clone()
        }
    };
    let mut is_live = vec![false; n];
    for &i in live {
        is_live[i] = true;
    }
    let fixed_coords: Vec<usize> = (0..n).filter(|&i| !is_live[i]).collect();
    let mut full = vec![0usize; n];
    TensorFunction::from_fn(live.len(), weights, move |y| {
        for (slot, &coord) in live.iter().enumerate() {
            full[coord] = y[slot];
        }
        for (slot, &coord) in fixed_coords.iter().enumerate() {
            full[coord] = z[slot];
        }
        f.eval(&full)
    })
}

fn draw_symbol<R: rand::Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (s, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = s;
        if u < acc {
            return s;
        }
    }
    last
}

/// Draw a live set with inclusion probability `beta` per coordinate, pin the
/// rest from the declared complement law, and restrict.
pub fn sample_restriction<R: rand::Rng + ?Sized>(
    f: &TensorFunction,
    beta: f64,
    mode: RestrictMode,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>, TensorFunction)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Argument(format!("live probability {beta} outside [0,1]")));
    }
    let n = f.n();
    let live: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < beta).collect();
    let fixed_law: &[f64] = match &mode {
        RestrictMode::Preserve => f.weights(),
        RestrictMode::Split(law) => &law.fixed,
    };
    let z: Vec<usize> = (0..n - live.len())
        .map(|_| draw_symbol(fixed_law, rng))
        .collect();
    let g = restrict(f, &live, &z, mode)?;
    Ok((live, z, g))
}

fn for_each_tuple(m: usize, k: usize, body: &mut dyn FnMut(&[usize])) {
    let mut t = vec![0usize; k];
    loop {
        body(&t);
        let mut j = k;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            t[j] += 1;
            if t[j] < m {
                break;
            }
            t[j] = 0;
        }
    }
}

/// Both sides of the restriction / operator comparison, with the constant in
/// the right-hand noise rate recomputed from the collapsed chain's spectrum.
pub struct OpComparison {
    /// average over live sets and pinnings of `<f_rest, T1 f_rest>`
    pub lhs_enumerated: f64,
    /// the same quantity collapsed to `<f, A f>` for the one-coordinate chain A
    pub lhs_collapsed: f64,
    /// `<f, B f>` for the class chain at stay probability `1 - c beta xi`
    pub rhs: f64,
    /// spectra-derived constant: `(1 - lambda) / (beta xi)`
    pub c: f64,
    /// top eigenvalue of the collapsed chain off the class-constant space
    pub lambda_off_constants: f64,
    pub collapsed: MarkovChain,
}

/// Compare the average restricted quadratic form against one global noise
/// operator. `classes` partitions the alphabet; `live`/`fixed` must mix to
/// the weights of `f` with weight `beta`; the live-side chain resamples within
/// classes at rate `xi`.
pub fn op_comparison(
    f: &TensorFunction,
    classes: &[usize],
    beta: f64,
    xi: f64,
    live: &[f64],
    fixed: &[f64],
) -> Result<OpComparison> {
    let m = f.alphabet_size();
    let n = f.n();
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Argument(format!("live probability {beta} outside (0,1)")));
    }
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(Error::Argument(format!("resample rate {xi} outside (0,1]")));
    }
    if classes.len() != m {
        return Err(Error::Argument("class labels must cover the alphabet".into()));
    }
    let mu = f.weights();
    let law = SplitLaw::with_parts(mu, beta, live, fixed)?;
    if (1u128 << n).saturating_mul(f.len() as u128) > 5_000_000 {
        return Err(Error::Resource(format!(
            "restriction enumeration over {n} coordinates too large"
        )));
    }
    let t1 = partition_chain(live, classes, 1.0 - xi)?;

    // collapsed one-coordinate chain: live step with probability beta,
    // frozen resample otherwise
    let a_matrix: Vec<Vec<f64>> = (0..m)
        .map(|x| {
            (0..m)
                .map(|xp| {
                    let frozen = if x == xp { (1.0 - beta) * fixed[x] } else { 0.0 };
                    (beta * live[x] * t1.matrix()[x][xp] + frozen) / mu[x]
                })
                .collect()
        })
        .collect();
    let a_chain = MarkovChain::new(a_matrix, mu.to_vec())?;

    let mut lhs = 0.0;
    let masks = 1usize << n;
    for mask in 0..masks {
        let live_set: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let p_mask = beta.powi(live_set.len() as i32)
            * (1.0 - beta).powi((n - live_set.len()) as i32);
        let pinned = n - live_set.len();
        let mut err = None;
        for_each_tuple(m, pinned, &mut |z| {
            if err.is_some() {
                return;
            }
            let pz: f64 = z.iter().map(|&s| fixed[s]).product();
            if pz == 0.0 {
                return;
            }
            let add = restrict(f, &live_set, z, RestrictMode::Split(&law))
                .and_then(|g| Ok((t1.apply(&g)?, g)))
                .and_then(|(tg, g)| g.inner_product(&tg));
            match add {
                Ok(ip) => lhs += p_mask * pz * ip.re,
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }

    let af = a_chain.apply(f)?;
    let lhs_collapsed = f.inner_product(&af)?.re;

    let spec = markov_spectrum(&a_chain);
    let k = spec.components;
    let (lambda, c) = if k >= m {
        (1.0, 0.0)
    } else {
        let l = spec.eigenvalues[k].clamp(0.0, 1.0);
        (l, (1.0 - l) / (beta * xi))
    };
    let b_chain = partition_chain(mu, classes, lambda)?;
    let bf = b_chain.apply(f)?;
    let rhs = f.inner_product(&bf)?.re;

    Ok(OpComparison {
        lhs_enumerated: lhs,
        lhs_collapsed,
        rhs,
        c,
        lambda_off_constants: lambda,
        collapsed: a_chain,
    })
}

/// Pair-space shape of a distribution: sizes of the two final alphabets and
/// the joint weights indexed `y * nz + z`.
pub fn pair_weights(dist: &TripleDist) -> (usize, usize, Vec<f64>) {
    let ny = dist.alphabet(Coord::Y).len();
    let nz = dist.alphabet(Coord::Z).len();
    let mut w = vec![0.0; ny * nz];
    for (pair, p) in dist.pair_marginal(Coord::Y, Coord::Z) {
        w[pair[0] * nz + pair[1]] = p.to_f64().expect("pair probability fits in f64");
    }
    (ny, nz, w)
}

fn forced_first(dist: &TripleDist) -> Result<BTreeMap<[usize; 2], usize>> {
    if !dist.implies_third((Coord::Y, Coord::Z)) {
        return Err(Error::Argument(
            "pair (y, z) does not determine the first coordinate".into(),
        ));
    }
    let mut forced = BTreeMap::new();
    for (key, _) in dist.atoms() {
        forced.insert([key[1], key[2]], key[0]);
    }
    Ok(forced)
}

/// Carry a function of the determined coordinate onto the pair space:
/// `(W f)(y, z) = f(x forced by (y, z))`, zero at unsupported pairs.
pub fn wrap_w(f: &TensorFunction, dist: &TripleDist) -> Result<TensorFunction> {
    let forced = forced_first(dist)?;
    let mx = dist.alphabet(Coord::X).len();
    if f.alphabet_size() != mx {
        return Err(Error::Argument(format!(
            "function alphabet {} does not fit the {mx} first-coordinate symbols",
            f.alphabet_size()
        )));
    }
    let margin = crate::tensor::marginal_weights(dist, Coord::X);
    if f.weights()
        .iter()
        .zip(&margin)
        .any(|(a, b)| (a - b).abs() > tolerance::EQ)
    {
        return Err(Error::Argument(
            "function weights differ from the first-coordinate marginal".into(),
        ));
    }
    let (_, nz, w) = pair_weights(dist);
    let n = f.n();
    TensorFunction::from_fn(n, w, |pt| {
        let mut xs = Vec::with_capacity(n);
        for &p in pt {
            match forced.get(&[p / nz, p % nz]) {
                Some(&x) => xs.push(x),
                None => return Complex64::new(0.0, 0.0),
            }
        }
        f.eval(&xs)
    })
}

/// Invert the wrap: read the value off any supported pair tuple forcing each
/// first-coordinate tuple, demanding agreement across the class.
pub fn unwrap_w(big: &TensorFunction, dist: &TripleDist) -> Result<TensorFunction> {
    let forced = forced_first(dist)?;
    let (ny, nz, w) = pair_weights(dist);
    if big.alphabet_size() != ny * nz {
        return Err(Error::Argument(format!(
            "function alphabet {} does not fit the {} pair symbols",
            big.alphabet_size(),
            ny * nz
        )));
    }
    if big
        .weights()
        .iter()
        .zip(&w)
        .any(|(a, b)| (a - b).abs() > tolerance::EQ)
    {
        return Err(Error::Argument(
            "function weights differ from the pair marginal".into(),
        ));
    }
    let mx = dist.alphabet(Coord::X).len();
    let n = big.n();
    let out_len = mx.checked_pow(n as u32).ok_or_else(|| {
        Error::Resource(format!("value table {mx}^{n} overflows"))
    })?;
    let mut out: Vec<Option<Complex64>> = vec![None; out_len];
    for idx in 0..big.len() {
        let pt = big.tuple_of(idx);
        let mut xflat = 0usize;
        let mut on_support = true;
        for &p in &pt {
            match forced.get(&[p / nz, p % nz]) {
                Some(&x) => xflat = xflat * mx + x,
                None => {
                    on_support = false;
                    break;
                }
            }
        }
        if !on_support {
            continue;
        }
        let v = big.values()[idx];
        match out[xflat] {
            None => out[xflat] = Some(v),
            Some(prev) => {
                if (prev - v).norm() > tolerance::EQ {
                    return Err(Error::Argument(
                        "wrapped function is not constant on its pair classes".into(),
                    ));
                }
            }
        }
    }
    let margin = crate::tensor::marginal_weights(dist, Coord::X);
    TensorFunction::new(
        n,
        margin,
        out.into_iter()
            .map(|v| v.unwrap_or(Complex64::new(0.0, 0.0)))
            .collect(),
    )
}
