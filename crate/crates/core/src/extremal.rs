//! Extremal three-wise machinery: exact correlation sums, a singular split
//! along one coordinate that respects the embedding tiers, alternating
//! maximization for the homogeneous correlation parameters, the two base-case
//! constants, and the character identity behind the group linearity test.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::dist::{Coord, TripleDist};
use crate::embed::EmbeddingTriple;
use crate::error::{Error, Result};
use crate::fourier::{
    expand, monomial_function, monomial_of, pair_weights, unwrap_w, wrap_w, BasisTag, Expansion,
    Monomial, SplitBasis,
};
use crate::group::{all_characters, GroupElem};
use crate::rng;
use crate::tensor::{marginal_weights, TensorFunction};
use crate::tolerance;

/// Cap on coordinate count for the estimators; tables grow like `|pairs|^n`.
pub const MAX_COORDS: usize = 5;
/// Default restart count for the alternating estimators.
pub const DEFAULT_RESTARTS: usize = 32;

const MAX_ROUNDS: usize = 500;
const ROUND_TOL: f64 = 1e-9;
const ENUM_BUDGET: f64 = 5e7;
/// Projections below this squared mass stall the round instead of dividing.
const STALL_MASS: f64 = 1e-26;
/// Relative floor under which a split eigenvalue counts as structural zero.
const SVD_RELCUT: f64 = 1e-13;

/// Eigenvalues (descending) and orthonormal eigenvectors of a Hermitian
/// matrix. Works through the doubled real symmetric embedding
/// `[[Re, -Im], [Im, Re]]`, so only a real solver is involved; each complex
/// eigenpair shows up twice there and the duplicate is discarded.
pub fn hermitian_eigen(mat: &[Vec<Complex64>]) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let p = mat.len();
    if mat.iter().any(|row| row.len() != p) {
        return Err(Error::Argument("eigendecomposition needs a square matrix".into()));
    }
    if p == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let big = DMatrix::from_fn(2 * p, 2 * p, |r, c| {
        let v = mat[r % p][c % p];
        match (r / p, c / p) {
            (0, 0) | (1, 1) => v.re,
            (0, 1) => -v.im,
            _ => v.im,
        }
    });
    let eig = big.symmetric_eigen();
    let mut order: Vec<usize> = (0..2 * p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let mut vals = Vec::with_capacity(p);
    let mut vecs: Vec<Vec<Complex64>> = Vec::with_capacity(p);
    for &k in &order {
        if vecs.len() == p {
            break;
        }
        let col = eig.eigenvectors.column(k);
        let mut z: Vec<Complex64> = (0..p).map(|i| Complex64::new(col[i], col[p + i])).collect();
        for kept in &vecs {
            let ip: Complex64 = z.iter().zip(kept).map(|(a, b)| a * b.conj()).sum();
            for (zi, bi) in z.iter_mut().zip(kept) {
                *zi -= ip * bi;
            }
        }
        let nn = z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if nn > 1e-6 {
            for zi in z.iter_mut() {
                *zi /= nn;
            }
            vals.push(eig.eigenvalues[k]);
            vecs.push(z);
        }
    }
    Ok((vals, vecs))
}

/// Exact `E[f(x) g(y) h(z)]` under the product of `n` independent copies of
/// the distribution, summed over support tuples.
pub fn three_wise_correlation(
    dist: &TripleDist,
    f: &TensorFunction,
    g: &TensorFunction,
    h: &TensorFunction,
) -> Result<Complex64> {
    let n = f.n();
    if g.n() != n || h.n() != n {
        return Err(Error::Argument(format!(
            "coordinate counts differ: {n} vs {} vs {}",
            g.n(),
            h.n()
        )));
    }
    for (func, c) in [(f, Coord::X), (g, Coord::Y), (h, Coord::Z)] {
        if func.alphabet_size() != dist.alphabet(c).len() {
            return Err(Error::Argument(format!(
                "function over {} symbols does not fit the {} {} symbols",
                func.alphabet_size(),
                dist.alphabet(c).len(),
                c.name()
            )));
        }
    }
    let atoms: Vec<([usize; 3], f64)> = dist
        .atoms()
        .map(|(k, p)| (*k, p.to_f64().expect("probability fits an f64")))
        .collect();
    if (atoms.len() as f64).powi(n as i32) > ENUM_BUDGET {
        return Err(Error::Resource(format!(
            "support of {} atoms over {n} coordinates is past the enumeration budget",
            atoms.len()
        )));
    }
    let mx = dist.alphabet(Coord::X).len();
    let my = dist.alphabet(Coord::Y).len();
    let mz = dist.alphabet(Coord::Z).len();
    let mut slot = vec![0usize; n];
    let mut acc = Complex64::ZERO;
    loop {
        let mut p = 1.0;
        let (mut xi, mut yi, mut zi) = (0usize, 0usize, 0usize);
        for &s in &slot {
            let (key, q) = atoms[s];
            p *= q;
            xi = xi * mx + key[0];
            yi = yi * my + key[1];
            zi = zi * mz + key[2];
        }
        acc += p * f.values()[xi] * g.values()[yi] * h.values()[zi];
        let mut j = n;
        loop {
            if j == 0 {
                return Ok(acc);
            }
            j -= 1;
            slot[j] += 1;
            if slot[j] < atoms.len() {
                break;
            }
            slot[j] = 0;
        }
    }
}

/// Which invariant span a pivot factor lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvdTag {
    /// Span of the basis element built from this character index.
    Embed(usize),
    /// The joint span of everything outside the embedding tier.
    NonEmbed,
}

/// One term of a singular split along the pivot coordinate.
#[derive(Clone, Debug)]
pub struct SvdPart {
    /// Nonnegative weight; the squares sum to the squared input norm.
    pub coeff: f64,
    /// Unit factor on the remaining coordinates.
    pub inner: TensorFunction,
    /// Unit factor on the pivot coordinate.
    pub outer: TensorFunction,
    pub tag: SvdTag,
}

/// Singular split of a function along one coordinate, the pivot factors
/// confined to one character's span or to the complement of the tier.
#[derive(Clone, Debug)]
pub struct SvdSplit {
    pub parts: Vec<SvdPart>,
    pub pivot: usize,
    /// Coefficient mass whose pivot index leaves the embedding tier. Equals
    /// half the pivot's non-embedding influence, and the nonembed-tagged
    /// parts' squared coefficients reproduce it.
    pub offtier_mass: f64,
    n: usize,
    weights: Vec<f64>,
}

impl SvdSplit {
    pub fn coeff_square_sum(&self) -> f64 {
        self.parts.iter().map(|p| p.coeff * p.coeff).sum()
    }

    pub fn nonembed_square_sum(&self) -> f64 {
        self.parts
            .iter()
            .filter(|p| p.tag == SvdTag::NonEmbed)
            .map(|p| p.coeff * p.coeff)
            .sum()
    }

    /// Rebuild the function as `sum_t coeff_t outer_t (x) inner_t`.
    pub fn reconstruct(&self) -> TensorFunction {
        let m = self.weights.len();
        let mut values = vec![Complex64::ZERO; m.pow(self.n as u32)];
        for part in &self.parts {
            for (idx, v) in values.iter_mut().enumerate() {
                let (a, b) = split_index(idx, m, self.n, self.pivot);
                *v += part.coeff * part.outer.values()[a] * part.inner.values()[b];
            }
        }
        TensorFunction::new(self.n, self.weights.clone(), values)
            .expect("split dimensions are consistent")
    }
}

/// Pivot digit and the flat index over the remaining coordinates.
fn split_index(idx: usize, m: usize, n: usize, pivot: usize) -> (usize, usize) {
    let stride = m.pow((n - 1 - pivot) as u32);
    let a = (idx / stride) % m;
    let b = (idx / (stride * m)) * stride + idx % stride;
    (a, b)
}

type ClassKey = (Vec<(usize, usize)>, usize);

/// Homogeneity label: embedding degrees per character plus the degree off
/// the tier.
fn class_key(m: &Monomial) -> ClassKey {
    (
        m.embeddeg_by_char.iter().map(|(&a, &c)| (a, c)).collect(),
        m.nedeg,
    )
}

/// Split `input` along the single `pivot` coordinate into scalar-weighted
/// products, the pivot factors drawn from the per-character embedding spans
/// and from the joint span outside the tier.
///
/// With `effective = None` the input lives over the basis alphabet and must
/// sit in a single homogeneity class. Passing the distribution switches to
/// the pair-space variant: the input then lives on the `(y, z)` pairs, must
/// be constant on the classes forced by the determined first coordinate, and
/// carries no homogeneity requirement.
pub fn svd_split(
    input: &TensorFunction,
    pivot: usize,
    basis: &SplitBasis,
    effective: Option<&TripleDist>,
) -> Result<SvdSplit> {
    let n = input.n();
    if n == 0 {
        return Err(Error::Argument("need at least one coordinate to split".into()));
    }
    if pivot >= n {
        return Err(Error::Argument(format!(
            "pivot {pivot} outside the {n} coordinates"
        )));
    }
    let m = basis.len();
    let mut x_view: Option<TensorFunction> = None;
    let (table, w1): (Vec<Vec<Complex64>>, Vec<f64>) = match effective {
        None => (
            (0..m).map(|k| basis.element(k).to_vec()).collect(),
            basis.weights().to_vec(),
        ),
        Some(dist) => {
            x_view = Some(unwrap_w(input, dist)?);
            let mut t = Vec::with_capacity(m);
            for k in 0..m {
                let elem =
                    TensorFunction::new(1, basis.weights().to_vec(), basis.element(k).to_vec())
                        .expect("basis element shapes agree");
                t.push(wrap_w(&elem, dist)?.values().to_vec());
            }
            let (_, _, wpair) = pair_weights(dist);
            (t, wpair)
        }
    };
    if input.alphabet_size() != w1.len() {
        return Err(Error::Argument(format!(
            "function alphabet {} does not fit the {} split symbols",
            input.alphabet_size(),
            w1.len()
        )));
    }
    let x_expansion = expand(x_view.as_ref().unwrap_or(input), basis)?;
    if effective.is_none() {
        let cut = x_expansion.total_weight() * 1e-18;
        let mut key: Option<ClassKey> = None;
        for (flat, c) in x_expansion.coeffs().iter().enumerate() {
            if c.norm_sqr() <= cut {
                continue;
            }
            let k = class_key(&x_expansion.monomial_at(flat));
            match &key {
                None => key = Some(k),
                Some(prev) if *prev == k => {}
                Some(_) => {
                    return Err(Error::Argument(
                        "input mixes homogeneity classes; the plain split takes one".into(),
                    ));
                }
            }
        }
    }
    let mut offtier_mass = 0.0;
    for (flat, c) in x_expansion.coeffs().iter().enumerate() {
        let q = c.norm_sqr();
        if q > 0.0 && !matches!(basis.tag(x_expansion.indices_of(flat)[pivot]), BasisTag::Embed(_))
        {
            offtier_mass += q;
        }
    }

    let mw = w1.len();
    let rest_len = input.len() / mw;
    let stride = mw.pow((n - 1 - pivot) as u32);
    // conditional slices of the input against each basis element on the pivot
    let mut slices = vec![vec![Complex64::ZERO; rest_len]; m];
    for (idx, &v) in input.values().iter().enumerate() {
        let a = (idx / stride) % mw;
        let wa = w1[a];
        if wa == 0.0 {
            continue;
        }
        let b = (idx / (stride * mw)) * stride + idx % stride;
        let scaled = wa * v;
        for (k, row) in slices.iter_mut().enumerate() {
            row[b] += table[k][a].conj() * scaled;
        }
    }
    let mut wrest = vec![1.0f64; rest_len];
    for (b, wv) in wrest.iter_mut().enumerate() {
        let mut r = b;
        for _ in 0..n - 1 {
            *wv *= w1[r % mw];
            r /= mw;
        }
    }

    let mut embed_groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut off: Vec<usize> = Vec::new();
    for k in 0..m {
        match basis.tag(k) {
            BasisTag::Embed(a) => embed_groups.entry(a).or_default().push(k),
            _ => off.push(k),
        }
    }
    let mut spans: Vec<(SvdTag, Vec<usize>)> = embed_groups
        .into_iter()
        .map(|(a, ks)| (SvdTag::Embed(a), ks))
        .collect();
    if !off.is_empty() {
        spans.push((SvdTag::NonEmbed, off));
    }

    let total = input.norm2();
    let cut = total * SVD_RELCUT;
    let mut parts = Vec::new();
    for (tag, members) in spans {
        let dim = members.len();
        let mut gram = vec![vec![Complex64::ZERO; dim]; dim];
        for (ri, &r) in members.iter().enumerate() {
            for (si, &s) in members.iter().enumerate() {
                let mut acc = Complex64::ZERO;
                for b in 0..rest_len {
                    acc += wrest[b] * slices[r][b] * slices[s][b].conj();
                }
                gram[ri][si] = acc;
            }
        }
        let (vals, vecs) = hermitian_eigen(&gram)?;
        for (lam, v) in vals.iter().zip(&vecs) {
            if *lam <= cut {
                break;
            }
            let kappa = lam.sqrt();
            let mut inner = vec![Complex64::ZERO; rest_len];
            for (ri, &rk) in members.iter().enumerate() {
                let cr = v[ri].conj() / kappa;
                for (iv, sv) in inner.iter_mut().zip(&slices[rk]) {
                    *iv += cr * sv;
                }
            }
            let mut outer = vec![Complex64::ZERO; mw];
            for (ri, &rk) in members.iter().enumerate() {
                for (ov, tv) in outer.iter_mut().zip(&table[rk]) {
                    *ov += v[ri] * tv;
                }
            }
            parts.push(SvdPart {
                coeff: kappa,
                inner: TensorFunction::new(n - 1, w1.clone(), inner)?,
                outer: TensorFunction::new(1, w1.clone(), outer)?,
                tag,
            });
        }
    }
    let split = SvdSplit { parts, pivot, offtier_mass, n, weights: w1 };
    debug_assert!(
        (split.nonembed_square_sum() - offtier_mass).abs() <= 1e-8 * total.max(1.0),
        "off-tier mass drifted between the parts and the coefficients"
    );
    Ok(split)
}

// ---------------------------------------------------------------------------
// alternating-maximization estimators

fn wip(w: &[f64], a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), &q)| q * x * y.conj())
        .sum()
}

fn wnorm2(w: &[f64], a: &[Complex64]) -> f64 {
    a.iter().zip(w).map(|(x, &q)| q * x.norm_sqr()).sum()
}

/// Standard normal pair from two uniforms (polar form).
fn normal_pair(r: &mut impl Rng) -> (f64, f64) {
    let u: f64 = 1.0 - r.random::<f64>();
    let ang = std::f64::consts::TAU * r.random::<f64>();
    let rad = (-2.0 * u.ln()).sqrt();
    (rad * ang.cos(), rad * ang.sin())
}

fn random_values(len: usize, r: &mut impl Rng) -> Vec<Complex64> {
    (0..len)
        .map(|_| {
            let (a, b) = normal_pair(r);
            Complex64::new(a, b)
        })
        .collect()
}

fn random_side(n: usize, w: &[f64], r: &mut impl Rng) -> TensorFunction {
    let len = w.len().pow(n as u32);
    TensorFunction::new(n, w.to_vec(), random_values(len, r)).expect("weights already validated")
}

/// Keep the heaviest homogeneity class among the admissible monomials.
/// Strictly-greater mass wins, so ties go to the smallest key.
fn keep_best_key(ex: &Expansion, admits: impl Fn(&Monomial) -> bool) -> (Expansion, f64) {
    let mut mass: BTreeMap<ClassKey, f64> = BTreeMap::new();
    for (flat, c) in ex.coeffs().iter().enumerate() {
        let q = c.norm_sqr();
        if q == 0.0 {
            continue;
        }
        let mono = ex.monomial_at(flat);
        if admits(&mono) {
            *mass.entry(class_key(&mono)).or_insert(0.0) += q;
        }
    }
    let mut best: Option<(ClassKey, f64)> = None;
    for (k, &q) in &mass {
        if best.as_ref().map_or(true, |(_, bq)| q > *bq) {
            best = Some((k.clone(), q));
        }
    }
    match best {
        None => (ex.retain(|_| false), 0.0),
        Some((key, q)) => (ex.retain(|mo| admits(mo) && class_key(mo) == key), q),
    }
}

#[derive(Clone, Copy)]
enum EstimateKind {
    /// Exact degree off the tier, one embedding profile, effective floor.
    Homogeneous { d: usize, dp: usize },
    /// Effective floor only; the sides stay unconstrained.
    Effective { dp: usize },
}

impl EstimateKind {
    fn admits(self, m: &Monomial) -> bool {
        match self {
            EstimateKind::Homogeneous { d, dp } => m.nedeg == d && m.effnon >= dp,
            EstimateKind::Effective { dp } => m.effnon >= dp,
        }
    }

    fn homogeneous(self) -> bool {
        matches!(self, EstimateKind::Homogeneous { .. })
    }

    fn label(self) -> &'static str {
        match self {
            EstimateKind::Homogeneous { .. } => "extremal.beta",
            EstimateKind::Effective { .. } => "extremal.delta",
        }
    }
}

struct AltOutcome {
    value: f64,
    iterations: usize,
    residual: f64,
    f: TensorFunction,
    g: TensorFunction,
    h: TensorFunction,
}

/// Outcome of an alternating-maximization run: a lower bound together with
/// the witnesses achieving it.
#[derive(Clone, Debug)]
pub struct ExtremalReport {
    /// `|E[F g h]|` of the final unit-norm witnesses.
    pub value: f64,
    /// Constraint set the witnesses satisfy.
    pub class: String,
    pub n: usize,
    /// Exact degree off the tier, for the homogeneous estimate.
    pub nonembed_degree: Option<usize>,
    /// Floor on the effective degree of the pair witness.
    pub effective_floor: usize,
    pub restarts: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Witness on the pair alphabet, constant on the forced classes.
    pub witness_pair: TensorFunction,
    pub witness_y: TensorFunction,
    pub witness_z: TensorFunction,
}

impl ExtremalReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "value": self.value,
            "class": self.class,
            "n": self.n,
            "nonembed_degree": self.nonembed_degree,
            "effective_floor": self.effective_floor,
            "restarts": self.restarts,
            "iterations": self.iterations,
            "residual": self.residual,
            "witness_pair": self.witness_pair.to_json(),
            "witness_y": self.witness_y.to_json(),
            "witness_z": self.witness_z.to_json(),
        })
    }
}

/// A distribution, its embedding, and the split bases on all three
/// coordinates; home of the alternating estimators. Requires every supported
/// `(y, z)` pair to force the first coordinate, so functions of `x` ride on
/// the pair space and back.
pub struct CorrelationFrame {
    dist: TripleDist,
    emb: EmbeddingTriple,
    x_basis: SplitBasis,
    y_basis: SplitBasis,
    z_basis: SplitBasis,
    ny: usize,
    nz: usize,
    wpair: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    wz: Vec<f64>,
    forced: Vec<Option<usize>>,
}

impl CorrelationFrame {
    pub fn new(
        dist: &TripleDist,
        emb: &EmbeddingTriple,
        modest: Option<&[usize]>,
    ) -> Result<CorrelationFrame> {
        if !emb.is_valid(dist) {
            return Err(Error::Argument("embedding does not vanish on the support".into()));
        }
        if !dist.implies_third((Coord::Y, Coord::Z)) {
            return Err(Error::Argument(
                "pair (y, z) does not determine the first coordinate".into(),
            ));
        }
        let wx = marginal_weights(dist, Coord::X);
        let wy = marginal_weights(dist, Coord::Y);
        let wz = marginal_weights(dist, Coord::Z);
        let x_basis = SplitBasis::build(&wx, &emb.group, &emb.maps[0], modest)?;
        let y_basis = SplitBasis::build(&wy, &emb.group, &emb.maps[1], None)?;
        let z_basis = SplitBasis::build(&wz, &emb.group, &emb.maps[2], None)?;
        let (ny, nz, wpair) = pair_weights(dist);
        let mut forced = vec![None; ny * nz];
        for (key, _) in dist.atoms() {
            forced[key[1] * nz + key[2]] = Some(key[0]);
        }
        Ok(CorrelationFrame {
            dist: dist.clone(),
            emb: emb.clone(),
            x_basis,
            y_basis,
            z_basis,
            ny,
            nz,
            wpair,
            wx,
            wy,
            wz,
            forced,
        })
    }

    pub fn dist(&self) -> &TripleDist {
        &self.dist
    }

    pub fn embedding(&self) -> &EmbeddingTriple {
        &self.emb
    }

    pub fn x_basis(&self) -> &SplitBasis {
        &self.x_basis
    }

    pub fn y_basis(&self) -> &SplitBasis {
        &self.y_basis
    }

    pub fn z_basis(&self) -> &SplitBasis {
        &self.z_basis
    }

    /// Lower bound for the homogeneous correlation parameter: sup of
    /// `|E[F(y,z) g(y) h(z)]|` over unit `F` constant on the forced classes,
    /// in one embedding profile with degree `d` off the tier and effective
    /// degree at least `dp`, and unit `g`, `h` each in one homogeneity class.
    pub fn estimate_beta(
        &self,
        n: usize,
        d: usize,
        dp: usize,
        restarts: usize,
        seed: u64,
    ) -> Result<ExtremalReport> {
        if dp > d || d > n {
            return Err(Error::Argument(format!(
                "degrees must nest: effective floor {dp} <= off-tier degree {d} <= {n}"
            )));
        }
        self.run_estimate(n, EstimateKind::Homogeneous { d, dp }, restarts, seed)
    }

    /// Lower bound for the inductive correlation parameter: `F` is only
    /// asked to be constant on the forced classes with effective degree at
    /// least `dp`; the sides are unconstrained.
    pub fn estimate_delta(
        &self,
        n: usize,
        dp: usize,
        restarts: usize,
        seed: u64,
    ) -> Result<ExtremalReport> {
        if dp > n {
            return Err(Error::Argument(format!(
                "effective floor {dp} cannot exceed the {n} coordinates"
            )));
        }
        self.run_estimate(n, EstimateKind::Effective { dp }, restarts, seed)
    }

    fn run_estimate(
        &self,
        n: usize,
        kind: EstimateKind,
        restarts: usize,
        seed: u64,
    ) -> Result<ExtremalReport> {
        if n == 0 || n > MAX_COORDS {
            return Err(Error::Argument(format!("n = {n} outside 1..={MAX_COORDS}")));
        }
        if restarts == 0 {
            return Err(Error::Argument("need at least one restart".into()));
        }
        let mw = (self.ny * self.nz) as f64;
        if mw.powi(n as i32) > ENUM_BUDGET {
            return Err(Error::Resource(format!(
                "pair tables over {n} coordinates are past the enumeration budget"
            )));
        }
        let fallback = self.first_admissible(n, kind)?;
        let outcomes: Vec<AltOutcome> = (0..restarts)
            .into_par_iter()
            .map(|ri| {
                let mut r = rng::substream_indexed(seed, kind.label(), ri as u64);
                self.alternate(n, kind, &fallback, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for i in 1..outcomes.len() {
            if outcomes[i].value >= outcomes[best].value {
                best = i;
            }
        }
        let out = outcomes.into_iter().nth(best).expect("at least one restart");
        let (class, d_opt, dp) = match kind {
            EstimateKind::Homogeneous { d, dp } => (
                format!(
                    "pair witness constant on forced classes, one embedding profile, \
                     degree {d} off the tier, effective degree at least {dp}; \
                     side witnesses one class each"
                ),
                Some(d),
                dp,
            ),
            EstimateKind::Effective { dp } => (
                format!(
                    "pair witness constant on forced classes, effective degree at \
                     least {dp}; side witnesses unconstrained"
                ),
                None,
                dp,
            ),
        };
        Ok(ExtremalReport {
            value: out.value,
            class,
            n,
            nonembed_degree: d_opt,
            effective_floor: dp,
            restarts,
            iterations: out.iterations,
            residual: out.residual,
            witness_pair: out.f,
            witness_y: out.g,
            witness_z: out.h,
        })
    }

    /// First admissible monomial, wrapped onto the pair space; errors when
    /// the requested class holds no monomials at all.
    fn first_admissible(&self, n: usize, kind: EstimateKind) -> Result<TensorFunction> {
        let m = self.x_basis.len();
        let total = m.pow(n as u32);
        let mut indices = vec![0usize; n];
        for flat in 0..total {
            let mut r = flat;
            for slot in indices.iter_mut().rev() {
                *slot = r % m;
                r /= m;
            }
            let mono = monomial_of(&self.x_basis, &indices).expect("indices are in range");
            if kind.admits(&mono) {
                let f = monomial_function(&self.x_basis, &indices)?;
                return wrap_w(&f, &self.dist);
            }
        }
        Err(Error::Argument(
            "no monomials carry the requested degrees".into(),
        ))
    }

    fn pows(&self, n: usize) -> Vec<usize> {
        let mw = self.ny * self.nz;
        (0..n).map(|k| mw.pow((n - 1 - k) as u32)).collect()
    }

    /// Weight and the y/z/x flat indices of one pair tuple; None off support.
    fn pair_tuple(&self, idx: usize, pows: &[usize], mx: usize) -> Option<(f64, usize, usize, usize)> {
        let mw = self.ny * self.nz;
        let (mut w, mut yf, mut zf, mut xf) = (1.0, 0usize, 0usize, 0usize);
        for &pw in pows {
            let p = (idx / pw) % mw;
            let wq = self.wpair[p];
            if wq == 0.0 {
                return None;
            }
            w *= wq;
            yf = yf * self.ny + p / self.nz;
            zf = zf * self.nz + p % self.nz;
            xf = xf * mx + self.forced[p].expect("supported pairs force the first coordinate");
        }
        Some((w, yf, zf, xf))
    }

    fn pair_value(&self, n: usize, f: &TensorFunction, g: &TensorFunction, h: &TensorFunction) -> f64 {
        let pows = self.pows(n);
        let mx = self.wx.len();
        let mut acc = Complex64::ZERO;
        for idx in 0..f.len() {
            if let Some((w, yf, zf, _)) = self.pair_tuple(idx, &pows, mx) {
                acc += w * f.values()[idx] * g.values()[yf] * h.values()[zf];
            }
        }
        acc.norm()
    }

    /// Conditional mean of `conj(g h)` on the forced classes, cut to the
    /// admissible class and renormalized: the optimal pair update.
    fn f_step(
        &self,
        n: usize,
        kind: EstimateKind,
        g: &TensorFunction,
        h: &TensorFunction,
    ) -> Result<Option<TensorFunction>> {
        let mx = self.wx.len();
        let pows = self.pows(n);
        let mw = self.ny * self.nz;
        let mut num = vec![Complex64::ZERO; mx.pow(n as u32)];
        for idx in 0..mw.pow(n as u32) {
            if let Some((w, yf, zf, xf)) = self.pair_tuple(idx, &pows, mx) {
                num[xf] += w * (g.values()[yf] * h.values()[zf]).conj();
            }
        }
        for (xflat, v) in num.iter_mut().enumerate() {
            let mut r = xflat;
            let mut den = 1.0;
            for _ in 0..n {
                den *= self.wx[r % mx];
                r /= mx;
            }
            *v /= den;
        }
        let u = TensorFunction::new(n, self.wx.clone(), num)?;
        let ex = expand(&u, &self.x_basis)?;
        let (kept, mass) = match kind {
            EstimateKind::Homogeneous { .. } => keep_best_key(&ex, |m| kind.admits(m)),
            EstimateKind::Effective { .. } => {
                let kept = ex.retain(|m| kind.admits(m));
                let mass = kept.total_weight();
                (kept, mass)
            }
        };
        if mass <= STALL_MASS {
            return Ok(None);
        }
        let fx = kept
            .synthesize()
            .scale(Complex64::new(1.0 / mass.sqrt(), 0.0));
        Ok(Some(wrap_w(&fx, &self.dist)?))
    }

    /// Conjugated conditional mean on one side, projected to its heaviest
    /// class when the sides are constrained: the optimal side update.
    fn side_step(
        &self,
        n: usize,
        f: &TensorFunction,
        other: &TensorFunction,
        which: Coord,
        homog: bool,
    ) -> Result<Option<TensorFunction>> {
        let mx = self.wx.len();
        let pows = self.pows(n);
        let (msize, wside, basis) = match which {
            Coord::Y => (self.ny, &self.wy, &self.y_basis),
            _ => (self.nz, &self.wz, &self.z_basis),
        };
        let mut bucket = vec![Complex64::ZERO; msize.pow(n as u32)];
        for idx in 0..f.len() {
            if let Some((w, yf, zf, _)) = self.pair_tuple(idx, &pows, mx) {
                let (mine, oflat) = if which == Coord::Y { (yf, zf) } else { (zf, yf) };
                bucket[mine] += w * f.values()[idx] * other.values()[oflat];
            }
        }
        for (flat, v) in bucket.iter_mut().enumerate() {
            let mut r = flat;
            let mut den = 1.0;
            for _ in 0..n {
                den *= wside[r % msize];
                r /= msize;
            }
            *v = (*v / den).conj();
        }
        let t = TensorFunction::new(n, wside.clone(), bucket)?;
        if homog {
            let ex = expand(&t, basis)?;
            let (kept, mass) = keep_best_key(&ex, |_| true);
            if mass <= STALL_MASS {
                return Ok(None);
            }
            Ok(Some(kept.synthesize().scale(Complex64::new(1.0 / mass.sqrt(), 0.0))))
        } else {
            let nn = t.norm2();
            if nn <= STALL_MASS {
                return Ok(None);
            }
            Ok(Some(t.scale(Complex64::new(1.0 / nn.sqrt(), 0.0))))
        }
    }

    /// Unit start for one side, already inside its class when required.
    fn side_start(
        &self,
        n: usize,
        raw: TensorFunction,
        which: Coord,
        homog: bool,
    ) -> Result<TensorFunction> {
        let (wside, basis) = match which {
            Coord::Y => (&self.wy, &self.y_basis),
            _ => (&self.wz, &self.z_basis),
        };
        if homog {
            let ex = expand(&raw, basis)?;
            let (kept, mass) = keep_best_key(&ex, |_| true);
            if mass > STALL_MASS {
                return Ok(kept.synthesize().scale(Complex64::new(1.0 / mass.sqrt(), 0.0)));
            }
        } else {
            let nn = raw.norm2();
            if nn > STALL_MASS {
                return Ok(raw.scale(Complex64::new(1.0 / nn.sqrt(), 0.0)));
            }
        }
        Ok(TensorFunction::constant(n, wside.clone(), Complex64::ONE)?)
    }

    fn alternate(
        &self,
        n: usize,
        kind: EstimateKind,
        fallback: &TensorFunction,
        r: &mut impl Rng,
    ) -> Result<AltOutcome> {
        let mut f = fallback.clone();
        let raw_g = random_side(n, &self.wy, r);
        let raw_h = random_side(n, &self.wz, r);
        let mut g = self.side_start(n, raw_g, Coord::Y, kind.homogeneous())?;
        let mut h = self.side_start(n, raw_h, Coord::Z, kind.homogeneous())?;
        let mut value = self.pair_value(n, &f, &g, &h);
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        for _ in 0..MAX_ROUNDS {
            if let Some(nf) = self.f_step(n, kind, &g, &h)? {
                f = nf;
            }
            if let Some(ng) = self.side_step(n, &f, &h, Coord::Y, kind.homogeneous())? {
                g = ng;
            }
            if let Some(nh) = self.side_step(n, &f, &g, Coord::Z, kind.homogeneous())? {
                h = nh;
            }
            let next = self.pair_value(n, &f, &g, &h);
            iterations += 1;
            residual = (next - value).abs();
            value = next;
            if residual < ROUND_TOL {
                break;
            }
        }
        Ok(AltOutcome { value, iterations, residual, f, g, h })
    }
}

// ---------------------------------------------------------------------------
// base-case constants

/// Best correlation of a unit function orthogonal to the embedding span
/// against unit additive pair functions, with the witnesses.
#[derive(Clone, Debug)]
pub struct AdditiveBase {
    pub value: f64,
    /// Unit witness orthogonal to the embedding span; zero when the
    /// complement is trivial or the value vanishes.
    pub x_witness: TensorFunction,
    pub y_witness: TensorFunction,
    pub z_witness: TensorFunction,
}

impl AdditiveBase {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "value": self.value,
            "x_witness": self.x_witness.to_json(),
            "y_witness": self.y_witness.to_json(),
            "z_witness": self.z_witness.to_json(),
        })
    }
}

fn zero_fn(w: &[f64]) -> TensorFunction {
    TensorFunction::new(1, w.to_vec(), vec![Complex64::ZERO; w.len()])
        .expect("weights already validated")
}

/// Exact `max |E[f(x) (g(y) + h(z))]|` over unit `f` orthogonal to the
/// embedding span and `g + h` of unit pair norm: the top singular value of
/// the cross-moment operator between the two spans. Closed form, no search.
pub fn additive_base_constant(dist: &TripleDist, emb: &EmbeddingTriple) -> Result<AdditiveBase> {
    if !emb.is_valid(dist) {
        return Err(Error::Argument("embedding does not vanish on the support".into()));
    }
    let wx = marginal_weights(dist, Coord::X);
    let wy = marginal_weights(dist, Coord::Y);
    let wz = marginal_weights(dist, Coord::Z);
    let (ny, nz, wpair) = pair_weights(dist);
    let basis = SplitBasis::build(&wx, &emb.group, &emb.maps[0], None)?;
    let off: Vec<usize> = (0..basis.len())
        .filter(|&k| !matches!(basis.tag(k), BasisTag::Embed(_)))
        .collect();

    // orthonormal basis of the additive span, with the combination of the
    // y/z indicators that produced each direction
    let mut dirs: Vec<Vec<Complex64>> = Vec::new();
    let mut combos: Vec<Vec<Complex64>> = Vec::new();
    for cand_idx in 0..ny + nz {
        let mut v: Vec<Complex64> = (0..ny * nz)
            .map(|p| {
                let hit = if cand_idx < ny { p / nz == cand_idx } else { p % nz == cand_idx - ny };
                Complex64::new(if hit { 1.0 } else { 0.0 }, 0.0)
            })
            .collect();
        let mut combo = vec![Complex64::ZERO; ny + nz];
        combo[cand_idx] = Complex64::ONE;
        for (b, bc) in dirs.iter().zip(&combos) {
            let ip = wip(&wpair, &v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= ip * y;
            }
            for (x, y) in combo.iter_mut().zip(bc) {
                *x -= ip * y;
            }
        }
        let nn = wnorm2(&wpair, &v).sqrt();
        if nn > tolerance::RANK {
            for x in v.iter_mut() {
                *x /= nn;
            }
            for x in combo.iter_mut() {
                *x /= nn;
            }
            dirs.push(v);
            combos.push(combo);
        }
    }
    if off.is_empty() || dirs.is_empty() {
        return Ok(AdditiveBase {
            value: 0.0,
            x_witness: zero_fn(&wx),
            y_witness: zero_fn(&wy),
            z_witness: zero_fn(&wz),
        });
    }

    // cross moments between the off-tier x directions and the additive span
    let rows: Vec<Vec<Complex64>> = off
        .iter()
        .map(|&k| {
            dirs.iter()
                .map(|u| {
                    let mut acc = Complex64::ZERO;
                    for (key, p) in dist.atoms() {
                        let q = p.to_f64().expect("probability fits an f64");
                        acc += q * basis.element(k)[key[0]] * u[key[1] * nz + key[2]];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let kdim = dirs.len();
    let mut mm = vec![vec![Complex64::ZERO; kdim]; kdim];
    for s in 0..kdim {
        for t in 0..kdim {
            mm[s][t] = rows.iter().map(|row| row[s].conj() * row[t]).sum();
        }
    }
    let (vals, vecs) = hermitian_eigen(&mm)?;
    let value = vals.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    if value <= 1e-12 {
        return Ok(AdditiveBase {
            value,
            x_witness: zero_fn(&wx),
            y_witness: zero_fn(&wy),
            z_witness: zero_fn(&wz),
        });
    }
    let c = &vecs[0];
    let mc: Vec<Complex64> = rows
        .iter()
        .map(|row| row.iter().zip(c).map(|(mij, cj)| mij * cj).sum())
        .collect();
    let mut xvals = vec![Complex64::ZERO; wx.len()];
    for (i, &k) in off.iter().enumerate() {
        let a = (mc[i] / value).conj();
        for (xv, bv) in xvals.iter_mut().zip(basis.element(k)) {
            *xv += a * bv;
        }
    }
    let mut full = vec![Complex64::ZERO; ny + nz];
    for (cj, combo) in c.iter().zip(&combos) {
        for (slot, t) in full.iter_mut().zip(combo) {
            *slot += cj * t;
        }
    }
    Ok(AdditiveBase {
        value,
        x_witness: TensorFunction::new(1, wx, xvals)?,
        y_witness: TensorFunction::new(1, wy, full[..ny].to_vec())?,
        z_witness: TensorFunction::new(1, wz, full[ny..].to_vec())?,
    })
}

// ---------------------------------------------------------------------------
// relaxed base-case profile

struct ModestBlocks {
    wx: Vec<f64>,
    blocks: Vec<Vec<usize>>,
    mod_mass: f64,
    tau_max: f64,
}

fn modest_blocks(dist: &TripleDist, emb: &EmbeddingTriple, modest: &[usize]) -> Result<ModestBlocks> {
    if !emb.is_valid(dist) {
        return Err(Error::Argument("embedding does not vanish on the support".into()));
    }
    let mx = dist.alphabet(Coord::X).len();
    let mut sorted = modest.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != modest.len() {
        return Err(Error::Argument("modest symbols repeat".into()));
    }
    if sorted.len() < 2 {
        return Err(Error::Argument("modest set needs at least two symbols".into()));
    }
    if *sorted.last().expect("nonempty") >= mx {
        return Err(Error::Argument("modest symbol out of range".into()));
    }
    let wx = marginal_weights(dist, Coord::X);
    let mut by_value: BTreeMap<&GroupElem, Vec<usize>> = BTreeMap::new();
    for &s in &sorted {
        by_value.entry(&emb.maps[0][s]).or_default().push(s);
    }
    let blocks: Vec<Vec<usize>> = by_value.into_values().collect();
    let mod_mass: f64 = sorted.iter().map(|&s| wx[s]).sum();
    let split_block = blocks
        .iter()
        .any(|b| b.iter().filter(|&&s| wx[s] > 0.0).count() >= 2);
    let tau_max = if mod_mass > 0.0 && split_block { 2.0 / mod_mass } else { 0.0 };
    Ok(ModestBlocks { wx, blocks, mod_mass, tau_max })
}

impl ModestBlocks {
    /// Blockwise conditional-mean removal on the modest symbols, zero off
    /// them; an orthogonal projection in the weighted inner product.
    fn project(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; v.len()];
        for b in &self.blocks {
            let mass: f64 = b.iter().map(|&s| self.wx[s]).sum();
            if mass <= 0.0 {
                continue;
            }
            let mean = b.iter().map(|&s| self.wx[s] * v[s]).sum::<Complex64>() / mass;
            for &s in b {
                out[s] = v[s] - mean;
            }
        }
        out
    }

    /// A fixed unit direction inside the projection's range.
    fn pilot(&self) -> Option<Vec<Complex64>> {
        for b in &self.blocks {
            let live: Vec<usize> = b.iter().copied().filter(|&s| self.wx[s] > 0.0).collect();
            if live.len() >= 2 {
                let mut v = vec![Complex64::ZERO; self.wx.len()];
                v[live[0]] = Complex64::ONE;
                let mut p = self.project(&v);
                let nn = wnorm2(&self.wx, &p).sqrt();
                for t in p.iter_mut() {
                    *t /= nn;
                }
                return Some(p);
            }
        }
        None
    }
}

/// Resampling variance of a single-coordinate function on the modest set,
/// blocked by the embedding fibers: draw `x` from the modest slice of the
/// first marginal, redraw `x'` inside the block of `x`, and average
/// `|f(x) - f(x')|^2`. Zero when every block is a single symbol.
pub fn modest_variance(
    dist: &TripleDist,
    emb: &EmbeddingTriple,
    modest: &[usize],
    f: &TensorFunction,
) -> Result<f64> {
    let blocks = modest_blocks(dist, emb, modest)?;
    if f.n() != 1 || f.alphabet_size() != blocks.wx.len() {
        return Err(Error::Argument(
            "variance needs a single-coordinate function on the first alphabet".into(),
        ));
    }
    if blocks.mod_mass <= 0.0 {
        return Ok(0.0);
    }
    let proj = blocks.project(f.values());
    Ok(2.0 * wnorm2(&blocks.wx, &proj) / blocks.mod_mass)
}

/// Unit maximizer of `|<f, u>|` subject to the modest-variance floor
/// `s2 <= |proj f|^2`. None when `u` carries no usable mass.
fn constrained_direction(blocks: &ModestBlocks, s2: f64, u: &[Complex64]) -> Option<Vec<Complex64>> {
    let w = &blocks.wx;
    let total = wnorm2(w, u);
    if total <= STALL_MASS {
        return None;
    }
    let unit = |v: &[Complex64], nn: f64| -> Vec<Complex64> {
        v.iter().map(|x| x / nn).collect()
    };
    if s2 <= 0.0 {
        return Some(unit(u, total.sqrt()));
    }
    let p1 = blocks.project(u);
    let n1 = wnorm2(w, &p1);
    if n1 >= s2 * total {
        return Some(unit(u, total.sqrt()));
    }
    let s = s2.sqrt();
    let c0 = (1.0 - s2).max(0.0).sqrt();
    let mut out;
    if n1 > STALL_MASS {
        let p0: Vec<Complex64> = u.iter().zip(&p1).map(|(a, b)| a - b).collect();
        let n0 = wnorm2(w, &p0);
        out = unit(&p1, n1.sqrt() / s);
        if n0 > STALL_MASS {
            for (o, v) in out.iter_mut().zip(&p0) {
                *o += c0 * v / n0.sqrt();
            }
        }
    } else {
        // nothing of u points along the modest directions; spend the
        // mandatory mass on a fixed one
        let e = blocks.pilot()?;
        out = unit(u, total.sqrt() / c0);
        for (o, v) in out.iter_mut().zip(&e) {
            *o += s * v;
        }
    }
    let nn = wnorm2(w, &out).sqrt();
    if nn <= 1e-13 {
        return None;
    }
    for o in out.iter_mut() {
        *o /= nn;
    }
    Some(out)
}

/// One grid point of the relaxed base-case profile.
#[derive(Clone, Debug)]
pub struct ProfilePoint {
    pub tau: f64,
    /// No unit function attains the requested variance floor.
    pub infeasible: bool,
    /// Best `|E[f g h]|` found subject to the floor; zero when infeasible.
    pub value: f64,
    pub witnesses: Option<(TensorFunction, TensorFunction, TensorFunction)>,
}

impl ProfilePoint {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "tau": self.tau,
            "infeasible": self.infeasible,
            "value": self.value,
            "witnesses": self.witnesses.as_ref().map(|(f, g, h)| json!({
                "x": f.to_json(),
                "y": g.to_json(),
                "z": h.to_json(),
            })),
        })
    }
}

fn relaxed_alternate(
    atoms: &[([usize; 3], f64)],
    blocks: &ModestBlocks,
    wy: &[f64],
    wz: &[f64],
    s2: f64,
    r: &mut impl Rng,
) -> Result<(f64, TensorFunction, TensorFunction, TensorFunction)> {
    let wx = &blocks.wx;
    let corr = |fv: &[Complex64], gv: &[Complex64], hv: &[Complex64]| -> f64 {
        atoms
            .iter()
            .map(|&(k, p)| p * fv[k[0]] * gv[k[1]] * hv[k[2]])
            .sum::<Complex64>()
            .norm()
    };
    let raw_f = random_values(wx.len(), r);
    let mut gv = random_values(wy.len(), r);
    let mut hv = random_values(wz.len(), r);
    for (vals, w) in [(&mut gv, wy), (&mut hv, wz)] {
        let nn = wnorm2(w, vals).sqrt();
        for v in vals.iter_mut() {
            *v /= nn;
        }
    }
    let mut fv = match constrained_direction(blocks, s2, &raw_f) {
        Some(v) => v,
        None => blocks.pilot().ok_or_else(|| {
            Error::Argument("variance floor needs a block with two live symbols".into())
        })?,
    };
    let mut value = corr(&fv, &gv, &hv);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ROUNDS {
        // f step under the floor
        let mut t = vec![Complex64::ZERO; wx.len()];
        for &(k, p) in atoms {
            t[k[0]] += p * gv[k[1]] * hv[k[2]];
        }
        for (s, tv) in t.iter_mut().enumerate() {
            *tv = if wx[s] > 0.0 { (*tv / wx[s]).conj() } else { Complex64::ZERO };
        }
        if let Some(nf) = constrained_direction(blocks, s2, &t) {
            fv = nf;
        }
        // unconstrained side steps
        let mut t = vec![Complex64::ZERO; wy.len()];
        for &(k, p) in atoms {
            t[k[1]] += p * fv[k[0]] * hv[k[2]];
        }
        for (s, tv) in t.iter_mut().enumerate() {
            *tv = if wy[s] > 0.0 { (*tv / wy[s]).conj() } else { Complex64::ZERO };
        }
        let nn = wnorm2(wy, &t);
        if nn > STALL_MASS {
            let nn = nn.sqrt();
            for (v, tv) in gv.iter_mut().zip(&t) {
                *v = tv / nn;
            }
        }
        let mut t = vec![Complex64::ZERO; wz.len()];
        for &(k, p) in atoms {
            t[k[2]] += p * fv[k[0]] * gv[k[1]];
        }
        for (s, tv) in t.iter_mut().enumerate() {
            *tv = if wz[s] > 0.0 { (*tv / wz[s]).conj() } else { Complex64::ZERO };
        }
        let nn = wnorm2(wz, &t);
        if nn > STALL_MASS {
            let nn = nn.sqrt();
            for (v, tv) in hv.iter_mut().zip(&t) {
                *v = tv / nn;
            }
        }
        let next = corr(&fv, &gv, &hv);
        residual = (next - value).abs();
        value = next;
        if residual < ROUND_TOL {
            break;
        }
    }
    let _ = residual;
    Ok((
        value,
        TensorFunction::new(1, wx.clone(), fv)?,
        TensorFunction::new(1, wy.to_vec(), gv)?,
        TensorFunction::new(1, wz.to_vec(), hv)?,
    ))
}

/// Best `|E[f(x) g(y) h(z)]|` over unit functions with the modest-set
/// variance of `f` held at or above each grid value, estimated by
/// constrained alternating maximization; grid values past the attainable
/// maximum come back flagged infeasible.
pub fn relaxed_base_profile(
    dist: &TripleDist,
    emb: &EmbeddingTriple,
    modest: &[usize],
    taus: &[f64],
    restarts: usize,
    seed: u64,
) -> Result<Vec<ProfilePoint>> {
    let blocks = modest_blocks(dist, emb, modest)?;
    if restarts == 0 {
        return Err(Error::Argument("need at least one restart".into()));
    }
    if taus.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::Argument(
            "variance floors must be finite and nonnegative".into(),
        ));
    }
    let atoms: Vec<([usize; 3], f64)> = dist
        .atoms()
        .map(|(k, p)| (*k, p.to_f64().expect("probability fits an f64")))
        .collect();
    let wy = marginal_weights(dist, Coord::Y);
    let wz = marginal_weights(dist, Coord::Z);
    let mut points = Vec::with_capacity(taus.len());
    for (ti, &tau) in taus.iter().enumerate() {
        if tau > blocks.tau_max + tolerance::EQ {
            points.push(ProfilePoint { tau, infeasible: true, value: 0.0, witnesses: None });
            continue;
        }
        let s2 = (tau * blocks.mod_mass / 2.0).clamp(0.0, 1.0);
        let runs: Vec<(f64, TensorFunction, TensorFunction, TensorFunction)> = (0..restarts)
            .into_par_iter()
            .map(|ri| {
                let mut r =
                    rng::substream_indexed(seed, "extremal.relaxed", (ti * restarts + ri) as u64);
                relaxed_alternate(&atoms, &blocks, &wy, &wz, s2, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for i in 1..runs.len() {
            if runs[i].0 >= runs[best].0 {
                best = i;
            }
        }
        let (value, f, g, h) = runs.into_iter().nth(best).expect("at least one restart");
        debug_assert!(
            modest_variance(dist, emb, modest, &f)? >= tau - 1e-9,
            "winning witness dropped below the variance floor"
        );
        points.push(ProfilePoint { tau, infeasible: false, value, witnesses: Some((f, g, h)) });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// group linearity identity

fn decode(mut idx: usize, m: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = idx % m;
        idx /= m;
    }
}

/// Both sides of the linearity-test identity over `H^n`: the average of
/// `f(a) g(b) h(c)` over uniform `a + b + c = 0`, and the character sum
/// `sum_chi fhat(chi) ghat(chi) hhat(chi)`. Computed by independent routes
/// and returned for comparison.
pub fn group_linearity_correlation(
    group: &crate::group::AbelianGroup,
    f: &TensorFunction,
    g: &TensorFunction,
    h: &TensorFunction,
) -> Result<(Complex64, Complex64)> {
    let q = group.order() as usize;
    let n = f.n();
    if g.n() != n || h.n() != n {
        return Err(Error::Argument(format!(
            "coordinate counts differ: {n} vs {} vs {}",
            g.n(),
            h.n()
        )));
    }
    for func in [f, g, h] {
        if func.alphabet_size() != q {
            return Err(Error::Argument(format!(
                "function over {} symbols does not fit the group of order {q}",
                func.alphabet_size()
            )));
        }
        if func.weights().iter().any(|w| (w - 1.0 / q as f64).abs() > tolerance::EQ) {
            return Err(Error::Argument(
                "group functions must carry uniform weights".into(),
            ));
        }
    }
    if (q as f64).powi(2 * n as i32) > ENUM_BUDGET {
        return Err(Error::Resource(format!(
            "group of order {q} over {n} coordinates is past the enumeration budget"
        )));
    }
    let elems = group.elements();
    let pos: BTreeMap<GroupElem, usize> =
        elems.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
    let neg: Vec<usize> = elems.iter().map(|e| pos[&group.neg(e)]).collect();
    let add: Vec<Vec<usize>> = elems
        .iter()
        .map(|a| elems.iter().map(|b| pos[&group.add(a, b)]).collect())
        .collect();
    let total = q.pow(n as u32);

    let mut lhs = Complex64::ZERO;
    let mut da = vec![0usize; n];
    let mut db = vec![0usize; n];
    for af in 0..total {
        decode(af, q, &mut da);
        for bf in 0..total {
            decode(bf, q, &mut db);
            let mut cf = 0usize;
            for k in 0..n {
                cf = cf * q + neg[add[da[k]][db[k]]];
            }
            lhs += f.values()[af] * g.values()[bf] * h.values()[cf];
        }
    }
    lhs /= (total * total) as f64;

    let chars = all_characters(group);
    let table: Vec<Vec<Complex64>> = chars
        .iter()
        .map(|ch| elems.iter().map(|e| ch.eval(e)).collect())
        .collect();
    let hat = |func: &TensorFunction| -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; total];
        let mut dt = vec![0usize; n];
        let mut dx = vec![0usize; n];
        for (tf, slot) in out.iter_mut().enumerate() {
            decode(tf, q, &mut dt);
            let mut acc = Complex64::ZERO;
            for xf in 0..total {
                decode(xf, q, &mut dx);
                let mut chi = Complex64::ONE;
                for k in 0..n {
                    chi *= table[dt[k]][dx[k]];
                }
                acc += func.values()[xf] * chi.conj();
            }
            *slot = acc / total as f64;
        }
        out
    };
    let fh = hat(f);
    let gh = hat(g);
    let hh = hat(h);
    let rhs: Complex64 = (0..total).map(|t| fh[t] * gh[t] * hh[t]).sum();
    Ok((lhs, rhs))
}
