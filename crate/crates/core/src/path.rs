//! Walk transforms on triple distributions and the machinery built on them:
//! alternating lifts of Abelian labelings, a correlation transfer bound, a
//! saturation loop that grows labeling images into subgroups, and a fiber
//! uniformization used to put pair marginals into product-uniform position.
//!
//! The walk transform replaces one coordinate by a tuple of labels read off a
//! random walk on the bipartite support graph of the other two coordinates.
//! All distribution surgery here is exact rational arithmetic.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::json;

use crate::dist::{Alphabet, Coord, Rat, TripleDist, COORDS};
use crate::embed::{build_master_embedding, is_saturated, EmbeddingTriple, GroupMap, MasterEmbedding};
use crate::error::{Error, Result};
use crate::exact_linalg::unimodular_diagonalize;
use crate::group::{AbelianGroup, GroupElem};
use crate::tensor::{marginal_weights, TensorFunction};
use crate::tolerance;

/// One coordinate of `base` replaced by label tuples of an odd-length walk.
///
/// `tuples[i]` lists the base symbols (in walk order) named by symbol `i` of
/// the moved coordinate of `result`; the other two coordinates keep the base
/// alphabets.
#[derive(Clone, Debug)]
pub struct PathDistribution {
    pub base: TripleDist,
    pub coordinate: Coord,
    pub length: usize,
    pub result: TripleDist,
    pub tuples: Vec<Vec<usize>>,
}

impl PathDistribution {
    pub fn tuple_index(&self, t: &[usize]) -> Option<usize> {
        self.tuples.binary_search_by(|probe| probe.as_slice().cmp(t)).ok()
    }

    /// Index of the constant tuple `(s, s, .., s)`, present whenever `s`
    /// supports an edge to bounce on.
    pub fn constant_tuple_index(&self, s: usize) -> Option<usize> {
        self.tuple_index(&vec![s; self.length])
    }
}

fn tuple_name(alpha: &Alphabet, t: &[usize]) -> String {
    if t.len() == 1 {
        alpha.name(t[0]).to_string()
    } else {
        let parts: Vec<&str> = t.iter().map(|&s| alpha.name(s)).collect();
        format!("({})", parts.join(","))
    }
}

fn permute_dist(d: &TripleDist, perm: &[usize; 3]) -> TripleDist {
    let al = d.alphabets();
    let alphabets = [al[perm[0]].clone(), al[perm[1]].clone(), al[perm[2]].clone()];
    let atoms: Vec<([usize; 3], Rat)> = d
        .atoms()
        .map(|(k, p)| ([k[perm[0]], k[perm[1]], k[perm[2]]], p.clone()))
        .collect();
    TripleDist::new(alphabets, atoms).expect("coordinate permutation keeps the distribution valid")
}

/// Walk with the first coordinate moved: start at a second-coordinate vertex
/// drawn from its marginal, alternate sides for `length` steps, record the
/// first-coordinate label of each traversed atom.
fn canonical_walk(
    dist: &TripleDist,
    length: usize,
    atom_budget: usize,
) -> Result<(TripleDist, Vec<Vec<usize>>)> {
    let mu_y = dist.single_marginal(Coord::Y);
    let mu_z = dist.single_marginal(Coord::Z);
    let mut by_y: Vec<Vec<([usize; 3], Rat)>> = vec![Vec::new(); dist.alphabet(Coord::Y).len()];
    let mut by_z: Vec<Vec<([usize; 3], Rat)>> = vec![Vec::new(); dist.alphabet(Coord::Z).len()];
    for (k, p) in dist.atoms() {
        by_y[k[1]].push((*k, p.clone()));
        by_z[k[2]].push((*k, p.clone()));
    }

    // state: (start vertex, labels so far, current side+vertex) -> mass
    type WalkState = (usize, Vec<usize>, (bool, usize));
    let mut states: BTreeMap<WalkState, Rat> = BTreeMap::new();
    for y0 in dist.support_symbols(Coord::Y) {
        states.insert((y0, Vec::new(), (false, y0)), mu_y[y0].clone());
    }
    for _ in 0..length {
        let mut next: BTreeMap<WalkState, Rat> = BTreeMap::new();
        for ((y0, prefix, (on_end_side, v)), p) in &states {
            let (edges, denom) = if *on_end_side {
                (&by_z[*v], &mu_z[*v])
            } else {
                (&by_y[*v], &mu_y[*v])
            };
            for (k, q) in edges {
                let target = if *on_end_side { (false, k[1]) } else { (true, k[2]) };
                let mut labels = prefix.clone();
                labels.push(k[0]);
                let w = p * q / denom;
                *next
                    .entry((*y0, labels, target))
                    .or_insert_with(Rat::zero) += w;
            }
            if next.len() > atom_budget {
                return Err(Error::Resource(format!(
                    "walk state count exceeded the atom budget {atom_budget}"
                )));
            }
        }
        states = next;
    }

    let tuple_set: BTreeSet<Vec<usize>> = states.keys().map(|(_, t, _)| t.clone()).collect();
    let tuples: Vec<Vec<usize>> = tuple_set.into_iter().collect();
    let index_of: BTreeMap<&[usize], usize> = tuples
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_slice(), i))
        .collect();
    let xal = Alphabet::new(
        tuples
            .iter()
            .map(|t| tuple_name(dist.alphabet(Coord::X), t))
            .collect(),
    )?;

    let mut atoms: Vec<([usize; 3], Rat)> = Vec::with_capacity(states.len());
    for ((y0, labels, (on_end_side, v)), p) in states {
        debug_assert!(on_end_side, "odd walks end opposite the start side");
        atoms.push(([index_of[labels.as_slice()], y0, v], p));
    }
    let result = TripleDist::new(
        [
            xal,
            dist.alphabet(Coord::Y).clone(),
            dist.alphabet(Coord::Z).clone(),
        ],
        atoms,
    )?;
    Ok((result, tuples))
}

/// Replace `moved` by tuples of labels along an odd-length walk over the
/// bipartite support graph of the other two coordinates. Length 1 returns the
/// distribution unchanged (singleton tuples).
///
/// Orientation is cyclic: the walk starts on the coordinate after `moved`
/// and ends on the one after that, so the start and end marginals of those
/// coordinates are preserved exactly.
pub fn path_trick(
    dist: &TripleDist,
    moved: Coord,
    length: usize,
    atom_budget: usize,
) -> Result<PathDistribution> {
    if length == 0 || length % 2 == 0 {
        return Err(Error::Argument(format!(
            "walk length must be odd and positive, got {length}"
        )));
    }
    if length == 1 {
        let tuples: Vec<Vec<usize>> = (0..dist.alphabet(moved).len()).map(|s| vec![s]).collect();
        return Ok(PathDistribution {
            base: dist.clone(),
            coordinate: moved,
            length,
            result: dist.clone(),
            tuples,
        });
    }
    let to_canon: [usize; 3] = match moved {
        Coord::X => [0, 1, 2],
        Coord::Y => [1, 2, 0],
        Coord::Z => [2, 0, 1],
    };
    let permuted = permute_dist(dist, &to_canon);
    let (canon_result, tuples) = canonical_walk(&permuted, length, atom_budget)?;
    let mut inv = [0usize; 3];
    for (i, &j) in to_canon.iter().enumerate() {
        inv[j] = i;
    }
    let result = permute_dist(&canon_result, &inv);
    Ok(PathDistribution {
        base: dist.clone(),
        coordinate: moved,
        length,
        result,
        tuples,
    })
}

// ---------------------------------------------------------------------------
// doubling construction
// ---------------------------------------------------------------------------

/// (labels, start-side entries, end-side entries) of a partial walk record.
type PathRecord = (Vec<usize>, Vec<usize>, Vec<usize>);

/// Records of two independent edges sharing their end-side vertex.
fn base_records(dist: &TripleDist) -> BTreeMap<PathRecord, Rat> {
    let mu_z = dist.single_marginal(Coord::Z);
    let mut by_z: Vec<Vec<([usize; 3], Rat)>> = vec![Vec::new(); dist.alphabet(Coord::Z).len()];
    for (k, p) in dist.atoms() {
        by_z[k[2]].push((*k, p.clone()));
    }
    let mut recs: BTreeMap<PathRecord, Rat> = BTreeMap::new();
    for edges in &by_z {
        for (k1, p1) in edges {
            for (k2, p2) in edges {
                let key = (
                    vec![k1[0], k2[0]],
                    vec![k1[1], k2[1]],
                    vec![k1[2]],
                );
                *recs.entry(key).or_insert_with(Rat::zero) += p1 * p2 / &mu_z[k1[2]];
            }
        }
    }
    recs
}

/// Glue two independent records sharing their first start-side entry; the
/// first record is reversed so the shared vertex sits in the middle.
fn double_records(
    dist: &TripleDist,
    recs: &BTreeMap<PathRecord, Rat>,
    atom_budget: usize,
) -> Result<BTreeMap<PathRecord, Rat>> {
    let mu_y = dist.single_marginal(Coord::Y);
    let mut by_first: BTreeMap<usize, Vec<(&PathRecord, &Rat)>> = BTreeMap::new();
    for (r, p) in recs {
        by_first.entry(r.1[0]).or_default().push((r, p));
    }
    #[cfg(debug_assertions)]
    for (y, group) in &by_first {
        let total: Rat = group.iter().map(|(_, p)| (*p).clone()).sum();
        debug_assert_eq!(total, mu_y[*y], "record start marginal drifted");
    }
    let mut out: BTreeMap<PathRecord, Rat> = BTreeMap::new();
    for (y, group) in &by_first {
        for (r1, p1) in group {
            for (r2, p2) in group {
                let mut xs: Vec<usize> = r1.0.iter().rev().copied().collect();
                xs.extend_from_slice(&r2.0);
                let mut ys: Vec<usize> = r1.1.iter().rev().copied().collect();
                ys.extend_from_slice(&r2.1[1..]);
                let mut zs: Vec<usize> = r1.2.iter().rev().copied().collect();
                zs.extend_from_slice(&r2.2);
                *out.entry((xs, ys, zs)).or_insert_with(Rat::zero) += *p1 * *p2 / &mu_y[*y];
                if out.len() > atom_budget {
                    return Err(Error::Resource(format!(
                        "record count exceeded the atom budget {atom_budget}"
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// The first-coordinate walk of length `2^t - 1`, built by the doubling
/// recursion instead of step-by-step walking: records of length `2^t` are
/// glued pairwise, then the output keeps the first `2^t - 1` labels, the
/// first start-side entry, and the last end-side entry.
///
/// Agrees atom-for-atom with [`path_trick`] at the same length.
pub fn doubling_construction(dist: &TripleDist, t: u32, atom_budget: usize) -> Result<TripleDist> {
    if t == 0 {
        return Err(Error::Argument("doubling needs t >= 1".into()));
    }
    let mut recs = base_records(dist);
    if recs.len() > atom_budget {
        return Err(Error::Resource(format!(
            "record count exceeded the atom budget {atom_budget}"
        )));
    }
    for _ in 1..t {
        recs = double_records(dist, &recs, atom_budget)?;
    }
    let keep = (1usize << t) - 1;
    let mut folded: BTreeMap<(Vec<usize>, usize, usize), Rat> = BTreeMap::new();
    for ((xs, ys, zs), p) in recs {
        let key = (xs[..keep].to_vec(), ys[0], *zs.last().expect("records carry an end entry"));
        *folded.entry(key).or_insert_with(Rat::zero) += p;
    }
    let tuple_set: BTreeSet<Vec<usize>> = folded.keys().map(|(t, _, _)| t.clone()).collect();
    let tuples: Vec<Vec<usize>> = tuple_set.into_iter().collect();
    let index_of: BTreeMap<&[usize], usize> = tuples
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_slice(), i))
        .collect();
    let xal = Alphabet::new(
        tuples
            .iter()
            .map(|t| tuple_name(dist.alphabet(Coord::X), t))
            .collect(),
    )?;
    let atoms: Vec<([usize; 3], Rat)> = folded
        .into_iter()
        .map(|((t, y, z), p)| ([index_of[t.as_slice()], y, z], p))
        .collect();
    TripleDist::new(
        [
            xal,
            dist.alphabet(Coord::Y).clone(),
            dist.alphabet(Coord::Z).clone(),
        ],
        atoms,
    )
}

// ---------------------------------------------------------------------------
// lifts
// ---------------------------------------------------------------------------

/// Alternating-sum lift of a labeling along walk tuples:
/// `(x_1, .., x_l) -> m(x_1) - m(x_2) + m(x_3) - ..`.
pub fn lift_alternating(map: &GroupMap, tuples: &[Vec<usize>]) -> GroupMap {
    let g = &map.group;
    let values: Vec<GroupElem> = tuples
        .iter()
        .map(|t| {
            let mut acc = g.zero();
            for (j, &s) in t.iter().enumerate() {
                if j % 2 == 0 {
                    acc = g.add(&acc, &map.values[s]);
                } else {
                    acc = g.sub(&acc, &map.values[s]);
                }
            }
            acc
        })
        .collect();
    GroupMap {
        group: g.clone(),
        values,
    }
}

/// Lift a valid labeling triple through a walk: the moved coordinate gets the
/// alternating sums, the other two keep their maps, and validity carries over
/// because the edge relations telescope along the walk.
pub fn lift_embedding(e: &EmbeddingTriple, path: &PathDistribution) -> EmbeddingTriple {
    let mc = path.coordinate.idx();
    let mut maps = e.maps.clone();
    maps[mc] = lift_alternating(
        &GroupMap {
            group: e.group.clone(),
            values: e.maps[mc].clone(),
        },
        &path.tuples,
    )
    .values;
    let out = EmbeddingTriple {
        group: e.group.clone(),
        maps,
    };
    debug_assert!(
        !e.is_valid(&path.base) || out.is_valid(&path.result),
        "lift must preserve validity"
    );
    out
}

// ---------------------------------------------------------------------------
// correlation transfer bound
// ---------------------------------------------------------------------------

/// Certificate that `|E[f g h]|^(2^t) <= |E[F g h']|` where the right side is
/// taken over the length `2^t - 1` walk distribution, `F` is the signed
/// product of `f` along walk slices, and `h'` re-weights the end coordinate.
#[derive(Clone, Debug)]
pub struct CorrelationBound {
    pub lhs: f64,
    pub rhs: f64,
    /// `F` on tuples of the walk distribution's first coordinate.
    pub x_factor: TensorFunction,
    /// `h'(z) = E[conj(f) conj(g) | z]` on the base end coordinate.
    pub end_factor: TensorFunction,
    pub path: PathDistribution,
}

impl CorrelationBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + tolerance::INEQ_SLACK
    }
}

fn for_each_combo(count: usize, n: usize, mut body: impl FnMut(&[usize])) {
    if count == 0 && n > 0 {
        return;
    }
    let mut idx = vec![0usize; n];
    loop {
        body(&idx);
        let mut i = n;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < count {
                break;
            }
            idx[i] = 0;
        }
    }
}

fn combos_within(count: usize, n: usize, budget: usize, what: &str) -> Result<()> {
    let total = (count as u128).checked_pow(n as u32);
    match total {
        Some(v) if v <= budget as u128 => Ok(()),
        _ => Err(Error::Resource(format!(
            "{what}: {count}^{n} exceeds the budget {budget}"
        ))),
    }
}

fn ratf(r: &Rat) -> f64 {
    r.to_f64().expect("probability fits in f64")
}

/// Transfer a 3-wise correlation over `dist`-tensor powers to a 2-wise-like
/// expectation over the walk distribution of length `2^t - 1`.
///
/// All of `f, g, h` must be 1-bounded over-all (not just on support) and live
/// on the tensor powers of the three coordinates with a shared `n`.
pub fn path_correlation_bound(
    dist: &TripleDist,
    f: &TensorFunction,
    g: &TensorFunction,
    h: &TensorFunction,
    t: u32,
    budget: usize,
) -> Result<CorrelationBound> {
    if t == 0 {
        return Err(Error::Argument("walk exponent t must be at least 1".into()));
    }
    let n = f.n();
    if g.n() != n || h.n() != n {
        return Err(Error::Argument(format!(
            "tensor powers disagree: {} vs {} vs {}",
            n,
            g.n(),
            h.n()
        )));
    }
    for (func, c, label) in [(f, Coord::X, "f"), (g, Coord::Y, "g"), (h, Coord::Z, "h")] {
        if func.alphabet_size() != dist.alphabet(c).len() {
            return Err(Error::Argument(format!(
                "{label} lives on {} symbols but the {} alphabet has {}",
                func.alphabet_size(),
                c.name(),
                dist.alphabet(c).len()
            )));
        }
        if !func.is_one_bounded() {
            return Err(Error::Argument(format!(
                "{label} must be 1-bounded, sup norm is {}",
                func.sup_norm()
            )));
        }
    }

    let ell = (1usize << t) - 1;
    let path = path_trick(dist, Coord::X, ell, budget)?;

    let base_atoms: Vec<([usize; 3], f64)> =
        dist.atoms().map(|(k, p)| (*k, ratf(p))).collect();
    let path_atoms: Vec<([usize; 3], f64)> =
        path.result.atoms().map(|(k, p)| (*k, ratf(p))).collect();
    let tuple_count = path.tuples.len();
    let z_size = dist.alphabet(Coord::Z).len();
    combos_within(base_atoms.len(), n, budget, "base expectation")?;
    combos_within(path_atoms.len(), n, budget, "walk expectation")?;
    combos_within(tuple_count, n, budget, "tuple factor table")?;
    combos_within(z_size, n, budget, "end factor table")?;

    // lhs = |E[f g h]|^(2^t) over the n-fold base power
    let mut xs = vec![0usize; n];
    let mut ys = vec![0usize; n];
    let mut zs = vec![0usize; n];
    let mut lhs_acc = Complex64::new(0.0, 0.0);
    for_each_combo(base_atoms.len(), n, |combo| {
        let mut w = 1.0;
        for (i, &a) in combo.iter().enumerate() {
            let (k, p) = &base_atoms[a];
            w *= p;
            xs[i] = k[0];
            ys[i] = k[1];
            zs[i] = k[2];
        }
        lhs_acc += w * f.eval(&xs) * g.eval(&ys) * h.eval(&zs);
    });
    let lhs = lhs_acc.norm().powi(1 << t);

    // h'(z-tuple) = E[conj f conj g | z-tuple] under the base power
    let mu_z: Vec<f64> = marginal_weights(dist, Coord::Z);
    let hp_len = z_size.pow(n as u32);
    let mut hp = vec![Complex64::new(0.0, 0.0); hp_len];
    for_each_combo(base_atoms.len(), n, |combo| {
        let mut w = 1.0;
        for (i, &a) in combo.iter().enumerate() {
            let (k, p) = &base_atoms[a];
            w *= p / mu_z[k[2]];
            xs[i] = k[0];
            ys[i] = k[1];
            zs[i] = k[2];
        }
        let zidx = zs.iter().fold(0usize, |acc, &z| acc * z_size + z);
        hp[zidx] += w * (f.eval(&xs) * g.eval(&ys)).conj();
    });
    debug_assert!(
        hp.iter().all(|v| v.norm() <= 1.0 + tolerance::INEQ_SLACK),
        "conditional expectation of a 1-bounded product stays 1-bounded"
    );

    // F on n-tuples of walk tuples: the signed slice product of f
    let f_len = tuple_count.pow(n as u32);
    let mut fvals = vec![Complex64::new(0.0, 0.0); f_len];
    let mut slice = vec![0usize; n];
    for_each_combo(tuple_count, n, |combo| {
        let read = |k: usize, slice: &mut [usize]| {
            for (i, &ti) in combo.iter().enumerate() {
                slice[i] = path.tuples[ti][k];
            }
        };
        read(ell - 1, &mut slice);
        let mut val = f.eval(&slice);
        for j in 1..(1usize << (t - 1)) {
            read(2 * j - 2, &mut slice);
            val *= f.eval(&slice);
            read(2 * j - 1, &mut slice);
            val *= f.eval(&slice).conj();
        }
        let fidx = combo.iter().fold(0usize, |acc, &ti| acc * tuple_count + ti);
        fvals[fidx] = val;
    });

    // rhs = |E[F g h']| over the n-fold walk power
    let mut rhs_acc = Complex64::new(0.0, 0.0);
    for_each_combo(path_atoms.len(), n, |combo| {
        let mut w = 1.0;
        let mut fidx = 0usize;
        let mut zidx = 0usize;
        for (i, &a) in combo.iter().enumerate() {
            let (k, p) = &path_atoms[a];
            w *= p;
            fidx = fidx * tuple_count + k[0];
            ys[i] = k[1];
            zidx = zidx * z_size + k[2];
        }
        rhs_acc += w * fvals[fidx] * g.eval(&ys) * hp[zidx];
    });
    let rhs = rhs_acc.norm();

    let x_factor = TensorFunction::new(n, marginal_weights(&path.result, Coord::X), fvals)?;
    let end_factor = TensorFunction::new(n, marginal_weights(dist, Coord::Z), hp)?;
    Ok(CorrelationBound {
        lhs,
        rhs,
        x_factor,
        end_factor,
        path,
    })
}

// ---------------------------------------------------------------------------
// saturation
// ---------------------------------------------------------------------------

/// One committed walk of the saturation loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SaturationStep {
    pub coordinate: Coord,
    pub length: usize,
}

/// What the saturation loop did and what held afterwards. Checks are
/// recorded, not enforced: a false entry means the loop finished but the
/// stated postcondition failed on this input.
#[derive(Clone, Debug)]
pub struct SaturationTranscript {
    pub steps: Vec<SaturationStep>,
    pub final_group: Option<AbelianGroup>,
    pub postcondition_checks: Vec<(String, bool)>,
}

impl SaturationTranscript {
    pub fn all_checks_pass(&self) -> bool {
        !self.postcondition_checks.is_empty() && self.postcondition_checks.iter().all(|(_, ok)| *ok)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "steps": self
                .steps
                .iter()
                .map(|s| json!({"coordinate": s.coordinate.name(), "length": s.length}))
                .collect::<Vec<_>>(),
            "final_group": self.final_group.as_ref().map(|g| g.factors().to_vec()),
            "postcondition_checks": self
                .postcondition_checks
                .iter()
                .map(|(name, ok)| json!([name, ok]))
                .collect::<Vec<_>>(),
        })
    }
}

/// Budgets for the saturation loop and its walks.
#[derive(Clone, Debug)]
pub struct SaturationLimits {
    /// largest walk length tried when searching for a pair-completing walk
    pub max_length: usize,
    /// walk state / record budget per transform
    pub atom_budget: usize,
    /// saturation rounds before giving up; defaults to the bundle group order
    pub max_rounds: Option<usize>,
    /// budget for re-enumerating embeddings of the saturated distribution
    pub enumeration_budget: u64,
}

impl Default for SaturationLimits {
    fn default() -> Self {
        SaturationLimits {
            max_length: 15,
            atom_budget: 100_000,
            max_rounds: None,
            enumeration_budget: 2_000_000,
        }
    }
}

/// Result of the saturation loop: the transformed distribution, its bundled
/// labeling re-declared into a canonical group, the re-enumerated master
/// bundle, and the transcript.
#[derive(Clone, Debug)]
pub struct SaturationOutcome {
    pub dist: TripleDist,
    pub embedding: EmbeddingTriple,
    pub master: MasterEmbedding,
    pub transcript: SaturationTranscript,
}

/// Values a labeling takes on the support symbols of one coordinate.
pub fn support_image(dist: &TripleDist, c: Coord, e: &EmbeddingTriple) -> BTreeSet<GroupElem> {
    dist.support_symbols(c)
        .iter()
        .map(|&s| e.maps[c.idx()][s].clone())
        .collect()
}

/// True when every support pair of `(a, b)` occurs, i.e. the pair marginal
/// support is the full product of the single supports.
pub fn pair_support_full(dist: &TripleDist, a: Coord, b: Coord) -> bool {
    dist.pair_marginal(a, b).len()
        == dist.support_symbols(a).len() * dist.support_symbols(b).len()
}

fn is_subgroup(h: &AbelianGroup, set: &BTreeSet<GroupElem>) -> bool {
    !set.is_empty()
        && set
            .iter()
            .all(|a| set.iter().all(|b| set.contains(&h.add(a, b))))
}

fn next_coord(c: Coord) -> Coord {
    Coord::from_idx((c.idx() + 1) % 3)
}

struct TrickState {
    cur: TripleDist,
    e: EmbeddingTriple,
    steps: Vec<SaturationStep>,
}

impl TrickState {
    fn budget_err(&self, message: String) -> Error {
        Error::SaturationBudget {
            message,
            transcript: Box::new(SaturationTranscript {
                steps: self.steps.clone(),
                final_group: None,
                postcondition_checks: Vec::new(),
            }),
        }
    }

    fn escalate(&self, err: Error) -> Error {
        match err {
            Error::Resource(m) => self.budget_err(m),
            other => other,
        }
    }

    fn commit(&mut self, path: PathDistribution) {
        self.e = lift_embedding(&self.e, &path);
        self.cur = path.result.clone();
        self.steps.push(SaturationStep {
            coordinate: path.coordinate,
            length: path.length,
        });
    }

    fn apply(&mut self, moved: Coord, length: usize, atom_budget: usize) -> Result<PathDistribution> {
        let path =
            path_trick(&self.cur, moved, length, atom_budget).map_err(|e| self.escalate(e))?;
        self.commit(path.clone());
        Ok(path)
    }

    /// Smallest odd walk length (starting at 3) on `moved` that makes the
    /// `(a, b)` pair support full; skips entirely when it already is.
    fn searched(
        &mut self,
        moved: Coord,
        pair: (Coord, Coord),
        limits: &SaturationLimits,
    ) -> Result<Option<PathDistribution>> {
        if pair_support_full(&self.cur, pair.0, pair.1) {
            return Ok(None);
        }
        let mut length = 3;
        while length <= limits.max_length {
            let path = path_trick(&self.cur, moved, length, limits.atom_budget)
                .map_err(|e| self.escalate(e))?;
            if pair_support_full(&path.result, pair.0, pair.1) {
                self.commit(path.clone());
                return Ok(Some(path));
            }
            length += 2;
        }
        Err(self.budget_err(format!(
            "no odd walk length up to {} makes the ({}, {}) pair support full",
            limits.max_length,
            pair.0.name(),
            pair.1.name()
        )))
    }
}

/// Present a sub-set of `h` (closed into a subgroup here) as a canonical
/// product of prime-power cyclic groups, with the witnessing isomorphism.
///
/// Every element of the closure is used as a generator, so coefficient
/// vectors are unit vectors and the isomorphism falls out of a single
/// diagonalization of the relation lattice.
pub fn canonicalize_subgroup(
    h: &AbelianGroup,
    elems: &BTreeSet<GroupElem>,
) -> (AbelianGroup, BTreeMap<GroupElem, GroupElem>) {
    let mut span: BTreeSet<GroupElem> = elems.clone();
    span.insert(h.zero());
    loop {
        let list: Vec<GroupElem> = span.iter().cloned().collect();
        let mut grew = false;
        for a in &list {
            for b in &list {
                if span.insert(h.add(a, b)) {
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }

    let s = h.factors().len();
    if s == 0 {
        let map = span
            .into_iter()
            .map(|g| (g, Vec::new()))
            .collect::<BTreeMap<_, _>>();
        return (AbelianGroup::trivial(), map);
    }

    let gens: Vec<GroupElem> = span.iter().cloned().collect();
    let k = gens.len();
    // relation lattice: integer vectors a with sum a_i g_i = 0 in h, read off
    // as the projection of the kernel of [M | diag(q)] to the first k columns
    let rows: Vec<Vec<BigInt>> = (0..s)
        .map(|j| {
            let mut row: Vec<BigInt> = gens.iter().map(|g| BigInt::from(g[j])).collect();
            for j2 in 0..s {
                row.push(if j2 == j {
                    BigInt::from(h.factors()[j])
                } else {
                    BigInt::zero()
                });
            }
            row
        })
        .collect();
    let dk = unimodular_diagonalize(&rows);
    let ncols = k + s;
    let lattice_gens: Vec<Vec<BigInt>> = (dk.rank..ncols)
        .map(|cix| (0..k).map(|i| dk.v[i][cix].clone()).collect())
        .collect();
    let gmat: Vec<Vec<BigInt>> = (0..k)
        .map(|i| lattice_gens.iter().map(|col| col[i].clone()).collect())
        .collect();
    let dg = unimodular_diagonalize(&gmat);
    assert_eq!(dg.rank, k, "relation lattice of a finite quotient has full rank");

    let mut u = dg.u.clone();
    let mut rows_kept: Vec<usize> = Vec::new();
    let mut row_mod: Vec<u64> = Vec::new();
    let mut parts: Vec<(u64, usize)> = Vec::new(); // (prime power, kept-row slot)
    for i in 0..k {
        let mut di = dg.d[i][i].clone();
        if di.is_negative() {
            di = -di;
            for x in u[i].iter_mut() {
                *x = -std::mem::take(x);
            }
        }
        let dval = di.to_u64().expect("invariant factor fits u64");
        if dval > 1 {
            rows_kept.push(i);
            row_mod.push(dval);
            let slot = rows_kept.len() - 1;
            for &pe in AbelianGroup::cyclic(dval).factors() {
                parts.push((pe, slot));
            }
        }
    }
    parts.sort_by_key(|&(pe, _)| pe);
    let cgroup = AbelianGroup::new(parts.iter().map(|&(pe, _)| pe));
    debug_assert_eq!(
        cgroup.factors(),
        parts.iter().map(|&(pe, _)| pe).collect::<Vec<u64>>().as_slice()
    );

    let mut map: BTreeMap<GroupElem, GroupElem> = BTreeMap::new();
    for (idx, g) in gens.iter().enumerate() {
        // coefficient vector of g is the unit vector e_idx, so its image in
        // the quotient is column idx of U reduced mod the invariants
        let celem: GroupElem = parts
            .iter()
            .map(|&(pe, slot)| {
                let row = rows_kept[slot];
                let v = u[row][idx]
                    .mod_floor(&BigInt::from(row_mod[slot]))
                    .to_u64()
                    .expect("residue fits u64");
                v % pe
            })
            .collect();
        map.insert(g.clone(), celem);
    }
    debug_assert_eq!(map.len() as u64, cgroup.order());
    debug_assert_eq!(
        map.values().collect::<BTreeSet<_>>().len(),
        map.len(),
        "re-declaration must be injective"
    );
    #[cfg(debug_assertions)]
    for (a, pa) in &map {
        for (b, pb) in &map {
            debug_assert_eq!(map[&h.add(a, b)], cgroup.add(pa, pb));
        }
    }
    (cgroup, map)
}

/// Replay a transcript's walks against `base`.
pub fn replay_transcript(
    base: &TripleDist,
    steps: &[SaturationStep],
    atom_budget: usize,
) -> Result<TripleDist> {
    let mut cur = base.clone();
    for s in steps {
        cur = path_trick(&cur, s.coordinate, s.length, atom_budget)?.result;
    }
    Ok(cur)
}

/// Grow the master bundle's labeling images into (coinciding) subgroups by
/// repeated walks, then re-declare the bundled labeling into a canonical
/// group and re-enumerate the master of the transformed distribution.
///
/// Each round targets the first coordinate whose support image is not a
/// subgroup: walks on the other two coordinates first make that coordinate's
/// pair supports full (searched, skipped when already full), then a length-3
/// walk on the target itself mixes label differences into the image. A final
/// searched walk on the end coordinate makes the start/moved pair support
/// full when rounds left it incomplete.
pub fn saturate_master(
    dist: &TripleDist,
    master: &MasterEmbedding,
    limits: &SaturationLimits,
) -> Result<SaturationOutcome> {
    let (connected, _) = dist.is_pairwise_connected();
    if !connected {
        return Err(Error::Argument(
            "saturation needs a pairwise-connected distribution".into(),
        ));
    }
    for comp in &master.components {
        if !comp.is_valid(dist) {
            return Err(Error::Argument(
                "master component does not fit the distribution".into(),
            ));
        }
    }
    let bundle = master.bundle(dist);
    let h = bundle.group.clone();
    let mut state = TrickState {
        cur: dist.clone(),
        e: bundle,
        steps: Vec::new(),
    };
    let round_cap = limits.max_rounds.unwrap_or(h.order().max(1) as usize);
    let mut rounds = 0usize;
    loop {
        let target = COORDS
            .iter()
            .copied()
            .find(|&c| !is_subgroup(&h, &support_image(&state.cur, c, &state.e)));
        let Some(target) = target else { break };
        if rounds >= round_cap {
            return Err(state.budget_err(format!(
                "image of {} is still not a subgroup after {rounds} rounds",
                target.name()
            )));
        }
        let before = support_image(&state.cur, target, &state.e).len();
        let d = next_coord(target);
        let e2 = next_coord(d);
        state.searched(e2, (target, d), limits)?;
        state.searched(d, (target, e2), limits)?;
        state.apply(target, 3, limits.atom_budget)?;
        let after = support_image(&state.cur, target, &state.e).len();
        if after <= before {
            return Err(state.budget_err(format!(
                "length-3 walk on {} failed to grow its image ({before} values)",
                target.name()
            )));
        }
        rounds += 1;
    }
    // the uniformization downstream wants the start/moved pair full as well
    if !pair_support_full(&state.cur, Coord::X, Coord::Y) {
        state.searched(Coord::Z, (Coord::X, Coord::Y), limits)?;
    }

    let images = COORDS.map(|c| support_image(&state.cur, c, &state.e));
    let subgroups_ok = images.iter().all(|s| is_subgroup(&h, s));
    let images_equal = images[0] == images[1] && images[1] == images[2];
    let mut union: BTreeSet<GroupElem> = BTreeSet::new();
    for img in &images {
        union.extend(img.iter().cloned());
    }
    let (cgroup, psi) = canonicalize_subgroup(&h, &union);
    let maps = [0usize, 1, 2].map(|c| {
        state.e.maps[c]
            .iter()
            .map(|v| psi[v].clone())
            .collect::<Vec<GroupElem>>()
    });
    let embedding = EmbeddingTriple {
        group: cgroup.clone(),
        maps,
    };
    debug_assert!(embedding.is_valid(&state.cur));

    let xy_full = pair_support_full(&state.cur, Coord::X, Coord::Y);
    let triple_full = {
        let got: BTreeSet<[GroupElem; 3]> = state
            .cur
            .support()
            .iter()
            .map(|k| {
                [
                    embedding.maps[0][k[0]].clone(),
                    embedding.maps[1][k[1]].clone(),
                    embedding.maps[2][k[2]].clone(),
                ]
            })
            .collect();
        let want: BTreeSet<[GroupElem; 3]> = cgroup
            .elements()
            .into_iter()
            .flat_map(|a| {
                let cg = &cgroup;
                cg.elements().into_iter().map(move |b| {
                    let c = cg.neg(&cg.add(&a, &b));
                    [a.clone(), b, c]
                })
            })
            .collect();
        got == want
    };
    let x_power = {
        let lx: u128 = state
            .steps
            .iter()
            .filter(|s| s.coordinate == Coord::X)
            .map(|s| s.length as u128)
            .product();
        if lx == 1 {
            true
        } else {
            let base_supp = dist.support_symbols(Coord::X).len() as u128;
            match u32::try_from(lx).ok().and_then(|e| base_supp.checked_pow(e)) {
                Some(v) => state.cur.alphabet(Coord::X).len() as u128 == v,
                None => false,
            }
        }
    };
    let replay_ok = replay_transcript(dist, &state.steps, limits.atom_budget)
        .map(|r| r == state.cur)
        .unwrap_or(false);
    let rebuilt = build_master_embedding(&state.cur, master.max_order, limits.enumeration_budget)?;
    let master_ok = rebuilt.verify_master;
    let bundle_ok = rebuilt.bundle(&state.cur).group.factors() == cgroup.factors();
    let flags_ok = is_saturated(&rebuilt, &state.cur).overall;

    let transcript = SaturationTranscript {
        steps: state.steps,
        final_group: Some(cgroup),
        postcondition_checks: vec![
            ("images_are_subgroups".into(), subgroups_ok),
            ("images_coincide".into(), images_equal),
            ("pair_support_xy_full".into(), xy_full),
            ("triple_support_full".into(), triple_full),
            ("x_alphabet_full_power".into(), x_power),
            ("replay_matches".into(), replay_ok),
            ("master_recomputed_verified".into(), master_ok),
            ("bundle_group_matches".into(), bundle_ok),
            ("master_flags_saturated".into(), flags_ok),
        ],
    };
    Ok(SaturationOutcome {
        dist: state.cur,
        embedding,
        master: rebuilt,
        transcript,
    })
}

// ---------------------------------------------------------------------------
// fiber uniformization
// ---------------------------------------------------------------------------

/// A distribution rebuilt so that the (start, end) pair marginal is uniform
/// over the full product of duplicated symbols, with the first coordinate
/// determined by the other two. Symbol provenance maps point back into the
/// input: `constant_x_class[s]` is the merged class of the constant tuple on
/// `s`, `base_y_copy[s]` / `constant_z_copy[s]` are the first duplicated
/// copies of (the constant tuple on) `s`. Entries are `None` for symbols
/// outside the input support.
#[derive(Clone, Debug)]
pub struct UniformizedDist {
    pub dist: TripleDist,
    pub embedding: EmbeddingTriple,
    pub constant_x_class: Vec<Option<usize>>,
    pub base_y_copy: Vec<Option<usize>>,
    pub constant_z_copy: Vec<Option<usize>>,
}

/// Uniformize the pair fibers of a labeled distribution whose second and
/// third labelings are surjective: make both cross pairs full with walks,
/// merge the first coordinate until the other two determine it, then
/// duplicate second/third symbols so their joint marginal is exactly uniform
/// over the full product. The labeling pushforward becomes uniform over the
/// zero-sum triples of the group.
pub fn uniformize_pair_fibers(
    dist: &TripleDist,
    e: &EmbeddingTriple,
    limits: &SaturationLimits,
) -> Result<UniformizedDist> {
    if !e.is_valid(dist) {
        return Err(Error::Argument(
            "labeling is not valid for the distribution".into(),
        ));
    }
    let h = e.group.clone();
    let full: BTreeSet<GroupElem> = h.elements().into_iter().collect();
    if support_image(dist, Coord::Y, e) != full || support_image(dist, Coord::Z, e) != full {
        return Err(Error::Argument(
            "fiber uniformization needs surjective second and third labelings".into(),
        ));
    }

    let mut state = TrickState {
        cur: dist.clone(),
        e: e.clone(),
        steps: Vec::new(),
    };

    let mut z_tuple_of: Vec<Option<usize>> =
        (0..dist.alphabet(Coord::Z).len()).map(Some).collect();
    if !pair_support_full(&state.cur, Coord::X, Coord::Y) {
        let (connected, _) = state.cur.is_pairwise_connected();
        if !connected {
            return Err(Error::Argument(
                "cannot complete pair supports of a disconnected distribution".into(),
            ));
        }
        if let Some(path) = state.searched(Coord::Z, (Coord::X, Coord::Y), limits)? {
            z_tuple_of = (0..dist.alphabet(Coord::Z).len())
                .map(|s| path.constant_tuple_index(s))
                .collect();
        }
    }
    let mut x_tuple_of: Vec<Option<usize>> =
        (0..dist.alphabet(Coord::X).len()).map(Some).collect();
    if !pair_support_full(&state.cur, Coord::Y, Coord::Z) {
        let (connected, _) = state.cur.is_pairwise_connected();
        if !connected {
            return Err(Error::Argument(
                "cannot complete pair supports of a disconnected distribution".into(),
            ));
        }
        if let Some(path) = state.searched(Coord::X, (Coord::Y, Coord::Z), limits)? {
            x_tuple_of = (0..dist.alphabet(Coord::X).len())
                .map(|s| path.constant_tuple_index(s))
                .collect();
        }
    }

    // merge the first coordinate until (y, z) determines it, tracking the
    // composite class map
    let mut cur = state.cur;
    let mut emb = state.e;
    let mut total: Vec<usize> = (0..cur.alphabet(Coord::X).len()).collect();
    loop {
        let (merged, mm) = cur.merge(Coord::X);
        if mm.is_identity() {
            break;
        }
        let reps: BTreeSet<usize> = mm.representative.iter().copied().collect();
        let rank: BTreeMap<usize, usize> =
            reps.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        for t in total.iter_mut() {
            *t = rank[&mm.representative[*t]];
        }
        cur = merged;
    }
    assert!(
        cur.implies_third((Coord::Y, Coord::Z)),
        "merging to fixpoint leaves the first coordinate determined"
    );
    let nclasses = cur.alphabet(Coord::X).len();
    let mut sigma: Vec<Option<GroupElem>> = vec![None; nclasses];
    for (s, &cls) in total.iter().enumerate() {
        let v = &emb.maps[0][s];
        match &sigma[cls] {
            None => sigma[cls] = Some(v.clone()),
            Some(w) => assert_eq!(w, v, "labeling must be constant on merged classes"),
        }
    }
    emb.maps[0] = sigma
        .into_iter()
        .map(|v| v.expect("every class has a member"))
        .collect();

    // duplication multiplicities from the labeling fibers
    let ys = cur.support_symbols(Coord::Y);
    let zs = cur.support_symbols(Coord::Z);
    let mut d2: BTreeMap<GroupElem, u128> = BTreeMap::new();
    for &y in &ys {
        *d2.entry(emb.maps[1][y].clone()).or_insert(0) += 1;
    }
    let mut d3: BTreeMap<GroupElem, u128> = BTreeMap::new();
    for &z in &zs {
        *d3.entry(emb.maps[2][z].clone()).or_insert(0) += 1;
    }
    let big_d2: u128 = d2.values().product();
    let big_d3: u128 = d3.values().product();
    let order = h.order() as u128;
    let dup_pairs = order
        .checked_mul(big_d2)
        .and_then(|a| a.checked_mul(order))
        .and_then(|a| a.checked_mul(big_d3))
        .ok_or_else(|| Error::Resource("duplication count overflows".into()))?;
    if dup_pairs > limits.atom_budget as u128 {
        return Err(Error::Resource(format!(
            "duplication needs {dup_pairs} atoms, over the budget {}",
            limits.atom_budget
        )));
    }

    let mut y_name = Vec::new();
    let mut y_src = Vec::new();
    let mut y_first_copy: BTreeMap<usize, usize> = BTreeMap::new();
    for &y in &ys {
        let copies = big_d2 / d2[&emb.maps[1][y]];
        y_first_copy.insert(y, y_name.len());
        for i in 1..=copies {
            y_name.push(format!("{}@{}", cur.alphabet(Coord::Y).name(y), i));
            y_src.push(y);
        }
    }
    let mut z_name = Vec::new();
    let mut z_src = Vec::new();
    let mut z_first_copy: BTreeMap<usize, usize> = BTreeMap::new();
    for &z in &zs {
        let copies = big_d3 / d3[&emb.maps[2][z]];
        z_first_copy.insert(z, z_name.len());
        for i in 1..=copies {
            z_name.push(format!("{}@{}", cur.alphabet(Coord::Z).name(z), i));
            z_src.push(z);
        }
    }

    let mut fiber: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (k, _) in cur.atoms() {
        let prev = fiber.insert((k[1], k[2]), k[0]);
        debug_assert!(prev.is_none() || prev == Some(k[0]));
    }
    let prob = Rat::new(BigInt::one(), BigInt::from(dup_pairs));
    let mut atoms: Vec<([usize; 3], Rat)> = Vec::with_capacity(dup_pairs as usize);
    for (yi, &y) in y_src.iter().enumerate() {
        for (zi, &z) in z_src.iter().enumerate() {
            let x = *fiber
                .get(&(y, z))
                .expect("full pair support leaves no empty fiber");
            atoms.push(([x, yi, zi], prob.clone()));
        }
    }
    let nu = TripleDist::new(
        [
            cur.alphabet(Coord::X).clone(),
            Alphabet::new(y_name)?,
            Alphabet::new(z_name)?,
        ],
        atoms,
    )?;
    let out_embedding = EmbeddingTriple {
        group: h,
        maps: [
            emb.maps[0].clone(),
            y_src.iter().map(|&y| emb.maps[1][y].clone()).collect(),
            z_src.iter().map(|&z| emb.maps[2][z].clone()).collect(),
        ],
    };
    debug_assert!(out_embedding.is_valid(&nu));

    let constant_x_class: Vec<Option<usize>> = x_tuple_of
        .iter()
        .map(|o| o.map(|t| total[t]))
        .collect();
    let base_y_copy: Vec<Option<usize>> = (0..dist.alphabet(Coord::Y).len())
        .map(|s| y_first_copy.get(&s).copied())
        .collect();
    let constant_z_copy: Vec<Option<usize>> = z_tuple_of
        .iter()
        .map(|o| o.and_then(|t| z_first_copy.get(&t).copied()))
        .collect();
    Ok(UniformizedDist {
        dist: nu,
        embedding: out_embedding,
        constant_x_class,
        base_y_copy,
        constant_z_copy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{cyclic_equation_dist, rat};
    use crate::rng::substream_indexed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn cube_uniform() -> TripleDist {
        let al = || Alphabet::numbered(2);
        let support: Vec<[usize; 3]> = (0..8).map(|i| [i / 4, (i / 2) % 2, i % 2]).collect();
        TripleDist::uniform_on([al(), al(), al()], &support).unwrap()
    }

    fn cube_weighted() -> TripleDist {
        let al = || Alphabet::numbered(2);
        let atoms: Vec<([usize; 3], Rat)> = (0..8)
            .map(|i| {
                let k = [i / 4, (i / 2) % 2, i % 2];
                (k, rat((1 + k[0] + 2 * k[1] + 4 * k[2]) as i64, 36))
            })
            .collect();
        TripleDist::new([al(), al(), al()], atoms).unwrap()
    }

    /// Two first-coordinate symbols braided around a 6-cycle: the unique
    /// bundle labeling has a non-subgroup image {0, 1} in Z3.
    fn braided_pair_dist() -> TripleDist {
        let xal = Alphabet::of(["e", "a"]);
        let yal = Alphabet::of(["u0", "u1", "u2"]);
        let zal = Alphabet::of(["p0", "p1", "p2"]);
        let mut support = Vec::new();
        for i in 0..3 {
            support.push([0, i, (3 - i) % 3]);
            support.push([1, i, (5 - i) % 3]);
        }
        TripleDist::uniform_on([xal, yal, zal], &support).unwrap()
    }

    /// Cyclic equation distribution plus one extra start-side symbol hanging
    /// off a single atom, so the (x, y) pair support is not full.
    fn tailed_cyclic_dist() -> TripleDist {
        let mut support: Vec<[usize; 3]> = Vec::new();
        for y in 0..3 {
            for z in 0..3 {
                support.push([(6 - y - z) % 3, y, z]);
            }
        }
        support.push([0, 3, 0]);
        TripleDist::uniform_on(
            [
                Alphabet::numbered(3),
                Alphabet::numbered(4),
                Alphabet::numbered(3),
            ],
            &support,
        )
        .unwrap()
    }

    fn diagonal_dist() -> TripleDist {
        let al = || Alphabet::numbered(2);
        TripleDist::uniform_on([al(), al(), al()], &[[0, 0, 0], [1, 1, 1]]).unwrap()
    }

    #[test]
    fn walk_length_one_is_identity() {
        let d = cyclic_equation_dist(3);
        for c in COORDS {
            let p = path_trick(&d, c, 1, 10_000).unwrap();
            assert_eq!(p.result, d);
            assert_eq!(p.tuples, vec![vec![0], vec![1], vec![2]]);
        }
    }

    #[test]
    fn walk_rejects_even_or_zero_length() {
        let d = cyclic_equation_dist(3);
        assert!(matches!(
            path_trick(&d, Coord::X, 2, 10_000),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            path_trick(&d, Coord::X, 0, 10_000),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn cyclic_walk_three_follows_alternating_law() {
        let d = cyclic_equation_dist(3);
        let p = path_trick(&d, Coord::X, 3, 10_000).unwrap();
        assert_eq!(p.result.atom_count(), 81);
        assert_eq!(p.tuples.len(), 27);
        for (k, pr) in p.result.atoms() {
            assert_eq!(*pr, rat(1, 81));
            let t = &p.tuples[k[0]];
            // x1 - x2 + x3 + y + z = 0 mod 3
            assert_eq!((t[0] + 2 * t[1] + t[2] + k[1] + k[2]) % 3, 0);
        }
        // start and end marginals survive exactly
        assert_eq!(
            p.result.single_marginal(Coord::Y),
            d.single_marginal(Coord::Y)
        );
        assert_eq!(
            p.result.single_marginal(Coord::Z),
            d.single_marginal(Coord::Z)
        );
        assert!(p.result.alphabet(Coord::X).index_of("(0,1,2)").is_some());
    }

    #[test]
    fn walk_orientations_move_the_right_coordinate() {
        let d = cyclic_equation_dist(3);
        for (moved, kept_start, kept_end) in [
            (Coord::Y, Coord::Z, Coord::X),
            (Coord::Z, Coord::X, Coord::Y),
        ] {
            let p = path_trick(&d, moved, 3, 10_000).unwrap();
            assert_eq!(p.result.alphabet(moved).len(), 27);
            assert_eq!(
                p.result.single_marginal(kept_start),
                d.single_marginal(kept_start),
                "start marginal of {} after moving {}",
                kept_start.name(),
                moved.name()
            );
            assert_eq!(
                p.result.single_marginal(kept_end),
                d.single_marginal(kept_end)
            );
            let id = EmbeddingTriple {
                group: AbelianGroup::cyclic(3),
                maps: [
                    vec![vec![0], vec![1], vec![2]],
                    vec![vec![0], vec![1], vec![2]],
                    vec![vec![0], vec![1], vec![2]],
                ],
            };
            assert!(id.is_valid(&d));
            let lifted = lift_embedding(&id, &p);
            assert!(lifted.is_valid(&p.result));
        }
    }

    #[test]
    fn disconnected_walk_stays_in_component() {
        let d = diagonal_dist();
        let p = path_trick(&d, Coord::X, 3, 10_000).unwrap();
        assert_eq!(p.result.atom_count(), 2);
        for (k, pr) in p.result.atoms() {
            assert_eq!(*pr, rat(1, 2));
            assert_eq!(k[1], k[2]);
            assert_eq!(p.tuples[k[0]], vec![k[1]; 3]);
        }
    }

    #[test]
    fn walk_budget_is_enforced() {
        let d = cyclic_equation_dist(3);
        assert!(matches!(
            path_trick(&d, Coord::X, 3, 10),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn sparse_support_graph_completes_at_length_three() {
        let xal = Alphabet::numbered(1);
        let yal = Alphabet::numbered(2);
        let zal = Alphabet::numbered(2);
        let d = TripleDist::uniform_on([xal, yal, zal], &[[0, 0, 0], [0, 1, 0], [0, 1, 1]])
            .unwrap();
        assert!(!pair_support_full(&d, Coord::Y, Coord::Z));
        let p = path_trick(&d, Coord::X, 3, 10_000).unwrap();
        assert!(pair_support_full(&p.result, Coord::Y, Coord::Z));
        let (connected, _) = p.result.is_pairwise_connected();
        assert!(connected);
    }

    #[test]
    fn doubling_matches_walks() {
        for d in [cyclic_equation_dist(3), cube_uniform(), cube_weighted()] {
            let w1 = path_trick(&d, Coord::X, 1, 100_000).unwrap().result;
            let m1 = doubling_construction(&d, 1, 100_000).unwrap();
            assert_eq!(m1, w1);
            assert_eq!(m1, d);
            let w3 = path_trick(&d, Coord::X, 3, 100_000).unwrap().result;
            let m3 = doubling_construction(&d, 2, 100_000).unwrap();
            assert_eq!(m3, w3);
        }
    }

    #[test]
    fn doubling_budget_is_enforced() {
        let d = cyclic_equation_dist(3);
        assert!(matches!(
            doubling_construction(&d, 2, 100),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn alternating_lift_values() {
        let d = cyclic_equation_dist(3);
        let p = path_trick(&d, Coord::X, 3, 10_000).unwrap();
        let id = GroupMap {
            group: AbelianGroup::cyclic(3),
            values: vec![vec![0], vec![1], vec![2]],
        };
        let lifted = lift_alternating(&id, &p.tuples);
        let ti = p.tuple_index(&[1, 2, 0]).unwrap();
        // 1 - 2 + 0 = -1 = 2 mod 3
        assert_eq!(lifted.values[ti], vec![2]);
        for s in 0..3 {
            let ci = p.constant_tuple_index(s).unwrap();
            assert_eq!(lifted.values[ci], vec![s as u64]);
        }
    }

    #[test]
    fn lifted_image_contains_base_image() {
        let d = braided_pair_dist();
        let master = build_master_embedding(&d, 6, 1_000_000).unwrap();
        assert_eq!(master.components.len(), 1);
        let e = master.bundle(&d);
        assert_eq!(e.group.factors(), &[3]);
        let base_img = support_image(&d, Coord::X, &e);
        assert_eq!(base_img.len(), 2);
        let p = path_trick(&d, Coord::X, 3, 10_000).unwrap();
        let lifted = lift_embedding(&e, &p);
        let img = support_image(&p.result, Coord::X, &lifted);
        assert!(base_img.is_subset(&img));
        assert_eq!(img.len(), 3);
    }

    #[test]
    fn master_property_carries_through_a_walk() {
        let d = cyclic_equation_dist(3);
        let master = build_master_embedding(&d, 6, 1_000_000).unwrap();
        assert!(master.verify_master);
        let p = path_trick(&d, Coord::X, 3, 10_000).unwrap();
        let lifted: Vec<EmbeddingTriple> = master
            .components
            .iter()
            .map(|c| lift_embedding(c, &p))
            .collect();
        for g in crate::group::groups_up_to(6) {
            if g.is_trivial() {
                continue;
            }
            for e in crate::embed::enumerate_group_embeddings(&p.result, &g, 2_000_000).unwrap() {
                if e.is_trivial() {
                    continue;
                }
                assert!(
                    lifted.iter().any(|c| crate::embed::is_linear_reduction(c, &e)),
                    "embedding into {:?} not covered after the walk",
                    g.factors()
                );
            }
        }
    }

    fn character_fn(d: &TripleDist, c: Coord, q: usize) -> TensorFunction {
        TensorFunction::from_fn(1, marginal_weights(d, c), |t| {
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * t[0] as f64 / q as f64)
        })
        .unwrap()
    }

    #[test]
    fn correlation_bound_all_ones() {
        let d = cyclic_equation_dist(3);
        let one = |c: Coord| {
            TensorFunction::constant(2, marginal_weights(&d, c), Complex64::new(1.0, 0.0)).unwrap()
        };
        let b = path_correlation_bound(&d, &one(Coord::X), &one(Coord::Y), &one(Coord::Z), 1, 2_000_000)
            .unwrap();
        assert_abs_diff_eq!(b.lhs, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.rhs, 1.0, epsilon = 1e-12);
        assert!(b.holds());
    }

    #[test]
    fn correlation_bound_matching_characters_is_tight() {
        let d = cyclic_equation_dist(3);
        for t in [1, 2] {
            let b = path_correlation_bound(
                &d,
                &character_fn(&d, Coord::X, 3),
                &character_fn(&d, Coord::Y, 3),
                &character_fn(&d, Coord::Z, 3),
                t,
                2_000_000,
            )
            .unwrap();
            assert_abs_diff_eq!(b.lhs, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(b.rhs, 1.0, epsilon = 1e-9);
            assert!(b.holds());
            // h' reproduces the conjugate character on the end coordinate
            for z in 0..3 {
                let expect = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * z as f64 / 3.0);
                let got = b.end_factor.values()[z];
                assert_abs_diff_eq!((got - expect).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn correlation_bound_holds_for_random_bounded_triples() {
        for seed in 0..100u64 {
            let d = if seed % 2 == 0 {
                cube_uniform()
            } else {
                cyclic_equation_dist(3)
            };
            let n = 1 + (seed as usize) % 3;
            let t = 1 + (seed as u32) % 2;
            let mut rng = substream_indexed(0xC0FFEE, "path.random_bound", seed);
            let mut random_fn = |c: Coord| {
                TensorFunction::from_fn(n, marginal_weights(&d, c), |_| {
                    let r: f64 = rng.random::<f64>();
                    let th: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                    Complex64::from_polar(r, th)
                })
                .unwrap()
            };
            let f = random_fn(Coord::X);
            let g = random_fn(Coord::Y);
            let h = random_fn(Coord::Z);
            let b = path_correlation_bound(&d, &f, &g, &h, t, 5_000_000).unwrap();
            assert!(
                b.holds(),
                "seed {seed}: lhs {} exceeds rhs {}",
                b.lhs,
                b.rhs
            );
            assert!(b.rhs <= 1.0 + tolerance::INEQ_SLACK);
        }
    }

    #[test]
    fn correlation_bound_rejects_unbounded_or_degenerate_input() {
        let d = cyclic_equation_dist(3);
        let one = |c: Coord| {
            TensorFunction::constant(1, marginal_weights(&d, c), Complex64::new(1.0, 0.0)).unwrap()
        };
        let big = one(Coord::X).scale(Complex64::new(1.5, 0.0));
        assert!(matches!(
            path_correlation_bound(&d, &big, &one(Coord::Y), &one(Coord::Z), 1, 1_000_000),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            path_correlation_bound(&d, &one(Coord::X), &one(Coord::Y), &one(Coord::Z), 0, 1_000_000),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn canonicalize_subgroup_cases() {
        let h = AbelianGroup::new([2, 4]);
        // the order-2 subgroup generated by (1, 2)
        let set: BTreeSet<GroupElem> = [vec![1u64, 2u64]].into_iter().collect();
        let (c, psi) = canonicalize_subgroup(&h, &set);
        assert_eq!(c.factors(), &[2]);
        assert_eq!(psi.len(), 2);
        assert_eq!(psi[&vec![0u64, 0u64]], vec![0u64]);
        assert_eq!(psi[&vec![1u64, 2u64]], vec![1u64]);

        // the whole group
        let all: BTreeSet<GroupElem> = h.elements().into_iter().collect();
        let (c2, psi2) = canonicalize_subgroup(&h, &all);
        assert_eq!(c2.factors(), &[2, 4]);
        assert_eq!(psi2.len(), 8);
        // isomorphism: additive and injective (debug asserts also cover this)
        for (a, pa) in &psi2 {
            for (b, pb) in &psi2 {
                assert_eq!(psi2[&h.add(a, b)], c2.add(pa, pb));
            }
        }

        // a diagonal Z3 inside Z3 x Z3
        let h33 = AbelianGroup::new([3, 3]);
        let diag: BTreeSet<GroupElem> = [vec![1u64, 1u64]].into_iter().collect();
        let (c3, psi3) = canonicalize_subgroup(&h33, &diag);
        assert_eq!(c3.factors(), &[3]);
        assert_eq!(psi3.len(), 3);

        // the zero subgroup of a trivial group
        let (c4, psi4) = canonicalize_subgroup(
            &AbelianGroup::trivial(),
            &[Vec::new()].into_iter().collect(),
        );
        assert!(c4.is_trivial());
        assert_eq!(psi4.len(), 1);
    }

    #[test]
    fn saturate_fully_saturated_input_is_a_no_op() {
        let d = cyclic_equation_dist(3);
        let master = build_master_embedding(&d, 6, 1_000_000).unwrap();
        let out = saturate_master(&d, &master, &SaturationLimits::default()).unwrap();
        assert!(out.transcript.steps.is_empty());
        assert_eq!(out.dist, d);
        assert_eq!(
            out.transcript.final_group.as_ref().unwrap().factors(),
            &[3]
        );
        assert!(
            out.transcript.all_checks_pass(),
            "checks: {:?}",
            out.transcript.postcondition_checks
        );
        assert!(out.embedding.is_valid(&out.dist));
        for c in COORDS {
            assert_eq!(support_image(&out.dist, c, &out.embedding).len(), 3);
        }
    }

    #[test]
    fn saturate_grows_non_subgroup_image_in_one_round() {
        let d = braided_pair_dist();
        let master = build_master_embedding(&d, 6, 1_000_000).unwrap();
        let bundle = master.bundle(&d);
        assert_eq!(bundle.group.factors(), &[3]);
        assert!(!is_subgroup(
            &bundle.group,
            &support_image(&d, Coord::X, &bundle)
        ));

        let out = saturate_master(&d, &master, &SaturationLimits::default()).unwrap();
        assert_eq!(
            out.transcript.steps,
            vec![SaturationStep {
                coordinate: Coord::X,
                length: 3
            }]
        );
        assert_eq!(out.dist.alphabet(Coord::X).len(), 8);
        assert_eq!(out.dist.atom_count(), 24);
        assert_eq!(
            out.transcript.final_group.as_ref().unwrap().factors(),
            &[3]
        );
        assert!(
            out.transcript.all_checks_pass(),
            "checks: {:?}",
            out.transcript.postcondition_checks
        );
        for c in COORDS {
            assert_eq!(support_image(&out.dist, c, &out.embedding).len(), 3);
        }
        let replayed =
            replay_transcript(&d, &out.transcript.steps, 100_000).unwrap();
        assert_eq!(replayed, out.dist);
    }

    #[test]
    fn saturate_applies_trailing_end_walk_for_pair_fullness() {
        let d = tailed_cyclic_dist();
        let master = build_master_embedding(&d, 6, 1_000_000).unwrap();
        assert!(!pair_support_full(&d, Coord::X, Coord::Y));
        let out = saturate_master(&d, &master, &SaturationLimits::default()).unwrap();
        assert_eq!(
            out.transcript.steps,
            vec![SaturationStep {
                coordinate: Coord::Z,
                length: 3
            }]
        );
        assert!(pair_support_full(&out.dist, Coord::X, Coord::Y));
        assert!(
            out.transcript.all_checks_pass(),
            "checks: {:?}",
            out.transcript.postcondition_checks
        );
    }

    #[test]
    fn saturate_rejects_disconnected_input() {
        let d = diagonal_dist();
        let master = build_master_embedding(&d, 4, 1_000_000).unwrap();
        assert!(matches!(
            saturate_master(&d, &master, &SaturationLimits::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn saturate_budget_failure_carries_partial_transcript() {
        let d = braided_pair_dist();
        let master = build_master_embedding(&d, 6, 1_000_000).unwrap();
        let limits = SaturationLimits {
            atom_budget: 10,
            ..SaturationLimits::default()
        };
        let err = saturate_master(&d, &master, &limits).unwrap_err();
        match err {
            Error::SaturationBudget { transcript, .. } => {
                assert!(transcript.steps.is_empty());
                assert!(transcript.final_group.is_none());
                assert!(transcript.postcondition_checks.is_empty());
            }
            other => panic!("expected a saturation budget error, got {other}"),
        }
    }

    #[test]
    fn transcript_json_shape() {
        let t = SaturationTranscript {
            steps: vec![SaturationStep {
                coordinate: Coord::X,
                length: 3,
            }],
            final_group: Some(AbelianGroup::cyclic(3)),
            postcondition_checks: vec![("images_coincide".into(), true)],
        };
        let v = t.to_json();
        assert_eq!(v["steps"][0]["coordinate"], "x");
        assert_eq!(v["steps"][0]["length"], 3);
        assert_eq!(v["final_group"][0], 3);
        assert_eq!(v["postcondition_checks"][0][0], "images_coincide");
        assert_eq!(v["postcondition_checks"][0][1], true);
        let empty = SaturationTranscript {
            steps: vec![],
            final_group: None,
            postcondition_checks: vec![],
        };
        assert!(empty.to_json()["final_group"].is_null());
        assert!(!empty.all_checks_pass());
    }

    fn id_embedding_z3(d: &TripleDist) -> EmbeddingTriple {
        let maps = COORDS.map(|c| {
            (0..d.alphabet(c).len())
                .map(|s| vec![(s % 3) as u64])
                .collect::<Vec<GroupElem>>()
        });
        EmbeddingTriple {
            group: AbelianGroup::cyclic(3),
            maps,
        }
    }

    fn assert_uniformized(u: &UniformizedDist) {
        let nu = &u.dist;
        let h = &u.embedding.group;
        let ny = nu.support_symbols(Coord::Y).len();
        let nz = nu.support_symbols(Coord::Z).len();
        assert_eq!(nu.atom_count(), ny * nz, "one atom per duplicated pair");
        let pm = nu.pair_marginal(Coord::Y, Coord::Z);
        assert_eq!(pm.len(), ny * nz);
        let want = Rat::new(BigInt::one(), BigInt::from((ny * nz) as u64));
        for p in pm.values() {
            assert_eq!(*p, want);
        }
        assert!(nu.implies_third((Coord::Y, Coord::Z)));
        assert!(u.embedding.is_valid(nu));
        // pushforward uniform over zero-sum triples
        let mut push: BTreeMap<[GroupElem; 3], Rat> = BTreeMap::new();
        for (k, p) in nu.atoms() {
            let key = [
                u.embedding.maps[0][k[0]].clone(),
                u.embedding.maps[1][k[1]].clone(),
                u.embedding.maps[2][k[2]].clone(),
            ];
            *push.entry(key).or_insert_with(Rat::zero) += p.clone();
        }
        let order = h.order();
        assert_eq!(push.len() as u64, order * order);
        let want_push = Rat::new(BigInt::one(), BigInt::from(order * order));
        for ([a, b, c], p) in &push {
            assert_eq!(h.add(&h.add(a, b), c), h.zero());
            assert_eq!(*p, want_push);
        }
    }

    #[test]
    fn uniformize_singleton_fibers_relabels_only() {
        let d = cyclic_equation_dist(3);
        let e = id_embedding_z3(&d);
        let u = uniformize_pair_fibers(&d, &e, &SaturationLimits::default()).unwrap();
        assert_eq!(u.dist.atom_count(), 9);
        assert_uniformized(&u);
        assert_eq!(u.dist.alphabet(Coord::Y).name(0), "0@1");
        assert_eq!(u.constant_x_class, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(u.base_y_copy, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(u.constant_z_copy, vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn uniformize_duplicates_uneven_fibers() {
        // second coordinate has a doubled label-0 fiber
        let gamma = [0usize, 0, 1, 2];
        let mut support = Vec::new();
        for (y, gy) in gamma.iter().enumerate() {
            for z in 0..3 {
                support.push([(6 - gy - z) % 3, y, z]);
            }
        }
        let d = TripleDist::uniform_on(
            [
                Alphabet::numbered(3),
                Alphabet::of(["u", "v", "w", "t"]),
                Alphabet::numbered(3),
            ],
            &support,
        )
        .unwrap();
        let mut e = id_embedding_z3(&d);
        e.maps[1] = gamma.iter().map(|&g| vec![g as u64]).collect();
        assert!(e.is_valid(&d));
        let u = uniformize_pair_fibers(&d, &e, &SaturationLimits::default()).unwrap();
        // D2 = 2: fibers (2, 1, 1); y copies: u, v get 1 copy, w, t get 2
        assert_eq!(u.dist.alphabet(Coord::Y).len(), 6);
        assert_eq!(u.dist.alphabet(Coord::Z).len(), 3);
        assert_eq!(u.dist.atom_count(), 18);
        assert_uniformized(&u);
        assert_eq!(u.base_y_copy, vec![Some(0), Some(1), Some(2), Some(4)]);
        assert!(u.dist.alphabet(Coord::Y).index_of("w@2").is_some());
        // every (constant class, duplicated y) pair is supported
        let pm = u.dist.pair_marginal(Coord::X, Coord::Y);
        for cls in u.constant_x_class.iter().flatten() {
            for ydup in 0..u.dist.alphabet(Coord::Y).len() {
                assert!(pm.contains_key(&[*cls, ydup]));
            }
        }
    }

    #[test]
    fn uniformize_walks_and_merges_when_pairs_are_incomplete() {
        let d = braided_pair_dist();
        // braid labeling: sigma = (0, 1), gamma and phi the identity
        let e = EmbeddingTriple {
            group: AbelianGroup::cyclic(3),
            maps: [
                vec![vec![0], vec![1]],
                vec![vec![0], vec![1], vec![2]],
                vec![vec![0], vec![1], vec![2]],
            ],
        };
        assert!(e.is_valid(&d));
        assert!(pair_support_full(&d, Coord::X, Coord::Y));
        assert!(!pair_support_full(&d, Coord::Y, Coord::Z));
        let u = uniformize_pair_fibers(&d, &e, &SaturationLimits::default()).unwrap();
        assert_uniformized(&u);
        // the walk replaced x by tuples, which then merged into classes
        assert!(u.dist.alphabet(Coord::X).len() < 8);
        // constant tuples of both base symbols landed in supported classes
        let pm = u.dist.pair_marginal(Coord::X, Coord::Y);
        for (s, cls) in u.constant_x_class.iter().enumerate() {
            let cls = cls.unwrap_or_else(|| panic!("symbol {s} lost its constant class"));
            for ydup in 0..u.dist.alphabet(Coord::Y).len() {
                assert!(pm.contains_key(&[cls, ydup]));
            }
        }
    }

    #[test]
    fn uniformize_rejects_non_surjective_labelings() {
        let d = cyclic_equation_dist(3);
        let mut e = id_embedding_z3(&d);
        e.maps[1] = vec![vec![0], vec![0], vec![0]];
        // not valid any more, and also not surjective; both must be rejected
        assert!(matches!(
            uniformize_pair_fibers(&d, &e, &SaturationLimits::default()),
            Err(Error::Argument(_))
        ));
        let e2 = EmbeddingTriple::trivial(&d);
        // trivial labeling is valid and surjective onto the trivial group
        let u = uniformize_pair_fibers(&d, &e2, &SaturationLimits::default()).unwrap();
        assert_uniformized(&u);
    }

    #[test]
    fn walk_preserves_marginals_on_random_supports() {
        for seed in 0..10u64 {
            let mut rng = substream_indexed(0xBADCAFE, "path.random_walks", seed);
            let al = || Alphabet::numbered(3);
            let mut atoms: Vec<([usize; 3], Rat)> = Vec::new();
            let mut total = 0i64;
            let mut weights: Vec<([usize; 3], i64)> = Vec::new();
            for x in 0..3 {
                for y in 0..3 {
                    for z in 0..3 {
                        if rng.random::<f64>() < 0.4 {
                            let w = 1 + (rng.random::<u32>() % 5) as i64;
                            weights.push(([x, y, z], w));
                            total += w;
                        }
                    }
                }
            }
            if weights.is_empty() {
                continue;
            }
            for (k, w) in weights {
                atoms.push((k, rat(w, total)));
            }
            let Ok(d) = TripleDist::new([al(), al(), al()], atoms) else {
                continue;
            };
            let p = match path_trick(&d, Coord::X, 3, 100_000) {
                Ok(p) => p,
                Err(_) => continue,
            };
            assert_eq!(
                p.result.single_marginal(Coord::Y),
                d.single_marginal(Coord::Y),
                "seed {seed}"
            );
            assert_eq!(
                p.result.single_marginal(Coord::Z),
                d.single_marginal(Coord::Z)
            );
            let (connected, _) = d.is_pairwise_connected();
            if connected {
                let (still, _) = p.result.is_pairwise_connected();
                assert!(still, "seed {seed}: walk broke connectivity");
            }
        }
    }
}
