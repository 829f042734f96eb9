//! Abelian embeddings of a triple distribution: a triple of maps
//! (σ, γ, φ) into a shared finite Abelian group with σ(x)+γ(y)+φ(z) = 0 on
//! every support atom. Solvers work over the integers (rational kernel) and
//! over finite groups (diagonalized congruence systems); embeddings compare
//! via linear reductions, and the bundle of all small embeddings up to
//! reduction forms the master embedding.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};

use crate::dist::{Coord, Rat, TripleDist, COORDS};
use crate::error::{Error, Result};
use crate::exact_linalg::{primitive_integer_vector, rational_kernel, unimodular_diagonalize};
use crate::group::{injective_homomorphisms, AbelianGroup, Character, GroupElem};

/// Total map from one alphabet into a group, indexed by symbol id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupMap {
    pub group: AbelianGroup,
    pub values: Vec<GroupElem>,
}

impl GroupMap {
    pub fn image(&self) -> BTreeSet<GroupElem> {
        self.values.iter().cloned().collect()
    }

    /// Is the image closed under subtraction (hence a subgroup)?
    pub fn image_is_subgroup(&self) -> bool {
        let img = self.image();
        if !img.contains(&self.group.zero()) {
            return false;
        }
        for a in &img {
            for b in &img {
                if !img.contains(&self.group.sub(a, b)) {
                    return false;
                }
            }
        }
        true
    }

    /// Partition of the alphabet by value: class id of each symbol is the
    /// smallest symbol index sharing its value.
    pub fn partition(&self) -> Vec<usize> {
        let mut class = vec![0usize; self.values.len()];
        for i in 0..self.values.len() {
            class[i] = (0..=i)
                .find(|&j| self.values[j] == self.values[i])
                .expect("i matches itself");
        }
        class
    }
}

/// x ↦ χ(σ(x)).
pub fn character_function(chi: &Character, map: &GroupMap) -> Result<Vec<Complex64>> {
    if chi.group != map.group {
        return Err(Error::Argument("character and map have different groups".into()));
    }
    Ok(chi.compose(&map.values))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EmbeddingTriple {
    pub group: AbelianGroup,
    /// maps[c][symbol] = group element; symbols outside the support sit at 0
    pub maps: [Vec<GroupElem>; 3],
}

impl EmbeddingTriple {
    pub fn trivial(dist: &TripleDist) -> EmbeddingTriple {
        let group = AbelianGroup::trivial();
        let maps = [
            vec![group.zero(); dist.alphabet(Coord::X).len()],
            vec![group.zero(); dist.alphabet(Coord::Y).len()],
            vec![group.zero(); dist.alphabet(Coord::Z).len()],
        ];
        EmbeddingTriple { group, maps }
    }

    pub fn map(&self, c: Coord) -> GroupMap {
        GroupMap {
            group: self.group.clone(),
            values: self.maps[c.idx()].clone(),
        }
    }

    pub fn is_trivial(&self) -> bool {
        let z = self.group.zero();
        self.maps.iter().all(|m| m.iter().all(|v| *v == z))
    }

    /// σ(x)+γ(y)+φ(z) = 0 on every support atom.
    pub fn is_valid(&self, dist: &TripleDist) -> bool {
        dist.support().iter().all(|atom| {
            let s = self.group.add(
                &self.group.add(&self.maps[0][atom[0]], &self.maps[1][atom[1]]),
                &self.maps[2][atom[2]],
            );
            s == self.group.zero()
        })
    }

    pub fn images(&self) -> [BTreeSet<GroupElem>; 3] {
        [
            self.maps[0].iter().cloned().collect(),
            self.maps[1].iter().cloned().collect(),
            self.maps[2].iter().cloned().collect(),
        ]
    }

    pub fn partitions(&self) -> [Vec<usize>; 3] {
        [0, 1, 2].map(|c| self.map(COORDS[c]).partition())
    }

    fn sort_key(&self) -> (u64, Vec<u64>, [Vec<GroupElem>; 3]) {
        (
            self.group.order(),
            self.group.factors().to_vec(),
            self.maps.clone(),
        )
    }
}

/// Is `a` a linear reduction of `b`: three injective homomorphisms
/// m₁,m₂,m₃ from a's group into b's group with b's maps = mᵢ ∘ a's maps?
/// The three maps are matched independently.
pub fn is_linear_reduction(a: &EmbeddingTriple, b: &EmbeddingTriple) -> bool {
    debug_assert!(
        (0..3).all(|c| a.maps[c].len() == b.maps[c].len()),
        "embeddings of the same distribution"
    );
    if b.group.order() % a.group.order() != 0 {
        return false;
    }
    let homs = injective_homomorphisms(&a.group, &b.group);
    if homs.is_empty() {
        return false;
    }
    (0..3).all(|c| {
        homs.iter().any(|m| {
            a.maps[c]
                .iter()
                .zip(&b.maps[c])
                .all(|(av, bv)| m.apply(av) == *bv)
        })
    })
}

/// Integer-valued embedding triple (values in ℤ rather than a finite group).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZEmbedding {
    pub sigma: Vec<BigInt>,
    pub gamma: Vec<BigInt>,
    pub phi: Vec<BigInt>,
}

#[derive(Clone, Debug)]
pub struct ZEmbeddingReport {
    pub trivial_only: bool,
    /// primitive integer basis of the anchored solution space
    pub basis: Vec<ZEmbedding>,
    /// largest diagonal entry of the integer support system; primes above
    /// this cannot carry embeddings when the rational kernel is zero
    pub invariant_bound: u64,
}

/// Variables are the support symbols of each coordinate, coordinate-major;
/// rows are the support equations plus two anchor rows pinning σ(x*) and
/// γ(y*) for the lexicographically smallest support atom (x*,y*,z*), which
/// kills the affine shift freedom (φ(z*) = 0 then follows from the anchor
/// atom's equation).
struct SupportSystem {
    vars: Vec<(usize, usize)>,
    rows: Vec<Vec<BigInt>>,
}

fn support_system(dist: &TripleDist) -> SupportSystem {
    let mut var_of = [
        vec![None; dist.alphabet(Coord::X).len()],
        vec![None; dist.alphabet(Coord::Y).len()],
        vec![None; dist.alphabet(Coord::Z).len()],
    ];
    let mut vars = Vec::new();
    for c in 0..3 {
        for s in dist.support_symbols(COORDS[c]) {
            var_of[c][s] = Some(vars.len());
            vars.push((c, s));
        }
    }
    let mut rows = Vec::new();
    for atom in dist.support() {
        let mut row = vec![BigInt::zero(); vars.len()];
        for c in 0..3 {
            row[var_of[c][atom[c]].expect("support symbol has a variable")] = BigInt::one();
        }
        rows.push(row);
    }
    let anchor = dist.anchor();
    for c in 0..2 {
        let mut row = vec![BigInt::zero(); vars.len()];
        row[var_of[c][anchor[c]].expect("anchor is in the support")] = BigInt::one();
        rows.push(row);
    }
    SupportSystem { vars, rows }
}

pub fn solve_integer_embeddings(dist: &TripleDist) -> Result<ZEmbeddingReport> {
    let sys = support_system(dist);
    if sys.vars.is_empty() {
        return Err(Error::Argument("distribution has empty support".into()));
    }
    let rows_rat: Vec<Vec<Rat>> = sys
        .rows
        .iter()
        .map(|r| r.iter().map(|x| Rat::from(x.clone())).collect())
        .collect();
    let kernel = rational_kernel(&rows_rat, sys.vars.len());
    let basis: Vec<ZEmbedding> = kernel
        .iter()
        .map(|v| {
            let prim = primitive_integer_vector(v);
            let mut maps = [
                vec![BigInt::zero(); dist.alphabet(Coord::X).len()],
                vec![BigInt::zero(); dist.alphabet(Coord::Y).len()],
                vec![BigInt::zero(); dist.alphabet(Coord::Z).len()],
            ];
            for (i, &(c, s)) in sys.vars.iter().enumerate() {
                maps[c][s] = prim[i].clone();
            }
            let [sigma, gamma, phi] = maps;
            ZEmbedding { sigma, gamma, phi }
        })
        .collect();
    let diag = unimodular_diagonalize(&sys.rows);
    let invariant_bound = diag
        .diag()
        .iter()
        .map(|d| d.to_u64().unwrap_or(u64::MAX))
        .max()
        .unwrap_or(1);
    Ok(ZEmbeddingReport {
        trivial_only: basis.is_empty(),
        basis,
        invariant_bound,
    })
}

/// Number of anchored embeddings of `dist` into `h` (exact, no
/// materialization).
pub fn count_group_embeddings(dist: &TripleDist, h: &AbelianGroup) -> BigInt {
    let sys = support_system(dist);
    let diag = unimodular_diagonalize(&sys.rows);
    let nfree = sys.vars.len() - diag.rank;
    let mut total = BigInt::one();
    for &q in h.factors() {
        let qb = BigInt::from(q);
        let mut cnt = BigInt::one();
        for d in diag.diag() {
            cnt *= d.gcd(&qb);
        }
        cnt *= qb.pow(nfree as u32);
        total *= cnt;
    }
    total
}

/// All anchored embeddings of `dist` into `h`, deduplicated and canonically
/// sorted; the trivial embedding is always present. Fails when the solution
/// count exceeds `budget`.
pub fn enumerate_group_embeddings(
    dist: &TripleDist,
    h: &AbelianGroup,
    budget: u64,
) -> Result<Vec<EmbeddingTriple>> {
    let total = count_group_embeddings(dist, h);
    if total > BigInt::from(budget) {
        return Err(Error::Resource(format!(
            "{total} embeddings into {h} exceed the budget {budget}"
        )));
    }
    let sys = support_system(dist);
    let nvars = sys.vars.len();
    let diag = unimodular_diagonalize(&sys.rows);

    // per factor q: solutions of D w ≡ 0 (mod q) mapped back through V
    let mut per_factor: Vec<Vec<Vec<u64>>> = Vec::new();
    for &q in h.factors() {
        let qb = BigInt::from(q);
        let vmod: Vec<Vec<u64>> = (0..nvars)
            .map(|i| {
                (0..nvars)
                    .map(|j| diag.v[i][j].mod_floor(&qb).to_u64().expect("reduced mod q"))
                    .collect()
            })
            .collect();
        let mut choices: Vec<Vec<u64>> = Vec::with_capacity(nvars);
        for i in 0..nvars {
            if i < diag.rank {
                let g = diag.d[i][i]
                    .gcd(&qb)
                    .to_u64()
                    .expect("gcd of small moduli");
                let step = q / g;
                choices.push((0..g).map(|k| k * step).collect());
            } else {
                choices.push((0..q).collect());
            }
        }
        let mut sols: Vec<Vec<u64>> = vec![vec![]];
        for ch in &choices {
            let mut next = Vec::with_capacity(sols.len() * ch.len());
            for base in &sols {
                for &w in ch {
                    let mut b = base.clone();
                    b.push(w);
                    next.push(b);
                }
            }
            sols = next;
        }
        let value_vectors: Vec<Vec<u64>> = sols
            .iter()
            .map(|w| {
                (0..nvars)
                    .map(|i| {
                        let mut acc = 0u64;
                        for (j, &wj) in w.iter().enumerate() {
                            acc = (acc + vmod[i][j] * wj) % q;
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        per_factor.push(value_vectors);
    }

    // combine factors into group elements per variable
    let mut combos: Vec<Vec<GroupElem>> = vec![vec![h.zero(); nvars]];
    for (fi, vv) in per_factor.iter().enumerate() {
        let mut next = Vec::with_capacity(combos.len() * vv.len());
        for base in &combos {
            for sol in vv {
                let mut b = base.clone();
                for (i, item) in b.iter_mut().enumerate() {
                    item[fi] = sol[i];
                }
                next.push(b);
            }
        }
        combos = next;
    }

    let mut out: Vec<EmbeddingTriple> = combos
        .into_iter()
        .map(|vals| {
            let mut maps = [
                vec![h.zero(); dist.alphabet(Coord::X).len()],
                vec![h.zero(); dist.alphabet(Coord::Y).len()],
                vec![h.zero(); dist.alphabet(Coord::Z).len()],
            ];
            for (i, &(c, s)) in sys.vars.iter().enumerate() {
                maps[c][s] = vals[i].clone();
            }
            EmbeddingTriple {
                group: h.clone(),
                maps,
            }
        })
        .collect();
    out.sort_by_key(EmbeddingTriple::sort_key);
    out.dedup();
    debug_assert!(out.iter().all(|e| e.is_valid(dist)));
    debug_assert!(out.iter().all(|e| {
        let anchor = dist.anchor();
        (0..3).all(|c| e.maps[c][anchor[c]] == h.zero())
    }));
    Ok(out)
}

/// Bundle of small embeddings covering every embedding into a group of
/// order ≤ max_order up to linear reduction.
#[derive(Clone, Debug)]
pub struct MasterEmbedding {
    /// kept components, canonically ordered
    pub components: Vec<EmbeddingTriple>,
    /// every enumerated nontrivial embedding is linearly reduced by a kept
    /// component (trivial embeddings factor through the trivial group)
    pub verify_master: bool,
    pub max_order: u64,
}

/// Enumerate all embeddings into all Abelian groups of order ≤ max_order
/// and keep a minimal cover under linear reduction, scanning in canonical
/// order. Every dropped embedding has a kept reduction, so dropping never
/// changes any of the three induced alphabet partitions (injective
/// homomorphisms preserve fibers).
pub fn build_master_embedding(
    dist: &TripleDist,
    max_order: u64,
    budget: u64,
) -> Result<MasterEmbedding> {
    let mut enumerated: Vec<EmbeddingTriple> = Vec::new();
    for g in crate::group::groups_up_to(max_order) {
        if g.is_trivial() {
            continue;
        }
        for e in enumerate_group_embeddings(dist, &g, budget)? {
            if !e.is_trivial() {
                enumerated.push(e);
            }
        }
    }
    enumerated.sort_by_key(EmbeddingTriple::sort_key);

    let mut kept: Vec<EmbeddingTriple> = Vec::new();
    for e in &enumerated {
        if !kept.iter().any(|c| is_linear_reduction(c, e)) {
            kept.push(e.clone());
        }
    }
    let verify_master = enumerated
        .iter()
        .all(|e| kept.iter().any(|c| is_linear_reduction(c, e)));
    Ok(MasterEmbedding {
        components: kept,
        verify_master,
        max_order,
    })
}

impl MasterEmbedding {
    /// The bundled embedding into the product of the component groups.
    pub fn bundle(&self, dist: &TripleDist) -> EmbeddingTriple {
        let groups: Vec<AbelianGroup> = self.components.iter().map(|c| c.group.clone()).collect();
        let (h, source) = AbelianGroup::product_of(&groups);
        let maps = [0usize, 1, 2].map(|c| {
            let len = dist.alphabet(COORDS[c]).len();
            (0..len)
                .map(|s| {
                    source
                        .iter()
                        .map(|&(pi, fi)| self.components[pi].maps[c][s][fi])
                        .collect::<GroupElem>()
                })
                .collect::<Vec<GroupElem>>()
        });
        EmbeddingTriple { group: h, maps }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SaturationFlags {
    /// for each component: do all three images fill its group?
    pub per_component: Vec<bool>,
    /// do the bundled maps each fill the full product group?
    pub overall: bool,
}

pub fn is_saturated(master: &MasterEmbedding, dist: &TripleDist) -> SaturationFlags {
    let per_component = master
        .components
        .iter()
        .map(|c| {
            let full: BTreeSet<GroupElem> = c.group.elements().into_iter().collect();
            c.images().iter().all(|img| *img == full)
        })
        .collect();
    let bundle = master.bundle(dist);
    let order = bundle.group.order();
    let overall = bundle
        .images()
        .iter()
        .all(|img| img.len() as u64 == order);
    SaturationFlags {
        per_component,
        overall,
    }
}

fn circle_dist(a: f64, b: f64) -> f64 {
    let d = a - b;
    (d - d.round()).abs()
}

/// Turn a real-valued circle embedding (values mod 1) into an embedding
/// into ℤ_q with the same level sets, by searching denominators q = 1..N
/// with a Dirichlet-style acceptance bound and verifying the result
/// exactly. The returned group is ℤ_q in invariant (prime-power) form.
pub fn finitize_circle_embedding(
    dist: &TripleDist,
    values: [&[f64]; 3],
    tolerance: f64,
    max_denominator: u64,
) -> Result<EmbeddingTriple> {
    for c in 0..3 {
        if values[c].len() != dist.alphabet(COORDS[c]).len() {
            return Err(Error::Argument(format!(
                "value vector for {} has wrong length",
                COORDS[c]
            )));
        }
    }
    for atom in dist.support() {
        let s = values[0][atom[0]] + values[1][atom[1]] + values[2][atom[2]];
        if circle_dist(s, 0.0) > tolerance {
            return Err(Error::Argument(format!(
                "atom {atom:?} violates the mod-1 equation by {}",
                circle_dist(s, 0.0)
            )));
        }
    }

    // anchor to (0,0,0) and reduce mod 1
    let anchor = dist.anchor();
    let shifted: [Vec<f64>; 3] = [0, 1, 2].map(|c| {
        values[c]
            .iter()
            .map(|v| {
                let x = v - values[c][anchor[c]];
                x - x.floor()
            })
            .collect()
    });

    // the values that matter: support symbols only, per coordinate
    let support_vals: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            dist.support_symbols(COORDS[c])
                .iter()
                .map(|&s| shifted[c][s])
                .collect()
        })
        .collect();
    let r: usize = support_vals.iter().map(Vec::len).sum();

    // minimal in-map separation between distinct levels
    let mut alpha = f64::INFINITY;
    for vals in &support_vals {
        for i in 0..vals.len() {
            for j in i + 1..vals.len() {
                let d = circle_dist(vals[i], vals[j]);
                if d > tolerance {
                    alpha = alpha.min(d);
                }
            }
        }
    }
    if !alpha.is_finite() {
        // all maps constant mod 1: the trivial embedding, q = 1
        return Ok(EmbeddingTriple::trivial(dist));
    }

    let n_real = (3.0 / alpha).powi(r as i32).ceil();
    let n = if n_real.is_finite() && n_real < max_denominator as f64 {
        (n_real as u64).max(1)
    } else {
        max_denominator
    };
    let n_pow = (n as f64).powf(1.0 / r as f64);

    'search: for q in 1..=n {
        let qf = q as f64;
        let accept = 1.0 / (qf * n_pow);
        let mut rounded: [Vec<u64>; 3] = [vec![], vec![], vec![]];
        for c in 0..3 {
            for &v in &shifted[c] {
                let p = (qf * v).round();
                if (v - p / qf).abs() > accept {
                    continue 'search;
                }
                rounded[c].push((p as i64).rem_euclid(q as i64) as u64);
            }
        }
        // exact verification: the equation and the level sets
        let group = AbelianGroup::cyclic(q);
        let to_elem = |p: u64| -> GroupElem {
            group.factors().iter().map(|&f| p % f).collect()
        };
        let maps = [0usize, 1, 2].map(|c| {
            rounded[c].iter().map(|&p| to_elem(p)).collect::<Vec<GroupElem>>()
        });
        let cand = EmbeddingTriple {
            group: group.clone(),
            maps,
        };
        if !cand.is_valid(dist) {
            continue 'search;
        }
        for c in 0..3 {
            let syms = dist.support_symbols(COORDS[c]);
            for (ai, &sa) in syms.iter().enumerate() {
                for &sb in syms.iter().skip(ai + 1) {
                    let same_level = circle_dist(shifted[c][sa], shifted[c][sb]) <= tolerance;
                    let same_residue = rounded[c][sa] == rounded[c][sb];
                    if same_level != same_residue {
                        continue 'search;
                    }
                }
            }
        }
        return Ok(cand);
    }
    Err(Error::Search(format!(
        "no denominator up to {n} matches the circle embedding"
    )))
}
