//! Exact distributions over triple product spaces Σ×Γ×Φ.
//!
//! Probabilities are `BigRational` throughout; support, connectivity,
//! merging and mixture arithmetic are all tolerance-free. Symbols are
//! referred to by index into their [`Alphabet`]; alphabet order is the
//! canonical tie-breaking order for every argmax/plurality in the crate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;

pub type Rat = BigRational;

/// Small-integer rational constructor, mostly for fixtures and tests.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(n.into(), d.into())
}

/// The three coordinates of a triple distribution.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum Coord {
    X,
    Y,
    Z,
}

pub const COORDS: [Coord; 3] = [Coord::X, Coord::Y, Coord::Z];

impl Coord {
    pub fn idx(self) -> usize {
        match self {
            Coord::X => 0,
            Coord::Y => 1,
            Coord::Z => 2,
        }
    }

    pub fn from_idx(i: usize) -> Coord {
        COORDS[i]
    }

    /// The other two coordinates, in canonical order.
    pub fn others(self) -> (Coord, Coord) {
        match self {
            Coord::X => (Coord::Y, Coord::Z),
            Coord::Y => (Coord::X, Coord::Z),
            Coord::Z => (Coord::X, Coord::Y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Coord::X => "x",
            Coord::Y => "y",
            Coord::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Result<Coord> {
        match s {
            "x" | "X" => Ok(Coord::X),
            "y" | "Y" => Ok(Coord::Y),
            "z" | "Z" => Ok(Coord::Z),
            other => Err(Error::Argument(format!("unknown coordinate {other:?}"))),
        }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered list of distinct symbol names; the order is canonical.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub fn new(names: Vec<String>) -> Result<Alphabet> {
        if names.is_empty() {
            return Err(Error::Format("alphabet must be nonempty".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(Error::Format(format!("duplicate symbol {n:?} in alphabet")));
            }
        }
        Ok(Alphabet { names })
    }

    pub fn of<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Alphabet {
        Alphabet::new(names.into_iter().map(Into::into).collect()).unwrap()
    }

    /// Alphabet "0", "1", ..., "n-1".
    pub fn numbered(n: usize) -> Alphabet {
        Alphabet::of((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Partition of one alphabet into merge components; `representative[s]` is
/// the canonically smallest symbol of s's component (idempotent by
/// construction).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeMap {
    pub coordinate: Coord,
    pub representative: Vec<usize>,
}

impl MergeMap {
    pub fn is_identity(&self) -> bool {
        self.representative.iter().enumerate().all(|(i, &r)| i == r)
    }

    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut by_rep: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (s, &r) in self.representative.iter().enumerate() {
            by_rep.entry(r).or_default().push(s);
        }
        by_rep.into_values().collect()
    }
}

/// Connected components of one bipartite support graph. Vertices are the
/// symbols that actually occur in the pair marginal's support.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairComponents {
    pub pair: (Coord, Coord),
    /// each component as (left symbols, right symbols), both sorted
    pub components: Vec<(Vec<usize>, Vec<usize>)>,
}

#[derive(Clone, PartialEq, Eq)]
pub struct TripleDist {
    alphabets: [Alphabet; 3],
    /// positive probabilities only, keyed by symbol indices
    atoms: BTreeMap<[usize; 3], Rat>,
}

impl fmt::Debug for TripleDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TripleDist({}x{}x{}, {} atoms)",
            self.alphabets[0].len(),
            self.alphabets[1].len(),
            self.alphabets[2].len(),
            self.atoms.len()
        )
    }
}

impl TripleDist {
    pub fn new(alphabets: [Alphabet; 3], atoms: Vec<([usize; 3], Rat)>) -> Result<TripleDist> {
        let mut map: BTreeMap<[usize; 3], Rat> = BTreeMap::new();
        for (key, p) in atoms {
            for c in 0..3 {
                if key[c] >= alphabets[c].len() {
                    return Err(Error::Format(format!(
                        "atom {key:?} out of range for coordinate {}",
                        Coord::from_idx(c)
                    )));
                }
            }
            if p.is_negative() {
                return Err(Error::Format(format!("negative probability at {key:?}")));
            }
            if p.is_zero() {
                continue;
            }
            *map.entry(key).or_insert_with(Rat::zero) += p;
        }
        let total: Rat = map.values().cloned().sum();
        if !total.is_one() {
            return Err(Error::Format(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(TripleDist {
            alphabets,
            atoms: map,
        })
    }

    /// Uniform distribution on the listed support atoms.
    pub fn uniform_on(alphabets: [Alphabet; 3], support: &[[usize; 3]]) -> Result<TripleDist> {
        let n = support.len();
        if n == 0 {
            return Err(Error::Format("empty support".into()));
        }
        let p = Rat::new(1.into(), (n as i64).into());
        TripleDist::new(
            alphabets,
            support.iter().map(|&k| (k, p.clone())).collect(),
        )
    }

    pub fn alphabet(&self, c: Coord) -> &Alphabet {
        &self.alphabets[c.idx()]
    }

    pub fn alphabets(&self) -> &[Alphabet; 3] {
        &self.alphabets
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[usize; 3], &Rat)> {
        self.atoms.iter()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn prob(&self, key: &[usize; 3]) -> Rat {
        self.atoms.get(key).cloned().unwrap_or_else(Rat::zero)
    }

    /// Support atoms in canonical (index-lexicographic) order.
    pub fn support(&self) -> Vec<[usize; 3]> {
        self.atoms.keys().cloned().collect()
    }

    /// The lexicographically smallest support atom; the canonical anchor.
    pub fn anchor(&self) -> [usize; 3] {
        *self.atoms.keys().next().expect("distribution has support")
    }

    /// Marginal over an arbitrary nonempty subset of coordinates, keyed by
    /// the symbol indices of the kept coordinates in x<y<z order.
    pub fn marginal(&self, coords: &BTreeSet<Coord>) -> Result<BTreeMap<Vec<usize>, Rat>> {
        if coords.is_empty() {
            return Err(Error::Argument("marginal needs at least one coordinate".into()));
        }
        let keep: Vec<usize> = coords.iter().map(|c| c.idx()).collect();
        let mut out: BTreeMap<Vec<usize>, Rat> = BTreeMap::new();
        for (key, p) in &self.atoms {
            let k: Vec<usize> = keep.iter().map(|&c| key[c]).collect();
            *out.entry(k).or_insert_with(Rat::zero) += p.clone();
        }
        Ok(out)
    }

    /// Single-coordinate marginal as a dense vector over the alphabet.
    pub fn single_marginal(&self, c: Coord) -> Vec<Rat> {
        let mut out = vec![Rat::zero(); self.alphabets[c.idx()].len()];
        for (key, p) in &self.atoms {
            out[key[c.idx()]] += p.clone();
        }
        out
    }

    pub fn pair_marginal(&self, a: Coord, b: Coord) -> BTreeMap<[usize; 2], Rat> {
        let mut out: BTreeMap<[usize; 2], Rat> = BTreeMap::new();
        for (key, p) in &self.atoms {
            *out.entry([key[a.idx()], key[b.idx()]]).or_insert_with(Rat::zero) += p.clone();
        }
        out
    }

    /// Symbols with positive marginal, sorted.
    pub fn support_symbols(&self, c: Coord) -> Vec<usize> {
        let mut s: BTreeSet<usize> = BTreeSet::new();
        for key in self.atoms.keys() {
            s.insert(key[c.idx()]);
        }
        s.into_iter().collect()
    }

    /// Components of the bipartite support graph on coordinates (a, b).
    pub fn pair_components(&self, a: Coord, b: Coord) -> PairComponents {
        let left: Vec<usize> = self.support_symbols(a);
        let right: Vec<usize> = self.support_symbols(b);
        let lpos: BTreeMap<usize, usize> =
            left.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let rpos: BTreeMap<usize, usize> =
            right.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        // union-find over left ++ right
        let total = left.len() + right.len();
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for key in self.atoms.keys() {
            let u = lpos[&key[a.idx()]];
            let v = left.len() + rpos[&key[b.idx()]];
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru.max(rv)] = ru.min(rv);
            }
        }
        let mut groups: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, &s) in left.iter().enumerate() {
            groups.entry(find(&mut parent, i)).or_default().0.push(s);
        }
        for (i, &s) in right.iter().enumerate() {
            groups
                .entry(find(&mut parent, left.len() + i))
                .or_default()
                .1
                .push(s);
        }
        PairComponents {
            pair: (a, b),
            components: groups.into_values().collect(),
        }
    }

    /// True iff all three bipartite support graphs are connected; also
    /// returns the component decomposition of each (pairs xy, xz, yz).
    pub fn is_pairwise_connected(&self) -> (bool, [PairComponents; 3]) {
        let comps = [
            self.pair_components(Coord::X, Coord::Y),
            self.pair_components(Coord::X, Coord::Z),
            self.pair_components(Coord::Y, Coord::Z),
        ];
        let ok = comps.iter().all(|c| c.components.len() <= 1);
        (ok, comps)
    }

    /// True iff the two `known` coordinates determine the third on the
    /// support: every known-pair value has at most one completion.
    pub fn implies_third(&self, known: (Coord, Coord)) -> bool {
        let (a, b) = known;
        if a == b {
            return false;
        }
        let third = COORDS
            .into_iter()
            .find(|c| *c != a && *c != b)
            .expect("two distinct coords leave one");
        let mut seen: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for key in self.atoms.keys() {
            let pair = [key[a.idx()], key[b.idx()]];
            let t = key[third.idx()];
            if let Some(&prev) = seen.get(&pair) {
                if prev != t {
                    return false;
                }
            } else {
                seen.insert(pair, t);
            }
        }
        true
    }

    /// Collapse the merge-graph components of one coordinate. Two symbols
    /// are adjacent when they complete a common value pair of the other two
    /// coordinates inside the support; each component maps to its smallest
    /// symbol, which names it in the merged alphabet.
    pub fn merge(&self, coordinate: Coord) -> (TripleDist, MergeMap) {
        let c = coordinate.idx();
        let (oa, ob) = coordinate.others();
        let n = self.alphabets[c].len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let mut first_with: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for key in self.atoms.keys() {
            let pair = [key[oa.idx()], key[ob.idx()]];
            let s = key[c];
            if let Some(&other) = first_with.get(&pair) {
                let (ra, rb) = (find(&mut parent, other), find(&mut parent, s));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            } else {
                first_with.insert(pair, s);
            }
        }
        // path-compress to the minimum of each component
        let mut representative = vec![0usize; n];
        for s in 0..n {
            representative[s] = find(&mut parent, s);
        }
        // union by min above only ensures root <= member along merge order;
        // normalize so the representative is the true component minimum
        let mut min_of_root: BTreeMap<usize, usize> = BTreeMap::new();
        for s in 0..n {
            let r = representative[s];
            let m = min_of_root.entry(r).or_insert(s);
            *m = (*m).min(s);
        }
        for s in 0..n {
            representative[s] = min_of_root[&representative[s]];
        }

        let reps: Vec<usize> = {
            let set: BTreeSet<usize> = representative.iter().cloned().collect();
            set.into_iter().collect()
        };
        let new_index: BTreeMap<usize, usize> =
            reps.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let new_alpha = Alphabet::new(
            reps.iter()
                .map(|&r| self.alphabets[c].name(r).to_string())
                .collect(),
        )
        .expect("representatives are distinct");

        let mut new_atoms: BTreeMap<[usize; 3], Rat> = BTreeMap::new();
        for (key, p) in &self.atoms {
            let mut k = *key;
            k[c] = new_index[&representative[key[c]]];
            *new_atoms.entry(k).or_insert_with(Rat::zero) += p.clone();
        }
        let mut alphabets = self.alphabets.clone();
        alphabets[c] = new_alpha;
        let merged = TripleDist {
            alphabets,
            atoms: new_atoms,
        };
        (
            merged,
            MergeMap {
                coordinate,
                representative,
            },
        )
    }

    /// Merge one coordinate to fixpoint.
    pub fn merge_fixpoint(&self, coordinate: Coord) -> TripleDist {
        let mut cur = self.clone();
        loop {
            let (next, map) = cur.merge(coordinate);
            if map.is_identity() {
                return cur;
            }
            cur = next;
        }
    }

    /// Solve μ = ρ·ν + (1-ρ)·ν′ for ν′, exactly. Fails if some atom would
    /// go negative.
    pub fn mixture_split(&self, rho: &Rat, nu: &TripleDist) -> Result<TripleDist> {
        if !(rho > &Rat::zero() && rho < &Rat::one()) {
            return Err(Error::Argument(format!("weight {rho} outside (0,1)")));
        }
        if nu.alphabets != self.alphabets {
            return Err(Error::Argument("mixture parts share alphabets".into()));
        }
        for (key, q) in &nu.atoms {
            if self.prob(key) < rho * q {
                return Err(Error::Argument(format!(
                    "infeasible split: atom {key:?} has mass {} but needs at least {}",
                    self.prob(key),
                    rho * q
                )));
            }
        }
        let one_minus = Rat::one() - rho;
        let mut atoms = Vec::new();
        let keys: BTreeSet<[usize; 3]> = self
            .atoms
            .keys()
            .chain(nu.atoms.keys())
            .cloned()
            .collect();
        for key in keys {
            let v = (self.prob(&key) - rho * nu.prob(&key)) / &one_minus;
            atoms.push((key, v));
        }
        TripleDist::new(self.alphabets.clone(), atoms)
    }

    /// `count` i.i.d. samples from μ^⊗n, reproducible for a fixed seed.
    pub fn sample_tensor(&self, n: usize, count: usize, seed: u64) -> Vec<Vec<[usize; 3]>> {
        assert!(n >= 1, "tensor power must be at least 1");
        let keys: Vec<[usize; 3]> = self.atoms.keys().cloned().collect();
        let mut cum = Vec::with_capacity(keys.len());
        let mut acc = 0.0f64;
        for key in &keys {
            acc += self.atoms[key].to_f64().expect("probability fits in f64");
            cum.push(acc);
        }
        let total = acc;
        let mut rng = substream(seed, "dist.sample_tensor");
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut tuple = Vec::with_capacity(n);
            for _ in 0..n {
                let u: f64 = rng.random::<f64>() * total;
                let idx = match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                    Ok(i) => (i + 1).min(keys.len() - 1),
                    Err(i) => i.min(keys.len() - 1),
                };
                tuple.push(keys[idx]);
            }
            out.push(tuple);
        }
        out
    }

    // ---- JSON interchange ----

    pub fn from_json(text: &str) -> Result<TripleDist> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let alpha_v = v
            .get("alphabets")
            .and_then(|a| a.as_array())
            .ok_or_else(|| Error::Format("missing `alphabets` array".into()))?;
        if alpha_v.len() != 3 {
            return Err(Error::Format("`alphabets` must list exactly 3 alphabets".into()));
        }
        let mut alphabets = Vec::new();
        for a in alpha_v {
            let names = a
                .as_array()
                .ok_or_else(|| Error::Format("each alphabet must be an array".into()))?
                .iter()
                .map(symbol_name)
                .collect::<Result<Vec<String>>>()?;
            alphabets.push(Alphabet::new(names)?);
        }
        let alphabets: [Alphabet; 3] = alphabets.try_into().expect("length checked");
        let atoms_v = v
            .get("atoms")
            .and_then(|a| a.as_array())
            .ok_or_else(|| Error::Format("missing `atoms` array".into()))?;
        let mut atoms = Vec::new();
        for entry in atoms_v {
            let row = entry
                .as_array()
                .filter(|r| r.len() == 4)
                .ok_or_else(|| Error::Format("each atom must be [x, y, z, prob]".into()))?;
            let mut key = [0usize; 3];
            for c in 0..3 {
                let name = symbol_name(&row[c])?;
                key[c] = alphabets[c].index_of(&name).ok_or_else(|| {
                    Error::Format(format!(
                        "symbol {name:?} not in the {} alphabet",
                        Coord::from_idx(c)
                    ))
                })?;
            }
            let p_str = row[3]
                .as_str()
                .ok_or_else(|| Error::Format("probability must be a rational string".into()))?;
            let p: Rat = p_str
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("bad probability {p_str:?}: {e}")))?;
            atoms.push((key, p));
        }
        TripleDist::new(alphabets, atoms)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let alphabets: Vec<Vec<String>> = self
            .alphabets
            .iter()
            .map(|a| a.names().to_vec())
            .collect();
        let atoms: Vec<serde_json::Value> = self
            .atoms
            .iter()
            .map(|(key, p)| {
                serde_json::json!([
                    self.alphabets[0].name(key[0]),
                    self.alphabets[1].name(key[1]),
                    self.alphabets[2].name(key[2]),
                    p.to_string(),
                ])
            })
            .collect();
        serde_json::json!({ "alphabets": alphabets, "atoms": atoms })
    }
}

fn symbol_name(v: &serde_json::Value) -> Result<String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::Format(format!("bad symbol {other}"))),
    }
}

/// Uniform distribution on {(a,b,c) ∈ ℤ_q³ : a+b+c ≡ 0 (mod q)}.
pub fn cyclic_equation_dist(q: usize) -> TripleDist {
    let alpha = Alphabet::numbered(q);
    let mut support = Vec::new();
    for a in 0..q {
        for b in 0..q {
            support.push([a, b, (2 * q - a - b) % q]);
        }
    }
    TripleDist::uniform_on([alpha.clone(), alpha.clone(), alpha], &support)
        .expect("uniform support is valid")
}
