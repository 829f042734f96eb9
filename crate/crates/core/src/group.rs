//! Finite Abelian groups in invariant form: products of prime-power cyclic
//! factors, their elements, homomorphisms and characters.

use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;
use num_integer::Integer;

use crate::error::{Error, Result};

/// Element of a product group, one residue per cyclic factor.
pub type GroupElem = Vec<u64>;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct AbelianGroup {
    /// prime-power cyclic orders, sorted ascending; empty = trivial group
    factors: Vec<u64>,
}

fn prime_power_split(mut q: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= q {
        if q % p == 0 {
            let mut pk = 1u64;
            while q % p == 0 {
                q /= p;
                pk *= p;
            }
            out.push(pk);
        }
        p += 1;
    }
    if q > 1 {
        out.push(q);
    }
    out
}

impl AbelianGroup {
    /// Accepts arbitrary cyclic orders; splits them into prime powers and
    /// sorts, so isomorphic inputs construct equal values.
    pub fn new(cyclic_orders: impl IntoIterator<Item = u64>) -> AbelianGroup {
        let mut factors = Vec::new();
        for q in cyclic_orders {
            assert!(q >= 1, "cyclic order must be positive");
            factors.extend(prime_power_split(q));
        }
        factors.sort_unstable();
        AbelianGroup { factors }
    }

    pub fn trivial() -> AbelianGroup {
        AbelianGroup { factors: vec![] }
    }

    pub fn cyclic(q: u64) -> AbelianGroup {
        AbelianGroup::new([q])
    }

    pub fn factors(&self) -> &[u64] {
        &self.factors
    }

    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    pub fn order(&self) -> u64 {
        self.factors.iter().product()
    }

    pub fn is_trivial(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn zero(&self) -> GroupElem {
        vec![0; self.factors.len()]
    }

    pub fn is_elem(&self, a: &GroupElem) -> bool {
        a.len() == self.factors.len() && a.iter().zip(&self.factors).all(|(&x, &q)| x < q)
    }

    pub fn add(&self, a: &GroupElem, b: &GroupElem) -> GroupElem {
        a.iter()
            .zip(b)
            .zip(&self.factors)
            .map(|((&x, &y), &q)| (x + y) % q)
            .collect()
    }

    pub fn neg(&self, a: &GroupElem) -> GroupElem {
        a.iter()
            .zip(&self.factors)
            .map(|(&x, &q)| (q - x) % q)
            .collect()
    }

    pub fn sub(&self, a: &GroupElem, b: &GroupElem) -> GroupElem {
        self.add(a, &self.neg(b))
    }

    /// k·a with k possibly negative.
    pub fn smul(&self, k: i64, a: &GroupElem) -> GroupElem {
        a.iter()
            .zip(&self.factors)
            .map(|(&x, &q)| {
                let r = (k.rem_euclid(q as i64) as u64 * x) % q;
                r
            })
            .collect()
    }

    /// All elements in mixed-radix lexicographic order (first factor most
    /// significant); index 0 is the identity.
    pub fn elements(&self) -> Vec<GroupElem> {
        let mut out = vec![self.zero()];
        for (i, &q) in self.factors.iter().enumerate() {
            let mut next = Vec::with_capacity(out.len() * q as usize);
            for base in &out {
                for r in 0..q {
                    let mut e = base.clone();
                    e[i] = r;
                    next.push(e);
                }
            }
            out = next;
        }
        out
    }

    pub fn element_order(&self, a: &GroupElem) -> u64 {
        let mut ord = 1u64;
        for (&x, &q) in a.iter().zip(&self.factors) {
            let o = if x == 0 { 1 } else { q / q.gcd(&x) };
            ord = ord.lcm(&o);
        }
        ord
    }

    /// (product group, coordinate source map): factor j of the product came
    /// from `source[j] = (part index, factor index within that part)`.
    pub fn product_of(parts: &[AbelianGroup]) -> (AbelianGroup, Vec<(usize, usize)>) {
        let mut tagged: Vec<(u64, (usize, usize))> = Vec::new();
        for (pi, p) in parts.iter().enumerate() {
            for (fi, &q) in p.factors.iter().enumerate() {
                tagged.push((q, (pi, fi)));
            }
        }
        tagged.sort();
        let factors = tagged.iter().map(|&(q, _)| q).collect();
        let source = tagged.iter().map(|&(_, s)| s).collect();
        (AbelianGroup { factors }, source)
    }
}

impl fmt::Display for AbelianGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self.factors.iter().map(|q| format!("Z{q}")).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Homomorphism between product groups, stored by generator images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hom {
    pub domain: AbelianGroup,
    pub codomain: AbelianGroup,
    /// image of the i-th standard generator (1 in factor i)
    pub gen_images: Vec<GroupElem>,
}

impl Hom {
    pub fn apply(&self, a: &GroupElem) -> GroupElem {
        let mut acc = self.codomain.zero();
        for (i, &x) in a.iter().enumerate() {
            let part = self.codomain.smul(x as i64, &self.gen_images[i]);
            acc = self.codomain.add(&acc, &part);
        }
        acc
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = BTreeSet::new();
        for e in self.domain.elements() {
            if !seen.insert(self.apply(&e)) {
                return false;
            }
        }
        true
    }
}

/// All homomorphisms domain -> codomain: each generator of order a_i maps to
/// an element whose order divides a_i.
pub fn homomorphisms(domain: &AbelianGroup, codomain: &AbelianGroup) -> Vec<Hom> {
    let candidates: Vec<Vec<GroupElem>> = domain
        .factors()
        .iter()
        .map(|&a| {
            codomain
                .elements()
                .into_iter()
                .filter(|e| a % codomain.element_order(e) == 0)
                .collect()
        })
        .collect();
    let mut homs = vec![Hom {
        domain: domain.clone(),
        codomain: codomain.clone(),
        gen_images: vec![],
    }];
    for cands in candidates {
        let mut next = Vec::with_capacity(homs.len() * cands.len());
        for h in &homs {
            for c in &cands {
                let mut imgs = h.gen_images.clone();
                imgs.push(c.clone());
                next.push(Hom {
                    domain: domain.clone(),
                    codomain: codomain.clone(),
                    gen_images: imgs,
                });
            }
        }
        homs = next;
    }
    homs
}

pub fn injective_homomorphisms(domain: &AbelianGroup, codomain: &AbelianGroup) -> Vec<Hom> {
    if domain.order() > codomain.order() {
        return vec![];
    }
    homomorphisms(domain, codomain)
        .into_iter()
        .filter(Hom::is_injective)
        .collect()
}

/// Character of a product group, indexed by one exponent per factor:
/// χ(a) = exp(2πi Σ t_i a_i / q_i).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Character {
    pub group: AbelianGroup,
    pub exponents: Vec<u64>,
}

impl Character {
    pub fn trivial(group: &AbelianGroup) -> Character {
        Character {
            group: group.clone(),
            exponents: group.zero(),
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.exponents.iter().all(|&t| t == 0)
    }

    pub fn eval(&self, a: &GroupElem) -> Complex64 {
        debug_assert!(self.group.is_elem(a));
        let mut phase = 0f64;
        for ((&t, &x), &q) in self.exponents.iter().zip(a).zip(self.group.factors()) {
            phase += ((t as u128 * x as u128) % q as u128) as f64 / q as f64;
        }
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * phase)
    }

    /// Pointwise product of characters of the same group.
    pub fn mul(&self, other: &Character) -> Result<Character> {
        if self.group != other.group {
            return Err(Error::Argument("character groups differ".into()));
        }
        Ok(Character {
            group: self.group.clone(),
            exponents: self.group.add(&self.exponents, &other.exponents),
        })
    }

    /// x ↦ χ(values[x]); the composition with a group-valued map.
    pub fn compose(&self, values: &[GroupElem]) -> Vec<Complex64> {
        values.iter().map(|v| self.eval(v)).collect()
    }
}

/// All |H| characters, exponent vectors in the element order of the group.
pub fn all_characters(group: &AbelianGroup) -> Vec<Character> {
    group
        .elements()
        .into_iter()
        .map(|exponents| Character {
            group: group.clone(),
            exponents,
        })
        .collect()
}

/// All isomorphism classes of Abelian groups of order ≤ max_order, sorted by
/// (order, factors). Includes the trivial group.
pub fn groups_up_to(max_order: u64) -> Vec<AbelianGroup> {
    fn partitions(e: u32) -> Vec<Vec<u32>> {
        fn rec(e: u32, max: u32) -> Vec<Vec<u32>> {
            if e == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for k in (1..=e.min(max)).rev() {
                for mut rest in rec(e - k, k) {
                    rest.insert(0, k);
                    out.push(rest);
                }
            }
            out
        }
        rec(e, e)
    }
    let mut out = vec![AbelianGroup::trivial()];
    for n in 2..=max_order {
        // factorize n, then one partition choice per prime
        let mut rem = n;
        let mut primes: Vec<(u64, u32)> = Vec::new();
        let mut p = 2u64;
        while p * p <= rem {
            if rem % p == 0 {
                let mut e = 0u32;
                while rem % p == 0 {
                    rem /= p;
                    e += 1;
                }
                primes.push((p, e));
            }
            p += 1;
        }
        if rem > 1 {
            primes.push((rem, 1));
        }
        let mut combos: Vec<Vec<u64>> = vec![vec![]];
        for &(p, e) in &primes {
            let parts = partitions(e);
            let mut next = Vec::new();
            for base in &combos {
                for lam in &parts {
                    let mut f = base.clone();
                    for &k in lam {
                        f.push(p.pow(k));
                    }
                    next.push(f);
                }
            }
            combos = next;
        }
        let mut groups: Vec<AbelianGroup> = combos.into_iter().map(AbelianGroup::new).collect();
        groups.sort();
        out.extend(groups);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tolerance;

    #[test]
    fn constructor_normalizes_to_prime_powers() {
        assert_eq!(AbelianGroup::cyclic(6), AbelianGroup::new([2, 3]));
        assert_eq!(AbelianGroup::cyclic(12).factors(), &[3, 4]);
        assert_ne!(AbelianGroup::new([2, 2, 3]), AbelianGroup::cyclic(12));
        assert_eq!(AbelianGroup::cyclic(1), AbelianGroup::trivial());
    }

    #[test]
    fn element_arithmetic() {
        let g = AbelianGroup::new([2, 3]);
        assert_eq!(g.order(), 6);
        assert_eq!(g.elements().len(), 6);
        let a = vec![1, 2];
        let b = vec![1, 2];
        assert_eq!(g.add(&a, &b), vec![0, 1]);
        assert_eq!(g.neg(&a), vec![1, 1]);
        assert_eq!(g.add(&a, &g.neg(&a)), g.zero());
        assert_eq!(g.smul(-1, &a), g.neg(&a));
        assert_eq!(g.smul(5, &a), vec![1, 1]);
    }

    #[test]
    fn element_orders() {
        // canonical factor order is [3, 4]
        let g = AbelianGroup::new([4, 3]);
        assert_eq!(g.factors(), &[3, 4]);
        assert_eq!(g.element_order(&g.zero()), 1);
        assert_eq!(g.element_order(&vec![0, 2]), 2);
        assert_eq!(g.element_order(&vec![1, 1]), 12);
        assert_eq!(g.element_order(&vec![2, 0]), 3);
    }

    #[test]
    fn hom_counts_between_cyclic_groups() {
        // |Hom(Z_a, Z_b)| = gcd(a, b)
        for (a, b) in [(2u64, 4u64), (4, 2), (3, 5), (6, 4), (4, 6), (12, 18)] {
            let homs = homomorphisms(&AbelianGroup::cyclic(a), &AbelianGroup::cyclic(b));
            assert_eq!(homs.len() as u64, a.gcd(&b), "({a},{b})");
        }
    }

    #[test]
    fn injective_homs_exist_exactly_when_subgroup_embeds() {
        let z2 = AbelianGroup::cyclic(2);
        let z3 = AbelianGroup::cyclic(3);
        let z4 = AbelianGroup::cyclic(4);
        let z22 = AbelianGroup::new([2, 2]);
        assert!(injective_homomorphisms(&z2, &z4).len() == 1); // 1 -> 2
        assert!(injective_homomorphisms(&z2, &z22).len() == 3);
        assert!(injective_homomorphisms(&z3, &z2).is_empty());
        assert!(injective_homomorphisms(&z2, &z3).is_empty());
        assert!(injective_homomorphisms(&z4, &z22).is_empty()); // no order-4 element
        assert_eq!(injective_homomorphisms(&z3, &z3).len(), 2);
    }

    #[test]
    fn homs_respect_addition() {
        let g = AbelianGroup::new([2, 3]);
        let h = AbelianGroup::new([4, 3]);
        for hom in homomorphisms(&g, &h) {
            for a in g.elements() {
                for b in g.elements() {
                    assert_eq!(
                        hom.apply(&g.add(&a, &b)),
                        h.add(&hom.apply(&a), &hom.apply(&b))
                    );
                }
            }
        }
    }

    #[test]
    fn characters_multiply_and_are_unit_modulus() {
        let g = AbelianGroup::new([3, 4]);
        let chars = all_characters(&g);
        assert_eq!(chars.len(), 12);
        for chi in &chars {
            for a in g.elements() {
                assert!((chi.eval(&a).norm() - 1.0).abs() < tolerance::EQ);
                for b in g.elements() {
                    let lhs = chi.eval(&g.add(&a, &b));
                    let rhs = chi.eval(&a) * chi.eval(&b);
                    assert!((lhs - rhs).norm() < tolerance::EQ);
                }
            }
        }
        let prod = chars[1].mul(&chars[2]).unwrap();
        for a in g.elements() {
            assert!((prod.eval(&a) - chars[1].eval(&a) * chars[2].eval(&a)).norm() < tolerance::EQ);
        }
    }

    #[test]
    fn character_orthogonality() {
        let g = AbelianGroup::new([2, 3]);
        let chars = all_characters(&g);
        let n = g.order() as f64;
        for (i, ci) in chars.iter().enumerate() {
            for (j, cj) in chars.iter().enumerate() {
                let mut acc = num_complex::Complex64::new(0.0, 0.0);
                for a in g.elements() {
                    acc += ci.eval(&a) * cj.eval(&a).conj();
                }
                let expect = if i == j { n } else { 0.0 };
                assert!((acc.norm() - expect).abs() < 1e-9, "({i},{j}): {acc}");
            }
        }
    }

    #[test]
    fn group_enumeration_counts() {
        // number of Abelian groups of order n = product of partition counts
        let gs = groups_up_to(12);
        let count_of = |n: u64| gs.iter().filter(|g| g.order() == n).count();
        assert_eq!(count_of(1), 1);
        assert_eq!(count_of(2), 1);
        assert_eq!(count_of(4), 2); // Z4, Z2xZ2
        assert_eq!(count_of(8), 3); // Z8, Z2xZ4, Z2^3
        assert_eq!(count_of(12), 2); // Z3xZ4, Z2xZ2xZ3
        assert_eq!(gs.len(), 1 + 1 + 1 + 2 + 1 + 1 + 1 + 3 + 2 + 1 + 1 + 2);
        // sorted by (order, factors)
        let mut sorted = gs.clone();
        sorted.sort_by_key(|g| (g.order(), g.factors().to_vec()));
        assert_eq!(gs, sorted);
    }

    #[test]
    fn product_of_tracks_sources() {
        let a = AbelianGroup::new([4]);
        let b = AbelianGroup::new([2, 3]);
        let (prod, src) = AbelianGroup::product_of(&[a, b]);
        assert_eq!(prod.factors(), &[2, 3, 4]);
        assert_eq!(src, vec![(1, 0), (1, 1), (0, 0)]);
    }
}
