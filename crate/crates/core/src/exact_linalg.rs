//! Exact integer/rational linear algebra used by the structural modules:
//! unimodular diagonalization of integer matrices and rational kernels.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::dist::Rat;

/// U * A * V = D with U, V unimodular and D diagonal.
///
/// D's diagonal entries are not required to form a divisibility chain; every
/// use in this crate (solution counting mod q, quotient-group presentation)
/// only needs a diagonal form reached by invertible row/column operations.
#[derive(Clone, Debug)]
pub struct Diagonalized {
    pub u: Vec<Vec<BigInt>>,
    pub d: Vec<Vec<BigInt>>,
    pub v: Vec<Vec<BigInt>>,
    pub rank: usize,
}

impl Diagonalized {
    pub fn diag(&self) -> Vec<BigInt> {
        (0..self.rank).map(|i| self.d[i][i].clone()).collect()
    }
}

fn identity(n: usize) -> Vec<Vec<BigInt>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { BigInt::one() } else { BigInt::zero() })
                .collect()
        })
        .collect()
}

pub fn unimodular_diagonalize(a: &[Vec<BigInt>]) -> Diagonalized {
    let m = a.len();
    let n = if m == 0 { 0 } else { a[0].len() };
    let mut d: Vec<Vec<BigInt>> = a.to_vec();
    let mut u = identity(m);
    let mut v = identity(n);

    let mut t = 0usize;
    while t < m.min(n) {
        // locate the smallest-magnitude nonzero entry of the trailing block
        let mut pivot: Option<(usize, usize)> = None;
        for i in t..m {
            for j in t..n {
                if !d[i][j].is_zero()
                    && pivot
                        .map(|(pi, pj)| d[i][j].abs() < d[pi][pj].abs())
                        .unwrap_or(true)
                {
                    pivot = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = pivot else { break };
        d.swap(t, pi);
        u.swap(t, pi);
        for row in d.iter_mut() {
            row.swap(t, pj);
        }
        for row in v.iter_mut() {
            row.swap(t, pj);
        }

        // clear row t and column t; remainders smaller than the pivot get
        // promoted, so the pivot magnitude strictly decreases until clean
        loop {
            let mut dirty = false;
            for i in t + 1..m {
                if d[i][t].is_zero() {
                    continue;
                }
                let q = &d[i][t] / &d[t][t];
                if !q.is_zero() {
                    for j in 0..n {
                        let s = &q * &d[t][j];
                        d[i][j] -= s;
                    }
                    for j in 0..m {
                        let s = &q * &u[t][j];
                        u[i][j] -= s;
                    }
                }
                if !d[i][t].is_zero() {
                    d.swap(t, i);
                    u.swap(t, i);
                    dirty = true;
                }
            }
            for j in t + 1..n {
                if d[t][j].is_zero() {
                    continue;
                }
                let q = &d[t][j] / &d[t][t];
                if !q.is_zero() {
                    for i in 0..m {
                        let s = &q * &d[i][t];
                        d[i][j] -= s;
                    }
                    for i in 0..n {
                        let s = &q * &v[i][t];
                        v[i][j] -= s;
                    }
                }
                if !d[t][j].is_zero() {
                    for row in d.iter_mut() {
                        row.swap(t, j);
                    }
                    for row in v.iter_mut() {
                        row.swap(t, j);
                    }
                    dirty = true;
                }
            }
            let col_clean = (t + 1..m).all(|i| d[i][t].is_zero());
            let row_clean = (t + 1..n).all(|j| d[t][j].is_zero());
            if !dirty && col_clean && row_clean {
                break;
            }
        }
        if d[t][t].is_negative() {
            for j in 0..n {
                d[t][j] = -d[t][j].clone();
            }
            for j in 0..m {
                u[t][j] = -u[t][j].clone();
            }
        }
        t += 1;
    }
    Diagonalized { u, d, v, rank: t }
}

/// Basis of {v : A v = 0} over the rationals, via reduced row echelon form.
/// Each basis vector sets one free variable to 1.
pub fn rational_kernel(a: &[Vec<Rat>], ncols: usize) -> Vec<Vec<Rat>> {
    let mut rows: Vec<Vec<Rat>> = a.iter().filter(|r| !r.iter().all(Rat::is_zero)).cloned().collect();
    let m = rows.len();
    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row, col)
    let mut r = 0usize;
    for c in 0..ncols {
        let Some(p) = (r..m).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = rows[r][c].clone();
        for j in c..ncols {
            rows[r][j] = &rows[r][j] / &inv;
        }
        for i in 0..m {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                for j in c..ncols {
                    let s = &f * &rows[r][j];
                    rows[i][j] -= s;
                }
            }
        }
        pivots.push((r, c));
        r += 1;
        if r == m {
            break;
        }
    }
    let pivot_cols: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
    let mut basis = Vec::new();
    for free in 0..ncols {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut vec = vec![Rat::zero(); ncols];
        vec[free] = Rat::one();
        for &(pr, pc) in &pivots {
            vec[pc] = -rows[pr][free].clone();
        }
        basis.push(vec);
    }
    basis
}

/// Scale a rational vector to a primitive integer vector with positive
/// leading entry.
pub fn primitive_integer_vector(v: &[Rat]) -> Vec<BigInt> {
    let mut denom_lcm = BigInt::one();
    for x in v {
        denom_lcm = denom_lcm.lcm(x.denom());
    }
    let mut ints: Vec<BigInt> = v
        .iter()
        .map(|x| x.numer() * (&denom_lcm / x.denom()))
        .collect();
    let mut g = BigInt::zero();
    for x in &ints {
        g = g.gcd(x);
    }
    if !g.is_zero() && !g.is_one() {
        for x in ints.iter_mut() {
            *x = &*x / &g;
        }
    }
    if let Some(first) = ints.iter().find(|x| !x.is_zero()) {
        if first.is_negative() {
            for x in ints.iter_mut() {
                *x = -x.clone();
            }
        }
    }
    ints
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::rat;
    use rand::Rng;

    fn matmul(a: &[Vec<BigInt>], b: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
        let m = a.len();
        let k = if m == 0 { 0 } else { a[0].len() };
        let n = if b.is_empty() { 0 } else { b[0].len() };
        let mut out = vec![vec![BigInt::zero(); n]; m];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    let s = &a[i][t] * &b[t][j];
                    out[i][j] += s;
                }
            }
        }
        out
    }

    fn det(a: &[Vec<BigInt>]) -> Rat {
        // rational elimination determinant, small matrices only
        let n = a.len();
        let mut m: Vec<Vec<Rat>> = a
            .iter()
            .map(|r| r.iter().map(|x| Rat::from(x.clone())).collect())
            .collect();
        let mut d = Rat::one();
        for c in 0..n {
            let Some(p) = (c..n).find(|&i| !m[i][c].is_zero()) else {
                return Rat::zero();
            };
            if p != c {
                m.swap(p, c);
                d = -d;
            }
            d *= m[c][c].clone();
            let inv = m[c][c].clone();
            for j in c..n {
                m[c][j] = &m[c][j] / &inv;
            }
            for i in c + 1..n {
                if !m[i][c].is_zero() {
                    let f = m[i][c].clone();
                    for j in c..n {
                        let s = &f * &m[c][j];
                        m[i][j] -= s;
                    }
                }
            }
        }
        d
    }

    fn bi(x: i64) -> BigInt {
        BigInt::from(x)
    }

    #[test]
    fn diagonalize_random_matrices() {
        let mut rng = crate::rng::substream(11, "linalg.test");
        for _ in 0..40 {
            let m = rng.random_range(1..5usize);
            let n = rng.random_range(1..5usize);
            let a: Vec<Vec<BigInt>> = (0..m)
                .map(|_| (0..n).map(|_| bi(rng.random_range(-9..10i64))).collect())
                .collect();
            let s = unimodular_diagonalize(&a);
            // U A V = D
            let uav = matmul(&matmul(&s.u, &a), &s.v);
            assert_eq!(uav, s.d);
            // D diagonal, zero outside the rank block
            for i in 0..m {
                for j in 0..n {
                    if i != j || i >= s.rank {
                        assert!(s.d[i][j].is_zero(), "D not diagonal: {:?}", s.d);
                    } else {
                        assert!(!s.d[i][i].is_zero() && !s.d[i][i].is_negative());
                    }
                }
            }
            // unimodular transforms
            assert_eq!(det(&s.u).abs(), Rat::one());
            assert_eq!(det(&s.v).abs(), Rat::one());
        }
    }

    #[test]
    fn diagonalize_known_matrix() {
        // [[2,4],[6,8]] has |det| = 8 and entry gcd 2, so invariant factors
        // 2 and 4; any unimodular diagonal form has diagonal product 8
        let a = vec![vec![bi(2), bi(4)], vec![bi(6), bi(8)]];
        let s = unimodular_diagonalize(&a);
        assert_eq!(s.rank, 2);
        let prod = &s.d[0][0] * &s.d[1][1];
        assert_eq!(prod, bi(8));
    }

    #[test]
    fn kernel_of_simple_system() {
        // x + y + z = 0, x - z = 0 -> kernel spanned by (1, -2, 1)
        let rows = vec![
            vec![rat(1, 1), rat(1, 1), rat(1, 1)],
            vec![rat(1, 1), rat(0, 1), rat(-1, 1)],
        ];
        let basis = rational_kernel(&rows, 3);
        assert_eq!(basis.len(), 1);
        let prim = primitive_integer_vector(&basis[0]);
        assert_eq!(prim, vec![bi(1), bi(-2), bi(1)]);
    }

    #[test]
    fn kernel_members_annihilate() {
        let mut rng = crate::rng::substream(5, "linalg.kernel");
        for _ in 0..30 {
            let m = rng.random_range(1..5usize);
            let n = rng.random_range(1..6usize);
            let rows: Vec<Vec<Rat>> = (0..m)
                .map(|_| (0..n).map(|_| rat(rng.random_range(-4..5i64), 1)).collect())
                .collect();
            let basis = rational_kernel(&rows, n);
            for b in &basis {
                for row in &rows {
                    let dot: Rat = row.iter().zip(b).map(|(a, x)| a * x).sum();
                    assert!(dot.is_zero());
                }
            }
            // rank-nullity: kernel dim = n - rank
            let rank = {
                let mut copy = rows.clone();
                let mut r = 0usize;
                for c in 0..n {
                    if let Some(p) = (r..m).find(|&i| !copy[i][c].is_zero()) {
                        copy.swap(r, p);
                        for i in r + 1..m {
                            if !copy[i][c].is_zero() {
                                let f = &copy[i][c] / &copy[r][c];
                                for j in 0..n {
                                    let s = &f * &copy[r][j];
                                    copy[i][j] -= s;
                                }
                            }
                        }
                        r += 1;
                    }
                }
                r
            };
            assert_eq!(basis.len(), n - rank);
        }
    }

    #[test]
    fn zero_and_empty_kernels() {
        let basis = rational_kernel(&[], 3);
        assert_eq!(basis.len(), 3);
        let full = vec![
            vec![rat(1, 1), rat(0, 1)],
            vec![rat(0, 1), rat(1, 1)],
        ];
        assert!(rational_kernel(&full, 2).is_empty());
    }
}
