use abelia_core::dist::{rat, Alphabet, TripleDist};
use abelia_core::embed::EmbeddingTriple;
use abelia_core::extremal::{
    additive_base_constant, group_linearity_correlation, relaxed_base_profile,
    three_wise_correlation, CorrelationFrame,
};
use abelia_core::group::AbelianGroup;
use abelia_core::tensor::TensorFunction;
use num_complex::Complex64;

fn identity3() -> Vec<Vec<u64>> {
    (0..3u64).map(|v| vec![v]).collect()
}

fn split_fiber() -> (TripleDist, EmbeddingTriple) {
    let x = Alphabet::of(["A", "B", "1", "2"]);
    let y = Alphabet::numbered(3);
    let z = Alphabet::numbered(3);
    let mut atoms = Vec::new();
    for yy in 0..3usize {
        for zz in 0..3usize {
            let s = (6 - yy - zz) % 3;
            let xi = match s {
                0 => usize::from(yy == 2),
                v => v + 1,
            };
            atoms.push(([xi, yy, zz], rat(1, 9)));
        }
    }
    let d = TripleDist::new([x, y, z], atoms).unwrap();
    let emb = EmbeddingTriple {
        group: AbelianGroup::cyclic(3),
        maps: [
            vec![vec![0], vec![0], vec![1], vec![2]],
            identity3(),
            identity3(),
        ],
    };
    (d, emb)
}

fn paired_fiber() -> (TripleDist, EmbeddingTriple) {
    let x = Alphabet::of(["A", "B", "1", "2"]);
    let y = Alphabet::of(["0a", "0b", "1", "2"]);
    let z = Alphabet::numbered(3);
    let gam: [usize; 4] = [0, 0, 1, 2];
    let mut atoms = Vec::new();
    for yy in 0..4usize {
        for zz in 0..3usize {
            let s = (6 - gam[yy] - zz) % 3;
            let xi = match s {
                0 => yy % 2,
                v => v + 1,
            };
            atoms.push([xi, yy, zz]);
        }
    }
    let d = TripleDist::uniform_on([x, y, z], &atoms).unwrap();
    let emb = EmbeddingTriple {
        group: AbelianGroup::cyclic(3),
        maps: [
            vec![vec![0], vec![0], vec![1], vec![2]],
            gam.iter().map(|&v| vec![v as u64]).collect(),
            identity3(),
        ],
    };
    (d, emb)
}

fn main() {
    // 1. degree-(1,1,1) tier bound and pair bound on the split-fiber dist
    let (d, emb) = split_fiber();
    let frame = CorrelationFrame::new(&d, &emb, Some(&[0, 1])).unwrap();
    let beta = frame.estimate_beta(1, 1, 1, 16, 2024).unwrap();
    let delta = frame.estimate_delta(1, 1, 16, 11).unwrap();
    println!("beta(1,1,1)  = {:.9}  (expect 0.408248290)", beta.value);
    println!("delta(1,1)   = {:.9}  (expect 0.816496581)", delta.value);
    println!("beta report json: {}", beta.to_json());

    // 2. additive base constant with witnesses
    let ab = additive_base_constant(&d, &emb).unwrap();
    println!("additive base c = {:.9}", ab.value);
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, p) in d.atoms() {
        let p = p.numer().to_string().parse::<f64>().unwrap()
            / p.denom().to_string().parse::<f64>().unwrap();
        acc += p
            * ab.x_witness.values()[k[0]]
            * (ab.y_witness.values()[k[1]] + ab.z_witness.values()[k[2]]);
    }
    println!("additive pairing |E[f(g+h)]| = {:.9} (should match c)", acc.norm());

    // 3. relaxed profile on the paired-fiber dist: 1.0 at tau=0, strictly
    //    decreasing, closed-form endpoint 1/sqrt(2)
    let (pd, pemb) = paired_fiber();
    let taus = [0.0, 1.5, 3.0, 4.5, 6.0];
    let prof = relaxed_base_profile(&pd, &pemb, &[0, 1], &taus, 12, 21).unwrap();
    for p in &prof {
        println!("tau={:>3.1}  value={:.6}  infeasible={}", p.tau, p.value, p.infeasible);
    }

    // 4. character-sum identity for correlations of group functions
    let g3 = AbelianGroup::cyclic(3);
    let f = TensorFunction::new(
        1,
        vec![1.0 / 3.0; 3],
        vec![
            Complex64::new(0.3, 0.1),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.2, -0.4),
        ],
    )
    .unwrap();
    let (lhs, rhs) = group_linearity_correlation(&g3, &f, &f, &f).unwrap();
    println!("group identity lhs={:.9e} rhs={:.9e} diff={:.3e}", lhs.norm(), rhs.norm(), (lhs - rhs).norm());

    // 5. probe: invalid degree order must be rejected, not silently clamped
    match frame.estimate_beta(1, 0, 1, 4, 1) {
        Err(e) => println!("probe dp>d rejected: {e}"),
        Ok(_) => println!("probe dp>d WRONGLY ACCEPTED"),
    }
    // 6. probe: mismatched shapes in the correlation functional
    let bad = TensorFunction::constant(1, vec![0.2; 5], Complex64::new(1.0, 0.0)).unwrap();
    match three_wise_correlation(&d, &bad, &ab.y_witness, &ab.z_witness) {
        Err(e) => println!("probe shape mismatch rejected: {e}"),
        Ok(_) => println!("probe shape mismatch WRONGLY ACCEPTED"),
    }
}
