use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrixView, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::als::solve_gram;
use super::{BlockStructure, Ll1Model};
use crate::error::{Error, Result};
use crate::linalg::{gevd, svd, GevdResult};
use crate::rng::rng_for;
use crate::tensor::{unfold, DenseTensor3, Matrix, Mode};

/// Standard-normal factors drawn from a seeded stream.
pub fn random_init(dims: [usize; 3], structure: &BlockStructure, seed: u64) -> Result<Ll1Model> {
    let mut rng = rng_for(seed, &[0x72_61_6e_64]);
    let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (s, r) = (structure.total(), structure.num_blocks());
    let a = draw(dims[0], s);
    let b = draw(dims[1], s);
    let c = draw(dims[2], r);
    Ll1Model::from_expanded(structure.clone(), a, b, c)
}

/// Initial factors from the generalized eigendecomposition of two random
/// mode-3 pseudo-slices.
///
/// The tensor is compressed to the dominant `ΣLr`-dimensional subspaces of
/// modes 1 and 2, the pencil of the compressed slices `(Y₁, Y₂)` is solved,
/// and its eigenvectors are grouped into blocks: eigenvalues are placed on
/// the projective circle, cut at their widest gap, and split into
/// consecutive runs whose sizes are the block ranks in the arrangement with
/// the least within-run spread. `C` then follows from one least-squares step.
pub fn gevd_init(t: &DenseTensor3, structure: &BlockStructure, seed: u64) -> Result<Ll1Model> {
    let [ni, nj, nk] = t.dims();
    let total = structure.total();
    if total > ni.min(nj) {
        return Err(Error::InvalidStructure(format!(
            "gevd initialization needs min(I,J) >= sum of block ranks, got min({ni},{nj}) < {total}"
        )));
    }
    if nk < 2 {
        return Err(Error::dim("gevd initialization needs K >= 2"));
    }

    let x1 = DMatrixView::from_slice(t.as_slice(), ni, nj * nk);
    let u = dominant_subspace(&(&x1 * x1.transpose()), total);
    let x2 = unfold(t, Mode::Two);
    let v = dominant_subspace(&(&x2 * x2.transpose()), total);

    let mut rng = rng_for(seed, &[0x67_65_76_64]);
    let mut unit = || {
        let w = DVector::from_fn(nk, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = w.norm();
        w / n
    };
    let (w1, w2) = (unit(), unit());
    let slices = DMatrixView::from_slice(t.as_slice(), ni * nj, nk);
    let pseudo = |w: &DVector<f64>| {
        let y = slices * w;
        Matrix::from_column_slice(ni, nj, y.as_slice())
    };
    let s1 = u.transpose() * pseudo(&w1) * &v;
    let s2 = u.transpose() * pseudo(&w2) * &v;

    let dec = gevd(&s1, &s2)?;
    let runs = group_eigenvalues(&dec, structure.ranks());

    // Real basis for each block's eigenspace, in structure order.
    let mut w = Matrix::zeros(total, total);
    for ((idxs, &l), off) in runs.iter().zip(structure.ranks()).zip(structure.offsets()) {
        let mut parts = Matrix::zeros(total, 2 * l);
        for (n, &i) in idxs.iter().enumerate() {
            for row in 0..total {
                let z = dec.eigenvectors[(row, i)];
                parts[(row, n)] = z.re;
                parts[(row, l + n)] = z.im;
            }
        }
        let basis = svd(&parts)?;
        w.columns_mut(off, l).copy_from(&basis.u.columns(0, l));
    }
    let sv = svd(&w)?.singular_values;
    if sv[total - 1] <= 1e-12 * sv[0] {
        return Err(Error::Numerical("gevd initialization: eigenvector basis is singular".into()));
    }
    let w_inv = w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("gevd initialization: eigenvector basis is singular".into()))?;

    // S₁·W = Ã·blockdiag(d_r M_r) and W⁻ᵀ = B̃·blockdiag(M_r)⁻ᵀ
    let b_small = w_inv.transpose();
    let (a1, a2) = (&s1 * &w, &s2 * &w);
    let mut a_small = Matrix::zeros(total, total);
    for (&l, off) in structure.ranks().iter().zip(structure.offsets()) {
        let (p, q) = (a1.columns(off, l), a2.columns(off, l));
        let pick = if p.norm() >= q.norm() { p } else { q };
        a_small.columns_mut(off, l).copy_from(&pick);
    }
    let a = &u * a_small;
    let b = &v * b_small;

    let c = solve_c(t, structure, &a, &b);
    Ll1Model::from_expanded(structure.clone(), a, b, c)
}

fn dominant_subspace(gram: &Matrix, k: usize) -> Matrix {
    let eig = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..gram.nrows()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    Matrix::from_fn(gram.nrows(), k, |r, c| eig.eigenvectors[(r, order[c])])
}

/// Least-squares `C` for fixed `A`, `B`.
fn solve_c(t: &DenseTensor3, structure: &BlockStructure, a: &Matrix, b: &Matrix) -> Matrix {
    let psi = structure.expansion_matrix();
    let x3 = unfold(t, Mode::Three);
    let kr = crate::tensor::khatri_rao(b, a).expect("matching column counts");
    let m3 = (x3 * kr) * psi.transpose();
    let gram = &psi * (a.transpose() * a).component_mul(&(b.transpose() * b)) * psi.transpose();
    solve_gram(&gram, &m3).0
}

/// Assigns eigenvalue indices to blocks; entry `r` lists block `r`'s indices.
fn group_eigenvalues(dec: &GevdResult, ranks: &[usize]) -> Vec<Vec<usize>> {
    let n = dec.len();
    // λ = α/β with β ≥ 0 real: map Re λ onto the circle via 2·atan2(Re α, β).
    let mut pts: Vec<(f64, usize)> = dec
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, (a, b))| (2.0 * a.re.atan2(b.re), i))
        .collect();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    // Cut the circle at its widest gap so no run wraps around.
    let mut cut = 0;
    let mut widest = f64::NEG_INFINITY;
    for p in 0..n {
        let next = (p + 1) % n;
        let mut gap = pts[next].0 - pts[p].0;
        if next == 0 {
            gap += 2.0 * PI;
        }
        if gap > widest {
            widest = gap;
            cut = next;
        }
    }
    let mut seq: Vec<(f64, usize)> = Vec::with_capacity(n);
    for p in 0..n {
        let idx = (cut + p) % n;
        let (mut x, i) = pts[idx];
        if idx < cut {
            x += 2.0 * PI;
        }
        seq.push((x, i));
    }

    let sizes = best_run_sizes(&seq.iter().map(|p| p.0).collect::<Vec<_>>(), ranks);

    // Hand runs of size L to the blocks of rank L in order of appearance.
    let mut pending: HashMap<usize, Vec<usize>> = HashMap::new();
    for (r, &l) in ranks.iter().enumerate().rev() {
        pending.entry(l).or_default().push(r);
    }
    let mut out = vec![Vec::new(); ranks.len()];
    let mut pos = 0;
    for l in sizes {
        let r = pending.get_mut(&l).and_then(|v| v.pop()).expect("sizes are a permutation of ranks");
        out[r] = seq[pos..pos + l].iter().map(|p| p.1).collect();
        pos += l;
    }
    out
}

/// Orders the block ranks along the sorted eigenvalue sequence so that the
/// total within-run sum of squared deviations is minimal.
fn best_run_sizes(xs: &[f64], ranks: &[usize]) -> Vec<usize> {
    let mut values: Vec<usize> = ranks.to_vec();
    values.sort_unstable();
    values.dedup();
    let counts: Vec<usize> = values.iter().map(|v| ranks.iter().filter(|&&r| r == *v).count()).collect();

    let mut s1 = vec![0.0; xs.len() + 1];
    let mut s2 = vec![0.0; xs.len() + 1];
    for (i, &x) in xs.iter().enumerate() {
        s1[i + 1] = s1[i] + x;
        s2[i + 1] = s2[i] + x * x;
    }
    let spread = |p: usize, q: usize| {
        let n = (q - p) as f64;
        let s = s1[q] - s1[p];
        (s2[q] - s2[p] - s * s / n).max(0.0)
    };

    fn solve(
        remaining: &mut Vec<usize>,
        pos: usize,
        values: &[usize],
        spread: &dyn Fn(usize, usize) -> f64,
        memo: &mut HashMap<Vec<usize>, (f64, usize)>,
    ) -> f64 {
        if remaining.iter().all(|&c| c == 0) {
            return 0.0;
        }
        if let Some(&(c, _)) = memo.get(remaining) {
            return c;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for vi in 0..values.len() {
            if remaining[vi] == 0 {
                continue;
            }
            let l = values[vi];
            remaining[vi] -= 1;
            let c = spread(pos, pos + l) + solve(remaining, pos + l, values, spread, memo);
            remaining[vi] += 1;
            if c < best.0 {
                best = (c, vi);
            }
        }
        memo.insert(remaining.clone(), best);
        best.0
    }

    let mut memo = HashMap::new();
    let mut remaining = counts;
    solve(&mut remaining, 0, &values, &spread, &mut memo);

    let mut sizes = Vec::with_capacity(ranks.len());
    let mut pos = 0;
    while remaining.iter().any(|&c| c > 0) {
        let vi = memo[&remaining].1;
        sizes.push(values[vi]);
        pos += values[vi];
        remaining[vi] -= 1;
    }
    debug_assert_eq!(pos, xs.len());
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ll1::{als::Workspace, cost, reconstruct};
    use crate::tensor::frobenius_norm_sq;

    fn truth(dims: [usize; 3], ranks: &[usize], seed: u64) -> Ll1Model {
        random_init(dims, &BlockStructure::new(ranks.to_vec()).unwrap(), seed).unwrap()
    }

    #[test]
    fn run_sizes_follow_clusters() {
        // clusters of sizes 3, 1, 2 along the line
        let xs = [0.0, 0.01, 0.02, 1.0, 2.0, 2.01];
        assert_eq!(best_run_sizes(&xs, &[1, 2, 3]), vec![3, 1, 2]);
        assert_eq!(best_run_sizes(&xs[..4], &[1, 3]), vec![3, 1]);
        assert_eq!(best_run_sizes(&[0.0, 0.5], &[1, 1]), vec![1, 1]);
    }

    #[test]
    fn rejects_total_rank_above_small_side() {
        let m = truth([4, 6, 6], &[2, 3], 1);
        let t = reconstruct(&m);
        assert!(matches!(gevd_init(&t, m.structure(), 0), Err(Error::InvalidStructure(_))));
        let m = truth([6, 6, 1], &[2], 1);
        assert!(gevd_init(&reconstruct(&m), m.structure(), 0).is_err());
    }

    #[test]
    fn exact_cpd_converges_quickly_from_gevd() {
        let m = truth([7, 8, 9], &[1, 1], 2);
        let t = reconstruct(&m);
        let init = gevd_init(&t, m.structure(), 5).unwrap();
        let ws = Workspace::new(&t, m.structure());
        let (st, iters) = ws.run(init, 1e-8, 50);
        assert!(iters <= 50);
        assert!((st.cost / frobenius_norm_sq(&t)).sqrt() < 1e-8);
    }

    #[test]
    fn exact_ll1_init_is_essentially_exact() {
        let m = truth([9, 10, 11], &[2, 3], 3);
        let t = reconstruct(&m);
        let init = gevd_init(&t, m.structure(), 6).unwrap();
        let rel = (cost(&t, &init) / frobenius_norm_sq(&t)).sqrt();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn gevd_beats_median_random_init() {
        let m = truth([9, 10, 11], &[2, 3], 4);
        let t = reconstruct(&m);
        let g = cost(&t, &gevd_init(&t, m.structure(), 7).unwrap());
        let mut r: Vec<f64> = (0..20)
            .map(|s| cost(&t, &random_init(t.dims(), m.structure(), 100 + s).unwrap()))
            .collect();
        r.sort_by(f64::total_cmp);
        let median = 0.5 * (r[9] + r[10]);
        assert!(g < median, "gevd {g} vs median {median}");
    }
}
