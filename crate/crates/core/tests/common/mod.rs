//! Independent reference implementations used as test oracles. They work
//! from explicit index loops and dense Kronecker systems, sharing no code
//! with the library beyond its data types.
#![allow(dead_code)]

use btdcorcondia::ll1::{BlockStructure, Ll1Model};
use btdcorcondia::tensor::{DenseTensor3, Matrix};
use nalgebra::{DMatrix, DVector};

pub fn structure(ranks: &[usize]) -> BlockStructure {
    BlockStructure::new(ranks.to_vec()).unwrap()
}

fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

fn vec_of(t: &DenseTensor3) -> DVector<f64> {
    let [ni, nj, nk] = t.dims();
    DVector::from_fn(ni * nj * nk, |idx, _| {
        let (i, j, k) = (idx % ni, (idx / ni) % nj, idx / (ni * nj));
        t.get(i, j, k)
    })
}

/// Minimum-norm solution of `vec(X) = (C ⊗ B ⊗ A) vec(G)`.
pub fn kronecker_core(t: &DenseTensor3, m: &Ll1Model) -> DenseTensor3 {
    let big = kron(m.c(), &kron(m.b(), m.a()));
    let pinv = big.pseudo_inverse(1e-12).unwrap();
    let g = pinv * vec_of(t);
    let s = m.structure().total();
    DenseTensor3::new([s, s, m.structure().num_blocks()], g.as_slice().to_vec()).unwrap()
}

/// Classic CORCONDIA of a CPD model: `100·(1 − Σ(g_def − t_def)² / R)`
/// with `t` the superdiagonal identity. Not capped.
pub fn classic_corcondia(t: &DenseTensor3, m: &Ll1Model) -> f64 {
    assert!(m.structure().is_cpd());
    let g = kronecker_core(t, m);
    let r = m.structure().num_blocks();
    let mut ssq = 0.0;
    for f in 0..r {
        for e in 0..r {
            for d in 0..r {
                let target = if d == e && e == f { 1.0 } else { 0.0 };
                ssq += (g.get(d, e, f) - target).powi(2);
            }
        }
    }
    100.0 * (1.0 - ssq / r as f64)
}

fn unfold(t: &DenseTensor3, mode: usize) -> Matrix {
    let [ni, nj, nk] = t.dims();
    match mode {
        0 => DMatrix::from_fn(ni, nj * nk, |i, c| t.get(i, c % nj, c / nj)),
        1 => DMatrix::from_fn(nj, ni * nk, |j, c| t.get(c % ni, j, c / ni)),
        _ => DMatrix::from_fn(nk, ni * nj, |k, c| t.get(c % ni, c / ni, k)),
    }
}

/// Column-wise Kronecker product with the second factor varying fastest.
fn khatri_rao(outer: &Matrix, inner: &Matrix) -> Matrix {
    let n = inner.nrows();
    DMatrix::from_fn(outer.nrows() * n, outer.ncols(), |row, c| outer[(row / n, c)] * inner[(row % n, c)])
}

/// Reconstruction after `sweeps` textbook CPD-ALS sweeps (A, then B, then C).
pub fn cpd_als_reconstruction(t: &DenseTensor3, init: &Ll1Model, sweeps: usize) -> DenseTensor3 {
    assert!(init.structure().is_cpd());
    let (mut a, mut b, mut c) = (init.a().clone(), init.b().clone(), init.c().clone());
    let (x1, x2, x3) = (unfold(t, 0), unfold(t, 1), unfold(t, 2));
    let solve = |rhs: Matrix, gram: Matrix| -> Matrix { rhs * gram.pseudo_inverse(1e-14).unwrap() };
    for _ in 0..sweeps {
        a = solve(&x1 * khatri_rao(&c, &b), (c.transpose() * &c).component_mul(&(b.transpose() * &b)));
        b = solve(&x2 * khatri_rao(&c, &a), (c.transpose() * &c).component_mul(&(a.transpose() * &a)));
        c = solve(&x3 * khatri_rao(&b, &a), (b.transpose() * &b).component_mul(&(a.transpose() * &a)));
    }
    let [ni, nj, nk] = t.dims();
    DenseTensor3::from_fn([ni, nj, nk], |i, j, k| (0..a.ncols()).map(|r| a[(i, r)] * b[(j, r)] * c[(k, r)]).sum())
        .unwrap()
}
