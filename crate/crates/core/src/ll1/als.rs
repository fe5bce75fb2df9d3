use nalgebra::{Cholesky, DMatrixView};

use super::init::{gevd_init, random_init};
use super::{BlockStructure, FitInfo, FitOptions, FitWarning, InitKind, Ll1Model};
use crate::error::{Error, Result};
use crate::linalg::{default_rank_tol, pseudoinverse, svd};
use crate::rng::derive_seed;
use crate::tensor::{frobenius_norm_sq, khatri_rao, unfold, DenseTensor3, Matrix, Mode};

/// Fits an LL1 model by alternating least squares.
///
/// Each restart runs until the relative cost change drops below `opts.tol`
/// or `opts.max_iter` sweeps have been made; the restart with the lowest
/// cost is returned with its blocks normalized (`A_r` orthonormal columns,
/// `‖A_r B_rᵀ‖_F = 1`, magnitude carried by `c_r`). Non-convergence is
/// reported in [`FitInfo::converged`], never as an error.
pub fn fit_ll1(t: &DenseTensor3, structure: &BlockStructure, opts: &FitOptions) -> Result<Ll1Model> {
    let [ni, nj, nk] = t.dims();
    let total = structure.total();
    if total > ni * nj {
        return Err(Error::InvalidStructure(format!(
            "sum of block ranks {total} exceeds I*J = {} for a {ni}x{nj}x{nk} tensor",
            ni * nj
        )));
    }
    if opts.restarts == 0 {
        return Err(Error::arg("restarts must be at least 1"));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::arg(format!("tol must be nonnegative, got {}", opts.tol)));
    }

    let mut warnings = Vec::new();
    let smallest = ni.min(nj).min(nk);
    let gevd_allowed = smallest >= total;
    if opts.init == InitKind::Gevd && !gevd_allowed {
        warnings.push(FitWarning::SmallestSideBelowTotalRank {
            smallest_side: smallest,
            total_rank: total,
        });
    }

    let ws = Workspace::new(t, structure);
    let mut best: Option<(AlsState, InitKind, usize)> = None;
    let mut converged_count = 0;
    let mut gevd_fallback = false;
    let mut used_pinv = false;

    for restart in 0..opts.restarts {
        let seed = derive_seed(opts.seed, &[restart as u64]);
        // The first restart honours the requested init; later ones diversify randomly.
        let want_gevd = restart == 0 && opts.init == InitKind::Gevd && gevd_allowed;
        let (start, init) = if want_gevd {
            match gevd_init(t, structure, seed) {
                Ok(m) => (m, InitKind::Gevd),
                Err(e) => {
                    gevd_fallback = true;
                    warnings.push(FitWarning::GevdFallback { reason: e.to_string() });
                    (random_init(t.dims(), structure, seed)?, InitKind::Random)
                }
            }
        } else {
            (random_init(t.dims(), structure, seed)?, InitKind::Random)
        };

        let (state, iters) = ws.run(start, opts.tol, opts.max_iter);
        used_pinv |= state.used_pinv;
        if state.converged {
            converged_count += 1;
        }
        let better = best.as_ref().map_or(true, |(b, _, _)| state.cost < b.cost);
        if better {
            best = Some((state, init, iters));
        }
    }

    let (state, init, iterations) = best.expect("restarts >= 1");
    if used_pinv {
        warnings.push(FitWarning::SingularNormalEquations);
    }
    let converged = state.converged;
    let mut model = state.into_model(structure.clone())?;
    normalize_blocks(&mut model);
    let final_cost = cost(t, &model);
    let norm = frobenius_norm_sq(t).sqrt();
    model.fit = Some(FitInfo {
        final_cost,
        relative_error: if norm > 0.0 { final_cost.sqrt() / norm } else { final_cost.sqrt() },
        iterations,
        init,
        converged,
        restarts_converged: converged_count,
        restarts: opts.restarts,
        used_pseudoinverse: used_pinv,
        gevd_fallback,
        warnings,
    });
    Ok(model)
}

/// One ALS pass: update `A`, then `B`, then `C`, each by exact least squares.
pub fn als_sweep(t: &DenseTensor3, model: &Ll1Model) -> Result<Ll1Model> {
    check_dims(t, model)?;
    let ws = Workspace::new(t, model.structure());
    let mut state = ws.state(model.clone());
    ws.sweep(&mut state);
    state.into_model(model.structure().clone())
}

/// `‖t − reconstruct(model)‖²_F`.
pub fn cost(t: &DenseTensor3, model: &Ll1Model) -> f64 {
    let x1 = DMatrixView::from_slice(t.as_slice(), t.dims()[0], t.dims()[1] * t.dims()[2]);
    let kr = khatri_rao(&model.expanded_c(), model.b()).expect("matching column counts");
    residual_sq(&x1, model.a(), &kr)
}

fn check_dims(t: &DenseTensor3, model: &Ll1Model) -> Result<()> {
    if t.dims() != model.dims() {
        return Err(Error::dim(format!(
            "model dims {:?} do not match tensor dims {:?}",
            model.dims(),
            t.dims()
        )));
    }
    Ok(())
}

/// `‖X_(1) − A · KRᵀ‖²` for `KR = (C·Ψ) ⊙ B`.
fn residual_sq(x1: &DMatrixView<'_, f64>, a: &Matrix, kr: &Matrix) -> f64 {
    let mut resid = x1.clone_owned();
    resid.gemm(-1.0, a, &kr.transpose(), 1.0);
    resid.norm_squared()
}

/// Solves `X · g = m` for symmetric positive semidefinite `g`.
///
/// Returns the solution and whether the pseudoinverse path was needed.
pub(crate) fn solve_gram(g: &Matrix, m: &Matrix) -> (Matrix, bool) {
    if let Some(ch) = Cholesky::new(g.clone()) {
        let l = ch.l_dirty();
        let diag = (0..l.nrows()).map(|i| l[(i, i)]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        if lo > 0.0 && (lo / hi).powi(2) > 1e-13 {
            let xt = ch.solve(&m.transpose());
            if xt.iter().all(|v| v.is_finite()) {
                return (xt.transpose(), false);
            }
        }
    }
    let n = g.nrows();
    match pseudoinverse(g, default_rank_tol(n, n)) {
        Ok(p) => (m * p, true),
        // all-zero or non-finite Gram: the minimum-norm solution is zero
        Err(_) => (Matrix::zeros(m.nrows(), m.ncols()), true),
    }
}

pub(crate) struct Workspace<'a> {
    x1: DMatrixView<'a, f64>,
    x2: Matrix,
    x3: Matrix,
    psi: Matrix,
    owners: Vec<usize>,
    norm_sq: f64,
}

pub(crate) struct AlsState {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    ce: Matrix,
    /// `(C·Ψ) ⊙ B` for the current factors.
    kr1: Matrix,
    pub(crate) cost: f64,
    pub(crate) used_pinv: bool,
    pub(crate) converged: bool,
    pub(crate) history: Vec<f64>,
}

impl AlsState {
    fn into_model(self, structure: BlockStructure) -> Result<Ll1Model> {
        Ll1Model::from_expanded(structure, self.a, self.b, self.c)
    }
}

impl<'a> Workspace<'a> {
    pub(crate) fn new(t: &'a DenseTensor3, structure: &BlockStructure) -> Self {
        let [ni, nj, nk] = t.dims();
        Self {
            x1: DMatrixView::from_slice(t.as_slice(), ni, nj * nk),
            x2: unfold(t, Mode::Two),
            x3: unfold(t, Mode::Three),
            psi: structure.expansion_matrix(),
            owners: structure.column_owners(),
            norm_sq: frobenius_norm_sq(t),
        }
    }

    fn expand_c(&self, c: &Matrix) -> Matrix {
        Matrix::from_fn(c.nrows(), self.owners.len(), |k, col| c[(k, self.owners[col])])
    }

    pub(crate) fn state(&self, model: Ll1Model) -> AlsState {
        let (_, a, b, c) = model.into_parts();
        let ce = self.expand_c(&c);
        let kr1 = khatri_rao(&ce, &b).expect("matching column counts");
        let cost = residual_sq(&self.x1, &a, &kr1);
        AlsState {
            a,
            b,
            c,
            ce,
            kr1,
            cost,
            used_pinv: false,
            converged: false,
            history: vec![cost],
        }
    }

    pub(crate) fn sweep(&self, st: &mut AlsState) {
        // A: X_(1) ≈ A · ((CΨ) ⊙ B)ᵀ
        let cte = st.ce.transpose() * &st.ce;
        let gram_a = cte.component_mul(&(st.b.transpose() * &st.b));
        let m1 = &self.x1 * &st.kr1;
        let (a, p) = solve_gram(&gram_a, &m1);
        st.a = a;
        st.used_pinv |= p;

        // B: X_(2) ≈ B · ((CΨ) ⊙ A)ᵀ
        let kr2 = khatri_rao(&st.ce, &st.a).expect("matching column counts");
        let ata = st.a.transpose() * &st.a;
        let gram_b = cte.component_mul(&ata);
        let m2 = &self.x2 * kr2;
        let (b, p) = solve_gram(&gram_b, &m2);
        st.b = b;
        st.used_pinv |= p;

        // C: X_(3) ≈ C · ((B ⊙ A) Ψᵀ)ᵀ, aggregating each block's columns
        let kr3 = khatri_rao(&st.b, &st.a).expect("matching column counts");
        let m3 = (&self.x3 * kr3) * self.psi.transpose();
        let gram_ab = ata.component_mul(&(st.b.transpose() * &st.b));
        let gram_c = &self.psi * gram_ab * self.psi.transpose();
        let (c, p) = solve_gram(&gram_c, &m3);
        st.c = c;
        st.used_pinv |= p;

        st.ce = self.expand_c(&st.c);
        st.kr1 = khatri_rao(&st.ce, &st.b).expect("matching column counts");
        st.cost = residual_sq(&self.x1, &st.a, &st.kr1);
        st.history.push(st.cost);
    }

    /// Iterates sweeps from `start`; returns the final state and sweep count.
    pub(crate) fn run(&self, start: Ll1Model, tol: f64, max_iter: usize) -> (AlsState, usize) {
        let mut st = self.state(start);
        // Cost at the rounding floor of the data counts as an exact fit.
        let floor = 1e-28 * self.norm_sq;
        if st.cost <= floor {
            st.converged = true;
            return (st, 0);
        }
        let mut iters = 0;
        while iters < max_iter {
            let prev = st.cost;
            self.sweep(&mut st);
            iters += 1;
            if !st.cost.is_finite() {
                break;
            }
            let change = (prev - st.cost).abs() / prev.max(f64::MIN_POSITIVE);
            if change < tol || st.cost <= floor {
                st.converged = true;
                break;
            }
        }
        (st, iters)
    }
}

/// Puts each block in a canonical representative of its indeterminacy class:
/// `A_r B_rᵀ = U Σ Vᵀ` is rewritten with `A_r = U`, `B_r = V Σ / ‖Σ‖_F` and
/// `c_r` scaled by `‖Σ‖_F`, with deterministic signs.
pub(crate) fn normalize_blocks(model: &mut Ll1Model) {
    let (structure, a, b, c) = model.parts_mut();
    for (r, (&l, off)) in structure.ranks().iter().zip(structure.offsets()).enumerate() {
        if l > a.nrows() || l > b.nrows() {
            continue;
        }
        let ar = a.columns(off, l).into_owned();
        let br = b.columns(off, l).into_owned();
        let qa = ar.qr();
        let qb = br.qr();
        let core = qa.r() * qb.r().transpose();
        let Ok(dec) = svd(&core) else {
            continue;
        };
        let sigma = &dec.singular_values;
        let s = sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(s > 0.0) || !s.is_finite() {
            continue;
        }
        let mut new_a = qa.q() * &dec.u;
        let mut new_b = qb.q() * dec.vt.transpose();
        for col in 0..l {
            new_b.column_mut(col).scale_mut(sigma[col] / s);
            let col_a = new_a.column(col);
            let pivot = col_a.iter().fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
            if pivot < 0.0 {
                new_a.column_mut(col).neg_mut();
                new_b.column_mut(col).neg_mut();
            }
        }
        let mut cr = c.column(r).into_owned() * s;
        let pivot = cr.iter().fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            cr.neg_mut();
            new_b.neg_mut();
        }
        a.columns_mut(off, l).copy_from(&new_a);
        b.columns_mut(off, l).copy_from(&new_b);
        c.column_mut(r).copy_from(&cr);
    }
}
