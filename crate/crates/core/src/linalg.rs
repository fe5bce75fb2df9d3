//! Dense factorizations: SVD, pseudoinverse, least squares and a
//! generalized eigensolver for matrix pencils.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Thin SVD `m = u · diag(singular_values) · vt` with nonincreasing singular values.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (c, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(c).scale_mut(s);
        }
        us * &self.vt
    }

    /// Number of singular values above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel_tol * smax).count()
    }
}

fn check_nonempty(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::dim(format!("{what}: empty {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what}: matrix has non-finite entries")));
    }
    Ok(())
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    check_nonempty(m, "svd")?;
    // nalgebra's bidiagonal SVD returns inaccurate vectors for exactly
    // rank-deficient inputs, so the decomposition goes through faer.
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let dec = fm
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (dec.U(), dec.S().column_vector(), dec.V());
    let k = s.nrows();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    Ok(SvdResult {
        u: Matrix::from_fn(m.nrows(), k, |i, c| u[(i, order[c])]),
        singular_values: order.iter().map(|&c| s[c]).collect(),
        vt: Matrix::from_fn(k, m.ncols(), |c, j| v[(j, order[c])]),
    })
}

/// Default relative cutoff for singular values: `1e-12 · max(rows, cols)`.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    1e-12 * rows.max(cols) as f64
}

/// Moore–Penrose pseudoinverse, discarding singular values below
/// `rank_tol · σ_max`.
pub fn pseudoinverse(m: &Matrix, rank_tol: f64) -> Result<Matrix> {
    pseudoinverse_with_rank(m, rank_tol).map(|(p, _)| p)
}

/// Pseudoinverse together with the numerical rank that was retained.
pub fn pseudoinverse_with_rank(m: &Matrix, rank_tol: f64) -> Result<(Matrix, usize)> {
    if !(rank_tol >= 0.0) {
        return Err(Error::arg(format!("rank_tol must be nonnegative, got {rank_tol}")));
    }
    let dec = svd(m)?;
    let rank = dec.rank(rank_tol);
    let mut pinv = Matrix::zeros(m.ncols(), m.nrows());
    for c in 0..rank {
        let inv = 1.0 / dec.singular_values[c];
        // pinv += v_c · u_cᵀ / σ_c
        pinv.ger(inv, &dec.vt.row(c).transpose(), &dec.u.column(c), 1.0);
    }
    Ok((pinv, rank))
}

/// Minimum-norm solution of `min ‖a·X − b‖_F`.
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "least squares: a has {} rows but b has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    check_nonempty(a, "least squares")?;
    let dec = svd(a)?;
    let rank = dec.rank(default_rank_tol(a.nrows(), a.ncols()));
    // X = V_r Σ_r⁻¹ U_rᵀ b
    let ut_b = dec.u.columns(0, rank).transpose() * b;
    let mut scaled = ut_b;
    for r in 0..rank {
        scaled.row_mut(r).scale_mut(1.0 / dec.singular_values[r]);
    }
    Ok(dec.vt.rows(0, rank).transpose() * scaled)
}

/// Generalized eigendecomposition of the pencil `(m1, m2)`.
///
/// Eigenvalue `i` is the pair `(α_i, β_i)` with `m1·v = (α/β)·m2·v`; pairs
/// are scaled to unit length with `β` real and nonnegative, so infinite
/// eigenvalues show up as `β ≈ 0`.
#[derive(Clone, Debug)]
pub struct GevdResult {
    pub eigenvalues: Vec<(Complex64, Complex64)>,
    /// Right eigenvectors, one unit-norm column per eigenvalue.
    pub eigenvectors: DMatrix<Complex64>,
}

impl GevdResult {
    /// `α/β`, or `None` when `|β| ≤ tol`.
    pub fn ratio(&self, i: usize, tol: f64) -> Option<Complex64> {
        let (a, b) = self.eigenvalues[i];
        (b.norm() > tol).then(|| a / b)
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

fn frob(m: &Matrix) -> f64 {
    m.norm()
}

fn rcond(m: &Matrix) -> f64 {
    match svd(m) {
        Ok(d) => {
            let smax = d.singular_values[0];
            if smax == 0.0 {
                0.0
            } else {
                d.singular_values[d.singular_values.len() - 1] / smax
            }
        }
        Err(_) => 0.0,
    }
}

/// Solves `m1·v = λ·m2·v`.
///
/// The pencil is first turned into an ordinary eigenproblem through the
/// shifted pencil `(m1, m2 + σ·m1)`, whose eigenvalues `μ = λ/(1 + σλ)` stay
/// finite when `m2` is singular; `λ = μ / (1 − σμ)` is recovered as the pair
/// `(μ, 1 − σμ)`. Eigenvectors come from shifted inverse iteration.
pub fn gevd(m1: &Matrix, m2: &Matrix) -> Result<GevdResult> {
    let n = m1.nrows();
    if m1.ncols() != n || m2.nrows() != n || m2.ncols() != n {
        return Err(Error::dim(format!(
            "gevd needs two square matrices of equal size, got {}x{} and {}x{}",
            m1.nrows(),
            m1.ncols(),
            m2.nrows(),
            m2.ncols()
        )));
    }
    check_nonempty(m1, "gevd")?;
    check_nonempty(m2, "gevd")?;

    let (n1, n2) = (frob(m1), frob(m2));
    if n1 == 0.0 && n2 == 0.0 {
        return Err(Error::Numerical("gevd: both pencil matrices are zero".into()));
    }
    let scale = if n1 > 0.0 { n2.max(n1 * 1e-3) / n1 } else { 1.0 };
    const SHIFTS: [f64; 6] = [0.0, 0.618_033_988_7, -1.324_717_957_2, 2.718_281_828_5, -0.414_213_562_4, 5.196_152_422_7];
    let mut best: Option<(f64, f64, Matrix)> = None;
    for &factor in &SHIFTS {
        let sigma = factor * scale;
        let shifted = m2 + m1 * sigma;
        let rc = rcond(&shifted);
        let better = best.as_ref().map_or(true, |(r, _, _)| rc > *r);
        if better {
            best = Some((rc, sigma, shifted));
        }
        if rc >= 1e-6 {
            break;
        }
    }
    let (rc, sigma, shifted) = best.expect("at least one shift tried");
    if rc < 1e-13 * n as f64 {
        return Err(Error::Numerical(format!(
            "gevd: pencil is numerically singular (reciprocal condition {rc:.3e})"
        )));
    }

    let lu = shifted.lu();
    let reduced = lu
        .solve(m1)
        .ok_or_else(|| Error::Numerical("gevd: shifted pencil could not be factorized".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6765_7664);
    let mus = eigenvalues_of(&reduced, &mut rng)?;

    let reduced_c: DMatrix<Complex64> = reduced.map(|v| Complex64::new(v, 0.0));
    let nrm = reduced.norm().max(f64::MIN_POSITIVE);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (idx, &mu) in mus.iter().enumerate() {
        let v = inverse_iteration(&reduced_c, mu, nrm, &mut rng)?;
        vectors.set_column(idx, &v);

        let alpha = mu;
        let beta = Complex64::new(1.0, 0.0) - mu * sigma;
        eigenvalues.push(normalize_pair(alpha, beta));
    }
    Ok(GevdResult {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// Eigenvalues via real Schur form. The QR iteration can stall on highly
/// structured matrices (exactly repeated eigenvalues), so on failure it is
/// rerun on random orthogonal similarity transforms.
fn eigenvalues_of(m: &Matrix, rng: &mut ChaCha8Rng) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    let max_iter = 200 * n.max(10);
    for attempt in 0..4 {
        let target = if attempt == 0 {
            m.clone()
        } else {
            let g = Matrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let q = g.qr().q();
            q.transpose() * m * q
        };
        if let Some(schur) = Schur::try_new(target, f64::EPSILON, max_iter) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::Numerical("gevd: Schur iteration did not converge".into()))
}

fn normalize_pair(alpha: Complex64, beta: Complex64) -> (Complex64, Complex64) {
    let (mut a, mut b) = (alpha, beta);
    let bn = b.norm();
    if bn > 0.0 {
        let phase = b.conj() / bn;
        a *= phase;
        b = Complex64::new(bn, 0.0);
    }
    let len = (a.norm_sqr() + b.norm_sqr()).sqrt();
    (a / len, b / len)
}

fn inverse_iteration(
    m: &DMatrix<Complex64>,
    mu: Complex64,
    nrm: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<Complex64>> {
    let n = m.nrows();
    let real = mu.im == 0.0;
    let mut x = DVector::<Complex64>::from_fn(n, |_, _| {
        let re = rng.random::<f64>() - 0.5;
        let im = if real { 0.0 } else { rng.random::<f64>() - 0.5 };
        Complex64::new(re, im)
    });
    x /= Complex64::new(x.norm(), 0.0);

    let mut delta = 1e-10 * nrm;
    for _attempt in 0..6 {
        let shift = mu + Complex64::new(delta, 0.0);
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] -= shift;
        }
        let lu = shifted.lu();
        let mut ok = true;
        let mut y = x.clone();
        for _ in 0..3 {
            match lu.solve(&y) {
                Some(z) if z.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => {
                    let zn = z.norm();
                    if zn == 0.0 {
                        ok = false;
                        break;
                    }
                    y = z / Complex64::new(zn, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(fix_phase(y));
        }
        delta *= 100.0;
    }
    Err(Error::Numerical("gevd: inverse iteration failed".into()))
}

/// Rotates a vector so its largest-magnitude component is real and positive.
fn fix_phase(v: DVector<Complex64>) -> DVector<Complex64> {
    let (mut best, mut idx) = (0.0, 0);
    for (i, c) in v.iter().enumerate() {
        if c.norm() > best {
            best = c.norm();
            idx = i;
        }
    }
    if best == 0.0 {
        return v;
    }
    let phase = v[idx].conj() / best;
    v.map(|c| c * phase)
}
