//! Rank-(Lr, Lr, 1) block term decomposition.
//!
//! A model with block ranks `(L₁, …, L_R)` represents
//!
//! ```text
//! X ≈ Σ_r (A_r · B_rᵀ) ∘ c_r
//! ```
//!
//! with `A_r: I × L_r`, `B_r: J × L_r` and `c_r` of length `K`. The blocks
//! are stored side by side as the expanded factors `A = [A₁ … A_R]`
//! (`I × ΣLr`), `B` likewise and `C = [c₁ … c_R]` (`K × R`), which is also
//! the Tucker layout `X ≈ G ×₁ A ×₂ B ×₃ C` used by the diagnostics.

mod als;
mod init;

pub use als::{als_sweep, cost, fit_ll1};
pub use init::{gevd_init, random_init};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrixView, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor3, Matrix};

/// Ordered block ranks `(L₁, …, L_R)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockStructure {
    ranks: Vec<usize>,
}

impl BlockStructure {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidStructure("at least one block is required".into()));
        }
        if let Some(pos) = ranks.iter().position(|&l| l == 0) {
            return Err(Error::InvalidStructure(format!(
                "block {} has rank 0; every block rank must be ≥ 1",
                pos + 1
            )));
        }
        Ok(Self { ranks })
    }

    /// All-ones structure of `r` blocks, i.e. a rank-`r` CPD.
    pub fn cpd(r: usize) -> Result<Self> {
        Self::new(vec![1; r])
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Number of blocks `R`.
    pub fn num_blocks(&self) -> usize {
        self.ranks.len()
    }

    /// `ΣLr`.
    pub fn total(&self) -> usize {
        self.ranks.iter().sum()
    }

    /// Column offset of each block in the expanded factors, `Σ_{s<r} L_s`.
    pub fn offsets(&self) -> Vec<usize> {
        self.ranks
            .iter()
            .scan(0, |acc, &l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect()
    }

    pub fn is_cpd(&self) -> bool {
        self.ranks.iter().all(|&l| l == 1)
    }

    /// Nondecreasing reordering; block order is an indeterminacy of the model.
    pub fn canonical(&self) -> Self {
        let mut ranks = self.ranks.clone();
        ranks.sort_unstable();
        Self { ranks }
    }

    pub fn is_canonical(&self) -> bool {
        self.ranks.windows(2).all(|w| w[0] <= w[1])
    }

    /// Block index owning each expanded column.
    pub fn column_owners(&self) -> Vec<usize> {
        self.ranks
            .iter()
            .enumerate()
            .flat_map(|(r, &l)| std::iter::repeat_n(r, l))
            .collect()
    }

    /// `R × ΣLr` indicator with a one where column `c` belongs to block `r`.
    pub fn expansion_matrix(&self) -> Matrix {
        let owners = self.column_owners();
        Matrix::from_fn(self.num_blocks(), self.total(), |r, c| {
            if owners[c] == r {
                1.0
            } else {
                0.0
            }
        })
    }
}

impl TryFrom<Vec<usize>> for BlockStructure {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BlockStructure> for Vec<usize> {
    fn from(s: BlockStructure) -> Self {
        s.ranks
    }
}

impl fmt::Display for BlockStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, l) in self.ranks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "]")
    }
}

impl FromStr for BlockStructure {
    type Err = Error;

    /// Accepts `1,3`, `[1,3]` or whitespace-separated ranks.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
        let ranks = inner
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::InvalidStructure(format!("not a block rank: {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranks)
    }
}

/// How a fit was initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Gevd,
    Random,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Gevd => "gevd",
            InitKind::Random => "random",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gevd" => Ok(InitKind::Gevd),
            "random" => Ok(InitKind::Random),
            other => Err(Error::arg(format!("unknown init kind {other:?} (expected gevd or random)"))),
        }
    }
}

/// Non-fatal conditions recorded during a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FitWarning {
    /// `min(I, J, K) < ΣLr`: GEVD initialization is not applicable.
    SmallestSideBelowTotalRank { smallest_side: usize, total_rank: usize },
    /// GEVD initialization failed and a random start was used instead.
    GevdFallback { reason: String },
    /// A normal-equation system was singular and solved by pseudoinverse.
    SingularNormalEquations,
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::SmallestSideBelowTotalRank {
                smallest_side,
                total_rank,
            } => write!(
                f,
                "smallest tensor side {smallest_side} is below the total block rank {total_rank}; \
                 gevd initialization needs min(I,J,K) >= sum(Lr), using random initialization"
            ),
            FitWarning::GevdFallback { reason } => {
                write!(f, "gevd initialization failed ({reason}); using random initialization")
            }
            FitWarning::SingularNormalEquations => {
                write!(f, "singular normal equations were solved by pseudoinverse")
            }
        }
    }
}

/// Outcome of [`fit_ll1`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    /// `‖X − X̂‖²_F` of the returned model.
    pub final_cost: f64,
    /// `‖X − X̂‖_F / ‖X‖_F`.
    pub relative_error: f64,
    pub iterations: usize,
    pub init: InitKind,
    pub converged: bool,
    /// Restarts (including the returned one) that met the tolerance.
    pub restarts_converged: usize,
    pub restarts: usize,
    pub used_pseudoinverse: bool,
    pub gevd_fallback: bool,
    pub warnings: Vec<FitWarning>,
}

/// Options for [`fit_ll1`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative cost change below which the fit counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Independent starts; the lowest final cost is kept.
    pub restarts: usize,
    pub init: InitKind,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            restarts: 5,
            init: InitKind::Gevd,
            seed: 0,
        }
    }
}

/// Fitted (or generated) LL1 factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Ll1Model {
    structure: BlockStructure,
    a: Matrix,
    b: Matrix,
    c: Matrix,
    pub fit: Option<FitInfo>,
}

impl Ll1Model {
    /// Builds a model from expanded factors `A: I × ΣLr`, `B: J × ΣLr`, `C: K × R`.
    pub fn from_expanded(structure: BlockStructure, a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let (s, r) = (structure.total(), structure.num_blocks());
        if a.ncols() != s || b.ncols() != s || c.ncols() != r {
            return Err(Error::dim(format!(
                "factor shapes {}x{}, {}x{}, {}x{} do not match structure {structure} \
                 (need {s}, {s} and {r} columns)",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        if a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
            return Err(Error::dim("factor matrices must have at least one row"));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("factor {name}")));
            }
        }
        Ok(Self {
            structure,
            a,
            b,
            c,
            fit: None,
        })
    }

    /// Builds a model from per-block `(A_r, B_r, c_r)`.
    pub fn from_blocks(structure: BlockStructure, blocks: &[(Matrix, Matrix, Vec<f64>)]) -> Result<Self> {
        if blocks.len() != structure.num_blocks() {
            return Err(Error::dim(format!(
                "{} blocks supplied for structure {structure}",
                blocks.len()
            )));
        }
        let (ni, nj, nk) = (blocks[0].0.nrows(), blocks[0].1.nrows(), blocks[0].2.len());
        let (s, r) = (structure.total(), structure.num_blocks());
        let mut a = Matrix::zeros(ni, s);
        let mut b = Matrix::zeros(nj, s);
        let mut c = Matrix::zeros(nk, r);
        for (idx, ((ar, br, cr), (&l, off))) in blocks
            .iter()
            .zip(structure.ranks().iter().zip(structure.offsets()))
            .enumerate()
        {
            if ar.shape() != (ni, l) || br.shape() != (nj, l) || cr.len() != nk {
                return Err(Error::dim(format!(
                    "block {} has shapes {:?}, {:?}, {} but {ni}x{l}, {nj}x{l}, {nk} were expected",
                    idx + 1,
                    ar.shape(),
                    br.shape(),
                    cr.len()
                )));
            }
            a.columns_mut(off, l).copy_from(ar);
            b.columns_mut(off, l).copy_from(br);
            for (k, &v) in cr.iter().enumerate() {
                c[(k, idx)] = v;
            }
        }
        Self::from_expanded(structure, a, b, c)
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// `(I, J, K)` implied by the factor row counts.
    pub fn dims(&self) -> [usize; 3] {
        [self.a.nrows(), self.b.nrows(), self.c.nrows()]
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn block_a(&self, r: usize) -> DMatrixView<'_, f64> {
        let off = self.structure.offsets()[r];
        self.a.columns(off, self.structure.ranks()[r])
    }

    pub fn block_b(&self, r: usize) -> DMatrixView<'_, f64> {
        let off = self.structure.offsets()[r];
        self.b.columns(off, self.structure.ranks()[r])
    }

    pub fn block_c(&self, r: usize) -> DVectorView<'_, f64> {
        self.c.column(r)
    }

    /// Expanded `C·Ψ`: column `c` of `C` repeated once per column of its block.
    pub fn expanded_c(&self) -> Matrix {
        let owners = self.structure.column_owners();
        Matrix::from_fn(self.c.nrows(), owners.len(), |k, col| self.c[(k, owners[col])])
    }

    pub(crate) fn into_parts(self) -> (BlockStructure, Matrix, Matrix, Matrix) {
        (self.structure, self.a, self.b, self.c)
    }

    pub(crate) fn parts_mut(&mut self) -> (&BlockStructure, &mut Matrix, &mut Matrix, &mut Matrix) {
        (&self.structure, &mut self.a, &mut self.b, &mut self.c)
    }
}

/// Expanded Tucker-form factors `(A, B, C)`; `C` has one column per block.
pub fn expand_factors(model: &Ll1Model) -> (Matrix, Matrix, Matrix) {
    (model.a.clone(), model.b.clone(), model.c.clone())
}

/// `Σ_r (A_r B_rᵀ) ∘ c_r`.
pub fn reconstruct(model: &Ll1Model) -> DenseTensor3 {
    let [ni, nj, nk] = model.dims();
    let mut data = vec![0.0; ni * nj * nk];
    for r in 0..model.structure.num_blocks() {
        let slab = model.block_a(r) * model.block_b(r).transpose();
        let cr = model.block_c(r);
        for k in 0..nk {
            let ck = cr[k];
            if ck == 0.0 {
                continue;
            }
            let out = &mut data[ni * nj * k..ni * nj * (k + 1)];
            for (o, &v) in out.iter_mut().zip(slab.as_slice()) {
                *o += ck * v;
            }
        }
    }
    DenseTensor3::from_raw([ni, nj, nk], data)
}

/// Reconstruction as a sum of `ΣLr` rank-one terms `a_{r,l} ∘ b_{r,l} ∘ c_r`.
pub fn reconstruct_rank_one(model: &Ll1Model) -> DenseTensor3 {
    let [ni, nj, nk] = model.dims();
    let owners = model.structure.column_owners();
    let mut data = vec![0.0; ni * nj * nk];
    for (col, &r) in owners.iter().enumerate() {
        for k in 0..nk {
            let ck = model.c[(k, r)];
            for j in 0..nj {
                let bjc = model.b[(j, col)] * ck;
                for i in 0..ni {
                    data[i + ni * (j + nj * k)] += model.a[(i, col)] * bjc;
                }
            }
        }
    }
    DenseTensor3::from_raw([ni, nj, nk], data)
}
