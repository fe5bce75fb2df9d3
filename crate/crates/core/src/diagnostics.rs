//! Core consistency of a fitted LL1 model.
//!
//! The Tucker core `G` relating the data to the expanded factors is
//! compared with the ideal block-diagonal core `II`, whose slice `r` holds
//! an `L_r × L_r` identity at offset `Σ_{s<r} L_s`:
//!
//! ```text
//! consistency = min(100, (1 − ‖II − G‖² / ‖II‖²) · 100)
//! ```
//!
//! With all `L_r = 1` the ideal core is the superdiagonal identity and the
//! value is the classic CPD core consistency.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{default_rank_tol, pseudoinverse_with_rank};
use crate::ll1::{BlockStructure, Ll1Model};
use crate::tensor::{frobenius_norm_sq, mode_n_product, DenseTensor3, Mode};

/// Least-squares Tucker core, `ΣLr × ΣLr × R`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreTensor {
    pub values: DenseTensor3,
    pub structure: BlockStructure,
    /// Set when an expanded factor lacked full column rank and the
    /// minimum-norm core was used.
    pub rank_deficient: bool,
}

impl CoreTensor {
    pub fn new(values: DenseTensor3, structure: BlockStructure) -> Result<Self> {
        let expected = core_dims(&structure);
        if values.dims() != expected {
            return Err(Error::dim(format!(
                "core dims {:?} do not match structure {structure} (expected {expected:?})",
                values.dims()
            )));
        }
        Ok(Self {
            values,
            structure,
            rank_deficient: false,
        })
    }
}

/// The 0/1 block-diagonal target core.
#[derive(Clone, Debug, PartialEq)]
pub struct IdealCore {
    pub values: DenseTensor3,
    pub structure: BlockStructure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyResult {
    /// At most 100, possibly negative.
    pub percentage: f64,
    pub core: CoreTensor,
    pub structure: BlockStructure,
}

/// Serializable summary of a [`ConsistencyResult`].
#[derive(Clone, Debug, Serialize)]
pub struct ConsistencySummary {
    pub structure: BlockStructure,
    pub percentage: f64,
    pub rank_deficient: bool,
}

impl ConsistencyResult {
    pub fn summary(&self) -> ConsistencySummary {
        ConsistencySummary {
            structure: self.structure.clone(),
            percentage: self.percentage,
            rank_deficient: self.core.rank_deficient,
        }
    }
}

fn core_dims(structure: &BlockStructure) -> [usize; 3] {
    let s = structure.total();
    [s, s, structure.num_blocks()]
}

pub fn ideal_core(structure: &BlockStructure) -> IdealCore {
    let dims = core_dims(structure);
    let s = dims[0];
    let mut data = vec![0.0; s * s * dims[2]];
    for (r, (&l, off)) in structure.ranks().iter().zip(structure.offsets()).enumerate() {
        for d in off..off + l {
            data[d + s * (d + s * r)] = 1.0;
        }
    }
    IdealCore {
        values: DenseTensor3::from_raw(dims, data),
        structure: structure.clone(),
    }
}

/// `G = t ×₁ A⁺ ×₂ B⁺ ×₃ C⁺` for the expanded factors of `model`.
///
/// Because `(C ⊗ B ⊗ A)⁺ = C⁺ ⊗ B⁺ ⊗ A⁺`, applying the factor
/// pseudoinverses mode by mode gives the minimum-norm least-squares core
/// whether or not the factors have full column rank.
pub fn compute_core(t: &DenseTensor3, model: &Ll1Model) -> Result<CoreTensor> {
    if t.dims() != model.dims() {
        return Err(Error::dim(format!(
            "model dims {:?} do not match tensor dims {:?}",
            model.dims(),
            t.dims()
        )));
    }
    let mut rank_deficient = false;
    let mut g = t.clone();
    for (factor, mode) in [(model.a(), Mode::One), (model.b(), Mode::Two), (model.c(), Mode::Three)] {
        let (rows, cols) = factor.shape();
        let (pinv, rank) = pseudoinverse_with_rank(factor, default_rank_tol(rows, cols))?;
        rank_deficient |= rank < cols;
        g = mode_n_product(&g, &pinv, mode)?;
    }
    Ok(CoreTensor {
        values: g,
        structure: model.structure().clone(),
        rank_deficient,
    })
}

/// Core consistency percentage of a computed core against its ideal core.
pub fn consistency(core: &CoreTensor) -> ConsistencyResult {
    let ideal = ideal_core(&core.structure);
    let dev: f64 = ideal
        .values
        .as_slice()
        .iter()
        .zip(core.values.as_slice())
        .map(|(i, g)| (i - g) * (i - g))
        .sum();
    let denom = frobenius_norm_sq(&ideal.values);
    let raw = (1.0 - dev / denom) * 100.0;
    let percentage = if raw.is_nan() { f64::NEG_INFINITY } else { raw.min(100.0) };
    ConsistencyResult {
        percentage,
        core: core.clone(),
        structure: core.structure.clone(),
    }
}

/// Core consistency of `model` on `t`.
pub fn btd_corcondia(t: &DenseTensor3, model: &Ll1Model) -> Result<ConsistencyResult> {
    Ok(consistency(&compute_core(t, model)?))
}
