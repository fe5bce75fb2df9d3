//! Synthetic LL1 tensors with known ground truth, SNR-calibrated noise and
//! the block-transform indeterminacy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::diagnostics::btd_corcondia;
use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::ll1::{random_init, reconstruct, BlockStructure, Ll1Model};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::{frobenius_norm_sq, DenseTensor3, Matrix};

const STREAM_FACTORS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SWEEP: u64 = 3;
const STREAM_TRANSFORM: u64 = 4;

/// Largest condition number accepted by [`apply_block_transform`].
pub const MAX_TRANSFORM_COND: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct SimSpec {
    pub dims: [usize; 3],
    pub structure: BlockStructure,
    pub seed: u64,
    /// Noise level added to the tensor; `None` for a noiseless tensor.
    pub snr_db: Option<f64>,
}

impl SimSpec {
    pub fn new(dims: [usize; 3], structure: BlockStructure, seed: u64) -> Self {
        Self {
            dims,
            structure,
            seed,
            snr_db: None,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = Some(snr_db);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::dim(format!("dims must be positive, got {:?}", self.dims)));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::arg(format!("snr_db must be finite, got {snr}")));
            }
        }
        Ok(())
    }
}

/// Standard-normal ground-truth factors and their tensor, plus noise when
/// `spec.snr_db` is set. Pure function of `spec`.
pub fn generate(spec: &SimSpec) -> Result<(DenseTensor3, Ll1Model)> {
    spec.validate()?;
    let truth = random_init(spec.dims, &spec.structure, derive_seed(spec.seed, &[STREAM_FACTORS]))?;
    let clean = reconstruct(&truth);
    let tensor = match spec.snr_db {
        Some(snr) => add_noise(&clean, snr, derive_seed(spec.seed, &[STREAM_NOISE]))?,
        None => clean,
    };
    Ok((tensor, truth))
}

fn gaussian(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Noise amplitude giving `10·log₁₀(signal/noise) = snr_db`.
fn noise_norm(signal_norm_sq: f64, snr_db: f64) -> f64 {
    (signal_norm_sq / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// `t + n` with i.i.d. Gaussian `n` rescaled so the SNR is exactly `snr_db`.
pub fn add_noise(t: &DenseTensor3, snr_db: f64, seed: u64) -> Result<DenseTensor3> {
    if !snr_db.is_finite() {
        return Err(Error::arg(format!("snr_db must be finite, got {snr_db}; omit noise instead")));
    }
    let signal = frobenius_norm_sq(t);
    if signal == 0.0 {
        return Err(Error::arg("SNR is undefined for a zero tensor"));
    }
    let mut rng = rng_for(seed, &[]);
    let raw = gaussian(t.len(), &mut rng);
    let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = noise_norm(signal, snr_db) / raw_norm;
    let data = t.as_slice().iter().zip(&raw).map(|(x, n)| x + scale * n).collect();
    DenseTensor3::new(t.dims(), data)
}

/// Measured SNR in dB of `noisy` against `clean`.
pub fn measured_snr_db(clean: &DenseTensor3, noisy: &DenseTensor3) -> Result<f64> {
    let noise = frobenius_norm_sq(&noisy.sub(clean)?);
    Ok(10.0 * (frobenius_norm_sq(clean) / noise).log10())
}

/// Replaces `A_r → A_r F_r` and `B_r → B_r F_r⁻ᵀ`, which leaves every
/// `A_r B_rᵀ` and hence the reconstruction unchanged.
pub fn apply_block_transform(model: &Ll1Model, transforms: &[Matrix]) -> Result<Ll1Model> {
    let structure = model.structure();
    if transforms.len() != structure.num_blocks() {
        return Err(Error::dim(format!(
            "{} transforms supplied for {} blocks",
            transforms.len(),
            structure.num_blocks()
        )));
    }
    let mut a = model.a().clone();
    let mut b = model.b().clone();
    for (r, (f, (&l, off))) in transforms
        .iter()
        .zip(structure.ranks().iter().zip(structure.offsets()))
        .enumerate()
    {
        if f.shape() != (l, l) {
            return Err(Error::dim(format!(
                "transform {} is {}x{} but block {} has rank {l}",
                r + 1,
                f.nrows(),
                f.ncols(),
                r + 1
            )));
        }
        let cond = condition_number(f)?;
        if !(cond <= MAX_TRANSFORM_COND) {
            return Err(Error::arg(format!(
                "transform {} is singular or ill-conditioned (condition number {cond:.3e} > {MAX_TRANSFORM_COND:e})",
                r + 1
            )));
        }
        let inv_t = f
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::arg(format!("transform {} is singular", r + 1)))?
            .transpose();
        let ar = a.columns(off, l) * f;
        let br = b.columns(off, l) * inv_t;
        a.columns_mut(off, l).copy_from(&ar);
        b.columns_mut(off, l).copy_from(&br);
    }
    Ll1Model::from_expanded(structure.clone(), a, b, model.c().clone())
}

pub fn condition_number(m: &Matrix) -> Result<f64> {
    let s = svd(m)?.singular_values;
    let smin = s[s.len() - 1];
    Ok(if smin == 0.0 { f64::INFINITY } else { s[0] / smin })
}

/// Gaussian `L_r × L_r` transforms, redrawn until each has condition number
/// at most `max_cond`.
pub fn random_block_transforms(structure: &BlockStructure, seed: u64, max_cond: f64) -> Result<Vec<Matrix>> {
    if !(max_cond >= 1.0) {
        return Err(Error::arg(format!("max_cond must be at least 1, got {max_cond}")));
    }
    let mut rng = rng_for(seed, &[STREAM_TRANSFORM]);
    structure
        .ranks()
        .iter()
        .map(|&l| {
            for _ in 0..10_000 {
                let f = Matrix::from_vec(l, l, gaussian(l * l, &mut rng));
                if condition_number(&f)? <= max_cond {
                    return Ok(f);
                }
            }
            Err(Error::Numerical(format!(
                "could not draw a {l}x{l} transform with condition number <= {max_cond}"
            )))
        })
        .collect()
}

/// Adds Gaussian noise at `snr_db` to each expanded factor matrix.
pub fn perturb_factors(model: &Ll1Model, snr_db: f64, seed: u64) -> Result<Ll1Model> {
    if !snr_db.is_finite() {
        return Err(Error::arg(format!("snr_db must be finite, got {snr_db}")));
    }
    let mut rng = rng_for(seed, &[]);
    let mut noisy = |m: &Matrix| {
        let raw = Matrix::from_vec(m.nrows(), m.ncols(), gaussian(m.len(), &mut rng));
        let signal = m.norm_squared();
        if signal == 0.0 {
            return m.clone();
        }
        m + raw.scale(noise_norm(signal, snr_db) / raw.norm())
    };
    let (a, b, c) = (noisy(model.a()), noisy(model.b()), noisy(model.c()));
    Ll1Model::from_expanded(model.structure().clone(), a, b, c)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub consistency_pct: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Noise-on-factors sweep: for each SNR the ground-truth factors are
/// perturbed and scored against the clean tensor. `spec.snr_db` is ignored.
pub fn snr_sweep(spec: &SimSpec, snr_points: &[f64]) -> Result<SweepResult> {
    if snr_points.is_empty() {
        return Err(Error::arg("snr_points must not be empty"));
    }
    if let Some(bad) = snr_points.iter().find(|v| !v.is_finite()) {
        return Err(Error::arg(format!("SNR points must be finite, got {bad}")));
    }
    let increasing = snr_points.windows(2).all(|w| w[0] < w[1]);
    let decreasing = snr_points.windows(2).all(|w| w[0] > w[1]);
    if !(increasing || decreasing) {
        return Err(Error::arg("SNR points must be strictly increasing or strictly decreasing"));
    }
    let clean_spec = SimSpec {
        snr_db: None,
        ..spec.clone()
    };
    let (clean, truth) = generate(&clean_spec)?;
    let norm = frobenius_norm_sq(&clean).sqrt();
    let rows = snr_points
        .iter()
        .enumerate()
        .map(|(idx, &snr)| {
            let noisy = perturb_factors(&truth, snr, derive_seed(spec.seed, &[STREAM_SWEEP, idx as u64]))?;
            let pct = btd_corcondia(&clean, &noisy)?.percentage;
            let err = frobenius_norm_sq(&reconstruct(&noisy).sub(&clean)?).sqrt() / norm;
            Ok(SweepRow {
                snr_db: snr,
                consistency_pct: pct,
                relative_error: err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}
