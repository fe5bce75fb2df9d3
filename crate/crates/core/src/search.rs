//! Grid search over candidate block structures, scored by core consistency.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::btd_corcondia;
use crate::error::{Error, Result};
use crate::ll1::{fit_ll1, BlockStructure, FitOptions};
use crate::rng::derive_seed;
use crate::tensor::DenseTensor3;

/// Header of the CSV report.
pub const CSV_HEADER: [&str; 6] = ["structure", "mean_pct", "sd_pct", "mean_rel_err", "repeats", "failures"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SearchSpace {
    pub max_r: usize,
    pub max_l: usize,
    /// When false, all-ones (CPD) structures are left out.
    pub include_cpd: bool,
}

impl SearchSpace {
    pub fn new(max_r: usize, max_l: usize) -> Result<Self> {
        if max_r == 0 || max_l == 0 {
            return Err(Error::arg(format!(
                "max_R and max_L must be at least 1, got {max_r} and {max_l}"
            )));
        }
        Ok(Self {
            max_r,
            max_l,
            include_cpd: true,
        })
    }
}

/// Nondecreasing structures with `1 ≤ R ≤ max_r` and `1 ≤ L_r ≤ max_l`,
/// ordered by `R`, then lexicographically.
pub fn enumerate_structures(space: &SearchSpace) -> Vec<BlockStructure> {
    fn extend(prefix: &mut Vec<usize>, len: usize, max_l: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        let lo = prefix.last().copied().unwrap_or(1);
        for l in lo..=max_l {
            prefix.push(l);
            extend(prefix, len, max_l, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for r in 1..=space.max_r {
        extend(&mut Vec::with_capacity(r), r, space.max_l, &mut out);
    }
    out.into_iter()
        .map(|ranks| BlockStructure::new(ranks).expect("ranks are positive"))
        .filter(|s| space.include_cpd || !s.is_cpd())
        .collect()
}

/// One fit+diagnose cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trial {
    pub seed: u64,
    pub converged: bool,
    /// Absent when the fit errored.
    pub consistency_pct: Option<f64>,
    pub relative_error: Option<f64>,
}

impl Trial {
    fn counts(&self) -> bool {
        self.converged && self.consistency_pct.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub structure: BlockStructure,
    /// Mean over converged trials; absent if none converged.
    pub mean_pct: Option<f64>,
    pub sd_pct: Option<f64>,
    pub mean_relative_error: Option<f64>,
    pub repeats: usize,
    pub failures: usize,
    pub trials: Vec<Trial>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedCandidate {
    pub structure: BlockStructure,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ReportRow>,
    pub skipped: Vec<SkippedCandidate>,
}

impl ConsistencyReport {
    pub fn top(&self) -> Option<&ReportRow> {
        self.rows.first()
    }

    pub fn row(&self, structure: &BlockStructure) -> Option<&ReportRow> {
        self.rows.iter().find(|r| &r.structure == structure)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(CSV_HEADER).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            out.write_record([
                row.structure.to_string(),
                opt(row.mean_pct),
                opt(row.sd_pct),
                opt(row.mean_relative_error),
                row.repeats.to_string(),
                row.failures.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    (Some(mean), Some(sd))
}

/// Ranking used for the report.
///
/// Means are compared at the two decimals the report is read at. Among
/// ties the larger model wins (larger `ΣLr`, then larger `R`): any
/// single-block model scores exactly 100% once ALS has converged, so
/// preferring the smaller model on a tie would always pick a single block.
/// Rows without a mean come last.
pub fn compare_rows(a: &ReportRow, b: &ReportRow) -> Ordering {
    let key = |r: &ReportRow| r.mean_pct.map(|m| (m * 100.0).round() as i64);
    match (key(a), key(b)) {
        (Some(x), Some(y)) => y.cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then_with(|| b.structure.total().cmp(&a.structure.total()))
    .then_with(|| b.structure.num_blocks().cmp(&a.structure.num_blocks()))
    .then_with(|| a.structure.ranks().cmp(b.structure.ranks()))
}

fn run_trial(t: &DenseTensor3, structure: &BlockStructure, opts: &FitOptions) -> Trial {
    let outcome = fit_ll1(t, structure, opts).and_then(|model| {
        let info = model.fit.clone().expect("fit_ll1 records fit info");
        let pct = btd_corcondia(t, &model)?.percentage;
        Ok((info, pct))
    });
    match outcome {
        Ok((info, pct)) => Trial {
            seed: opts.seed,
            converged: info.converged,
            consistency_pct: Some(pct),
            relative_error: Some(info.relative_error),
        },
        Err(_) => Trial {
            seed: opts.seed,
            converged: false,
            consistency_pct: None,
            relative_error: None,
        },
    }
}

/// Fits every candidate `repeats` times and ranks them by mean consistency.
///
/// Trial `(candidate, repeat)` uses seed `derive_seed(seed, [candidate,
/// repeat])`, with `candidate` the index in [`enumerate_structures`]
/// order, so results do not depend on thread count. `fit_opts.seed` is
/// ignored.
pub fn grid_search(
    t: &DenseTensor3,
    space: &SearchSpace,
    repeats: usize,
    seed: u64,
    fit_opts: &FitOptions,
) -> Result<ConsistencyReport> {
    if repeats == 0 {
        return Err(Error::arg("repeats must be at least 1"));
    }
    let [ni, nj, _] = t.dims();
    let mut skipped = Vec::new();
    let mut cells = Vec::new();
    let mut candidates = Vec::new();
    for (idx, s) in enumerate_structures(space).into_iter().enumerate() {
        if s.total() > ni * nj {
            skipped.push(SkippedCandidate {
                reason: format!("sum(Lr) = {} exceeds I*J = {}", s.total(), ni * nj),
                structure: s,
            });
            continue;
        }
        let slot = candidates.len();
        for rep in 0..repeats {
            cells.push((slot, derive_seed(seed, &[idx as u64, rep as u64])));
        }
        candidates.push(s);
    }

    let trials: Vec<Trial> = cells
        .par_iter()
        .map(|&(slot, cell_seed)| {
            let opts = FitOptions {
                seed: cell_seed,
                ..fit_opts.clone()
            };
            run_trial(t, &candidates[slot], &opts)
        })
        .collect();

    let mut rows: Vec<ReportRow> = candidates
        .into_iter()
        .zip(trials.chunks(repeats))
        .map(|(structure, trials)| {
            let good: Vec<&Trial> = trials.iter().filter(|tr| tr.counts()).collect();
            let pcts: Vec<f64> = good.iter().filter_map(|tr| tr.consistency_pct).collect();
            let errs: Vec<f64> = good.iter().filter_map(|tr| tr.relative_error).collect();
            let (mean_pct, sd_pct) = mean_sd(&pcts);
            ReportRow {
                structure,
                mean_pct,
                sd_pct,
                mean_relative_error: mean_sd(&errs).0,
                repeats,
                failures: repeats - good.len(),
                trials: trials.to_vec(),
            }
        })
        .collect();
    rows.sort_by(compare_rows);
    Ok(ConsistencyReport { rows, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranks(v: &[BlockStructure]) -> Vec<Vec<usize>> {
        v.iter().map(|s| s.ranks().to_vec()).collect()
    }

    #[test]
    fn small_enumerations() {
        let s = SearchSpace::new(1, 3).unwrap();
        assert_eq!(ranks(&enumerate_structures(&s)), vec![vec![1], vec![2], vec![3]]);
        let s = SearchSpace::new(2, 2).unwrap();
        assert_eq!(
            ranks(&enumerate_structures(&s)),
            vec![vec![1], vec![2], vec![1, 1], vec![1, 2], vec![2, 2]]
        );
        let no_cpd = SearchSpace {
            include_cpd: false,
            ..s
        };
        assert_eq!(ranks(&enumerate_structures(&no_cpd)), vec![vec![2], vec![1, 2], vec![2, 2]]);
        assert!(SearchSpace::new(0, 2).is_err());
    }

    #[test]
    fn mean_and_sd() {
        assert_eq!(mean_sd(&[]), (None, None));
        assert_eq!(mean_sd(&[3.0]), (Some(3.0), Some(0.0)));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    fn row(ranks: &[usize], mean: Option<f64>) -> ReportRow {
        ReportRow {
            structure: BlockStructure::new(ranks.to_vec()).unwrap(),
            mean_pct: mean,
            sd_pct: mean.map(|_| 0.0),
            mean_relative_error: None,
            repeats: 1,
            failures: usize::from(mean.is_none()),
            trials: vec![],
        }
    }

    #[test]
    fn ordering() {
        let mut rows = vec![
            row(&[1], Some(100.0)),
            row(&[3], None),
            row(&[2, 2], Some(99.999)),
            row(&[1, 1], Some(50.0)),
            row(&[4], Some(100.0)),
            row(&[1, 3], Some(99.996)),
        ];
        rows.sort_by(compare_rows);
        let order: Vec<String> = rows.iter().map(|r| r.structure.to_string()).collect();
        assert_eq!(order, ["[1,3]", "[2,2]", "[4]", "[1]", "[1,1]", "[3]"]);
    }

    #[test]
    fn csv_layout() {
        let report = ConsistencyReport {
            rows: vec![row(&[1, 3], Some(93.45)), row(&[2], None)],
            skipped: vec![],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "structure,mean_pct,sd_pct,mean_rel_err,repeats,failures");
        assert_eq!(lines[1], "\"[1,3]\",93.45,0,,1,0");
        assert_eq!(lines[2], "[2],,,,1,1");
    }
}
