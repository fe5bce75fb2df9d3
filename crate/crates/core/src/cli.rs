//! Command-line interface.
//!
//! Exit codes: 0 on success, 2 for invalid input (flags, files, shapes),
//! 3 for numerical failure including a fit where no restart converged.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datagen::{apply_block_transform, generate, random_block_transforms, snr_sweep, SimSpec};
use crate::diagnostics::btd_corcondia;
use crate::error::{Error, Result};
use crate::io::{load_model, load_tensor, save_model, save_tensor, write_tensor};
use crate::ll1::{fit_ll1, BlockStructure, FitOptions, InitKind};
use crate::search::{grid_search, SearchSpace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "btdcorcondia", version, about = "Core consistency diagnostics for LL1 block term decompositions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic tensor and its ground-truth model (written to `<out>.model`).
    Simulate(SimulateArgs),
    /// Fit an LL1 model to a tensor.
    Decompose(DecomposeArgs),
    /// Compute the core consistency of a model on a tensor.
    Diagnose(DiagnoseArgs),
    /// Rank candidate block structures by mean core consistency.
    Search(SearchArgs),
    /// Consistency of noise-perturbed ground-truth factors over a list of SNRs.
    SweepSnr(SweepArgs),
    /// Apply random block transforms that leave the reconstruction unchanged.
    Transform(TransformArgs),
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("not a dimension: {t:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [i, j, k] if i > 0 && j > 0 && k > 0 => Ok([i, j, k]),
        _ => Err(format!("expected three positive sizes I,J,K, got {s:?}")),
    }
}

fn parse_structure(s: &str) -> std::result::Result<BlockStructure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_init(s: &str) -> std::result::Result<InitKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Tensor size as I,J,K.
    #[arg(long, value_parser = parse_dims)]
    pub dims: [usize; 3],
    /// Block ranks, e.g. 2,2,2,2.
    #[arg(long = "L", value_parser = parse_structure)]
    pub structure: BlockStructure,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add Gaussian noise at this SNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// gevd or random.
    #[arg(long, default_value = "gevd", value_parser = parse_init)]
    pub init: InitKind,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
}

impl FitArgs {
    fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            restarts: self.restarts,
            init: self.init,
            seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "L", value_parser = parse_structure)]
    pub structure: BlockStructure,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Also write the computed core in tensor format.
    #[arg(long)]
    pub dump_core: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "max-R")]
    pub max_r: usize,
    #[arg(long = "max-L")]
    pub max_l: usize,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON report with per-trial scores.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Leave out all-ones (CPD) structures.
    #[arg(long)]
    pub no_cpd: bool,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_parser = parse_dims)]
    pub dims: [usize; 3],
    #[arg(long = "L", value_parser = parse_structure)]
    pub structure: BlockStructure,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated SNR values in dB, strictly increasing or decreasing.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub snr_list: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest condition number of the drawn transforms.
    #[arg(long, default_value_t = 1e4)]
    pub max_cond: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Path of the ground-truth model written next to a simulated tensor.
pub fn truth_model_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".model");
    PathBuf::from(s)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

/// Runs a parsed command, writing reports to `out` and warnings to `err`.
/// Returns the process exit code.
pub fn run<W: Write, E: Write>(cli: Cli, out: &mut W, err: &mut E) -> i32 {
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch<W: Write, E: Write>(cmd: Command, out: &mut W, err: &mut E) -> Result<i32> {
    match cmd {
        Command::Simulate(a) => simulate(a, out),
        Command::Decompose(a) => decompose(a, out, err),
        Command::Diagnose(a) => diagnose(a, out, err),
        Command::Search(a) => search(a, out),
        Command::SweepSnr(a) => sweep(a, out),
        Command::Transform(a) => transform(a, out),
    }
}

fn simulate<W: Write>(a: SimulateArgs, out: &mut W) -> Result<i32> {
    let spec = SimSpec {
        dims: a.dims,
        structure: a.structure,
        seed: a.seed,
        snr_db: a.snr,
    };
    let (t, truth) = generate(&spec)?;
    save_tensor(&t, &a.out)?;
    let model_path = truth_model_path(&a.out);
    save_model(&truth, &model_path)?;
    writeln!(out, "tensor {}", a.out.display())?;
    writeln!(out, "model {}", model_path.display())?;
    Ok(EXIT_OK)
}

fn decompose<W: Write, E: Write>(a: DecomposeArgs, out: &mut W, err: &mut E) -> Result<i32> {
    let t = load_tensor(&a.input)?;
    let model = fit_ll1(&t, &a.structure, &a.fit.options(a.seed))?;
    let info = model.fit.clone().expect("fit_ll1 records fit info");
    for w in &info.warnings {
        writeln!(err, "warning: {w}")?;
    }
    save_model(&model, &a.out)?;
    writeln!(out, "structure {}", model.structure())?;
    writeln!(out, "cost {:e}", info.final_cost)?;
    writeln!(out, "relative_error {:e}", info.relative_error)?;
    writeln!(out, "iterations {}", info.iterations)?;
    writeln!(out, "init {}", info.init)?;
    writeln!(out, "converged {}", info.converged)?;
    writeln!(out, "restarts_converged {}/{}", info.restarts_converged, info.restarts)?;
    if info.restarts_converged == 0 {
        writeln!(err, "error: no restart converged within {} iterations", a.fit.max_iter)?;
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

fn diagnose<W: Write, E: Write>(a: DiagnoseArgs, out: &mut W, err: &mut E) -> Result<i32> {
    let t = load_tensor(&a.input)?;
    let model = load_model(&a.model)?;
    let res = btd_corcondia(&t, &model)?;
    if res.core.rank_deficient {
        writeln!(err, "warning: a factor matrix is rank deficient; the minimum-norm core was used")?;
    }
    if let Some(path) = &a.dump_core {
        write_tensor(&res.core.values, File::create(path)?)?;
    }
    writeln!(out, "{:.2}", res.percentage)?;
    writeln!(out, "exact {:e}", res.percentage)?;
    Ok(EXIT_OK)
}

fn search<W: Write>(a: SearchArgs, out: &mut W) -> Result<i32> {
    let t = load_tensor(&a.input)?;
    let space = SearchSpace {
        include_cpd: !a.no_cpd,
        ..SearchSpace::new(a.max_r, a.max_l)?
    };
    let opts = a.fit.options(a.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        if n == 0 {
            return Err(Error::arg("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| grid_search(&t, &space, a.repeats, a.seed, &opts))?;
    report.write_csv(File::create(&a.out)?)?;
    if let Some(path) = &a.json {
        std::fs::write(path, report.to_json()?)?;
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    writeln!(out, "{:<16} {:>9} {:>8} {:>9}", "structure", "mean_pct", "sd_pct", "failures")?;
    for row in report.rows.iter().take(10) {
        writeln!(
            out,
            "{:<16} {:>9} {:>8} {:>9}",
            row.structure.to_string(),
            fmt(row.mean_pct),
            fmt(row.sd_pct),
            row.failures
        )?;
    }
    for s in &report.skipped {
        writeln!(out, "skipped {}: {}", s.structure, s.reason)?;
    }
    Ok(EXIT_OK)
}

fn sweep<W: Write>(a: SweepArgs, out: &mut W) -> Result<i32> {
    let spec = SimSpec::new(a.dims, a.structure, a.seed);
    let result = snr_sweep(&spec, &a.snr_list)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in &result.rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    for row in &result.rows {
        writeln!(out, "{:>8} dB  {:>8.2}", row.snr_db, row.consistency_pct)?;
    }
    Ok(EXIT_OK)
}

fn transform<W: Write>(a: TransformArgs, out: &mut W) -> Result<i32> {
    let model = load_model(&a.model)?;
    let fs = random_block_transforms(model.structure(), a.seed, a.max_cond)?;
    let mut transformed = apply_block_transform(&model, &fs)?;
    transformed.fit = model.fit.clone();
    save_model(&transformed, &a.out)?;
    writeln!(out, "model {}", a.out.display())?;
    Ok(EXIT_OK)
}
