//! The four experiment commands.

use std::path::Path;

use clap::Subcommand;
use heatsc::cache::DecompositionCache;
use heatsc::geometry::{ManifoldKind, ModelManifold};
use heatsc::parametrix::{Coefficients, Parametrix};
use heatsc::partition::{
    classical_integral, constants_grid, corollary_row, empirical_constant, fit_heat_coefficients,
    gt_upper_bound, partition_row, phase_space_factor, ConstantsGridRow, HeatFit, PartitionRow,
};
use heatsc::regression::log_log_slope;
use heatsc::spectral::{build_oracle_cached, SpectralDecomposition, SpectralMode};
use heatsc::{BoundConstants, PartitionReport, Point, SemiclassicalOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{opt, write_csv, write_json};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Parametrix error against the spectral oracle across the hbar grid.
    Expand,
    /// Quantum and classical partition functions and heat-coefficient fits.
    Partition,
    /// Explicit upper bounds and the ratio comparison.
    Bound,
    /// Eigenvalue listing of the oracle.
    Oracle,
}

/// Result of a command: whether its acceptance rule passed, a one-line
/// summary, and the JSON report that was written.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
    pub report: serde_json::Value,
}

pub fn run_command(cmd: Command, cfg: &ExperimentConfig, selfcheck: bool) -> Result<Outcome, CliError> {
    match cmd {
        Command::Expand => cmd_expand(cfg),
        Command::Partition => cmd_partition(cfg),
        Command::Bound => cmd_bound(cfg),
        Command::Oracle => cmd_oracle(cfg, selfcheck),
    }
}

fn open_cache(cfg: &ExperimentConfig) -> Result<Option<DecompositionCache>, CliError> {
    Ok(match &cfg.oracle.cache_dir {
        Some(dir) => Some(DecompositionCache::new(dir)?),
        None => None,
    })
}

fn oracle_at(
    op: &SemiclassicalOperator,
    cfg: &ExperimentConfig,
    cache: Option<&DecompositionCache>,
    hbar: f64,
) -> Result<SpectralDecomposition, CliError> {
    Ok(build_oracle_cached(op, hbar, cfg.t, cfg.oracle.cutoff, cache)?)
}

fn finish(cfg: &ExperimentConfig, pass: bool, summary: String, report: &impl Serialize) -> Result<Outcome, CliError> {
    write_json(&cfg.output.dir, "report.json", report)?;
    Ok(Outcome {
        pass,
        summary,
        report: serde_json::to_value(report)?,
    })
}

/// Least-squares order of an error sequence in `hbar`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub quantity: String,
    pub hbar: Vec<f64>,
    pub error: Vec<f64>,
    /// `None` when every error is below the noise floor.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub stderr: Option<f64>,
    /// Guaranteed rate `2N + 1 - 2n`.
    pub theoretical_slope: f64,
    /// Rate suggested by the leading residual term, `2N + 2 - n`.
    pub expected_slope: f64,
    pub pass: bool,
    pub note: String,
}

impl ConvergenceFit {
    pub fn new(quantity: &str, hbar: Vec<f64>, error: Vec<f64>, theoretical: f64, expected: f64, floor: f64) -> Self {
        let (hs, es): (Vec<f64>, Vec<f64>) = hbar
            .iter()
            .zip(&error)
            .filter(|(_, e)| **e > floor)
            .map(|(h, e)| (*h, *e))
            .unzip();
        let mut fit = ConvergenceFit {
            quantity: quantity.into(),
            hbar,
            error,
            slope: None,
            intercept: None,
            stderr: None,
            theoretical_slope: theoretical,
            expected_slope: expected,
            pass: true,
            note: String::new(),
        };
        if hs.len() < 2 {
            fit.note = format!("errors below the noise floor {floor:e}; fit skipped");
            return fit;
        }
        match log_log_slope(&hs, &es) {
            Ok(s) => {
                fit.slope = Some(s.slope);
                fit.intercept = Some(s.intercept);
                fit.stderr = Some(s.stderr);
                fit.pass = s.slope >= theoretical - 0.25;
                if hs.len() < fit.hbar.len() {
                    fit.note = format!("{} points below the noise floor excluded", fit.hbar.len() - hs.len());
                }
            }
            Err(e) => {
                fit.pass = false;
                fit.note = e.to_string();
            }
        }
        fit
    }
}

fn random_point(m: &ModelManifold, rng: &mut ChaCha8Rng) -> Point {
    match m.kind() {
        ManifoldKind::RoundSphere => {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            Point::on_sphere(s * phi.cos(), s * phi.sin(), z).expect("unit vector")
        }
        _ => {
            let a: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            Point::angles(&a)
        }
    }
}

/// `diagonal` points `(y, y)` and `near` pairs with `d(x, y) < eta/2`.
pub fn sample_pairs(m: &ModelManifold, eta: f64, diagonal: usize, near: usize, seed: u64) -> Vec<(Point, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(diagonal + near);
    for _ in 0..diagonal {
        let y = random_point(m, &mut rng);
        out.push((y.clone(), y));
    }
    for _ in 0..near {
        let y = random_point(m, &mut rng);
        let mut dir: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
        let r = 0.5 * eta * rng.random_range(0.02..0.98);
        dir.iter_mut().for_each(|c| *c *= r / norm);
        out.push((m.exp_normal(&y, &dir), y));
    }
    out
}

#[derive(Serialize)]
struct ExpandReport<'a> {
    command: &'static str,
    seed: u64,
    t: f64,
    order: usize,
    dim: usize,
    eta: f64,
    samples: usize,
    mode: Vec<SpectralMode>,
    fit: &'a ConvergenceFit,
}

fn cmd_expand(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let op = cfg.operator()?;
    let m = op.manifold();
    let p = Parametrix::new(&op, cfg.parametrix.clone())?;
    let pairs = sample_pairs(m, p.eta(), cfg.expand.diagonal, cfg.expand.near_diagonal, cfg.seed);
    let coefficients: Vec<Coefficients> = pairs
        .par_iter()
        .map(|(x, y)| p.coefficients(x, y, cfg.t))
        .collect::<heatsc::Result<_>>()?;
    let cache = open_cache(cfg)?;
    let grid = cfg.hbar_grid.values()?;
    let per_hbar: Vec<(f64, SpectralMode)> = grid
        .par_iter()
        .map(|&h| {
            let sd = oracle_at(&op, cfg, cache.as_ref(), h)?;
            let mut worst: f64 = 0.0;
            for ((x, y), c) in pairs.iter().zip(&coefficients) {
                let k = sd.heat_kernel(x, y, cfg.t)?;
                let khat = c.evaluate(h)?.khat;
                worst = worst.max((k - khat).amax());
            }
            Ok((worst, sd.mode()))
        })
        .collect::<Result<_, CliError>>()?;
    let n = m.dim() as f64;
    let order = cfg.parametrix.order as f64;
    let fit = ConvergenceFit::new(
        "sup |k - khat|",
        grid.clone(),
        per_hbar.iter().map(|e| e.0).collect(),
        2.0 * order + 1.0 - 2.0 * n,
        2.0 * order + 2.0 - n,
        cfg.expand.noise_floor,
    );

    let dir = &cfg.output.dir;
    let rows: Vec<Vec<String>> = grid
        .iter()
        .zip(&fit.error)
        .map(|(h, e)| vec![h.to_string(), e.to_string()])
        .collect();
    write_csv(dir, "expand.csv", &["hbar", "error"], &rows)?;
    let mut phi_rows = Vec::new();
    for (i, ((x, y), c)) in pairs.iter().zip(&coefficients).enumerate() {
        for (j, phi) in c.phi.iter().enumerate() {
            for r in 0..phi.nrows() {
                for s in 0..phi.ncols() {
                    phi_rows.push(vec![
                        i.to_string(),
                        format!("{:?}", x.coords()),
                        format!("{:?}", y.coords()),
                        cfg.t.to_string(),
                        j.to_string(),
                        r.to_string(),
                        s.to_string(),
                        phi[(r, s)].to_string(),
                    ]);
                }
            }
        }
    }
    write_csv(
        dir,
        "phi.csv",
        &["sample", "x", "y", "t", "j", "entry_row", "entry_col", "value"],
        &phi_rows,
    )?;
    let report = ExpandReport {
        command: "expand",
        seed: cfg.seed,
        t: cfg.t,
        order: cfg.parametrix.order,
        dim: m.dim(),
        eta: p.eta(),
        samples: pairs.len(),
        mode: per_hbar.iter().map(|e| e.1).collect(),
        fit: &fit,
    };
    let summary = format!(
        "expand: slope {} (floor {}, expected {}), pass = {}",
        opt(fit.slope.map(|s| format!("{s:.3}"))),
        fit.theoretical_slope,
        fit.expected_slope,
        fit.pass
    );
    finish(cfg, fit.pass, summary, &report)
}

fn bound_constants(cfg: &ExperimentConfig, op: &SemiclassicalOperator) -> Result<BoundConstants, CliError> {
    let b = &cfg.bound;
    let derived = BoundConstants::for_operator(op, b.alpha, b.delta)?;
    Ok(BoundConstants::new(
        b.alpha,
        b.delta,
        b.kappa.unwrap_or(derived.kappa),
        b.w0.unwrap_or(derived.w0),
        b.curvature_bound.unwrap_or(derived.curvature_bound),
        derived.dim,
    )?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    pub fit: Option<HeatFit>,
    pub status: String,
}

#[derive(Serialize)]
struct PartitionOutput<'a> {
    command: &'static str,
    #[serde(flatten)]
    report: &'a PartitionReport,
    a0: f64,
    mode: Vec<SpectralMode>,
    t_sweep: Vec<SweepRow>,
    constants_grid: Vec<ConstantsGridRow>,
}

fn sweep_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let k = cfg.partition.t_sweep.max(1);
    if k == 1 || cfg.t_max == cfg.t {
        return vec![cfg.t];
    }
    (0..k)
        .map(|i| cfg.t + (cfg.t_max - cfg.t) * i as f64 / (k as f64 - 1.0))
        .collect()
}

fn cmd_partition(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let op = cfg.operator()?;
    let bc = bound_constants(cfg, &op)?;
    let cache = open_cache(cfg)?;
    let grid = cfg.hbar_grid.values()?;
    let times = sweep_times(cfg);
    let a0 = classical_integral(&op, cfg.t)?;
    // traces at later sweep times reuse the decomposition sized for t
    let per_hbar: Vec<(PartitionRow, Vec<f64>, SpectralMode)> = grid
        .par_iter()
        .map(|&h| {
            let sd = oracle_at(&op, cfg, cache.as_ref(), h)?;
            let row = partition_row(&op, &sd, &bc, cfg.t, h, a0)?;
            let traces = times.iter().map(|s| sd.trace(*s)).collect::<heatsc::Result<Vec<_>>>()?;
            Ok((row, traces, sd.mode()))
        })
        .collect::<Result<_, CliError>>()?;
    let rows: Vec<PartitionRow> = per_hbar.iter().map(|r| r.0.clone()).collect();
    let report = PartitionReport::from_rows(
        cfg.t,
        op.dim(),
        rows,
        bc.clone(),
        cfg.partition.fit_order,
        cfg.partition.fit_window,
    )?;
    let window = cfg.partition.fit_window;
    let t_sweep = times
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let samples: Vec<(f64, f64)> = grid
                .iter()
                .zip(&per_hbar)
                .filter(|(h, _)| (window[0]..=window[1]).contains(&(s * *h * *h)))
                .map(|(h, r)| (*h, r.1[i]))
                .collect();
            match fit_heat_coefficients(&samples, s, op.dim(), cfg.partition.fit_order) {
                Ok(fit) => SweepRow {
                    t: s,
                    fit: Some(fit),
                    status: "ok".into(),
                },
                Err(e) => SweepRow {
                    t: s,
                    fit: None,
                    status: e.to_string(),
                },
            }
        })
        .collect();

    let csv_rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.hbar.to_string(),
                r.zq.to_string(),
                r.zc.to_string(),
                r.ratio.to_string(),
                opt(r.bound),
            ]
        })
        .collect();
    write_csv(&cfg.output.dir, "partition.csv", &["hbar", "zq", "zc", "ratio", "bound"], &csv_rows)?;
    let last = report.rows.last().expect("nonempty grid");
    let summary = format!(
        "partition: a = {:?}, ratio at hbar = {} is {}",
        report.fit.a, last.hbar, last.ratio
    );
    let out = PartitionOutput {
        command: "partition",
        report: &report,
        a0,
        mode: per_hbar.iter().map(|r| r.2).collect(),
        t_sweep,
        constants_grid: constants_grid(&bc, &cfg.bound.alpha_grid, &cfg.bound.delta_grid)?,
    };
    finish(cfg, true, summary, &out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub hbar: f64,
    pub tau: f64,
    pub zq: f64,
    pub zc: f64,
    pub ratio: f64,
    /// Upper bound on `Z_Q` with exact ball volumes.
    pub gt_bound: Option<f64>,
    pub gt_holds: Option<bool>,
    pub rhs: Option<f64>,
    pub holds: Option<bool>,
    pub needed_constant: Option<f64>,
    pub status: String,
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    command: &'static str,
    t: f64,
    constants: &'a BoundConstants,
    rows: &'a [BoundRow],
    all_hold: bool,
    /// Smallest constant that could replace `c3` on this grid.
    empirical_constant: Option<f64>,
    constants_grid: Vec<ConstantsGridRow>,
}

fn cmd_bound(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let op = cfg.operator()?;
    let m = op.manifold();
    let bc = bound_constants(cfg, &op)?;
    let cache = open_cache(cfg)?;
    let grid = cfg.hbar_grid.values()?;
    let t = cfg.t;
    let a0 = classical_integral(&op, t)?;
    let zq: Vec<f64> = grid
        .par_iter()
        .map(|&h| Ok(oracle_at(&op, cfg, cache.as_ref(), h)?.trace(t)?))
        .collect::<Result<_, CliError>>()?;
    let mut corollary = Vec::new();
    let rows: Vec<BoundRow> = grid
        .iter()
        .zip(&zq)
        .map(|(&h, &zq)| {
            let zc = phase_space_factor(t, h, op.dim()) * a0;
            let c = corollary_row(m, &bc, t, h, zq / zc);
            let gt = gt_upper_bound(m, a0, &bc, t, h);
            let row = BoundRow {
                hbar: h,
                tau: t * h * h,
                zq,
                zc,
                ratio: zq / zc,
                gt_holds: gt.as_ref().ok().map(|b| zq <= *b * (1.0 + 1e-9)),
                gt_bound: gt.ok(),
                rhs: c.rhs,
                holds: c.holds,
                needed_constant: c.needed_constant,
                status: c.status.clone(),
            };
            corollary.push(c);
            row
        })
        .collect();
    let all_hold = rows
        .iter()
        .all(|r| r.holds != Some(false) && r.gt_holds != Some(false));
    let empirical = empirical_constant(&corollary);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.hbar.to_string(),
                r.tau.to_string(),
                r.zq.to_string(),
                r.zc.to_string(),
                r.ratio.to_string(),
                opt(r.gt_bound),
                opt(r.gt_holds),
                opt(r.rhs),
                opt(r.holds),
                opt(r.needed_constant),
                r.status.clone(),
            ]
        })
        .collect();
    let dir = &cfg.output.dir;
    write_csv(
        dir,
        "bound.csv",
        &[
            "hbar", "tau", "zq", "zc", "ratio", "gt_bound", "gt_holds", "rhs", "holds", "needed_constant", "status",
        ],
        &csv_rows,
    )?;
    let grid_rows = constants_grid(&bc, &cfg.bound.alpha_grid, &cfg.bound.delta_grid)?;
    write_constants_grid(dir, &grid_rows)?;
    let summary = format!(
        "bound: all hold = {all_hold}, c3 = {:.6e}, empirical constant = {}",
        bc.c3,
        opt(empirical)
    );
    let out = BoundOutput {
        command: "bound",
        t,
        constants: &bc,
        rows: &rows,
        all_hold,
        empirical_constant: empirical,
        constants_grid: grid_rows,
    };
    finish(cfg, all_hold, summary, &out)
}

fn write_constants_grid(dir: &Path, rows: &[ConstantsGridRow]) -> Result<(), CliError> {
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.alpha.to_string(),
                r.delta.to_string(),
                r.c1.to_string(),
                r.c2.to_string(),
                r.c3.to_string(),
            ]
        })
        .collect();
    write_csv(dir, "constants_grid.csv", &["alpha", "delta", "c1", "c2", "c3"], &csv_rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub cutoff: Option<usize>,
    pub doubled_cutoff: Option<usize>,
    pub compared: usize,
    pub max_difference: f64,
    pub pass: bool,
}

#[derive(Serialize)]
struct OracleOutput {
    command: &'static str,
    hbar: f64,
    mode: SpectralMode,
    cutoff: Option<usize>,
    basis_size: Option<usize>,
    eigenvalues: Vec<f64>,
    selfcheck: Option<SelfCheck>,
}

/// Agreement required between the oracle and its doubled-cutoff rerun.
const SELFCHECK_TOLERANCE: f64 = 1e-9;

fn cmd_oracle(cfg: &ExperimentConfig, selfcheck: bool) -> Result<Outcome, CliError> {
    let op = cfg.operator()?;
    let cache = open_cache(cfg)?;
    let hbar = cfg.oracle.hbar;
    let sd = oracle_at(&op, cfg, cache.as_ref(), hbar)?;
    let eigenvalues = sd.eigenvalues(cfg.oracle.max_count);
    let rows: Vec<Vec<String>> = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.to_string()])
        .collect();
    write_csv(&cfg.output.dir, "eigenvalues.csv", &["index", "eigenvalue"], &rows)?;

    let check = if selfcheck {
        let doubled = sd.cutoff().map(|c| 2 * c);
        let other = match doubled {
            Some(c) => build_oracle_cached(&op, hbar, cfg.t, Some(c), cache.as_ref())?,
            None => sd.clone(),
        };
        // the top of a truncated basis is unresolved; compare the lower part
        let compared = match sd.cutoff() {
            Some(c) => eigenvalues.len().min(c),
            None => eigenvalues.len(),
        };
        let again = other.eigenvalues(compared);
        let max_difference = eigenvalues[..compared]
            .iter()
            .zip(&again)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max);
        Some(SelfCheck {
            cutoff: sd.cutoff(),
            doubled_cutoff: doubled,
            compared,
            max_difference,
            pass: max_difference <= SELFCHECK_TOLERANCE,
        })
    } else {
        None
    };
    let summary = format!(
        "oracle: {:?} mode, first eigenvalues {:?}{}",
        sd.mode(),
        &eigenvalues[..eigenvalues.len().min(7)],
        check
            .as_ref()
            .map(|c| format!(", selfcheck difference {:e}", c.max_difference))
            .unwrap_or_default()
    );
    let out = OracleOutput {
        command: "oracle",
        hbar,
        mode: sd.mode(),
        cutoff: sd.cutoff(),
        basis_size: sd.basis_size(),
        eigenvalues,
        selfcheck: check.clone(),
    };
    let outcome = finish(cfg, true, summary, &out)?;
    if let Some(c) = check.filter(|c| !c.pass) {
        return Err(heatsc::Error::NotConverged(format!(
            "eigenvalues moved by {:e} under cutoff doubling",
            c.max_difference
        ))
        .into());
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_skips_noise_floor() {
        let f = ConvergenceFit::new("e", vec![0.4, 0.2, 0.1], vec![1e-12, 1e-13, 1e-12], 1.0, 2.0, 1e-10);
        assert!(f.pass && f.slope.is_none());
        let f = ConvergenceFit::new("e", vec![0.4, 0.2, 0.1], vec![0.16, 0.04, 0.01], 1.0, 2.0, 1e-10);
        assert!((f.slope.unwrap() - 2.0).abs() < 1e-12 && f.pass);
        let f = ConvergenceFit::new("e", vec![0.4, 0.2, 0.1], vec![0.4, 0.4, 0.4], 1.0, 2.0, 1e-10);
        assert!(!f.pass);
    }

    #[test]
    fn samples_are_reproducible_and_near_diagonal() {
        let m = ModelManifold::round_sphere(1.0).unwrap();
        let a = sample_pairs(&m, 2.0, 8, 24, 7);
        let b = sample_pairs(&m, 2.0, 8, 24, 7);
        assert_eq!(a, b);
        assert!(a[..8].iter().all(|(x, y)| x == y));
        assert!(a[8..].iter().all(|(x, y)| m.distance(x, y) < 1.0));
    }
}
