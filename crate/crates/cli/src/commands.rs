//! `solve`, `sweep` and `validate`.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use sgns_core::lowrank::{Field, LowRankVec};
use sgns_core::monte_carlo::{self, McConfig, McEnsemble};
use sgns_core::nonlinear::{self, NonlinearReport, SolveMode, Status};
use sgns_core::problem::{Phase, Problem};
use sgns_core::stats::{self, GraphNorms};

use crate::config::{self, ConfigError, RunConfig};

pub const OUTPUT_ROOT_VAR: &str = "SGNS_OUTPUT_ROOT";

#[derive(Debug)]
pub enum AppError {
    Config(ConfigError),
    Solver(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Solver(_) => 2,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(e) => e.fmt(f),
            AppError::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e)
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Solver(format!("writing output: {e}"))
    }
}

fn core_failure(e: sgns_core::Error) -> AppError {
    match e {
        sgns_core::Error::MeshAlignment { .. } => AppError::Config(ConfigError::new("geometry.h", e.to_string())),
        sgns_core::Error::InvalidParameter { name, reason } => AppError::Config(ConfigError::new(name, reason)),
        other => AppError::Solver(other.to_string()),
    }
}

pub fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from)
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn prepare_dir(dir: &Path, cfg: &RunConfig) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.echo())
}

/// A finished solve with its timings.
pub struct SolveOutcome {
    pub u: LowRankVec<f64>,
    pub report: NonlinearReport,
    pub assembly_secs: f64,
    pub solve_secs: f64,
}

impl SolveOutcome {
    pub fn lrgmres_cycles(&self) -> Vec<usize> {
        self.report.steps.iter().map(|s| s.linear.cycles()).collect()
    }
}

pub fn assemble(cfg: &RunConfig) -> Result<(Problem, f64), AppError> {
    let t = Instant::now();
    let p = Problem::new(cfg.problem_spec()?).map_err(core_failure)?;
    Ok((p, t.elapsed().as_secs_f64()))
}

pub fn solve_problem(p: &Problem, cfg: &RunConfig, mode: SolveMode, assembly_secs: f64) -> Result<SolveOutcome, AppError> {
    let nl = sgns_core::nonlinear::NonlinearConfig {
        mode,
        ..cfg.nonlinear_config()
    };
    let t = Instant::now();
    let (u, report) = nonlinear::run(p, &nl).map_err(core_failure)?;
    Ok(SolveOutcome {
        u,
        report,
        assembly_secs,
        solve_secs: t.elapsed().as_secs_f64(),
    })
}

/// Convergence, statistics, coefficient and factor files for one solve.
fn write_solution(dir: &Path, cfg: &RunConfig, p: &Problem, out: &SolveOutcome) -> Result<(), AppError> {
    out.report.write_csv(create(&dir.join("convergence.csv"))?)?;
    if cfg.output.stats {
        let s = stats::compute_stats(&out.u, &p.basis).map_err(core_failure)?;
        stats::write_stats_csv(&p.disc, &s, create(&dir.join("stats.csv"))?)?;
    }
    if cfg.output.coefficients {
        let c = stats::coefficient_diagnostics(&out.u, &p.basis).map_err(core_failure)?;
        c.write_csv("orthonormal", create(&dir.join("coefficients.csv"))?)?;
    }
    if cfg.output.factors {
        let fdir = dir.join("factors");
        fs::create_dir_all(&fdir)?;
        for f in Field::ALL {
            for (left, tag) in [(true, "V"), (false, "W")] {
                out.u.write_factor_csv(f, left, create(&fdir.join(format!("{}_{tag}.csv", f.name())))?)?;
            }
        }
    }
    Ok(())
}

fn write_summary(dir: &Path, p: &Problem, out: &SolveOutcome) -> std::io::Result<()> {
    let r = &out.report;
    let d = p.dims();
    let mut w = create(&dir.join("summary.toml"))?;
    writeln!(w, "mode = \"{}\"", r.config.mode.name())?;
    writeln!(w, "status = \"{}\"", r.status.name())?;
    writeln!(w, "initial_residual = {:e}", r.initial_residual)?;
    writeln!(w, "final_relative_residual = {:e}", r.final_relative_residual())?;
    writeln!(w, "picard_steps = {}", r.nonlinear_steps(Phase::Picard))?;
    writeln!(w, "newton_steps = {}", r.nonlinear_steps(Phase::Newton))?;
    writeln!(w, "final_ranks = {:?}", r.steps[r.best_step].ranks)?;
    writeln!(w, "lrgmres_cycles = {:?}", out.lrgmres_cycles())?;
    writeln!(w, "n_xi = {}", d.n_xi)?;
    writeln!(w, "unknowns = {}", d.total())?;
    writeln!(w, "assembly_time_s = {:.3}", out.assembly_secs)?;
    writeln!(w, "solve_time_s = {:.3}", out.solve_secs)?;
    w.flush()
}

fn status_check(out: &SolveOutcome) -> Result<(), AppError> {
    match out.report.status {
        Status::Converged => Ok(()),
        s => Err(AppError::Solver(format!(
            "nonlinear iteration {} at relative residual {:.3e} (tolerance {:e})",
            s.name(),
            out.report.final_relative_residual(),
            out.report.config.eps_nl
        ))),
    }
}

pub fn cmd_solve(cfg: &RunConfig, dir: &Path) -> Result<(), AppError> {
    prepare_dir(dir, cfg)?;
    let (p, assembly) = assemble(cfg)?;
    let out = match solve_problem(&p, cfg, cfg.mode(), assembly) {
        Ok(o) => o,
        Err(e) => {
            fs::write(dir.join("error.txt"), format!("{e}\n"))?;
            return Err(e);
        }
    };
    write_solution(dir, cfg, &p, &out)?;
    write_summary(dir, &p, &out)?;
    log::info!(
        "{} after {} steps, rel. residual {:.3e}, ranks {:?}; wrote {}",
        out.report.status.name(),
        out.report.steps.len() - 1,
        out.report.final_relative_residual(),
        out.u.ranks(),
        dir.display()
    );
    status_check(&out)
}

/// `key=v1,v2,...` into a key and its values.
pub fn parse_vary(s: &str) -> Result<(String, Vec<String>), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::new(s, "expected key=value1,value2,..."))?;
    let vals: Vec<String> = v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
    if vals.is_empty() {
        return Err(ConfigError::new(k, "empty value list"));
    }
    Ok((k.trim().to_string(), vals))
}

/// Cartesian product of the sweep lists, first key varying slowest.
pub fn sweep_configs(base: &toml::Table, vary: &[(String, Vec<String>)], dir: &Path) -> Result<Vec<(Vec<String>, RunConfig)>, ConfigError> {
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for (_, vals) in vary {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .enumerate()
        .map(|(i, combo)| {
            let mut t = base.clone();
            for ((k, _), v) in vary.iter().zip(&combo) {
                config::set_override(&mut t, k, v)?;
            }
            let mut cfg = RunConfig::from_table(t)?;
            cfg.output.directory = dir.join(format!("run_{i:03}"));
            Ok((combo, cfg))
        })
        .collect()
}

struct SweepRow {
    cfg: RunConfig,
    result: Result<SolveOutcome, AppError>,
}

fn sweep_one(cfg: RunConfig) -> SweepRow {
    let dir = cfg.output.directory.clone();
    let result = (|| {
        prepare_dir(&dir, &cfg)?;
        let (p, assembly) = assemble(&cfg)?;
        let out = solve_problem(&p, &cfg, cfg.mode(), assembly)?;
        write_solution(&dir, &cfg, &p, &out)?;
        write_summary(&dir, &p, &out)?;
        Ok(out)
    })();
    if let Err(e) = &result {
        log::warn!("sweep run in {} failed: {e}", dir.display());
        let _ = fs::write(dir.join("error.txt"), format!("{e}\n"));
    }
    SweepRow { cfg, result }
}

pub fn cmd_sweep(base: &toml::Table, vary: &[(String, Vec<String>)], dir: &Path, workers: Option<usize>) -> Result<(), AppError> {
    let base_cfg = RunConfig::from_table(base.clone())?;
    let runs = sweep_configs(base, vary, dir)?;
    prepare_dir(dir, &base_cfg)?;
    let workers = workers.unwrap_or(base_cfg.sweep.workers).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| AppError::Solver(e.to_string()))?;
    log::info!("sweep: {} runs on {workers} workers", runs.len());
    let rows: Vec<(Vec<String>, SweepRow)> = pool.install(|| runs.into_par_iter().map(|(combo, cfg)| (combo, sweep_one(cfg))).collect());

    let mut w = create(&dir.join("sweep.csv"))?;
    let keys: Vec<&str> = vary.iter().map(|(k, _)| k.as_str()).collect();
    writeln!(
        w,
        "run,{},kernel,l1,l2,cov,re0,mode,status,final_relative_residual,rank_ux,rank_uy,rank_p,total_rank,picard_steps,newton_steps,lrgmres_cycles,total_lrgmres_cycles,assembly_time_s,solve_time_s,error",
        keys.iter().map(|k| format!("vary_{k}")).collect::<Vec<_>>().join(",")
    )?;
    let mut failed = 0;
    for (i, (combo, row)) in rows.iter().enumerate() {
        let v = &row.cfg.viscosity;
        write!(
            w,
            "{i},{},{},{},{},{},{},{},",
            combo.join(","),
            v.kernel,
            v.l1,
            v.l2,
            v.cov,
            v.re0.unwrap_or(f64::NAN),
            row.cfg.solver.mode
        )?;
        match &row.result {
            Ok(o) => {
                let r = &o.report;
                let ranks = r.steps[r.best_step].ranks;
                let cycles = o.lrgmres_cycles();
                writeln!(
                    w,
                    "{},{:e},{},{},{},{},{},{},{},{},{:.3},{:.3},",
                    r.status.name(),
                    r.final_relative_residual(),
                    ranks[0],
                    ranks[1],
                    ranks[2],
                    ranks.iter().sum::<usize>(),
                    r.nonlinear_steps(Phase::Picard),
                    r.nonlinear_steps(Phase::Newton),
                    cycles.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
                    cycles.iter().sum::<usize>(),
                    o.assembly_secs,
                    o.solve_secs
                )?;
            }
            Err(e) => {
                failed += 1;
                writeln!(w, "failed,,,,,,,,,,,,\"{}\"", e.to_string().replace('"', "'"))?;
            }
        }
    }
    w.flush()?;
    if failed > 0 {
        return Err(AppError::Solver(format!("{failed} of {} sweep runs failed", rows.len())));
    }
    Ok(())
}

fn mc_mean_errors(p: &Problem, ens: &McEnsemble, u: &LowRankVec<f64>) -> Result<([f64; 3], f64, f64), AppError> {
    let s = stats::compute_stats(u, &p.basis).map_err(core_failure)?;
    let (mean, var) = stats::nodal_fields(&p.disc, &s);
    let mc = [ens.ux.mean().to_vec(), ens.uy.mean().to_vec(), ens.p.mean().to_vec()];
    let g = GraphNorms::new(&p.disc);
    let d: [Vec<f64>; 3] = std::array::from_fn(|k| mean[k].iter().zip(&mc[k]).map(|(a, b)| a - b).collect());
    let n = g.combined(&mc);
    let per = [g.velocity(&d[0]) / n, g.velocity(&d[1]) / n, g.pressure(&d[2]) / n];
    let min_var = var.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok((per, g.combined(&d) / n, min_var))
}

pub fn cmd_validate(cfg: &RunConfig, dir: &Path, n_mc: usize, probes: &[(f64, f64)], both_modes: bool) -> Result<(), AppError> {
    if n_mc < 2 {
        return Err(ConfigError::new("n_mc", "need at least 2 samples").into());
    }
    prepare_dir(dir, cfg)?;
    let (p, assembly) = assemble(cfg)?;
    if let Some(&(x, y)) = probes.iter().find(|&&(x, y)| p.disc.mesh().locate(x, y).is_none()) {
        return Err(ConfigError::new("probe", format!("point ({x}, {y}) is not in the flow domain")).into());
    }
    let mut modes = vec![cfg.mode()];
    if both_modes {
        modes.push(if cfg.mode() == SolveMode::LowRank { SolveMode::FullRank } else { SolveMode::LowRank });
    }
    let mut sg = Vec::new();
    for &m in &modes {
        let out = solve_problem(&p, cfg, m, assembly)?;
        let sub = dir.join(m.name());
        fs::create_dir_all(&sub)?;
        write_solution(&sub, cfg, &p, &out)?;
        write_summary(&sub, &p, &out)?;
        sg.push((m, out));
    }

    let mc_cfg = McConfig {
        probes: probes.to_vec(),
        ..McConfig::new(n_mc, cfg.seed)
    };
    let t = Instant::now();
    let ens = monte_carlo::run_monte_carlo(&p, &mc_cfg).map_err(core_failure)?;
    let mc_secs = t.elapsed().as_secs_f64();
    ens.write_probe_csv(create(&dir.join("mc_probe_samples.csv"))?)?;

    let mut w = create(&dir.join("validation_probes.csv"))?;
    let mut header = "probe,x,y,field,mc_mean,mc_std_error,mc_variance".to_string();
    for (m, _) in &sg {
        let n = m.name();
        header += &format!(",{n}_mean,{n}_variance,{n}_mean_diff_over_se");
    }
    writeln!(w, "{header}")?;
    let mut worst_z = 0.0f64;
    for (k, pr) in ens.probes.iter().enumerate() {
        let mom = pr.moments();
        let se = mom.standard_error();
        let var = mom.variance();
        let sgm: Vec<_> = sg
            .iter()
            .map(|(_, o)| stats::probe_moments(&p.disc, &o.u, pr.x, pr.y).map_err(core_failure))
            .collect::<Result<_, _>>()?;
        for (fi, f) in Field::ALL.iter().enumerate() {
            write!(w, "{k},{},{},{},{:.10e},{:.6e},{:.6e}", pr.x, pr.y, f.name(), mom.mean()[fi], se[fi], var[fi])?;
            for m in &sgm {
                let z = (m.mean[fi] - mom.mean()[fi]).abs() / se[fi];
                worst_z = worst_z.max(z);
                write!(w, ",{:.10e},{:.6e},{:.4}", m.mean[fi], m.variance[fi], z)?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;

    let mut w = create(&dir.join("validation_fields.csv"))?;
    writeln!(w, "mode,mean_error_ux,mean_error_uy,mean_error_p,mean_error_total,min_variance")?;
    for (m, o) in &sg {
        let (per, total, min_var) = mc_mean_errors(&p, &ens, &o.u)?;
        writeln!(w, "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}", m.name(), per[0], per[1], per[2], total, min_var)?;
    }
    w.flush()?;

    let mut w = create(&dir.join("validation_summary.toml"))?;
    writeln!(w, "n_mc = {n_mc}")?;
    writeln!(w, "seed = {}", cfg.seed)?;
    writeln!(w, "accepted = {}", ens.accepted())?;
    writeln!(w, "failures = {:?}", ens.failures)?;
    writeln!(w, "max_mean_diff_over_se = {worst_z:.4}")?;
    writeln!(w, "mc_time_s = {mc_secs:.3}")?;
    w.flush()?;
    log::info!("validate: {} MC samples, max |SG - MC| / SE = {worst_z:.3}", ens.accepted());
    Ok(())
}
