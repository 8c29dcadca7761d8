//! Inexact Picard/Newton iteration in low-rank format with adaptive tolerances.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::lowrank::LowRankVec;
use crate::lrgmres::{self, LrGmresConfig, LrGmresReport, Termination};
use crate::precond::{LscOptions, MeanPreconditioner};
use crate::problem::{Phase, Problem};

/// How linear solves and updates are truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Adaptive truncation of corrections and iterates.
    LowRank,
    /// Same adaptive linear tolerances, no truncation.
    FullRank,
    /// No truncation and a fixed linear tolerance of `1e-12`.
    FullRankExact,
}

impl SolveMode {
    pub fn name(self) -> &'static str {
        match self {
            SolveMode::LowRank => "lowrank",
            SolveMode::FullRank => "fullrank",
            SolveMode::FullRankExact => "fullrank_exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lowrank" => Some(SolveMode::LowRank),
            "fullrank" => Some(SolveMode::FullRank),
            "fullrank_exact" => Some(SolveMode::FullRankExact),
            _ => None,
        }
    }

    pub fn truncates(self) -> bool {
        self == SolveMode::LowRank
    }
}

/// Whether the correction tolerance scales the residual norm or the GMRES tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceConvention {
    /// `eps_corr = rho_trunc * ‖r‖`.
    Residual,
    /// `eps_corr = rho_trunc * eps_gmres`.
    Gmres,
}

impl ToleranceConvention {
    pub fn name(self) -> &'static str {
        match self {
            ToleranceConvention::Residual => "residual",
            ToleranceConvention::Gmres => "gmres",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "residual" | "algorithm3" => Some(ToleranceConvention::Residual),
            "gmres" | "section4" => Some(ToleranceConvention::Gmres),
            _ => None,
        }
    }
}

pub const EXACT_GMRES_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearConfig {
    pub eps_nl: f64,
    pub rho_gmres: f64,
    pub rho_nl: f64,
    pub rho_trunc_picard: f64,
    pub rho_trunc_newton: f64,
    pub picard_steps: usize,
    pub newton_steps: usize,
    pub stokes_gmres_tol: f64,
    /// Overrides `rho_nl * eps_nl` as the iterate truncation tolerance.
    pub eps_sol: Option<f64>,
    pub mode: SolveMode,
    pub convention: ToleranceConvention,
    pub m_gm: usize,
    pub max_cycles: usize,
    pub lsc: LscOptions,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            eps_nl: 1e-5,
            rho_gmres: 10f64.powf(-0.5),
            rho_nl: 1e-1,
            rho_trunc_picard: 1e-1,
            rho_trunc_newton: 1e-1,
            picard_steps: 4,
            newton_steps: 10,
            stokes_gmres_tol: 1e-4,
            eps_sol: None,
            mode: SolveMode::LowRank,
            convention: ToleranceConvention::Residual,
            m_gm: 20,
            max_cycles: 50,
            lsc: LscOptions::default(),
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.eps_nl > 0.0 && self.eps_nl < 1.0) {
            return bad("eps_nl", format!("must lie in (0, 1), got {}", self.eps_nl));
        }
        for (name, v) in [
            ("rho_gmres", self.rho_gmres),
            ("rho_nl", self.rho_nl),
            ("rho_trunc_picard", self.rho_trunc_picard),
            ("rho_trunc_newton", self.rho_trunc_newton),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(name, format!("must lie in (0, 1], got {v}"));
            }
        }
        if !(self.stokes_gmres_tol > 0.0 && self.stokes_gmres_tol < 1.0) {
            return bad("stokes_gmres_tol", format!("must lie in (0, 1), got {}", self.stokes_gmres_tol));
        }
        if let Some(e) = self.eps_sol {
            if !(e >= 0.0 && e < 1.0) {
                return bad("eps_sol", format!("must lie in [0, 1), got {e}"));
            }
        }
        if self.m_gm == 0 {
            return bad("m_gm", "need at least one basis vector per cycle".into());
        }
        Ok(())
    }

    /// Truncation tolerance for iterates.
    pub fn eps_sol(&self) -> f64 {
        if !self.mode.truncates() {
            return 0.0;
        }
        self.eps_sol.unwrap_or(self.rho_nl * self.eps_nl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub eps_gmres: f64,
    pub eps_corr: f64,
    pub eps_sol: f64,
}

/// A step counts as progress only if it cuts the best residual by this factor.
pub const STALL_RATIO: f64 = 0.9;
/// Consecutive steps without progress that end the iteration.
pub const STALL_STEPS: usize = 2;

/// Largest relative GMRES tolerance handed to the linear solver.
pub const MAX_GMRES_TOL: f64 = 0.5;

/// Tolerances for one step, given the current nonlinear residual norm.
pub fn adaptive_tolerances(residual_norm: f64, cfg: &NonlinearConfig, phase: Phase) -> Tolerances {
    let eps_sol = cfg.eps_sol();
    let (eps_gmres, eps_corr) = match phase {
        Phase::Stokes => (cfg.stokes_gmres_tol, eps_sol),
        Phase::Picard | Phase::Newton => {
            let rho = if phase == Phase::Picard { cfg.rho_trunc_picard } else { cfg.rho_trunc_newton };
            let g = cfg.rho_gmres * residual_norm;
            let c = match cfg.convention {
                ToleranceConvention::Residual => rho * residual_norm,
                ToleranceConvention::Gmres => rho * g,
            };
            (g.min(MAX_GMRES_TOL), c)
        }
    };
    match cfg.mode {
        SolveMode::LowRank => Tolerances { eps_gmres, eps_corr, eps_sol },
        SolveMode::FullRank => Tolerances { eps_gmres, eps_corr: 0.0, eps_sol: 0.0 },
        SolveMode::FullRankExact => Tolerances {
            eps_gmres: EXACT_GMRES_TOL,
            eps_corr: 0.0,
            eps_sol: 0.0,
        },
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub index: usize,
    pub phase: Phase,
    pub tolerances: Tolerances,
    /// Nonlinear residual after the step.
    pub residual: f64,
    pub linear: LrGmresReport<f64>,
    pub ranks: [usize; 3],
    pub correction_ranks: [usize; 3],
    pub time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// The residual stopped decreasing; the best iterate is returned.
    Stalled,
    /// Newton budget exhausted.
    MaxSteps,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Stalled => "stalled",
            Status::MaxSteps => "max_steps",
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearReport {
    pub config: NonlinearConfig,
    /// `‖r^0‖`, the residual at the Stokes solution.
    pub initial_residual: f64,
    /// Stokes solve first, then one entry per nonlinear step.
    pub steps: Vec<StepRecord>,
    pub status: Status,
    /// Index into `steps` of the returned iterate.
    pub best_step: usize,
}

impl NonlinearReport {
    pub fn final_relative_residual(&self) -> f64 {
        self.steps[self.best_step].residual / self.initial_residual
    }

    pub fn nonlinear_steps(&self, phase: Phase) -> usize {
        self.steps[..=self.best_step].iter().filter(|s| s.phase == phase).count()
    }

    pub fn total_time(&self) -> Duration {
        self.steps.iter().map(|s| s.time).sum()
    }

    /// Convergence history without timings, so reruns compare byte for byte.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "step,phase,residual,relative_residual,eps_gmres,eps_corr,eps_sol,gmres_cycles,gmres_relative_residual,gmres_termination,rank_ux,rank_uy,rank_p,corr_rank_ux,corr_rank_uy,corr_rank_p"
        )?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{:.10e},{:.10e},{:.6e},{:.6e},{:.6e},{},{:.6e},{},{},{},{},{},{},{}",
                s.index,
                s.phase.name(),
                s.residual,
                s.residual / self.initial_residual,
                s.tolerances.eps_gmres,
                s.tolerances.eps_corr,
                s.tolerances.eps_sol,
                s.linear.cycles(),
                s.linear.final_relative_residual,
                s.linear.termination.name(),
                s.ranks[0],
                s.ranks[1],
                s.ranks[2],
                s.correction_ranks[0],
                s.correction_ranks[1],
                s.correction_ranks[2],
            )?;
        }
        Ok(())
    }
}

fn gmres_config(cfg: &NonlinearConfig, tol: &Tolerances) -> LrGmresConfig<f64> {
    LrGmresConfig {
        m_gm: cfg.m_gm,
        eps_gmres: tol.eps_gmres,
        eps_trunc: tol.eps_corr.min(0.5),
        max_cycles: cfg.max_cycles,
    }
}

/// Runs the Stokes initialization followed by Picard and Newton steps.
pub fn run(problem: &Problem, cfg: &NonlinearConfig) -> Result<(LowRankVec<f64>, NonlinearReport)> {
    cfg.validate()?;
    let dims = problem.dims();
    let zero = LowRankVec::zeros(dims);

    let t0 = Instant::now();
    let tol = adaptive_tolerances(0.0, cfg, Phase::Stokes);
    let a_st = problem.stokes_operator()?;
    let m_st = MeanPreconditioner::build(problem, None, Phase::Stokes, cfg.lsc)?;
    let b_st = problem.stokes_rhs()?;
    let (u_st, rep) = lrgmres::solve(&a_st, &m_st, &b_st, &zero, &gmres_config(cfg, &tol))?;
    let mut u = u_st.truncated(tol.eps_sol);
    let mut r = problem.residual(&u, 0.0)?;
    let r0 = r.norm();
    log::info!(
        "stokes: {} cycles, rel. {:.3e}, ranks {:?}, ‖r0‖ = {:.6e}",
        rep.cycles(),
        rep.final_relative_residual,
        u.ranks(),
        r0
    );
    let mut steps = vec![StepRecord {
        index: 0,
        phase: Phase::Stokes,
        tolerances: tol,
        residual: r0,
        correction_ranks: u_st.ranks(),
        linear: rep,
        ranks: u.ranks(),
        time: t0.elapsed(),
    }];
    let mut report = NonlinearReport {
        config: *cfg,
        initial_residual: r0,
        steps: Vec::new(),
        status: Status::MaxSteps,
        best_step: 0,
    };
    if r0 == 0.0 {
        report.steps = steps;
        report.status = Status::Converged;
        return Ok((u, report));
    }

    let mut best = (u.clone(), r0, 0usize);
    let mut growth = 0;
    let mut status = Status::MaxSteps;
    let budget = cfg.picard_steps + cfg.newton_steps;
    for k in 0..=budget {
        let rn = steps.last().map(|s| s.residual).unwrap_or(r0);
        let phase = if k < cfg.picard_steps { Phase::Picard } else { Phase::Newton };
        // Picard steps run unconditionally; Newton stops at the target.
        if phase == Phase::Newton && rn <= cfg.eps_nl * r0 {
            status = Status::Converged;
            break;
        }
        if k == budget {
            break;
        }
        let t = Instant::now();
        let tol = adaptive_tolerances(rn, cfg, phase);
        let lin = phase.linearization().expect("nonlinear phase");
        let j = problem.linearized(&u, lin)?;
        let m = MeanPreconditioner::build(problem, Some(&u), phase, cfg.lsc)?;
        let rhs = r.truncated(tol.eps_corr.min(0.5));
        let (du, rep) = lrgmres::solve(&j, &m, &rhs, &zero, &gmres_config(cfg, &tol))?;
        if rep.termination != Termination::Converged {
            log::warn!("step {}: linear solve ended with {} at {:.3e}", k + 1, rep.termination.name(), rep.final_relative_residual);
        }
        u = u.add(&du)?.truncated(tol.eps_sol);
        r = problem.residual(&u, 0.0)?;
        let res = r.norm();
        log::info!(
            "step {} ({}): ‖r‖ = {:.6e} (rel. {:.3e}), eps_gmres {:.3e}, eps_corr {:.3e}, {} cycles, ranks {:?}",
            k + 1,
            phase.name(),
            res,
            res / r0,
            tol.eps_gmres,
            tol.eps_corr,
            rep.cycles(),
            u.ranks()
        );
        steps.push(StepRecord {
            index: k + 1,
            phase,
            tolerances: tol,
            residual: res,
            correction_ranks: du.ranks(),
            linear: rep,
            ranks: u.ranks(),
            time: t.elapsed(),
        });
        if res <= STALL_RATIO * best.1 {
            best = (u.clone(), res, steps.len() - 1);
            growth = 0;
        } else {
            if res < best.1 {
                best = (u.clone(), res, steps.len() - 1);
            }
            growth += 1;
            if growth == STALL_STEPS {
                log::warn!("residual made no progress on {STALL_STEPS} consecutive steps; stopping");
                status = Status::Stalled;
                break;
            }
        }
        if !res.is_finite() {
            status = Status::Stalled;
            break;
        }
    }
    report.steps = steps;
    report.status = status;
    report.best_step = best.2;
    Ok((best.0, report))
}
