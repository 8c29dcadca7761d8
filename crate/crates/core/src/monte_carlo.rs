//! Monte Carlo ensembles of deterministic solves for cross-validation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{DeterministicOptions, DeterministicSolver, FlowField};
use crate::problem::Problem;

/// Samples solved in parallel before their results are folded in order.
const CHUNK: usize = 32;

#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_mc: usize,
    pub seed: u64,
    pub probes: Vec<(f64, f64)>,
    /// Fraction of failed samples tolerated before the run aborts.
    pub max_failure_fraction: f64,
    pub options: DeterministicOptions,
}

impl McConfig {
    pub fn new(n_mc: usize, seed: u64) -> Self {
        Self {
            n_mc,
            seed,
            probes: Vec::new(),
            max_failure_fraction: 0.01,
            options: DeterministicOptions::default(),
        }
    }
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Default)]
pub struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(n: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let c = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / c;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let d = self.count.saturating_sub(1).max(1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.variance().iter().map(|v| (v / n).sqrt()).collect()
    }
}

/// Values of `(u_x, u_y, p)` at one probe across the accepted samples.
#[derive(Debug, Clone)]
pub struct ProbeSamples {
    pub x: f64,
    pub y: f64,
    pub values: Vec<[f64; 3]>,
}

impl ProbeSamples {
    pub fn moments(&self) -> Welford {
        let mut w = Welford::new(3);
        for v in &self.values {
            w.push(v);
        }
        w
    }
}

#[derive(Debug, Clone)]
pub struct McEnsemble {
    pub n_mc: usize,
    pub xi: Vec<Vec<f64>>,
    /// Moments of the nodal velocity components.
    pub ux: Welford,
    pub uy: Welford,
    pub p: Welford,
    pub probes: Vec<ProbeSamples>,
    /// Sample indices whose deterministic solve failed.
    pub failures: Vec<usize>,
}

impl McEnsemble {
    pub fn accepted(&self) -> usize {
        self.ux.count()
    }

    /// Long CSV `probe,x,y,sample,ux,uy,p` of accepted probe values.
    pub fn write_probe_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "probe,x,y,sample,ux,uy,p")?;
        for (k, pr) in self.probes.iter().enumerate() {
            for (s, v) in pr.values.iter().enumerate() {
                writeln!(out, "{k},{},{},{s},{:.16e},{:.16e},{:.16e}", pr.x, pr.y, v[0], v[1], v[2])?;
            }
        }
        Ok(())
    }
}

/// i.i.d. uniform points of `[-1, 1]^n_nu` from a seeded ChaCha8 stream.
pub fn sample_parameters(n_nu: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n_nu).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect()
}

/// Viscosity realization at the quadrature points.
pub fn realize_viscosity(problem: &Problem, xi: &[f64]) -> Result<Vec<f64>> {
    problem
        .disc
        .quad_points
        .iter()
        .map(|&(x, y)| problem.field.realize(x, y, xi))
        .collect()
}

fn solve_sample(problem: &Problem, xi: &[f64], opts: &DeterministicOptions) -> Result<FlowField> {
    let nu = realize_viscosity(problem, xi)?;
    Ok(DeterministicSolver::new(&problem.disc, &nu)?.solve(opts)?.field)
}

/// Runs `n_mc` deterministic solves and accumulates moments in sample order.
pub fn run_monte_carlo(problem: &Problem, cfg: &McConfig) -> Result<McEnsemble> {
    let xi = sample_parameters(problem.field.n_nu(), cfg.n_mc, cfg.seed);
    run_at(problem, xi, cfg)
}

/// As [`run_monte_carlo`] with explicit parameter points.
pub fn run_at(problem: &Problem, xi: Vec<Vec<f64>>, cfg: &McConfig) -> Result<McEnsemble> {
    let mesh = problem.disc.mesh();
    let weights = cfg
        .probes
        .iter()
        .map(|&(x, y)| {
            let v = mesh.velocity_weights(x, y);
            let p = mesh.pressure_weights(x, y);
            v.zip(p).ok_or_else(|| Error::InvalidParameter {
                name: "probe",
                reason: format!("point ({x}, {y}) is not in the mesh"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (nv, np) = (mesh.nodes.len(), mesh.pnodes.len());
    let mut ens = McEnsemble {
        n_mc: xi.len(),
        xi: Vec::new(),
        ux: Welford::new(nv),
        uy: Welford::new(nv),
        p: Welford::new(np),
        probes: cfg.probes.iter().map(|&(x, y)| ProbeSamples { x, y, values: Vec::new() }).collect(),
        failures: Vec::new(),
    };
    for (c, chunk) in xi.chunks(CHUNK).enumerate() {
        let results: Vec<Result<FlowField>> = chunk.par_iter().map(|z| solve_sample(problem, z, &cfg.options)).collect();
        for (k, r) in results.into_iter().enumerate() {
            let index = c * CHUNK + k;
            match r {
                Ok(f) => {
                    ens.ux.push(&f.ux);
                    ens.uy.push(&f.uy);
                    ens.p.push(&f.p);
                    for (pr, (vw, pw)) in ens.probes.iter_mut().zip(&weights) {
                        let at = |vals: &[f64]| vw.iter().map(|&(n, w)| w * vals[n]).sum::<f64>();
                        let p: f64 = pw.iter().map(|&(n, w)| w * f.p[n]).sum();
                        pr.values.push([at(&f.ux), at(&f.uy), p]);
                    }
                }
                Err(e) => {
                    log::warn!("Monte Carlo sample {index} failed: {e}");
                    ens.failures.push(index);
                }
            }
        }
    }
    ens.xi = xi;
    let total = ens.n_mc;
    if ens.failures.len() as f64 > cfg.max_failure_fraction * total as f64 {
        return Err(Error::MonteCarloFailures {
            failed: ens.failures.len(),
            total,
        });
    }
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::tests::tiny;

    #[test]
    fn single_sample_at_origin_is_mean_viscosity_solve() {
        let p = tiny(2, 1, 0.1);
        let cfg = McConfig {
            probes: vec![(1.3, 0.2)],
            ..McConfig::new(1, 0)
        };
        let ens = run_at(&p, vec![vec![0.0, 0.0]], &cfg).unwrap();
        let nu = vec![p.field.nu0; p.disc.quad_points.len()];
        let det = DeterministicSolver::new(&p.disc, &nu).unwrap().solve(&cfg.options).unwrap();
        assert_eq!(ens.ux.mean(), &det.field.ux[..]);
        assert_eq!(ens.p.mean(), &det.field.p[..]);
        let want = p.disc.mesh().eval_velocity(&det.field.ux, 1.3, 0.2).unwrap();
        assert!((ens.probes[0].values[0][0] - want).abs() < 1e-14);
    }

    #[test]
    fn sampled_viscosity_variance_matches_kl() {
        let p = tiny(3, 1, 0.2);
        let xi = sample_parameters(3, 2000, 42);
        for &(x, y) in &[(0.3, 0.4), (1.6, -0.7)] {
            let mut w = Welford::new(1);
            for z in &xi {
                w.push(&[p.field.realize(x, y, z).unwrap()]);
            }
            let want = p.field.variance(x, y);
            let got = w.variance()[0];
            assert!((got - want).abs() <= 0.05 * want, "variance {got} vs {want}");
            assert!((w.mean()[0] - p.field.nu0).abs() <= 4.0 * w.standard_error()[0]);
        }
    }

    #[test]
    fn parameters_are_reproducible_and_in_cube() {
        let a = sample_parameters(4, 50, 9);
        assert_eq!(a, sample_parameters(4, 50, 9));
        assert_ne!(a, sample_parameters(4, 50, 10));
        assert!(a.iter().flatten().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 0.25];
        let mut w = Welford::new(1);
        xs.iter().for_each(|x| w.push(&[*x]));
        let m = xs.iter().sum::<f64>() / 5.0;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
        assert!((w.mean()[0] - m).abs() < 1e-14);
        assert!((w.variance()[0] - v).abs() < 1e-13);
    }

    #[test]
    fn failures_above_budget_abort() {
        let p = tiny(2, 1, 0.1);
        let cfg = McConfig {
            options: DeterministicOptions {
                max_steps: 0,
                ..Default::default()
            },
            ..McConfig::new(3, 1)
        };
        assert!(matches!(run_monte_carlo(&p, &cfg), Err(Error::MonteCarloFailures { failed: 3, total: 3 })));
    }
}
