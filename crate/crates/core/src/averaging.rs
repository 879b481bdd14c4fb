//! The averaged (non-switching) system and the switched-vs-averaged
//! comparison harness.
//!
//! Switching is replaced by its stationary mean: the coupling becomes
//! `L_π = Σ_s π_s L_s`, and the diffusion is any `M̄` with
//! `M̄ M̄ᵀ = Γ_π = Σ_s π_s M_s M_sᵀ`. `Γ_π` is block diagonal with one
//! `n × n` block per agent,
//!
//! ```text
//! Γ_π^i = Σ_j W_ij (x_j - x_i)(x_j - x_i)ᵀ,   W_ij = σ_ji² Σ_s π_s a_s^{ij},
//! ```
//!
//! so `M̄` is assembled from per-block symmetric square roots. As in the
//! switched system the increment enters `θ` with the opposite sign.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::chain::{sample_member_path, ChainError, Generator, StationaryDist};
use crate::dynamics::{simulate, wiener_increments, DynamicsError, IntegratorConfig, SwitchedSystem, SystemState};
use crate::graph::{lambda2, Network, DEFAULT_CONNECTIVITY_TOL};
use crate::problem::Problem;
use crate::seeding::{self, Stream};

/// Eigenvalues of `Γ_π` above `-CLIP · max(1, ‖Γ_π‖)` are clipped to zero.
pub const EIGEN_CLIP: f64 = 1e-12;
/// Allowed `‖M̄ M̄ᵀ - Γ_π‖_F / max(1, ‖Γ_π‖_F)`.
pub const FACTOR_TOL: f64 = 1e-10;
/// Smallest accepted ensemble for the comparison experiment.
pub const MIN_ENSEMBLE: usize = 100;
/// Null-control level for the two-sample test.
pub const NULL_LEVEL: f64 = 0.999;
/// Bootstrap replicates for the standard error of `err`.
pub const BOOTSTRAP_REPLICATES: usize = 1000;

#[derive(Debug, Error)]
pub enum AveragingError {
    #[error("stationary distribution has {pi} entries, network has {modes} modes")]
    ModeMismatch { pi: usize, modes: usize },
    #[error("diffusion block for agent {agent} has eigenvalue {value:e} below the clipping threshold")]
    NotPsd { agent: usize, value: f64 },
    #[error("diffusion factor residual {residual:e} exceeds tolerance")]
    Factorization { residual: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("invalid experiment: {0}")]
    Experiment(String),
}

#[derive(Debug, Clone)]
pub struct AveragedNetwork {
    laplacian: DMatrix<f64>,
    pi: StationaryDist,
    source: Network,
    noise_weights: DMatrix<f64>,
    lambda2: f64,
}

/// `L_π = Σ_s π_s L_s` together with the averaged channel weights.
pub fn average_laplacian(network: &Network, pi: &StationaryDist) -> Result<AveragedNetwork, AveragingError> {
    let p = pi.as_slice();
    if p.len() != network.modes() {
        return Err(AveragingError::ModeMismatch {
            pi: p.len(),
            modes: network.modes(),
        });
    }
    let agents = network.agents();
    let mut laplacian = DMatrix::zeros(agents, agents);
    let mut weights = DMatrix::zeros(agents, agents);
    for (s, &ps) in p.iter().enumerate() {
        laplacian += network.laplacian(s) * ps;
        for i in 0..agents {
            for &j in network.neighbors(s, i) {
                let sigma = network.channel_sigma(j, i);
                weights[(i, j)] += ps * sigma * sigma;
            }
        }
    }
    let lambda2 = lambda2(&laplacian).unwrap_or(0.0);
    if lambda2 <= DEFAULT_CONNECTIVITY_TOL {
        log::warn!("averaged Laplacian has lambda2 = {lambda2}; the averaged graph is disconnected");
    }
    Ok(AveragedNetwork {
        laplacian,
        pi: pi.clone(),
        source: network.clone(),
        noise_weights: weights,
        lambda2,
    })
}

impl AveragedNetwork {
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn pi(&self) -> &StationaryDist {
        &self.pi
    }

    pub fn source(&self) -> &Network {
        &self.source
    }

    /// `W_ij = σ_ji² Σ_s π_s a_s^{ij}`.
    pub fn noise_weights(&self) -> &DMatrix<f64> {
        &self.noise_weights
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// The `n × n` block `Γ_π^i` at `state`.
    pub fn gamma_block(&self, state: &SystemState, n: usize, agent: usize) -> DMatrix<f64> {
        let x = state.x();
        let mut block = DMatrix::zeros(n, n);
        for j in 0..self.source.agents() {
            let w = self.noise_weights[(agent, j)];
            if w == 0.0 {
                continue;
            }
            let d: Vec<f64> = (0..n).map(|k| x[j * n + k] - x[agent * n + k]).collect();
            for a in 0..n {
                for b in 0..n {
                    block[(a, b)] += w * d[a] * d[b];
                }
            }
        }
        block
    }

    /// Dense block-diagonal `Γ_π` of shape `nN × nN`.
    pub fn gamma(&self, state: &SystemState, n: usize) -> DMatrix<f64> {
        let agents = self.source.agents();
        let mut g = DMatrix::zeros(n * agents, n * agents);
        for i in 0..agents {
            g.view_mut((i * n, i * n), (n, n)).copy_from(&self.gamma_block(state, n, i));
        }
        g
    }

    /// Symmetric square roots of every block of `Γ_π`, and the largest
    /// relative reconstruction residual.
    pub fn factor_blocks(&self, state: &SystemState, n: usize) -> Result<(Vec<DMatrix<f64>>, f64), AveragingError> {
        let mut blocks = Vec::with_capacity(self.source.agents());
        let mut worst: f64 = 0.0;
        for i in 0..self.source.agents() {
            let g = self.gamma_block(state, n, i);
            let scale = g.norm().max(1.0);
            if g.iter().all(|&v| v == 0.0) {
                blocks.push(g);
                continue;
            }
            let eig = SymmetricEigen::new(g.clone());
            let mut roots = eig.eigenvalues.clone();
            for v in roots.iter_mut() {
                if *v < -EIGEN_CLIP * scale {
                    return Err(AveragingError::NotPsd { agent: i, value: *v });
                }
                *v = v.max(0.0).sqrt();
            }
            let f = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
            let residual = (&f * f.transpose() - &g).norm() / scale;
            worst = worst.max(residual);
            blocks.push(f);
        }
        Ok((blocks, worst))
    }

    /// `c · M̄ · dw` for `dw ∈ R^{nN}`.
    pub fn noise_term(&self, blocks: &[DMatrix<f64>], n: usize, dw: &[f64]) -> Vec<f64> {
        let c = self.source.coupling();
        let mut out = vec![0.0; dw.len()];
        for (i, f) in blocks.iter().enumerate() {
            for a in 0..n {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += f[(a, b)] * dw[i * n + b];
                }
                out[i * n + a] = c * acc;
            }
        }
        out
    }
}

/// Square factor `M̄` (`nN × nN`) with `M̄ M̄ᵀ = Γ_π` at `state`.
pub fn averaged_diffusion_factor(avg: &AveragedNetwork, state: &SystemState, n: usize) -> Result<DMatrix<f64>, AveragingError> {
    let (blocks, residual) = avg.factor_blocks(state, n)?;
    if residual > FACTOR_TOL {
        return Err(AveragingError::Factorization { residual });
    }
    let agents = avg.source.agents();
    let mut m = DMatrix::zeros(n * agents, n * agents);
    for (i, f) in blocks.iter().enumerate() {
        m.view_mut((i * n, i * n), (n, n)).copy_from(f);
    }
    Ok(m)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AveragedTrajectory {
    pub samples: Vec<SystemState>,
    pub clamp_count: usize,
    /// Largest factor residual seen at the spot checks.
    pub max_factor_residual: f64,
    pub factor_checks: usize,
}

impl AveragedTrajectory {
    pub fn last(&self) -> &SystemState {
        self.samples.last().expect("trajectory has at least the initial sample")
    }
}

/// Euler–Maruyama for the averaged system, member noise from the
/// `(seed, AveragedNoise, member)` stream. The factor residual is checked
/// on every `check_every`-th step (0 disables the checks).
pub fn simulate_averaged(
    problem: &Problem,
    avg: &AveragedNetwork,
    cfg: &IntegratorConfig,
    init: &SystemState,
    member: u64,
    check_every: usize,
) -> Result<AveragedTrajectory, AveragingError> {
    let system = SwitchedSystem::new(problem, &avg.source, cfg.eta.clone(), cfg.lambda_floor)?;
    if !(cfg.step > 0.0 && cfg.horizon > 0.0 && cfg.stride > 0) {
        return Err(DynamicsError::Config("step, horizon and stride must be positive".into()).into());
    }
    let n = problem.n();
    let dim = n * avg.source.agents();
    let noisy = avg.source.max_sigma() > 0.0;
    let mut rng = seeding::rng(cfg.seed, Stream::AveragedNoise, member);
    let mut out = AveragedTrajectory {
        samples: vec![init.clone()],
        ..Default::default()
    };
    let mut state = init.clone();
    let steps = cfg.grid_steps();
    let zero = vec![0.0; dim];
    for k in 0..steps {
        let t_end = (((k + 1) as f64) * cfg.step).min(cfg.horizon);
        let h = t_end - state.t;
        let drift = system.drift_with_laplacian(&state, &avg.laplacian)?;
        let noise = if noisy {
            let (blocks, residual) = avg.factor_blocks(&state, n)?;
            if check_every > 0 && k % check_every == 0 {
                out.factor_checks += 1;
                out.max_factor_residual = out.max_factor_residual.max(residual);
                if residual > FACTOR_TOL {
                    return Err(AveragingError::Factorization { residual });
                }
            }
            let dw = wiener_increments(&mut rng, dim, h);
            avg.noise_term(&blocks, n, &dw)
        } else {
            zero.clone()
        };
        let step = system.advance(&state, h, &drift, &noise)?;
        out.clamp_count += step.clamped;
        state = step.state;
        state.t = t_end;
        if (k + 1) % cfg.stride == 0 || k + 1 == steps {
            out.samples.push(state.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakConvergenceConfig {
    /// Decreasing switching time scales.
    pub alphas: Vec<f64>,
    pub ensemble: usize,
    /// Mode every switched path starts in.
    pub initial_mode: usize,
    /// Integration settings; `horizon` is the comparison time `T`.
    pub integrator: IntegratorConfig,
}

/// Hotelling two-sample statistic against a `χ²` quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTest {
    pub statistic: f64,
    pub dof: usize,
    pub threshold: f64,
    pub level: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    pub alpha: f64,
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
    /// `‖mean switched x̂(T) - mean averaged x̂(T)‖₂`.
    pub err: f64,
    /// Bootstrap standard error of `err`, both ensembles resampled.
    pub err_sem: f64,
    /// Ensemble mean of `f̃(mean_i x_i(T))`.
    pub cost_mean: f64,
    pub cost_sem: f64,
    pub cost_gap: f64,
    pub mean_switches: f64,
    pub null_test: NullTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakConvergenceReport {
    pub horizon: f64,
    pub ensemble: usize,
    pub initial_mode: usize,
    pub averaged_mean: Vec<f64>,
    pub averaged_sem: Vec<f64>,
    pub averaged_cost_mean: f64,
    pub averaged_cost_sem: f64,
    pub results: Vec<AlphaResult>,
    /// `err` nonincreasing between consecutive alphas up to `2·SEM`.
    pub monotone: bool,
    /// `err(first) - err(last) > 2·SEM`.
    pub separated: bool,
    pub clamp_count: usize,
    #[serde(skip)]
    pub terminal_switched: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub terminal_averaged: Vec<Vec<f64>>,
}

/// Column means and standard errors of the means.
pub fn mean_and_sem(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = samples.len();
    let dim = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut var = vec![0.0; dim];
    if m > 1 {
        for s in samples {
            var.iter_mut()
                .zip(s.iter().zip(&mean))
                .for_each(|(v, (x, mu))| *v += (x - mu) * (x - mu));
        }
        var.iter_mut().for_each(|v| *v /= (m - 1) as f64);
    }
    let sem = var.iter().map(|v| (v / m as f64).sqrt()).collect();
    (mean, sem)
}

/// Two-sample Hotelling `T²` with pooled covariance (pseudo-inverse on a
/// numerically singular covariance), compared with the `χ²_rank` quantile.
pub fn two_sample_null_test(a: &[Vec<f64>], b: &[Vec<f64>], level: f64) -> NullTest {
    let (ma, _) = mean_and_sem(a);
    let (mb, _) = mean_and_sem(b);
    let dim = ma.len();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut pooled = DMatrix::zeros(dim, dim);
    for (set, mean) in [(a, &ma), (b, &mb)] {
        for s in set {
            let d = DMatrix::from_fn(dim, 1, |k, _| s[k] - mean[k]);
            pooled += &d * d.transpose();
        }
    }
    pooled /= (na + nb - 2.0).max(1.0);
    let diff = DMatrix::from_fn(dim, 1, |k, _| ma[k] - mb[k]);
    let svd = pooled.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let statistic = if rank == 0 {
        if diff.amax() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        let pinv = svd.pseudo_inverse(tol).expect("svd computed with both factors");
        (na * nb / (na + nb)) * (diff.transpose() * pinv * &diff)[(0, 0)]
    };
    let threshold = if rank == 0 {
        0.0
    } else {
        ChiSquared::new(rank as f64).expect("positive dof").inverse_cdf(level)
    };
    NullTest {
        statistic,
        dof: rank,
        threshold,
        level,
        passed: statistic <= threshold,
    }
}

fn norm_of_mean_difference(a: &[Vec<f64>], ia: &[usize], b: &[Vec<f64>], ib: &[usize]) -> f64 {
    let dim = a[0].len();
    let mut d = vec![0.0; dim];
    for &i in ia {
        d.iter_mut().zip(&a[i]).for_each(|(v, x)| *v += x / ia.len() as f64);
    }
    for &i in ib {
        d.iter_mut().zip(&b[i]).for_each(|(v, x)| *v -= x / ib.len() as f64);
    }
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Standard deviation of `‖mean(a*) - mean(b*)‖₂` over bootstrap
/// resamples `a*`, `b*` drawn with replacement.
pub fn bootstrap_err_sem(a: &[Vec<f64>], b: &[Vec<f64>], replicates: usize, rng: &mut impl Rng) -> f64 {
    if a.len() < 2 || b.len() < 2 || replicates < 2 {
        return 0.0;
    }
    let mut ia = vec![0; a.len()];
    let mut ib = vec![0; b.len()];
    let reps: Vec<f64> = (0..replicates)
        .map(|_| {
            ia.iter_mut().for_each(|i| *i = rng.random_range(0..a.len()));
            ib.iter_mut().for_each(|i| *i = rng.random_range(0..b.len()));
            norm_of_mean_difference(a, &ia, b, &ib)
        })
        .collect();
    let mean = reps.iter().sum::<f64>() / replicates as f64;
    (reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (replicates - 1) as f64).sqrt()
}

fn cost_of_mean(problem: &Problem, x: &[f64]) -> Result<f64, AveragingError> {
    let n = problem.n();
    let agents = x.len() / n;
    let mut mean = vec![0.0; n];
    for (k, v) in x.iter().enumerate() {
        mean[k % n] += v / agents as f64;
    }
    problem
        .total_cost(&mean)
        .map_err(|e| AveragingError::Dynamics(DynamicsError::Expr(e)))
}

/// Runs `ensemble` switched trajectories per alpha and one shared averaged
/// ensemble, and compares terminal means of `x̂` and of `f̃(mean x)`.
///
/// Switched member `m` at alpha index `a` uses chain and noise streams
/// `(a + 1)·2³² + m`; averaged member `m` uses averaged-noise stream `m`.
pub fn weak_convergence_experiment(
    problem: &Problem,
    network: &Network,
    q: &Generator,
    init: &SystemState,
    cfg: &WeakConvergenceConfig,
) -> Result<WeakConvergenceReport, AveragingError> {
    if cfg.alphas.is_empty() || cfg.alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(AveragingError::Experiment("alphas must be positive and nonempty".into()));
    }
    if cfg.alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(AveragingError::Experiment("alphas must be strictly decreasing".into()));
    }
    if cfg.ensemble < MIN_ENSEMBLE {
        return Err(AveragingError::Experiment(format!(
            "ensemble must have at least {MIN_ENSEMBLE} members, got {}",
            cfg.ensemble
        )));
    }
    if cfg.initial_mode >= network.modes() {
        return Err(AveragingError::Experiment(format!(
            "initial mode {} out of range for {} modes",
            cfg.initial_mode + 1,
            network.modes()
        )));
    }
    let pi = crate::chain::stationary(q)?;
    let avg = average_laplacian(network, &pi)?;
    let icfg = &cfg.integrator;
    let horizon = icfg.horizon;
    use rayon::prelude::*;

    let averaged: Vec<(Vec<f64>, usize)> = (0..cfg.ensemble as u64)
        .into_par_iter()
        .map(|m| {
            let run = simulate_averaged(problem, &avg, icfg, init, m, 0)?;
            Ok((run.last().x().to_vec(), run.clamp_count))
        })
        .collect::<Result<_, AveragingError>>()?;
    let mut clamp_count: usize = averaged.iter().map(|r| r.1).sum();
    let averaged: Vec<Vec<f64>> = averaged.into_iter().map(|r| r.0).collect();
    let (averaged_mean, averaged_sem) = mean_and_sem(&averaged);
    let avg_costs: Vec<Vec<f64>> = averaged
        .iter()
        .map(|x| cost_of_mean(problem, x).map(|c| vec![c]))
        .collect::<Result<_, _>>()?;
    let (ac_mean, ac_sem) = mean_and_sem(&avg_costs);

    let mut results = Vec::with_capacity(cfg.alphas.len());
    let mut terminal_switched = Vec::with_capacity(cfg.alphas.len());
    for (a, &alpha) in cfg.alphas.iter().enumerate() {
        let base = ((a as u64) + 1) << 32;
        let runs: Vec<(Vec<f64>, usize, usize)> = (0..cfg.ensemble as u64)
            .into_par_iter()
            .map(|m| {
                let path = sample_member_path(q, cfg.initial_mode, alpha, horizon, icfg.seed, base + m)?;
                let traj = simulate(problem, network, &path, icfg, init, base + m)?;
                Ok((traj.last().x().to_vec(), traj.clamp_count, path.num_jumps()))
            })
            .collect::<Result<_, AveragingError>>()?;
        clamp_count += runs.iter().map(|r| r.1).sum::<usize>();
        let mean_switches = runs.iter().map(|r| r.2 as f64).sum::<f64>() / runs.len() as f64;
        let terminal: Vec<Vec<f64>> = runs.into_iter().map(|r| r.0).collect();
        let (mean, sem) = mean_and_sem(&terminal);
        let err = mean
            .iter()
            .zip(&averaged_mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mut boot = seeding::rng(icfg.seed, Stream::Diagnostics, base);
        let err_sem = bootstrap_err_sem(&terminal, &averaged, BOOTSTRAP_REPLICATES, &mut boot);
        let costs: Vec<Vec<f64>> = terminal
            .iter()
            .map(|x| cost_of_mean(problem, x).map(|c| vec![c]))
            .collect::<Result<_, _>>()?;
        let (c_mean, c_sem) = mean_and_sem(&costs);
        let null_test = two_sample_null_test(&terminal, &averaged, NULL_LEVEL);
        results.push(AlphaResult {
            alpha,
            mean,
            sem,
            err,
            err_sem,
            cost_mean: c_mean[0],
            cost_sem: c_sem[0],
            cost_gap: (c_mean[0] - ac_mean[0]).abs(),
            mean_switches,
            null_test,
        });
        terminal_switched.push(terminal);
    }
    let monotone = results
        .windows(2)
        .all(|w| w[1].err <= w[0].err + 2.0 * w[0].err_sem.hypot(w[1].err_sem));
    let (first, last) = (&results[0], &results[results.len() - 1]);
    let separated = results.len() > 1 && first.err - last.err > 2.0 * first.err_sem.hypot(last.err_sem);
    Ok(WeakConvergenceReport {
        horizon,
        ensemble: cfg.ensemble,
        initial_mode: cfg.initial_mode,
        averaged_mean,
        averaged_sem,
        averaged_cost_mean: ac_mean[0],
        averaged_cost_sem: ac_sem[0],
        results,
        monotone,
        separated,
        clamp_count,
        terminal_switched,
        terminal_averaged: averaged,
    })
}
