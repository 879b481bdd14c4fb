//! The switching primal-dual SDE and its Euler–Maruyama integrator.
//!
//! For agent `i` in mode `s` (Itô form):
//!
//! ```text
//! dx_i = [-c (L_s x)_i - θ_i - ∇f_i - Σ_j λ_ij ∇g_ij - Σ_k ν_ik ∇h_ik] dt + c M_s^i dw_i
//! dθ_i = c (L_s x)_i dt - c M_s^i dw_i
//! dλ_ij = λ_ij / (1 + η_ij λ_ij) · g_ij(x_i) dt
//! dν_ik = h_ik(x_i) dt
//! ```
//!
//! where column `j` of `M_s^i` is `a_s^{ij} σ_ji (x_j - x_i)`. The same
//! increment drives `x` and `θ` with opposite signs, so `x + θ` carries no
//! noise. The state stores `x` and `x + θ` directly, which makes that
//! cancellation exact in floating point rather than approximate.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{StationaryDist, SwitchPath};
use crate::expr::ExprError;
use crate::graph::{apply_stacked, jointly_connected, lambda2, Network, DEFAULT_CONNECTIVITY_TOL};
use crate::problem::{KktCertificate, Problem};
use crate::seeding::{self, Stream};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_LAMBDA_FLOOR: f64 = 1e-12;
/// Largest allowed KKT stationarity residual when building an equilibrium.
pub const DEFAULT_EQUILIBRIUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("non-finite state at t = {t} (step {step} too large?)")]
    NonFinite { t: f64, step: f64 },
    #[error("state dimensions do not match the problem: {0}")]
    Shape(String),
    #[error("network has {network} agents, problem has {problem}")]
    AgentMismatch { network: usize, problem: usize },
    #[error("certificate residual {residual:e} exceeds tolerance {tol:e}; refusing to build equilibrium")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("path horizon {path} shorter than integration horizon {horizon}")]
    PathTooShort { path: f64, horizon: f64 },
}

/// Stacked `(x̂, θ̂, λ̂, ν̂)` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    x: Vec<f64>,
    /// `x̂ + θ̂`, kept as the primary coordinate.
    x_plus_theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
}

impl SystemState {
    pub fn new(t: f64, x: Vec<f64>, theta: Vec<f64>, lambda: Vec<f64>, nu: Vec<f64>) -> Self {
        assert_eq!(x.len(), theta.len(), "x and theta must have equal length");
        let x_plus_theta = x.iter().zip(&theta).map(|(a, b)| a + b).collect();
        Self {
            t,
            x,
            x_plus_theta,
            lambda,
            nu,
        }
    }

    /// Builds a state from `x` and `x + θ` without rounding either.
    pub fn from_sum(t: f64, x: Vec<f64>, x_plus_theta: Vec<f64>, lambda: Vec<f64>, nu: Vec<f64>) -> Self {
        assert_eq!(x.len(), x_plus_theta.len());
        Self {
            t,
            x,
            x_plus_theta,
            lambda,
            nu,
        }
    }

    /// Per-agent points, `θ_i(0) = 0` and constant multipliers.
    pub fn from_agents(points: &[Vec<f64>], lambda: Vec<f64>, nu: Vec<f64>) -> Self {
        let x: Vec<f64> = points.iter().flatten().copied().collect();
        let theta = vec![0.0; x.len()];
        Self::new(0.0, x, theta, lambda, nu)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn x_plus_theta(&self) -> &[f64] {
        &self.x_plus_theta
    }

    pub fn theta(&self) -> Vec<f64> {
        self.x_plus_theta
            .iter()
            .zip(&self.x)
            .map(|(s, x)| s - x)
            .collect()
    }

    pub fn agent_x(&self, agent: usize, n: usize) -> &[f64] {
        &self.x[agent * n..(agent + 1) * n]
    }

    /// `Σ_i θ_i`.
    pub fn theta_sum(&self, n: usize) -> Vec<f64> {
        let theta = self.theta();
        let mut sum = vec![0.0; n];
        for (k, v) in theta.iter().enumerate() {
            sum[k % n] += v;
        }
        sum
    }

    pub fn mean_x(&self, n: usize) -> Vec<f64> {
        let agents = self.x.len() / n;
        let mut m = vec![0.0; n];
        for (k, v) in self.x.iter().enumerate() {
            m[k % n] += v;
        }
        m.iter_mut().for_each(|v| *v /= agents as f64);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(&self.x_plus_theta)
            .chain(&self.lambda)
            .chain(&self.nu)
            .all(|v| v.is_finite())
    }
}

/// Drift blocks `(dx̂, dθ̂, dλ̂, dν̂)/dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
}

impl Drift {
    pub fn norm(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.theta)
            .chain(&self.lambda)
            .chain(&self.nu)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Problem, network and multiplier gains bound together.
#[derive(Debug, Clone)]
pub struct SwitchedSystem<'a> {
    problem: &'a Problem,
    network: &'a Network,
    eta: Vec<f64>,
    lambda_floor: f64,
}

/// Outcome of one Euler–Maruyama step.
#[derive(Debug, Clone)]
pub struct Step {
    pub state: SystemState,
    /// Number of multiplier components clamped at the floor.
    pub clamped: usize,
}

impl<'a> SwitchedSystem<'a> {
    pub fn new(problem: &'a Problem, network: &'a Network, eta: Vec<f64>, lambda_floor: f64) -> Result<Self, DynamicsError> {
        if network.agents() != problem.num_agents() {
            return Err(DynamicsError::AgentMismatch {
                network: network.agents(),
                problem: problem.num_agents(),
            });
        }
        if eta.len() != problem.r() {
            return Err(DynamicsError::Config(format!(
                "eta has {} entries, problem has {} inequality constraints",
                eta.len(),
                problem.r()
            )));
        }
        if eta.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(DynamicsError::Config("eta entries must be positive".into()));
        }
        if !(lambda_floor >= 0.0 && lambda_floor.is_finite()) {
            return Err(DynamicsError::Config("lambda_floor must be nonnegative".into()));
        }
        Ok(Self {
            problem,
            network,
            eta,
            lambda_floor,
        })
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn lambda_floor(&self) -> f64 {
        self.lambda_floor
    }

    fn check_shape(&self, state: &SystemState) -> Result<(), DynamicsError> {
        let nn = self.problem.n() * self.problem.num_agents();
        if state.x.len() != nn || state.lambda.len() != self.problem.r() || state.nu.len() != self.problem.s() {
            return Err(DynamicsError::Shape(format!(
                "expected x: {nn}, λ: {}, ν: {}; got {}, {}, {}",
                self.problem.r(),
                self.problem.s(),
                state.x.len(),
                state.lambda.len(),
                state.nu.len()
            )));
        }
        Ok(())
    }

    /// Drift in mode `mode`.
    pub fn drift(&self, state: &SystemState, mode: usize) -> Result<Drift, DynamicsError> {
        self.drift_with_laplacian(state, self.network.laplacian(mode))
    }

    /// Drift with an arbitrary coupling Laplacian (a mode's, or an average).
    pub fn drift_with_laplacian(&self, state: &SystemState, laplacian: &DMatrix<f64>) -> Result<Drift, DynamicsError> {
        self.check_shape(state)?;
        let n = self.problem.n();
        let c = self.network.coupling();
        let layout = self.problem.layout();
        let theta = state.theta();

        let mut lx = vec![0.0; state.x.len()];
        apply_stacked(laplacian, n, &state.x, &mut lx);

        let mut dx = vec![0.0; state.x.len()];
        let mut dlambda = vec![0.0; self.problem.r()];
        let mut dnu = vec![0.0; self.problem.s()];
        for (i, agent) in self.problem.agents().iter().enumerate() {
            let xi = state.agent_x(i, n);
            let mut local = agent.cost.grad(xi)?;
            for (j, g) in agent.inequalities.iter().enumerate() {
                let k = layout.ineq_range(i).start + j;
                let (gv, gg) = g.value_and_grad(xi)?;
                let l = state.lambda[k];
                local.iter_mut().zip(&gg).for_each(|(a, b)| *a += l * b);
                dlambda[k] = l / (1.0 + self.eta[k] * l) * gv;
            }
            for (j, h) in agent.equalities.iter().enumerate() {
                let k = layout.eq_range(i).start + j;
                let (hv, hg) = h.value_and_grad(xi)?;
                let v = state.nu[k];
                local.iter_mut().zip(&hg).for_each(|(a, b)| *a += v * b);
                dnu[k] = hv;
            }
            for d in 0..n {
                let idx = i * n + d;
                dx[idx] = -c * lx[idx] - theta[idx] - local[d];
            }
        }
        let dtheta = lx.iter().map(|v| c * v).collect();
        Ok(Drift {
            x: dx,
            theta: dtheta,
            lambda: dlambda,
            nu: dnu,
        })
    }

    /// Dense `M_s = diag(M_s^1, …, M_s^N)` of shape `nN × N²`. Column
    /// `i·N + j` belongs to channel `j -> i`.
    pub fn diffusion_matrix(&self, state: &SystemState, mode: usize) -> DMatrix<f64> {
        let n = self.problem.n();
        let agents = self.network.agents();
        let mut m = DMatrix::zeros(n * agents, agents * agents);
        for i in 0..agents {
            for &j in self.network.neighbors(mode, i) {
                let sigma = self.network.channel_sigma(j, i);
                for d in 0..n {
                    m[(i * n + d, i * agents + j)] = sigma * (state.x[j * n + d] - state.x[i * n + d]);
                }
            }
        }
        m
    }

    /// `c · M_s · dw` without forming `M_s`.
    pub fn noise_term(&self, state: &SystemState, mode: usize, dw: &[f64]) -> Vec<f64> {
        let n = self.problem.n();
        let agents = self.network.agents();
        let c = self.network.coupling();
        let mut out = vec![0.0; n * agents];
        for i in 0..agents {
            for &j in self.network.neighbors(mode, i) {
                let w = self.network.channel_sigma(j, i) * dw[i * agents + j];
                if w != 0.0 {
                    for d in 0..n {
                        out[i * n + d] += w * (state.x[j * n + d] - state.x[i * n + d]);
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// One Euler–Maruyama step in `mode` with caller-supplied increments
    /// `dw ~ N(0, h I_{N²})`.
    pub fn em_step(&self, state: &SystemState, mode: usize, h: f64, dw: &[f64]) -> Result<Step, DynamicsError> {
        let agents = self.network.agents();
        if dw.len() != agents * agents {
            return Err(DynamicsError::Shape(format!(
                "noise increment has {} entries, expected {}",
                dw.len(),
                agents * agents
            )));
        }
        let drift = self.drift(state, mode)?;
        let noise = self.noise_term(state, mode, dw);
        self.advance(state, h, &drift, &noise)
    }

    /// Applies `drift` over `h` plus an already scaled noise term on `x`
    /// (the same term enters `θ` with the opposite sign).
    pub fn advance(&self, state: &SystemState, h: f64, drift: &Drift, x_noise: &[f64]) -> Result<Step, DynamicsError> {
        let x = state
            .x
            .iter()
            .zip(&drift.x)
            .zip(x_noise)
            .map(|((x, dx), w)| x + h * dx + w)
            .collect();
        let x_plus_theta = state
            .x_plus_theta
            .iter()
            .zip(drift.x.iter().zip(&drift.theta))
            .map(|(s, (dx, dth))| s + h * (dx + dth))
            .collect();
        let mut clamped = 0;
        let floor = self.lambda_floor.max(f64::MIN_POSITIVE);
        let lambda = state
            .lambda
            .iter()
            .zip(&drift.lambda)
            .map(|(l, dl)| {
                let next = l + h * dl;
                if next < self.lambda_floor || next <= 0.0 {
                    clamped += 1;
                    floor
                } else {
                    next
                }
            })
            .collect();
        let nu = state.nu.iter().zip(&drift.nu).map(|(v, dv)| v + h * dv).collect();
        let next = SystemState {
            t: state.t + h,
            x,
            x_plus_theta,
            lambda,
            nu,
        };
        if !next.is_finite() {
            return Err(DynamicsError::NonFinite { t: state.t, step: h });
        }
        Ok(Step { state: next, clamped })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step: f64,
    pub horizon: f64,
    /// Record every `stride`-th grid step (plus `t = 0` and the final time).
    pub stride: usize,
    pub eta: Vec<f64>,
    pub lambda_floor: f64,
    /// Root seed; member noise streams derive from it.
    pub seed: u64,
}

impl IntegratorConfig {
    pub fn new(horizon: f64, eta: Vec<f64>, seed: u64) -> Self {
        Self {
            step: DEFAULT_STEP,
            horizon,
            stride: 100,
            eta,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
            seed,
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(DynamicsError::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(DynamicsError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.stride == 0 {
            return Err(DynamicsError::Config("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of grid steps covering the horizon.
    pub fn grid_steps(&self) -> usize {
        let raw = self.horizon / self.step;
        let rounded = raw.round();
        if (raw - rounded).abs() <= 1e-9 * raw.max(1.0) {
            rounded as usize
        } else {
            raw.ceil() as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub mode: usize,
    pub state: SystemState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub clamp_count: usize,
    /// Integration substeps actually taken (grid steps split at jumps).
    pub substeps: usize,
    pub mode_switches: usize,
}

impl Trajectory {
    pub fn last(&self) -> &SystemState {
        &self.samples.last().expect("trajectory has at least the initial sample").state
    }
}

/// Draws `count` independent `N(0, h)` increments.
pub fn wiener_increments<R: Rng>(rng: &mut R, count: usize, h: f64) -> Vec<f64> {
    let scale = h.sqrt();
    (0..count)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Fixed-step integration on the grid `k·h`, with substeps split exactly
/// at every jump of `path`. Noise for ensemble member `member` comes from
/// the `(seed, Noise, member)` stream.
pub fn simulate(
    problem: &Problem,
    network: &Network,
    path: &SwitchPath,
    cfg: &IntegratorConfig,
    init: &SystemState,
    member: u64,
) -> Result<Trajectory, DynamicsError> {
    cfg.validate()?;
    if path.horizon() + 1e-12 < cfg.horizon {
        return Err(DynamicsError::PathTooShort {
            path: path.horizon(),
            horizon: cfg.horizon,
        });
    }
    let system = SwitchedSystem::new(problem, network, cfg.eta.clone(), cfg.lambda_floor)?;
    system.check_shape(init)?;
    let mut rng = seeding::rng(cfg.seed, Stream::Noise, member);
    let agents = network.agents();
    let noisy = network.max_sigma() > 0.0;

    let mut traj = Trajectory {
        samples: vec![Sample {
            mode: path.mode_at(0.0).unwrap_or(path.initial_mode()),
            state: init.clone(),
        }],
        ..Default::default()
    };
    let mut state = init.clone();
    let mut seg = path.segment_at(init.t.max(0.0));
    let steps = cfg.grid_steps();
    let zero_dw = vec![0.0; agents * agents];
    for k in 0..steps {
        let t_end = (((k + 1) as f64) * cfg.step).min(cfg.horizon);
        while state.t < t_end {
            let next_jump = path.times().get(seg + 1).copied().unwrap_or(f64::INFINITY);
            let stop = next_jump.min(t_end);
            let h = stop - state.t;
            let mode = path.modes()[seg];
            if h > 0.0 {
                let dw = if noisy {
                    wiener_increments(&mut rng, agents * agents, h)
                } else {
                    zero_dw.clone()
                };
                let step = system.em_step(&state, mode, h, &dw)?;
                traj.clamp_count += step.clamped;
                traj.substeps += 1;
                state = step.state;
            }
            state.t = stop;
            if stop >= next_jump {
                seg += 1;
                traj.mode_switches += 1;
            }
        }
        if (k + 1) % cfg.stride == 0 || k + 1 == steps {
            traj.samples.push(Sample {
                mode: path.modes()[seg],
                state: state.clone(),
            });
        }
    }
    Ok(traj)
}

/// Runs members `0..count` in parallel; results are ordered by member.
pub fn simulate_ensemble<F>(count: usize, run: F) -> Result<Vec<Trajectory>, DynamicsError>
where
    F: Fn(u64) -> Result<Trajectory, DynamicsError> + Sync,
{
    (0..count as u64).into_par_iter().map(&run).collect()
}

/// The equilibrium `(1 ⊗ x*, θ̂*, λ̂*, ν̂*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x_star: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    /// Stacked indices with `λ*_k` above the active tolerance.
    pub omega: Vec<usize>,
}

impl Equilibrium {
    pub fn state(&self) -> SystemState {
        SystemState::new(
            0.0,
            self.x_hat.clone(),
            self.theta_hat.clone(),
            self.lambda.clone(),
            self.nu.clone(),
        )
    }

    pub fn theta_sum(&self, n: usize) -> Vec<f64> {
        let mut sum = vec![0.0; n];
        for (k, v) in self.theta_hat.iter().enumerate() {
            sum[k % n] += v;
        }
        sum
    }
}

/// `θ*_i = -∇f_i(x*) - Σ_j λ*_ij ∇g_ij(x*) - Σ_j ν*_ij ∇h_ij(x*)`.
pub fn build_equilibrium(problem: &Problem, cert: &KktCertificate, tol: f64) -> Result<Equilibrium, DynamicsError> {
    let residual = cert
        .residuals
        .stationarity
        .max(cert.residuals.primal_eq)
        .max(cert.residuals.primal_ineq)
        .max(cert.residuals.complementarity);
    if !(residual <= tol) {
        return Err(DynamicsError::ResidualTooLarge { residual, tol });
    }
    let n = problem.n();
    let layout = problem.layout();
    let x = &cert.x_star;
    let mut theta = Vec::with_capacity(n * problem.num_agents());
    for (i, agent) in problem.agents().iter().enumerate() {
        let mut local = agent.cost.grad(x)?;
        for (j, g) in agent.inequalities.iter().enumerate() {
            let l = cert.lambda_star[layout.ineq_range(i).start + j];
            local.iter_mut().zip(g.grad(x)?).for_each(|(a, b)| *a += l * b);
        }
        for (j, h) in agent.equalities.iter().enumerate() {
            let v = cert.nu_star[layout.eq_range(i).start + j];
            local.iter_mut().zip(h.grad(x)?).for_each(|(a, b)| *a += v * b);
        }
        theta.extend(local.into_iter().map(|v| -v));
    }
    Ok(Equilibrium {
        x_star: x.clone(),
        x_hat: (0..problem.num_agents()).flat_map(|_| x.iter().copied()).collect(),
        theta_hat: theta,
        lambda: cert.lambda_star.clone(),
        nu: cert.nu_star.clone(),
        omega: cert.omega(),
    })
}

/// Selects the convergence conditions to check.
#[derive(Debug, Clone, Copy)]
pub enum Regime<'a> {
    /// A single graph, given by mode index.
    Fixed { mode: usize },
    /// Markov switching (or its average) with stationary distribution `pi`.
    Switching { pi: &'a StationaryDist },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Gate {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub gates: Vec<Gate>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Gate> {
        self.gates.iter().filter(|g| !g.passed)
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }

    pub fn push(&mut self, gate: Gate) {
        self.gates.push(gate);
    }
}

/// `c < (2/3)·ratio·κ⁻²`, with an infinite bound at `κ = 0`.
fn coupling_bound(kappa: f64, ratio: f64) -> f64 {
    if kappa == 0.0 {
        f64::INFINITY
    } else {
        2.0 / 3.0 * ratio / (kappa * kappa)
    }
}

/// Noise bound, coupling bound and the `κ ≤ √λ₂ / 2` gate for the regime.
pub fn check_assumptions(network: &Network, regime: Regime<'_>) -> AssumptionReport {
    let mut report = AssumptionReport::default();
    let kappa = network.kappa();
    let c = network.coupling();
    let max_sigma = network.max_sigma();
    report.push(Gate::new(
        "A2",
        max_sigma <= kappa,
        format!("max channel intensity {max_sigma} <= kappa {kappa}"),
    ));
    let (coupling_name, ratio, lambda2_value, lambda2_what) = match regime {
        Regime::Fixed { mode } => (
            "A3",
            1.0,
            lambda2(network.laplacian(mode)).unwrap_or(0.0),
            "lambda2(L)",
        ),
        Regime::Switching { pi } => {
            let connected = jointly_connected(network.graphs(), DEFAULT_CONNECTIVITY_TOL);
            let positive = pi.as_slice().len() == network.modes() && pi.min() > 0.0;
            report.push(Gate::new(
                "A4",
                connected && positive,
                format!(
                    "union graph connected: {connected}; stationary distribution positive over {} modes: {positive}",
                    network.modes()
                ),
            ));
            (
                "A3'",
                pi.min() / pi.max(),
                lambda2(&network.laplacian_sum()).unwrap_or(0.0),
                "lambda2(sum of L_s)",
            )
        }
    };
    let bound = coupling_bound(kappa, ratio);
    report.push(Gate::new(
        coupling_name,
        c > 0.0 && c < bound,
        format!("0 < c = {c} < {bound}"),
    ));
    let rhs = lambda2_value.sqrt() / 2.0;
    report.push(Gate::new(
        "kappa-connectivity",
        kappa <= rhs && lambda2_value > DEFAULT_CONNECTIVITY_TOL,
        format!("kappa {kappa} <= sqrt({lambda2_what} = {lambda2_value}) / 2 = {rhs}"),
    ));
    report
}

/// Initial-condition requirements: `λ(0) > 0` and `Σ_i θ_i(0) = 0`.
pub fn check_initial(state: &SystemState, n: usize) -> Vec<Gate> {
    let min_lambda = state.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let theta_sum = state.theta_sum(n);
    let theta_norm = theta_sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    vec![
        Gate::new(
            "lambda0-positive",
            state.lambda.iter().all(|&l| l > 0.0),
            format!("min lambda(0) = {min_lambda}"),
        ),
        Gate::new(
            "theta0-sum-zero",
            theta_norm <= 1e-12,
            format!("|sum theta_i(0)| = {theta_norm}"),
        ),
    ]
}
