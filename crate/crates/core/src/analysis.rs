//! Lyapunov, Lagrangian and saddle-point diagnostics around a certified
//! equilibrium.
//!
//! `V = V1 + V2 + V3 + V4` with
//!
//! ```text
//! V1 = ½‖x̂ - x̂*‖² + ½‖(x̂ - x̂*) + (θ̂ - θ̂*)‖²
//! V2 = ½ Σ η_k (λ_k - λ*_k)²
//! V3 = Σ_{k∈Ω} [(λ_k - λ*_k) - λ*_k ln(λ_k / λ*_k)] + Σ_{k∉Ω} (λ_k - λ*_k)²
//! V4 = ½ Σ (ν_k - ν*_k)²
//! ```
//!
//! where `Ω` holds the multipliers with `λ*_k > 0`. Every term is
//! nonnegative and all vanish exactly at the equilibrium.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Equilibrium, SystemState};
use crate::expr::ExprError;
use crate::graph::apply_stacked;
use crate::problem::Problem;

/// Allowed violation of the saddle-point inequalities.
pub const SADDLE_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("λ[{index}] = {value} must be positive where a logarithm is taken")]
    NonPositiveLambda { index: usize, value: f64 },
    #[error("state does not match the equilibrium: {0}")]
    Shape(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Bregman divergence of `φ(x) = x ln x`: `a ln(a/b) - a + b`.
pub fn bregman_xlogx(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return b;
    }
    a * (a / b).ln() - a + b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub v: f64,
    /// `(k, D_φ(λ_k, λ*_k))` for every `k ∈ Ω`.
    pub bregman_terms: Vec<(usize, f64)>,
    pub consensus_error: f64,
    pub opt_error: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn consensus_error(x: &[f64], n: usize) -> f64 {
    let agents = x.len() / n;
    let mut mean = vec![0.0; n];
    for (k, v) in x.iter().enumerate() {
        mean[k % n] += v / agents as f64;
    }
    x.iter()
        .enumerate()
        .map(|(k, v)| (v - mean[k % n]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `max_i ‖x_i - x*‖`.
pub fn opt_error(x: &[f64], x_star: &[f64]) -> f64 {
    x.chunks(x_star.len())
        .map(|xi| sq_dist(xi, x_star).sqrt())
        .fold(0.0, f64::max)
}

pub fn lyapunov(state: &SystemState, eq: &Equilibrium, eta: &[f64]) -> Result<LyapunovReport, AnalysisError> {
    let x = state.x();
    if x.len() != eq.x_hat.len() || state.lambda.len() != eq.lambda.len() || state.nu.len() != eq.nu.len() {
        return Err(AnalysisError::Shape(format!(
            "x: {} vs {}, λ: {} vs {}, ν: {} vs {}",
            x.len(),
            eq.x_hat.len(),
            state.lambda.len(),
            eq.lambda.len(),
            state.nu.len(),
            eq.nu.len()
        )));
    }
    if eta.len() != eq.lambda.len() {
        return Err(AnalysisError::Shape(format!("eta has {} entries", eta.len())));
    }
    let sum_star: Vec<f64> = eq.x_hat.iter().zip(&eq.theta_hat).map(|(a, b)| a + b).collect();
    let v1 = 0.5 * sq_dist(x, &eq.x_hat) + 0.5 * sq_dist(state.x_plus_theta(), &sum_star);

    let v2 = 0.5
        * state
            .lambda
            .iter()
            .zip(&eq.lambda)
            .zip(eta)
            .map(|((l, ls), e)| e * (l - ls) * (l - ls))
            .sum::<f64>();

    let mut v3 = 0.0;
    let mut bregman_terms = Vec::with_capacity(eq.omega.len());
    for (k, (&l, &ls)) in state.lambda.iter().zip(&eq.lambda).enumerate() {
        if eq.omega.contains(&k) {
            if !(l > 0.0) {
                return Err(AnalysisError::NonPositiveLambda { index: k, value: l });
            }
            v3 += (l - ls) - ls * (l / ls).ln();
            bregman_terms.push((k, bregman_xlogx(l, ls)));
        } else {
            v3 += (l - ls) * (l - ls);
        }
    }

    let v4 = 0.5 * sq_dist(&state.nu, &eq.nu);
    let n = eq.x_star.len();
    Ok(LyapunovReport {
        v1,
        v2,
        v3,
        v4,
        v: v1 + v2 + v3 + v4,
        bregman_terms,
        consensus_error: consensus_error(x, n),
        opt_error: opt_error(x, &eq.x_star),
    })
}

/// `ℏ = ½(c - ½c²κ²)` for a fixed network.
pub fn hbar_fixed(c: f64, kappa: f64) -> f64 {
    0.5 * (c - 0.5 * c * c * kappa * kappa)
}

/// `ℏ_π = ½(c π_min - (3/2) c² κ² π_max)` for the switching case, paired
/// with `L_1 + … + L_S`.
pub fn hbar_switching(c: f64, kappa: f64, pi_min: f64, pi_max: f64) -> f64 {
    0.5 * (c * pi_min - 1.5 * c * c * kappa * kappa * pi_max)
}

/// Lagrangian over stacked variables,
///
/// `Φ = Σ f_i(x_i) + (x̂ - x̂*)ᵀθ̂ + ℏ x̂ᵀ(L ⊗ I)x̂ + Σ λ_ij g_ij(x_i) + Σ ν_ij h_ij(x_i)`.
///
/// `x̂*` comes from the equilibrium, so `Φ` is only defined relative to a
/// certificate.
#[allow(clippy::too_many_arguments)]
pub fn lagrangian_phi(
    problem: &Problem,
    eq: &Equilibrium,
    x: &[f64],
    theta: &[f64],
    lambda: &[f64],
    nu: &[f64],
    hbar: f64,
    laplacian: &DMatrix<f64>,
) -> Result<f64, AnalysisError> {
    let n = problem.n();
    let layout = problem.layout();
    let mut phi = 0.0;
    for (i, agent) in problem.agents().iter().enumerate() {
        let xi = &x[i * n..(i + 1) * n];
        phi += agent.cost.eval(xi)?;
        for (j, g) in agent.inequalities.iter().enumerate() {
            phi += lambda[layout.ineq_range(i).start + j] * g.eval(xi)?;
        }
        for (j, h) in agent.equalities.iter().enumerate() {
            phi += nu[layout.eq_range(i).start + j] * h.eval(xi)?;
        }
    }
    phi += x
        .iter()
        .zip(&eq.x_hat)
        .zip(theta)
        .map(|((a, b), t)| (a - b) * t)
        .sum::<f64>();
    let mut lx = vec![0.0; x.len()];
    apply_stacked(laplacian, n, x, &mut lx);
    phi += hbar * x.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>();
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub samples: usize,
    /// `Φ(x̂*, θ̂*, λ̂*, ν̂*)`.
    pub center: f64,
    /// Smallest `center - Φ(x̂*, θ̂, λ̂, ν̂)`.
    pub min_left_slack: f64,
    /// Smallest `Φ(x̂, θ̂*, λ̂*, ν̂*) - center`.
    pub min_right_slack: f64,
    pub passed: bool,
}

/// Samples `Φ(x̂*, θ̂, λ̂, ν̂) ≤ Φ(x̂*, θ̂*, λ̂*, ν̂*) ≤ Φ(x̂, θ̂*, λ̂*, ν̂*)` on
/// random perturbations of size up to `radius` with `λ̂ ≥ 0`.
pub fn saddle_point_check<R: Rng>(
    problem: &Problem,
    eq: &Equilibrium,
    hbar: f64,
    laplacian: &DMatrix<f64>,
    samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<SaddleReport, AnalysisError> {
    let center = lagrangian_phi(problem, eq, &eq.x_hat, &eq.theta_hat, &eq.lambda, &eq.nu, hbar, laplacian)?;
    let perturb = |v: &[f64], rng: &mut R| -> Vec<f64> {
        v.iter().map(|a| a + rng.random_range(-radius..=radius)).collect()
    };
    let mut min_left = f64::INFINITY;
    let mut min_right = f64::INFINITY;
    for _ in 0..samples {
        let theta = perturb(&eq.theta_hat, rng);
        let lambda: Vec<f64> = perturb(&eq.lambda, rng).into_iter().map(f64::abs).collect();
        let nu = perturb(&eq.nu, rng);
        let left = lagrangian_phi(problem, eq, &eq.x_hat, &theta, &lambda, &nu, hbar, laplacian)?;
        let x = perturb(&eq.x_hat, rng);
        let right = lagrangian_phi(problem, eq, &x, &eq.theta_hat, &eq.lambda, &eq.nu, hbar, laplacian)?;
        min_left = min_left.min(center - left);
        min_right = min_right.min(right - center);
    }
    Ok(SaddleReport {
        samples,
        center,
        min_left_slack: min_left,
        min_right_slack: min_right,
        passed: min_left >= -SADDLE_SLACK && min_right >= -SADDLE_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: f64,
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub consensus_error: f64,
    pub opt_error: f64,
    /// `f̃(mean_i x_i) - p*`, with `p*` the total cost at the certified `x*`.
    pub cost_gap: f64,
}

pub fn convergence_metrics<'a>(
    problem: &Problem,
    eq: &Equilibrium,
    eta: &[f64],
    states: impl IntoIterator<Item = &'a SystemState>,
) -> Result<Vec<MetricRow>, AnalysisError> {
    let p_star = problem.total_cost(&eq.x_star)?;
    let n = problem.n();
    states
        .into_iter()
        .map(|s| {
            let r = lyapunov(s, eq, eta)?;
            Ok(MetricRow {
                t: s.t,
                v: r.v,
                v1: r.v1,
                v2: r.v2,
                v3: r.v3,
                v4: r.v4,
                consensus_error: r.consensus_error,
                opt_error: r.opt_error,
                cost_gap: problem.total_cost(&s.mean_x(n))? - p_star,
            })
        })
        .collect()
}

/// First sample index where `V` increases by more than
/// `tol · (1 + V(t_k))`, if any.
pub fn first_lyapunov_increase(rows: &[MetricRow], tol: f64) -> Option<usize> {
    rows.windows(2)
        .position(|w| w[1].v > w[0].v + tol * (1.0 + w[0].v))
        .map(|k| k + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBoundRow {
    pub t: f64,
    /// Finite-difference estimate of `𝔼[𝒜V]` between this sample and the next.
    pub lhs: f64,
    pub lhs_sem: f64,
    /// Ensemble mean of `Φ(x̂*, θ̂, λ̂, ν̂) - Φ(x̂, θ̂*, λ̂*, ν̂*) - (ℏλ₂ - 1)‖x̂ - x̂*‖²`.
    pub rhs: f64,
    pub rhs_sem: f64,
}

fn mean_sem(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Evaluates both sides of the generator bound along an ensemble whose
/// members share sample times. Reported only; the left side is a noisy
/// Monte-Carlo difference quotient.
#[allow(clippy::too_many_arguments)]
pub fn generator_bound_diagnostic(
    problem: &Problem,
    eq: &Equilibrium,
    eta: &[f64],
    hbar: f64,
    laplacian: &DMatrix<f64>,
    lambda2: f64,
    ensemble: &[Vec<SystemState>],
) -> Result<Vec<GeneratorBoundRow>, AnalysisError> {
    let len = ensemble.iter().map(Vec::len).min().unwrap_or(0);
    let mut rows = Vec::new();
    for k in 0..len.saturating_sub(1) {
        let mut dv = Vec::with_capacity(ensemble.len());
        let mut rhs = Vec::with_capacity(ensemble.len());
        let dt = ensemble[0][k + 1].t - ensemble[0][k].t;
        for member in ensemble {
            let (s0, s1) = (&member[k], &member[k + 1]);
            dv.push((lyapunov(s1, eq, eta)?.v - lyapunov(s0, eq, eta)?.v) / dt);
            let theta = s0.theta();
            let left = lagrangian_phi(problem, eq, &eq.x_hat, &theta, &s0.lambda, &s0.nu, hbar, laplacian)?;
            let right = lagrangian_phi(problem, eq, s0.x(), &eq.theta_hat, &eq.lambda, &eq.nu, hbar, laplacian)?;
            rhs.push(left - right - (hbar * lambda2 - 1.0) * sq_dist(s0.x(), &eq.x_hat));
        }
        let (lhs, lhs_sem) = mean_sem(&dv);
        let (r, r_sem) = mean_sem(&rhs);
        rows.push(GeneratorBoundRow {
            t: ensemble[0][k].t,
            lhs,
            lhs_sem,
            rhs: r,
            rhs_sem: r_sem,
        });
    }
    Ok(rows)
}
