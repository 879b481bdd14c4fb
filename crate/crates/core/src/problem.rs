//! The N-agent constrained problem, constraint qualifications and KKT
//! certificates.
//!
//! Multipliers are stacked agent by agent: `λ = col(λ_1, …, λ_N)` with
//! `λ_i ∈ R^{r_i}`, and likewise for `ν`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};

pub const DEFAULT_TOL_ACTIVE: f64 = 1e-8;
/// Relative to the largest singular value.
pub const DEFAULT_TOL_RANK: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("problem needs at least one agent")]
    NoAgents,
    #[error("agent {agent}: {what} expression has dimension {got}, problem has {expected}")]
    Dimension {
        agent: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("LICQ violated: {0}")]
    LicqViolated(String),
}

#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub cost: Expr,
    pub inequalities: Vec<Expr>,
    pub equalities: Vec<Expr>,
}

impl AgentSpec {
    pub fn new(cost: Expr, inequalities: Vec<Expr>, equalities: Vec<Expr>) -> Self {
        Self {
            cost,
            inequalities,
            equalities,
        }
    }

    pub fn parse(cost: &str, ineq: &[&str], eq: &[&str], n: usize) -> Result<Self, ExprError> {
        Ok(Self {
            cost: Expr::parse(cost, n)?,
            inequalities: ineq.iter().map(|s| Expr::parse(s, n)).collect::<Result<_, _>>()?,
            equalities: eq.iter().map(|s| Expr::parse(s, n)).collect::<Result<_, _>>()?,
        })
    }
}

/// Offsets of each agent's multipliers inside the stacked vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub agents: usize,
    ineq_offsets: Vec<usize>,
    eq_offsets: Vec<usize>,
}

impl Layout {
    pub fn r(&self) -> usize {
        *self.ineq_offsets.last().unwrap()
    }

    pub fn s(&self) -> usize {
        *self.eq_offsets.last().unwrap()
    }

    pub fn ineq_range(&self, agent: usize) -> std::ops::Range<usize> {
        self.ineq_offsets[agent]..self.ineq_offsets[agent + 1]
    }

    pub fn eq_range(&self, agent: usize) -> std::ops::Range<usize> {
        self.eq_offsets[agent]..self.eq_offsets[agent + 1]
    }

    /// Agent owning stacked inequality `k`, with the local index.
    pub fn ineq_owner(&self, k: usize) -> (usize, usize) {
        let i = self.ineq_offsets.partition_point(|&o| o <= k) - 1;
        (i, k - self.ineq_offsets[i])
    }

    pub fn eq_owner(&self, k: usize) -> (usize, usize) {
        let i = self.eq_offsets.partition_point(|&o| o <= k) - 1;
        (i, k - self.eq_offsets[i])
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    n: usize,
    agents: Vec<AgentSpec>,
    layout: Layout,
}

impl Problem {
    pub fn new(n: usize, agents: Vec<AgentSpec>) -> Result<Self, ProblemError> {
        if agents.is_empty() {
            return Err(ProblemError::NoAgents);
        }
        for (i, a) in agents.iter().enumerate() {
            let exprs = std::iter::once(("cost", &a.cost))
                .chain(a.inequalities.iter().map(|e| ("inequality", e)))
                .chain(a.equalities.iter().map(|e| ("equality", e)));
            for (what, e) in exprs {
                if e.dim() != n {
                    return Err(ProblemError::Dimension {
                        agent: i,
                        what,
                        expected: n,
                        got: e.dim(),
                    });
                }
            }
        }
        let mut ineq_offsets = vec![0];
        let mut eq_offsets = vec![0];
        for a in &agents {
            ineq_offsets.push(ineq_offsets.last().unwrap() + a.inequalities.len());
            eq_offsets.push(eq_offsets.last().unwrap() + a.equalities.len());
        }
        let layout = Layout {
            n,
            agents: agents.len(),
            ineq_offsets,
            eq_offsets,
        };
        Ok(Self { n, agents, layout })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentSpec {
        &self.agents[i]
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn r(&self) -> usize {
        self.layout.r()
    }

    pub fn s(&self) -> usize {
        self.layout.s()
    }

    /// `f̃(x) = Σ_i f_i(x)`.
    pub fn total_cost(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.agents.iter().map(|a| a.cost.eval(x)).sum()
    }

    pub fn total_cost_grad(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        let mut g = vec![0.0; self.n];
        for a in &self.agents {
            for (gk, dk) in g.iter_mut().zip(a.cost.grad(x)?) {
                *gk += dk;
            }
        }
        Ok(g)
    }

    /// Strict feasibility probe: every `g_ij(x) < -tol` and every `|h_ij(x)| ≤ tol`.
    pub fn check_slater(&self, probe: &[f64], tol: f64) -> bool {
        self.agents.iter().all(|a| {
            a.inequalities
                .iter()
                .all(|g| g.eval(probe).is_ok_and(|v| v < -tol))
                && a.equalities
                    .iter()
                    .all(|h| h.eval(probe).is_ok_and(|v| v.abs() <= tol))
        })
    }

    /// Per-agent active inequality indices `J_i = {j : |g_ij(x)| ≤ tol}`.
    pub fn active_set(&self, x: &[f64], tol_active: f64) -> Result<Vec<Vec<usize>>, ExprError> {
        self.agents
            .iter()
            .map(|a| {
                let mut active = Vec::new();
                for (j, g) in a.inequalities.iter().enumerate() {
                    if g.eval(x)?.abs() <= tol_active {
                        active.push(j);
                    }
                }
                Ok(active)
            })
            .collect()
    }

    /// Rows `[∇h_i; ∇_{J_i} g_i]` for one agent.
    fn constraint_jacobian(&self, agent: usize, x: &[f64], active: &[usize]) -> Result<DMatrix<f64>, ExprError> {
        let a = &self.agents[agent];
        let rows = a.equalities.len() + active.len();
        let mut m = DMatrix::zeros(rows, self.n);
        for (r, h) in a.equalities.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&h.grad(x)?);
        }
        for (r, &j) in active.iter().enumerate() {
            m.row_mut(a.equalities.len() + r)
                .copy_from_slice(&a.inequalities[j].grad(x)?);
        }
        Ok(m)
    }

    /// LICQ: for every agent the equality gradients and active inequality
    /// gradients are linearly independent. `tol_rank` is relative to the
    /// largest singular value.
    pub fn check_licq(&self, x: &[f64], tol_active: f64, tol_rank: f64) -> bool {
        let Ok(active) = self.active_set(x, tol_active) else {
            return false;
        };
        (0..self.agents.len()).all(|i| match self.constraint_jacobian(i, x, &active[i]) {
            Ok(m) => m.nrows() == 0 || numerical_rank(&m, tol_rank) == m.nrows(),
            Err(_) => false,
        })
    }

    /// Evaluates the KKT residuals at `(x, λ, ν)` directly from their definitions.
    pub fn kkt_residuals(&self, x: &[f64], lambda: &[f64], nu: &[f64]) -> Result<KktResiduals, ExprError> {
        let mut station = self.total_cost_grad(x)?;
        let mut ineq = 0.0;
        let mut eq = 0.0;
        let mut comp = 0.0;
        let mut dual = 0.0;
        for (i, a) in self.agents.iter().enumerate() {
            for (j, g) in a.inequalities.iter().enumerate() {
                let l = lambda[self.layout.ineq_range(i).start + j];
                let gv = g.eval(x)?;
                for (s, d) in station.iter_mut().zip(g.grad(x)?) {
                    *s += l * d;
                }
                ineq += gv.max(0.0).powi(2);
                comp += (l * gv).powi(2);
                dual += l.min(0.0).powi(2);
            }
            for (j, h) in a.equalities.iter().enumerate() {
                let v = nu[self.layout.eq_range(i).start + j];
                let hv = h.eval(x)?;
                for (s, d) in station.iter_mut().zip(h.grad(x)?) {
                    *s += v * d;
                }
                eq += hv * hv;
            }
        }
        Ok(KktResiduals {
            stationarity: station.iter().map(|v| v * v).sum::<f64>().sqrt(),
            primal_ineq: ineq.sqrt(),
            primal_eq: eq.sqrt(),
            complementarity: comp.sqrt(),
            dual_infeasibility: dual.sqrt(),
        })
    }

    /// Derives the multipliers at a candidate optimum: inactive `λ` are zero,
    /// the rest solve the stationarity condition in least squares via SVD.
    pub fn derive_multipliers(&self, x_star: &[f64], tol_active: f64) -> Result<KktCertificate, ProblemError> {
        let active = self.active_set(x_star, tol_active)?;
        if !self.check_licq(x_star, tol_active, DEFAULT_TOL_RANK) {
            return Err(ProblemError::LicqViolated(
                "agent constraint gradients are linearly dependent at the candidate".into(),
            ));
        }
        // Columns: every ∇h_ij, then every active ∇g_ij.
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut eq_idx = Vec::new();
        let mut ineq_idx = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            for (j, h) in a.equalities.iter().enumerate() {
                cols.push(h.grad(x_star)?);
                eq_idx.push(self.layout.eq_range(i).start + j);
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            for &j in &active[i] {
                cols.push(a.inequalities[j].grad(x_star)?);
                ineq_idx.push(self.layout.ineq_range(i).start + j);
            }
        }
        let mut lambda = vec![0.0; self.r()];
        let mut nu = vec![0.0; self.s()];
        if !cols.is_empty() {
            let a = DMatrix::from_fn(self.n, cols.len(), |r, c| cols[c][r]);
            if numerical_rank(&a, DEFAULT_TOL_RANK) < cols.len() {
                return Err(ProblemError::LicqViolated(
                    "stacked constraint gradients of all agents are rank deficient; multipliers are not unique"
                        .into(),
                ));
            }
            let rhs = -DVector::from_vec(self.total_cost_grad(x_star)?);
            let sol = a
                .svd(true, true)
                .solve(&rhs, 0.0)
                .map_err(|e| ProblemError::LicqViolated(e.to_string()))?;
            for (k, &idx) in eq_idx.iter().enumerate() {
                nu[idx] = sol[k];
            }
            for (k, &idx) in ineq_idx.iter().enumerate() {
                lambda[idx] = sol[eq_idx.len() + k];
            }
        }
        let residuals = self.kkt_residuals(x_star, &lambda, &nu)?;
        Ok(KktCertificate {
            x_star: x_star.to_vec(),
            lambda_star: lambda,
            nu_star: nu,
            active_sets: active,
            residuals,
            tol_active,
        })
    }

    /// Sampled convexity lint: second differences of `f_i`, `g_ij` along
    /// random directions must be `≥ -tol`; for `h_ij` they must vanish.
    /// Returns one message per violation. Advisory only.
    pub fn convexity_lint<R: Rng>(&self, rng: &mut R, samples: usize, radius: f64, tol: f64) -> Vec<String> {
        let step = 1e-4;
        let mut issues = Vec::new();
        for _ in 0..samples {
            let x: Vec<f64> = (0..self.n).map(|_| rng.random_range(-radius..radius)).collect();
            let mut d: Vec<f64> = (0..self.n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            d.iter_mut().for_each(|v| *v /= norm);
            let second = |e: &Expr| -> Option<f64> {
                let at = |t: f64| {
                    let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                    e.eval(&p).ok()
                };
                Some((at(step)? - 2.0 * at(0.0)? + at(-step)?) / (step * step))
            };
            for (i, a) in self.agents.iter().enumerate() {
                let curv_tol = |v: f64| tol * (1.0 + v.abs());
                if let Some(c) = second(&a.cost) {
                    if c < -curv_tol(c) {
                        issues.push(format!("agent {}: cost has negative curvature {c:.3e} at {x:?}", i + 1));
                    }
                }
                for (j, g) in a.inequalities.iter().enumerate() {
                    if let Some(c) = second(g) {
                        if c < -curv_tol(c) {
                            issues.push(format!(
                                "agent {}: inequality {} has negative curvature {c:.3e} at {x:?}",
                                i + 1,
                                j + 1
                            ));
                        }
                    }
                }
                for (j, h) in a.equalities.iter().enumerate() {
                    if let Some(c) = second(h) {
                        if c.abs() > curv_tol(c).max(1e-3) {
                            issues.push(format!("agent {}: equality {} is not affine", i + 1, j + 1));
                        }
                    }
                }
            }
        }
        issues
    }
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > rel_tol * max).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_ineq: f64,
    pub primal_eq: f64,
    pub complementarity: f64,
    /// `‖min(λ, 0)‖`; nonzero means the candidate is not optimal.
    pub dual_infeasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_ineq)
            .max(self.primal_eq)
            .max(self.complementarity)
            .max(self.dual_infeasibility)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktCertificate {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub nu_star: Vec<f64>,
    /// 0-based local inequality indices per agent.
    pub active_sets: Vec<Vec<usize>>,
    pub residuals: KktResiduals,
    pub tol_active: f64,
}

impl KktCertificate {
    /// Stacked indices with `λ*_k > tol_active`.
    pub fn omega(&self) -> Vec<usize> {
        self.lambda_star
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > self.tol_active)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn min_lambda(&self) -> f64 {
        self.lambda_star.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::five_agent_problem;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn total_cost_values() {
        let p = five_agent_problem();
        assert!((p.total_cost(&[1.0, 2.0]).unwrap() - 172.41).abs() <= 0.01);
        assert_eq!(p.total_cost(&[0.0, 0.0]).unwrap(), 1.0);
        let zero = Problem::new(2, vec![AgentSpec::parse("0", &[], &[], 2).unwrap(); 3]).unwrap();
        assert_eq!(zero.total_cost(&[3.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn slater_probes() {
        let p = five_agent_problem();
        // h1(1, 2.5) = -0.5 so the equality fails the probe
        assert!(!p.check_slater(&[1.0, 2.5], 1e-6));
        // h1 = 0 but g1 = 1.25 > 0
        assert!(!p.check_slater(&[0.5, 1.0], 1e-6));
        let free = Problem::new(1, vec![AgentSpec::parse("x1^2", &[], &[], 1).unwrap()]).unwrap();
        assert!(free.check_slater(&[5.0], 1e-6));
        // strictly feasible point on the equality line: x = (2, 4): g1 = -3, g2 = -4
        assert!(p.check_slater(&[2.0, 4.0], 1e-6));
    }

    #[test]
    fn active_sets() {
        let p = five_agent_problem();
        let j = p.active_set(&[1.0, 2.0], 1e-8).unwrap();
        assert_eq!(j, vec![vec![0], vec![], vec![], vec![], vec![]]);
        let j = p.active_set(&[2.0, 4.0], 1e-8).unwrap();
        assert!(j.iter().all(|s| s.is_empty()));
        let sq = Problem::new(1, vec![AgentSpec::parse("x1", &["x1^2"], &[], 1).unwrap()]).unwrap();
        assert_eq!(sq.active_set(&[0.0], 1e-8).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn licq_cases() {
        let p = five_agent_problem();
        assert!(p.check_licq(&[1.0, 2.0], 1e-8, 1e-10));
        let dup = Problem::new(
            2,
            vec![AgentSpec::parse("x1^2+x2^2", &["x1 - 1", "x1 - 1"], &[], 2).unwrap()],
        )
        .unwrap();
        assert!(!dup.check_licq(&[1.0, 0.0], 1e-8, 1e-10));
        let free = Problem::new(2, vec![AgentSpec::parse("x1^2", &[], &[], 2).unwrap()]).unwrap();
        assert!(free.check_licq(&[0.3, 0.1], 1e-8, 1e-10));
    }

    /// Independent 2x2 solve for the reference problem multipliers by Cramer's rule.
    fn five_agent_multipliers_oracle() -> (f64, f64) {
        let e5 = 5.0f64.exp();
        // grad f̃ + λ (-2, -1) + ν (2, -1) = 0
        let (b1, b2) = (-(8.0 + 4.0 + 3.0 * e5), -(2.0 + 8.0 + 2.0 + e5));
        let (a11, a12, a21, a22) = (-2.0, 2.0, -1.0, -1.0);
        let det = a11 * a22 - a12 * a21;
        ((b1 * a22 - a12 * b2) / det, (a11 * b2 - b1 * a21) / det)
    }

    #[test]
    fn five_agent_certificate() {
        let p = five_agent_problem();
        let cert = p.derive_multipliers(&[1.0, 2.0], 1e-8).unwrap();
        let (lam, nu) = five_agent_multipliers_oracle();
        assert_relative_eq!(cert.lambda_star[0], lam, max_relative = 1e-12);
        assert_relative_eq!(cert.nu_star[0], nu, max_relative = 1e-12);
        assert_relative_eq!(lam, 194.516, epsilon = 1e-3);
        assert_relative_eq!(nu, -34.103, epsilon = 1e-3);
        assert_eq!(cert.lambda_star[1], 0.0);
        assert!(cert.residuals.stationarity <= 1e-9);
        assert_eq!(cert.residuals.complementarity, 0.0);
        assert_eq!(cert.omega(), vec![0]);
    }

    #[test]
    fn certificate_at_infeasible_point() {
        let p = five_agent_problem();
        // no constraint active at the origin, so all λ are zero; only ν is fitted
        let cert = p.derive_multipliers(&[0.0, 0.0], 1e-8).unwrap();
        assert_eq!(cert.residuals.primal_eq, 0.0);
        assert_eq!(cert.residuals.primal_ineq, 5.0);
    }

    #[test]
    fn unconstrained_certificate() {
        let p = Problem::new(
            2,
            vec![
                AgentSpec::parse("(x1-1)^2", &[], &[], 2).unwrap(),
                AgentSpec::parse("(x2+2)^2 + x1", &[], &[], 2).unwrap(),
            ],
        )
        .unwrap();
        let cert = p.derive_multipliers(&[0.5, -2.0], 1e-8).unwrap();
        assert!(cert.lambda_star.is_empty() && cert.nu_star.is_empty());
        assert_eq!(cert.residuals.stationarity, 0.0);
        let off = p.derive_multipliers(&[0.0, 0.0], 1e-8).unwrap();
        let g = p.total_cost_grad(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(off.residuals.stationarity, (g[0] * g[0] + g[1] * g[1]).sqrt());
    }

    #[test]
    fn rank_deficient_system_is_rejected() {
        // Two agents each satisfy LICQ individually but share one gradient direction.
        let p = Problem::new(
            1,
            vec![
                AgentSpec::parse("x1^2", &["x1 - 1"], &[], 1).unwrap(),
                AgentSpec::parse("x1", &["1 - x1"], &[], 1).unwrap(),
            ],
        )
        .unwrap();
        assert!(matches!(
            p.derive_multipliers(&[1.0], 1e-8),
            Err(ProblemError::LicqViolated(_))
        ));
    }

    #[test]
    fn negative_multiplier_is_reported() {
        // minimize x subject to x^2 <= 1, evaluated at the maximizer x = 1
        let p = Problem::new(1, vec![AgentSpec::parse("x1", &["x1^2 - 1"], &[], 1).unwrap()]).unwrap();
        let cert = p.derive_multipliers(&[1.0], 1e-8).unwrap();
        assert!(cert.min_lambda() < 0.0);
        assert!(cert.residuals.dual_infeasibility > 0.0);
    }

    #[test]
    fn permuting_agents_permutes_blocks() {
        let p = five_agent_problem();
        let mut agents = p.agents().to_vec();
        agents.reverse();
        let q = Problem::new(2, agents).unwrap();
        let a = p.derive_multipliers(&[1.0, 2.0], 1e-8).unwrap();
        let b = q.derive_multipliers(&[1.0, 2.0], 1e-8).unwrap();
        let mut lam = b.lambda_star.clone();
        lam.reverse();
        assert_relative_eq!(lam[0], a.lambda_star[0], max_relative = 1e-12);
        assert_eq!(lam[1], a.lambda_star[1]);
        assert!((a.residuals.stationarity - b.residuals.stationarity).abs() <= 1e-12);
        assert!((a.residuals.max() - b.residuals.max()).abs() <= 1e-12);
    }

    #[test]
    fn convexity_lint_flags_concave_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(five_agent_problem().convexity_lint(&mut rng, 200, 2.0, 1e-6).is_empty());
        let bad = Problem::new(1, vec![AgentSpec::parse("-x1^2", &[], &["x1^2"], 1).unwrap()]).unwrap();
        let issues = bad.convexity_lint(&mut rng, 10, 2.0, 1e-6);
        assert!(issues.iter().any(|m| m.contains("negative curvature")));
        assert!(issues.iter().any(|m| m.contains("not affine")));
    }

    #[test]
    fn layout_owners() {
        let p = five_agent_problem();
        let l = p.layout();
        assert_eq!((l.r(), l.s()), (2, 1));
        assert_eq!(l.ineq_owner(0), (0, 0));
        assert_eq!(l.ineq_owner(1), (1, 0));
        assert_eq!(l.eq_owner(0), (0, 0));
        assert_eq!(l.ineq_range(4), 2..2);
    }
}
