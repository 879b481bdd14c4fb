//! Distributed constrained optimization over randomly switching, noisy
//! networks: problem definitions, graphs, Markov switching, the primal-dual
//! SDE, its averaged counterpart, and Lyapunov / KKT diagnostics.

pub mod analysis;
pub mod averaging;
pub mod chain;
pub mod dynamics;
pub mod expr;
pub mod fixtures;
pub mod graph;
pub mod problem;
pub mod seeding;

pub use nalgebra;

pub use analysis::{
    bregman_xlogx, convergence_metrics, hbar_fixed, hbar_switching, lagrangian_phi, lyapunov, saddle_point_check,
    AnalysisError, LyapunovReport, MetricRow, SaddleReport,
};
pub use averaging::{
    average_laplacian, averaged_diffusion_factor, simulate_averaged, weak_convergence_experiment, AveragedNetwork,
    AveragedTrajectory, AveragingError, WeakConvergenceConfig, WeakConvergenceReport,
};
pub use chain::{sample_member_path, sample_path, stationary, ChainError, Generator, StationaryDist, SwitchPath};
pub use dynamics::{
    build_equilibrium, check_assumptions, check_initial, simulate, simulate_ensemble, AssumptionReport, Drift,
    DynamicsError, Equilibrium, Gate, IntegratorConfig, Regime, Sample, SwitchedSystem, SystemState, Trajectory,
};
pub use expr::{Expr, ExprError};
pub use graph::{jointly_connected, lambda2, Graph, GraphError, Network};
pub use problem::{AgentSpec, KktCertificate, KktResiduals, Problem, ProblemError};
