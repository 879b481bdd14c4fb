//! The five-agent reference problem and the shipped six-mode switching
//! network, shared by the tests, benches and the bundled scenario file.

use nalgebra::DMatrix;

use crate::graph::Graph;
use crate::problem::{AgentSpec, Problem};

/// Decision dimension of the reference problem.
pub const N_DIM: usize = 2;

/// Known optimum of the reference problem.
pub const X_STAR: [f64; 2] = [1.0, 2.0];

pub const COSTS: [&str; 5] = [
    "4*x1^2 + 2*x2",
    "2*x2^2",
    "4*x1",
    "2*x2",
    "exp(3*x1 + x2)",
];

/// Five agents on `R^2`; agent 1 carries one inequality and one equality,
/// agent 2 one inequality. Optimum `(1, 2)`, value `24 + e^5`.
pub fn five_agent_problem() -> Problem {
    let agents = vec![
        AgentSpec::parse(COSTS[0], &["(x1-2)^2 - x2 + 1"], &["2*x1 - x2"], N_DIM).unwrap(),
        AgentSpec::parse(COSTS[1], &["-x1 - 2"], &[], N_DIM).unwrap(),
        AgentSpec::parse(COSTS[2], &[], &[], N_DIM).unwrap(),
        AgentSpec::parse(COSTS[3], &[], &[], N_DIM).unwrap(),
        AgentSpec::parse(COSTS[4], &[], &[], N_DIM).unwrap(),
    ];
    Problem::new(N_DIM, agents).unwrap()
}

/// Per-agent starting points used throughout the experiments.
pub fn five_agent_initial_x() -> Vec<[f64; 2]> {
    vec![[-2.0, 4.0], [-3.0, 3.0], [1.0, -2.0], [4.0, 2.0], [-3.0, -4.0]]
}

/// Six sparse graphs on five nodes (1-based edges). Each one is
/// disconnected; their union is connected.
pub const SIX_MODE_EDGES: [&[(usize, usize)]; 6] = [
    &[(1, 2), (3, 4)],
    &[(2, 3), (4, 5)],
    &[(3, 4), (5, 1)],
    &[(4, 5), (1, 2)],
    &[(5, 1), (2, 3)],
    &[(1, 3), (2, 5)],
];

pub fn six_mode_graphs() -> Vec<Graph> {
    SIX_MODE_EDGES
        .iter()
        .map(|edges| Graph::from_one_based(5, edges).unwrap())
        .collect()
}

/// Ergodic, non-reversible generator over the six modes; every holding
/// rate is 2.
pub const SIX_MODE_GENERATOR: [[f64; 6]; 6] = [
    [-2.0, 1.0, 0.5, 0.0, 0.0, 0.5],
    [0.5, -2.0, 1.0, 0.0, 0.5, 0.0],
    [0.0, 0.5, -2.0, 1.0, 0.0, 0.5],
    [0.5, 0.0, 0.5, -2.0, 1.0, 0.0],
    [0.0, 0.5, 0.0, 0.5, -2.0, 1.0],
    [1.0, 0.0, 0.5, 0.0, 0.5, -2.0],
];

pub fn six_mode_generator() -> DMatrix<f64> {
    DMatrix::from_fn(6, 6, |i, j| SIX_MODE_GENERATOR[i][j])
}
