//! Shared setup for the criterion benches.

use switchopt_core::fixtures::{five_agent_initial_x, five_agent_problem};
use switchopt_core::{Graph, Network, Problem, SystemState};

pub fn reference_problem() -> Problem {
    five_agent_problem()
}

pub fn complete_network(sigma: f64) -> Network {
    Network::uniform(vec![Graph::complete(5)], sigma, 1.0, None).expect("valid network")
}

pub fn initial_state() -> SystemState {
    let points: Vec<Vec<f64>> = five_agent_initial_x().iter().map(|p| p.to_vec()).collect();
    SystemState::from_agents(&points, vec![3.0; 2], vec![3.0])
}
