use nalgebra::{DMatrix, DVector};

use switchopt_core::averaging::{average_laplacian, simulate_averaged};
use switchopt_core::chain::{stationary, Generator, SwitchPath};
use switchopt_core::dynamics::{simulate, IntegratorConfig, SystemState};
use switchopt_core::expr::Expr;
use switchopt_core::graph::{Graph, Network};
use switchopt_core::problem::{AgentSpec, Problem};

/// Three scalar agents with costs `q_i/2 x² + b_i x` and no constraints:
/// the noise-free dynamics are affine in `(x, θ)`.
const Q: [f64; 3] = [1.0, 2.0, 0.5];
const B: [f64; 3] = [-1.0, 0.5, 2.0];

fn quadratic_problem() -> Problem {
    let agents = Q
        .iter()
        .zip(&B)
        .map(|(q, b)| AgentSpec::new(Expr::parse(&format!("{}*x1^2 + {}*x1", q / 2.0, b), 1).unwrap(), vec![], vec![]))
        .collect();
    Problem::new(1, agents).unwrap()
}

#[test]
fn averaged_noise_free_matches_matrix_exponential() {
    let c = 0.8;
    let graphs = vec![Graph::new(3, [(0, 1)]).unwrap(), Graph::new(3, [(1, 2)]).unwrap()];
    let net = Network::uniform(graphs.clone(), 0.0, c, Some(0.0)).unwrap();
    // two-state chain with rates 1 -> 2 at 3 and 2 -> 1 at 1: pi = (1/4, 3/4)
    let q = Generator::new(DMatrix::from_row_slice(2, 2, &[-3.0, 3.0, 1.0, -1.0])).unwrap();
    let pi = stationary(&q).unwrap();
    let avg = average_laplacian(&net, &pi).unwrap();

    let l = graphs[0].laplacian() * 0.25 + graphs[1].laplacian() * 0.75;
    // z = (x, θ, 1): x' = -cLx - θ - Qx - b, θ' = cLx
    let mut a = DMatrix::zeros(7, 7);
    for i in 0..3 {
        for j in 0..3 {
            a[(i, j)] = -c * l[(i, j)];
            a[(3 + i, j)] = c * l[(i, j)];
        }
        a[(i, i)] -= Q[i];
        a[(i, 3 + i)] = -1.0;
        a[(i, 6)] = -B[i];
    }
    let x0 = [2.0, -1.0, 0.5];
    let th0 = [0.3, -0.1, -0.2];
    let horizon = 2.0;
    let z0 = DVector::from_iterator(7, x0.iter().chain(&th0).copied().chain([1.0]));
    let exact = (a * horizon).exp() * z0;

    let mut cfg = IntegratorConfig::new(horizon, vec![], 1);
    cfg.step = 1e-4;
    cfg.stride = 1000;
    let init = SystemState::new(0.0, x0.to_vec(), th0.to_vec(), vec![], vec![]);
    let run = simulate_averaged(&quadratic_problem(), &avg, &cfg, &init, 0, 0).unwrap();
    let last = run.last();
    assert!((last.t - horizon).abs() < 1e-12);
    for i in 0..3 {
        assert!((last.x()[i] - exact[i]).abs() <= 1e-3, "x{i}: {} vs {}", last.x()[i], exact[i]);
        assert!((last.theta()[i] - exact[3 + i]).abs() <= 1e-3, "theta{i}");
    }
}

#[test]
fn theta_sum_is_conserved_without_noise() {
    let graphs = vec![Graph::path(3), Graph::new(3, [(0, 2)]).unwrap()];
    let net = Network::uniform(graphs, 0.0, 1.3, Some(0.0)).unwrap();
    let path = SwitchPath::constant(1, 5.0);
    let mut cfg = IntegratorConfig::new(5.0, vec![], 2);
    cfg.stride = 50;
    let init = SystemState::new(0.0, vec![4.0, -2.0, 1.0], vec![1.0, -0.5, -0.5], vec![], vec![]);
    for mode in 0..2 {
        let path = if mode == 0 { SwitchPath::constant(0, 5.0) } else { path.clone() };
        let traj = simulate(&quadratic_problem(), &net, &path, &cfg, &init, 0).unwrap();
        for s in &traj.samples {
            let sum: f64 = s.state.theta().iter().sum();
            assert!(sum.abs() <= 1e-12, "t={} sum={sum}", s.state.t);
        }
    }
}
