//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line. Run with
//! `cargo test --release -p switchopt-cli --test acceptance -- --nocapture`.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use switchopt_cli::scenario::{Mode, Scenario};
use switchopt_cli::{kkt, load, run_compare, Loaded};
use switchopt_core::analysis::{convergence_metrics, first_lyapunov_increase, hbar_fixed, opt_error, saddle_point_check};
use switchopt_core::averaging::{average_laplacian, simulate_averaged, weak_convergence_experiment, WeakConvergenceConfig, WeakConvergenceReport};
use switchopt_core::chain::{sample_member_path, sample_path, stationary, Generator, SwitchPath};
use switchopt_core::dynamics::{build_equilibrium, simulate, simulate_ensemble, wiener_increments, SwitchedSystem, SystemState};
use switchopt_core::expr::{Expr, Node};
use switchopt_core::graph::{Graph, Network};

const X_STAR: [f64; 2] = [1.0, 2.0];

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/five_agent.cfg")
}

fn loaded(mode: Mode) -> Loaded {
    load(&scenario_path(), Some(mode), None).expect("shipped scenario loads")
}

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn criterion_01_optimum_certification() {
    let start = Instant::now();
    let l = loaded(Mode::Fixed);
    let out = kkt(&l).unwrap();
    let elapsed = start.elapsed();
    let r = out.certificate.residuals;
    let lambda_ok = out.certificate.lambda_star.iter().all(|&v| v >= 0.0);
    let pass = r.stationarity <= 1e-6
        && r.primal_ineq <= 1e-8
        && r.primal_eq <= 1e-8
        && r.complementarity <= 1e-8
        && lambda_ok
        && (out.total_cost - 172.41).abs() <= 0.01
        && elapsed < Duration::from_secs(1);
    report(
        1,
        pass,
        format!(
            "stationarity {:e}, primal {:e}/{:e}, complementarity {:e}, lambda* {:?}, nu* {:?}, cost {:.6}, {:.3}s",
            r.stationarity,
            r.primal_ineq,
            r.primal_eq,
            r.complementarity,
            out.certificate.lambda_star,
            out.certificate.nu_star,
            out.total_cost,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

struct EnsembleRun {
    errors: Vec<f64>,
    clamps: usize,
    elapsed: Duration,
}

/// Twenty root seeds, one trajectory each, on the given network and path source.
fn seeded_runs(l: &Loaded, network: &Network, path_for: impl Fn(u64) -> SwitchPath + Sync) -> EnsembleRun {
    let start = Instant::now();
    let b = &l.built;
    let trajectories = simulate_ensemble(20, |k| {
        let mut cfg = b.integrator.clone();
        cfg.seed = k + 1;
        cfg.stride = 1000;
        simulate(&b.problem, network, &path_for(k + 1), &cfg, &b.initial, 0)
    })
    .unwrap();
    EnsembleRun {
        errors: trajectories.iter().map(|t| opt_error(t.last().x(), &X_STAR)).collect(),
        clamps: trajectories.iter().map(|t| t.clamp_count).sum(),
        elapsed: start.elapsed(),
    }
}

fn fixed_runs() -> &'static EnsembleRun {
    static RUNS: OnceLock<EnsembleRun> = OnceLock::new();
    RUNS.get_or_init(|| {
        let l = loaded(Mode::Fixed);
        let horizon = l.built.integrator.horizon;
        seeded_runs(&l, &l.built.fixed_network, |_| SwitchPath::constant(0, horizon))
    })
}

struct SwitchingRuns {
    averaged_error: f64,
    averaged_clamps: usize,
    switched: EnsembleRun,
    elapsed: Duration,
}

fn switching_runs() -> &'static SwitchingRuns {
    static RUNS: OnceLock<SwitchingRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let l = loaded(Mode::Averaged);
        let b = &l.built;
        let q = b.generator.clone().unwrap();
        let avg = average_laplacian(&b.network, &stationary(&q).unwrap()).unwrap();
        let mut cfg = b.integrator.clone();
        cfg.stride = 1000;
        let averaged = simulate_averaged(&b.problem, &avg, &cfg, &b.initial, 0, 100).unwrap();
        let horizon = cfg.horizon;
        let s0 = b.initial_mode;
        let switched = seeded_runs(&l, &b.network, |seed| {
            sample_member_path(&q, s0, 0.01, horizon, seed, 0).unwrap()
        });
        SwitchingRuns {
            averaged_error: opt_error(averaged.last().x(), &X_STAR),
            averaged_clamps: averaged.clamp_count,
            switched,
            elapsed: start.elapsed(),
        }
    })
}

struct CompareRuns {
    main: WeakConvergenceReport,
    control: WeakConvergenceReport,
    elapsed: Duration,
}

fn compare_runs() -> &'static CompareRuns {
    static RUNS: OnceLock<CompareRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let l = loaded(Mode::Switching);
        let main = run_compare(&l, Some(vec![0.5, 0.1, 0.02]), Some(200)).unwrap();

        // single-mode control: switching is a no-op, so the two ensembles share a law
        let mut s: Scenario = l.scenario.clone();
        s.network.graphs = vec![Graph::complete(5).edges().map(|(a, b)| [a + 1, b + 1]).collect()];
        let chain = s.chain.as_mut().unwrap();
        chain.generator = vec![vec![0.0]];
        chain.initial_mode = 1;
        let b = s.build().unwrap();
        let mut integrator = b.integrator.clone();
        integrator.horizon = 1.0;
        let cfg = WeakConvergenceConfig {
            alphas: vec![0.5, 0.1, 0.02],
            ensemble: 200,
            initial_mode: 0,
            integrator,
        };
        let control =
            weak_convergence_experiment(&b.problem, &b.network, b.generator.as_ref().unwrap(), &b.initial, &cfg).unwrap();
        CompareRuns {
            main,
            control,
            elapsed: start.elapsed(),
        }
    })
}

fn summarize(errors: &[f64]) -> String {
    let max = errors.iter().copied().fold(0.0, f64::max);
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    format!("opt_error range [{min:.4}, {max:.4}]")
}

#[test]
fn criterion_02_fixed_network_convergence() {
    let runs = fixed_runs();
    let hits = runs.errors.iter().filter(|&&e| e <= 0.05).count();
    let pass = hits >= 19 && runs.elapsed < Duration::from_secs(120);
    report(
        2,
        pass,
        format!(
            "{hits}/20 seeds within 0.05 at T=50; {}; {:.1}s",
            summarize(&runs.errors),
            secs(runs.elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_averaged_and_switched_convergence() {
    let runs = switching_runs();
    let hits = runs.switched.errors.iter().filter(|&&e| e <= 0.10).count();
    let pass = runs.averaged_error <= 0.05 && hits >= 19 && runs.elapsed < Duration::from_secs(300);
    report(
        3,
        pass,
        format!(
            "averaged opt_error {:.4} (target 0.05); switched alpha=0.01: {hits}/20 within 0.10, {}; {:.1}s",
            runs.averaged_error,
            summarize(&runs.switched.errors),
            secs(runs.elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_weak_convergence_in_alpha() {
    let runs = compare_runs();
    let r = &runs.main.results;
    let (first, last) = (&r[0], &r[r.len() - 1]);
    let null_ok = runs.control.results.iter().all(|x| x.null_test.passed);
    let pass = runs.main.separated && null_ok && runs.elapsed < Duration::from_secs(600);
    let errs: Vec<String> = r.iter().map(|x| format!("{}: {:.4}±{:.4}", x.alpha, x.err, x.err_sem)).collect();
    let t2: Vec<String> = runs
        .control
        .results
        .iter()
        .map(|x| format!("{:.1}/{:.1}", x.null_test.statistic, x.null_test.threshold))
        .collect();
    report(
        4,
        pass,
        format!(
            "err {}; gap {:.4} vs 2*SEM {:.4}; monotone {}; S=1 control T2/threshold {}; {:.1}s",
            errs.join(", "),
            first.err - last.err,
            2.0 * first.err_sem.hypot(last.err_sem),
            runs.main.monotone,
            t2.join(", "),
            secs(runs.elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_noise_cancellation_identity() {
    let l = loaded(Mode::Fixed);
    let b = &l.built;
    let net = Network::uniform(vec![Graph::complete(5)], 1.0, 0.5, None).unwrap();
    let sys = SwitchedSystem::new(&b.problem, &net, vec![1.0; 2], 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-3;
    let zero = vec![0.0; 25];
    let mut state = b.initial.clone();
    let mut mismatches = 0usize;
    let mut max_ulps = 0u64;
    let steps = 100_000;
    for _ in 0..steps {
        let drift = sys.drift(&state, 0).unwrap();
        let dw = wiener_increments(&mut rng, 25, h);
        let next = sys.em_step(&state, 0, h, &dw).unwrap().state;
        let quiet = sys.em_step(&state, 0, h, &zero).unwrap().state;
        for k in 0..state.x().len() {
            let expected = state.x_plus_theta()[k] + h * (drift.x[k] + drift.theta[k]);
            let got = next.x_plus_theta()[k];
            if got.to_bits() != expected.to_bits() || got.to_bits() != quiet.x_plus_theta()[k].to_bits() {
                mismatches += 1;
                max_ulps = max_ulps.max(got.to_bits().abs_diff(expected.to_bits()));
            }
        }
        state = next;
    }
    let pass = mismatches == 0;
    report(
        5,
        pass,
        format!("{steps} steps with sigma=1: {mismatches} mismatching components, max {max_ulps} ulps"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_lambda_positivity() {
    let fixed = fixed_runs();
    let sw = switching_runs();
    let cmp = compare_runs();
    let total = fixed.clamps + sw.averaged_clamps + sw.switched.clamps + cmp.main.clamp_count + cmp.control.clamp_count;
    let pass = total == 0;
    report(
        6,
        pass,
        format!(
            "clamps: fixed {}, averaged {}, switched {}, compare {}, control {}",
            fixed.clamps, sw.averaged_clamps, sw.switched.clamps, cmp.main.clamp_count, cmp.control.clamp_count
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_trace_bound() {
    let l = loaded(Mode::Switching);
    let b = &l.built;
    let kappa = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sigma = DMatrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { rng.random_range(0.0..=kappa) });
    let mut graphs = b.network.graphs().to_vec();
    graphs.push(Graph::complete(5));
    let net = Network::new(graphs, sigma, 1.0, Some(kappa)).unwrap();
    let sys = SwitchedSystem::new(&b.problem, &net, vec![1.0; 2], 0.0).unwrap();
    let (mut violations, mut doubled_violations, mut checks) = (0usize, 0usize, 0usize);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = SystemState::new(0.0, x.clone(), vec![0.0; 10], vec![1.0; 2], vec![0.0]);
        for mode in 0..net.modes() {
            let m = sys.diffusion_matrix(&s, mode);
            let trace = (m.transpose() * &m).trace();
            let mut lx = vec![0.0; 10];
            switchopt_core::graph::apply_stacked(net.laplacian(mode), 2, &x, &mut lx);
            let quad: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
            checks += 1;
            if trace > kappa * kappa * quad + 1e-10 {
                violations += 1;
            }
            if trace > 2.0 * kappa * kappa * quad + 1e-10 {
                doubled_violations += 1;
            }
            if quad > 0.0 {
                worst_ratio = worst_ratio.max(trace / (kappa * kappa * quad));
            }
        }
    }
    let pass = violations == 0;
    report(
        7,
        pass,
        format!(
            "tr(M^T M) <= kappa^2 x^T L x violated on {violations}/{checks} (state, mode) pairs, max ratio {worst_ratio:.3}; \
             with 2*kappa^2: {doubled_violations} violations"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_stationary_distribution() {
    let l = loaded(Mode::Switching);
    let q: Generator = l.built.generator.clone().unwrap();
    let pi = stationary(&q).unwrap();
    let residual = pi.residual(&q);
    let sum: f64 = pi.as_slice().iter().sum();
    let positive = pi.min() > 0.0;
    let mean_holding = 1.0 / 2.0;
    let horizon = 1e4 * mean_holding;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let path = sample_path(&q, 0, 1.0, horizon, &mut rng).unwrap();
    let occ = path.occupation(q.modes());
    let dev = occ
        .iter()
        .zip(pi.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pass = residual <= 1e-12 && (sum - 1.0).abs() <= 1e-14 && positive && dev <= 0.02;
    report(
        8,
        pass,
        format!(
            "|Q^T pi|_inf {residual:e}, sum-1 {:e}, min pi {:.4}, occupation deviation {dev:.4} over {} jumps",
            sum - 1.0,
            pi.min(),
            path.num_jumps()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_noise_free_lyapunov_monotonicity() {
    let l = loaded(Mode::Fixed);
    let b = &l.built;
    let quiet = Network::uniform(vec![Graph::complete(5)], 0.0, 1.0, Some(0.0)).unwrap();
    let mut cfg = b.integrator.clone();
    cfg.stride = 10;
    let traj = simulate(&b.problem, &quiet, &SwitchPath::constant(0, cfg.horizon), &cfg, &b.initial, 0).unwrap();
    let cert = b.problem.derive_multipliers(&X_STAR, 1e-8).unwrap();
    let eq = build_equilibrium(&b.problem, &cert, 1e-6).unwrap();
    let rows = convergence_metrics(&b.problem, &eq, &cfg.eta, traj.samples.iter().map(|s| &s.state)).unwrap();
    let first_bad = first_lyapunov_increase(&rows, 1e-9);
    let pass = first_bad.is_none();
    report(
        9,
        pass,
        format!(
            "{} samples, V {:.3} -> {:.3}, first increase at {:?}",
            rows.len(),
            rows[0].v,
            rows[rows.len() - 1].v,
            first_bad.map(|k| rows[k].t)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_saddle_point_inequality() {
    let l = loaded(Mode::Fixed);
    let b = &l.built;
    let cert = b.problem.derive_multipliers(&X_STAR, 1e-8).unwrap();
    let eq = build_equilibrium(&b.problem, &cert, 1e-6).unwrap();
    let net = &b.fixed_network;
    let hbar = hbar_fixed(net.coupling(), net.kappa());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let r = saddle_point_check(&b.problem, &eq, hbar, net.laplacian(0), 1000, 0.5, &mut rng).unwrap();
    report(
        10,
        r.passed,
        format!(
            "{} samples, Phi* = {:.4}, min left slack {:e}, min right slack {:e}",
            r.samples, r.center, r.min_left_slack, r.min_right_slack
        ),
    );
    assert!(r.passed);
}

/// Random expressions that stay inside the domain: logs and divisions act
/// on `1 + u²`, exponentials on a damped argument.
fn random_node(rng: &mut ChaCha8Rng, depth: u32, dim: usize) -> Node {
    let leaf = depth == 0 || rng.random_bool(0.25);
    if leaf {
        return if rng.random_bool(0.6) {
            Node::Var(rng.random_range(0..dim))
        } else {
            Node::Const(rng.random_range(-3.0..3.0))
        };
    }
    let sub = |rng: &mut ChaCha8Rng| Box::new(random_node(rng, depth - 1, dim));
    let one_plus_sq = |n: Box<Node>| Box::new(Node::Add(Box::new(Node::Const(1.0)), Box::new(Node::Pow(n, 2.0))));
    match rng.random_range(0..9) {
        0 => Node::Add(sub(rng), sub(rng)),
        1 => Node::Sub(sub(rng), sub(rng)),
        2 => Node::Mul(sub(rng), sub(rng)),
        3 => Node::Div(sub(rng), one_plus_sq(sub(rng))),
        4 => Node::Neg(sub(rng)),
        5 => Node::Pow(sub(rng), rng.random_range(2..=3) as f64),
        6 => Node::Pow(one_plus_sq(sub(rng)), 0.5),
        7 => Node::Exp(Box::new(Node::Mul(Box::new(Node::Const(0.3)), sub(rng)))),
        _ => Node::Ln(one_plus_sq(sub(rng))),
    }
}

fn central(e: &Expr, x: &[f64], k: usize, h: f64) -> Option<f64> {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[k] += h;
    b[k] -= h;
    Some((e.eval(&a).ok()? - e.eval(&b).ok()?) / (2.0 * h))
}

#[test]
fn criterion_11_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 3;
    let (mut accepted, mut worst, mut failures) = (0usize, 0.0f64, 0usize);
    while accepted < 1000 {
        let e = Expr::from_node(random_node(&mut rng, 4, dim), dim).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let Ok((value, grad)) = e.value_and_grad(&x) else { continue };
        if value.abs() > 1e6 || grad.iter().any(|g| g.abs() > 1e6) {
            continue;
        }
        let mut fd = Vec::with_capacity(dim);
        for k in 0..dim {
            let h = 1e-3 * x[k].abs().max(1.0);
            // Richardson extrapolation of two central differences, O(h⁴)
            let (Some(d1), Some(d2)) = (central(&e, &x, k, h), central(&e, &x, k, h / 2.0)) else { break };
            fd.push((4.0 * d2 - d1) / 3.0);
        }
        if fd.len() != dim {
            continue;
        }
        accepted += 1;
        for (a, f) in grad.iter().zip(&fd) {
            let rel = (a - f).abs() / a.abs().max(1.0);
            worst = worst.max(rel);
            if rel > 1e-6 {
                failures += 1;
            }
        }
    }
    let pass = failures == 0;
    report(
        11,
        pass,
        format!("{accepted} random (expr, x) pairs, worst relative error {worst:e}, {failures} above 1e-6"),
    );
    assert!(pass);
}
