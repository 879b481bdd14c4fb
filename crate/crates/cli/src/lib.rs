//! Command-line front end: scenario loading, the `validate`, `kkt`,
//! `simulate` and `compare` subcommands, and reproducible result files.
//!
//! Exit codes: 0 success, 2 when a gate or check fails (a warning), 1 on
//! hard errors such as a malformed scenario.

pub mod output;
pub mod scenario;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use switchopt_core::analysis::{convergence_metrics, MetricRow};
use switchopt_core::averaging::{
    average_laplacian, simulate_averaged, weak_convergence_experiment, WeakConvergenceConfig, WeakConvergenceReport,
};
use switchopt_core::chain::{sample_member_path, stationary, SwitchPath};
use switchopt_core::dynamics::{
    build_equilibrium, check_assumptions, check_initial, simulate, Equilibrium, Gate, Regime, SystemState,
    DEFAULT_EQUILIBRIUM_TOL,
};
use switchopt_core::graph::{jointly_connected, DEFAULT_CONNECTIVITY_TOL};
use switchopt_core::problem::{KktCertificate, DEFAULT_TOL_ACTIVE, DEFAULT_TOL_RANK};

use output::{output_path, Provenance, Row};
use scenario::{Built, Mode, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WARNING: i32 = 2;

/// Sample every this many steps when checking the averaged diffusion factor.
const FACTOR_CHECK_EVERY: usize = 100;
/// Default comparison horizon when the scenario has no `[compare]` section.
const DEFAULT_COMPARE_HORIZON: f64 = 1.0;

#[derive(Debug, Parser)]
#[command(name = "switchopt", version, about = "Distributed primal-dual optimization over switching noisy networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Scenario file
    pub scenario: PathBuf,
    /// Override the scenario's mode
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Override the root seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for result files
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the scenario against the convergence assumptions
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Certify the candidate optimum and print its multipliers
    Kkt {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate one trajectory and write trajectory, multiplier and metric files
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Refuse to run when any validation gate fails
        #[arg(long)]
        strict: bool,
    },
    /// Compare switched and averaged ensembles (weak convergence in alpha)
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, decreasing alphas
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        /// Ensemble size per alpha
        #[arg(long)]
        ensemble: Option<usize>,
    },
}

/// A loaded scenario with command-line overrides applied.
pub struct Loaded {
    pub scenario: Scenario,
    pub built: Built,
    pub provenance: Provenance,
}

impl Loaded {
    pub fn stem(&self) -> String {
        self.scenario.name.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '_', "_")
    }
}

pub fn load(path: &Path, mode: Option<Mode>, seed: Option<u64>) -> Result<Loaded> {
    let mut scenario = Scenario::load(path)?;
    if let Some(m) = mode {
        scenario.mode = m;
    }
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let built = scenario.build()?;
    let provenance = Provenance {
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
    };
    Ok(Loaded {
        scenario,
        built,
        provenance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub mode: Mode,
    pub gates: Vec<Gate>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }
}

fn gate(name: &str, passed: bool, detail: String) -> Gate {
    Gate {
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn validate(loaded: &Loaded) -> Result<ValidationReport> {
    let b = &loaded.built;
    let mode = loaded.scenario.mode;
    let mut gates = Vec::new();
    if let Some(q) = &b.generator {
        gates.push(gate(
            "generator",
            q.is_irreducible(),
            format!("{} modes, irreducible: {}", q.modes(), q.is_irreducible()),
        ));
    }
    match mode {
        Mode::Fixed => {
            let report = check_assumptions(&b.fixed_network, Regime::Fixed { mode: 0 });
            let connected = jointly_connected(b.fixed_network.graphs(), DEFAULT_CONNECTIVITY_TOL);
            gates.push(gate("connectivity", connected, format!("fixed graph connected: {connected}")));
            gates.extend(report.gates);
        }
        Mode::Switching | Mode::Averaged => {
            let q = b.generator.as_ref().context("chain section required")?;
            let pi = stationary(q)?;
            let connected = jointly_connected(b.network.graphs(), DEFAULT_CONNECTIVITY_TOL);
            gates.push(gate("connectivity", connected, format!("union of mode graphs connected: {connected}")));
            gates.extend(check_assumptions(&b.network, Regime::Switching { pi: &pi }).gates);
        }
    }
    if let Some(cand) = &loaded.scenario.candidate {
        if let Some(probe) = &cand.slater_probe {
            let ok = b.problem.check_slater(probe, 0.0);
            gates.push(gate("slater", ok, format!("strictly feasible at {probe:?}: {ok}")));
        }
        let licq = b.problem.check_licq(&cand.x, DEFAULT_TOL_ACTIVE, DEFAULT_TOL_RANK);
        gates.push(gate("licq", licq, format!("constraint qualification at {:?}: {licq}", cand.x)));
        match b.problem.derive_multipliers(&cand.x, DEFAULT_TOL_ACTIVE) {
            Ok(cert) => {
                let ok = cert.residuals.max() <= DEFAULT_EQUILIBRIUM_TOL;
                gates.push(gate(
                    "kkt",
                    ok,
                    format!("largest KKT residual {:e}, min lambda* {}", cert.residuals.max(), cert.min_lambda()),
                ));
            }
            Err(e) => gates.push(gate("kkt", false, e.to_string())),
        }
    }
    gates.extend(check_initial(&b.initial, b.problem.n()));
    Ok(ValidationReport { mode, gates })
}

#[derive(Debug, Clone, Serialize)]
pub struct KktOutput {
    pub certificate: KktCertificate,
    pub total_cost: f64,
    pub licq: bool,
}

pub fn kkt(loaded: &Loaded) -> Result<KktOutput> {
    let cand = loaded.scenario.candidate.as_ref().context("scenario has no [candidate] section")?;
    let p = &loaded.built.problem;
    let licq = p.check_licq(&cand.x, DEFAULT_TOL_ACTIVE, DEFAULT_TOL_RANK);
    let certificate = p.derive_multipliers(&cand.x, DEFAULT_TOL_ACTIVE)?;
    Ok(KktOutput {
        total_cost: p.total_cost(&cand.x)?,
        certificate,
        licq,
    })
}

/// One simulated trajectory with its metrics.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub mode: Mode,
    pub samples: Vec<(Option<usize>, SystemState)>,
    pub metrics: Option<Vec<MetricRow>>,
    pub equilibrium: Option<Equilibrium>,
    pub clamp_count: usize,
    pub mode_switches: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationMeta {
    pub name: String,
    pub mode: Mode,
    pub step: f64,
    pub horizon: f64,
    pub samples: usize,
    pub clamp_count: usize,
    pub mode_switches: usize,
    pub final_opt_error: Option<f64>,
    pub final_consensus_error: Option<f64>,
    pub final_lyapunov: Option<f64>,
    pub gates_passed: bool,
}

impl SimulationOutput {
    pub fn last(&self) -> &SystemState {
        &self.samples.last().expect("at least the initial sample").1
    }
}

/// Runs ensemble member `member` of the scenario in its mode.
pub fn run_simulation(loaded: &Loaded, member: u64) -> Result<SimulationOutput> {
    let b = &loaded.built;
    let cfg = &b.integrator;
    let mode = loaded.scenario.mode;
    let (samples, clamp_count, mode_switches): (Vec<(Option<usize>, SystemState)>, usize, usize) = match mode {
        Mode::Fixed => {
            let path = SwitchPath::constant(0, cfg.horizon);
            let t = simulate(&b.problem, &b.fixed_network, &path, cfg, &b.initial, member)?;
            let samples = t.samples.into_iter().map(|s| (Some(s.mode), s.state)).collect();
            (samples, t.clamp_count, 0)
        }
        Mode::Switching => {
            let q = b.generator.as_ref().context("chain section required")?;
            let alpha = b.alpha.context("chain.alpha required")?;
            let path = sample_member_path(q, b.initial_mode, alpha, cfg.horizon, cfg.seed, member)?;
            let t = simulate(&b.problem, &b.network, &path, cfg, &b.initial, member)?;
            let samples = t.samples.into_iter().map(|s| (Some(s.mode), s.state)).collect();
            (samples, t.clamp_count, t.mode_switches)
        }
        Mode::Averaged => {
            let q = b.generator.as_ref().context("chain section required")?;
            let avg = average_laplacian(&b.network, &stationary(q)?)?;
            let t = simulate_averaged(&b.problem, &avg, cfg, &b.initial, member, FACTOR_CHECK_EVERY)?;
            let samples = t.samples.into_iter().map(|s| (None, s)).collect();
            (samples, t.clamp_count, 0)
        }
    };
    let (equilibrium, metrics) = match &loaded.scenario.candidate {
        Some(cand) => {
            let cert = b.problem.derive_multipliers(&cand.x, DEFAULT_TOL_ACTIVE)?;
            let eq = build_equilibrium(&b.problem, &cert, DEFAULT_EQUILIBRIUM_TOL)?;
            let rows = convergence_metrics(&b.problem, &eq, &cfg.eta, samples.iter().map(|s| &s.1))?;
            (Some(eq), Some(rows))
        }
        None => (None, None),
    };
    Ok(SimulationOutput {
        mode,
        samples,
        metrics,
        equilibrium,
        clamp_count,
        mode_switches,
    })
}

pub fn write_simulation(loaded: &Loaded, out: &SimulationOutput, dir: &Path, gates_passed: bool) -> Result<Vec<PathBuf>> {
    let stem = format!("{}.{}", loaded.stem(), out.mode);
    let prov = &loaded.provenance;
    let rows: Vec<Row<'_>> = out.samples.iter().map(|(m, s)| Row { mode: *m, state: s }).collect();
    let mut written = Vec::new();
    let path = output_path(dir, &stem, "trajectory.csv");
    output::write_trajectory(&path, prov, &loaded.built.problem, &rows)?;
    written.push(path);
    let path = output_path(dir, &stem, "multipliers.csv");
    output::write_multipliers(&path, prov, &loaded.built.problem, &rows)?;
    written.push(path);
    if let Some(m) = &out.metrics {
        let path = output_path(dir, &stem, "metrics.csv");
        output::write_metrics(&path, prov, m)?;
        written.push(path);
    }
    let last_metrics = out.metrics.as_ref().and_then(|m| m.last());
    let meta = SimulationMeta {
        name: loaded.scenario.name.clone(),
        mode: out.mode,
        step: loaded.built.integrator.step,
        horizon: loaded.built.integrator.horizon,
        samples: out.samples.len(),
        clamp_count: out.clamp_count,
        mode_switches: out.mode_switches,
        final_opt_error: last_metrics.map(|m| m.opt_error),
        final_consensus_error: last_metrics.map(|m| m.consensus_error),
        final_lyapunov: last_metrics.map(|m| m.v),
        gates_passed,
    };
    let path = output_path(dir, &stem, "meta.json");
    output::write_json(&path, prov, "simulation", &meta)?;
    written.push(path);
    Ok(written)
}

/// Weak-convergence comparison with optional overrides.
pub fn run_compare(loaded: &Loaded, alphas: Option<Vec<f64>>, ensemble: Option<usize>) -> Result<WeakConvergenceReport> {
    let b = &loaded.built;
    let q = b.generator.as_ref().context("compare needs a [chain] section")?;
    let section = loaded.scenario.compare.as_ref();
    let alphas = alphas
        .or_else(|| section.map(|s| s.alphas.clone()))
        .context("no alphas given (use --alpha or a [compare] section)")?;
    let ensemble = ensemble
        .or_else(|| section.map(|s| s.ensemble))
        .context("no ensemble size given (use --ensemble or a [compare] section)")?;
    let mut integrator = b.integrator.clone();
    integrator.horizon = section.map_or(DEFAULT_COMPARE_HORIZON, |s| s.horizon);
    let cfg = WeakConvergenceConfig {
        alphas,
        ensemble,
        initial_mode: b.initial_mode,
        integrator,
    };
    Ok(weak_convergence_experiment(&b.problem, &b.network, q, &b.initial, &cfg)?)
}

fn print_gates(gates: &[Gate]) {
    for g in gates {
        println!("[{}] {}: {}", if g.passed { "pass" } else { "FAIL" }, g.name, g.detail);
    }
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Validate { common } => {
            let loaded = load(&common.scenario, common.mode, common.seed)?;
            let report = validate(&loaded)?;
            print_gates(&report.gates);
            let path = output_path(&common.out_dir, &format!("{}.validate", loaded.stem()), "report.json");
            output::write_json(&path, &loaded.provenance, "validate", &report)?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_WARNING })
        }
        Command::Kkt { common } => {
            let loaded = load(&common.scenario, common.mode, common.seed)?;
            let out = kkt(&loaded)?;
            println!("{}", output::to_json(&loaded.provenance, "kkt", &out));
            let path = output_path(&common.out_dir, &format!("{}.kkt", loaded.stem()), "report.json");
            output::write_json(&path, &loaded.provenance, "kkt", &out)?;
            let ok = out.licq && out.certificate.residuals.max() <= DEFAULT_EQUILIBRIUM_TOL;
            Ok(if ok { EXIT_OK } else { EXIT_WARNING })
        }
        Command::Simulate { common, strict } => {
            let loaded = load(&common.scenario, common.mode, common.seed)?;
            let report = validate(&loaded)?;
            if !report.passed() {
                for g in report.gates.iter().filter(|g| !g.passed) {
                    log::warn!("gate {} failed: {}", g.name, g.detail);
                }
                if strict {
                    print_gates(&report.gates);
                    eprintln!("refusing to simulate: validation gates failed (--strict)");
                    return Ok(EXIT_WARNING);
                }
            }
            let out = run_simulation(&loaded, 0)?;
            let files = write_simulation(&loaded, &out, &common.out_dir, report.passed())?;
            if let Some(last) = out.metrics.as_ref().and_then(|m| m.last()) {
                println!(
                    "t = {}: opt_error = {}, consensus_error = {}, V = {}",
                    last.t, last.opt_error, last.consensus_error, last.v
                );
            }
            println!("multiplier clamps: {}", out.clamp_count);
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(EXIT_OK)
        }
        Command::Compare {
            common,
            alpha,
            ensemble,
        } => {
            let loaded = load(&common.scenario, common.mode, common.seed)?;
            let report = run_compare(&loaded, alpha, ensemble)?;
            for r in &report.results {
                println!(
                    "alpha = {}: err = {} (sem {}), cost gap = {}, null test T2 = {} / {}",
                    r.alpha, r.err, r.err_sem, r.cost_gap, r.null_test.statistic, r.null_test.threshold
                );
            }
            println!("monotone: {}, separated: {}", report.monotone, report.separated);
            let stem = format!("{}.compare", loaded.stem());
            let path = output_path(&common.out_dir, &stem, "report.json");
            output::write_json(&path, &loaded.provenance, "compare", &report)?;
            let mut groups: Vec<(String, &[Vec<f64>])> = vec![("averaged".into(), &report.terminal_averaged)];
            for (r, t) in report.results.iter().zip(&report.terminal_switched) {
                groups.push((format!("alpha={}", r.alpha), t));
            }
            output::write_terminal_states(&output_path(&common.out_dir, &stem, "terminal.csv"), &loaded.provenance, &groups)?;
            if report.clamp_count > 0 {
                bail!("{} multiplier clamps during comparison", report.clamp_count);
            }
            Ok(if report.monotone && report.separated { EXIT_OK } else { EXIT_WARNING })
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
