//! Result files. Every file starts with the scenario hash and root seed;
//! floats use the shortest representation that round-trips exactly, and
//! nothing time- or host-dependent is written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use switchopt_core::analysis::MetricRow;
use switchopt_core::dynamics::SystemState;
use switchopt_core::problem::Problem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub scenario_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn header(&self) -> String {
        format!("# scenario_hash={} seed={}\n", self.scenario_hash, self.seed)
    }
}

/// A recorded state and the mode active at that time (`None` for the
/// averaged system).
pub struct Row<'a> {
    pub mode: Option<usize>,
    pub state: &'a SystemState,
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn output_path(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{stem}.{suffix}"))
}

/// `t, mode, x{i}_{k}…, theta{i}_{k}…` with 1-based indices.
pub fn write_trajectory(path: &Path, prov: &Provenance, problem: &Problem, rows: &[Row<'_>]) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_all(prov.header().as_bytes())?;
    let n = problem.n();
    let mut cols = vec!["t".to_string(), "mode".to_string()];
    for prefix in ["x", "theta"] {
        for i in 1..=problem.num_agents() {
            for k in 1..=n {
                cols.push(format!("{prefix}{i}_{k}"));
            }
        }
    }
    writeln!(w, "{}", cols.join(","))?;
    for row in rows {
        let mode = row.mode.map_or_else(|| "avg".to_string(), |m| (m + 1).to_string());
        writeln!(
            w,
            "{},{},{},{}",
            row.state.t,
            mode,
            join(row.state.x().iter().copied()),
            join(row.state.theta())
        )?;
    }
    w.flush()
}

/// `t, lambda{i}_{j}…, nu{i}_{j}…` named by owning agent and local index.
pub fn write_multipliers(path: &Path, prov: &Provenance, problem: &Problem, rows: &[Row<'_>]) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_all(prov.header().as_bytes())?;
    let layout = problem.layout();
    let mut cols = vec!["t".to_string()];
    for k in 0..problem.r() {
        let (i, j) = layout.ineq_owner(k);
        cols.push(format!("lambda{}_{}", i + 1, j + 1));
    }
    for k in 0..problem.s() {
        let (i, j) = layout.eq_owner(k);
        cols.push(format!("nu{}_{}", i + 1, j + 1));
    }
    writeln!(w, "{}", cols.join(","))?;
    for row in rows {
        let s = row.state;
        let values: Vec<f64> = std::iter::once(s.t)
            .chain(s.lambda.iter().copied())
            .chain(s.nu.iter().copied())
            .collect();
        writeln!(w, "{}", join(values))?;
    }
    w.flush()
}

pub fn write_metrics(path: &Path, prov: &Provenance, rows: &[MetricRow]) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_all(prov.header().as_bytes())?;
    writeln!(w, "t,V,V1,V2,V3,V4,consensus_error,opt_error,cost_gap")?;
    for r in rows {
        writeln!(
            w,
            "{}",
            join([r.t, r.v, r.v1, r.v2, r.v3, r.v4, r.consensus_error, r.opt_error, r.cost_gap])
        )?;
    }
    w.flush()
}

/// Rows of terminal `x̂` per ensemble member, tagged by group label.
pub fn write_terminal_states(path: &Path, prov: &Provenance, groups: &[(String, &[Vec<f64>])]) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_all(prov.header().as_bytes())?;
    let dim = groups.iter().find_map(|g| g.1.first()).map_or(0, Vec::len);
    let cols: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    writeln!(w, "group,member,{}", cols.join(","))?;
    for (label, rows) in groups {
        for (m, x) in rows.iter().enumerate() {
            writeln!(w, "{label},{m},{}", join(x.iter().copied()))?;
        }
    }
    w.flush()
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    scenario_hash: &'a str,
    seed: u64,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn to_json<T: Serialize>(prov: &Provenance, kind: &str, body: &T) -> String {
    let env = Envelope {
        scenario_hash: &prov.scenario_hash,
        seed: prov.seed,
        kind,
        body,
    };
    serde_json::to_string_pretty(&env).expect("report types always serialize")
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, kind: &str, body: &T) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_all(to_json(prov, kind, body).as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}
