//! Scenario files: one TOML document describing the problem, network,
//! switching chain, integrator and initial condition.
//!
//! Edge lists and modes are 1-based, as written by people; everything is
//! converted to 0-based when the scenario is built. `sigma` is either one
//! intensity for every channel or an `N × N` matrix whose row `j`, column
//! `i` entry is the intensity of channel `j -> i`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use switchopt_core::nalgebra::DMatrix;
use switchopt_core::chain::{validate_generator, ChainError, Generator};
use switchopt_core::dynamics::{IntegratorConfig, SystemState, DEFAULT_LAMBDA_FLOOR, DEFAULT_STEP};
use switchopt_core::graph::{Graph, GraphError, Network};
use switchopt_core::problem::{AgentSpec, Problem, ProblemError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("field `{field}`: {source}")]
    Problem { field: String, source: ProblemError },
    #[error("field `{field}`: {source}")]
    Graph { field: String, source: GraphError },
    #[error("field `chain.generator`: {0}")]
    Chain(#[from] ChainError),
}

fn field_err(field: impl Into<String>, msg: impl fmt::Display) -> ScenarioError {
    ScenarioError::Field {
        field: field.into(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Switching,
    Averaged,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fixed => "fixed",
            Mode::Switching => "switching",
            Mode::Averaged => "averaged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, len: usize, field: &str) -> Result<Vec<f64>, ScenarioError> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; len]),
            ScalarOrList::List(v) if v.len() == len => Ok(v.clone()),
            ScalarOrList::List(v) => Err(field_err(field, format!("expected {len} entries, found {}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Uniform(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    /// `"complete"` or `"path"`.
    Named(String),
    Edges(Vec<[usize; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub cost: String,
    #[serde(default)]
    pub inequalities: Vec<String>,
    #[serde(default)]
    pub equalities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dimension: usize,
    pub agents: Vec<AgentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub coupling: f64,
    pub sigma: SigmaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Graph used in fixed mode; defaults to the initial mode's graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_graph: Option<GraphSpec>,
    /// One edge list per switching mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub graphs: Vec<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub generator: Vec<Vec<f64>>,
    pub alpha: f64,
    #[serde(default = "one")]
    pub initial_mode: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_step")]
    pub step: f64,
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_eta")]
    pub eta: ScalarOrList,
    #[serde(default = "default_floor")]
    pub lambda_floor: f64,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}
fn default_stride() -> usize {
    100
}
fn default_eta() -> ScalarOrList {
    ScalarOrList::Scalar(1.0)
}
fn default_floor() -> f64 {
    DEFAULT_LAMBDA_FLOOR
}
fn default_multiplier() -> ScalarOrList {
    ScalarOrList::Scalar(3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// One point per agent.
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_multiplier")]
    pub lambda: ScalarOrList,
    #[serde(default = "default_multiplier")]
    pub nu: ScalarOrList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSection {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_probe: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub alphas: Vec<f64>,
    pub ensemble: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub problem: ProblemSection,
    pub network: NetworkSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSection>,
    pub integrator: IntegratorSection,
    pub initial: InitialSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<CandidateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

/// Everything a command needs, converted to core types.
#[derive(Debug, Clone)]
pub struct Built {
    pub problem: Problem,
    /// All switching modes (a single graph when none are listed).
    pub network: Network,
    /// The single graph used in fixed mode.
    pub fixed_network: Network,
    pub generator: Option<Generator>,
    /// 0-based.
    pub initial_mode: usize,
    pub alpha: Option<f64>,
    pub integrator: IntegratorConfig,
    pub initial: SystemState,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Canonical serialization; the scenario hash is taken over this text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario types always serialize")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn build(&self) -> Result<Built, ScenarioError> {
        let n = self.problem.dimension;
        if n == 0 {
            return Err(field_err("problem.dimension", "must be at least 1"));
        }
        let mut agents = Vec::with_capacity(self.problem.agents.len());
        for (i, a) in self.problem.agents.iter().enumerate() {
            let ineq: Vec<&str> = a.inequalities.iter().map(String::as_str).collect();
            let eq: Vec<&str> = a.equalities.iter().map(String::as_str).collect();
            let spec = AgentSpec::parse(&a.cost, &ineq, &eq, n).map_err(|e| ScenarioError::Problem {
                field: format!("problem.agents[{}]", i + 1),
                source: e.into(),
            })?;
            agents.push(spec);
        }
        let problem = Problem::new(n, agents).map_err(|source| ScenarioError::Problem {
            field: "problem".into(),
            source,
        })?;
        let agents = problem.num_agents();

        let graph_err = |field: String| move |source| ScenarioError::Graph { field, source };
        let graphs: Vec<Graph> = self
            .network
            .graphs
            .iter()
            .enumerate()
            .map(|(s, edges)| {
                let e: Vec<(usize, usize)> = edges.iter().map(|&[a, b]| (a, b)).collect();
                Graph::from_one_based(agents, &e).map_err(graph_err(format!("network.graphs[{}]", s + 1)))
            })
            .collect::<Result<_, _>>()?;

        let (generator, initial_mode, alpha) = match &self.chain {
            Some(c) => {
                let q = DMatrix::from_fn(c.generator.len(), c.generator.len(), |i, j| {
                    c.generator[i].get(j).copied().unwrap_or(f64::NAN)
                });
                if c.generator.iter().any(|row| row.len() != c.generator.len()) {
                    return Err(field_err("chain.generator", "must be a square matrix"));
                }
                let q = validate_generator(q)?;
                if q.modes() != graphs.len() {
                    return Err(field_err(
                        "chain.generator",
                        format!("{} modes but network.graphs lists {}", q.modes(), graphs.len()),
                    ));
                }
                if c.initial_mode == 0 || c.initial_mode > q.modes() {
                    return Err(field_err("chain.initial_mode", format!("must be in 1..={}", q.modes())));
                }
                if !(c.alpha > 0.0 && c.alpha.is_finite()) {
                    return Err(field_err("chain.alpha", "must be positive"));
                }
                (Some(q), c.initial_mode - 1, Some(c.alpha))
            }
            None => (None, 0, None),
        };
        if matches!(self.mode, Mode::Switching | Mode::Averaged) && generator.is_none() {
            return Err(field_err("chain", format!("required in {} mode", self.mode)));
        }

        let fixed_graph = match &self.network.fixed_graph {
            Some(GraphSpec::Named(name)) => match name.as_str() {
                "complete" => Graph::complete(agents),
                "path" => Graph::path(agents),
                other => return Err(field_err("network.fixed_graph", format!("unknown graph `{other}`"))),
            },
            Some(GraphSpec::Edges(edges)) => {
                let e: Vec<(usize, usize)> = edges.iter().map(|&[a, b]| (a, b)).collect();
                Graph::from_one_based(agents, &e).map_err(graph_err("network.fixed_graph".into()))?
            }
            None => graphs
                .get(initial_mode)
                .cloned()
                .ok_or_else(|| field_err("network", "needs fixed_graph or graphs"))?,
        };

        let sigma = match &self.network.sigma {
            SigmaSpec::Uniform(v) => {
                let mut m = DMatrix::from_element(agents, agents, *v);
                m.fill_diagonal(0.0);
                m
            }
            SigmaSpec::Matrix(rows) => {
                if rows.len() != agents || rows.iter().any(|r| r.len() != agents) {
                    return Err(field_err("network.sigma", format!("must be {agents} x {agents}")));
                }
                DMatrix::from_fn(agents, agents, |j, i| rows[j][i])
            }
        };
        let c = self.network.coupling;
        let kappa = self.network.kappa;
        let all_graphs = if graphs.is_empty() { vec![fixed_graph.clone()] } else { graphs };
        let network =
            Network::new(all_graphs, sigma.clone(), c, kappa).map_err(graph_err("network".into()))?;
        let fixed_network =
            Network::new(vec![fixed_graph], sigma, c, Some(network.kappa())).map_err(graph_err("network".into()))?;

        let it = &self.integrator;
        let integrator = IntegratorConfig {
            step: it.step,
            horizon: it.horizon,
            stride: it.stride,
            eta: it.eta.expand(problem.r(), "integrator.eta")?,
            lambda_floor: it.lambda_floor,
            seed: self.seed,
        };
        if !(it.step > 0.0 && it.horizon > 0.0 && it.stride > 0) {
            return Err(field_err("integrator", "step, horizon and stride must be positive"));
        }
        if integrator.eta.iter().any(|&e| !(e > 0.0)) {
            return Err(field_err("integrator.eta", "entries must be positive"));
        }

        let init = &self.initial;
        let flat = |rows: &[Vec<f64>], field: &str| -> Result<Vec<f64>, ScenarioError> {
            if rows.len() != agents || rows.iter().any(|r| r.len() != n) {
                return Err(field_err(field, format!("expected {agents} points of dimension {n}")));
            }
            Ok(rows.iter().flatten().copied().collect())
        };
        let x = flat(&init.x, "initial.x")?;
        let theta = match &init.theta {
            Some(t) => flat(t, "initial.theta")?,
            None => vec![0.0; x.len()],
        };
        let lambda = init.lambda.expand(problem.r(), "initial.lambda")?;
        let nu = init.nu.expand(problem.s(), "initial.nu")?;
        if let Some(cand) = &self.candidate {
            if cand.x.len() != n {
                return Err(field_err("candidate.x", format!("expected dimension {n}")));
            }
            if cand.slater_probe.as_ref().is_some_and(|p| p.len() != n) {
                return Err(field_err("candidate.slater_probe", format!("expected dimension {n}")));
            }
        }
        Ok(Built {
            problem,
            network,
            fixed_network,
            generator,
            initial_mode,
            alpha,
            integrator,
            initial: SystemState::new(0.0, x, theta, lambda, nu),
        })
    }
}
