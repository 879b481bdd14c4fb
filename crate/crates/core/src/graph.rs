//! Undirected communication graphs, Laplacians and the noisy network.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

pub const DEFAULT_CONNECTIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("graphs disagree on node count ({0} vs {1})")]
    NodeCountMismatch(usize, usize),
    #[error("network needs at least one graph")]
    Empty,
    #[error("noise intensity matrix must be {0}x{0}")]
    SigmaShape(usize),
    #[error("noise intensity {value} on channel ({from}, {to}) is negative or non-finite")]
    BadSigma { from: usize, to: usize, value: f64 },
    #[error("coupling strength c must be positive and finite, got {0}")]
    BadCoupling(f64),
}

/// Simple undirected graph with canonical `(min, max)` 0-based edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(GraphError::NodeOutOfRange(a + 1, b + 1, nodes));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a + 1));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { nodes, edges: set })
    }

    /// Edges given with 1-based node labels.
    pub fn from_one_based(nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut zero = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == 0 || b == 0 {
                return Err(GraphError::NodeOutOfRange(a, b, nodes));
            }
            zero.push((a - 1, b - 1));
        }
        Self::new(nodes, zero)
    }

    pub fn complete(nodes: usize) -> Self {
        let edges = (0..nodes).flat_map(|i| (i + 1..nodes).map(move |j| (i, j)));
        Self::new(nodes, edges).unwrap()
    }

    pub fn path(nodes: usize) -> Self {
        Self::new(nodes, (1..nodes).map(|i| (i - 1, i))).unwrap()
    }

    pub fn empty(nodes: usize) -> Self {
        Self {
            nodes,
            edges: BTreeSet::new(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nodes, self.nodes);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.nodes, self.nodes);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>, GraphError> {
    let asym = asymmetry(m);
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(GraphError::NotSymmetric(asym));
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Second-smallest eigenvalue of a Laplacian (algebraic connectivity).
/// Returns 0 for a single node.
pub fn lambda2(l: &DMatrix<f64>) -> Result<f64, GraphError> {
    let ev = symmetric_eigenvalues(l)?;
    Ok(ev.get(1).copied().unwrap_or(0.0).max(0.0))
}

pub fn laplacian_sum<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> Option<DMatrix<f64>> {
    graphs.into_iter().map(Graph::laplacian).reduce(|a, b| a + b)
}

/// Union connectivity: `λ₂(Σ_s L_s) > tol`.
pub fn jointly_connected(graphs: &[Graph], tol: f64) -> bool {
    match laplacian_sum(graphs) {
        Some(sum) => sum.nrows() == 1 || lambda2(&sum).is_ok_and(|l2| l2 > tol),
        None => false,
    }
}

/// `L ⊗ I_n`, the Laplacian acting on stacked `R^{nN}` agent states.
pub fn stack(l: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    l.kronecker(&DMatrix::<f64>::identity(n, n))
}

/// `y = (L ⊗ I_n) x` without forming the Kronecker product.
pub fn apply_stacked(l: &DMatrix<f64>, n: usize, x: &[f64], y: &mut [f64]) {
    let agents = l.nrows();
    y.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..agents {
        for j in 0..agents {
            let w = l[(i, j)];
            if w != 0.0 {
                for k in 0..n {
                    y[i * n + k] += w * x[j * n + k];
                }
            }
        }
    }
}

/// Switching set of graphs with per-channel multiplicative noise.
///
/// `sigma[(j, i)]` is the intensity on the channel carrying `x_j - x_i` to
/// agent `i`; channels are ordered pairs and need not be symmetric.
#[derive(Debug, Clone)]
pub struct Network {
    graphs: Vec<Graph>,
    laplacians: Vec<DMatrix<f64>>,
    neighbors: Vec<Vec<Vec<usize>>>,
    sigma: DMatrix<f64>,
    coupling: f64,
    kappa: f64,
}

impl Network {
    /// `kappa` defaults to the largest channel intensity.
    pub fn new(graphs: Vec<Graph>, sigma: DMatrix<f64>, coupling: f64, kappa: Option<f64>) -> Result<Self, GraphError> {
        let first = graphs.first().ok_or(GraphError::Empty)?;
        let nodes = first.nodes();
        if let Some(g) = graphs.iter().find(|g| g.nodes() != nodes) {
            return Err(GraphError::NodeCountMismatch(nodes, g.nodes()));
        }
        if sigma.nrows() != nodes || sigma.ncols() != nodes {
            return Err(GraphError::SigmaShape(nodes));
        }
        for j in 0..nodes {
            for i in 0..nodes {
                let v = sigma[(j, i)];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(GraphError::BadSigma {
                        from: j + 1,
                        to: i + 1,
                        value: v,
                    });
                }
            }
        }
        if !(coupling > 0.0 && coupling.is_finite()) {
            return Err(GraphError::BadCoupling(coupling));
        }
        let kappa = kappa.unwrap_or_else(|| max_channel_sigma(&graphs, &sigma));
        let laplacians = graphs.iter().map(Graph::laplacian).collect();
        let neighbors = graphs
            .iter()
            .map(|g| {
                let mut nb = vec![Vec::new(); nodes];
                for (a, b) in g.edges() {
                    nb[a].push(b);
                    nb[b].push(a);
                }
                nb.iter_mut().for_each(|v| v.sort_unstable());
                nb
            })
            .collect();
        Ok(Self {
            graphs,
            laplacians,
            neighbors,
            sigma,
            coupling,
            kappa,
        })
    }

    /// Same intensity on every channel.
    pub fn uniform(graphs: Vec<Graph>, sigma: f64, coupling: f64, kappa: Option<f64>) -> Result<Self, GraphError> {
        let nodes = graphs.first().ok_or(GraphError::Empty)?.nodes();
        let mut m = DMatrix::from_element(nodes, nodes, sigma);
        m.fill_diagonal(0.0);
        Self::new(graphs, m, coupling, kappa)
    }

    pub fn agents(&self) -> usize {
        self.graphs[0].nodes()
    }

    pub fn modes(&self) -> usize {
        self.graphs.len()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, mode: usize) -> &Graph {
        &self.graphs[mode]
    }

    pub fn laplacian(&self, mode: usize) -> &DMatrix<f64> {
        &self.laplacians[mode]
    }

    pub fn neighbors(&self, mode: usize, agent: usize) -> &[usize] {
        &self.neighbors[mode][agent]
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Intensity on channel `from -> to` (0-based).
    pub fn channel_sigma(&self, from: usize, to: usize) -> f64 {
        self.sigma[(from, to)]
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Largest intensity over channels that exist in some mode.
    pub fn max_sigma(&self) -> f64 {
        max_channel_sigma(&self.graphs, &self.sigma)
    }

    pub fn laplacian_sum(&self) -> DMatrix<f64> {
        self.laplacians.iter().fold(
            DMatrix::zeros(self.agents(), self.agents()),
            |acc, l| acc + l,
        )
    }

    /// Keeps a single mode; used for fixed-network runs.
    pub fn restrict_to(&self, mode: usize) -> Network {
        Network::new(
            vec![self.graphs[mode].clone()],
            self.sigma.clone(),
            self.coupling,
            Some(self.kappa),
        )
        .unwrap()
    }

    pub fn with_graphs(&self, graphs: Vec<Graph>) -> Result<Network, GraphError> {
        Network::new(graphs, self.sigma.clone(), self.coupling, Some(self.kappa))
    }
}

fn max_channel_sigma(graphs: &[Graph], sigma: &DMatrix<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for g in graphs {
        for (a, b) in g.edges() {
            m = m.max(sigma[(a, b)]).max(sigma[(b, a)]);
        }
    }
    m
}
