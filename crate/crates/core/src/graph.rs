//! Network topologies and Metropolis-Hastings mixing matrices.
//!
//! Agents are indexed `0..n` in memory. The text edge-list format and the
//! error messages use 1-based indices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for the doubly-stochastic checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("agent count {n} out of range ({reason})")]
    InvalidSize { n: usize, reason: &'static str },
    #[error("self-loop at agent {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references an agent outside 1..={2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("graph is disconnected; component containing agent 1 is {component:?}")]
    Disconnected { component: Vec<usize> },
    #[error("edge_list topology requires an explicit edge list")]
    MissingEdgeList,
    #[error("edge list parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mixing matrix invalid: {0}")]
    InvalidMixing(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Topology families used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Cycle,
    Complete,
    /// Eight agents, agent `i` (1-based) linked to `1 + i mod 8`,
    /// `1 + (i+3) mod 8` and `1 + (i+6) mod 8`, then symmetrized.
    ModRing,
    EdgeList,
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cycle" => Ok(Self::Cycle),
            "complete" => Ok(Self::Complete),
            "mod_ring" => Ok(Self::ModRing),
            "edge_list" => Ok(Self::EdgeList),
            other => Err(format!("unknown topology kind `{other}`")),
        }
    }
}

/// Undirected simple graph on `n` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from 0-based undirected pairs. Duplicates and reversed
    /// duplicates collapse to one edge. Connectivity is not checked here.
    pub fn new<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(GraphError::InvalidSize { n, reason: "need at least one agent" });
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::EdgeOutOfRange(i + 1, j + 1, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i + 1));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as sorted 0-based pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Agents reachable from agent 0 (0-based, sorted).
    fn component_of_first(&self) -> Vec<usize> {
        let adj = self.neighbors();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        (0..self.n).filter(|&v| seen[v]).collect()
    }

    pub fn is_connected(&self) -> bool {
        self.component_of_first().len() == self.n
    }

    /// Errors with the (1-based) component of agent 1 when the graph is not connected.
    pub fn ensure_connected(&self) -> Result<(), GraphError> {
        let comp = self.component_of_first();
        if comp.len() == self.n {
            Ok(())
        } else {
            Err(GraphError::Disconnected { component: comp.into_iter().map(|v| v + 1).collect() })
        }
    }

    /// Serializes to the edge-list text format: first line `n`, then one
    /// 1-based `i j` pair per line.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
        out
    }

    /// Parses the edge-list text format. Blank lines and `#` comments are skipped.
    pub fn from_edge_list_text(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, head) = lines.next().ok_or(GraphError::Parse { line: 1, msg: "empty input".into() })?;
        let n: usize = head
            .parse()
            .map_err(|e| GraphError::Parse { line, msg: format!("bad agent count: {e}") })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let mut parts = l.split_whitespace();
            let mut next = || -> Result<usize, GraphError> {
                let tok = parts.next().ok_or(GraphError::Parse { line, msg: "expected `i j`".into() })?;
                tok.parse::<usize>()
                    .map_err(|e| GraphError::Parse { line, msg: format!("bad index `{tok}`: {e}") })
            };
            let (i, j) = (next()?, next()?);
            if parts.next().is_some() {
                return Err(GraphError::Parse { line, msg: "trailing tokens".into() });
            }
            if i == 0 || j == 0 || i > n || j > n {
                return Err(GraphError::EdgeOutOfRange(i, j, n));
            }
            edges.push((i - 1, j - 1));
        }
        Graph::new(n, edges)
    }
}

/// Builds one of the experiment topologies.
///
/// `extra` holds 0-based pairs and is only consulted for [`TopologyKind::EdgeList`].
pub fn build_topology(
    kind: TopologyKind,
    n: usize,
    extra: Option<&[(usize, usize)]>,
) -> Result<Graph, GraphError> {
    if n < 2 {
        return Err(GraphError::InvalidSize { n, reason: "need at least two agents" });
    }
    let graph = match kind {
        TopologyKind::Cycle => Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)).filter(|(i, j)| i != j))?,
        TopologyKind::Complete => {
            Graph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))?
        }
        TopologyKind::ModRing => {
            if n != 8 {
                return Err(GraphError::InvalidSize { n, reason: "mod_ring is defined for n = 8 only" });
            }
            Graph::new(8, mod_ring_directed_links().into_iter().flatten())?
        }
        TopologyKind::EdgeList => {
            let edges = extra.ok_or(GraphError::MissingEdgeList)?;
            Graph::new(n, edges.iter().copied())?
        }
    };
    graph.ensure_connected()?;
    Ok(graph)
}

/// The directed neighbor sets of the eight-agent ring before symmetrization,
/// as 0-based `(from, to)` pairs per agent.
pub fn mod_ring_directed_links() -> Vec<Vec<(usize, usize)>> {
    (1..=8usize)
        .map(|i| {
            [i % 8, (i + 3) % 8, (i + 6) % 8]
                .into_iter()
                // 1 + k mod 8 in 1-based terms is k mod 8 in 0-based terms.
                .map(|k| (i - 1, k))
                .collect()
        })
        .collect()
}

/// Doubly stochastic weight matrix with its cached spectral quantities.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    beta: f64,
    lambda2: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Validates `weights` (square, non-negative, positive diagonal, rows and
    /// columns summing to one) and caches `beta = sigma_2` and `lambda_2`.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(GraphError::InvalidMixing(format!(
                "expected a non-empty square matrix, got {}x{}",
                n,
                weights.ncols()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(GraphError::NonFinite);
        }
        for i in 0..n {
            let row: f64 = weights.row(i).sum();
            let col: f64 = weights.column(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(GraphError::InvalidMixing(format!(
                    "row/column {} sums to {row}/{col}",
                    i + 1
                )));
            }
            if weights[(i, i)] <= 0.0 {
                return Err(GraphError::InvalidMixing(format!("diagonal entry {} is not positive", i + 1)));
            }
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(GraphError::InvalidMixing("negative entry".into()));
        }
        let beta = second_largest_singular(&weights)?;
        let lambda2 = second_largest_eigenvalue(&weights);
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| weights[(i, j)] != 0.0).map(|j| (j, weights[(i, j)])).collect())
            .collect();
        Ok(Self { weights, beta, lambda2, rows })
    }

    /// `P = 11^T / n`, the mixing matrix that reaches consensus in one round.
    pub fn uniform(n: usize) -> Result<Self, GraphError> {
        Self::from_weights(DMatrix::from_element(n, n, 1.0 / n as f64))
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// `sigma_2(P)`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Second largest eigenvalue (signed). Only meaningful for symmetric `P`;
    /// for `n = 1` it is reported as 0.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Non-zero entries of row `i` as `(j, p_ij)`, ascending in `j`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `sum_j p_ij x_j` for every agent, summed in ascending `j`.
    pub fn mix<T>(&self, xs: &[T]) -> Vec<T>
    where
        T: Mixable,
    {
        self.rows
            .iter()
            .map(|row| {
                let mut acc = xs[row[0].0].scaled(row[0].1);
                for &(j, w) in &row[1..] {
                    acc.axpy_from(w, &xs[j]);
                }
                acc
            })
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.weights == self.weights.transpose()
    }
}

/// Values the mixing step can combine.
pub trait Mixable {
    fn scaled(&self, w: f64) -> Self;
    fn axpy_from(&mut self, w: f64, other: &Self);
}

impl Mixable for nalgebra::DVector<f64> {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }

    fn axpy_from(&mut self, w: f64, other: &Self) {
        self.axpy(w, other, 1.0);
    }
}

/// Metropolis-Hastings weights: `p_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, diagonal as the row residual.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix, GraphError> {
    g.ensure_connected()?;
    let n = g.n();
    let deg = g.degrees();
    let mut p = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        p[(i, j)] = w;
        p[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| p[(i, j)]).sum();
        p[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_weights(p)
}

/// Second largest singular value of a square matrix. Symmetric inputs go
/// through a symmetric eigendecomposition; others through an SVD.
pub fn second_largest_singular(p: &DMatrix<f64>) -> Result<f64, GraphError> {
    if p.iter().any(|w| !w.is_finite()) {
        return Err(GraphError::NonFinite);
    }
    if p.nrows() != p.ncols() {
        return Err(GraphError::InvalidMixing("matrix is not square".into()));
    }
    if p.nrows() < 2 {
        return Ok(0.0);
    }
    let mut sv: Vec<f64> = if *p == p.transpose() {
        SymmetricEigen::new(p.clone()).eigenvalues.iter().map(|l| l.abs()).collect()
    } else {
        p.clone().svd(false, false).singular_values.iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv[1])
}

fn second_largest_eigenvalue(p: &DMatrix<f64>) -> f64 {
    if p.nrows() < 2 {
        return 0.0;
    }
    let sym = (p + p.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[1]
}
