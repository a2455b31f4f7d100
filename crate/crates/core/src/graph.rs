//! Graphs, shift operators, and symmetric eigendecomposition.
//!
//! Graphs are undirected, weighted (weight defaults to 1.0), with no
//! self-loops in the edge set; anything on the diagonal of a shift operator
//! comes from the operator definition itself, never from the graph. Edges
//! are stored canonically (`i < j`, sorted, unique) so that every routine
//! that walks the edge list does so in one fixed order. Realized subgraphs
//! reuse the same assembly path, which makes a full-survival realization
//! bit-identical to the nominal operator.
//!
//! Matrices are dense: target sizes are a few hundred nodes, where dense
//! storage plus cyclic Jacobi beats sparse bookkeeping in both simplicity
//! and speed.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric;
use crate::rng;
use crate::{Error, Result};

/// One undirected edge, canonical form `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Undirected weighted graph on `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
}

impl Graph {
    /// Unweighted constructor; every edge gets weight 1.0.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::weighted(n, &edges.iter().map(|&(i, j)| (i, j, 1.0)).collect::<Vec<_>>())
    }

    /// Weighted constructor. Rejects self-loops, duplicate edges (in either
    /// orientation), out-of-range endpoints, and non-positive or non-finite
    /// weights.
    pub fn weighted(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut canon: Vec<Edge> = Vec::with_capacity(edges.len());
        for &(a, b, w) in edges {
            if a == b {
                return Err(Error::input(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::input(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::input(format!("edge ({a}, {b}) has bad weight {w}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            canon.push(Edge { i, j, w });
        }
        canon.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        if canon.windows(2).any(|p| (p[0].i, p[0].j) == (p[1].i, p[1].j)) {
            return Err(Error::input("duplicate edge".to_string()));
        }
        Ok(Graph { n, edges: canon })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of incident edges per node (unweighted degree).
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for e in &self.edges {
            d[e.i] += 1;
            d[e.j] += 1;
        }
        d
    }

    /// Dense weighted adjacency matrix.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for e in &self.edges {
            m[[e.i, e.j]] = e.w;
            m[[e.j, e.i]] = e.w;
        }
        m
    }

    /// Parses the plain-text edge-list format: `#` starts a comment, the
    /// first payload line is `n <node count>`, every following line is
    /// `i j [weight]` with 0-based endpoints.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::config("edge list is empty"))?;
        let mut parts = header.split_whitespace();
        let (tag, count) = (parts.next(), parts.next());
        if tag != Some("n") || parts.next().is_some() {
            return Err(Error::config(format!("bad header line: {header:?}")));
        }
        let n: usize = count
            .ok_or_else(|| Error::config("header missing node count"))?
            .parse()
            .map_err(|_| Error::config(format!("bad node count in header: {header:?}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(fields.len() == 2 || fields.len() == 3) {
                return Err(Error::config(format!("bad edge line: {line:?}")));
            }
            let i: usize = fields[0]
                .parse()
                .map_err(|_| Error::config(format!("bad endpoint in {line:?}")))?;
            let j: usize = fields[1]
                .parse()
                .map_err(|_| Error::config(format!("bad endpoint in {line:?}")))?;
            let w: f64 = match fields.get(2) {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::config(format!("bad weight in {line:?}")))?,
                None => 1.0,
            };
            edges.push((i, j, w));
        }
        Self::weighted(n, &edges).map_err(|e| Error::config(e.to_string()))
    }

    /// Serializes to the edge-list format parsed by [`Graph::from_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for e in &self.edges {
            if e.w == 1.0 {
                out.push_str(&format!("{} {}\n", e.i, e.j));
            } else {
                out.push_str(&format!("{} {} {}\n", e.i, e.j, e.w));
            }
        }
        out
    }
}

/// Largest unweighted degree; 0 for an edgeless graph.
pub fn max_degree(g: &Graph) -> usize {
    g.degrees().into_iter().max().unwrap_or(0)
}

/// Stochastic block model with equal-size contiguous communities: node `v`
/// belongs to community `v / (n / communities)`. Each within-community pair
/// appears independently with probability `p_intra`, each cross pair with
/// `p_inter`. Weights are 1.0.
pub fn sbm_generate(
    n: usize,
    communities: usize,
    p_intra: f64,
    p_inter: f64,
    seed: u64,
) -> Result<Graph> {
    if n == 0 || communities == 0 {
        return Err(Error::config("sbm needs n >= 1 and communities >= 1"));
    }
    if n % communities != 0 {
        return Err(Error::config(format!(
            "community count {communities} does not divide n = {n}"
        )));
    }
    for p in [p_intra, p_inter] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("edge probability {p} outside [0, 1]")));
        }
    }
    let block = n / communities;
    let mut rng = rng::chacha(seed, &[0x5b_b1]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if i / block == j / block { p_intra } else { p_inter };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, &edges)
}

/// Which symmetric matrix represents the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftVariant {
    /// Weighted adjacency matrix.
    Adjacency,
    /// Combinatorial Laplacian `D - A`.
    Laplacian,
    /// Adjacency divided by its own largest eigenvalue. Realized subgraphs
    /// reuse the nominal scale instead of renormalizing, so the nominal
    /// operator keeps unit spectral radius while realizations may fall below.
    NormalizedAdjacency,
}

impl ShiftVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ShiftVariant::Adjacency => "adjacency",
            ShiftVariant::Laplacian => "laplacian",
            ShiftVariant::NormalizedAdjacency => "normalized-adjacency",
        }
    }
}

impl std::str::FromStr for ShiftVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adjacency" => Ok(ShiftVariant::Adjacency),
            "laplacian" => Ok(ShiftVariant::Laplacian),
            "normalized-adjacency" | "normalized_adjacency" | "normalized" => {
                Ok(ShiftVariant::NormalizedAdjacency)
            }
            other => Err(Error::config(format!("unknown shift variant {other:?}"))),
        }
    }
}

/// Dense symmetric shift operator tied to its source graph.
#[derive(Debug, Clone)]
pub struct ShiftOperator {
    matrix: Array2<f64>,
    variant: ShiftVariant,
    graph: Graph,
    /// Nominal `lambda_max(A)`; present only for `NormalizedAdjacency`.
    norm_scale: Option<f64>,
}

impl ShiftOperator {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn variant(&self) -> ShiftVariant {
        self.variant
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }

    /// Normalization constant frozen at construction, if any.
    pub fn norm_scale(&self) -> Option<f64> {
        self.norm_scale
    }

    /// Constructor for matrices produced by the shared assembly path, where
    /// symmetry and support hold by construction.
    pub(crate) fn assemble_unchecked(
        matrix: Array2<f64>,
        variant: ShiftVariant,
        graph: Graph,
        norm_scale: Option<f64>,
    ) -> ShiftOperator {
        ShiftOperator { matrix, variant, graph, norm_scale }
    }

    /// Escape hatch for callers that build a shift matrix directly (for
    /// instance a diagonal self-loop operator in a test). Validates shape
    /// and symmetry against the provided source graph.
    pub fn from_matrix(matrix: Array2<f64>, variant: ShiftVariant, graph: Graph) -> Result<Self> {
        let n = graph.node_count();
        if matrix.dim() != (n, n) {
            return Err(Error::input(format!(
                "matrix shape {:?} does not match {n} nodes",
                matrix.dim()
            )));
        }
        let op = ShiftOperator { matrix, variant, graph, norm_scale: None };
        op.validate()?;
        Ok(op)
    }

    /// Checks the structural invariants: symmetry to 1e-12, off-diagonal
    /// support confined to graph edges, and (for the normalized variant)
    /// spectral radius at most `1 + 1e-9`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = &self.matrix;
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 {
                    return Err(Error::numeric(format!(
                        "asymmetry at ({i}, {j}): {} vs {}",
                        m[[i, j]],
                        m[[j, i]]
                    )));
                }
            }
        }
        let mut allowed = vec![false; n * n];
        for e in self.graph.edges() {
            allowed[e.i * n + e.j] = true;
            allowed[e.j * n + e.i] = true;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && m[[i, j]] != 0.0 && !allowed[i * n + j] {
                    return Err(Error::input(format!(
                        "nonzero off-diagonal ({i}, {j}) without a matching edge"
                    )));
                }
            }
        }
        if self.variant == ShiftVariant::NormalizedAdjacency {
            let decomp = eigendecompose(self)?;
            if decomp.spectral_radius() > 1.0 + 1e-9 {
                return Err(Error::numeric(format!(
                    "normalized adjacency has spectral radius {}",
                    decomp.spectral_radius()
                )));
            }
        }
        Ok(())
    }
}

/// Assembles the shift matrix from the subset of edges `keep` selects,
/// walking the canonical edge list in order. `norm_scale` is the fixed
/// divisor for `NormalizedAdjacency` (ignored otherwise). Shared by nominal
/// construction and random realizations so both take the same float path.
pub(crate) fn assemble_shift_matrix(
    g: &Graph,
    variant: ShiftVariant,
    norm_scale: Option<f64>,
    mut keep: impl FnMut(usize) -> bool,
) -> Array2<f64> {
    let n = g.node_count();
    let mut m = Array2::zeros((n, n));
    match variant {
        ShiftVariant::Adjacency | ShiftVariant::NormalizedAdjacency => {
            for (idx, e) in g.edges().iter().enumerate() {
                if keep(idx) {
                    m[[e.i, e.j]] = e.w;
                    m[[e.j, e.i]] = e.w;
                }
            }
            if variant == ShiftVariant::NormalizedAdjacency {
                let s = norm_scale.expect("normalized adjacency needs a scale");
                m.mapv_inplace(|v| v / s);
            }
        }
        ShiftVariant::Laplacian => {
            for (idx, e) in g.edges().iter().enumerate() {
                if keep(idx) {
                    m[[e.i, e.j]] = -e.w;
                    m[[e.j, e.i]] = -e.w;
                    m[[e.i, e.i]] += e.w;
                    m[[e.j, e.j]] += e.w;
                }
            }
        }
    }
    m
}

/// Builds the nominal shift operator for a graph.
///
/// For `NormalizedAdjacency` the scale is the largest adjacency eigenvalue,
/// computed here once and frozen into the operator; an edgeless graph has no
/// positive eigenvalue and is rejected.
pub fn shift_from_graph(g: &Graph, variant: ShiftVariant) -> Result<ShiftOperator> {
    if g.node_count() == 0 {
        return Err(Error::config("shift operator over an empty graph"));
    }
    let norm_scale = match variant {
        ShiftVariant::NormalizedAdjacency => {
            let a = assemble_shift_matrix(g, ShiftVariant::Adjacency, None, |_| true);
            let (eigenvalues, _) = jacobi_eigen(&a)?;
            let lambda_max = eigenvalues[eigenvalues.len() - 1];
            if lambda_max <= 0.0 {
                return Err(Error::config(
                    "normalized adjacency needs a positive largest eigenvalue; graph has no edges",
                ));
            }
            Some(lambda_max)
        }
        _ => None,
    };
    let matrix = assemble_shift_matrix(g, variant, norm_scale, |_| true);
    Ok(ShiftOperator { matrix, variant, graph: g.clone(), norm_scale })
}

/// Eigenvalues (ascending) and matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Array1<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Array2<f64>,
}

impl SpectralDecomposition {
    /// Largest absolute eigenvalue.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max)
    }

    /// Reassembles `V diag(lambda) V^T`; used to check reconstruction error.
    pub fn reconstruct(&self) -> Array2<f64> {
        let v = &self.eigenvectors;
        let scaled = v * &self.eigenvalues.view().insert_axis(ndarray::Axis(0));
        scaled.dot(&v.t())
    }

    /// Max-abs reconstruction error against the original matrix.
    pub fn reconstruction_error(&self, original: &Array2<f64>) -> f64 {
        numeric::max_abs_diff(self.reconstruct().view(), original.view())
    }

    /// Max-abs deviation of `V^T V` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let v = &self.eigenvectors;
        let gram = v.t().dot(v);
        let eye = Array2::eye(v.ncols());
        numeric::max_abs_diff(gram.view(), eye.view())
    }
}

/// Full eigendecomposition of a shift operator.
pub fn eigendecompose(s: &ShiftOperator) -> Result<SpectralDecomposition> {
    let (eigenvalues, eigenvectors) = jacobi_eigen(s.matrix())?;
    Ok(SpectralDecomposition { eigenvalues, eigenvectors })
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-12;

/// Cyclic Jacobi eigendecomposition for a dense symmetric matrix.
///
/// Sweeps the strict upper triangle, rotating away each off-diagonal entry,
/// until the sum of absolute off-diagonal values drops below
/// `1e-12 * max(1, ||A||_F)` or the 100-sweep budget runs out. Eigenvalues
/// come back sorted ascending with eigenvector columns permuted to match.
pub(crate) fn jacobi_eigen(matrix: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::input("eigendecomposition needs a square matrix".to_string()));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("matrix has non-finite entries".to_string()));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }

    let mut a = matrix.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let fro = numeric::frobenius_sq(matrix.view()).sqrt();
    let tol = JACOBI_OFF_TOL * fro.max(1.0);

    let off_sum = |a: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a[[i, j]].abs();
            }
        }
        s
    };

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_sum(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                // Stable rotation angle: t = sign(theta) / (|theta| + sqrt(theta^2 + 1)).
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                let app = a[[p, p]];
                let aqq = a[[q, q]];
                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[[r, p]];
                        let arq = a[[r, q]];
                        a[[r, p]] = arp - s * (arq + tau * arp);
                        a[[p, r]] = a[[r, p]];
                        a[[r, q]] = arq + s * (arp - tau * arq);
                        a[[q, r]] = a[[r, q]];
                    }
                }
                for r in 0..n {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = vrp - s * (vrq + tau * vrp);
                    v[[r, q]] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }
    if !converged && off_sum(&a) > tol {
        return Err(Error::numeric(format!(
            "jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps (residual {})",
            off_sum(&a)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].partial_cmp(&a[[j, j]]).expect("finite eigenvalues"));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut eigenvectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).assign(&v.column(src));
    }
    Ok((eigenvalues, eigenvectors))
}
