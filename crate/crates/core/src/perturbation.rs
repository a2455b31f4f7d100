//! Random edge sampling of a nominal graph.
//!
//! Each realization keeps every nominal edge independently with probability
//! `p` and rebuilds the shift operator from the survivors: adjacency entries
//! of dropped edges vanish, Laplacian degrees are recomputed from the
//! surviving edge set, and the normalized-adjacency variant divides by the
//! *nominal* largest eigenvalue rather than renormalizing per realization.
//! Realizations are addressed by `(draw, slot, position)` counters, so any
//! realization can be regenerated independently and in parallel, and a
//! full-survival draw (`p = 1`) is bit-identical to the nominal operator.
//!
//! With `E = S_realized - S_nominal`, the sampling model satisfies two
//! moment identities that `check_first_moment` / `check_second_moment`
//! verify by Monte Carlo:
//!
//! * `mean(S_realized) = p * S`
//! * `mean(E^2) = (1-p)^2 S^2 + beta p (1-p) M`, where for the adjacency
//!   `beta = 1` and `M = diag(sum_j w_ij^2)` (the degree matrix at unit
//!   weights), and for the Laplacian `beta = 2` and `M` is the Laplacian
//!   built from squared weights (the nominal Laplacian at unit weights).

use ndarray::Array2;
use rayon::prelude::*;

use crate::graph::{
    assemble_shift_matrix, max_degree, shift_from_graph, Graph, ShiftOperator, ShiftVariant,
};
use crate::numeric;
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Draws of 100k realizations are chunked for parallel accumulation; the
/// chunk boundaries are part of the reduction tree, so they are fixed.
const MOMENT_CHUNK: usize = 1024;

/// Random edge-sampling model over a nominal graph and shift variant.
#[derive(Debug, Clone)]
pub struct ResModel {
    graph: Graph,
    variant: ShiftVariant,
    p: f64,
    seed: u64,
    nominal: ShiftOperator,
}

impl ResModel {
    pub fn new(graph: Graph, variant: ShiftVariant, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("survival probability {p} outside [0, 1]")));
        }
        let nominal = shift_from_graph(&graph, variant)?;
        Ok(ResModel { graph, variant, p, seed, nominal })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn variant(&self) -> ShiftVariant {
        self.variant
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nominal(&self) -> &ShiftOperator {
        &self.nominal
    }

    pub fn n(&self) -> usize {
        self.graph.node_count()
    }

    /// Degree proxy in the first-order deviation bound: the largest degree
    /// for adjacency-type shifts, 2 for the Laplacian.
    pub fn alpha(&self) -> f64 {
        match self.variant {
            ShiftVariant::Adjacency | ShiftVariant::NormalizedAdjacency => {
                max_degree(&self.graph) as f64
            }
            ShiftVariant::Laplacian => 2.0,
        }
    }

    fn key(&self, draw: u64, slot: u64, pos: u64) -> StreamKey {
        StreamKey { seed: self.seed, draw, slot, pos }
    }

    /// Writes the realized shift matrix for one counter address into `m`.
    /// Walks the canonical edge list with one Bernoulli per edge, exactly
    /// like [`ResModel::sample_subgraph`].
    pub(crate) fn fill_realization(&self, draw: u64, slot: u64, pos: u64, m: &mut Array2<f64>) {
        let key = self.key(draw, slot, pos);
        let built = assemble_shift_matrix(
            &self.graph,
            self.variant,
            self.nominal.norm_scale(),
            |idx| key.keep(idx as u64, self.p),
        );
        m.assign(&built);
    }

    fn realize_operator(&self, draw: u64, slot: u64, pos: u64) -> ShiftOperator {
        let key = self.key(draw, slot, pos);
        let matrix = assemble_shift_matrix(
            &self.graph,
            self.variant,
            self.nominal.norm_scale(),
            |idx| key.keep(idx as u64, self.p),
        );
        let survivors: Vec<(usize, usize, f64)> = self
            .graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(idx, _)| key.keep(*idx as u64, self.p))
            .map(|(_, e)| (e.i, e.j, e.w))
            .collect();
        let subgraph = Graph::weighted(self.graph.node_count(), &survivors)
            .expect("survivors of a valid graph stay valid");
        ShiftOperator::from_realization(matrix, self.variant, subgraph, self.nominal.norm_scale())
    }

    /// One realized shift operator for Monte Carlo draw `draw`.
    pub fn sample_subgraph(&self, draw: u64) -> ShiftOperator {
        self.realize_operator(draw, 0, 0)
    }

    /// A chain of `len` independent realizations for one draw, in
    /// application order. Position `r` uses its own stream, so extending a
    /// chain never changes its earlier links.
    pub fn sample_chain(&self, len: usize, draw: u64) -> Vec<ShiftOperator> {
        self.sample_chain_slot(len, draw, 0)
    }

    /// Chain sampling for a specific consumer slot (one slot per filter in
    /// a bank, or per layer under shared policies).
    pub(crate) fn sample_chain_slot(&self, len: usize, draw: u64, slot: u64) -> Vec<ShiftOperator> {
        (1..=len as u64).map(|pos| self.realize_operator(draw, slot, pos)).collect()
    }

    /// Difference between one realization and the nominal operator.
    pub fn error_matrix(&self, draw: u64) -> ErrorMatrix {
        let realized = self.sample_subgraph(draw);
        ErrorMatrix { matrix: realized.matrix() - self.nominal.matrix(), draw }
    }

    /// Max-abs deviation of the empirical realization mean from `p * S`.
    pub fn check_first_moment(&self, draws: usize) -> Result<f64> {
        if draws == 0 {
            return Err(Error::input("moment check needs at least one draw"));
        }
        let n = self.n();
        let chunks: Vec<(usize, usize)> = chunk_ranges(draws);
        let sums: Vec<Array2<f64>> = chunks
            .par_iter()
            .map(|&(start, end)| {
                let mut acc = Array2::zeros((n, n));
                let mut m = Array2::zeros((n, n));
                for draw in start..end {
                    self.fill_realization(draw as u64, 0, 0, &mut m);
                    acc += &m;
                }
                acc
            })
            .collect();
        let mut total = Array2::zeros((n, n));
        for s in sums {
            total += &s;
        }
        total /= draws as f64;
        let expected = self.nominal.matrix() * self.p;
        Ok(numeric::max_abs_diff(total.view(), expected.view()))
    }

    /// Max-abs deviation of the empirical mean of `E^2` from the closed
    /// form `(1-p)^2 S^2 + beta p (1-p) M`. Defined for the adjacency and
    /// Laplacian variants only.
    pub fn check_second_moment(&self, draws: usize) -> Result<f64> {
        if draws == 0 {
            return Err(Error::input("moment check needs at least one draw"));
        }
        let (beta, correction) = match self.variant {
            ShiftVariant::Adjacency => {
                let mut d = Array2::zeros((self.n(), self.n()));
                for e in self.graph.edges() {
                    d[[e.i, e.i]] += e.w * e.w;
                    d[[e.j, e.j]] += e.w * e.w;
                }
                (1.0, d)
            }
            ShiftVariant::Laplacian => {
                let squared: Vec<(usize, usize, f64)> =
                    self.graph.edges().iter().map(|e| (e.i, e.j, e.w * e.w)).collect();
                let gsq = Graph::weighted(self.n(), &squared)
                    .expect("squaring weights keeps the graph valid");
                (2.0, assemble_shift_matrix(&gsq, ShiftVariant::Laplacian, None, |_| true))
            }
            ShiftVariant::NormalizedAdjacency => {
                return Err(Error::config(
                    "second-moment identity is defined for adjacency and laplacian shifts",
                ));
            }
        };
        let n = self.n();
        let s = self.nominal.matrix();
        let chunks = chunk_ranges(draws);
        let sums: Vec<Array2<f64>> = chunks
            .par_iter()
            .map(|&(start, end)| {
                let mut acc = Array2::zeros((n, n));
                let mut m = Array2::zeros((n, n));
                for draw in start..end {
                    self.fill_realization(draw as u64, 0, 0, &mut m);
                    m -= s;
                    acc += &m.dot(&m);
                }
                acc
            })
            .collect();
        let mut total = Array2::zeros((n, n));
        for sm in sums {
            total += &sm;
        }
        total /= draws as f64;
        let q = 1.0 - self.p;
        let expected = s.dot(s) * (q * q) + correction * (beta * self.p * q);
        Ok(numeric::max_abs_diff(total.view(), expected.view()))
    }
}

fn chunk_ranges(draws: usize) -> Vec<(usize, usize)> {
    (0..draws)
        .step_by(MOMENT_CHUNK)
        .map(|start| (start, (start + MOMENT_CHUNK).min(draws)))
        .collect()
}

/// Deviation of one realization from the nominal shift.
///
/// Off-diagonal entries are 0 (edge kept) or `-S_ij` (edge dropped). The
/// diagonal is zero for adjacency-type variants; for the Laplacian it holds
/// the lost degree, `-(dropped weight sum)` per node.
#[derive(Debug, Clone)]
pub struct ErrorMatrix {
    pub matrix: Array2<f64>,
    pub draw: u64,
}

impl ErrorMatrix {
    /// Checks the support invariants against the model that produced it.
    pub fn validate(&self, model: &ResModel) -> Result<()> {
        let s = model.nominal().matrix();
        let n = model.n();
        for i in 0..n {
            for j in 0..n {
                let e = self.matrix[[i, j]];
                if i == j {
                    match model.variant() {
                        ShiftVariant::Adjacency | ShiftVariant::NormalizedAdjacency => {
                            if e != 0.0 {
                                return Err(Error::numeric(format!(
                                    "error matrix has diagonal entry {e} at {i}"
                                )));
                            }
                        }
                        ShiftVariant::Laplacian => {
                            if e > 0.0 {
                                return Err(Error::numeric(format!(
                                    "laplacian error diagonal must be non-positive, got {e}"
                                )));
                            }
                        }
                    }
                } else if e != 0.0 && e != -s[[i, j]] {
                    return Err(Error::numeric(format!(
                        "error entry ({i}, {j}) = {e} is neither 0 nor -S_ij = {}",
                        -s[[i, j]]
                    )));
                }
            }
        }
        Ok(())
    }
}

impl ShiftOperator {
    /// Realization constructor: the matrix was assembled by the shared
    /// masked path, so support and symmetry hold by construction.
    pub(crate) fn from_realization(
        matrix: Array2<f64>,
        variant: ShiftVariant,
        subgraph: Graph,
        norm_scale: Option<f64>,
    ) -> ShiftOperator {
        ShiftOperator::assemble_unchecked(matrix, variant, subgraph, norm_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sbm_generate;

    fn two_node() -> Graph {
        Graph::new(2, &[(0, 1)]).unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn rejects_bad_probability() {
        for p in [-0.1, 1.1, f64::NAN] {
            assert!(ResModel::new(two_node(), ShiftVariant::Adjacency, p, 0).is_err());
        }
    }

    #[test]
    fn full_survival_is_bitwise_nominal() {
        for variant in [
            ShiftVariant::Adjacency,
            ShiftVariant::Laplacian,
            ShiftVariant::NormalizedAdjacency,
        ] {
            let g = sbm_generate(12, 3, 0.8, 0.3, 5).unwrap();
            let m = ResModel::new(g, variant, 1.0, 17).unwrap();
            for draw in 0..5 {
                let r = m.sample_subgraph(draw);
                assert_eq!(r.matrix(), m.nominal().matrix(), "{variant:?}");
                assert_eq!(r.graph(), m.graph());
            }
        }
    }

    #[test]
    fn zero_survival_empties_the_graph() {
        let m = ResModel::new(triangle(), ShiftVariant::Laplacian, 0.0, 3).unwrap();
        let r = m.sample_subgraph(0);
        assert!(r.matrix().iter().all(|&v| v == 0.0));
        assert_eq!(r.graph().edge_count(), 0);
    }

    #[test]
    fn near_zero_survival_keeps_almost_nothing() {
        let g = sbm_generate(10, 2, 0.9, 0.4, 8).unwrap();
        assert!(g.edge_count() >= 20);
        let m = ResModel::new(g, ShiftVariant::Adjacency, 1e-12, 4).unwrap();
        let total: usize = (0..10).map(|d| m.sample_subgraph(d).graph().edge_count()).sum();
        assert_eq!(total, 0);
    }

    #[test]
    fn survival_frequency_tracks_p() {
        let g = sbm_generate(12, 2, 0.9, 0.5, 21).unwrap();
        assert!(g.edge_count() >= 30);
        let m = ResModel::new(g.clone(), ShiftVariant::Adjacency, 0.7, 55).unwrap();
        let draws = 10_000u64;
        let mut kept = vec![0usize; g.edge_count()];
        for d in 0..draws {
            let r = m.sample_subgraph(d);
            for e in r.graph().edges() {
                let idx = g
                    .edges()
                    .iter()
                    .position(|ge| (ge.i, ge.j) == (e.i, e.j))
                    .unwrap();
                kept[idx] += 1;
            }
        }
        for (idx, k) in kept.iter().enumerate() {
            let f = *k as f64 / draws as f64;
            assert!((f - 0.7).abs() < 0.02, "edge {idx}: frequency {f}");
        }
    }

    #[test]
    fn realizations_are_deterministic_per_counter() {
        let m = ResModel::new(triangle(), ShiftVariant::Adjacency, 0.5, 9).unwrap();
        assert_eq!(m.sample_subgraph(3).matrix(), m.sample_subgraph(3).matrix());
        // Over many draws at p = 0.5 on three edges, some pair must differ.
        let distinct = (0..8)
            .map(|d| m.sample_subgraph(d).graph().edge_count())
            .collect::<std::collections::HashSet<_>>();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn chains_have_independent_positions() {
        let m = ResModel::new(two_node(), ShiftVariant::Adjacency, 1.0, 1).unwrap();
        assert!(m.sample_chain(0, 0).is_empty());
        let chain = m.sample_chain(3, 0);
        assert_eq!(chain.len(), 3);
        for link in &chain {
            assert_eq!(link.matrix(), m.nominal().matrix());
        }

        // Cross-covariance of survival indicators across chain positions.
        let g = sbm_generate(8, 2, 0.9, 0.4, 2).unwrap();
        let edge_count = g.edge_count();
        let m = ResModel::new(g, ShiftVariant::Adjacency, 0.9, 6).unwrap();
        let draws = 10_000usize;
        let len = 3usize;
        // indicators[pos][edge][draw]
        let mut indicators = vec![vec![vec![false; draws]; edge_count]; len];
        for d in 0..draws {
            let chain = m.sample_chain(len, d as u64);
            for (pos, link) in chain.iter().enumerate() {
                for e in link.graph().edges() {
                    let idx = m
                        .graph()
                        .edges()
                        .iter()
                        .position(|ge| (ge.i, ge.j) == (e.i, e.j))
                        .unwrap();
                    indicators[pos][idx][d] = true;
                }
            }
        }
        let nf = draws as f64;
        for pa in 0..len {
            for pb in (pa + 1)..len {
                for ea in 0..edge_count {
                    for eb in 0..edge_count {
                        let (mut sab, mut sa, mut sb) = (0.0, 0.0, 0.0);
                        for d in 0..draws {
                            let a = indicators[pa][ea][d] as u8 as f64;
                            let b = indicators[pb][eb][d] as u8 as f64;
                            sab += a * b;
                            sa += a;
                            sb += b;
                        }
                        let cov = sab / nf - (sa / nf) * (sb / nf);
                        assert!(
                            cov.abs() <= 0.02,
                            "pos ({pa}, {pb}) edges ({ea}, {eb}): cov {cov}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn error_matrix_support_invariants() {
        let g = sbm_generate(10, 2, 0.8, 0.3, 12).unwrap();
        for variant in [ShiftVariant::Adjacency, ShiftVariant::NormalizedAdjacency, ShiftVariant::Laplacian] {
            let m = ResModel::new(g.clone(), variant, 0.6, 31).unwrap();
            for draw in 0..20 {
                m.error_matrix(draw).validate(&m).unwrap();
            }
        }
    }

    #[test]
    fn first_moment_exact_at_p_one_and_random_otherwise() {
        let m = ResModel::new(triangle(), ShiftVariant::Adjacency, 1.0, 2).unwrap();
        assert_eq!(m.check_first_moment(100).unwrap(), 0.0);

        // Single edge at p = 0.5: entry mean has std 0.5 / sqrt(N).
        let m = ResModel::new(two_node(), ShiftVariant::Adjacency, 0.5, 77).unwrap();
        let dev = m.check_first_moment(10_000).unwrap();
        assert!(dev <= 3.0 * 0.5 / 100.0, "dev {dev}");

        let g = sbm_generate(20, 4, 0.8, 0.2, 3).unwrap();
        let m = ResModel::new(g, ShiftVariant::Adjacency, 0.8, 41).unwrap();
        let dev = m.check_first_moment(10_000).unwrap();
        assert!(dev <= 0.02, "dev {dev}");

        assert!(m.check_first_moment(0).is_err());
    }

    #[test]
    fn first_moment_also_holds_for_laplacian_and_normalized() {
        let g = sbm_generate(8, 2, 0.9, 0.3, 14).unwrap();
        for variant in [ShiftVariant::Laplacian, ShiftVariant::NormalizedAdjacency] {
            let m = ResModel::new(g.clone(), variant, 0.85, 9).unwrap();
            let dev = m.check_first_moment(20_000).unwrap();
            // Laplacian diagonals sum several indicators; allow a wider but
            // still tight band.
            assert!(dev <= 0.05, "{variant:?}: dev {dev}");
        }
    }

    #[test]
    fn first_moment_deviation_shrinks_like_inverse_sqrt() {
        // Average the deviation over independent models per draw budget and
        // fit the log-log slope; it should sit near -1/2.
        let g = sbm_generate(10, 2, 0.8, 0.4, 6).unwrap();
        let budgets = [100usize, 1000, 10_000, 100_000];
        let mut mean_devs = Vec::new();
        for &n in &budgets {
            let mut acc = 0.0;
            for seed in 0..20 {
                let m = ResModel::new(g.clone(), ShiftVariant::Adjacency, 0.7, 1000 + seed).unwrap();
                acc += m.check_first_moment(n).unwrap();
            }
            mean_devs.push(acc / 20.0);
        }
        let xs: Vec<f64> = budgets.iter().map(|n| (*n as f64).ln()).collect();
        let ys: Vec<f64> = mean_devs.iter().map(|d| d.ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(
            (-0.65..=-0.35).contains(&slope),
            "slope {slope}, deviations {mean_devs:?}"
        );
    }

    #[test]
    fn second_moment_matches_closed_forms() {
        // p = 1: no deviation at all.
        let m = ResModel::new(triangle(), ShiftVariant::Laplacian, 1.0, 0).unwrap();
        assert_eq!(m.check_second_moment(50).unwrap(), 0.0);

        // Two nodes, adjacency: E[E^2] = (1 - p) I exactly.
        let m = ResModel::new(two_node(), ShiftVariant::Adjacency, 0.5, 13).unwrap();
        let dev = m.check_second_moment(100_000).unwrap();
        assert!(dev <= 0.03, "two-node adjacency dev {dev}");

        // Triangle, Laplacian, beta = 2, correction = nominal Laplacian.
        let m = ResModel::new(triangle(), ShiftVariant::Laplacian, 0.7, 29).unwrap();
        let dev = m.check_second_moment(100_000).unwrap();
        assert!(dev <= 0.03, "triangle laplacian dev {dev}");

        // Weighted edge: correction carries squared weights.
        let g = Graph::weighted(2, &[(0, 1, 2.0)]).unwrap();
        let m = ResModel::new(g, ShiftVariant::Adjacency, 0.6, 101).unwrap();
        let dev = m.check_second_moment(100_000).unwrap();
        assert!(dev <= 0.1, "weighted dev {dev}");

        let m = ResModel::new(triangle(), ShiftVariant::NormalizedAdjacency, 0.9, 1).unwrap();
        assert!(m.check_second_moment(10).is_err());
    }

    #[test]
    fn moment_checks_are_deterministic() {
        let g = sbm_generate(8, 2, 0.8, 0.3, 10).unwrap();
        let m = ResModel::new(g, ShiftVariant::Adjacency, 0.8, 20).unwrap();
        assert_eq!(
            m.check_first_moment(5000).unwrap(),
            m.check_first_moment(5000).unwrap()
        );
        assert_eq!(
            m.check_second_moment(5000).unwrap(),
            m.check_second_moment(5000).unwrap()
        );
    }
}
