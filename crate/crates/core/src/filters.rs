//! Polynomial graph filters and their frequency-domain analysis.
//!
//! A filter with coefficients `h_0..h_K` maps a signal `x` to
//! `sum_k h_k S^k x` for a shift operator `S`. When each of the `K` shift
//! applications uses its own random realization `S_1..S_K`, the output is
//! `h_0 x + sum_k h_k S_k .. S_1 x` instead; both paths share one
//! iterated-matvec core here, so a chain of nominal copies reproduces the
//! nominal output bit for bit.
//!
//! On the frequency side, a scalar `lambda` has response
//! `h(lambda) = sum_k h_k lambda^k` (Horner). A chain of multipliers
//! `lambda_1..lambda_K` (one per chain position, `lambda_0 = 1` implicit)
//! has the generalized response `sum_k h_k prod_{r<=k} lambda_r` (prefix
//! products). The mixed gradient between two multiplier vectors underpins
//! the exact first-order identity
//!
//! `h(v1) - h(v2) = grad(v1, v2)^T (v1 - v2)`
//!
//! with entry `r` of the gradient equal to
//! `(prod_{s<r} v1_s) * sum_{k>=r} h_k prod_{r<s<=k} v2_s`.
//!
//! The stability constant `C_L` is the supremum of the gradient norm (plain
//! and entrywise-scaled by `v1`) over a box. Random sampling gives a
//! certified lower bound that is monotone in the sample count; because each
//! gradient entry is multilinear in the multipliers, both squared norms are
//! per-coordinate convex, so the true supremum sits at a box vertex and the
//! refined estimator reaches it by enumerating (or greedily walking)
//! vertices.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::graph::ShiftOperator;
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Polynomial filter; `coeffs[k]` multiplies the k-th shift power.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFilter {
    coeffs: Vec<f64>,
}

impl GraphFilter {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::input("filter needs at least the order-0 coefficient"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("filter coefficients must be finite"));
        }
        Ok(GraphFilter { coeffs })
    }

    /// Polynomial order `K` (number of shift applications).
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Returns a copy with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        GraphFilter::new(self.coeffs.iter().map(|c| c * factor).collect())
    }
}

/// Chain multipliers `lambda_1..lambda_K`; the implicit `lambda_0 = 1` is
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    values: Vec<f64>,
}

impl FrequencyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("frequency multipliers must be finite"));
        }
        Ok(FrequencyVector { values })
    }

    /// All multipliers equal; matches a repeated scalar frequency.
    pub fn constant(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Iterated-matvec core shared by nominal and chain application.
///
/// `mats` holds the shift for positions `1..=K` in application order.
/// Scratch vectors let hot Monte Carlo loops run allocation-free.
pub(crate) fn chain_apply_into(
    coeffs: &[f64],
    mats: &[ArrayView2<'_, f64>],
    x: ArrayView1<'_, f64>,
    z: &mut Array1<f64>,
    z_next: &mut Array1<f64>,
    out: &mut Array1<f64>,
) {
    z.assign(&x);
    out.assign(&x);
    *out *= coeffs[0];
    for (k, m) in mats.iter().enumerate() {
        ndarray::linalg::general_mat_vec_mul(1.0, m, z, 0.0, z_next);
        out.scaled_add(coeffs[k + 1], z_next);
        std::mem::swap(z, z_next);
    }
}

fn check_signal(n: usize, x: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != n {
        return Err(Error::input(format!(
            "signal length {} does not match {n} nodes",
            x.len()
        )));
    }
    Ok(())
}

/// Nominal filter output `sum_k h_k S^k x`, evaluated by iterated shifts.
pub fn filter_apply(
    f: &GraphFilter,
    s: &ShiftOperator,
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    check_signal(s.n(), x)?;
    let n = s.n();
    let mats = vec![s.matrix().view(); f.order()];
    let mut z = Array1::zeros(n);
    let mut z_next = Array1::zeros(n);
    let mut out = Array1::zeros(n);
    chain_apply_into(f.coeffs(), &mats, x, &mut z, &mut z_next, &mut out);
    Ok(out)
}

/// Chain output `h_0 x + sum_k h_k S_k .. S_1 x`. The chain must hold
/// exactly `K` operators of matching size, in application order.
pub fn filter_apply_chain(
    f: &GraphFilter,
    chain: &[ShiftOperator],
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    if chain.len() != f.order() {
        return Err(Error::input(format!(
            "chain length {} does not match filter order {}",
            chain.len(),
            f.order()
        )));
    }
    let n = if let Some(first) = chain.first() {
        for s in chain {
            if s.n() != first.n() {
                return Err(Error::input("chain operators differ in size"));
            }
        }
        first.n()
    } else {
        x.len()
    };
    check_signal(n, x)?;
    let mats: Vec<ArrayView2<'_, f64>> = chain.iter().map(|s| s.matrix().view()).collect();
    let mut z = Array1::zeros(n);
    let mut z_next = Array1::zeros(n);
    let mut out = Array1::zeros(n);
    chain_apply_into(f.coeffs(), &mats, x, &mut z, &mut z_next, &mut out);
    Ok(out)
}

/// Scalar frequency response `sum_k h_k lambda^k`, by Horner's rule.
pub fn frequency_response(f: &GraphFilter, lambda: f64) -> f64 {
    let mut acc = 0.0;
    for c in f.coeffs().iter().rev() {
        acc = acc * lambda + c;
    }
    acc
}

/// Largest `|h(lambda)|` over a set of scalar frequencies (for instance the
/// nominal spectrum).
pub fn max_abs_response_on_spectrum(f: &GraphFilter, lambdas: &[f64]) -> f64 {
    lambdas
        .iter()
        .map(|&l| frequency_response(f, l).abs())
        .fold(0.0, f64::max)
}

/// Generalized response `sum_k h_k prod_{r<=k} lambda_r` with one multiplier
/// per chain position.
pub fn generalized_frequency_response(f: &GraphFilter, v: &FrequencyVector) -> Result<f64> {
    if v.len() != f.order() {
        return Err(Error::input(format!(
            "frequency vector length {} does not match filter order {}",
            v.len(),
            f.order()
        )));
    }
    Ok(generalized_response_raw(f.coeffs(), v.values()))
}

fn generalized_response_raw(coeffs: &[f64], v: &[f64]) -> f64 {
    let mut acc = coeffs[0];
    let mut prefix = 1.0;
    for (k, lambda) in v.iter().enumerate() {
        prefix *= lambda;
        acc += coeffs[k + 1] * prefix;
    }
    acc
}

/// Mixed-gradient entries; see the module docs for the closed form.
/// Entry `r` (1-based position, index `r - 1` here) differentiates the
/// response at the splice of the first `r` entries of `v1` with the tail of
/// `v2`.
pub fn lipschitz_gradient(
    f: &GraphFilter,
    v1: &FrequencyVector,
    v2: &FrequencyVector,
) -> Result<Vec<f64>> {
    let k = f.order();
    if v1.len() != k || v2.len() != k {
        return Err(Error::input(format!(
            "frequency vectors ({}, {}) do not match filter order {k}",
            v1.len(),
            v2.len()
        )));
    }
    let mut out = vec![0.0; k];
    gradient_raw(f.coeffs(), v1.values(), v2.values(), &mut out);
    Ok(out)
}

/// Allocation-free gradient core. `out` has length `K`.
///
/// Backward pass builds `g_r = h_r + v2_{r+1} g_{r+1}` (the tail sum with
/// suffix products of `v2`), forward pass multiplies by prefix products of
/// `v1`.
pub(crate) fn gradient_raw(coeffs: &[f64], v1: &[f64], v2: &[f64], out: &mut [f64]) {
    let k = v1.len();
    if k == 0 {
        return;
    }
    out[k - 1] = coeffs[k];
    for r in (1..k).rev() {
        out[r - 1] = coeffs[r] + v2[r] * out[r];
    }
    let mut prefix = 1.0;
    for r in 0..k {
        out[r] *= prefix;
        prefix *= v1[r];
    }
}

/// Certified lower bound on the integral-Lipschitz constant of a filter.
#[derive(Debug, Clone)]
pub struct LipschitzEstimate {
    /// Largest observed plain gradient norm.
    pub plain_max: f64,
    /// Largest observed norm of the gradient scaled entrywise by `v1`.
    pub scaled_max: f64,
    /// `max(plain_max, scaled_max)`: the constant used in bounds.
    pub c_l: f64,
    /// Random samples drawn.
    pub samples: usize,
    /// Largest `|h|` observed over the sampled (and, when refined,
    /// vertex-enumerated) multiplier vectors.
    pub max_abs_response: f64,
    /// Whether a vertex refinement pass ran after sampling.
    pub refined: bool,
}

impl LipschitzEstimate {
    /// The bounds assume `|h| <= 1` on the domain; callers warn when the
    /// observed response breaks that premise, but nothing is enforced.
    pub fn premise_satisfied(&self) -> bool {
        self.max_abs_response <= 1.0 + 1e-9
    }
}

fn check_interval(interval: (f64, f64)) -> Result<()> {
    let (lo, hi) = interval;
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::config(format!("bad frequency interval [{lo}, {hi}]")));
    }
    Ok(())
}

struct GradScratch {
    v1: Vec<f64>,
    v2: Vec<f64>,
    grad: Vec<f64>,
}

impl GradScratch {
    fn new(k: usize) -> Self {
        GradScratch { v1: vec![0.0; k], v2: vec![0.0; k], grad: vec![0.0; k] }
    }
}

/// Evaluates both squared norms at (`v1`, `v2`) and folds them into the
/// running estimate.
fn observe(coeffs: &[f64], scratch: &mut GradScratch, est: &mut LipschitzEstimate) {
    gradient_raw(coeffs, &scratch.v1, &scratch.v2, &mut scratch.grad);
    let mut plain = 0.0;
    let mut scaled = 0.0;
    for (g, l) in scratch.grad.iter().zip(scratch.v1.iter()) {
        plain += g * g;
        scaled += (l * g) * (l * g);
    }
    est.plain_max = est.plain_max.max(plain.sqrt());
    est.scaled_max = est.scaled_max.max(scaled.sqrt());
    let r1 = generalized_response_raw(coeffs, &scratch.v1).abs();
    let r2 = generalized_response_raw(coeffs, &scratch.v2).abs();
    est.max_abs_response = est.max_abs_response.max(r1).max(r2);
}

/// Monte Carlo estimate of the integral-Lipschitz constant over
/// `interval^K` pairs.
///
/// Sample `i` is derived from `(seed, i)` alone, so sample sets nest across
/// `n_samples` and the estimate is monotone nondecreasing in the sample
/// count. The result is always a lower bound on the true constant.
pub fn estimate_integral_lipschitz(
    f: &GraphFilter,
    interval: (f64, f64),
    n_samples: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if n_samples == 0 {
        return Err(Error::input("lipschitz estimation needs at least one sample"));
    }
    check_interval(interval)?;
    let k = f.order();
    let (lo, hi) = interval;
    let mut est = LipschitzEstimate {
        plain_max: 0.0,
        scaled_max: 0.0,
        c_l: 0.0,
        samples: n_samples,
        max_abs_response: f.coeffs()[0].abs(),
        refined: false,
    };
    if k == 0 {
        // Constant filter: no chain positions, gradient is empty.
        return Ok(est);
    }
    let mut scratch = GradScratch::new(k);
    for i in 0..n_samples {
        let key = StreamKey { seed, draw: i as u64, slot: 0, pos: 0 };
        for t in 0..k {
            scratch.v1[t] = lo + (hi - lo) * key.unit(t as u64);
            scratch.v2[t] = lo + (hi - lo) * key.unit((k + t) as u64);
        }
        observe(f.coeffs(), &mut scratch, &mut est);
    }
    est.c_l = est.plain_max.max(est.scaled_max);
    Ok(est)
}

/// Sampling estimate plus a vertex refinement pass.
///
/// Both squared gradient norms are multilinear in each multiplier, hence
/// per-coordinate convex: their suprema over the box sit at vertices. With
/// `2K <= 16` all vertices are enumerated, making the constant exact; for
/// larger orders a greedy coordinate walk ascends from the best sample.
pub fn estimate_integral_lipschitz_refined(
    f: &GraphFilter,
    interval: (f64, f64),
    n_samples: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    let mut est = estimate_integral_lipschitz(f, interval, n_samples, seed)?;
    let k = f.order();
    if k == 0 {
        est.refined = true;
        return Ok(est);
    }
    let (lo, hi) = interval;
    let mut scratch = GradScratch::new(k);
    if 2 * k <= 16 {
        for mask in 0u32..(1u32 << (2 * k)) {
            for t in 0..k {
                scratch.v1[t] = if mask & (1 << t) != 0 { hi } else { lo };
                scratch.v2[t] = if mask & (1 << (k + t)) != 0 { hi } else { lo };
            }
            observe(f.coeffs(), &mut scratch, &mut est);
        }
    } else {
        // Greedy per-coordinate walk: each move flips one multiplier to the
        // interval end that increases the objective, until a full pass makes
        // no progress. Runs once per objective so each can reach its own
        // vertex.
        for objective in 0..2 {
            let start_key = StreamKey { seed, draw: 0, slot: 1, pos: objective };
            for t in 0..k {
                scratch.v1[t] = lo + (hi - lo) * start_key.unit(t as u64);
                scratch.v2[t] = lo + (hi - lo) * start_key.unit((k + t) as u64);
            }
            let eval = |s: &mut GradScratch| -> f64 {
                gradient_raw(f.coeffs(), &s.v1, &s.v2, &mut s.grad);
                let mut acc = 0.0;
                for (g, l) in s.grad.iter().zip(s.v1.iter()) {
                    let term = if objective == 0 { *g } else { l * g };
                    acc += term * term;
                }
                acc
            };
            let mut best = eval(&mut scratch);
            for _round in 0..100 {
                let mut improved = false;
                for coord in 0..(2 * k) {
                    let (vec_idx, t) = (coord / k, coord % k);
                    let current = if vec_idx == 0 { scratch.v1[t] } else { scratch.v2[t] };
                    for endpoint in [lo, hi] {
                        if endpoint == current {
                            continue;
                        }
                        if vec_idx == 0 {
                            scratch.v1[t] = endpoint;
                        } else {
                            scratch.v2[t] = endpoint;
                        }
                        let val = eval(&mut scratch);
                        if val > best {
                            best = val;
                            improved = true;
                        } else if vec_idx == 0 {
                            scratch.v1[t] = current;
                        } else {
                            scratch.v2[t] = current;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            observe(f.coeffs(), &mut scratch, &mut est);
        }
    }
    est.c_l = est.plain_max.max(est.scaled_max);
    est.refined = true;
    Ok(est)
}

/// Largest `|h|` over sampled multiplier vectors from `interval^K`.
pub fn max_abs_response(
    f: &GraphFilter,
    interval: (f64, f64),
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::input("response scan needs at least one sample"));
    }
    check_interval(interval)?;
    let k = f.order();
    let (lo, hi) = interval;
    let mut v = vec![0.0; k];
    let mut best = f.coeffs()[0].abs();
    for i in 0..n_samples {
        let key = StreamKey { seed, draw: i as u64, slot: 2, pos: 0 };
        for t in 0..k {
            v[t] = lo + (hi - lo) * key.unit(t as u64);
        }
        best = best.max(generalized_response_raw(f.coeffs(), &v).abs());
    }
    Ok(best)
}

/// Exact largest `|h|` over `interval^K`. The generalized response is
/// multilinear, so the maximum of its absolute value sits at a box vertex;
/// all `2^K` vertices are enumerated (order capped at 24).
pub fn max_abs_response_exact(f: &GraphFilter, interval: (f64, f64)) -> Result<f64> {
    check_interval(interval)?;
    let k = f.order();
    if k > 24 {
        return Err(Error::input(format!("vertex enumeration infeasible for order {k}")));
    }
    let (lo, hi) = interval;
    let mut v = vec![0.0; k];
    let mut best = f.coeffs()[0].abs();
    for mask in 0u32..(1u32 << k) {
        for t in 0..k {
            v[t] = if mask & (1 << t) != 0 { hi } else { lo };
        }
        best = best.max(generalized_response_raw(f.coeffs(), &v).abs());
    }
    Ok(best)
}
