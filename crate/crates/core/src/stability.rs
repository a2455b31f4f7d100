//! Deviation measurement against the first-order stability bounds.
//!
//! The quantity under test is the squared output deviation between a
//! nominal forward pass and a stochastic one over the same edge-survival
//! model: `||u_tilde - u||^2` for a single filter, the squared Frobenius
//! norm of the feature difference for a network. Its expectation obeys
//!
//! `E[dev] <= n * alpha * C_L^2 * (1 - p) * ||x||^2`
//!
//! for filters, with the extra architecture factor `L^2 * C_sigma^{2L} *
//! F^{2L-2}` for an `L`-layer width-`F` network. The bound is first order
//! in `(1 - p)`; verdicts treat it as decisive only near `p = 1` and with
//! slack for the dropped second-order term, since `C_L` itself comes from
//! an estimator.
//!
//! Monte Carlo runs index trials by draw counter, so results are
//! reproducible and independent of thread count.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::filters::{
    chain_apply_into, estimate_integral_lipschitz_refined, filter_apply, GraphFilter,
};
use crate::gcnn::{gcnn_forward, gcnn_forward_stochastic, Gcnn, RealizationPolicy};
use crate::graph::eigendecompose;
use crate::numeric;
use crate::perturbation::ResModel;
use crate::{Error, Result};

/// Fixed stream for the Lipschitz estimates inside bound computations,
/// kept apart from perturbation draws.
const LIPSCHITZ_SEED: u64 = 0x11b;

/// Outcome of comparing measured deviation against a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    WithinBound,
    ExceedsBound,
    Inconclusive,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::WithinBound => "within-bound",
            Verdict::ExceedsBound => "exceeds-bound",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// When a measurement is allowed to contradict the bound.
///
/// The bound drops an `O((1-p)^2)` term and uses an estimated `C_L`, so a
/// raw exceedance is not evidence of a broken invariant. `ExceedsBound`
/// requires all of: `p >= p_threshold` (second order negligible), the mean
/// minus two standard errors above the bound inflated by `(1 + slack)` and
/// by `(1 + cl_inflation)^2` (the constant enters squared). Anything else
/// above the bound is `Inconclusive`.
#[derive(Debug, Clone, Copy)]
pub struct VerdictPolicy {
    pub slack: f64,
    pub p_threshold: f64,
    pub cl_inflation: f64,
}

impl Default for VerdictPolicy {
    fn default() -> Self {
        VerdictPolicy { slack: 0.5, p_threshold: 0.98, cl_inflation: 0.10 }
    }
}

/// Monte Carlo estimate with per-trial samples retained.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation (n - 1 normalization); 0 for one trial.
    pub std: f64,
    pub samples: Vec<f64>,
}

impl McEstimate {
    pub fn from_samples(samples: Vec<f64>) -> McEstimate {
        let (mean, std) = numeric::mean_std(&samples);
        McEstimate { mean, std, samples }
    }

    pub fn trials(&self) -> usize {
        self.samples.len()
    }

    pub fn std_error(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.std / (self.samples.len() as f64).sqrt()
        }
    }
}

/// A deviation bound and the pieces it was assembled from.
#[derive(Debug, Clone)]
pub struct DeviationBound {
    /// Full first-order constant `C`: the bound equals `C * (1 - p)`.
    pub constant: f64,
    /// `constant * (1 - p)` at the model's survival probability.
    pub value: f64,
    pub c_l: f64,
    pub alpha: f64,
    pub warning: Option<String>,
}

/// Everything one stability check produces.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub p: f64,
    pub trials: usize,
    pub emp_mean: f64,
    pub emp_std: f64,
    pub bound: f64,
    pub constant: f64,
    pub c_l: f64,
    pub alpha: f64,
    pub verdict: Verdict,
    pub warning: Option<String>,
    samples: Vec<f64>,
}

impl StabilityReport {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.emp_std / (self.trials as f64).sqrt()
        }
    }
}

/// One header plus one row per report.
pub fn report_csv(reports: &[StabilityReport]) -> String {
    let mut out = String::from("p,trials,emp_mean,emp_std,bound,constant,c_l,alpha,verdict\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.p, r.trials, r.emp_mean, r.emp_std, r.bound, r.constant, r.c_l, r.alpha,
            r.verdict.name()
        ));
    }
    out
}

struct ChainScratch {
    mats: Vec<Array2<f64>>,
    z: Array1<f64>,
    z_next: Array1<f64>,
    u: Array1<f64>,
}

impl ChainScratch {
    fn new(n: usize, k: usize) -> ChainScratch {
        ChainScratch {
            mats: (0..k).map(|_| Array2::zeros((n, n))).collect(),
            z: Array1::zeros(n),
            z_next: Array1::zeros(n),
            u: Array1::zeros(n),
        }
    }
}

/// Squared deviation of the random filter chain from the nominal output,
/// one sample per draw counter `base_draw + t`. At `p = 1` every sample is
/// exactly zero: realization, chain application, and nominal application
/// share one code path bit for bit.
pub fn mc_filter_deviation(
    f: &GraphFilter,
    model: &ResModel,
    x: ArrayView1<'_, f64>,
    trials: usize,
    base_draw: u64,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::input("deviation estimate needs at least one trial"));
    }
    let n = model.n();
    if x.len() != n {
        return Err(Error::input(format!(
            "signal length {} does not match {n} nodes",
            x.len()
        )));
    }
    let nominal = filter_apply(f, model.nominal(), x)?;
    let k = f.order();
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map_init(
            || ChainScratch::new(n, k),
            |sc, t| {
                let draw = base_draw + t as u64;
                for (i, m) in sc.mats.iter_mut().enumerate() {
                    model.fill_realization(draw, 0, (i + 1) as u64, m);
                }
                let views: Vec<_> = sc.mats.iter().map(|m| m.view()).collect();
                chain_apply_into(f.coeffs(), &views, x, &mut sc.z, &mut sc.z_next, &mut sc.u);
                sc.u
                    .iter()
                    .zip(nominal.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            },
        )
        .collect();
    Ok(McEstimate::from_samples(samples))
}

/// Squared Frobenius deviation of the stochastic network forward from the
/// nominal forward. For a single-filter identity network under the
/// independent policy this reproduces [`mc_filter_deviation`] sample for
/// sample, including the zero at `p = 1`.
pub fn mc_gcnn_deviation(
    net: &Gcnn,
    model: &ResModel,
    policy: RealizationPolicy,
    x: ArrayView1<'_, f64>,
    trials: usize,
    base_draw: u64,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::input("deviation estimate needs at least one trial"));
    }
    let nominal = gcnn_forward(net, model.nominal(), x)?;
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let out = gcnn_forward_stochastic(net, model, policy, x, base_draw + t as u64)?;
            Ok((&out - &nominal).iter().map(|d| d * d).sum())
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(samples))
}

fn spectrum_warning(model: &ResModel, interval: (f64, f64)) -> Result<Option<String>> {
    let decomp = eigendecompose(model.nominal())?;
    let lo = decomp.eigenvalues[0];
    let hi = decomp.eigenvalues[decomp.eigenvalues.len() - 1];
    if lo < interval.0 - 1e-9 || hi > interval.1 + 1e-9 {
        Ok(Some(format!(
            "nominal spectrum [{lo:.6}, {hi:.6}] extends outside the Lipschitz interval [{}, {}]",
            interval.0, interval.1
        )))
    } else {
        Ok(None)
    }
}

fn join_warnings(parts: Vec<String>) -> Option<String> {
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("; "))
    }
}

/// First-order deviation bound for a single filter:
/// `n * alpha * C_L^2 * (1 - p) * ||x||^2` with `C_L` estimated over
/// `interval^K`. Spectrum escaping the interval or `|h| > 1` on it turn
/// into warnings, not failures.
pub fn filter_bound(
    f: &GraphFilter,
    model: &ResModel,
    x_norm_sq: f64,
    interval: (f64, f64),
    lipschitz_samples: usize,
) -> Result<DeviationBound> {
    let est = estimate_integral_lipschitz_refined(f, interval, lipschitz_samples, LIPSCHITZ_SEED)?;
    let mut warnings = Vec::new();
    if let Some(w) = spectrum_warning(model, interval)? {
        warnings.push(w);
    }
    if !est.premise_satisfied() {
        warnings.push(format!(
            "filter response reaches {:.6} > 1 on the interval; the bound premise needs |h| <= 1",
            est.max_abs_response
        ));
    }
    let alpha = model.alpha();
    let constant = model.n() as f64 * alpha * est.c_l * est.c_l * x_norm_sq;
    Ok(DeviationBound {
        constant,
        value: constant * (1.0 - model.p()),
        c_l: est.c_l,
        alpha,
        warning: join_warnings(warnings),
    })
}

/// First-order deviation bound for a network: the filter bound times
/// `L^2 * C_sigma^{2L} * F^{2L-2}`, with `L` the layer count, `F` the
/// largest feature width, and `C_L` the largest per-filter constant.
pub fn gcnn_bound(
    net: &Gcnn,
    model: &ResModel,
    x_norm_sq: f64,
    interval: (f64, f64),
    lipschitz_samples: usize,
) -> Result<DeviationBound> {
    let mut c_l = 0.0f64;
    let mut premise_break: Option<f64> = None;
    for layer in net.layers() {
        for fo in 0..layer.f_out() {
            for fi in 0..layer.f_in() {
                let est = estimate_integral_lipschitz_refined(
                    layer.filter(fo, fi),
                    interval,
                    lipschitz_samples,
                    LIPSCHITZ_SEED,
                )?;
                c_l = c_l.max(est.c_l);
                if !est.premise_satisfied() {
                    let r = est.max_abs_response;
                    premise_break = Some(premise_break.map_or(r, |b: f64| b.max(r)));
                }
            }
        }
    }
    let mut warnings = Vec::new();
    if let Some(w) = spectrum_warning(model, interval)? {
        warnings.push(w);
    }
    if let Some(r) = premise_break {
        warnings.push(format!(
            "a filter response reaches {r:.6} > 1 on the interval; the bound premise needs |h| <= 1"
        ));
    }
    let alpha = model.alpha();
    let constant =
        gcnn_constant(model.n(), alpha, c_l, net.depth(), net.sigma_lipschitz(), net.width())
            * x_norm_sq;
    Ok(DeviationBound {
        constant,
        value: constant * (1.0 - model.p()),
        c_l,
        alpha,
        warning: join_warnings(warnings),
    })
}

/// `n * alpha * c_l^2 * L^2 * c_sigma^{2L} * F^{2L-2}` at unit signal
/// energy; multiply by `(1 - p) * ||x||^2` for the deviation bound.
pub fn gcnn_constant(
    n: usize,
    alpha: f64,
    c_l: f64,
    depth: usize,
    c_sigma: f64,
    width: usize,
) -> f64 {
    let l = depth as f64;
    let arch = l * l * c_sigma.powi(2 * depth as i32) * (width as f64).powi(2 * depth as i32 - 2);
    n as f64 * alpha * c_l * c_l * arch
}

/// Combines a measurement and a bound into a report under the policy.
pub fn assess(
    p: f64,
    mc: McEstimate,
    bound: &DeviationBound,
    policy: &VerdictPolicy,
) -> StabilityReport {
    let verdict = if mc.mean <= bound.value {
        Verdict::WithinBound
    } else if p < policy.p_threshold {
        Verdict::Inconclusive
    } else {
        let inflation = (1.0 + policy.cl_inflation) * (1.0 + policy.cl_inflation);
        let ceiling = bound.value * (1.0 + policy.slack) * inflation;
        if mc.mean - 2.0 * mc.std_error() <= ceiling {
            Verdict::Inconclusive
        } else {
            Verdict::ExceedsBound
        }
    };
    StabilityReport {
        p,
        trials: mc.trials(),
        emp_mean: mc.mean,
        emp_std: mc.std,
        bound: bound.value,
        constant: bound.constant,
        c_l: bound.c_l,
        alpha: bound.alpha,
        verdict,
        warning: bound.warning.clone(),
        samples: mc.samples,
    }
}

/// Full filter pipeline: measure, bound, assess.
pub fn verify_filter(
    f: &GraphFilter,
    model: &ResModel,
    x: ArrayView1<'_, f64>,
    trials: usize,
    interval: (f64, f64),
    lipschitz_samples: usize,
    policy: &VerdictPolicy,
) -> Result<StabilityReport> {
    let mc = mc_filter_deviation(f, model, x, trials, 0)?;
    let bound = filter_bound(f, model, numeric::norm_sq(x), interval, lipschitz_samples)?;
    Ok(assess(model.p(), mc, &bound, policy))
}

/// Full network pipeline: measure, bound, assess.
pub fn verify_gcnn(
    net: &Gcnn,
    model: &ResModel,
    realization: RealizationPolicy,
    x: ArrayView1<'_, f64>,
    trials: usize,
    interval: (f64, f64),
    lipschitz_samples: usize,
    policy: &VerdictPolicy,
) -> Result<StabilityReport> {
    let mc = mc_gcnn_deviation(net, model, realization, x, trials, 0)?;
    let bound = gcnn_bound(net, model, numeric::norm_sq(x), interval, lipschitz_samples)?;
    Ok(assess(model.p(), mc, &bound, policy))
}

/// Tail bound from the mean bound: `Pr[dev <= eps] >= 1 - bound / eps`,
/// clamped to 0. Returns `(lower_bound, empirical_fraction)`.
pub fn probability_bound(report: &StabilityReport, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::input(format!("threshold must be positive, got {eps}")));
    }
    let lower = (1.0 - report.bound / eps).max(0.0);
    let hits = report.samples.iter().filter(|&&d| d <= eps).count();
    let frac = if report.trials == 0 { f64::NAN } else { hits as f64 / report.trials as f64 };
    Ok((lower, frac))
}

/// Least-squares line fit used to check first-order behaviour of the
/// deviation in `(1 - p)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares over `(1 - p, deviation)` points. Requires at
/// least three points with at least two distinct abscissae.
pub fn linearity_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 3 {
        return Err(Error::input(format!(
            "linearity fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx <= 0.0 {
        return Err(Error::input("linearity fit needs at least two distinct x values"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearFit { slope, intercept, r_squared })
}
