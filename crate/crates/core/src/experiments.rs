//! Desk-scale experiments: source localization on a stochastic block
//! model, trained on the nominal graph and evaluated under edge erasure.
//!
//! A sample diffuses a delta at one of a few source nodes for a random
//! number of steps through the normalized adjacency and adds node noise;
//! the task is to name the source. Accuracy experiments train on the
//! nominal shift and classify with random realizations at test time, so
//! the measured quantity is the accuracy cost of perturbation, not a
//! training effect. Inference uses one shared chain per layer, which keeps
//! a trial over the whole test split cheap.
//!
//! All randomness is counter-keyed per sample and per trial; rerunning a
//! sweep with one configuration yields byte-identical CSV.

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::gcnn::{
    gcnn_forward, gcnn_forward_stochastic, readout_classify, train_adam, EpochStats, Gcnn, Loss,
    Nonlinearity, RealizationPolicy, Target, TrainConfig, TrainSample,
};
use crate::graph::{sbm_generate, shift_from_graph, Graph, ShiftOperator, ShiftVariant};
use crate::perturbation::ResModel;
use crate::rng;
use crate::stability::{mc_gcnn_deviation, McEstimate};
use crate::{Error, Result};

/// Test inputs pooled per point when a sweep measures output deviation.
const DEVIATION_INPUTS: usize = 16;

/// One diffused-source sample.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub x: Array1<f64>,
    /// Index into the source list, not a node id.
    pub label: usize,
    /// Diffusion steps applied.
    pub t: usize,
}

impl DiffusionSample {
    pub fn to_train_sample(&self) -> TrainSample {
        TrainSample { x: self.x.clone(), target: Target::Class(self.label) }
    }
}

/// Contiguous disjoint splits drawn from one stream.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<DiffusionSample>,
    pub val: Vec<DiffusionSample>,
    pub test: Vec<DiffusionSample>,
    pub classes: usize,
}

impl Dataset {
    pub fn train_set(&self) -> Vec<TrainSample> {
        self.train.iter().map(DiffusionSample::to_train_sample).collect()
    }

    pub fn val_set(&self) -> Vec<TrainSample> {
        self.val.iter().map(DiffusionSample::to_train_sample).collect()
    }

    pub fn test_set(&self) -> Vec<TrainSample> {
        self.test.iter().map(DiffusionSample::to_train_sample).collect()
    }
}

/// Draws `train + val + test` samples of `S^t delta_source + noise` and
/// splits them in order. Sample `i` depends only on `(seed, i)` draw order,
/// so datasets with one seed are identical run to run.
pub fn make_source_dataset(
    s: &ShiftOperator,
    sources: &[usize],
    t_max: usize,
    noise_std: f64,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<Dataset> {
    let n = s.n();
    if sources.is_empty() {
        return Err(Error::input("need at least one source node"));
    }
    if let Some(&bad) = sources.iter().find(|&&v| v >= n) {
        return Err(Error::input(format!("source node {bad} outside graph of {n} nodes")));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::input(format!("bad noise level {noise_std}")));
    }
    let (n_train, n_val, n_test) = counts;
    if n_train == 0 {
        return Err(Error::input("empty training split"));
    }
    let total = n_train + n_val + n_test;
    let mut stream = rng::chacha(seed, &[0xd1ff]);
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).expect("validated std"))
    } else {
        None
    };
    let mut samples = Vec::with_capacity(total);
    for _ in 0..total {
        let label = stream.gen_range(0..sources.len());
        let t = stream.gen_range(0..=t_max);
        let mut x = Array1::zeros(n);
        x[sources[label]] = 1.0;
        for _ in 0..t {
            let mut next = Array1::zeros(n);
            ndarray::linalg::general_mat_vec_mul(1.0, s.matrix(), &x, 0.0, &mut next);
            x = next;
        }
        if let Some(dist) = &noise {
            for v in x.iter_mut() {
                *v += dist.sample(&mut stream);
            }
        }
        samples.push(DiffusionSample { x, label, t });
    }
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Ok(Dataset { train: samples, val, test, classes: sources.len() })
}

/// Everything a desk-scale run needs. Defaults fit in minutes on a
/// workstation.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub n: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub variant: ShiftVariant,
    pub t_max: usize,
    pub noise_std: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub order: usize,
    pub width: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            n: 40,
            communities: 4,
            p_intra: 0.8,
            p_inter: 0.02,
            variant: ShiftVariant::NormalizedAdjacency,
            t_max: 6,
            noise_std: 0.05,
            train: 800,
            val: 200,
            test: 200,
            order: 5,
            width: 16,
            hidden: 1,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 7,
        }
    }
}

impl ExperimentSpec {
    pub fn with_order(&self, order: usize) -> ExperimentSpec {
        ExperimentSpec { order, ..self.clone() }
    }

    pub fn with_width(&self, width: usize) -> ExperimentSpec {
        ExperimentSpec { width, ..self.clone() }
    }

    pub fn with_nodes(&self, n: usize) -> ExperimentSpec {
        ExperimentSpec { n, ..self.clone() }
    }

    pub fn build_graph(&self) -> Result<Graph> {
        sbm_generate(self.n, self.communities, self.p_intra, self.p_inter, self.seed)
    }

    /// One source per community: the first node of each block.
    pub fn sources(&self) -> Vec<usize> {
        let block = self.n / self.communities;
        (0..self.communities).map(|c| c * block).collect()
    }

    pub fn build_dataset(&self, s: &ShiftOperator) -> Result<Dataset> {
        make_source_dataset(
            s,
            &self.sources(),
            self.t_max,
            self.noise_std,
            (self.train, self.val, self.test),
            self.seed.wrapping_add(1),
        )
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            loss: Loss::SoftmaxCrossEntropy,
            seed: self.seed.wrapping_add(2),
            ..TrainConfig::default()
        }
    }
}

/// Trains a fresh classifier on the nominal shift: `hidden` processing
/// layers under `sigma`, then a linear readout bank onto the classes.
pub fn train_classifier(
    spec: &ExperimentSpec,
    s: &ShiftOperator,
    data: &Dataset,
    sigma: Nonlinearity,
) -> Result<(Gcnn, Vec<EpochStats>)> {
    let net = Gcnn::classifier(
        spec.hidden.max(1),
        spec.width,
        data.classes,
        spec.order,
        sigma,
        spec.seed.wrapping_add(3),
    )?;
    train_adam(net, s, &data.train_set(), &data.val_set(), &spec.train_config())
}

/// Accuracy cost of inference-time perturbation.
#[derive(Debug, Clone, Copy)]
pub struct AccuracyDeviation {
    pub nominal_acc: f64,
    pub perturbed_mean: f64,
    /// Standard deviation of per-trial accuracies.
    pub perturbed_std: f64,
    /// `nominal_acc - perturbed_mean`.
    pub diff: f64,
    pub trials: usize,
}

impl AccuracyDeviation {
    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.perturbed_std / (self.trials as f64).sqrt()
        }
    }
}

/// Classifies the test split `trials` times under the survival model, one
/// fresh realization per (trial, sample). At `p = 1` the perturbed pass is
/// the nominal pass and the difference is exactly zero.
pub fn run_accuracy_deviation(
    net: &Gcnn,
    model: &ResModel,
    test: &[DiffusionSample],
    trials: usize,
    base_draw: u64,
) -> Result<AccuracyDeviation> {
    if test.is_empty() {
        return Err(Error::input("empty test split"));
    }
    if trials == 0 {
        return Err(Error::input("need at least one trial"));
    }
    let hits: usize = test
        .par_iter()
        .map(|sample| -> Result<usize> {
            let out = gcnn_forward(net, model.nominal(), sample.x.view())?;
            Ok((readout_classify(&out) == sample.label) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let nominal_acc = hits as f64 / test.len() as f64;

    let len = test.len() as u64;
    let accs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let mut hits = 0usize;
            for (i, sample) in test.iter().enumerate() {
                let draw = base_draw + trial as u64 * len + i as u64;
                let out = gcnn_forward_stochastic(
                    net,
                    model,
                    RealizationPolicy::SharedPerLayerShift,
                    sample.x.view(),
                    draw,
                )?;
                hits += (readout_classify(&out) == sample.label) as usize;
            }
            Ok(hits as f64 / test.len() as f64)
        })
        .collect::<Result<_>>()?;
    let (perturbed_mean, perturbed_std) = crate::numeric::mean_std(&accs);
    Ok(AccuracyDeviation {
        nominal_acc,
        perturbed_mean,
        perturbed_std,
        diff: nominal_acc - perturbed_mean,
        trials,
    })
}

/// What a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// Edge survival probability; the classifier is trained once and
    /// reused, and each point reports the accuracy difference.
    Survival,
    /// Filter order `K`; retrains per point and reports output deviation.
    Order,
    /// Feature width `F`; retrains per point and reports output deviation.
    Width,
    /// Graph size `n`; regenerates graph and data per point, reports
    /// output deviation.
    Nodes,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::Survival => "p",
            SweepVariable::Order => "order",
            SweepVariable::Width => "width",
            SweepVariable::Nodes => "nodes",
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p" | "survival" => Ok(SweepVariable::Survival),
            "order" | "k" => Ok(SweepVariable::Order),
            "width" | "f" => Ok(SweepVariable::Width),
            "nodes" | "n" => Ok(SweepVariable::Nodes),
            other => Err(Error::config(format!("unknown sweep variable {other:?}"))),
        }
    }
}

/// Grid and measurement size for one sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Survival probability held fixed for architecture sweeps.
    pub p: f64,
    pub trials: usize,
}

/// One grid point. A failed point keeps its error text and NaN statistics
/// instead of aborting the sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub status: Option<String>,
}

impl SweepPoint {
    pub fn is_ok(&self) -> bool {
        self.status.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
}

impl SweepOutcome {
    /// `value,mean,std,trials,status` rows; floats use shortest
    /// round-trip formatting, so repeated runs are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,mean,std,trials,status\n");
        for p in &self.points {
            let status = p
                .status
                .as_deref()
                .unwrap_or("ok")
                .replace([',', '\n'], ";");
            out.push_str(&format!("{},{},{},{},{}\n", p.value, p.mean, p.std, p.trials, status));
        }
        out
    }

    /// `(x, y, yerr)` triples for plotting; failed points are skipped.
    pub fn plot_rows(&self) -> Vec<(f64, f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.is_ok())
            .map(|p| {
                let se = if p.trials > 0 { p.std / (p.trials as f64).sqrt() } else { 0.0 };
                (p.value, p.mean, se)
            })
            .collect()
    }
}

fn failed_point(value: f64, err: &Error) -> SweepPoint {
    SweepPoint {
        value,
        mean: f64::NAN,
        std: f64::NAN,
        trials: 0,
        status: Some(err.to_string()),
    }
}

fn as_count(value: f64) -> Result<usize> {
    if value.fract() != 0.0 || value < 0.0 || !value.is_finite() {
        return Err(Error::config(format!("{value} is not a nonnegative integer")));
    }
    Ok(value as usize)
}

/// Pooled output deviation of a trained classifier: squared Frobenius
/// deviation samples over the first test inputs, all trials in one pool.
/// Chains are drawn per filter, so a wider or deeper-order bank meets
/// proportionally more random shifts instead of averaging one shared draw.
fn trained_deviation(spec: &ExperimentSpec, p: f64, trials: usize) -> Result<McEstimate> {
    let graph = spec.build_graph()?;
    let s = shift_from_graph(&graph, spec.variant)?;
    let data = spec.build_dataset(&s)?;
    let (net, _) = train_classifier(spec, &s, &data, Nonlinearity::Relu)?;
    let model = ResModel::new(graph, spec.variant, p, spec.seed.wrapping_add(4))?;
    let mut pooled = Vec::new();
    for (i, sample) in data.test.iter().take(DEVIATION_INPUTS).enumerate() {
        let mc = mc_gcnn_deviation(
            &net,
            &model,
            RealizationPolicy::IndependentPerFilter,
            sample.x.view(),
            trials,
            (i * trials) as u64,
        )?;
        pooled.extend_from_slice(&mc.samples);
    }
    Ok(McEstimate::from_samples(pooled))
}

/// Runs one sweep. Survival sweeps train once and vary only the model;
/// architecture sweeps rebuild and retrain at every point.
pub fn run_sweep(spec: &ExperimentSpec, sweep: &SweepSpec) -> Result<SweepOutcome> {
    if sweep.values.is_empty() {
        return Err(Error::config("sweep needs at least one grid value"));
    }
    if sweep.trials == 0 {
        return Err(Error::config("sweep needs at least one trial"));
    }
    let mut points = Vec::with_capacity(sweep.values.len());
    match sweep.variable {
        SweepVariable::Survival => {
            let graph = spec.build_graph()?;
            let s = shift_from_graph(&graph, spec.variant)?;
            let data = spec.build_dataset(&s)?;
            let (net, _) = train_classifier(spec, &s, &data, Nonlinearity::Relu)?;
            for &p in &sweep.values {
                let point = ResModel::new(graph.clone(), spec.variant, p, spec.seed.wrapping_add(4))
                    .and_then(|model| {
                        run_accuracy_deviation(&net, &model, &data.test, sweep.trials, 0)
                    });
                match point {
                    Ok(acc) => points.push(SweepPoint {
                        value: p,
                        mean: acc.diff,
                        std: acc.perturbed_std,
                        trials: acc.trials,
                        status: None,
                    }),
                    Err(e) => points.push(failed_point(p, &e)),
                }
            }
        }
        SweepVariable::Order | SweepVariable::Width | SweepVariable::Nodes => {
            for &v in &sweep.values {
                let result = as_count(v).and_then(|count| {
                    let spec_v = match sweep.variable {
                        SweepVariable::Order => spec.with_order(count),
                        SweepVariable::Width => spec.with_width(count),
                        SweepVariable::Nodes => spec.with_nodes(count),
                        SweepVariable::Survival => unreachable!(),
                    };
                    trained_deviation(&spec_v, sweep.p, sweep.trials)
                });
                match result {
                    Ok(mc) => points.push(SweepPoint {
                        value: v,
                        mean: mc.mean,
                        std: mc.std,
                        trials: mc.trials(),
                        status: None,
                    }),
                    Err(e) => points.push(failed_point(v, &e)),
                }
            }
        }
    }
    Ok(SweepOutcome { variable: sweep.variable, points })
}

/// Trains the nonlinear classifier and the linear filter-bank baseline
/// (one Identity processing layer plus readout) on the same data, then
/// measures both accuracy deviations at survival `p`.
pub fn compare_architectures(
    spec: &ExperimentSpec,
    p: f64,
    trials: usize,
) -> Result<(AccuracyDeviation, AccuracyDeviation)> {
    let graph = spec.build_graph()?;
    let s = shift_from_graph(&graph, spec.variant)?;
    let data = spec.build_dataset(&s)?;
    let (gcnn, _) = train_classifier(spec, &s, &data, Nonlinearity::Relu)?;
    let bank_spec = ExperimentSpec { hidden: 1, ..spec.clone() };
    let (bank, _) = train_classifier(&bank_spec, &s, &data, Nonlinearity::Identity)?;
    let model = ResModel::new(graph, spec.variant, p, spec.seed.wrapping_add(4))?;
    let gcnn_dev = run_accuracy_deviation(&gcnn, &model, &data.test, trials, 0)?;
    let bank_dev = run_accuracy_deviation(&bank, &model, &data.test, trials, 0)?;
    Ok((gcnn_dev, bank_dev))
}

/// `epoch,train_loss,val_loss,val_acc` rows.
pub fn trace_csv(trace: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_loss, row.val_acc
        ));
    }
    out
}

/// `trial,deviation` rows for raw Monte Carlo samples.
pub fn samples_csv(samples: &[f64]) -> String {
    let mut out = String::from("trial,deviation\n");
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            n: 12,
            communities: 3,
            p_intra: 0.9,
            p_inter: 0.1,
            t_max: 4,
            noise_std: 0.05,
            train: 60,
            val: 15,
            test: 24,
            order: 2,
            width: 4,
            hidden: 1,
            epochs: 200,
            batch_size: 16,
            learning_rate: 2e-2,
            seed: 11,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn dataset_has_requested_shape_and_valid_labels() {
        let spec = tiny_spec();
        let g = spec.build_graph().unwrap();
        let s = shift_from_graph(&g, spec.variant).unwrap();
        let data = spec.build_dataset(&s).unwrap();
        assert_eq!(data.train.len(), 60);
        assert_eq!(data.val.len(), 15);
        assert_eq!(data.test.len(), 24);
        assert_eq!(data.classes, 3);
        for sample in data.train.iter().chain(&data.val).chain(&data.test) {
            assert!(sample.label < 3);
            assert!(sample.t <= spec.t_max);
            assert_eq!(sample.x.len(), 12);
            assert!(sample.x.iter().all(|v| v.is_finite()));
        }
        // Labels should not be constant across a split this large.
        let first = data.train[0].label;
        assert!(data.train.iter().any(|s| s.label != first));
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let spec = tiny_spec();
        let g = spec.build_graph().unwrap();
        let s = shift_from_graph(&g, spec.variant).unwrap();
        let a = spec.build_dataset(&s).unwrap();
        let b = spec.build_dataset(&s).unwrap();
        for (sa, sb) in a.train.iter().zip(&b.train) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.label, sb.label);
            assert_eq!(sa.t, sb.t);
        }
    }

    #[test]
    fn noiseless_samples_are_exact_diffused_deltas() {
        let g = Graph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let s = shift_from_graph(&g, ShiftVariant::NormalizedAdjacency).unwrap();
        let data = make_source_dataset(&s, &[0, 2], 2, 0.0, (16, 0, 0), 5).unwrap();
        let mut seen_zero = false;
        for sample in &data.train {
            assert!(sample.t <= 2);
            seen_zero |= sample.t == 0;
            let mut expect = Array1::zeros(3);
            expect[[0, 2][sample.label]] = 1.0;
            for _ in 0..sample.t {
                expect = s.matrix().dot(&expect);
            }
            assert!(numeric::vectors_close(&sample.x, &expect, 0.0, 1e-15));
        }
        assert!(seen_zero, "t = 0 never drawn in 16 samples");
    }

    #[test]
    fn zero_diffusion_dataset_is_clean_deltas() {
        let g = Graph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let s = shift_from_graph(&g, ShiftVariant::NormalizedAdjacency).unwrap();
        let data = make_source_dataset(&s, &[0, 2], 0, 0.0, (6, 0, 0), 5).unwrap();
        for sample in &data.train {
            assert_eq!(sample.t, 0);
            let mut expect = Array1::zeros(3);
            expect[[0, 2][sample.label]] = 1.0;
            assert_eq!(sample.x, expect);
        }
    }

    #[test]
    fn dataset_rejects_bad_parameters() {
        let g = Graph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let s = shift_from_graph(&g, ShiftVariant::NormalizedAdjacency).unwrap();
        assert!(make_source_dataset(&s, &[], 2, 0.1, (4, 0, 0), 1).is_err());
        assert!(make_source_dataset(&s, &[9], 2, 0.1, (4, 0, 0), 1).is_err());
        assert!(make_source_dataset(&s, &[0], 2, -0.5, (4, 0, 0), 1).is_err());
        assert!(make_source_dataset(&s, &[0], 2, f64::NAN, (4, 0, 0), 1).is_err());
        assert!(make_source_dataset(&s, &[0], 2, 0.1, (0, 2, 2), 1).is_err());
    }

    #[test]
    fn classifier_learns_the_tiny_task() {
        let spec = tiny_spec();
        let g = spec.build_graph().unwrap();
        let s = shift_from_graph(&g, spec.variant).unwrap();
        let data = spec.build_dataset(&s).unwrap();
        let (net, trace) = train_classifier(&spec, &s, &data, Nonlinearity::Relu).unwrap();
        assert_eq!(trace.len(), spec.epochs);
        assert!(trace.last().unwrap().train_loss < trace[0].train_loss);
        // Well above the 1/3 chance floor.
        let model = ResModel::new(g, spec.variant, 1.0, 1).unwrap();
        let acc = run_accuracy_deviation(&net, &model, &data.test, 1, 0).unwrap();
        assert!(acc.nominal_acc > 0.6, "nominal accuracy {}", acc.nominal_acc);
    }

    #[test]
    fn full_survival_costs_no_accuracy() {
        let spec = tiny_spec();
        let g = spec.build_graph().unwrap();
        let s = shift_from_graph(&g, spec.variant).unwrap();
        let data = spec.build_dataset(&s).unwrap();
        let (net, _) = train_classifier(&spec, &s, &data, Nonlinearity::Relu).unwrap();
        let model = ResModel::new(g, spec.variant, 1.0, 1).unwrap();
        let acc = run_accuracy_deviation(&net, &model, &data.test, 5, 0).unwrap();
        assert_eq!(acc.diff, 0.0);
        assert_eq!(acc.perturbed_std, 0.0);
        assert_eq!(acc.nominal_acc, acc.perturbed_mean);
    }

    #[test]
    fn survival_sweep_produces_ok_points_and_stable_csv() {
        let spec = tiny_spec();
        let sweep = SweepSpec {
            variable: SweepVariable::Survival,
            values: vec![0.9, 1.0],
            p: 0.95,
            trials: 4,
        };
        let a = run_sweep(&spec, &sweep).unwrap();
        let b = run_sweep(&spec, &sweep).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.points.iter().all(SweepPoint::is_ok));
        // Full survival point costs nothing.
        assert_eq!(a.points[1].mean, 0.0);
        assert_eq!(a.plot_rows().len(), 2);
        assert!(a.to_csv().starts_with("value,mean,std,trials,status\n"));
    }

    #[test]
    fn sweep_keeps_going_past_a_failed_point() {
        let spec = tiny_spec();
        let sweep = SweepSpec {
            variable: SweepVariable::Width,
            // Width zero cannot build a network; 2.5 is not a count.
            values: vec![0.0, 2.5, 3.0],
            p: 0.9,
            trials: 3,
        };
        let out = run_sweep(&spec, &sweep).unwrap();
        assert_eq!(out.points.len(), 3);
        assert!(!out.points[0].is_ok());
        assert!(out.points[0].mean.is_nan());
        assert!(!out.points[1].is_ok());
        assert!(out.points[2].is_ok());
        assert_eq!(out.plot_rows().len(), 1);
        // Failed rows keep the CSV shape.
        let csv = out.to_csv();
        assert_eq!(csv.lines().count(), 4);
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 5, "line {line:?}");
        }
    }

    #[test]
    fn sweep_rejects_empty_grids() {
        let spec = tiny_spec();
        let sweep = SweepSpec {
            variable: SweepVariable::Survival,
            values: vec![],
            p: 0.9,
            trials: 3,
        };
        assert!(run_sweep(&spec, &sweep).is_err());
    }

    #[test]
    fn csv_helpers_have_stable_headers() {
        let trace = vec![EpochStats { epoch: 0, train_loss: 1.5, val_loss: f64::NAN, val_acc: f64::NAN }];
        let text = trace_csv(&trace);
        assert!(text.starts_with("epoch,train_loss,val_loss,val_acc\n"));
        assert!(text.contains("0,1.5,NaN,NaN"));
        let s = samples_csv(&[0.25, 0.5]);
        assert_eq!(s, "trial,deviation\n0,0.25\n1,0.5\n");
    }
}
