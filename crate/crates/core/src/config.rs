//! TOML configuration for the command line tool.
//!
//! Every section and field has a default, so an empty string parses into a
//! working desk-scale setup. Unknown keys are rejected rather than
//! silently ignored. Enum-like fields (shift variant, nonlinearity, sweep
//! variable) stay strings in the file and are parsed on access, so a typo
//! fails with a pointed message instead of a serde trace.

use serde::Deserialize;

use crate::experiments::{ExperimentSpec, SweepSpec, SweepVariable};
use crate::filters::GraphFilter;
use crate::gcnn::Nonlinearity;
use crate::graph::{eigendecompose, sbm_generate, Graph, ShiftOperator, ShiftVariant};
use crate::perturbation::ResModel;
use crate::stability::VerdictPolicy;
use crate::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub graph: GraphSection,
    pub filter: FilterSection,
    pub gcnn: GcnnSection,
    pub res: ResSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub stability: StabilitySection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            graph: GraphSection::default(),
            filter: FilterSection::default(),
            gcnn: GcnnSection::default(),
            res: ResSection::default(),
            train: TrainSection::default(),
            sweep: SweepSection::default(),
            stability: StabilitySection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub nodes: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// "adjacency", "laplacian", or "normalized-adjacency".
    pub variant: String,
    pub seed: u64,
    /// Optional edge list file; overrides the generated block model.
    pub edge_list: Option<String>,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            nodes: 40,
            communities: 4,
            p_intra: 0.8,
            p_inter: 0.02,
            variant: "normalized-adjacency".into(),
            seed: 7,
            edge_list: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub coeffs: Vec<f64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection { coeffs: vec![0.5, 0.3, 0.2] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnnSection {
    pub order: usize,
    pub width: usize,
    pub hidden: usize,
    pub nonlinearity: String,
}

impl Default for GcnnSection {
    fn default() -> Self {
        GcnnSection { order: 5, width: 16, hidden: 1, nonlinearity: "relu".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResSection {
    pub p: f64,
    pub seed: u64,
}

impl Default for ResSection {
    fn default() -> Self {
        ResSection { p: 0.95, seed: 11 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub t_max: usize,
    pub noise_std: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-2,
            t_max: 6,
            noise_std: 0.05,
            train: 800,
            val: 200,
            test: 200,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub variable: String,
    pub values: Vec<f64>,
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            variable: "p".into(),
            values: vec![0.94, 0.95, 0.96, 0.97, 0.98, 0.99],
            trials: 50,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub trials: usize,
    /// Frequency box `[lo, hi]` for the Lipschitz estimate. Empty means
    /// derive `[-lambda_max, lambda_max]` from the nominal shift.
    pub interval: Vec<f64>,
    pub lipschitz_samples: usize,
    pub slack: f64,
    pub p_threshold: f64,
    pub cl_inflation: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            trials: 2000,
            interval: Vec::new(),
            lipschitz_samples: 20_000,
            slack: 0.5,
            p_threshold: 0.98,
            cl_inflation: 0.1,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Config::from_toml(&text)?;
        // A relative edge list is relative to the config file, not the cwd.
        if let (Some(list), Some(dir)) = (&cfg.graph.edge_list, path.parent()) {
            let p = std::path::Path::new(list);
            if p.is_relative() && !dir.as_os_str().is_empty() {
                cfg.graph.edge_list = Some(dir.join(p).display().to_string());
            }
        }
        Ok(cfg)
    }

    pub fn shift_variant(&self) -> Result<ShiftVariant> {
        self.graph.variant.parse()
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        self.gcnn.nonlinearity.parse()
    }

    /// The configured graph: an edge list file when given, otherwise the
    /// generated block model.
    pub fn build_graph(&self) -> Result<Graph> {
        if let Some(path) = &self.graph.edge_list {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read {path}: {e}")))?;
            Graph::from_edge_list(&text)
        } else {
            sbm_generate(
                self.graph.nodes,
                self.graph.communities,
                self.graph.p_intra,
                self.graph.p_inter,
                self.graph.seed,
            )
        }
    }

    pub fn graph_filter(&self) -> Result<GraphFilter> {
        GraphFilter::new(self.filter.coeffs.clone())
    }

    pub fn res_model(&self, graph: Graph) -> Result<ResModel> {
        ResModel::new(graph, self.shift_variant()?, self.res.p, self.res.seed)
    }

    /// The configured frequency box, or `[-lambda_max, lambda_max]` of the
    /// given nominal shift when the config leaves it empty.
    pub fn interval_for(&self, s: &ShiftOperator) -> Result<(f64, f64)> {
        match self.stability.interval.len() {
            0 => {
                let r = eigendecompose(s)?.spectral_radius();
                if r <= 0.0 {
                    return Err(Error::config(
                        "cannot derive a frequency interval from a zero spectrum",
                    ));
                }
                Ok((-r, r))
            }
            2 => Ok((self.stability.interval[0], self.stability.interval[1])),
            n => Err(Error::config(format!(
                "interval needs exactly [lo, hi], got {n} values"
            ))),
        }
    }

    pub fn verdict_policy(&self) -> VerdictPolicy {
        VerdictPolicy {
            slack: self.stability.slack,
            p_threshold: self.stability.p_threshold,
            cl_inflation: self.stability.cl_inflation,
        }
    }

    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            n: self.graph.nodes,
            communities: self.graph.communities,
            p_intra: self.graph.p_intra,
            p_inter: self.graph.p_inter,
            variant: self.shift_variant()?,
            t_max: self.train.t_max,
            noise_std: self.train.noise_std,
            train: self.train.train,
            val: self.train.val,
            test: self.train.test,
            order: self.gcnn.order,
            width: self.gcnn.width,
            hidden: self.gcnn.hidden,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.graph.seed,
        })
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let variable: SweepVariable = self.sweep.variable.parse()?;
        Ok(SweepSpec {
            variable,
            values: self.sweep.values.clone(),
            p: self.res.p,
            trials: self.sweep.trials,
        })
    }

    /// Reseeds every stream in the run from one value.
    pub fn override_seed(&mut self, seed: u64) {
        self.graph.seed = seed;
        self.res.seed = seed.wrapping_add(0x5eed);
    }

    pub fn override_trials(&mut self, trials: usize) {
        self.stability.trials = trials;
        self.sweep.trials = trials;
    }
}
