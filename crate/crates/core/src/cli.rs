//! Command line front end.
//!
//! Exit codes: 0 on success, 1 when a check fails at runtime (a deviation
//! verdict of exceeds-bound, a moment error above tolerance, a selftest
//! failure, training divergence), 2 for configuration and usage errors.

use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use ndarray::Array1;
use rand::Rng;

use crate::config::Config;
use crate::experiments::{
    run_accuracy_deviation, run_sweep, samples_csv, trace_csv, train_classifier,
};
use crate::filters::{
    filter_apply, filter_apply_chain, generalized_frequency_response, lipschitz_gradient,
    GraphFilter, FrequencyVector,
};
use crate::gcnn::{gcnn_forward, gcnn_forward_stochastic, Gcnn, Nonlinearity, RealizationPolicy};
use crate::graph::{eigendecompose, sbm_generate, shift_from_graph, Graph, ShiftVariant};
use crate::perturbation::ResModel;
use crate::rng;
use crate::stability::{filter_bound, mc_filter_deviation, report_csv, verify_filter, Verdict};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "gcnn-stab",
    version,
    about = "Stability of graph filters and filter-bank networks under random edge erasure"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV artifacts; without it CSV goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override Monte Carlo trial counts.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads (also: GCNN_STAB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the first-order deviation bound for the configured filter at
    /// unit signal energy.
    Bound,
    /// Measure filter deviation by Monte Carlo and compare to the bound.
    Mc,
    /// Compare empirical perturbation moments to their closed forms.
    Moments,
    /// Train the configured classifier; emits the loss trace as CSV.
    Train,
    /// Run the configured sweep; emits one CSV row per grid point.
    Sweep,
    /// Fast internal consistency checks.
    Selftest,
}

/// Entry point used by `main`; locks stdout and reports the exit code.
pub fn cli_main(argv: Vec<String>) -> i32 {
    let mut stdout = std::io::stdout().lock();
    let code = run(&argv, &mut stdout);
    let _ = stdout.flush();
    code
}

/// Testable core: parses `argv`, writes human output to `out`, returns the
/// exit code.
pub fn run<W: Write>(argv: &[String], out: &mut W) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{e}");
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };

    // The environment variable wins over the flag.
    let threads = std::env::var("GCNN_STAB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .or(cli.threads);
    if let Some(t) = threads {
        // A second initialization in one process is harmless; keep the
        // existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }

    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            match e {
                Error::Config(_) | Error::Input(_) | Error::Io(_) => 2,
                Error::Numeric(_) | Error::TrainingDiverged { .. } => 1,
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::from_path(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(trials) = cli.trials {
        if trials == 0 {
            return Err(Error::config("--trials must be positive"));
        }
        cfg.override_trials(trials);
    }
    Ok(cfg)
}

fn emit_csv<W: Write>(cli: &Cli, out: &mut W, csv: &str, name: &str) -> Result<()> {
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            std::fs::write(&path, csv)?;
            let _ = writeln!(out, "wrote = {}", path.display());
        }
        None => {
            let _ = write!(out, "{csv}");
        }
    }
    Ok(())
}

/// Deterministic unit-energy probe signal for deviation measurements.
fn probe_signal(n: usize, seed: u64) -> Array1<f64> {
    let mut stream = rng::chacha(seed, &[0x51f]);
    let mut x = Array1::from_iter((0..n).map(|_| stream.gen::<f64>() * 2.0 - 1.0));
    let norm = x.dot(&x).sqrt();
    if norm > 0.0 {
        x /= norm;
    }
    x
}

fn dispatch<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    match cli.command {
        Command::Bound => cmd_bound(cli, out),
        Command::Mc => cmd_mc(cli, out),
        Command::Moments => cmd_moments(cli, out),
        Command::Train => cmd_train(cli, out),
        Command::Sweep => cmd_sweep(cli, out),
        Command::Selftest => cmd_selftest(out),
    }
}

fn cmd_bound<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    let cfg = load_config(cli)?;
    let graph = cfg.build_graph()?;
    let filter = cfg.graph_filter()?;
    let model = cfg.res_model(graph)?;
    let interval = cfg.interval_for(model.nominal())?;
    let b = filter_bound(&filter, &model, 1.0, interval, cfg.stability.lipschitz_samples)?;
    let _ = writeln!(out, "variant = {}", model.variant().name());
    let _ = writeln!(out, "n = {}", model.n());
    let _ = writeln!(out, "alpha = {}", b.alpha);
    let _ = writeln!(out, "c_l = {}", b.c_l);
    let _ = writeln!(out, "x_norm_sq = 1");
    let _ = writeln!(out, "constant = {}", b.constant);
    let _ = writeln!(out, "p = {}", model.p());
    let _ = writeln!(out, "bound = {}", b.value);
    if let Some(w) = &b.warning {
        let _ = writeln!(out, "warning = {w}");
    }
    Ok(0)
}

fn cmd_mc<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    let cfg = load_config(cli)?;
    let graph = cfg.build_graph()?;
    let filter = cfg.graph_filter()?;
    let model = cfg.res_model(graph)?;
    let x = probe_signal(model.n(), model.seed());
    let interval = cfg.interval_for(model.nominal())?;
    let report = verify_filter(
        &filter,
        &model,
        x.view(),
        cfg.stability.trials,
        interval,
        cfg.stability.lipschitz_samples,
        &cfg.verdict_policy(),
    )?;
    let _ = writeln!(out, "p = {}", report.p);
    let _ = writeln!(out, "trials = {}", report.trials);
    let _ = writeln!(out, "mean = {}", report.emp_mean);
    let _ = writeln!(out, "std = {}", report.emp_std);
    let _ = writeln!(out, "std_error = {}", report.std_error());
    let _ = writeln!(out, "bound = {}", report.bound);
    let _ = writeln!(out, "c_l = {}", report.c_l);
    let _ = writeln!(out, "alpha = {}", report.alpha);
    let _ = writeln!(out, "verdict = {}", report.verdict.name());
    if let Some(w) = &report.warning {
        let _ = writeln!(out, "warning = {w}");
    }
    if cli.out.is_some() {
        emit_csv(cli, out, &report_csv(std::slice::from_ref(&report)), "report.csv")?;
        emit_csv(cli, out, &samples_csv(report.samples()), "samples.csv")?;
    }
    Ok(if report.verdict == Verdict::ExceedsBound { 1 } else { 0 })
}

fn cmd_moments<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    let cfg = load_config(cli)?;
    let graph = cfg.build_graph()?;
    let w_max = graph
        .edges()
        .iter()
        .map(|e| e.w.abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let model = cfg.res_model(graph)?;
    let draws = if cli.trials.is_some() { cfg.stability.trials } else { 20_000 };
    let p = model.p();

    let first = model.check_first_moment(draws)?;
    let first_tol = 3.0 * w_max * (p * (1.0 - p) / draws as f64).sqrt();
    let _ = writeln!(out, "draws = {draws}");
    let _ = writeln!(out, "first_moment_err = {first}");
    let _ = writeln!(out, "first_moment_tol = {first_tol}");
    let mut code = if first <= first_tol { 0 } else { 1 };

    let second = match model.variant() {
        ShiftVariant::NormalizedAdjacency => {
            let _ = writeln!(out, "second_moment = skipped (no closed form for the frozen normalization)");
            f64::NAN
        }
        _ => {
            let second = model.check_second_moment(draws)?;
            let second_tol = 0.03 * w_max * w_max * (1.0e5 / draws as f64).sqrt();
            let _ = writeln!(out, "second_moment_err = {second}");
            let _ = writeln!(out, "second_moment_tol = {second_tol}");
            if second > second_tol {
                code = 1;
            }
            second
        }
    };
    if cli.out.is_some() {
        let csv = format!(
            "p,draws,first_moment_dev,second_moment_dev\n{p},{draws},{first},{second}\n"
        );
        emit_csv(cli, out, &csv, "moments.csv")?;
    }
    Ok(code)
}

fn cmd_train<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    let cfg = load_config(cli)?;
    let spec = cfg.experiment_spec()?;
    let graph = spec.build_graph()?;
    let s = shift_from_graph(&graph, spec.variant)?;
    let data = spec.build_dataset(&s)?;
    let (net, trace) = train_classifier(&spec, &s, &data, cfg.nonlinearity()?)?;
    let model = ResModel::new(graph, spec.variant, cfg.res.p, cfg.res.seed)?;
    let acc = run_accuracy_deviation(&net, &model, &data.test, cfg.stability.trials.min(50), 0)?;
    let last = trace.last().expect("at least one epoch");
    let _ = writeln!(out, "epochs = {}", trace.len());
    let _ = writeln!(out, "final_train_loss = {}", last.train_loss);
    let _ = writeln!(out, "final_val_acc = {}", last.val_acc);
    let _ = writeln!(out, "test_acc_nominal = {}", acc.nominal_acc);
    let _ = writeln!(out, "test_acc_perturbed = {}", acc.perturbed_mean);
    let _ = writeln!(out, "accuracy_diff = {}", acc.diff);
    emit_csv(cli, out, &trace_csv(&trace), "trace.csv")?;
    Ok(0)
}

fn cmd_sweep<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    let cfg = load_config(cli)?;
    let spec = cfg.experiment_spec()?;
    let sweep = cfg.sweep_spec()?;
    let outcome = run_sweep(&spec, &sweep)?;
    let failed = outcome.points.iter().filter(|p| !p.is_ok()).count();
    let _ = writeln!(out, "variable = {}", outcome.variable.name());
    let _ = writeln!(out, "points = {}", outcome.points.len());
    let _ = writeln!(out, "failed = {failed}");
    emit_csv(cli, out, &outcome.to_csv(), "sweep.csv")?;
    if cli.out.is_some() {
        let mut plot = String::new();
        for (x, y, yerr) in outcome.plot_rows() {
            plot.push_str(&format!("{x} {y} {yerr}\n"));
        }
        emit_csv(cli, out, &plot, "plot.dat")?;
    }
    Ok(if failed > 0 { 1 } else { 0 })
}

struct SelfTest<'a, W: Write> {
    out: &'a mut W,
    failures: usize,
}

impl<W: Write> SelfTest<'_, W> {
    fn check(&mut self, name: &str, result: std::result::Result<(), String>) {
        match result {
            Ok(()) => {
                let _ = writeln!(self.out, "ok {name}");
            }
            Err(detail) => {
                self.failures += 1;
                let _ = writeln!(self.out, "FAIL {name}: {detail}");
            }
        }
    }
}

fn cmd_selftest<W: Write>(out: &mut W) -> Result<i32> {
    let mut t = SelfTest { out, failures: 0 };

    t.check("difference-identity", {
        let mut worst = 0.0f64;
        let mut stream = rng::chacha(0xc0de, &[]);
        for _ in 0..200 {
            let k = stream.gen_range(1..=6);
            let coeffs: Vec<f64> =
                (0..=k).map(|_| stream.gen::<f64>() * 4.0 - 2.0).collect();
            let f = GraphFilter::new(coeffs).unwrap();
            let v1 = FrequencyVector::new(
                (0..k).map(|_| stream.gen::<f64>() * 2.0 - 1.0).collect(),
            )
            .unwrap();
            let v2 = FrequencyVector::new(
                (0..k).map(|_| stream.gen::<f64>() * 2.0 - 1.0).collect(),
            )
            .unwrap();
            let lhs = generalized_frequency_response(&f, &v1).unwrap()
                - generalized_frequency_response(&f, &v2).unwrap();
            let grad = lipschitz_gradient(&f, &v1, &v2).unwrap();
            let rhs: f64 = grad
                .iter()
                .zip(v1.values().iter().zip(v2.values()))
                .map(|(g, (a, b))| g * (a - b))
                .sum();
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
        if worst <= 1e-10 { Ok(()) } else { Err(format!("worst residual {worst}")) }
    });

    t.check("eigendecomposition", {
        (|| {
            let g = sbm_generate(12, 3, 0.8, 0.3, 17).map_err(|e| e.to_string())?;
            let s = shift_from_graph(&g, ShiftVariant::Adjacency).map_err(|e| e.to_string())?;
            let d = eigendecompose(&s).map_err(|e| e.to_string())?;
            let err = d.reconstruction_error(s.matrix());
            if err < 1e-8 { Ok(()) } else { Err(format!("reconstruction error {err}")) }
        })()
    });

    t.check("full-survival-degeneracy", {
        (|| {
            let g = sbm_generate(10, 2, 0.8, 0.3, 4).map_err(|e| e.to_string())?;
            let model =
                ResModel::new(g, ShiftVariant::Adjacency, 1.0, 9).map_err(|e| e.to_string())?;
            let f = GraphFilter::new(vec![0.4, 0.3, -0.2]).unwrap();
            let x = probe_signal(10, 3);
            let mc = mc_filter_deviation(&f, &model, x.view(), 10, 0).map_err(|e| e.to_string())?;
            if mc.mean != 0.0 {
                return Err(format!("filter deviation {} at p = 1", mc.mean));
            }
            let net = Gcnn::random_uniform(
                &[1, 2, 1],
                2,
                &[Nonlinearity::Relu, Nonlinearity::Identity],
                5,
            )
            .unwrap();
            let nominal = gcnn_forward(&net, model.nominal(), x.view()).map_err(|e| e.to_string())?;
            let stoch = gcnn_forward_stochastic(
                &net,
                &model,
                RealizationPolicy::IndependentPerFilter,
                x.view(),
                0,
            )
            .map_err(|e| e.to_string())?;
            if stoch == nominal { Ok(()) } else { Err("stochastic != nominal at p = 1".into()) }
        })()
    });

    t.check("chain-vs-apply", {
        (|| {
            let g = sbm_generate(8, 2, 0.9, 0.4, 2).map_err(|e| e.to_string())?;
            let s = shift_from_graph(&g, ShiftVariant::Laplacian).map_err(|e| e.to_string())?;
            let f = GraphFilter::new(vec![0.1, 0.7, -0.3, 0.2]).unwrap();
            let x = probe_signal(8, 14);
            let direct = filter_apply(&f, &s, x.view()).map_err(|e| e.to_string())?;
            let chain = vec![s.clone(), s.clone(), s.clone()];
            let chained = filter_apply_chain(&f, &chain, x.view()).map_err(|e| e.to_string())?;
            if direct == chained { Ok(()) } else { Err("chain of nominal shifts differs".into()) }
        })()
    });

    t.check("first-moment", {
        (|| {
            let g = sbm_generate(8, 2, 0.9, 0.4, 6).map_err(|e| e.to_string())?;
            let model =
                ResModel::new(g, ShiftVariant::Adjacency, 0.7, 21).map_err(|e| e.to_string())?;
            let draws = 4000;
            let err = model.check_first_moment(draws).map_err(|e| e.to_string())?;
            let tol = 4.0 * (0.7f64 * 0.3 / draws as f64).sqrt();
            if err <= tol { Ok(()) } else { Err(format!("error {err} above {tol}")) }
        })()
    });

    t.check("bound-arithmetic", {
        (|| {
            let g = Graph::new(10, &(0..9).map(|i| (i, i + 1)).collect::<Vec<_>>())
                .map_err(|e| e.to_string())?;
            let model =
                ResModel::new(g, ShiftVariant::Adjacency, 0.99, 1).map_err(|e| e.to_string())?;
            let f = GraphFilter::new(vec![0.0, 0.5]).unwrap();
            let b = filter_bound(&f, &model, 1.0, (-1.0, 1.0), 100).map_err(|e| e.to_string())?;
            if (b.value - 0.05).abs() < 1e-12 {
                Ok(())
            } else {
                Err(format!("bound {} != 0.05", b.value))
            }
        })()
    });

    t.check("two-node-oracle", {
        (|| {
            let g = Graph::new(2, &[(0, 1)]).map_err(|e| e.to_string())?;
            let p = 0.6;
            let model =
                ResModel::new(g, ShiftVariant::Adjacency, p, 11).map_err(|e| e.to_string())?;
            let f = GraphFilter::new(vec![0.0, 1.0]).unwrap();
            let x = ndarray::array![0.8, -0.5];
            let sx = model.nominal().matrix().dot(&x);
            let expect = (1.0 - p) * sx.dot(&sx);
            let mc = mc_filter_deviation(&f, &model, x.view(), 20_000, 0)
                .map_err(|e| e.to_string())?;
            let slack = 3.0 * mc.std_error();
            if (mc.mean - expect).abs() <= slack {
                Ok(())
            } else {
                Err(format!("mean {} vs {expect} (3 se = {slack})", mc.mean))
            }
        })()
    });

    let failures = t.failures;
    if failures == 0 {
        let _ = writeln!(out, "selftest passed");
        Ok(0)
    } else {
        let _ = writeln!(out, "selftest failed ({failures})");
        Ok(1)
    }
}
