//! Library-wide invariants checked over randomized inputs.

use gcnn_stab::filters::{
    filter_apply, filter_apply_chain, generalized_frequency_response, lipschitz_gradient,
    FrequencyVector, GraphFilter,
};
use gcnn_stab::gcnn::Nonlinearity;
use gcnn_stab::graph::{
    eigendecompose, max_degree, sbm_generate, shift_from_graph, Graph, ShiftVariant,
};
use gcnn_stab::perturbation::ResModel;
use gcnn_stab::stability::{gcnn_constant, linearity_fit, mc_filter_deviation};
use gcnn_stab::{experiments, rng};
use ndarray::Array1;
use proptest::prelude::*;
use rand::Rng;

fn variant_from(tag: u8) -> ShiftVariant {
    match tag % 3 {
        0 => ShiftVariant::Adjacency,
        1 => ShiftVariant::Laplacian,
        _ => ShiftVariant::NormalizedAdjacency,
    }
}

/// Random graph with a path backbone so every variant can normalize.
fn test_graph(n: usize, seed: u64) -> Graph {
    let random = sbm_generate(n, 1, 0.4, 0.0, seed).expect("valid sbm parameters");
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for e in random.edges() {
        if e.j != e.i + 1 {
            edges.push((e.i, e.j));
        }
    }
    Graph::new(n, &edges).expect("valid edge union")
}

proptest! {
    // The multivariate response difference collapses onto the gradient
    // exactly, not just to first order.
    #[test]
    fn difference_identity_holds(
        coeffs in proptest::collection::vec(-2.0f64..2.0, 2..=7),
        seed in any::<u64>(),
    ) {
        let k = coeffs.len() - 1;
        let f = GraphFilter::new(coeffs).unwrap();
        let mut stream = rng::chacha(seed, &[0x1de]);
        let l1: Vec<f64> = (0..k).map(|_| stream.gen::<f64>() * 3.0 - 1.5).collect();
        let l2: Vec<f64> = (0..k).map(|_| stream.gen::<f64>() * 3.0 - 1.5).collect();
        let v1 = FrequencyVector::new(l1.clone()).unwrap();
        let v2 = FrequencyVector::new(l2.clone()).unwrap();
        let lhs = generalized_frequency_response(&f, &v1).unwrap()
            - generalized_frequency_response(&f, &v2).unwrap();
        let grad = lipschitz_gradient(&f, &v1, &v2).unwrap();
        let rhs: f64 = grad
            .iter()
            .zip(l1.iter().zip(&l2))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        prop_assert!(
            (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
            "lhs {lhs} rhs {rhs}"
        );
    }

    // Every gradient entry is the partial derivative of the response at the
    // mixed point: first coordinates from the left argument, later ones from
    // the right.
    #[test]
    fn gradient_matches_central_differences(
        coeffs in proptest::collection::vec(-2.0f64..2.0, 2..=7),
        seed in any::<u64>(),
    ) {
        let k = coeffs.len() - 1;
        let f = GraphFilter::new(coeffs).unwrap();
        let mut stream = rng::chacha(seed, &[0x1df]);
        let l1: Vec<f64> = (0..k).map(|_| stream.gen::<f64>() * 3.0 - 1.5).collect();
        let l2: Vec<f64> = (0..k).map(|_| stream.gen::<f64>() * 3.0 - 1.5).collect();
        let grad = lipschitz_gradient(
            &f,
            &FrequencyVector::new(l1.clone()).unwrap(),
            &FrequencyVector::new(l2.clone()).unwrap(),
        )
        .unwrap();
        let step = 1e-5;
        for r in 0..k {
            let mut probe: Vec<f64> = (0..k)
                .map(|i| if i < r { l1[i] } else { l2[i] })
                .collect();
            let center = 0.5 * (l1[r] + l2[r]);
            probe[r] = center + step;
            let hi = generalized_frequency_response(
                &f,
                &FrequencyVector::new(probe.clone()).unwrap(),
            )
            .unwrap();
            probe[r] = center - step;
            let lo = generalized_frequency_response(
                &f,
                &FrequencyVector::new(probe).unwrap(),
            )
            .unwrap();
            let fd = (hi - lo) / (2.0 * step);
            prop_assert!(
                (fd - grad[r]).abs() <= 1e-6 * (1.0 + grad[r].abs()),
                "entry {r}: fd {fd} grad {}",
                grad[r]
            );
        }
    }

    // A chain of identical shifts is the nominal filter.
    #[test]
    fn constant_chain_equals_filter_apply(
        n in 2usize..12,
        order in 0usize..5,
        tag in any::<u8>(),
        seed in any::<u64>(),
    ) {
        let g = test_graph(n, seed);
        let s = shift_from_graph(&g, variant_from(tag)).unwrap();
        let mut stream = rng::chacha(seed, &[0x1e0]);
        let coeffs: Vec<f64> = (0..=order).map(|_| stream.gen::<f64>() * 2.0 - 1.0).collect();
        let f = GraphFilter::new(coeffs).unwrap();
        let x = Array1::from_iter((0..n).map(|_| stream.gen::<f64>() * 2.0 - 1.0));
        let nominal = filter_apply(&f, &s, x.view()).unwrap();
        let chain = vec![s.clone(); order];
        let chained = filter_apply_chain(&f, &chain, x.view()).unwrap();
        let diff = (&nominal - &chained).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(diff <= 1e-12, "max diff {diff}");
    }

    // Polynomial-in-S application is linear in the signal.
    #[test]
    fn filter_apply_is_linear(
        n in 2usize..9,
        order in 0usize..4,
        tag in any::<u8>(),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let g = test_graph(n, seed);
        let s = shift_from_graph(&g, variant_from(tag)).unwrap();
        let mut stream = rng::chacha(seed, &[0x1e1]);
        let coeffs: Vec<f64> = (0..=order).map(|_| stream.gen::<f64>() * 2.0 - 1.0).collect();
        let f = GraphFilter::new(coeffs).unwrap();
        let x = Array1::from_iter((0..n).map(|_| stream.gen::<f64>() * 2.0 - 1.0));
        let y = Array1::from_iter((0..n).map(|_| stream.gen::<f64>() * 2.0 - 1.0));
        let mixed = filter_apply(&f, &s, (a * &x + b * &y).view()).unwrap();
        let split = a * &filter_apply(&f, &s, x.view()).unwrap()
            + b * &filter_apply(&f, &s, y.view()).unwrap();
        let diff = (&mixed - &split).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(diff <= 1e-10, "max diff {diff}");
    }

    // Realized shifts stay symmetric, never grow support, and depend only
    // on (seed, draw).
    #[test]
    fn realizations_are_symmetric_subgraphs(
        n in 2usize..10,
        tag in any::<u8>(),
        p in 0.05f64..=1.0,
        draw in 0u64..1000,
        seed in any::<u64>(),
    ) {
        let g = test_graph(n, seed);
        let variant = variant_from(tag);
        let nominal = shift_from_graph(&g, variant).unwrap();
        let model = ResModel::new(g, variant, p, seed ^ 0xabcd).unwrap();
        let realized = model.sample_subgraph(draw);
        let m = realized.matrix();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(m[[i, j]], m[[j, i]]);
                if i != j && m[[i, j]] != 0.0 {
                    prop_assert!(
                        nominal.matrix()[[i, j]] != 0.0,
                        "edge ({i},{j}) appeared out of nowhere"
                    );
                }
            }
        }
        if variant == ShiftVariant::Laplacian {
            for i in 0..n {
                let row: f64 = m.row(i).sum();
                prop_assert!(row.abs() <= 1e-12, "laplacian row {i} sums to {row}");
            }
        }
        let again = model.sample_subgraph(draw);
        prop_assert_eq!(m, again.matrix());
    }

    // V diag(lambda) V^T rebuilds S and V stays orthonormal.
    #[test]
    fn eigendecomposition_reconstructs(
        n in 2usize..10,
        tag in any::<u8>(),
        seed in any::<u64>(),
    ) {
        let g = test_graph(n, seed);
        let s = shift_from_graph(&g, variant_from(tag)).unwrap();
        let dec = eigendecompose(&s).unwrap();
        prop_assert!(dec.reconstruction_error(s.matrix()) <= 1e-8);
        prop_assert!(dec.orthonormality_error() <= 1e-8);
    }

    #[test]
    fn max_degree_matches_adjacency_row_sums(n in 1usize..14, seed in any::<u64>()) {
        let g = test_graph(n, seed);
        let adj = g.adjacency();
        let by_rows = (0..n)
            .map(|i| adj.row(i).iter().filter(|v| **v != 0.0).count())
            .max()
            .unwrap_or(0);
        prop_assert_eq!(max_degree(&g), by_rows);
    }

    // The architecture constant grows with every handle the theorem names,
    // at the unit nonlinearity gain all shipped activations share.
    #[test]
    fn gcnn_constant_is_monotone(
        n in 1usize..60,
        alpha in 0.5f64..10.0,
        c_l in 0.05f64..3.0,
        depth in 1usize..4,
        width in 1usize..9,
        p in 0.9f64..1.0,
    ) {
        let base = gcnn_constant(n, alpha, c_l, depth, 1.0, width);
        prop_assert!(gcnn_constant(n + 1, alpha, c_l, depth, 1.0, width) >= base);
        prop_assert!(gcnn_constant(n, alpha, c_l * 1.1, depth, 1.0, width) >= base);
        prop_assert!(gcnn_constant(n, alpha, c_l, depth + 1, 1.0, width) >= base);
        prop_assert!(gcnn_constant(n, alpha, c_l, depth, 1.0, width + 1) >= base);
        let tighter = base * (1.0 - p);
        let looser = base * (1.0 - (p - 0.05));
        prop_assert!(looser >= tighter);
    }

    // Split points carve one deterministic sample stream, in order.
    #[test]
    fn dataset_splits_partition_one_stream(
        n_train in 1usize..20,
        n_val in 0usize..10,
        n_test in 0usize..10,
        seed in any::<u64>(),
    ) {
        let g = Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let s = shift_from_graph(&g, ShiftVariant::NormalizedAdjacency).unwrap();
        let split = experiments::make_source_dataset(
            &s, &[0, 2], 3, 0.1, (n_train, n_val, n_test), seed,
        )
        .unwrap();
        let whole = experiments::make_source_dataset(
            &s, &[0, 2], 3, 0.1, (n_train + n_val + n_test, 0, 0), seed,
        )
        .unwrap();
        prop_assert_eq!(split.train.len(), n_train);
        prop_assert_eq!(split.val.len(), n_val);
        prop_assert_eq!(split.test.len(), n_test);
        let rejoined: Vec<_> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .collect();
        for (a, b) in rejoined.iter().zip(&whole.train) {
            prop_assert_eq!(&a.x, &b.x);
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.t, b.t);
        }
    }
}

#[test]
fn nonlinearities_are_nonexpansive_over_many_pairs() {
    let mut stream = rng::chacha(0x90e, &[]);
    for _ in 0..10_000 {
        let a = Array1::from_iter((0..8).map(|_| stream.gen::<f64>() * 6.0 - 3.0));
        let b = Array1::from_iter((0..8).map(|_| stream.gen::<f64>() * 6.0 - 3.0));
        let gap_sq: f64 = (&a - &b).iter().map(|v| v * v).sum();
        for sigma in [
            Nonlinearity::Relu,
            Nonlinearity::Tanh,
            Nonlinearity::Abs,
            Nonlinearity::Identity,
        ] {
            let out_sq: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| {
                    let d = sigma.apply(*x) - sigma.apply(*y);
                    d * d
                })
                .sum();
            assert!(
                out_sq <= gap_sq * (1.0 + 1e-12),
                "{} expanded: {out_sq} > {gap_sq}",
                sigma.name()
            );
        }
    }
}

#[test]
fn first_moment_error_decays_at_the_monte_carlo_rate() {
    let g = sbm_generate(8, 1, 0.7, 0.0, 21).unwrap();
    let model = ResModel::new(g, ShiftVariant::Adjacency, 0.9, 33).unwrap();
    let points: Vec<(f64, f64)> = [100usize, 1_000, 10_000, 100_000]
        .iter()
        .map(|&draws| {
            let dev = model.check_first_moment(draws).unwrap();
            ((draws as f64).log10(), dev.log10())
        })
        .collect();
    let fit = linearity_fit(&points).unwrap();
    assert!(
        (-0.65..=-0.35).contains(&fit.slope),
        "slope {} outside the 1/sqrt(N) window",
        fit.slope
    );
}

#[test]
fn deviation_std_error_halves_when_trials_quadruple() {
    let g = sbm_generate(10, 1, 0.5, 0.0, 4).unwrap();
    let model = ResModel::new(g, ShiftVariant::Adjacency, 0.95, 17).unwrap();
    let f = GraphFilter::new(vec![0.2, 0.5, 0.3]).unwrap();
    let mut stream = rng::chacha(8, &[]);
    let x = Array1::from_iter((0..10).map(|_| stream.gen::<f64>() * 2.0 - 1.0));
    let small = mc_filter_deviation(&f, &model, x.view(), 400, 0).unwrap();
    let large = mc_filter_deviation(&f, &model, x.view(), 1600, 400).unwrap();
    let ratio = large.std_error() / small.std_error();
    assert!(
        (0.35..=0.65).contains(&ratio),
        "std-error ratio {ratio} (small {}, large {})",
        small.std_error(),
        large.std_error()
    );
}
