//! Filter-bank networks over a shift operator.
//!
//! A network is a chain of layers; layer `l` holds an `F_out x F_in` bank
//! of polynomial filters with one shared order `K`, plus a pointwise
//! nonlinearity. Feature `f` of a layer is
//! `sigma(sum_g H^{fg}(S) x^g)` over the incoming features `x^g`. The input
//! is a single signal (width 1); the final width is the readout width
//! (1 for the single-output setting the deviation bounds are stated in,
//! class count for classifiers).
//!
//! Two forward paths exist. The nominal path shifts each incoming feature
//! `K` times and accumulates per filter. The stochastic path draws one
//! random shift chain per filter (or per layer, under the shared policy)
//! from a [`ResModel`] and applies the chain instead. Both paths perform
//! per-filter accumulation in the same order with the same kernels, so at
//! `p = 1` they agree bit for bit; deviation estimators can therefore
//! return an exact zero in the degenerate case.
//!
//! Training runs plain minibatch ADAM on the nominal forward with reverse-
//! mode coefficient gradients; classification pools node scores by max and
//! reads out the argmax feature.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::filters::{chain_apply_into, GraphFilter};
use crate::graph::ShiftOperator;
use crate::perturbation::ResModel;
use crate::rng;
use crate::{Error, Result};
use rand::Rng;

/// Pointwise nonlinearity with `sigma(0) = 0` and Lipschitz constant 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    Tanh,
    Abs,
    Identity,
}

impl Nonlinearity {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => v.max(0.0),
            Nonlinearity::Tanh => v.tanh(),
            Nonlinearity::Abs => v.abs(),
            Nonlinearity::Identity => v,
        }
    }

    /// Pointwise derivative; the kink points use the subgradient 0 for
    /// ReLU and Abs so a dead unit stays dead.
    pub fn derivative(&self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Nonlinearity::Abs => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Identity => 1.0,
        }
    }

    /// Lipschitz constant `C_sigma`; 1 for every supported choice.
    pub fn lipschitz(&self) -> f64 {
        1.0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Abs => "abs",
            Nonlinearity::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Nonlinearity::Relu),
            "tanh" => Ok(Nonlinearity::Tanh),
            "abs" => Ok(Nonlinearity::Abs),
            "identity" | "linear" => Ok(Nonlinearity::Identity),
            other => Err(Error::config(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

/// One bank of filters plus its nonlinearity. `filters[f][g]` maps incoming
/// feature `g` to outgoing feature `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    filters: Vec<Vec<GraphFilter>>,
    sigma: Nonlinearity,
}

impl Layer {
    pub fn new(filters: Vec<Vec<GraphFilter>>, sigma: Nonlinearity) -> Result<Self> {
        if filters.is_empty() || filters[0].is_empty() {
            return Err(Error::input("layer needs at least one filter"));
        }
        let f_in = filters[0].len();
        if filters.iter().any(|row| row.len() != f_in) {
            return Err(Error::input("ragged filter bank"));
        }
        Ok(Layer { filters, sigma })
    }

    pub fn f_in(&self) -> usize {
        self.filters[0].len()
    }

    pub fn f_out(&self) -> usize {
        self.filters.len()
    }

    pub fn sigma(&self) -> Nonlinearity {
        self.sigma
    }

    pub fn filter(&self, f_out: usize, f_in: usize) -> &GraphFilter {
        &self.filters[f_out][f_in]
    }
}

/// How the stochastic forward assigns shift chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealizationPolicy {
    /// Every filter draws its own chain: `sum_l F_out(l) * F_in(l)` chains
    /// per forward. The default, and the setting the deviation bounds
    /// describe.
    IndependentPerFilter,
    /// One chain per layer, shared across the whole bank.
    SharedPerLayerShift,
}

/// Chain counters reported by the instrumented stochastic forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardStats {
    pub chains_drawn: usize,
}

/// Filter-bank network with one shared polynomial order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcnn {
    layers: Vec<Layer>,
    order: usize,
}

impl Gcnn {
    /// Validates layer chaining: input width 1, matching widths between
    /// consecutive layers, every filter at the shared order.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::input("network needs at least one layer"))?;
        if first.f_in() != 1 {
            return Err(Error::input(format!(
                "first layer must take a single input feature, got {}",
                first.f_in()
            )));
        }
        let order = first.filters[0][0].order();
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].f_in() != pair[0].f_out() {
                return Err(Error::input(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    l,
                    pair[0].f_out(),
                    l + 1,
                    pair[1].f_in()
                )));
            }
        }
        for layer in &layers {
            for row in &layer.filters {
                for f in row {
                    if f.order() != order {
                        return Err(Error::input(format!(
                            "mixed filter orders: {} vs shared {order}",
                            f.order()
                        )));
                    }
                }
            }
        }
        Ok(Gcnn { layers, order })
    }

    /// Network with the given widths (`widths[0]` must be 1) and uniform
    /// random coefficients, scaled per layer like `1 / sqrt(F_in * (K+1))`.
    pub fn random_uniform(
        widths: &[usize],
        order: usize,
        sigmas: &[Nonlinearity],
        seed: u64,
    ) -> Result<Gcnn> {
        if widths.len() < 2 {
            return Err(Error::input("need at least input and output widths"));
        }
        if sigmas.len() != widths.len() - 1 {
            return Err(Error::input(format!(
                "{} widths imply {} layers but {} nonlinearities given",
                widths.len(),
                widths.len() - 1,
                sigmas.len()
            )));
        }
        let mut rng = rng::chacha(seed, &[0x6e_e7]);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (f_in, f_out) = (pair[0], pair[1]);
            if f_in == 0 || f_out == 0 {
                return Err(Error::input("zero-width layer"));
            }
            let amp = 1.0 / ((f_in * (order + 1)) as f64).sqrt();
            let mut bank = Vec::with_capacity(f_out);
            for _f in 0..f_out {
                let mut row = Vec::with_capacity(f_in);
                for _g in 0..f_in {
                    let coeffs: Vec<f64> =
                        (0..=order).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * amp).collect();
                    row.push(GraphFilter::new(coeffs)?);
                }
                bank.push(row);
            }
            layers.push(Layer::new(bank, sigmas[l])?);
        }
        Gcnn::new(layers)
    }

    /// Classifier: `hidden` processing layers of width `f` under `sigma`,
    /// then a linear readout bank onto `classes` features.
    pub fn classifier(
        hidden: usize,
        f: usize,
        classes: usize,
        order: usize,
        sigma: Nonlinearity,
        seed: u64,
    ) -> Result<Gcnn> {
        if hidden == 0 {
            return Err(Error::input("classifier needs at least one processing layer"));
        }
        let mut widths = vec![1usize];
        widths.extend(std::iter::repeat(f).take(hidden));
        widths.push(classes);
        let mut sigmas = vec![sigma; hidden];
        sigmas.push(Nonlinearity::Identity);
        Gcnn::random_uniform(&widths, order, &sigmas, seed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Largest feature width appearing anywhere in the chain.
    pub fn width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.f_in().max(l.f_out()))
            .max()
            .unwrap_or(1)
    }

    /// Shared polynomial order `K`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Output feature count of the last layer.
    pub fn f_out(&self) -> usize {
        self.layers.last().expect("validated nonempty").f_out()
    }

    /// Largest nonlinearity Lipschitz constant across layers (`C_sigma`).
    pub fn sigma_lipschitz(&self) -> f64 {
        self.layers.iter().map(|l| l.sigma.lipschitz()).fold(1.0, f64::max)
    }

    /// Total filters in the network; equals the chains one stochastic
    /// forward consumes under the independent policy.
    pub fn filter_count(&self) -> usize {
        self.layers.iter().map(|l| l.f_in() * l.f_out()).sum()
    }

    pub fn set_filter(&mut self, layer: usize, f_out: usize, f_in: usize, f: GraphFilter) -> Result<()> {
        if f.order() != self.order {
            return Err(Error::input(format!(
                "filter order {} does not match shared order {}",
                f.order(),
                self.order
            )));
        }
        self.layers[layer].filters[f_out][f_in] = f;
        Ok(())
    }

    pub fn coeff(&self, layer: usize, f_out: usize, f_in: usize, k: usize) -> f64 {
        self.layers[layer].filters[f_out][f_in].coeffs()[k]
    }

    pub fn set_coeff(&mut self, layer: usize, f_out: usize, f_in: usize, k: usize, v: f64) {
        let mut coeffs = self.layers[layer].filters[f_out][f_in].coeffs().to_vec();
        coeffs[k] = v;
        self.layers[layer].filters[f_out][f_in] =
            GraphFilter::new(coeffs).expect("finite coefficient");
    }

    /// Serializes to the line-based checkpoint format.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::from("gcnn-model v1\n");
        out.push_str(&format!("layers {}\n", self.depth()));
        out.push_str(&format!("order {}\n", self.order));
        for (l, layer) in self.layers.iter().enumerate() {
            out.push_str(&format!(
                "layer {l} in {} out {} sigma {}\n",
                layer.f_in(),
                layer.f_out(),
                layer.sigma.name()
            ));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (f, row) in layer.filters.iter().enumerate() {
                for (g, filt) in row.iter().enumerate() {
                    out.push_str(&format!("filter {l} {f} {g}"));
                    for c in filt.coeffs() {
                        out.push_str(&format!(" {c}"));
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Parses the checkpoint format emitted by
    /// [`Gcnn::to_checkpoint_string`]. Round trips are exact: coefficients
    /// are written with shortest-round-trip formatting.
    pub fn from_checkpoint_string(text: &str) -> Result<Gcnn> {
        let bad = |line: &str| Error::config(format!("bad checkpoint line: {line:?}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("gcnn-model v1") {
            return Err(Error::config("checkpoint missing 'gcnn-model v1' header"));
        }
        let parse_kv = |line: &str, key: &str| -> Result<usize> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(line));
            }
            let v = parts.next().ok_or_else(|| bad(line))?;
            if parts.next().is_some() {
                return Err(bad(line));
            }
            v.parse().map_err(|_| bad(line))
        };
        let layer_line = lines.next().ok_or_else(|| Error::config("truncated checkpoint"))?;
        let n_layers = parse_kv(layer_line, "layers")?;
        let order_line = lines.next().ok_or_else(|| Error::config("truncated checkpoint"))?;
        let order = parse_kv(order_line, "order")?;

        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let line = lines.next().ok_or_else(|| Error::config("truncated checkpoint"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 8
                || parts[0] != "layer"
                || parts[2] != "in"
                || parts[4] != "out"
                || parts[6] != "sigma"
            {
                return Err(bad(line));
            }
            let idx: usize = parts[1].parse().map_err(|_| bad(line))?;
            if idx != shapes.len() {
                return Err(bad(line));
            }
            let f_in: usize = parts[3].parse().map_err(|_| bad(line))?;
            let f_out: usize = parts[5].parse().map_err(|_| bad(line))?;
            let sigma: Nonlinearity = parts[7].parse()?;
            shapes.push((f_in, f_out, sigma));
        }

        let mut banks: Vec<Vec<Vec<Option<GraphFilter>>>> = shapes
            .iter()
            .map(|&(f_in, f_out, _)| vec![vec![None; f_in]; f_out])
            .collect();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 + order + 1 || parts[0] != "filter" {
                return Err(bad(line));
            }
            let l: usize = parts[1].parse().map_err(|_| bad(line))?;
            let f: usize = parts[2].parse().map_err(|_| bad(line))?;
            let g: usize = parts[3].parse().map_err(|_| bad(line))?;
            if l >= banks.len() || f >= banks[l].len() || g >= banks[l][f].len() {
                return Err(bad(line));
            }
            let coeffs: Vec<f64> = parts[4..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| bad(line)))
                .collect::<Result<_>>()?;
            if banks[l][f][g].is_some() {
                return Err(Error::config(format!("duplicate filter {l} {f} {g}")));
            }
            banks[l][f][g] = Some(GraphFilter::new(coeffs)?);
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (l, (bank, &(_, _, sigma))) in banks.into_iter().zip(shapes.iter()).enumerate() {
            let mut rows = Vec::with_capacity(bank.len());
            for (f, row) in bank.into_iter().enumerate() {
                let mut filters = Vec::with_capacity(row.len());
                for (g, slot) in row.into_iter().enumerate() {
                    filters.push(slot.ok_or_else(|| {
                        Error::config(format!("checkpoint missing filter {l} {f} {g}"))
                    })?);
                }
                rows.push(filters);
            }
            layers.push(Layer::new(rows, sigma)?);
        }
        Gcnn::new(layers)
    }
}

/// Per-layer intermediates kept for the backward pass: the shifted copies
/// of every incoming feature and the preactivations.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

struct LayerCache {
    /// `shifted[g][k] = S^k x^g` for the layer's input features.
    shifted: Vec<Vec<Array1<f64>>>,
    /// Preactivation per outgoing feature.
    pre: Vec<Array1<f64>>,
}

impl ForwardCache {
    /// Input features of layer `l` (the network input for `l = 0`).
    pub fn layer_inputs(&self, l: usize) -> Vec<&Array1<f64>> {
        self.layers[l].shifted.iter().map(|row| &row[0]).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

fn features_to_output(feats: &[Array1<f64>], n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, feats.len()));
    for (f, col) in feats.iter().enumerate() {
        out.column_mut(f).assign(col);
    }
    out
}

/// Per-filter accumulation identical to the chain path: scale the input by
/// `h_0`, then add `h_k` times the k-th shifted copy.
fn accumulate_filter(coeffs: &[f64], shifted: &[Array1<f64>], u: &mut Array1<f64>) {
    u.assign(&shifted[0]);
    *u *= coeffs[0];
    for (k, z) in shifted.iter().enumerate().skip(1) {
        u.scaled_add(coeffs[k], z);
    }
}

/// Nominal forward pass with cached intermediates.
pub fn gcnn_forward_cached(
    net: &Gcnn,
    s: &ShiftOperator,
    x: ArrayView1<'_, f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let n = s.n();
    if x.len() != n {
        return Err(Error::input(format!(
            "signal length {} does not match {n} nodes",
            x.len()
        )));
    }
    let k = net.order();
    let mut feats: Vec<Array1<f64>> = vec![x.to_owned()];
    let mut cache = Vec::with_capacity(net.depth());
    let mut u = Array1::zeros(n);
    for layer in &net.layers {
        let mut shifted: Vec<Vec<Array1<f64>>> = Vec::with_capacity(layer.f_in());
        for g in 0..layer.f_in() {
            let mut row = Vec::with_capacity(k + 1);
            row.push(feats[g].clone());
            for step in 1..=k {
                let mut next = Array1::zeros(n);
                ndarray::linalg::general_mat_vec_mul(1.0, s.matrix(), &row[step - 1], 0.0, &mut next);
                row.push(next);
            }
            shifted.push(row);
        }
        let mut pre: Vec<Array1<f64>> = (0..layer.f_out()).map(|_| Array1::zeros(n)).collect();
        for (f, row) in layer.filters.iter().enumerate() {
            for (g, filt) in row.iter().enumerate() {
                accumulate_filter(filt.coeffs(), &shifted[g], &mut u);
                pre[f] += &u;
            }
        }
        feats = pre.iter().map(|p| p.mapv(|v| layer.sigma.apply(v))).collect();
        cache.push(LayerCache { shifted, pre });
    }
    Ok((features_to_output(&feats, n), ForwardCache { layers: cache }))
}

/// Nominal forward pass; returns the `n x F_out` output features.
pub fn gcnn_forward(net: &Gcnn, s: &ShiftOperator, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    gcnn_forward_cached(net, s, x).map(|(out, _)| out)
}

/// Stochastic forward pass: every shift application uses a fresh random
/// realization addressed by `(draw, slot, position)`, with slots assigned
/// per filter or per layer according to the policy. Returns the output and
/// the number of chains drawn.
pub fn gcnn_forward_stochastic_with_stats(
    net: &Gcnn,
    model: &ResModel,
    policy: RealizationPolicy,
    x: ArrayView1<'_, f64>,
    draw: u64,
) -> Result<(Array2<f64>, ForwardStats)> {
    let n = model.n();
    if x.len() != n {
        return Err(Error::input(format!(
            "signal length {} does not match {n} nodes",
            x.len()
        )));
    }
    let k = net.order();
    let mut mats: Vec<Array2<f64>> = (0..k).map(|_| Array2::zeros((n, n))).collect();
    let mut z = Array1::zeros(n);
    let mut z_next = Array1::zeros(n);
    let mut u = Array1::zeros(n);
    let mut feats: Vec<Array1<f64>> = vec![x.to_owned()];
    let mut slot: u64 = 0;
    let mut chains = 0usize;

    let fill_chain = |slot: u64, mats: &mut Vec<Array2<f64>>| {
        for (idx, m) in mats.iter_mut().enumerate() {
            model.fill_realization(draw, slot, (idx + 1) as u64, m);
        }
    };

    for layer in &net.layers {
        let mut pre: Vec<Array1<f64>> = (0..layer.f_out()).map(|_| Array1::zeros(n)).collect();
        match policy {
            RealizationPolicy::SharedPerLayerShift => {
                fill_chain(slot, &mut mats);
                chains += 1;
                let views: Vec<ArrayView2<'_, f64>> = mats.iter().map(|m| m.view()).collect();
                for (f, row) in layer.filters.iter().enumerate() {
                    for (g, filt) in row.iter().enumerate() {
                        chain_apply_into(
                            filt.coeffs(),
                            &views,
                            feats[g].view(),
                            &mut z,
                            &mut z_next,
                            &mut u,
                        );
                        pre[f] += &u;
                    }
                }
                slot += 1;
            }
            RealizationPolicy::IndependentPerFilter => {
                for (f, row) in layer.filters.iter().enumerate() {
                    for (g, filt) in row.iter().enumerate() {
                        fill_chain(slot, &mut mats);
                        chains += 1;
                        let views: Vec<ArrayView2<'_, f64>> =
                            mats.iter().map(|m| m.view()).collect();
                        chain_apply_into(
                            filt.coeffs(),
                            &views,
                            feats[g].view(),
                            &mut z,
                            &mut z_next,
                            &mut u,
                        );
                        pre[f] += &u;
                        slot += 1;
                    }
                }
            }
        }
        feats = pre.iter().map(|p| p.mapv(|v| layer.sigma.apply(v))).collect();
    }
    Ok((features_to_output(&feats, n), ForwardStats { chains_drawn: chains }))
}

/// Stochastic forward pass without instrumentation.
pub fn gcnn_forward_stochastic(
    net: &Gcnn,
    model: &ResModel,
    policy: RealizationPolicy,
    x: ArrayView1<'_, f64>,
    draw: u64,
) -> Result<Array2<f64>> {
    gcnn_forward_stochastic_with_stats(net, model, policy, x, draw).map(|(out, _)| out)
}

/// Coefficient gradients, one `(F_out, F_in, K + 1)` tensor per layer.
pub type Gradients = Vec<Array3<f64>>;

/// Reverse-mode gradients of a scalar loss with respect to every filter
/// coefficient, given the loss gradient at the output (`n x F_out`).
pub fn gcnn_backward(
    net: &Gcnn,
    s: &ShiftOperator,
    cache: &ForwardCache,
    grad_output: &Array2<f64>,
) -> Result<Gradients> {
    let n = s.n();
    let k = net.order();
    if grad_output.dim() != (n, net.f_out()) {
        return Err(Error::input(format!(
            "output gradient shape {:?} does not match ({n}, {})",
            grad_output.dim(),
            net.f_out()
        )));
    }
    let mut grads: Gradients = net
        .layers
        .iter()
        .map(|l| Array3::zeros((l.f_out(), l.f_in(), k + 1)))
        .collect();
    let mut grad_cols: Vec<Array1<f64>> = (0..net.f_out())
        .map(|f| grad_output.column(f).to_owned())
        .collect();

    for (l, layer) in net.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        // dU = dX * sigma'(pre)
        let du: Vec<Array1<f64>> = grad_cols
            .iter()
            .zip(lc.pre.iter())
            .map(|(gc, pre)| {
                let mut d = gc.clone();
                d.zip_mut_with(pre, |dv, &pv| *dv *= layer.sigma.derivative(pv));
                d
            })
            .collect();
        for (f, row) in layer.filters.iter().enumerate() {
            for (g, _) in row.iter().enumerate() {
                for kk in 0..=k {
                    grads[l][[f, g, kk]] = du[f].dot(&lc.shifted[g][kk]);
                }
            }
        }
        if l > 0 {
            // Propagate through the bank: dX^g = sum_f H^{fg}(S) dU^f
            // (S symmetric, so the adjoint filter has the same coefficients).
            let f_in = layer.f_in();
            let mut next: Vec<Array1<f64>> = (0..f_in).map(|_| Array1::zeros(n)).collect();
            for (f, row) in layer.filters.iter().enumerate() {
                let mut shifted_d: Vec<Array1<f64>> = Vec::with_capacity(k + 1);
                shifted_d.push(du[f].clone());
                for step in 1..=k {
                    let mut nxt = Array1::zeros(n);
                    ndarray::linalg::general_mat_vec_mul(
                        1.0,
                        s.matrix(),
                        &shifted_d[step - 1],
                        0.0,
                        &mut nxt,
                    );
                    shifted_d.push(nxt);
                }
                for (g, filt) in row.iter().enumerate() {
                    for (kk, c) in filt.coeffs().iter().enumerate() {
                        next[g].scaled_add(*c, &shifted_d[kk]);
                    }
                }
            }
            grad_cols = next;
        }
    }
    Ok(grads)
}

/// Training target: a class for cross-entropy, a node vector for squared
/// error (single-output networks only).
#[derive(Debug, Clone)]
pub enum Target {
    Class(usize),
    Vector(Array1<f64>),
}

/// One training pair.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x: Array1<f64>,
    pub target: Target,
}

/// Loss applied at the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Max-pool node scores per feature, then softmax cross-entropy over
    /// features.
    SoftmaxCrossEntropy,
    /// Squared error against a node vector; requires a single output
    /// feature.
    SquaredError,
}

/// Max over nodes for each output feature.
pub fn pooled_scores(output: &Array2<f64>) -> Vec<f64> {
    (0..output.ncols())
        .map(|c| output.column(c).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Argmax class after max-pooling the node dimension; ties resolve to the
/// lowest class index.
pub fn readout_classify(output: &Array2<f64>) -> usize {
    let scores = pooled_scores(output);
    let mut best = 0usize;
    for (c, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = c;
        }
    }
    best
}

/// Loss value and its gradient with respect to the output features.
pub fn output_loss(output: &Array2<f64>, target: &Target, loss: Loss) -> Result<(f64, Array2<f64>)> {
    let (n, f_out) = output.dim();
    match (loss, target) {
        (Loss::SoftmaxCrossEntropy, Target::Class(label)) => {
            if *label >= f_out {
                return Err(Error::input(format!(
                    "label {label} outside {f_out} output features"
                )));
            }
            // Max pool with the argmax node recorded for gradient routing;
            // ties route to the lowest node index.
            let mut pooled = vec![f64::NEG_INFINITY; f_out];
            let mut arg = vec![0usize; f_out];
            for c in 0..f_out {
                for r in 0..n {
                    let v = output[[r, c]];
                    if v > pooled[c] {
                        pooled[c] = v;
                        arg[c] = r;
                    }
                }
            }
            let m = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = pooled.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            let loss_v = -(exps[*label] / z).ln();
            let mut grad = Array2::zeros((n, f_out));
            for c in 0..f_out {
                let p = exps[c] / z;
                let indicator = if c == *label { 1.0 } else { 0.0 };
                grad[[arg[c], c]] = p - indicator;
            }
            Ok((loss_v, grad))
        }
        (Loss::SquaredError, Target::Vector(y)) => {
            if f_out != 1 {
                return Err(Error::input(format!(
                    "squared error needs a single output feature, got {f_out}"
                )));
            }
            if y.len() != n {
                return Err(Error::input("target length does not match node count"));
            }
            let col = output.column(0);
            let mut grad = Array2::zeros((n, 1));
            let mut l = 0.0;
            for r in 0..n {
                let d = col[r] - y[r];
                l += d * d;
                grad[[r, 0]] = 2.0 * d;
            }
            Ok((l, grad))
        }
        _ => Err(Error::input("loss and target kinds do not match")),
    }
}

/// ADAM hyperparameters and schedule.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: Loss::SoftmaxCrossEntropy,
            seed: 0,
        }
    }
}

/// Per-epoch trace row. `val_loss` / `val_acc` are NaN when no validation
/// split was given (and `val_acc` also under squared error, where accuracy
/// has no meaning).
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

fn sample_loss_grads(
    net: &Gcnn,
    s: &ShiftOperator,
    sample: &TrainSample,
    loss: Loss,
) -> Result<(f64, Gradients)> {
    let (out, cache) = gcnn_forward_cached(net, s, sample.x.view())?;
    let (l, grad_out) = output_loss(&out, &sample.target, loss)?;
    let grads = gcnn_backward(net, s, &cache, &grad_out)?;
    Ok((l, grads))
}

/// Mean loss (and accuracy for classification) over a split.
pub fn evaluate(
    net: &Gcnn,
    s: &ShiftOperator,
    data: &[TrainSample],
    loss: Loss,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let rows: Vec<(f64, Option<bool>)> = data
        .par_iter()
        .map(|sample| -> Result<(f64, Option<bool>)> {
            let out = gcnn_forward(net, s, sample.x.view())?;
            let (l, _) = output_loss(&out, &sample.target, loss)?;
            let correct = match (&sample.target, loss) {
                (Target::Class(c), Loss::SoftmaxCrossEntropy) => {
                    Some(readout_classify(&out) == *c)
                }
                _ => None,
            };
            Ok((l, correct))
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mean_loss = crate::numeric::pairwise_sum(&losses) / losses.len() as f64;
    let acc = if rows.iter().all(|r| r.1.is_some()) {
        let correct = rows.iter().filter(|r| r.1 == Some(true)).count();
        correct as f64 / rows.len() as f64
    } else {
        f64::NAN
    };
    Ok((mean_loss, acc))
}

/// Minibatch ADAM on the nominal forward. Batches shuffle per epoch from
/// the training seed; per-sample gradients are computed in parallel and
/// reduced in sample order, so training is deterministic for a fixed
/// configuration. A non-finite batch loss aborts with
/// [`Error::TrainingDiverged`].
pub fn train_adam(
    net: Gcnn,
    s: &ShiftOperator,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(Gcnn, Vec<EpochStats>)> {
    if train.is_empty() {
        return Err(Error::input("empty training split"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::config(format!("bad learning rate {}", cfg.learning_rate)));
    }
    let mut net = net;
    let mut m: Gradients = net
        .layers
        .iter()
        .map(|l| Array3::zeros((l.f_out(), l.f_in(), net.order + 1)))
        .collect();
    let mut v = m.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = rng::chacha(cfg.seed, &[0xada, epoch as u64]);
        // Fisher-Yates with the epoch-keyed stream.
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut batch_losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| sample_loss_grads(&net, s, &train[i], cfg.loss))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut mean_grads: Gradients = net
                .layers
                .iter()
                .map(|l| Array3::zeros((l.f_out(), l.f_in(), net.order + 1)))
                .collect();
            let mut batch_loss = 0.0;
            for (l_val, grads) in &results {
                batch_loss += l_val * scale;
                for (acc, g) in mean_grads.iter_mut().zip(grads.iter()) {
                    acc.scaled_add(scale, g);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    detail: format!("batch loss {batch_loss}"),
                });
            }
            batch_losses.push(batch_loss);

            step += 1;
            let t = step as f64;
            let bc1 = 1.0 - cfg.beta1.powf(t);
            let bc2 = 1.0 - cfg.beta2.powf(t);
            for (l, layer) in net.layers.iter_mut().enumerate() {
                for (f, row) in layer.filters.iter_mut().enumerate() {
                    for (g, filt) in row.iter_mut().enumerate() {
                        let mut coeffs = filt.coeffs().to_vec();
                        for (kk, c) in coeffs.iter_mut().enumerate() {
                            let grad = mean_grads[l][[f, g, kk]];
                            let mm = &mut m[l][[f, g, kk]];
                            let vv = &mut v[l][[f, g, kk]];
                            *mm = cfg.beta1 * *mm + (1.0 - cfg.beta1) * grad;
                            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * grad * grad;
                            let m_hat = *mm / bc1;
                            let v_hat = *vv / bc2;
                            *c -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                        }
                        *filt = GraphFilter::new(coeffs)
                            .map_err(|e| Error::TrainingDiverged {
                                epoch,
                                detail: e.to_string(),
                            })?;
                    }
                }
            }
        }

        let train_loss = crate::numeric::pairwise_sum(&batch_losses) / batch_losses.len() as f64;
        let (val_loss, val_acc) = evaluate(&net, s, val, cfg.loss)?;
        trace.push(EpochStats { epoch, train_loss, val_loss, val_acc });
    }
    Ok((net, trace))
}
