//! Random networks and batches plus the numerical checks shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use lalr::{
    learning_rate, lipschitz_constant, penultimate_max, ActivationKind, HiddenLayer, LipschitzInputs, LossSpec, LrPolicy,
    Mode, Network, NetworkSpec,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

const HIDDEN: [ActivationKind; 5] = [
    ActivationKind::Relu,
    ActivationKind::LeakyRelu { slope: 0.3 },
    ActivationKind::SoftSign,
    ActivationKind::SoftPlus,
    ActivationKind::Linear,
];

/// Output activations whose derivative never exceeds one.
const OUTPUT: [ActivationKind; 4] =
    [ActivationKind::Linear, ActivationKind::SoftSign, ActivationKind::SoftPlus, ActivationKind::LeakyRelu { slope: 0.3 }];

/// Up to three hidden layers of width 1–6 with randomized biases.
pub fn random_net(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Network {
    let mut spec = NetworkSpec::new(input, output, OUTPUT[rng.random_range(0..OUTPUT.len())]);
    for _ in 0..rng.random_range(0..=3) {
        let act = HIDDEN[rng.random_range(0..HIDDEN.len())];
        spec = spec.hidden(HiddenLayer::new(rng.random_range(1..=6), act));
    }
    let mut net = Network::init(spec, rng.random()).unwrap();
    for l in net.layers_mut() {
        l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    net
}

pub struct Case {
    pub net: Network,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let input = rng.random_range(1..=5);
    let output = rng.random_range(1..=3);
    let rows = rng.random_range(1..=12);
    let net = random_net(rng, input, output);
    let x = matrix(rng, rows, input, 2.0);
    let y = matrix(rng, rows, output, 2.0);
    Case { net, x, y }
}

/// Last-layer weight gradients: the largest single-row contribution, the batch
/// total, and the Lipschitz constant for the same batch.
pub struct LastLayer {
    pub per_row_max: f64,
    pub batch_max: f64,
    pub lipschitz: f64,
}

pub fn last_layer_gradients(case: &Case, loss: LossSpec) -> LastLayer {
    let trace = case.net.forward(case.x.view(), Mode::Eval).unwrap();
    let d_out = loss.gradient(trace.output().view(), case.y.view()).unwrap();
    let batch_max = case.net.backward(&trace, d_out.view()).unwrap().last_layer_max_abs();
    let mut per_row_max = 0.0_f64;
    for i in 0..case.x.nrows() {
        let mut only_i = Array2::zeros(d_out.dim());
        only_i.row_mut(i).assign(&d_out.row(i));
        let g = case.net.backward(&trace, only_i.view()).unwrap();
        per_row_max = per_row_max.max(g.last_layer_max_abs());
    }
    let kz = penultimate_max(&case.net, case.x.view()).unwrap();
    let lipschitz = lipschitz_constant(&LipschitzInputs {
        kz,
        batch_size: case.x.nrows(),
        labels: case.y.ncols(),
        loss,
    })
    .unwrap();
    LastLayer { per_row_max, batch_max, lipschitz }
}

fn params(net: &Network) -> Vec<f64> {
    net.layers().iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect()
}

fn set_param(net: &mut Network, mut k: usize, v: f64) {
    for l in net.layers_mut() {
        let nw = l.weights.len();
        if k < nw {
            *l.weights.iter_mut().nth(k).unwrap() = v;
            return;
        }
        k -= nw;
        let nb = l.bias.len();
        if k < nb {
            l.bias[k] = v;
            return;
        }
        k -= nb;
    }
    panic!("parameter index out of range");
}

/// Distance from the nearest kink: residuals for MAE/check, pre-activations
/// of piecewise-linear units.
pub fn kink_distance(case: &Case, loss: LossSpec) -> f64 {
    let trace = case.net.forward(case.x.view(), Mode::Eval).unwrap();
    let mut d = f64::INFINITY;
    if !matches!(loss, LossSpec::Mse) {
        for (p, t) in trace.output().iter().zip(case.y.iter()) {
            d = d.min((t - p).abs());
        }
    }
    let acts = case
        .net
        .spec()
        .hidden
        .iter()
        .map(|h| h.activation)
        .chain([case.net.spec().output_activation]);
    for (z, act) in trace.pre_activations.iter().zip(acts) {
        if matches!(act, ActivationKind::Relu | ActivationKind::LeakyRelu { .. }) {
            d = d.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
    }
    d
}

/// Norm-wise relative error between the analytic gradient and central differences.
pub fn finite_difference_error(case: &Case, loss: LossSpec) -> f64 {
    let h = 1e-6;
    let trace = case.net.forward(case.x.view(), Mode::Eval).unwrap();
    let d_out = loss.gradient(trace.output().view(), case.y.view()).unwrap();
    let grads = case.net.backward(&trace, d_out.view()).unwrap();
    let analytic: Vec<f64> = grads.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect();
    let base = params(&case.net);
    let value = |net: &Network| loss.value(net.predict(case.x.view()).unwrap().view(), case.y.view()).unwrap();
    let mut net = case.net.clone();
    let numeric: Vec<f64> = (0..base.len())
        .map(|k| {
            set_param(&mut net, k, base[k] + h);
            let up = value(&net);
            set_param(&mut net, k, base[k] - h);
            let down = value(&net);
            set_param(&mut net, k, base[k]);
            (up - down) / (2.0 * h)
        })
        .collect();
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// One LALR step from `net` on `(x, y)`; bounds wide enough never to clamp.
pub fn lalr_step(net: &Network, x: &Array2<f64>, y: &Array2<f64>, loss: LossSpec) -> Network {
    let policy = LrPolicy::Lalr { eta_max: 1e300, eta_min: 1e-300 };
    let kz = penultimate_max(net, x.view()).unwrap();
    let l = lipschitz_constant(&LipschitzInputs { kz, batch_size: x.nrows(), labels: y.ncols(), loss }).unwrap();
    let step = learning_rate(&policy, l);
    let trace = net.forward(x.view(), Mode::Eval).unwrap();
    let d_out = loss.gradient(trace.output().view(), y.view()).unwrap();
    let grads = net.backward(&trace, d_out.view()).unwrap();
    let mut next = net.clone();
    next.apply_update(&grads, step.eta).unwrap();
    next
}

pub fn max_param_diff(a: &Network, b: &Network) -> f64 {
    params(a).iter().zip(params(b)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}
