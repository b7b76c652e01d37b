//! Test-only oracles, independent of the code paths they check.
#![allow(dead_code)]

use phase_core::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so vanishing gradients do not blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between reverse-mode gradients and central differences.
///
/// `f` builds a scalar from the bound inputs; it is re-run on fresh graphs with
/// every input entry nudged by ±`FD_STEP`. `max_entries` caps the entries
/// checked per input (chosen evenly) to bound runtime on large tensors.
pub fn max_grad_error<F>(inputs: &[Tensor<f64>], max_entries: usize, f: F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&g, &vars);
    let grads = g.backward(loss).expect("scalar loss");

    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let g = Graph::new();
        let vars: Vec<_> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vars).item()
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).expect("leaf gradient").to_vec();
        let n = input.numel();
        let stride = (n / max_entries.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalar probe `Σ w ⊙ x` with fixed random weights, so every output entry matters.
pub fn probe<'g>(g: &'g Graph<f64>, x: Var<'g, f64>, seed: u64) -> Var<'g, f64> {
    let mut r = rng(seed);
    let w = random_tensor(&mut r, &x.shape(), 1.0);
    x.mul(g.constant(w)).sum()
}

/// Plain two-pass mean squared error.
pub fn mse_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

/// Plain two-pass coefficient of determination.
pub fn r2_oracle(pred: &[f64], truth: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..truth.len() {
        ss_res += (truth[i] - pred[i]).powi(2);
        ss_tot += (truth[i] - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

/// Step-by-step LSTM built from primitive ops; the fused op must agree.
/// `xw` is `[steps·B × 4H]`, `wh` is `[H × 4H]`; returns the last hidden state.
pub fn lstm_unrolled<'g>(g: &'g Graph<f64>, xw: Var<'g, f64>, wh: Var<'g, f64>, steps: usize) -> Var<'g, f64> {
    let hidden = wh.shape()[0];
    let batch = xw.shape()[0] / steps;
    let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
    let mut c = g.constant(Tensor::zeros(&[batch, hidden]));
    for t in 0..steps {
        let a = xw.slice_axis0(t * batch, batch).unwrap().add(h.matmul(wh));
        let i = a.slice_last(0, hidden).unwrap().sigmoid();
        let f = a.slice_last(hidden, hidden).unwrap().sigmoid();
        let cand = a.slice_last(2 * hidden, hidden).unwrap().tanh();
        let o = a.slice_last(3 * hidden, hidden).unwrap().sigmoid();
        c = f.mul(c).add(i.mul(cand));
        h = o.mul(c.tanh());
    }
    h
}

/// A few dozen land cells with a one-year input window.
pub fn tiny_world(seed: u64) -> phase_core::sim::World {
    let grid = phase_core::sim::GridSpec::global(seed, 6, 12, 1.0);
    phase_core::sim::generate_world(seed, &grid, 2, 3).unwrap()
}

pub fn tiny_dataset(seed: u64) -> phase_core::pipeline::Dataset {
    phase_core::workflow::build_dataset(&tiny_world(seed), seed, 1, 16).unwrap()
}

/// Very small network for gradient checks and smoke runs.
pub fn tiny_config() -> phase_core::model::Config {
    let mut cfg = phase_core::model::Config::default();
    cfg.model = phase_core::model::ModelConfig {
        d_model: 4,
        lstm_hidden: 3,
        conv_channels: [2, 3],
        fc_hidden: 4,
        heads: 2,
        layers: 1,
        ff_mult: 2,
        head_hidden: 4,
        drop_static: Vec::new(),
    };
    cfg.train.max_epochs = 3;
    cfg.train.batch_size = 8;
    cfg
}

/// Every differentiable graph op, by method name.
pub const OPS: [&str; 26] = [
    "add", "sub", "mul", "square", "softplus", "sigmoid", "tanh", "relu", "scale", "add_scalar", "matmul",
    "batch_matmul", "add_row", "sum", "mean", "mean_axis", "softmax", "conv1d", "layer_norm", "reshape", "permute",
    "transpose", "slice_axis0", "slice_last", "lstm", "concat_last",
];

/// Finite-difference gradient error of one randomized case of `OPS[op]`.
pub fn op_grad_error(op: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut t = |shape: &[usize]| random_tensor(&mut r, shape, 1.5);
    let (x, y) = (t(&[3, 4]), t(&[3, 4]));
    let all = usize::MAX;
    match OPS[op] {
        "add" => max_grad_error(&[x, y], all, |g, v| probe(g, v[0].add(v[1]), seed)),
        "sub" => max_grad_error(&[x, y], all, |g, v| probe(g, v[0].sub(v[1]), seed)),
        "mul" => max_grad_error(&[x, y], all, |g, v| probe(g, v[0].mul(v[1]), seed)),
        "square" => max_grad_error(&[x], all, |g, v| probe(g, v[0].square(), seed)),
        "softplus" => max_grad_error(&[x], all, |g, v| probe(g, v[0].softplus(), seed)),
        "sigmoid" => max_grad_error(&[x], all, |g, v| probe(g, v[0].sigmoid(), seed)),
        "tanh" => max_grad_error(&[x], all, |g, v| probe(g, v[0].tanh(), seed)),
        "relu" => max_grad_error(&[x], all, |g, v| probe(g, v[0].relu(), seed)),
        "scale" => max_grad_error(&[x], all, |g, v| probe(g, v[0].scale(-0.7), seed)),
        "add_scalar" => max_grad_error(&[x], all, |g, v| probe(g, v[0].add_scalar(2.5).square(), seed)),
        "matmul" => {
            let w = t(&[4, 2]);
            max_grad_error(&[x, w], all, |g, v| probe(g, v[0].matmul(v[1]), seed))
        }
        "batch_matmul" => {
            let (a, b) = (t(&[2, 3, 4]), t(&[2, 4, 2]));
            max_grad_error(&[a, b], all, |g, v| probe(g, v[0].batch_matmul(v[1]).unwrap(), seed))
        }
        "add_row" => {
            let b = t(&[4]);
            max_grad_error(&[x, b], all, |g, v| probe(g, v[0].add_row(v[1]).unwrap().square(), seed))
        }
        "sum" => max_grad_error(&[x], all, |_, v| v[0].square().sum()),
        "mean" => max_grad_error(&[x], all, |_, v| v[0].tanh().mean()),
        "mean_axis" => {
            let a = t(&[2, 3, 4]);
            max_grad_error(&[a], all, |g, v| probe(g, v[0].mean_axis(1).unwrap(), seed))
        }
        "softmax" => max_grad_error(&[x], all, |g, v| probe(g, v[0].softmax(), seed)),
        "conv1d" => {
            let (a, k) = (t(&[2, 6, 3]), t(&[3, 3, 2]));
            max_grad_error(&[a, k], all, |g, v| probe(g, v[0].conv1d(v[1], 1, 1).unwrap(), seed))
        }
        "layer_norm" => {
            let (gain, bias) = (t(&[4]), t(&[4]));
            max_grad_error(&[x, gain, bias], all, |g, v| probe(g, v[0].layer_norm(v[1], v[2], 1e-5).unwrap(), seed))
        }
        "reshape" => max_grad_error(&[x], all, |g, v| probe(g, v[0].reshape(&[2, 6]).unwrap().softmax(), seed)),
        "permute" => {
            let a = t(&[2, 3, 4]);
            max_grad_error(&[a], all, |g, v| probe(g, v[0].permute(&[2, 0, 1]).unwrap().tanh(), seed))
        }
        "transpose" => max_grad_error(&[x], all, |g, v| probe(g, v[0].transpose().unwrap().softmax(), seed)),
        "slice_axis0" => max_grad_error(&[x], all, |g, v| probe(g, v[0].slice_axis0(1, 2).unwrap().square(), seed)),
        "slice_last" => max_grad_error(&[x], all, |g, v| probe(g, v[0].slice_last(1, 2).unwrap().square(), seed)),
        "lstm" => {
            let (steps, hidden) = (2 + (seed % 5) as usize, 1 + (seed % 3) as usize);
            let (xw, wh) = (t(&[steps * 2, 4 * hidden]), t(&[hidden, 4 * hidden]));
            max_grad_error(&[xw, wh], all, |g, v| probe(g, v[0].lstm(v[1], steps).unwrap(), seed))
        }
        "concat_last" => {
            let z = t(&[3, 2]);
            max_grad_error(&[x, z], all, |g, v| probe(g, Var::concat_last(&[v[0], v[1]]).unwrap().softmax(), seed))
        }
        other => unreachable!("no case for {other}"),
    }
}

/// A few prepared training samples of the tiny dataset and an architecture
/// for `variant` sized for them.
pub fn tiny_arch(variant: phase_core::model::Variant) -> (phase_core::model::Architecture, Vec<phase_core::model::Prepared>) {
    use phase_core::model::{prepare, Architecture, FeatureSelection, InputDims};
    let ds = tiny_dataset(4);
    let sel = FeatureSelection::new(ds.n_pft(), &[]).unwrap();
    let dims = InputDims {
        n_months: ds.manifest.n_months,
        n_static: sel.static_keep.len(),
        n_pft: ds.n_pft(),
    };
    let prepared = ds.train().iter().take(3).map(|r| prepare(r, &ds.manifest.norm, &sel)).collect();
    (Architecture::new(tiny_config().model, variant, dims), prepared)
}

/// Worst relative error of the composite training loss gradient (all task
/// weights and λ set to 1) over up to `per_param` entries of every parameter.
/// Parameters are jittered off zero so no ReLU sits on its kink.
pub fn model_loss_grad_error(variant: phase_core::model::Variant, seed: u64, per_param: usize) -> f64 {
    use phase_core::model::{InputBatch, Params, Prepared, Variant};
    use phase_core::train::loss::total_loss;
    let (arch, prepared) = tiny_arch(variant);
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let batch = InputBatch::<f64>::new(&refs, &arch.dims).unwrap();
    let mut params = Params::<f64>::init(&arch.specs(), seed);
    let mut r = rng(seed);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    let pinn = variant == Variant::BaselinePinn;
    fn build<'g>(
        arch: &phase_core::model::Architecture,
        batch: &InputBatch<f64>,
        pinn: bool,
        g: &'g Graph<f64>,
        p: &Params<f64>,
        trainable: bool,
    ) -> (phase_core::model::Bound<'g, f64>, Var<'g, f64>) {
        let b = p.bind(g, trainable);
        let fw = arch.forward(&b, g, batch).unwrap();
        let targets: Vec<_> = batch.targets.iter().map(|t| g.constant(t.clone())).collect();
        let init: Vec<_> = batch.initial.iter().map(|t| g.constant(t.clone())).collect();
        let loss = total_loss(&fw, &targets, pinn.then_some(init.as_slice()), &[1.0; 9], 1.0).unwrap().total;
        (b, loss)
    }
    let g = Graph::new();
    let (b, loss) = build(&arch, &batch, pinn, &g, &params, true);
    let grads = g.backward(loss).unwrap();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let analytic: Vec<Vec<f64>> = names.iter().map(|n| grads.get(b.p(n)).unwrap().to_vec()).collect();
    let loss_of = |p: &Params<f64>| -> f64 {
        let g = Graph::new();
        build(&arch, &batch, pinn, &g, p, false).1.item()
    };
    let mut worst = 0.0f64;
    for (name, an) in names.iter().zip(&analytic) {
        let n = an.len();
        for j in (0..n).step_by((n / per_param).max(1)) {
            let orig = params.get(name).unwrap().data()[j];
            params.get_mut(name).unwrap().data_mut()[j] = orig + FD_STEP;
            let up = loss_of(&params);
            params.get_mut(name).unwrap().data_mut()[j] = orig - FD_STEP;
            let down = loss_of(&params);
            params.get_mut(name).unwrap().data_mut()[j] = orig;
            worst = worst.max(rel_err(an[j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Linear-scan nearest neighbour; ties go to the lowest index.
pub fn brute_nearest(points: &[(f64, f64)], q: (f64, f64)) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Mean with a second compensating pass.
pub fn two_pass_mean(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    m + xs.iter().map(|x| x - m).sum::<f64>() / n
}
