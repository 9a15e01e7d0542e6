//! Finite-difference checks per differentiable operation, one seed at a time.

use kdlab::distill::{loss_conditional, loss_hard, loss_unlabeled};
use kdlab::model::{build_simple10, forward_on_tape, init_parameters, LayerParams, Parameters, WidthScale};
use kdlab::{Tape, Tensor, Var};
use rand::Rng;

use super::{distributions, gradcheck, rng, uniform};

pub type Check = fn(u64) -> Result<(), String>;

/// Every operation check, by name.
pub const OPS: [(&str, Check); 9] = [
    ("conv2d", conv2d),
    ("matmul+bias", matmul_and_bias),
    ("conv bias", conv_bias),
    ("relu", relu),
    ("maxpool/flatten/reshape", max_pool_reshape_flatten),
    ("softmax/log/scale/mean", softmax_log_and_reductions),
    ("softmax cross-entropy", softmax_cross_entropy),
    ("loss_unlabeled", unlabeled_loss),
    ("loss_conditional", conditional_loss),
];

/// Reduces any tensor to a scalar with fixed random weights so every
/// output element carries a distinct upstream gradient.
fn probe(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let w = uniform(&mut rng(seed ^ 0xabc), tape.value(x).shape(), -1.0, 1.0);
    let y = tape.mul_const(x, w).unwrap();
    tape.sum(y)
}

fn dim(r: &mut impl Rng) -> usize {
    r.gen_range(1..=4)
}

pub fn conv2d(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, c, co) = (dim(&mut r), dim(&mut r), dim(&mut r));
    let (h, w) = (r.gen_range(2..=4), r.gen_range(2..=4));
    let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
    let k = r.gen_range(1..=2.min(h).min(w));
    let x = uniform(&mut r, &[n, c, h, w], -1.0, 1.0);
    let kern = uniform(&mut r, &[co, c, k, k], -1.0, 1.0);
    gradcheck(&[x, kern], |t, v| {
        let y = t.conv2d(v[0], v[1], stride, pad).unwrap();
        probe(t, y, seed)
    })
}

pub fn matmul_and_bias(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (m, k, n) = (dim(&mut r), dim(&mut r), dim(&mut r));
    let a = uniform(&mut r, &[m, k], -1.0, 1.0);
    let b = uniform(&mut r, &[k, n], -1.0, 1.0);
    let bias = uniform(&mut r, &[n], -1.0, 1.0);
    gradcheck(&[a, b, bias], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        let y = t.add_bias(y, v[2]).unwrap();
        probe(t, y, seed)
    })
}

pub fn conv_bias(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let shape = [dim(&mut r), 3, dim(&mut r), dim(&mut r)];
    let x = uniform(&mut r, &shape, -1.0, 1.0);
    let bias = uniform(&mut r, &[3], -1.0, 1.0);
    gradcheck(&[x, bias], |t, v| {
        let y = t.add_bias(v[0], v[1]).unwrap();
        probe(t, y, seed)
    })
}

pub fn relu(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let shape = [dim(&mut r), dim(&mut r)];
    let x = uniform(&mut r, &shape, -1.0, 1.0);
    gradcheck(&[x], |t, v| {
        let y = t.relu(v[0]);
        probe(t, y, seed)
    })
}

pub fn max_pool_reshape_flatten(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, c) = (dim(&mut r), dim(&mut r));
    let (h, w) = (2 * r.gen_range(1..=2), 2 * r.gen_range(1..=2));
    let x = uniform(&mut r, &[n, c, h, w], -1.0, 1.0);
    gradcheck(&[x], |t, v| {
        let y = t.max_pool2(v[0]).unwrap();
        let y = t.flatten(y).unwrap();
        let y = t.reshape(y, [n, c * h * w / 4]).unwrap();
        probe(t, y, seed)
    })
}

pub fn softmax_log_and_reductions(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let shape = [dim(&mut r), dim(&mut r) + 1];
    let x = uniform(&mut r, &shape, -1.0, 1.0);
    gradcheck(&[x], |t, v| {
        let p = t.softmax(v[0]).unwrap();
        let l = t.log_clamped(p, 1e-12);
        let y = t.scale(l, 0.7);
        let w = uniform(&mut rng(seed), t.value(y).shape(), -1.0, 1.0);
        let y = t.mul_const(y, w).unwrap();
        t.mean(y)
    })
}

/// Finite differences plus the closed form `p - onehot`.
pub fn softmax_cross_entropy(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let classes = r.gen_range(2..=5);
    let z = uniform(&mut r, &[1, classes], -1.0, 1.0);
    let y = r.gen_range(0..classes);
    gradcheck(std::slice::from_ref(&z), |t, v| {
        let p = t.softmax(v[0]).unwrap();
        loss_hard(t, p, &[y]).unwrap()
    })?;
    let mut tape = Tape::new();
    let zv = tape.param(z);
    let p = tape.softmax(zv).unwrap();
    let loss = loss_hard(&mut tape, p, &[y]).unwrap();
    let g = tape.backward(loss).unwrap().get(zv).unwrap().clone();
    let probs = tape.value(p).clone();
    for j in 0..classes {
        let want = probs.data()[j] - f64::from(u8::from(j == y));
        if (g.data()[j] - want).abs() >= 1e-12 {
            return Err(format!("class {j}: {} vs {want}", g.data()[j]));
        }
    }
    Ok(())
}

fn loss_instance(seed: u64) -> (Tensor, Tensor, Vec<usize>) {
    let mut r = rng(seed);
    let (n, c) = (dim(&mut r), r.gen_range(2..=5));
    let logits = uniform(&mut r, &[n, c], -1.0, 1.0);
    let teacher = Tensor::from_rows(&distributions(&mut r, n, c, false)).unwrap();
    let labels = (0..n).map(|_| r.gen_range(0..c)).collect();
    (logits, teacher, labels)
}

pub fn unlabeled_loss(seed: u64) -> Result<(), String> {
    let (logits, teacher, _) = loss_instance(seed);
    gradcheck(&[logits], |t, v| {
        let p = t.softmax(v[0]).unwrap();
        loss_unlabeled(t, &teacher, p).unwrap()
    })
}

pub fn conditional_loss(seed: u64) -> Result<(), String> {
    let (logits, teacher, labels) = loss_instance(seed);
    gradcheck(&[logits], |t, v| {
        let p = t.softmax(v[0]).unwrap();
        loss_conditional(t, &teacher, p, &labels).unwrap()
    })
}

/// Spot-checks a few entries of every weight and bias of a small network.
pub fn whole_network(seed: u64) -> Result<(), String> {
    const H: f64 = 1e-5;
    let spec = build_simple10([1, 32, 32], 3, WidthScale::new(1, 10).unwrap()).unwrap();
    let params = init_parameters(&spec, seed);
    let x = uniform(&mut rng(seed), &[2, 1, 32, 32], -1.0, 1.0);
    let labels = [0, 2];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (probs, leaves) = forward_on_tape(&spec, &params, &mut tape, xv, true).unwrap();
    let loss = loss_hard(&mut tape, probs, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();

    let eval = |layers: Vec<LayerParams>| {
        let p = Parameters::new(&spec, layers).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let (probs, _) = forward_on_tape(&spec, &p, &mut t, xv, false).unwrap();
        let l = loss_hard(&mut t, probs, &labels).unwrap();
        t.value(l).data()[0]
    };
    for (li, &(wv, bv)) in leaves.iter().enumerate() {
        for (which, var) in [(0, wv), (1, bv)] {
            let g = grads.get(var).unwrap();
            for i in (0..g.numel()).step_by(g.numel().div_ceil(5)) {
                let bumped = |d: f64| {
                    let mut layers = params.layers().to_vec();
                    let t = if which == 0 { &mut layers[li].weight } else { &mut layers[li].bias };
                    t.data_mut()[i] += d;
                    layers
                };
                let numeric = (eval(bumped(H)) - eval(bumped(-H))) / (2.0 * H);
                let a = g.data()[i];
                let tol = f64::max(1e-6, 1e-4 * a.abs().max(numeric.abs()));
                if (a - numeric).abs() > tol {
                    return Err(format!("layer {li} {} [{i}]: {a} vs {numeric}", ["weight", "bias"][which]));
                }
            }
        }
    }
    Ok(())
}
