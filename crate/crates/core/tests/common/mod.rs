//! Independent reference implementations shared by the integration and
//! acceptance tests. None of these call into the library's numeric code.

#![allow(dead_code)]

pub mod grad;

use kdlab::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// A random probability row; with `sparse` some entries are exactly zero.
pub fn distribution(rng: &mut ChaCha8Rng, classes: usize, sparse: bool) -> Vec<f64> {
    loop {
        let raw: Vec<f64> =
            (0..classes).map(|_| if sparse && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
        let total: f64 = raw.iter().sum();
        if total > 1e-3 {
            return raw.iter().map(|v| v / total).collect();
        }
    }
}

pub fn distributions(rng: &mut ChaCha8Rng, rows: usize, classes: usize, sparse: bool) -> Vec<Vec<f64>> {
    (0..rows).map(|_| distribution(rng, classes, sparse)).collect()
}

/// First index of the maximum, scanning left to right.
pub fn first_max(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

pub fn ref_loss_unlabeled(teacher: &[Vec<f64>], student: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        for j in 0..t.len() {
            total += t[j] * s[j].max(EPS).ln();
        }
    }
    -total / teacher.len() as f64
}

pub fn ref_loss_conditional(teacher: &[Vec<f64>], student: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for ((t, s), &y) in teacher.iter().zip(student).zip(labels) {
        if first_max(t) == y {
            for j in 0..t.len() {
                total += t[j] * s[j].max(EPS).ln();
            }
        } else {
            total += s[y].max(EPS).ln();
        }
    }
    -total / teacher.len() as f64
}

pub fn ref_loss_hard(student: &[Vec<f64>], labels: &[usize]) -> f64 {
    -student.iter().zip(labels).map(|(s, &y)| s[y].max(EPS).ln()).sum::<f64>() / student.len() as f64
}

/// Direct six-loop cross-correlation.
pub fn ref_conv2d(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let y = (oy * stride + dy) as isize - pad as isize;
                                let xx = (ox * stride + dx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let xi = ((b * c + ci) * h + y as usize) * w + xx as usize;
                                let ki = ((o * c + ci) * kh + dy) * kw + dx;
                                acc += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    out[((b * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new([n, co, oh, ow], out).unwrap()
}

/// Pairwise AUC: each (positive, negative) pair scores 1 if the positive is
/// higher, ½ on a tie.
pub fn ref_auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Area under the ROC polyline by the trapezoid rule, thresholds at every
/// distinct score.
pub fn ref_auc_trapezoid(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / pos, fp / neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

/// Central-difference check of every input's gradient for a scalar-valued
/// tape program. Returns the worst violation as an error message.
pub fn gradcheck(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> Result<(), String> {
    const H: f64 = 1e-5;
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).map_err(|e| e.to_string())?;
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[i];
            let tol = f64::max(1e-6, 1e-4 * a.abs().max(numeric.abs()));
            if (a - numeric).abs() > tol {
                return Err(format!("input {k} element {i}: analytic {a}, numeric {numeric}"));
            }
        }
    }
    Ok(())
}
