//! Per-sample losses.

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = k;
        }
    }
    best
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy of `logits` against `class`.
pub fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    log_sum_exp(logits) - logits[class]
}

/// Cross-entropy and its gradient `softmax(logits) - e_class`, written into `grad`.
pub fn cross_entropy_grad(logits: &[f64], class: usize, grad: &mut [f64]) -> f64 {
    let lse = log_sum_exp(logits);
    for (g, z) in grad.iter_mut().zip(logits) {
        *g = (z - lse).exp();
    }
    grad[class] -= 1.0;
    lse - logits[class]
}

/// Mean squared error over entries where `mask` is set; `0` for an empty mask.
pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> f64 {
    let mut s = 0.0;
    let mut k = 0usize;
    for ((p, t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            s += (p - t) * (p - t);
            k += 1;
        }
    }
    if k == 0 {
        0.0
    } else {
        s / k as f64
    }
}
