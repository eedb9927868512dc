use crate::linalg::softplus;

/// Softmax of a logit pair.
pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `−log softmax(logits)[label]` with log-sum-exp stabilization.
///
/// With two classes this is `softplus(l_other − l_label)`.
pub fn cross_entropy(logits: [f64; 2], label: usize) -> f64 {
    softplus(logits[1 - label] - logits[label])
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `softmax(logits) − onehot(label)`.
pub fn cross_entropy_grad(logits: [f64; 2], label: usize) -> [f64; 2] {
    let mut p = softmax(logits);
    p[label] -= 1.0;
    p
}

/// Index of the larger logit; ties go to class 0.
pub fn predict(logits: [f64; 2]) -> u8 {
    u8::from(logits[1] > logits[0])
}
