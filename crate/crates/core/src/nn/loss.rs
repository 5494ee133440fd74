use ndarray::Array2;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Class-weighted cross-entropy, normalised by the summed weights of the
/// batch targets. Returns the loss and its gradient w.r.t. the logits.
pub fn weighted_cross_entropy(logits: &Array2<f64>, targets: &[usize], class_weights: &[f64]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), targets.len());
    let probs = softmax_rows(logits);
    let total_w: f64 = targets.iter().map(|&t| class_weights[t]).sum();
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        let w = class_weights[t] / total_w;
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - row[t]);
        grad[[i, t]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w);
    }
    (loss, grad)
}
