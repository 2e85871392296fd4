use super::{NnError, Tensor};

/// Mean squared error over all elements and its gradient w.r.t. `prediction`.
pub fn mse(prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if prediction.shape() != target.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "mse: {:?} vs {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let n = prediction.len() as f64;
    let mut grad = prediction.clone();
    let mut loss = 0.0;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Row-wise softmax of `[B, K]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    let [_, k] = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Mean over the batch of `-log softmax(logits)[label]`; the gradient is
/// `(softmax - onehot) / B`.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let [batch, k] = logits.dims2()?;
    if labels.len() != batch {
        return Err(NnError::ShapeMismatch(format!(
            "softmax_xent: {batch} rows, {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::ShapeMismatch(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for ((row, logit_row), &label) in grad
        .data_mut()
        .chunks_exact_mut(k)
        .zip(logits.data().chunks_exact(k))
        .zip(labels)
    {
        let max = logit_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logit_row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - logit_row[label];
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v /= batch as f64);
    }
    Ok((loss / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::from_vec(&[2, 30], vec![0.7; 60]).unwrap();
        let (loss, grad) = softmax_xent(&logits, &[3, 29]).unwrap();
        assert!((loss - 30f64.ln()).abs() < 1e-12);
        assert!((loss - 3.4012).abs() < 1e-4);
        let row_sum: f64 = grad.data()[..30].iter().sum();
        assert!(row_sum.abs() < 1e-12);
    }

    #[test]
    fn mse_zero_when_equal() {
        let t = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (loss, grad) = mse(&t, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn xent_label_checks() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(softmax_xent(&logits, &[3]).is_err());
        assert!(softmax_xent(&logits, &[0, 1]).is_err());
    }
}
