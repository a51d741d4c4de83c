use super::Tensor;
use crate::error::{Error, Result};

/// Mean squared error over a `[batch, 1]` prediction and its gradient
/// `2(pred − target)/batch`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    if pred.is_empty() {
        return Err(Error::arg("mse_loss on an empty batch"));
    }
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "mse_loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.batch() as f32;
    let mut grad = pred.clone();
    let mut loss = 0.0f64;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        loss += (diff as f64) * (diff as f64);
        *g = 2.0 * diff / n;
    }
    Ok(((loss / n as f64) as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f32]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn hand_examples() {
        let (loss, grad) = mse_loss(&col(&[1.5, -2.0]), &col(&[1.5, -2.0])).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));

        let (loss, grad) = mse_loss(&col(&[2.0]), &col(&[0.0])).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.data(), &[4.0]);

        let (loss, grad) = mse_loss(&col(&[1.0, 3.0]), &col(&[0.0, 0.0])).unwrap();
        assert_eq!(loss, 5.0);
        assert_eq!(grad.data(), &[1.0, 3.0]);
    }

    #[test]
    fn shape_mismatch() {
        assert!(mse_loss(&col(&[1.0]), &col(&[1.0, 2.0])).is_err());
    }
}
