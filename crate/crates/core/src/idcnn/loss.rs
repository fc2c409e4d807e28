use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean squared error over the cells where `mask` is true, and its gradient
/// with respect to `pred` (zero outside the mask).
pub fn mse_with_grad<T: Scalar>(pred: &[T], target: &[T], mask: &[bool]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "loss inputs",
            format!("{} cells", pred.len()),
            format!("target {} / mask {}", target.len(), mask.len()),
        ));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    let inv_n = T::one() / T::of_usize(n);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - target[i];
            loss += d * d;
            grad[i] = two * d * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Distant-region MSE between two quarter-resolution maps. `mask` is the
/// quarter-resolution distant raster in the maps' layout.
pub fn loss_mse<T: Scalar>(pred: &DensityMap<T>, target: &DensityMap<T>, mask: &[bool]) -> Result<T> {
    if pred.geometry != target.geometry {
        return Err(Error::shape(
            "loss maps",
            format!("{}x{}", target.width(), target.height()),
            format!("{}x{}", pred.width(), pred.height()),
        ));
    }
    mse_with_grad(&pred.values, &target.values, mask).map(|(l, _)| l)
}
