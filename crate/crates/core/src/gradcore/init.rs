use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{Real, Tensor};

/// Zero-mean normal samples with standard deviation `std`, redrawn while
/// farther than two standard deviations from zero.
pub fn truncated_normal_init<T: Real>(shape: &[usize], std: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::config(format!("truncated normal std must be positive, got {std}")));
    }
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::from_f64(z * std);
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}
