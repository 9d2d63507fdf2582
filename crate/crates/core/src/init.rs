//! Parameter initializers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Normal(0, std²) samples redrawn until they fall within two standard deviations.
pub fn trunc_normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// He-normal initialization for ReLU layers with the given fan-in.
pub fn he_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncated_normal_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = trunc_normal(&[1000], 0.02, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let mean = t.sum() / 1000.0;
        assert!(mean.abs() < 0.003);
    }
}
