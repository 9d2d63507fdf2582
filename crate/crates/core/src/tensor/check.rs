//! Central finite differences for verifying backward rules.

use super::Tensor;

/// Settings for comparing analytic gradients against central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

impl GradCheck {
    /// Maximum relative error over every entry of every input.
    ///
    /// `f` evaluates the scalar function at the given inputs and `analytic`
    /// holds the gradient claimed for each input.
    pub fn max_error(&self, inputs: &[Tensor], analytic: &[Tensor], mut f: impl FnMut(&[Tensor]) -> f64) -> f64 {
        assert_eq!(inputs.len(), analytic.len());
        let mut work = inputs.to_vec();
        let mut worst = 0.0f64;
        for i in 0..inputs.len() {
            for j in 0..inputs[i].len() {
                let numeric = {
                    let orig = work[i].data()[j];
                    work[i].data_mut()[j] = orig + self.step;
                    let up = f(&work);
                    work[i].data_mut()[j] = orig - self.step;
                    let down = f(&work);
                    work[i].data_mut()[j] = orig;
                    (up - down) / (2.0 * self.step)
                };
                let a = analytic[i].data()[j];
                let denom = a.abs().max(numeric.abs()).max(self.floor);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        worst
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut work = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for j in 0..x.len() {
        let orig = work.data()[j];
        work.data_mut()[j] = orig + step;
        let up = f(&work);
        work.data_mut()[j] = orig - step;
        let down = f(&work);
        work.data_mut()[j] = orig;
        out.data_mut()[j] = (up - down) / (2.0 * step);
    }
    out
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
