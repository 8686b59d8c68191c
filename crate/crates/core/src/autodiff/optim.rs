use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore};

/// Centered RMSProp:
///
/// ```text
/// mean_square <- decay * mean_square + (1 - decay) * g^2
/// mean_grad   <- decay * mean_grad   + (1 - decay) * g
/// w           <- w - lr * g / sqrt(mean_square - mean_grad^2 + epsilon)
/// ```
///
/// Moments live on each [`Parameter`](super::Parameter). Before the first
/// step the mean gradient is zero and the mean square is
/// `initial_mean_square`; a zero start makes the first updates roughly
/// `lr / sqrt(1 - decay)` in size regardless of the gradient scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteredRmsProp {
    pub lr: f64,
    pub decay: f64,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub initial_mean_square: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for CenteredRmsProp {
    fn default() -> Self {
        Self { lr: 1e-3, decay: 0.999, epsilon: 1e-10, initial_mean_square: 1.0 }
    }
}

impl CenteredRmsProp {
    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&self, params: &mut ParamStore) -> Result<(), AutodiffError> {
        if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(AutodiffError::NonFiniteGradient(p.name.clone()));
        }
        for p in params.iter_mut() {
            if p.steps == 0 {
                p.mean_square.iter_mut().for_each(|m| *m = self.initial_mean_square);
            }
            p.steps += 1;
            for i in 0..p.values.len() {
                let g = p.grad[i];
                p.mean_square[i] = self.decay * p.mean_square[i] + (1.0 - self.decay) * g * g;
                p.mean_grad[i] = self.decay * p.mean_grad[i] + (1.0 - self.decay) * g;
                if g == 0.0 {
                    continue;
                }
                let var = (p.mean_square[i] - p.mean_grad[i] * p.mean_grad[i]).max(0.0);
                p.values[i] -= self.lr * g / (var + self.epsilon).sqrt();
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}
