use crate::inn::InnModel;
use crate::tensor::Real;

/// Adaptive-moment optimizer with bias correction. Weight decay is plain L2
/// added to the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: InnModel<T>,
    pub v: InnModel<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &InnModel<T>, learning_rate: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    pub fn update(&mut self, model: &mut InnModel<T>, grad: &InnModel<T>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = T::from_f64_lossy(self.learning_rate * bc2.sqrt() / bc1);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one, eps) = (T::one(), T::from_f64_lossy(self.eps * bc2.sqrt()));
        let wd = T::from_f64_lossy(self.weight_decay);
        let grads = grad.named_params();
        for (((p, (_, g)), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.params_mut())
            .zip(self.v.params_mut())
        {
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                p[i] -= lr * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
