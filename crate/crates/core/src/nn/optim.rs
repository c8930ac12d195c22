use super::mlp::{Gradients, MlpModel};
use crate::error::{Error, Result};

/// Classic momentum SGD: `v ← μ v + g`, `θ ← θ − η v`.
///
/// Parameters are rounded to single precision after every update so that
/// checkpoints (which store `f32`) round-trip exactly.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self { lr, momentum, velocity: Vec::new() })
    }

    fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimensionMismatch(params.len(), grads.len()));
        }
        if self.velocity.len() <= slot {
            self.velocity.resize(slot + 1, Vec::new());
        }
        let v = &mut self.velocity[slot];
        if v.is_empty() {
            v.resize(params.len(), 0.0);
        }
        for ((p, vi), &g) in params.iter_mut().zip(v.iter_mut()).zip(grads) {
            *vi = self.momentum * *vi + g;
            *p = ((*p - self.lr * *vi) as f32) as f64;
        }
        Ok(())
    }

    /// Updates every non-frozen layer of `model`.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != model.layers.len() {
            return Err(Error::DimensionMismatch(model.layers.len(), grads.layers.len()));
        }
        for (i, (layer, g)) in model.layers.iter_mut().zip(&grads.layers).enumerate() {
            if g.weights.shape() != layer.weights.shape() || g.bias.len() != layer.bias.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", layer.weights.shape()),
                    got: format!("{:?}", g.weights.shape()),
                });
            }
            if model.frozen[i] {
                continue;
            }
            self.update(2 * i, &mut layer.weights.data, &g.weights.data)?;
            self.update(2 * i + 1, &mut layer.bias, &g.bias)?;
        }
        model.bump_version();
        Ok(())
    }

    /// Updates a free-standing parameter tensor (e.g. an embedding table).
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.update(0, params, grads)
    }
}

/// One stateless momentum step: a fresh optimizer per call, so momentum only
/// matters for callers that keep an [`Sgd`] around.
pub fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
    Sgd::new(lr, momentum)?.step(model, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::Matrix;
    use crate::nn::mlp::{Activation, Layer};

    fn scalar_model(w: f64) -> MlpModel {
        MlpModel::from_layers(vec![Layer::new(
            Matrix::from_vec(1, 1, vec![w]).unwrap(),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn scalar_step() {
        let mut m = scalar_model(1.0);
        let mut g = Gradients::zeros_like(&m);
        g.layers[0].weights.data[0] = 2.0;
        sgd_step(&mut m, &g, 0.1, 0.0).unwrap();
        assert_eq!(m.layers[0].weights.data[0], (0.8f32) as f64);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut m = scalar_model(0.3125);
        let before = m.clone();
        let g = Gradients::zeros_like(&m);
        let mut opt = Sgd::new(0.5, 0.9).unwrap();
        for _ in 0..3 {
            opt.step(&mut m, &g).unwrap();
        }
        assert!(m.params_bitwise_eq(&before));
    }

    #[test]
    fn frozen_layer_untouched() {
        let mut m = scalar_model(1.0);
        m.freeze_all();
        let mut g = Gradients::zeros_like(&m);
        g.layers[0].weights.data[0] = 7.0;
        g.layers[0].bias[0] = -1.0;
        sgd_step(&mut m, &g, 0.1, 0.9).unwrap();
        assert_eq!(m.layers[0].weights.data[0], 1.0);
        assert_eq!(m.layers[0].bias[0], 0.0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut m = scalar_model(0.0);
        let mut g = Gradients::zeros_like(&m);
        g.layers[0].weights.data[0] = 1.0;
        let mut opt = Sgd::new(1.0, 0.5).unwrap();
        opt.step(&mut m, &g).unwrap();
        opt.step(&mut m, &g).unwrap();
        // v1 = 1, v2 = 1.5 -> w = -2.5
        assert_eq!(m.layers[0].weights.data[0], -2.5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut m = scalar_model(0.0);
        let other =
            MlpModel::from_layers(vec![Layer::new(Matrix::zeros(2, 1), vec![0.0; 2], Activation::Identity).unwrap()])
                .unwrap();
        let g = Gradients::zeros_like(&other);
        assert!(sgd_step(&mut m, &g, 0.1, 0.0).is_err());
    }
}
