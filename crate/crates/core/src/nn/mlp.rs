use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    /// Row-wise softmax; final layer only.
    SoftmaxOut,
    /// Element-wise logistic; final layer only.
    SigmoidOut,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::SoftmaxOut => 2,
            Activation::SigmoidOut => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Relu,
            1 => Activation::Identity,
            2 => Activation::SoftmaxOut,
            3 => Activation::SigmoidOut,
            _ => return None,
        })
    }

    fn output_only(self) -> bool {
        matches!(self, Activation::SoftmaxOut | Activation::SigmoidOut)
    }
}

/// Dense layer `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows {
            return Err(Error::ShapeMismatch {
                expected: format!("bias of length {}", weights.rows),
                got: format!("{}", bias.len()),
            });
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }
}

/// Layered dense network. `adapt_mask[i]` marks layer `i` as part of the
/// component a feature-distribution loss is applied to; `frozen[i]` keeps
/// the optimizer off layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub adapt_mask: Vec<bool>,
    pub frozen: Vec<bool>,
    version: u64,
}

/// Uniform Glorot initialization, rounded to single precision.
fn glorot<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (inp + out) as f64).sqrt();
    let data = (0..out * inp).map(|_| (rng.random_range(-limit..limit) as f32) as f64).collect();
    Matrix { rows: out, cols: inp, data }
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("model layers"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer {} input {}", i + 1, w[0].out_dim()),
                    got: format!("{}", w[1].in_dim()),
                });
            }
        }
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            if i != last && l.activation.output_only() {
                return Err(Error::InvalidParameter(format!("{:?} is only allowed on the final layer", l.activation)));
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        let n = layers.len();
        Ok(Self { layers, adapt_mask: vec![false; n], frozen: vec![false; n], version: 0 })
    }

    /// Network with layer widths `dims`, `hidden` activation between layers
    /// and `output` activation on the last one.
    pub fn seeded<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("bad layer widths {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let act = if i + 2 == dims.len() { output } else { hidden };
            layers.push(Layer::new(glorot(w[1], w[0], rng), vec![0.0; w[1]], act)?);
        }
        Self::from_layers(layers)
    }

    pub fn with_adapt_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(self.layers.len(), mask.len()));
        }
        self.adapt_mask = mask;
        Ok(self)
    }

    pub fn freeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = true);
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data.len() + l.bias.len()).sum()
    }

    /// Flat parameter view: per layer, weights row-major then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(self.param_count(), flat.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.data.len();
            l.weights.data.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        self.bump_version();
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Bitwise equality of all parameters (ignores masks and version).
    pub fn params_bitwise_eq(&self, other: &MlpModel) -> bool {
        let a = self.flat_params();
        let b = other.flat_params();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    /// Convenience: final-layer output only.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        Ok(forward(self, x)?.into_output())
    }
}

/// Per-layer inputs and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    version: u64,
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl Activations {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("at least one layer")
    }

    pub fn into_output(mut self) -> Matrix {
        self.outputs.pop().expect("at least one layer")
    }

    pub fn layer_output(&self, i: usize) -> &Matrix {
        &self.outputs[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter plus the gradient with respect to the
/// network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Matrix,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad { weights: Matrix::zeros(l.out_dim(), l.in_dim()), bias: vec![0.0; l.out_dim()] })
                .collect(),
            input: Matrix::zeros(0, model.in_dim()),
        }
    }

    /// Adds parameter gradients of `other` (input gradients are not summed).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

fn softmax_rows(z: &mut Matrix) {
    for i in 0..z.rows {
        let r = z.row_mut(i);
        let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        r.iter_mut().for_each(|v| *v /= s);
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn forward(model: &MlpModel, batch: &Matrix) -> Result<Activations> {
    if batch.cols != model.in_dim() {
        return Err(Error::DimensionMismatch(model.in_dim(), batch.cols));
    }
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut outputs: Vec<Matrix> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let x = outputs.last().unwrap_or(batch).clone();
        let mut z = x.matmul_t(&layer.weights);
        for i in 0..z.rows {
            z.row_mut(i).iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
        }
        match layer.activation {
            Activation::Relu => z.data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
            Activation::SoftmaxOut => softmax_rows(&mut z),
            Activation::SigmoidOut => z.data.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
        if !z.is_finite() {
            return Err(Error::NonFinite("forward activations"));
        }
        inputs.push(x);
        outputs.push(z);
    }
    Ok(Activations { version: model.version, inputs, outputs })
}

/// Reverse-mode pass. `grad_output` is the loss gradient with respect to the
/// final (post-activation) output.
pub fn backward(model: &MlpModel, acts: &Activations, grad_output: &Matrix) -> Result<Gradients> {
    if acts.version != model.version || acts.outputs.len() != model.layers.len() {
        return Err(Error::StaleActivations { recorded: acts.version, current: model.version });
    }
    let out = acts.output();
    if grad_output.shape() != out.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", out.shape()),
            got: format!("{:?}", grad_output.shape()),
        });
    }
    let mut layers = vec![None; model.layers.len()];
    let mut g = grad_output.clone();
    for (li, layer) in model.layers.iter().enumerate().rev() {
        let y = &acts.outputs[li];
        // g becomes dL/dz
        match layer.activation {
            Activation::Relu => g.data.iter_mut().zip(&y.data).for_each(|(gv, &yv)| {
                if yv <= 0.0 {
                    *gv = 0.0
                }
            }),
            Activation::Identity => {}
            Activation::SoftmaxOut => {
                for i in 0..g.rows {
                    let p = y.row(i);
                    let gr = g.row_mut(i);
                    let dot: f64 = gr.iter().zip(p).map(|(a, b)| a * b).sum();
                    gr.iter_mut().zip(p).for_each(|(gv, &pv)| *gv = pv * (*gv - dot));
                }
            }
            Activation::SigmoidOut => g.data.iter_mut().zip(&y.data).for_each(|(gv, &pv)| *gv *= pv * (1.0 - pv)),
        }
        let x = &acts.inputs[li];
        let dw = g.t_matmul(x);
        let mut db = vec![0.0; layer.out_dim()];
        for i in 0..g.rows {
            db.iter_mut().zip(g.row(i)).for_each(|(b, v)| *b += v);
        }
        layers[li] = Some(LayerGrad { weights: dw, bias: db });
        g = g.matmul(&layer.weights);
    }
    Ok(Gradients { layers: layers.into_iter().map(|l| l.expect("filled")).collect(), input: g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input() {
        let layer = Layer::new(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let m = MlpModel::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.5]]).unwrap();
        assert_eq!(m.infer(&x).unwrap(), x);
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let layer = Layer::new(Matrix::zeros(4, 2), vec![0.0; 4], Activation::SoftmaxOut).unwrap();
        let m = MlpModel::from_layers(vec![layer]).unwrap();
        let y = m.infer(&Matrix::from_rows(&[[3.0, -1.0]]).unwrap()).unwrap();
        assert!(y.data.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn relu_clips_negative() {
        let layer = Layer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Relu).unwrap();
        let m = MlpModel::from_layers(vec![layer]).unwrap();
        let y = m.infer(&Matrix::from_rows(&[[-3.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(y.row(0), &[0.0, 2.0]);
    }

    #[test]
    fn rejects_inner_softmax_and_bad_chain() {
        let a = Layer::new(Matrix::zeros(2, 2), vec![0.0; 2], Activation::SoftmaxOut).unwrap();
        let b = Layer::new(Matrix::zeros(1, 2), vec![0.0; 1], Activation::Identity).unwrap();
        assert!(MlpModel::from_layers(vec![a, b.clone()]).is_err());
        let c = Layer::new(Matrix::zeros(3, 3), vec![0.0; 3], Activation::Relu).unwrap();
        assert!(MlpModel::from_layers(vec![c, b]).is_err());
    }

    #[test]
    fn forward_checks_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpModel::seeded(&[3, 4, 2], Activation::Relu, Activation::SoftmaxOut, &mut rng).unwrap();
        assert!(matches!(forward(&m, &Matrix::zeros(1, 2)), Err(Error::DimensionMismatch(3, 2))));
    }

    #[test]
    fn stale_record_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MlpModel::seeded(&[2, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let acts = forward(&m, &Matrix::zeros(1, 2)).unwrap();
        let p = m.flat_params();
        m.set_flat_params(&p).unwrap();
        assert!(matches!(backward(&m, &acts, &Matrix::zeros(1, 2)), Err(Error::StaleActivations { .. })));
    }

    #[test]
    fn init_is_seeded_and_single_precision() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            MlpModel::seeded(&[5, 7, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap()
        };
        let (a, b) = (mk(), mk());
        assert!(a.params_bitwise_eq(&b));
        let limit = (6.0f64 / 12.0).sqrt();
        for v in a.layers[0].weights.data.iter() {
            assert!(v.abs() <= limit);
            assert_eq!((*v as f32) as f64, *v);
        }
    }
}
