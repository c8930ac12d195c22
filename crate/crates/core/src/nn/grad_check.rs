//! Central finite-difference verification of analytic gradients.

use super::grl::GrlNode;
use super::loss::{loss_eval, LossKind, LossTarget};
use super::matrix::Matrix;
use super::mlp::{backward, forward, Activation, MlpModel};
use crate::error::{Error, Result};

/// Denominator floor of [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Something whose parameters can be perturbed one at a time.
///
/// `objective_for(i)` is the scalar whose derivative with respect to
/// parameter `i` the analytic gradient is supposed to equal. For plain
/// networks this is the loss for every `i`; behind a gradient reversal the
/// sign and scale of the reversed branch differ per parameter group.
pub trait GradProbe {
    fn param_count(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);
    fn analytic(&self) -> Result<Vec<f64>>;
    fn objective_for(&self, i: usize) -> Result<f64>;
}

/// Worst relative error between analytic gradients and
/// `(f(θ+ε) − f(θ−ε)) / 2ε` over all parameters.
pub fn check_gradients<P: GradProbe>(probe: &mut P, eps: f64) -> Result<f64> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    let analytic = probe.analytic()?;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.param(i);
        probe.set_param(i, orig + eps);
        let plus = probe.objective_for(i)?;
        probe.set_param(i, orig - eps);
        let minus = probe.objective_for(i)?;
        probe.set_param(i, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

fn loss_kind_for(model: &MlpModel) -> LossKind {
    match model.layers.last().map(|l| l.activation) {
        Some(Activation::SoftmaxOut) => LossKind::CrossEntropy,
        Some(Activation::SigmoidOut) => LossKind::Bce,
        _ => LossKind::Mse,
    }
}

struct MlpProbe<'a> {
    model: MlpModel,
    flat: Vec<f64>,
    batch: &'a Matrix,
    target: LossTarget<'a>,
    kind: LossKind,
}

impl MlpProbe<'_> {
    fn loss(&self) -> Result<f64> {
        let out = forward(&self.model, self.batch)?;
        Ok(loss_eval(self.kind, out.output(), self.target)?.0)
    }
}

impl GradProbe for MlpProbe<'_> {
    fn param_count(&self) -> usize {
        self.flat.len()
    }
    fn param(&self, i: usize) -> f64 {
        self.flat[i]
    }
    fn set_param(&mut self, i: usize, value: f64) {
        self.flat[i] = value;
        self.model.set_flat_params(&self.flat).expect("same length");
    }
    fn analytic(&self) -> Result<Vec<f64>> {
        let acts = forward(&self.model, self.batch)?;
        let (_, g) = loss_eval(self.kind, acts.output(), self.target)?;
        Ok(backward(&self.model, &acts, &g)?.flat())
    }
    fn objective_for(&self, _i: usize) -> Result<f64> {
        self.loss()
    }
}

/// Finite-difference check of a single network under the loss implied by
/// its output activation (softmax → cross-entropy, sigmoid → BCE, else MSE).
pub fn grad_check(model: &MlpModel, batch: &Matrix, target: LossTarget<'_>, eps: f64) -> Result<f64> {
    let mut probe =
        MlpProbe { flat: model.flat_params(), model: model.clone(), batch, target, kind: loss_kind_for(model) };
    check_gradients(&mut probe, eps)
}

/// Encoder feeding a task head (cross-entropy) and, through a gradient
/// reversal node, a domain head (BCE): the joint graph used by adversarial
/// adaptation.
#[derive(Debug, Clone)]
pub struct AdversarialProbe {
    pub encoder: MlpModel,
    pub task_head: MlpModel,
    pub domain_head: MlpModel,
    pub grl: GrlNode,
    pub batch: Matrix,
    pub labels: Vec<usize>,
    pub domains: Vec<f64>,
}

impl AdversarialProbe {
    fn sizes(&self) -> (usize, usize) {
        let e = self.encoder.param_count();
        (e, e + self.task_head.param_count())
    }

    fn losses(&self) -> Result<(f64, f64)> {
        let z = self.encoder.infer(&self.batch)?;
        let task = self.task_head.infer(&z)?;
        let dom = self.domain_head.infer(&self.grl.forward(&z))?;
        let (lt, _) = loss_eval(LossKind::CrossEntropy, &task, LossTarget::Classes(&self.labels))?;
        let (ld, _) = loss_eval(LossKind::Bce, &dom, LossTarget::Binary(&self.domains))?;
        Ok((lt, ld))
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let (e, t) = self.sizes();
        if i < e {
            (0, i)
        } else if i < t {
            (1, i - e)
        } else {
            (2, i - t)
        }
    }

    fn model_mut(&mut self, which: usize) -> &mut MlpModel {
        match which {
            0 => &mut self.encoder,
            1 => &mut self.task_head,
            _ => &mut self.domain_head,
        }
    }

    fn model(&self, which: usize) -> &MlpModel {
        match which {
            0 => &self.encoder,
            1 => &self.task_head,
            _ => &self.domain_head,
        }
    }
}

impl GradProbe for AdversarialProbe {
    fn param_count(&self) -> usize {
        self.sizes().1 + self.domain_head.param_count()
    }

    fn param(&self, i: usize) -> f64 {
        let (w, j) = self.locate(i);
        self.model(w).flat_params()[j]
    }

    fn set_param(&mut self, i: usize, value: f64) {
        let (w, j) = self.locate(i);
        let m = self.model_mut(w);
        let mut flat = m.flat_params();
        flat[j] = value;
        m.set_flat_params(&flat).expect("same length");
    }

    fn analytic(&self) -> Result<Vec<f64>> {
        let enc = forward(&self.encoder, &self.batch)?;
        let z = enc.output();
        let task = forward(&self.task_head, z)?;
        let (_, gt) = loss_eval(LossKind::CrossEntropy, task.output(), LossTarget::Classes(&self.labels))?;
        let task_g = backward(&self.task_head, &task, &gt)?;
        let dom = forward(&self.domain_head, &self.grl.forward(z))?;
        let (_, gd) = loss_eval(LossKind::Bce, dom.output(), LossTarget::Binary(&self.domains))?;
        let dom_g = backward(&self.domain_head, &dom, &gd)?;
        let mut gz = task_g.input.clone();
        gz.add_assign(&self.grl.backward(&dom_g.input));
        let enc_g = backward(&self.encoder, &enc, &gz)?;
        let mut out = enc_g.flat();
        out.extend(task_g.flat());
        out.extend(dom_g.flat());
        Ok(out)
    }

    fn objective_for(&self, i: usize) -> Result<f64> {
        let (lt, ld) = self.losses()?;
        Ok(match self.locate(i).0 {
            0 => lt - self.grl.lambda() * ld,
            1 => lt,
            _ => ld,
        })
    }
}
