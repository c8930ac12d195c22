use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Bce,
    Mse,
}

#[derive(Debug, Clone, Copy)]
pub enum LossTarget<'a> {
    /// Class ids, one per row.
    Classes(&'a [usize]),
    /// 0/1 labels for a single-column probability output.
    Binary(&'a [f64]),
    Dense(&'a Matrix),
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Batch-mean loss value and its gradient with respect to `prediction`.
pub fn loss_eval(kind: LossKind, prediction: &Matrix, target: LossTarget<'_>) -> Result<(f64, Matrix)> {
    let n = prediction.rows;
    if n == 0 {
        return Err(Error::Empty("loss batch"));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(prediction.rows, prediction.cols);
    match (kind, target) {
        (LossKind::CrossEntropy, LossTarget::Classes(labels)) => {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(n, labels.len()));
            }
            let k = prediction.cols;
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= k {
                    return Err(Error::LabelOutOfRange { id: y, classes: k });
                }
                let p = clamp_p(prediction.get(i, y));
                total -= p.ln();
                grad.row_mut(i)[y] = -inv_n / p;
            }
            Ok((total * inv_n, grad))
        }
        (LossKind::Bce, LossTarget::Binary(labels)) => {
            if prediction.cols != 1 {
                return Err(Error::ShapeMismatch {
                    expected: "one column".into(),
                    got: format!("{}", prediction.cols),
                });
            }
            if labels.len() != n {
                return Err(Error::DimensionMismatch(n, labels.len()));
            }
            let mut total = 0.0;
            for (i, &t) in labels.iter().enumerate() {
                if t != 0.0 && t != 1.0 {
                    return Err(Error::LabelOutOfRange { id: t as usize, classes: 2 });
                }
                let p = clamp_p(prediction.data[i]);
                total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                grad.data[i] = inv_n * (-t / p + (1.0 - t) / (1.0 - p));
            }
            Ok((total * inv_n, grad))
        }
        (LossKind::Mse, LossTarget::Dense(t)) => {
            if t.shape() != prediction.shape() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", prediction.shape()),
                    got: format!("{:?}", t.shape()),
                });
            }
            let m = prediction.data.len() as f64;
            let mut total = 0.0;
            for ((g, &p), &y) in grad.data.iter_mut().zip(&prediction.data).zip(&t.data) {
                let d = p - y;
                total += d * d;
                *g = 2.0 * d / m;
            }
            Ok((total / m, grad))
        }
        (k, _) => Err(Error::InvalidParameter(format!("target kind does not fit loss {k:?}"))),
    }
}
