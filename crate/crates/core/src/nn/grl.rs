use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Gradient reversal: identity forward, `−λ · upstream` backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrlNode {
    lambda: f64,
}

impl GrlNode {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("reversal lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.clone()
    }

    pub fn backward(&self, upstream: &Matrix) -> Matrix {
        let mut g = upstream.clone();
        g.scale(-self.lambda);
        g
    }
}
