use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor on the per-vector standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Target statistics and blend strength for a feature-space AdaIN shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdainParams {
    pub style_mean: Vec<f64>,
    pub style_std: Vec<f64>,
    pub alpha: f64,
}

impl AdainParams {
    pub fn new(style_mean: Vec<f64>, style_std: Vec<f64>, alpha: f64) -> Result<Self> {
        let p = Self { style_mean, style_std, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.style_mean.len() != self.style_std.len() {
            return Err(Error::DimensionMismatch(self.style_mean.len(), self.style_std.len()));
        }
        if self.style_std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("style_std must be strictly positive".into()));
        }
        if self.style_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("style_mean"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// A reproducible "style": per-coordinate means `offset · N(0,1)` and
    /// standard deviations `scale · exp(spread · N(0,1))`.
    pub fn synthetic_style(dim: usize, seed: u64, offset: f64, scale: f64, spread: f64, alpha: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let style_mean = (0..dim).map(|_| offset * normal()).collect();
        let style_std = (0..dim).map(|_| scale * (spread * normal()).exp()).collect();
        Self::new(style_mean, style_std, alpha)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.style_mean.clone(), self.style_std.clone(), alpha)
    }
}

/// `(1 − α) x + α (σ_s ⊙ (x − μ(x)) / σ(x) + μ_s)` with scalar mean and
/// (population) standard deviation taken over the coordinates of `x`.
pub fn adain_shift(x: &[f64], p: &AdainParams) -> Result<Vec<f64>> {
    if x.len() != p.style_mean.len() {
        return Err(Error::DimensionMismatch(p.style_mean.len(), x.len()));
    }
    if x.is_empty() {
        return Err(Error::Empty("feature vector"));
    }
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let std = var.sqrt().max(STD_FLOOR);
    Ok(x.iter()
        .zip(p.style_mean.iter().zip(&p.style_std))
        .map(|(&v, (&m, &s))| {
            let t = s * (v - mean) / std + m;
            (1.0 - p.alpha) * v + p.alpha * t
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(x: &[f64]) -> (f64, f64) {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.len() as f64;
        (m, v.sqrt())
    }

    #[test]
    fn alpha_zero_is_identity() {
        let x = [0.3, -1.2, 4.0];
        let p = AdainParams::new(vec![5.0; 3], vec![2.0; 3], 0.0).unwrap();
        assert_eq!(adain_shift(&x, &p).unwrap(), x.to_vec());
    }

    #[test]
    fn matched_statistics_leave_x_unchanged() {
        let x = [0.5, 2.0, -1.0, 3.5];
        let (m, s) = stats(&x);
        for alpha in [0.0, 0.3, 1.0] {
            let p = AdainParams::new(vec![m; 4], vec![s; 4], alpha).unwrap();
            let y = adain_shift(&x, &p).unwrap();
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardized_input_maps_to_two_x_plus_one() {
        let x = [1.0, -1.0, 1.0, -1.0];
        let p = AdainParams::new(vec![1.0; 4], vec![2.0; 4], 1.0).unwrap();
        assert_eq!(adain_shift(&x, &p).unwrap(), vec![3.0, -1.0, 3.0, -1.0]);
    }

    #[test]
    fn constant_vector_uses_floor() {
        let p = AdainParams::new(vec![0.0; 2], vec![1.0; 2], 1.0).unwrap();
        assert_eq!(adain_shift(&[2.0, 2.0], &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn validation() {
        assert!(AdainParams::new(vec![0.0], vec![0.0], 0.5).is_err());
        assert!(AdainParams::new(vec![0.0], vec![1.0], 1.5).is_err());
        assert!(AdainParams::new(vec![0.0, 1.0], vec![1.0], 0.5).is_err());
        let p = AdainParams::new(vec![0.0; 3], vec![1.0; 3], 0.5).unwrap();
        assert!(matches!(adain_shift(&[1.0, 2.0], &p), Err(Error::DimensionMismatch(3, 2))));
    }
}
