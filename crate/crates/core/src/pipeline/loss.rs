//! Classification losses on probability vectors, plus their gradients with
//! respect to the pre-softmax scores for training.

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};

/// Probability floor inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal { alpha: f64, gamma: f64 },
}

impl LossKind {
    /// Focal loss with the detector settings `alpha = 0.25`, `gamma = 2`.
    pub const DETECTOR_FOCAL: LossKind = LossKind::Focal {
        alpha: 0.25,
        gamma: 2.0,
    };

    pub fn validate(&self) -> Result<()> {
        if let LossKind::Focal { alpha, gamma } = *self {
            check_focal_params(alpha, gamma)?;
        }
        Ok(())
    }

    pub fn value(&self, probs: &[f64], label: ClassId) -> Result<f64> {
        match *self {
            LossKind::CrossEntropy => cross_entropy(probs, label),
            LossKind::Focal { alpha, gamma } => focal_loss(probs, label, alpha, gamma),
        }
    }

    /// Loss and its gradient with respect to `logits`, where the
    /// probabilities are `softmax(logits)`.
    pub fn value_and_grad(&self, logits: &[f64], label: ClassId) -> Result<(f64, Vec<f64>)> {
        check_label(logits.len(), label)?;
        let probs = softmax(logits);
        let loss = self.value(&probs, label)?;
        let pt = probs[label];
        // dL/dz_j = g * (delta_jy - p_j), with g = pt * dL/dpt.
        let g = match *self {
            LossKind::CrossEntropy => -1.0,
            LossKind::Focal { alpha, gamma } => {
                let log_term = if gamma == 0.0 || pt >= 1.0 {
                    0.0
                } else {
                    alpha * gamma * (1.0 - pt).powf(gamma - 1.0) * pt * pt.max(PROB_FLOOR).ln()
                };
                log_term - alpha * (1.0 - pt).powf(gamma)
            }
        };
        let grad = probs
            .iter()
            .enumerate()
            .map(|(j, &p)| g * (if j == label { 1.0 } else { 0.0 } - p))
            .collect();
        Ok((loss, grad))
    }
}

fn check_label(num_classes: usize, label: ClassId) -> Result<()> {
    if label >= num_classes {
        return Err(Error::ClassOutOfRange {
            class_id: label,
            num_classes,
        });
    }
    Ok(())
}

fn check_focal_params(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid(format!(
            "focal loss needs alpha > 0 and gamma >= 0 (got {alpha}, {gamma})"
        )));
    }
    Ok(())
}

/// `-ln(max(p[label], eps))`.
pub fn cross_entropy(probs: &[f64], label: ClassId) -> Result<f64> {
    check_label(probs.len(), label)?;
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` with `p_t = probs[label]`.
pub fn focal_loss(probs: &[f64], label: ClassId, alpha: f64, gamma: f64) -> Result<f64> {
    check_label(probs.len(), label)?;
    check_focal_params(alpha, gamma)?;
    let pt = probs[label];
    Ok(-alpha * (1.0 - pt).max(0.0).powf(gamma) * pt.max(PROB_FLOOR).ln())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let c = 7;
        let uniform = vec![1.0 / c as f64; c];
        assert!((cross_entropy(&uniform, 3).unwrap() - (c as f64).ln()).abs() < 1e-12);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        // floored rather than infinite
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn focal_cases() {
        assert_eq!(focal_loss(&[1.0, 0.0], 0, 0.25, 2.0).unwrap(), 0.0);
        let probs = [0.2, 0.5, 0.3];
        assert!((focal_loss(&probs, 1, 1.0, 0.0).unwrap() - cross_entropy(&probs, 1).unwrap()).abs() < 1e-15);
        // 0.25 * 0.25 * ln 2
        let v = focal_loss(&[0.5, 0.5], 0, 0.25, 2.0).unwrap();
        assert!((v - 0.043_321_698_784_996_58).abs() < 1e-12);
        assert!(focal_loss(&probs, 1, 0.0, 2.0).is_err());
        assert!(focal_loss(&probs, 1, 0.25, -1.0).is_err());
        assert!(focal_loss(&probs, 5, 0.25, 2.0).is_err());
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn gradient_at_certainty_is_finite() {
        for kind in [LossKind::CrossEntropy, LossKind::DETECTOR_FOCAL, LossKind::Focal { alpha: 1.0, gamma: 0.5 }] {
            let (_, g) = kind.value_and_grad(&[50.0, -50.0], 0).unwrap();
            assert!(g.iter().all(|v| v.is_finite()));
        }
    }
}
