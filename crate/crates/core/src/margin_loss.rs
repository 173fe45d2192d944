//! Additive angular margin (ArcFace) loss evaluated as a pure function, with
//! its analytic gradient with respect to the feature rows.
//!
//! For a unit feature `x` with label `y`, class centers `w_j` and
//! `θ_j = arccos(x·w_j)`, the logits are `s·cos(θ_y + m)` for the true class
//! and `s·cos θ_j` otherwise; the per-sample loss is the softmax
//! cross-entropy of those logits, and the batch loss is their mean.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math;

/// Dot products are clamped to `[-1 + ε, 1 - ε]` before `arccos`.
pub const COS_CLAMP: f64 = 1e-7;
/// Allowed deviation of a class-center norm from one.
pub const CENTER_NORM_TOLERANCE: f64 = 1e-6;
/// Allowed deviation of a feature norm from one.
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct MarginLossParams {
    scale: f64,
    margin: f64,
    dim: usize,
    centers: Vec<f64>,
}

impl MarginLossParams {
    /// `centers` is row-major `classes × dim` with unit rows.
    pub fn new(scale: f64, margin: f64, dim: usize, centers: Vec<f64>) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("scale must be positive, got {scale}")));
        }
        if !(0.0..PI / 2.0).contains(&margin) {
            return Err(Error::InvalidArgument(alloc::format!("margin must lie in [0, pi/2), got {margin}")));
        }
        if dim == 0 || centers.is_empty() || !centers.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument("centers must be a non-empty classes × dim matrix".into()));
        }
        check_unit_rows(&centers, dim, CENTER_NORM_TOLERANCE)?;
        Ok(Self {
            scale,
            margin,
            dim,
            centers,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn classes(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_margin(&self, margin: f64) -> Result<Self> {
        Self::new(self.scale, margin, self.dim, self.centers.clone())
    }

    fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }
}

fn check_unit_rows(rows: &[f64], dim: usize, tol: f64) -> Result<()> {
    for (row, r) in rows.chunks(dim).enumerate() {
        let norm = math::norm(r);
        if (norm - 1.0).abs() > tol {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss {
    pub loss: f64,
    pub per_sample: Vec<f64>,
}

struct SampleTerms {
    logits: Vec<f64>,
    /// `θ_y`, after clamping.
    theta: f64,
    clamped: bool,
}

fn validate(features: &[f64], labels: &[usize], params: &MarginLossParams) -> Result<()> {
    let dim = params.dim;
    if features.len() != labels.len() * dim || labels.is_empty() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} feature values for {} labels of dimension {dim}",
            features.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= params.classes()) {
        return Err(Error::InvalidArgument(alloc::format!("label {bad} outside 0..{}", params.classes())));
    }
    check_unit_rows(features, dim, FEATURE_NORM_TOLERANCE)
}

fn terms(x: &[f64], label: usize, params: &MarginLossParams) -> SampleTerms {
    let s = params.scale;
    let mut logits: Vec<f64> = (0..params.classes()).map(|c| s * math::dot(x, params.center(c))).collect();
    let raw = math::dot(x, params.center(label));
    let lim = 1.0 - COS_CLAMP;
    let c = raw.clamp(-lim, lim);
    let theta = math::acos(c);
    logits[label] = s * math::cos(theta + params.margin);
    SampleTerms {
        logits,
        theta,
        clamped: c != raw,
    }
}

/// Softmax probabilities and `log Σ exp(z) - z_label`, evaluated stably.
fn softmax_xent(logits: &[f64], label: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| math::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    let loss = math::ln(sum) + max - logits[label];
    (exps.into_iter().map(|e| e / sum).collect(), loss)
}

/// Mean additive-angular-margin loss and the per-sample terms.
pub fn arcface_loss(features: &[f64], labels: &[usize], params: &MarginLossParams) -> Result<MarginLoss> {
    validate(features, labels, params)?;
    let per_sample: Vec<f64> = features
        .chunks(params.dim)
        .zip(labels)
        .map(|(x, &y)| softmax_xent(&terms(x, y, params).logits, y).1)
        .collect();
    let loss = per_sample.iter().sum::<f64>() / labels.len() as f64;
    Ok(MarginLoss { loss, per_sample })
}

/// Gradient of the mean loss with respect to each feature row
/// (row-major `n × dim`), treating `x·w_j` as the cosine.
///
/// Fails if `θ_y + m >= π` for any sample.
pub fn arcface_grad(features: &[f64], labels: &[usize], params: &MarginLossParams) -> Result<Vec<f64>> {
    validate(features, labels, params)?;
    let (n, dim, s, m) = (labels.len(), params.dim, params.scale, params.margin);
    let all: Vec<SampleTerms> = features.chunks(dim).zip(labels).map(|(x, &y)| terms(x, y, params)).collect();
    let violating: Vec<usize> = all
        .iter()
        .enumerate()
        .filter(|(_, t)| t.theta + m >= PI)
        .map(|(i, _)| i)
        .collect();
    if !violating.is_empty() {
        return Err(Error::MarginDomain { samples: violating });
    }

    let mut grad = alloc::vec![0.0; n * dim];
    for (i, (t, &y)) in all.iter().zip(labels).enumerate() {
        let (probs, _) = softmax_xent(&t.logits, y);
        let g = &mut grad[i * dim..(i + 1) * dim];
        for (c, &p) in probs.iter().enumerate() {
            // d logit_c / d x = s · w_c, with the chain factor
            // d cos(θ + m) / d cos θ = sin(θ + m) / sin θ on the true class.
            let coeff = if c == y {
                let chain = if t.clamped {
                    0.0
                } else {
                    math::sin(t.theta + m) / math::sin(t.theta)
                };
                (p - 1.0) * s * chain
            } else {
                p * s
            } / n as f64;
            for (gk, wk) in g.iter_mut().zip(params.center(c)) {
                *gk += coeff * wk;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit(theta: f64) -> [f64; 2] {
        [math::cos(theta), math::sin(theta)]
    }

    fn two_class(scale: f64, margin: f64) -> MarginLossParams {
        MarginLossParams::new(scale, margin, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // x0 at 30° from class 0, x1 at 20° from class 1.
        let (s, m) = (4.0, 0.3);
        let x0 = unit(PI / 6.0);
        let x1 = unit(PI / 2.0 - PI / 9.0);
        let features = [x0[0], x0[1], x1[0], x1[1]];
        let got = arcface_loss(&features, &[0, 1], &two_class(s, m)).unwrap();

        let l0 = {
            let t = libm::exp(s * libm::cos(PI / 6.0 + m));
            -libm::log(t / (t + libm::exp(s * libm::cos(PI / 3.0))))
        };
        let l1 = {
            let t = libm::exp(s * libm::cos(PI / 9.0 + m));
            -libm::log(t / (t + libm::exp(s * libm::cos(PI / 2.0 - PI / 9.0))))
        };
        assert!((got.per_sample[0] - l0).abs() < 1e-12);
        assert!((got.per_sample[1] - l1).abs() < 1e-12);
        assert!((got.loss - (l0 + l1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn aligned_feature_loss_vanishes_with_scale() {
        let p = two_class(64.0, 0.0);
        let l = arcface_loss(&[1.0, 0.0], &[0], &p).unwrap();
        assert!(l.loss < 1e-20);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = two_class(1.0, 0.2);
        assert!(matches!(arcface_loss(&[2.0, 0.0], &[0], &p), Err(Error::NotNormalized { row: 0, .. })));
        assert!(arcface_loss(&[1.0, 0.0], &[2], &p).is_err());
        assert!(MarginLossParams::new(1.0, 0.1, 2, vec![1.0, 1.0]).is_err());
        assert!(MarginLossParams::new(1.0, 2.0, 2, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn domain_violation_names_sample() {
        let p = two_class(1.0, 1.5);
        let far = unit(PI - 0.5);
        let features = [1.0, 0.0, far[0], far[1]];
        assert_eq!(arcface_grad(&features, &[0, 0], &p), Err(Error::MarginDomain { samples: vec![1] }));
    }
}
