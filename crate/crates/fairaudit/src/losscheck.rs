//! Numerical self-check of the margin loss on random unit features.

use fairaudit_core::margin_loss::{arcface_grad, arcface_loss, MarginLossParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, StageExt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCheckConfig {
    pub seed: u64,
    pub cases: usize,
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub scale: f64,
    pub margin: f64,
    pub step: f64,
}

impl Default for LossCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            samples: 5,
            classes: 4,
            dim: 8,
            scale: 8.0,
            margin: 0.5,
            step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LossCheckReport {
    pub cases: usize,
    /// Largest `|loss - CE|` and gradient gap at `m = 0, s = 1`.
    pub softmax_max_error: f64,
    /// Largest relative gap between analytic and central-difference gradients.
    pub gradient_max_relative_error: f64,
    /// Cases whose per-sample loss decreased somewhere on `m = 0, 0.1, ..., margin`.
    pub monotonicity_violations: usize,
    /// Samples flipped to stay inside `θ + m < π`.
    pub reflected_samples: usize,
}

impl LossCheckReport {
    pub fn passed(&self) -> bool {
        self.softmax_max_error < 1e-10 && self.gradient_max_relative_error < 1e-5 && self.monotonicity_violations == 0
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(row.iter().map(|v| v / norm));
    }
    out
}

fn softmax_xent(features: &[f64], labels: &[usize], centers: &[f64], dim: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let classes = centers.len() / dim;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * dim];
    for i in 0..n {
        let x = &features[i * dim..(i + 1) * dim];
        let z: Vec<f64> = (0..classes)
            .map(|c| x.iter().zip(&centers[c * dim..(c + 1) * dim]).map(|(a, b)| a * b).sum())
            .collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        loss -= (z[labels[i]].exp() / denom).ln();
        for c in 0..classes {
            let p = z[c].exp() / denom - if c == labels[i] { 1.0 } else { 0.0 };
            for k in 0..dim {
                grad[i * dim + k] += p * centers[c * dim + k] / n as f64;
            }
        }
    }
    (loss / n as f64, grad)
}

pub fn run_loss_check(cfg: &LossCheckConfig) -> Result<LossCheckReport> {
    let dim = cfg.dim;
    let mut report = LossCheckReport {
        cases: cfg.cases,
        softmax_max_error: 0.0,
        gradient_max_relative_error: 0.0,
        monotonicity_violations: 0,
        reflected_samples: 0,
    };
    for case in 0..cfg.cases {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(case as u64);
        let mut features = unit_rows(&mut rng, cfg.samples, dim);
        let labels: Vec<usize> = (0..cfg.samples).map(|_| rng.random_range(0..cfg.classes)).collect();
        let centers = unit_rows(&mut rng, cfg.classes, dim);

        let plain = MarginLossParams::new(1.0, 0.0, dim, centers.clone()).stage("loss check")?;
        let (ce, ce_grad) = softmax_xent(&features, &labels, &centers, dim);
        let got = arcface_loss(&features, &labels, &plain).stage("loss check")?;
        let grad = arcface_grad(&features, &labels, &plain).stage("loss check")?;
        let gap = grad.iter().zip(&ce_grad).map(|(a, b)| (a - b).abs()).fold((got.loss - ce).abs(), f64::max);
        report.softmax_max_error = report.softmax_max_error.max(gap);

        let params = MarginLossParams::new(cfg.scale, cfg.margin, dim, centers.clone()).stage("loss check")?;
        if let Err(fairaudit_core::Error::MarginDomain { samples }) = arcface_grad(&features, &labels, &params) {
            report.reflected_samples += samples.len();
            for i in samples {
                features[i * dim..(i + 1) * dim].iter_mut().for_each(|v| *v = -*v);
            }
        }
        let analytic = arcface_grad(&features, &labels, &params).stage("loss check")?;
        let (mut worst, mut size) = (0.0f64, 0.0f64);
        for k in 0..features.len() {
            let (mut up, mut down) = (features.clone(), features.clone());
            up[k] += cfg.step;
            down[k] -= cfg.step;
            let fd = (arcface_loss(&up, &labels, &params).stage("loss check")?.loss
                - arcface_loss(&down, &labels, &params).stage("loss check")?.loss)
                / (2.0 * cfg.step);
            worst = worst.max((fd - analytic[k]).abs());
            size = size.max(analytic[k].abs());
        }
        if size > 0.0 {
            report.gradient_max_relative_error = report.gradient_max_relative_error.max(worst / size);
        }

        let steps = (cfg.margin / 0.1).floor() as usize;
        let mut previous: Option<Vec<f64>> = None;
        let mut violated = false;
        for k in 0..=steps {
            let p = params.with_margin(k as f64 * 0.1).stage("loss check")?;
            let l = arcface_loss(&features, &labels, &p).stage("loss check")?.per_sample;
            if let Some(prev) = &previous {
                violated |= prev.iter().zip(&l).any(|(a, b)| b < a);
            }
            previous = Some(l);
        }
        report.monotonicity_violations += violated as usize;
    }
    Ok(report)
}
