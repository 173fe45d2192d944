mod common;

use fairaudit_core::margin_loss::{arcface_grad, arcface_loss, MarginLossParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    for row in common::gaussian_rows(rng, n, dim, &[], 1.0) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(row.iter().map(|v| v / norm));
    }
    out
}

struct Fixture {
    features: Vec<f64>,
    labels: Vec<usize>,
    centers: Vec<f64>,
}

fn fixture(seed: u64, n: usize, classes: usize, dim: usize) -> Fixture {
    let mut rng = common::rng(seed);
    Fixture {
        features: unit_rows(&mut rng, n, dim),
        labels: (0..n).map(|_| rng.random_range(0..classes)).collect(),
        centers: unit_rows(&mut rng, classes, dim),
    }
}

/// Plain softmax cross-entropy over `s · x·w_j`, and its gradient.
fn softmax_xent(f: &Fixture, dim: usize, s: f64) -> (f64, Vec<f64>) {
    let n = f.labels.len();
    let classes = f.centers.len() / dim;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * dim];
    for i in 0..n {
        let x = &f.features[i * dim..(i + 1) * dim];
        let z: Vec<f64> = (0..classes)
            .map(|c| s * x.iter().zip(&f.centers[c * dim..(c + 1) * dim]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        loss -= (z[f.labels[i]].exp() / denom).ln();
        for c in 0..classes {
            let p = z[c].exp() / denom - if c == f.labels[i] { 1.0 } else { 0.0 };
            for k in 0..dim {
                grad[i * dim + k] += p * s * f.centers[c * dim + k] / n as f64;
            }
        }
    }
    (loss / n as f64, grad)
}

#[test]
fn zero_margin_unit_scale_is_softmax_cross_entropy() {
    for seed in 0..50 {
        let f = fixture(seed, 6, 5, 8);
        let params = MarginLossParams::new(1.0, 0.0, 8, f.centers.clone()).unwrap();
        let (want, want_grad) = softmax_xent(&f, 8, 1.0);
        let got = arcface_loss(&f.features, &f.labels, &params).unwrap();
        assert!((got.loss - want).abs() < 1e-10);
        let grad = arcface_grad(&f.features, &f.labels, &params).unwrap();
        for (a, b) in grad.iter().zip(&want_grad) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

fn relative_gradient_error(seed: u64) -> f64 {
    let mut f = fixture(seed, 5, 4, 8);
    let params = MarginLossParams::new(8.0, 0.5, 8, f.centers.clone()).unwrap();
    // Reflect any feature outside the domain θ + m < π.
    if let Err(fairaudit_core::Error::MarginDomain { samples }) = arcface_grad(&f.features, &f.labels, &params) {
        for i in samples {
            f.features[i * 8..(i + 1) * 8].iter_mut().for_each(|v| *v = -*v);
        }
    }
    let analytic = arcface_grad(&f.features, &f.labels, &params).unwrap();
    let h = 1e-6;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for k in 0..f.features.len() {
        let (mut up, mut down) = (f.features.clone(), f.features.clone());
        up[k] += h;
        down[k] -= h;
        let fd = (arcface_loss(&up, &f.labels, &params).unwrap().loss - arcface_loss(&down, &f.labels, &params).unwrap().loss)
            / (2.0 * h);
        worst = worst.max((fd - analytic[k]).abs());
        scale = scale.max(analytic[k].abs());
    }
    worst / scale
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..100 {
        let err = relative_gradient_error(seed);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn loss_grows_with_margin_and_stays_non_negative() {
    for seed in 0..20 {
        let f = fixture(seed, 8, 3, 6);
        let mut previous: Option<Vec<f64>> = None;
        for step in 0..15 {
            let m = step as f64 * 0.1;
            let params = MarginLossParams::new(16.0, m, 6, f.centers.clone()).unwrap();
            let l = arcface_loss(&f.features, &f.labels, &params).unwrap();
            assert!(l.per_sample.iter().all(|&v| v >= 0.0));
            if let Some(prev) = &previous {
                for (i, (a, b)) in prev.iter().zip(&l.per_sample).enumerate() {
                    // Monotone only while θ + m stays below π.
                    let x = &f.features[i * 6..(i + 1) * 6];
                    let c = &f.centers[f.labels[i] * 6..(f.labels[i] + 1) * 6];
                    let theta = x.iter().zip(c).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0).acos();
                    if theta + m < std::f64::consts::PI {
                        assert!(b >= a, "seed {seed} sample {i} m {m}");
                    }
                }
            }
            previous = Some(l.per_sample);
        }
    }
}

#[test]
fn centred_feature_has_smaller_gradient_than_misclassified_ones() {
    let dim = 3;
    let centers = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let s = 0.5f64.sqrt();
    // Row 0 sits on its center; rows 1 and 2 lie closer to a wrong class.
    let features = vec![1.0, 0.0, 0.0, 0.2, 0.96f64.sqrt(), 0.0, 0.0, s, s];
    let labels = vec![0, 0, 1];
    let params = MarginLossParams::new(10.0, 0.0, dim, centers).unwrap();
    let g = arcface_grad(&features, &labels, &params).unwrap();
    let norm = |i: usize| g[i * dim..(i + 1) * dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(0) < norm(1));
    assert!(norm(0) < norm(2));
}
