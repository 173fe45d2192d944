mod common;

use fairaudit_core::projection::{
    conditional_affinities, entropy_bits, joint_affinities, kl_divergence, kl_gradient, pca2, principal_axes, tsne,
    ProjectionMethod, TsneConfig,
};
use fairaudit_core::{EmbeddingSet, Error};
use rand::Rng;

fn sq_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    d
}

#[test]
fn equidistant_points_get_uniform_rows() {
    // Simplex corners: every off-diagonal distance is 2.
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|k| if k == i { 1.0 } else { 0.0 }).collect()).collect();
    let a = conditional_affinities(&sq_distances(&rows), 4, 2.0).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 0.0 } else { 1.0 / 3.0 };
            assert!((a.row(i)[j] - want).abs() < 1e-15);
        }
    }
    // Entropy is log2(3) whatever the bandwidth, so no row can hit 1 bit.
    assert_eq!(a.unconverged, vec![0, 1, 2, 3]);
}

#[test]
fn row_entropy_hits_perplexity() {
    let mut rng = common::rng(4);
    for perplexity in [5.0, 12.0, 30.0] {
        let rows = common::gaussian_rows(&mut rng, 50, 6, &[], 1.0);
        let a = conditional_affinities(&sq_distances(&rows), 50, perplexity).unwrap();
        assert!(a.unconverged.is_empty());
        for i in 0..50 {
            let row = a.row(i);
            assert_eq!(row[i], 0.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((entropy_bits(row) - perplexity.log2()).abs() < 1e-4);
        }
        let p = joint_affinities(&a);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..50 {
            for j in 0..50 {
                assert_eq!(p[i * 50 + j], p[j * 50 + i]);
            }
        }
    }
}

#[test]
fn duplicated_point_dominates_its_row() {
    let mut rng = common::rng(5);
    let mut rows = common::gaussian_rows(&mut rng, 20, 4, &[], 1.0);
    rows[7] = rows[3].clone();
    let a = conditional_affinities(&sq_distances(&rows), 20, 5.0).unwrap();
    let row = a.row(3);
    let max = row.iter().copied().fold(0.0, f64::max);
    assert_eq!(row[7], max);
}

fn relative_gradient_error(seed: u64) -> f64 {
    let mut rng = common::rng(seed);
    let n = 10;
    let rows = common::gaussian_rows(&mut rng, n, 5, &[], 1.0);
    let p = joint_affinities(&conditional_affinities(&sq_distances(&rows), n, 3.0).unwrap());
    let y: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let analytic = kl_gradient(&p, &y);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for d in 0..2 {
            let (mut up, mut down) = (y.clone(), y.clone());
            up[i][d] += h;
            down[i][d] -= h;
            let fd = (kl_divergence(&p, &up) - kl_divergence(&p, &down)) / (2.0 * h);
            worst = worst.max((fd - analytic[i][d]).abs());
            scale = scale.max(analytic[i][d].abs());
        }
    }
    worst / scale
}

#[test]
fn kl_gradient_matches_finite_differences() {
    for seed in 0..100 {
        let err = relative_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

fn blobs(seed: u64) -> EmbeddingSet {
    let mut rng = common::rng(seed);
    let mut rows = common::gaussian_rows(&mut rng, 20, 10, &[], 1.0);
    rows.extend(common::gaussian_rows(&mut rng, 20, 10, &[8.0; 10], 1.0));
    common::embedding_set(rows)
}

/// Best accuracy of any line through the plane, over 720 directions.
fn linear_probe(coords: &[[f64; 2]], labels: &[bool]) -> f64 {
    let mut best = 0.0f64;
    for k in 0..720 {
        let t = k as f64 * std::f64::consts::PI / 360.0;
        let mut proj: Vec<(f64, bool)> = coords.iter().zip(labels).map(|(c, &l)| (c[0] * t.cos() + c[1] * t.sin(), l)).collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total_pos = labels.iter().filter(|&&l| l).count();
        let mut below_pos = 0;
        for (cut, &(_, l)) in proj.iter().enumerate() {
            // Points before `cut` predicted negative.
            let correct = (cut - below_pos) + (total_pos - below_pos);
            best = best.max(correct as f64 / coords.len() as f64);
            if l {
                below_pos += 1;
            }
        }
    }
    best
}

fn small_config(seed: u64) -> TsneConfig {
    TsneConfig {
        perplexity: 10.0,
        seed,
        ..TsneConfig::default()
    }
}

#[test]
fn separated_blobs_stay_separable() {
    let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
    let mut separable = 0;
    for seed in 0..20 {
        let proj = tsne(&blobs(seed), &small_config(seed)).unwrap();
        assert_eq!(proj.method, ProjectionMethod::Tsne);
        assert!(proj.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
        if linear_probe(&proj.coords, &labels) >= 0.95 {
            separable += 1;
        }
    }
    assert!(separable >= 18, "{separable}/20 separable");
}

#[test]
fn fixed_seed_is_bit_identical() {
    let e = blobs(1);
    let a = tsne(&e, &small_config(9)).unwrap();
    let b = tsne(&e, &small_config(9)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.coords, tsne(&e, &small_config(10)).unwrap().coords);
}

#[test]
fn objective_settles_after_exaggeration() {
    let cfg = small_config(2);
    let proj = tsne(&blobs(2), &cfg).unwrap();
    let at_switch = proj.trace.iter().find(|t| t.0 == cfg.exaggeration_iters).unwrap().1;
    let (last_iter, last) = *proj.trace.last().unwrap();
    assert_eq!(last_iter, cfg.iterations);
    assert_eq!(last, proj.final_objective);
    assert!(proj.trace.iter().all(|t| t.1 >= 0.0));
    assert!(last <= at_switch + 1e-6);
}

fn rotate(e: &EmbeddingSet, angle: f64) -> EmbeddingSet {
    let (c, s) = (angle.cos(), angle.sin());
    let rows: Vec<Vec<f64>> = e
        .rows()
        .map(|r| {
            let mut r = r.to_vec();
            let (x, y) = (r[0], r[1]);
            r[0] = c * x - s * y;
            r[1] = s * x + c * y;
            r
        })
        .collect();
    common::embedding_set(rows)
}

#[test]
fn quarter_turn_gives_identical_layout() {
    // (x, y) -> (-y, x) permutes two exact squared differences, so every
    // pairwise distance is reproduced bit for bit.
    let e = blobs(3);
    let rows: Vec<Vec<f64>> = e
        .rows()
        .map(|r| {
            let mut r = r.to_vec();
            let (x, y) = (r[0], r[1]);
            r[0] = -y;
            r[1] = x;
            r
        })
        .collect();
    let a = tsne(&e, &small_config(4)).unwrap();
    let b = tsne(&common::embedding_set(rows), &small_config(4)).unwrap();
    assert_eq!(a.coords, b.coords);
}

#[test]
fn generic_rotation_leaves_affinities_unchanged() {
    let e = blobs(3);
    let r = rotate(&e, 0.7);
    let rows = |e: &EmbeddingSet| e.rows().map(<[f64]>::to_vec).collect::<Vec<_>>();
    let p = joint_affinities(&conditional_affinities(&sq_distances(&rows(&e)), 40, 10.0).unwrap());
    let q = joint_affinities(&conditional_affinities(&sq_distances(&rows(&r)), 40, 10.0).unwrap());
    for (x, y) in p.iter().zip(&q) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn tsne_rejects_small_or_infeasible_inputs() {
    let e = blobs(0);
    let cfg = TsneConfig {
        perplexity: 13.0,
        ..TsneConfig::default()
    };
    assert!(matches!(tsne(&e, &cfg), Err(Error::InvalidArgument(_))));
    let tiny = common::embedding_set(vec![vec![0.0, 1.0]; 5]);
    assert!(tsne(&tiny, &small_config(0)).is_err());
}

#[test]
fn tsne_reports_overflow_with_iteration() {
    let cfg = TsneConfig {
        perplexity: 10.0,
        learning_rate: 1e300,
        ..TsneConfig::default()
    };
    match tsne(&blobs(0), &cfg) {
        Err(Error::NumericalOverflow { iteration }) => assert!(iteration < cfg.iterations),
        other => panic!("expected overflow, got {other:?}"),
    }
}

#[test]
fn plane_in_ten_dimensions_is_fully_retained() {
    let mut rng = common::rng(6);
    let u: Vec<f64> = (0..10).map(|k| if k == 2 { 1.0 } else { 0.0 }).collect();
    let v: Vec<f64> = (0..10).map(|k| if k == 7 { 0.6 } else if k == 8 { 0.8 } else { 0.0 }).collect();
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
            (0..10).map(|k| 1.0 + a * u[k] + b * v[k]).collect()
        })
        .collect();
    let p = pca2(&common::embedding_set(rows)).unwrap();
    assert_eq!(p.method, ProjectionMethod::Pca);
    assert!((p.final_objective - 1.0).abs() < 1e-9);
    assert!(!p.degenerate_component);
}

#[test]
fn isotropic_cloud_retains_two_over_dim() {
    let mut rng = common::rng(7);
    let rows = common::gaussian_rows(&mut rng, 10_000, 10, &[], 1.0);
    let p = pca2(&common::embedding_set(rows)).unwrap();
    assert!((p.final_objective - 0.2).abs() < 0.02, "{}", p.final_objective);
}

#[test]
fn duplicating_the_data_keeps_axes() {
    let mut rng = common::rng(8);
    let rows = common::gaussian_rows(&mut rng, 30, 5, &[], 1.0);
    let twice: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
    let a = principal_axes(&common::embedding_set(rows)).unwrap();
    let b = principal_axes(&common::embedding_set(twice)).unwrap();
    for k in 0..2 {
        for (x, y) in a[k].iter().zip(&b[k]) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn translation_leaves_pca_unchanged() {
    let mut rng = common::rng(9);
    let rows = common::gaussian_rows(&mut rng, 30, 5, &[], 1.0);
    let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + 5.0).collect()).collect();
    let a = pca2(&common::embedding_set(rows)).unwrap();
    let b = pca2(&common::embedding_set(shifted)).unwrap();
    for (p, q) in a.coords.iter().zip(&b.coords) {
        assert!((p[0].abs() - q[0].abs()).abs() < 1e-9 && (p[1].abs() - q[1].abs()).abs() < 1e-9);
    }
}

#[test]
fn collinear_points_flag_second_component() {
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
    let p = pca2(&common::embedding_set(rows)).unwrap();
    assert!(p.degenerate_component);
    let same = common::embedding_set(vec![vec![1.0, 2.0]; 4]);
    assert!(matches!(pca2(&same), Err(Error::Degenerate(_))));
}
