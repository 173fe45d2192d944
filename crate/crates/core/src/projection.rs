//! Two-dimensional projections for inspecting the embedding space: exact
//! t-SNE and a PCA baseline.
//!
//! t-SNE follows the usual exact formulation. Per-point Gaussian bandwidths
//! are found by bisection so each conditional distribution has the requested
//! perplexity, the joint affinities are `(P + Pᵀ) / 2n`, the low-dimensional
//! kernel is Student-t with one degree of freedom, and `KL(P‖Q)` is minimized
//! by gradient descent with momentum, adaptive gains and early exaggeration.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cohort::EmbeddingSet;
use crate::error::{Error, Result};
use crate::math;

const ENTROPY_TOLERANCE: f64 = 1e-6;
const MAX_BISECTION_STEPS: usize = 200;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_std: f64,
    /// KL is recorded every `log_every` iterations (and at the end of
    /// exaggeration and of the run).
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_std: 1e-4,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TsneConfig {
    fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if n < 8 {
            return bad(alloc::format!("t-SNE needs at least 8 points, got {n}"));
        }
        if !(self.perplexity > 1.0) || self.perplexity >= (n as f64 - 1.0) / 3.0 {
            return bad(alloc::format!(
                "perplexity {} must lie in (1, {}) for {n} points",
                self.perplexity,
                (n as f64 - 1.0) / 3.0
            ));
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return bad("iterations, learning rate and exaggeration must be positive".into());
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    Tsne,
    Pca,
}

impl ProjectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionMethod::Tsne => "tsne",
            ProjectionMethod::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub method: ProjectionMethod,
    /// Final `KL(P‖Q)` for t-SNE; retained variance fraction for PCA.
    pub final_objective: f64,
    /// `(iteration, KL)` checkpoints; empty for PCA.
    pub trace: Vec<(usize, f64)>,
    /// t-SNE rows whose bandwidth search missed the entropy tolerance.
    pub unconverged_rows: Vec<usize>,
    /// PCA: the second component carries (numerically) no variance.
    pub degenerate_component: bool,
}

/// Row-stochastic conditional affinities `p_{j|i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n × n`, zero diagonal.
    pub p: Vec<f64>,
    /// Gaussian precision `1 / 2σ²` chosen per row.
    pub betas: Vec<f64>,
    pub unconverged: Vec<usize>,
}

impl Affinities {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n..(i + 1) * self.n]
    }
}

/// Shannon entropy of a probability row, in bits.
pub fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * math::ln(p)).sum::<f64>() / core::f64::consts::LN_2
}

/// Bisects each row's Gaussian precision until the row entropy equals
/// `log2(perplexity)`.
///
/// Rows that do not reach the tolerance within the step budget keep their
/// last iterate and are listed in [`Affinities::unconverged`]; equidistant
/// rows, whose entropy does not depend on the bandwidth, end up there.
pub fn conditional_affinities(sq_distances: &[f64], n: usize, perplexity: f64) -> Result<Affinities> {
    if n < 4 || sq_distances.len() != n * n {
        return Err(Error::InvalidArgument(alloc::format!("need an n×n distance matrix with n >= 4 (n = {n})")));
    }
    if !(perplexity > 0.0) || perplexity > (n - 1) as f64 {
        return Err(Error::InvalidArgument(alloc::format!("perplexity {perplexity} infeasible for {n} points")));
    }
    let target = libm::log2(perplexity);
    let mut p = alloc::vec![0.0; n * n];
    let mut betas = alloc::vec![1.0; n];
    let mut unconverged = Vec::new();

    for i in 0..n {
        let d = &sq_distances[i * n..(i + 1) * n];
        let d_min = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
        let row = &mut p[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        let mut converged = false;
        for _ in 0..MAX_BISECTION_STEPS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    let shifted = d[j] - d_min;
                    let w = math::exp(-beta * shifted);
                    weighted += w * shifted;
                    w
                };
                sum += row[j];
            }
            let h = (math::ln(sum) + beta * weighted / sum) / core::f64::consts::LN_2;
            row.iter_mut().for_each(|v| *v /= sum);
            let diff = h - target;
            if diff.abs() < ENTROPY_TOLERANCE {
                converged = true;
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        betas[i] = beta;
        if !converged {
            unconverged.push(i);
        }
    }
    Ok(Affinities { n, p, betas, unconverged })
}

/// Symmetrized joint affinities `(P + Pᵀ) / 2n`, summing to one.
pub fn joint_affinities(cond: &Affinities) -> Vec<f64> {
    let n = cond.n;
    let mut joint = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (cond.p[i * n + j] + cond.p[j * n + i]) / (2.0 * n as f64);
        }
    }
    joint
}

fn student_t(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    1.0 / (1.0 + dx * dx + dy * dy)
}

fn kernel_sum(y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += student_t(&y[i], &y[j]);
            }
        }
    }
    z
}

/// `KL(P‖Q)` for joint affinities `p` (row-major `n × n`) and layout `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let z = kernel_sum(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = student_t(&y[i], &y[j]) / z;
                kl += pij * math::ln(pij / q);
            }
        }
    }
    kl
}

/// Analytic gradient `4 Σ_j (p_ij − q_ij)(y_i − y_j) / (1 + |y_i − y_j|²)`.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = y.len();
    let z = kernel_sum(y);
    let mut grad = alloc::vec![[0.0; 2]; n];
    for i in 0..n {
        let mut g = [0.0; 2];
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = student_t(&y[i], &y[j]);
            let coeff = 4.0 * (p[i * n + j] - w / z) * w;
            g[0] += coeff * (y[i][0] - y[j][0]);
            g[1] += coeff * (y[i][1] - y[j][1]);
        }
        grad[i] = g;
    }
    grad
}

fn pairwise_sq_distances(e: &EmbeddingSet) -> Vec<f64> {
    let n = e.len();
    let mut d = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = math::squared_distance(e.row(i), e.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Exact t-SNE of the embedding rows. Deterministic for a fixed seed.
pub fn tsne(e: &EmbeddingSet, cfg: &TsneConfig) -> Result<Projection2D> {
    let n = e.len();
    cfg.validate(n)?;
    let cond = conditional_affinities(&pairwise_sq_distances(e), n, cfg.perplexity)?;
    let p = joint_affinities(&cond);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_std).map_err(|_| Error::InvalidArgument("init_std".into()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = alloc::vec![[0.0; 2]; n];
    let mut gains = alloc::vec![[1.0f64; 2]; n];
    let mut trace = Vec::new();

    let exaggerated: Vec<f64> = p.iter().map(|v| v * cfg.early_exaggeration).collect();
    for iter in 0..cfg.iterations {
        let active = if iter < cfg.exaggeration_iters { &exaggerated } else { &p };
        let grad = kl_gradient(active, &y);
        let momentum = if iter < cfg.momentum_switch {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(MIN_GAIN)
                };
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        let mean = [
            y.iter().map(|v| v[0]).sum::<f64>() / n as f64,
            y.iter().map(|v| v[1]).sum::<f64>() / n as f64,
        ];
        for v in y.iter_mut() {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
        if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::NumericalOverflow { iteration: iter });
        }
        let step = iter + 1;
        if step == cfg.exaggeration_iters || step == cfg.iterations || (cfg.log_every > 0 && step % cfg.log_every == 0) {
            trace.push((step, kl_divergence(&p, &y)));
        }
    }
    let final_objective = trace.last().map_or_else(|| kl_divergence(&p, &y), |t| t.1);
    Ok(Projection2D {
        ids: e.ids().to_vec(),
        coords: y,
        method: ProjectionMethod::Tsne,
        final_objective,
        trace,
        unconverged_rows: cond.unconverged,
        degenerate_component: false,
    })
}

struct Principal {
    centred: DMatrix<f64>,
    axes: [Vec<f64>; 2],
    variances: [f64; 2],
    total: f64,
}

fn principal_components(e: &EmbeddingSet) -> Result<Principal> {
    let (n, dim) = (e.len(), e.dim());
    if n < 3 || dim < 2 {
        return Err(Error::InvalidArgument(alloc::format!("PCA needs n >= 3 and dim >= 2 (n = {n}, dim = {dim})")));
    }
    let mut mean = alloc::vec![0.0; dim];
    for r in e.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, dim, |i, j| e.row(i)[j] - mean[j]);
    let eig = SymmetricEigen::new(centred.transpose() * &centred / n as f64);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all points coincide; no variance to project".into()));
    }
    let axis = |k: usize| {
        let col = eig.eigenvectors.column(k);
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        col.iter().map(|v| sign * v).collect::<Vec<f64>>()
    };
    Ok(Principal {
        axes: [axis(order[0]), axis(order[1])],
        variances: [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)],
        centred,
        total,
    })
}

/// Projection onto the top two principal directions of the centred rows.
///
/// Each component is signed so its largest-magnitude loading is positive.
pub fn pca2(e: &EmbeddingSet) -> Result<Projection2D> {
    let pc = principal_components(e)?;
    let coords = (0..e.len())
        .map(|i| {
            let row = pc.centred.row(i);
            let proj = |axis: &[f64]| row.iter().zip(axis).map(|(x, a)| x * a).sum::<f64>();
            [proj(&pc.axes[0]), proj(&pc.axes[1])]
        })
        .collect();
    let [l1, l2] = pc.variances;
    Ok(Projection2D {
        ids: e.ids().to_vec(),
        coords,
        method: ProjectionMethod::Pca,
        final_objective: (l1 + l2) / pc.total,
        trace: Vec::new(),
        unconverged_rows: Vec::new(),
        degenerate_component: l2 <= 1e-12 * pc.total,
    })
}

/// The two unit principal directions used by [`pca2`].
pub fn principal_axes(e: &EmbeddingSet) -> Result<[Vec<f64>; 2]> {
    Ok(principal_components(e)?.axes)
}
