//! Exact t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const ENTROPY_TOL: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 200;
const INIT_SIGMA: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;
const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 5.0,
            iterations: 1000,
            learning_rate: 100.0,
            early_exaggeration_factor: 4.0,
            early_exaggeration_iters: 100,
            seed: 7,
        }
    }
}

impl TsneConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_perplexity(mut self, perplexity: f64) -> Self {
        self.perplexity = perplexity;
        self
    }

    /// Checks the config against a point count `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        validate_perplexity(self.perplexity, n)?;
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.early_exaggeration_iters > self.iterations {
            return Err(Error::invalid(
                "early_exaggeration_iters cannot exceed iterations",
            ));
        }
        if self.early_exaggeration_factor.is_nan() || self.early_exaggeration_factor <= 0.0 {
            return Err(Error::invalid("early_exaggeration_factor must be positive"));
        }
        Ok(())
    }
}

fn validate_perplexity(perplexity: f64, n: usize) -> Result<()> {
    // A row has n-1 neighbours, so its entropy cannot exceed ln(n-1).
    if !(perplexity > 1.0 && perplexity <= (n - 1) as f64) {
        return Err(Error::invalid(format!(
            "perplexity {perplexity} outside (1, {}] for {n} points",
            n - 1
        )));
    }
    Ok(())
}

/// Joint affinities `P` (row-major, `n × n`) and the achieved entropy of each
/// conditional row.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    pub p: Vec<f64>,
    pub row_entropies: Vec<f64>,
}

impl Affinities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

fn squared_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional row for precision `beta`; returns (probabilities, entropy).
/// `dist` is shifted by its minimum so the largest kernel value is 1.
fn conditional_row(dist: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = dist.iter().map(|d| (-(d - min) * beta).exp()).collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / z).collect();
    let mean_shifted: f64 = p.iter().zip(dist).map(|(pi, d)| pi * (d - min)).sum();
    (p, z.ln() + beta * mean_shifted)
}

/// Gaussian affinities with per-point bandwidth chosen by bisection so each
/// row's Shannon entropy equals `ln(perplexity)`, symmetrised as
/// `(P_cond + P_condᵀ) / 2n`.
pub fn pairwise_affinities(m: &EmbeddingMatrix, perplexity: f64) -> Result<Affinities> {
    let n = m.len();
    validate_perplexity(perplexity, n)?;
    let target = perplexity.ln();
    let d = squared_distances(m.rows());
    let mut cond = vec![0.0; n * n];
    let mut row_entropies = Vec::with_capacity(n);
    for i in 0..n {
        let dist: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i * n + j]).collect();
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut best = conditional_row(&dist, beta);
        for _ in 0..MAX_BISECTION_STEPS {
            let diff = best.1 - target;
            if diff.abs() < 1e-12 {
                break;
            }
            // entropy falls as beta rises
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
            best = conditional_row(&dist, beta);
        }
        if (best.1 - target).abs() > ENTROPY_TOL || !best.1.is_finite() {
            return Err(Error::BisectionFailed {
                row: i,
                entropy: best.1,
                target,
            });
        }
        row_entropies.push(best.1);
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[i * n + j] = best.0[k];
        }
    }
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
        }
    }
    Ok(Affinities {
        n,
        p,
        row_entropies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL(P‖Q) after the last iteration.
    pub kl: f64,
    /// KL recorded every 50 iterations and at the end, as (iteration, KL).
    pub kl_trace: Vec<(usize, f64)>,
}

fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(Q_FLOOR)).ln())
        .sum()
}

/// Student-t kernel numerators and normalised Q.
fn low_dim_affinities(y: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            total += 2.0 * v;
        }
    }
    let q = num.iter().map(|v| v / total).collect();
    (num, q)
}

/// Gradient descent on KL(P‖Q) with momentum and per-coordinate gains.
/// Momentum is 0.5 during early exaggeration and 0.8 afterwards.
pub fn tsne(m: &EmbeddingMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = m.len();
    cfg.validate(n)?;
    let aff = pairwise_affinities(m, cfg.perplexity)?;
    let p = &aff.p;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_SIGMA).expect("valid sigma");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0_f64; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    let mut kl_trace = Vec::new();

    for iter in 0..cfg.iterations {
        let exaggerating = iter < cfg.early_exaggeration_iters;
        let exag = if exaggerating { cfg.early_exaggeration_factor } else { 1.0 };
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        let (num, q) = low_dim_affinities(&y);

        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = i * n + j;
                let mult = 4.0 * (exag * p[k] - q[k]) * num[k];
                grad[0] += mult * (y[i][0] - y[j][0]);
                grad[1] += mult * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                let same_sign = (grad[c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(MIN_GAIN);
                update[i][c] = momentum * update[i][c] - cfg.learning_rate * gains[i][c] * grad[c];
            }
        }
        let mut mean = [0.0; 2];
        for i in 0..n {
            for c in 0..2 {
                y[i][c] += update[i][c];
                mean[c] += y[i][c] / n as f64;
            }
        }
        for point in y.iter_mut() {
            point[0] -= mean[0];
            point[1] -= mean[1];
        }
        if let Some(i) = y.iter().position(|pt| !pt[0].is_finite() || !pt[1].is_finite()) {
            return Err(Error::Numerical {
                iteration: iter + 1,
                what: format!("non-finite coordinate for point {i}"),
            });
        }
        let done = iter + 1;
        if done % 50 == 0 || done == cfg.iterations {
            let (_, q) = low_dim_affinities(&y);
            let kl = kl_divergence(p, &q);
            if !kl.is_finite() {
                return Err(Error::Numerical {
                    iteration: done,
                    what: "non-finite KL divergence".into(),
                });
            }
            kl_trace.push((done, kl));
        }
    }
    let (_, q) = low_dim_affinities(&y);
    let kl = kl_divergence(p, &q);
    if cfg.iterations == 0 {
        kl_trace.push((0, kl));
    }
    Ok(TsneResult {
        coords: y,
        kl,
        kl_trace,
    })
}
