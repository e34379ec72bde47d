//! Linear multi-step analysis of memory-averaged gradient descent on
//! quadratics: the block system matrix, its scalar reduction, the
//! contraction factor λ, direct simulation of the recursion and a Monte
//! Carlo check of the resulting suboptimality bound.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EmoError, Result};
use crate::memstore::{ControllerKind, MemoryStore};
use crate::numcore::linalg::companion_spectral_radius;
use crate::numcore::{spectral_norm, SmallMatrix, Tensor, TensorSet};
use crate::optim::{emo_step, order_by_slot, Aggregation};
use crate::taskgen::QuadraticTask;

/// Iterates whose magnitude passes this are reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Size of the log-spaced τ grid used for λ_max.
pub const TAU_GRID_POINTS: usize = 64;

/// `θ_{t+1} = θ_t − α Σ_s w_s g_{t−s}` with `S = weights.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepSpec {
    pub weights: Vec<f64>,
    pub alpha: f64,
}

impl MultiStepSpec {
    pub fn new(weights: Vec<f64>, alpha: f64) -> Result<Self> {
        let s = Self { weights, alpha };
        s.validate()?;
        Ok(s)
    }

    /// `S` equal weights `1/S`, which is what mean aggregation over a full
    /// FIFO memory of `S − 1` past gradients amounts to.
    pub fn uniform(steps: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![1.0 / steps.max(1) as f64; steps], alpha)
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(EmoError::Config("multi-step system needs S >= 1".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(EmoError::Config(format!("weights must lie in [0, 1], got {w}")));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(EmoError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Block matrix of the stacked recursion on `(Δθ_t, …, Δθ_{t−S+1})`.
///
/// The first block row holds `I − α w_0 R_0` and `−α w_s R_s`; below it
/// sit identity blocks shifting the history down by one.
pub fn build_system_matrix(spec: &MultiStepSpec, rates: &[SmallMatrix]) -> Result<SmallMatrix> {
    spec.validate()?;
    let s = spec.steps();
    if rates.len() != s {
        return Err(EmoError::Shape(format!("{} rate matrices for S = {s}", rates.len())));
    }
    let d = rates[0].rows();
    for r in rates {
        if r.rows() != d || r.cols() != d {
            return Err(EmoError::Shape(format!("rate matrix is {}x{}, expected {d}x{d}", r.rows(), r.cols())));
        }
        if !r.is_symmetric(1e-12) {
            return Err(EmoError::Config("rate matrices must be symmetric".into()));
        }
    }
    let n = s * d;
    let mut a = SmallMatrix::zeros(n, n);
    for (b, r) in rates.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                let eye = if b == 0 && i == j { 1.0 } else { 0.0 };
                a.set(i, b * d + j, eye - spec.alpha * spec.weights[b] * r.get(i, j));
            }
        }
    }
    for b in 1..s {
        for i in 0..d {
            a.set(b * d + i, (b - 1) * d + i, 1.0);
        }
    }
    Ok(a)
}

/// The `S×S` companion matrix obtained when every rate block is `τ I`.
pub fn reduced_matrix(spec: &MultiStepSpec, tau: f64) -> SmallMatrix {
    let s = spec.steps();
    let mut a = SmallMatrix::zeros(s, s);
    for (j, w) in spec.weights.iter().enumerate() {
        let eye = if j == 0 { 1.0 } else { 0.0 };
        a.set(0, j, eye - spec.alpha * w * tau);
    }
    for i in 1..s {
        a.set(i, i - 1, 1.0);
    }
    a
}

/// `λ(τ)`: spectral norm of the reduced matrix.
pub fn lambda_at(spec: &MultiStepSpec, tau: f64) -> Result<f64> {
    spectral_norm(&reduced_matrix(spec, tau))
}

/// Spectral radius of the reduced matrix. Reported alongside λ; it governs
/// the asymptotic rate but does not enter the bound.
pub fn spectral_radius_at(spec: &MultiStepSpec, tau: f64) -> f64 {
    let m = reduced_matrix(spec, tau);
    let row: Vec<f64> = (0..spec.steps()).map(|j| m.get(0, j)).collect();
    companion_spectral_radius(&row)
}

/// `n` log-spaced points from `mu` to `l` inclusive.
pub fn tau_grid(mu: f64, l: f64, n: usize) -> Result<Vec<f64>> {
    if !(mu > 0.0 && l >= mu && l.is_finite()) {
        return Err(EmoError::Config(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
    }
    if n == 0 {
        return Err(EmoError::Empty("tau grid".into()));
    }
    if n == 1 || mu == l {
        return Ok(vec![mu]);
    }
    let (a, b) = (mu.ln(), l.ln());
    let mut grid: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    grid[0] = mu;
    grid[n - 1] = l;
    Ok(grid)
}

/// Largest λ(τ) over `grid`.
pub fn lambda_max_bound(spec: &MultiStepSpec, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(EmoError::Empty("tau grid".into()));
    }
    let mut best: f64 = 0.0;
    for &tau in grid {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(EmoError::Config(format!("tau values must be positive, got {tau}")));
        }
        best = best.max(lambda_at(spec, tau)?);
    }
    Ok(best)
}

/// λ_max over the default grid on `[mu, l]`.
pub fn lambda_max(spec: &MultiStepSpec, mu: f64, l: f64) -> Result<f64> {
    lambda_max_bound(spec, &tau_grid(mu, l, TAU_GRID_POINTS)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `θ_1 … θ_{T+1}`.
    pub thetas: Vec<Vec<f64>>,
    /// `f(θ_t) − f*` for the same iterates.
    pub gaps: Vec<f64>,
}

fn check_divergence(theta: &[f64], t: usize) -> Result<()> {
    if theta.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
        return Err(EmoError::Diverged(t));
    }
    Ok(())
}

/// Simulates the recursion with `g_t = H(θ_t − θ*) + ε_t`, `ε_t ~ N(0, σ²I)`.
///
/// While fewer than `S` gradients exist the weights of the missing ones are
/// dropped and the rest rescaled to keep their total, which matches a
/// memory that starts empty. No λ check is made here.
pub fn run_multistep_recursion(
    task: &QuadraticTask,
    spec: &MultiStepSpec,
    theta1: &[f64],
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    spec.validate()?;
    if theta1.len() != task.dim() {
        return Err(EmoError::Shape(format!("theta has {} entries, task has dim {}", theta1.len(), task.dim())));
    }
    let s = spec.steps();
    let total: f64 = spec.weights.iter().sum();
    let mut history: VecDeque<Vec<f64>> = VecDeque::with_capacity(s);
    let mut theta = theta1.to_vec();
    let mut out = Trajectory { thetas: vec![theta.clone()], gaps: vec![task.value(&theta)] };
    for t in 1..=iterations {
        let g = task.noisy_gradient(&theta, rng);
        history.push_front(g);
        history.truncate(s);
        let avail: f64 = spec.weights[..history.len()].iter().sum();
        let rescale = if avail > 0.0 { total / avail } else { 0.0 };
        let mut dir = vec![0.0; theta.len()];
        for (w, g) in spec.weights.iter().zip(&history) {
            for (d, gi) in dir.iter_mut().zip(g) {
                *d += w * rescale * gi;
            }
        }
        for (th, d) in theta.iter_mut().zip(&dir) {
            *th -= spec.alpha * d;
        }
        check_divergence(&theta, t)?;
        out.gaps.push(task.value(&theta));
        out.thetas.push(theta.clone());
    }
    Ok(out)
}

/// The same iteration driven by the memory store and EMO step: a FIFO
/// store of capacity `S − 1` read in full each step, mean aggregation, and
/// the raw gradient written after every step.
pub fn run_emo_pipeline(
    task: &QuadraticTask,
    steps: usize,
    alpha: f64,
    theta1: &[f64],
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(EmoError::Config("S must be >= 1".into()));
    }
    let d = task.dim();
    let schema = vec![("theta".to_string(), vec![d])];
    let mut store = MemoryStore::new(steps - 1, 1, schema, ControllerKind::Fifo)?;
    let key = vec![0.0];
    let wrap = |v: Vec<f64>| TensorSet::from_entries(vec![("theta".into(), Tensor::vector(v))]);
    let mut theta = wrap(theta1.to_vec())?;
    let mut out = Trajectory { thetas: vec![theta1.to_vec()], gaps: vec![task.value(theta1)] };
    for t in 1..=iterations {
        let cur = theta.tensor(0).data().to_vec();
        let g = wrap(task.noisy_gradient(&cur, rng))?;
        let memories = if store.is_empty() { Vec::new() } else { order_by_slot(store.retrieve(&key, steps - 1)?) };
        theta = emo_step(&theta, &g, &memories, alpha, Aggregation::Mean)?;
        store.write(key.clone(), g)?;
        let v = theta.tensor(0).data().to_vec();
        check_divergence(&v, t)?;
        out.gaps.push(task.value(&v));
        out.thetas.push(v);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub t: usize,
    /// Mean of `f(θ_{t+1}) − f*` over seeds.
    pub empirical: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Report {
    pub lambda_max: f64,
    /// False when λ_max ≥ 1, in which case no rows are produced.
    pub applicable: bool,
    pub satisfied: bool,
    pub rows: Vec<BoundRow>,
}

impl Theorem1Report {
    /// `t,empirical,bound,lambda_max,config_hash`, one row per step.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = String::from("t,empirical,bound,lambda_max,satisfied,config_hash\n");
        if !self.applicable {
            let _ = writeln!(out, "0,,,{:e},inapplicable,{config_hash}", self.lambda_max);
            return out;
        }
        for r in &self.rows {
            let ok = r.empirical <= r.bound;
            let _ = writeln!(out, "{},{:e},{:e},{:e},{ok},{config_hash}", r.t, r.empirical, r.bound, self.lambda_max);
        }
        out
    }
}

/// `(L/2)(λ^{2t}‖Δθ_1‖² + α² σ² S / (1 − λ²))`, with `σ²` the total noise
/// variance `d·σ_coord²`.
pub fn suboptimality_bound(l: f64, lambda: f64, t: usize, delta1_sq: f64, alpha: f64, sigma_total_sq: f64, s: usize) -> f64 {
    0.5 * l * (lambda.powi(2 * t as i32) * delta1_sq + alpha * alpha * sigma_total_sq * s as f64 / (1.0 - lambda * lambda))
}

/// Monte Carlo check of the suboptimality bound over `n_seeds` independent
/// noise streams derived from `seed`.
pub fn verify_theorem1(
    task: &QuadraticTask,
    spec: &MultiStepSpec,
    theta1: &[f64],
    horizon: usize,
    n_seeds: usize,
    seed: u64,
    tol: f64,
) -> Result<Theorem1Report> {
    spec.validate()?;
    if n_seeds == 0 {
        return Err(EmoError::Config("need at least one seed".into()));
    }
    let lam = lambda_max(spec, task.mu, task.l)?;
    if lam >= 1.0 {
        return Ok(Theorem1Report { lambda_max: lam, applicable: false, satisfied: false, rows: Vec::new() });
    }
    let runs: Vec<Vec<f64>> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            run_multistep_recursion(task, spec, theta1, horizon, &mut rng).map(|tr| tr.gaps)
        })
        .collect::<Result<_>>()?;
    let delta1_sq: f64 = theta1.iter().zip(&task.theta_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let sigma_total_sq = task.sigma * task.sigma * task.dim() as f64;
    let mut rows = Vec::with_capacity(horizon);
    let mut satisfied = true;
    for t in 1..=horizon {
        let empirical = runs.iter().map(|g| g[t]).sum::<f64>() / n_seeds as f64;
        let bound = suboptimality_bound(task.l, lam, t, delta1_sq, spec.alpha, sigma_total_sq, spec.steps());
        satisfied &= empirical <= bound * (1.0 + tol);
        rows.push(BoundRow { t, empirical, bound });
    }
    Ok(Theorem1Report { lambda_max: lam, applicable: true, satisfied, rows })
}

#[cfg(test)]
mod tests;
