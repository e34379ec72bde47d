//! Synthetic task families: quadratic bowls, Gaussian-cluster classification
//! (single and multi-mode) and sinusoid regression.

mod quadratic;
mod seeds;

pub use quadratic::{sample_quadratic_task, QuadraticConfig, QuadraticTask};
pub use seeds::{Split, TaskStream};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EmoError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn class(self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(c),
            Target::Value(_) => None,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Target::Value(v) => Some(v),
            Target::Class(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub support: Vec<Example>,
    pub query: Vec<Example>,
    pub family_id: &'static str,
    pub mode_id: Option<usize>,
    /// Number of classes, `None` for regression.
    pub n_classes: Option<usize>,
}

impl Task {
    pub fn input_dim(&self) -> usize {
        self.support.first().or(self.query.first()).map_or(0, |e| e.x.len())
    }

    /// Little-endian dump of every number in the task, for byte-level
    /// determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.family_id.as_bytes());
        out.extend_from_slice(&(self.mode_id.map_or(u64::MAX, |m| m as u64)).to_le_bytes());
        for set in [&self.support, &self.query] {
            out.extend_from_slice(&(set.len() as u64).to_le_bytes());
            for e in set {
                for v in &e.x {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                match e.y {
                    Target::Class(c) => out.extend_from_slice(&(c as u64).to_le_bytes()),
                    Target::Value(v) => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }
}

/// Generative parameters of one cluster mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeConfig {
    pub prototype_scale: f64,
    pub noise_std: f64,
    /// Class `c` of this mode sits at base prototype `(c + label_shift) mod N`.
    pub label_shift: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub input_dim: usize,
    pub modes: Vec<ModeConfig>,
    /// Per-task prototype jitter, relative to the base prototype scale.
    pub jitter: f64,
    /// Seed for the base prototype locations shared by every task.
    pub prototype_seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            m_query: 15,
            input_dim: 20,
            modes: (0..4).map(|m| ModeConfig { prototype_scale: 1.0, noise_std: 0.5, label_shift: m }).collect(),
            jitter: 0.3,
            prototype_seed: 0,
        }
    }
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 || self.m_query < 1 {
            return Err(EmoError::Config(format!(
                "need N >= 2, K >= 1, M >= 1; got N={}, K={}, M={}",
                self.n_way, self.k_shot, self.m_query
            )));
        }
        if self.input_dim == 0 {
            return Err(EmoError::Config("input_dim must be >= 1".into()));
        }
        if self.modes.is_empty() {
            return Err(EmoError::Config("at least one mode is required".into()));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.prototype_scale >= 0.0 && m.noise_std >= 0.0) || !m.prototype_scale.is_finite() || !m.noise_std.is_finite() {
                return Err(EmoError::Config(format!("mode {i}: scale and noise must be finite and >= 0")));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(EmoError::Config("jitter must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Unit-scale base prototypes, one row per class.
    pub fn base_prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.prototype_seed);
        (0..self.n_way).map(|_| gaussian_vec(&mut rng, self.input_dim)).collect()
    }
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn cluster_task_with_mode(cfg: &FamilyConfig, mode_id: usize, rng: &mut impl Rng) -> Task {
    let mode = &cfg.modes[mode_id];
    let base = cfg.base_prototypes();
    let n = cfg.n_way;
    let prototypes: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let b = &base[(c + mode.label_shift) % n];
            b.iter()
                .map(|&v| {
                    let j: f64 = StandardNormal.sample(rng);
                    mode.prototype_scale * (v + cfg.jitter * j)
                })
                .collect()
        })
        .collect();
    let draw = |count: usize, rng: &mut _| -> Vec<Example> {
        let mut out = Vec::with_capacity(count * n);
        for (c, p) in prototypes.iter().enumerate() {
            for _ in 0..count {
                let x = p
                    .iter()
                    .map(|&v| {
                        let z: f64 = StandardNormal.sample(rng);
                        v + mode.noise_std * z
                    })
                    .collect();
                out.push(Example { x, y: Target::Class(c) });
            }
        }
        out
    };
    let support = draw(cfg.k_shot, rng);
    let query = draw(cfg.m_query, rng);
    Task { support, query, family_id: "cluster", mode_id: Some(mode_id), n_classes: Some(n) }
}

/// N-way K-shot task from the first mode of `cfg`.
pub fn sample_cluster_task(cfg: &FamilyConfig, rng: &mut impl Rng) -> Result<Task> {
    cfg.validate()?;
    Ok(cluster_task_with_mode(cfg, 0, rng))
}

/// Picks a mode uniformly, then samples a cluster task from it.
pub fn sample_multimode_task(cfg: &FamilyConfig, rng: &mut impl Rng) -> Result<Task> {
    cfg.validate()?;
    if cfg.modes.len() == 1 {
        return Ok(cluster_task_with_mode(cfg, 0, rng));
    }
    let m = rng.random_range(0..cfg.modes.len());
    Ok(cluster_task_with_mode(cfg, m, rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidConfig {
    pub k_shot: usize,
    pub m_query: usize,
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub x_range: (f64, f64),
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        Self {
            k_shot: 10,
            m_query: 10,
            amplitude: (0.1, 5.0),
            phase: (0.0, std::f64::consts::PI),
            x_range: (-5.0, 5.0),
        }
    }
}

impl SinusoidConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.amplitude) || !ok(self.phase) || !ok(self.x_range) {
            return Err(EmoError::Config("sinusoid ranges must be finite with lo <= hi".into()));
        }
        if self.k_shot == 0 || self.m_query == 0 {
            return Err(EmoError::Config("sinusoid needs k_shot >= 1 and m_query >= 1".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// `y = A sin(x + φ)` regression task.
pub fn sample_sinusoid_task(cfg: &SinusoidConfig, rng: &mut impl Rng) -> Result<Task> {
    cfg.validate()?;
    let a = uniform(rng, cfg.amplitude);
    let phi = uniform(rng, cfg.phase);
    let mut draw = |n: usize| -> Vec<Example> {
        (0..n)
            .map(|_| {
                let x = uniform(rng, cfg.x_range);
                Example { x: vec![x], y: Target::Value(a * (x + phi).sin()) }
            })
            .collect()
    };
    let support = draw(cfg.k_shot);
    let query = draw(cfg.m_query);
    Ok(Task { support, query, family_id: "sinusoid", mode_id: None, n_classes: None })
}
