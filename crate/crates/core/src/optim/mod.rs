//! Inner-loop optimizers: SGD, Momentum, Adam and the memory-augmented EMO
//! step with Mean, Sum or Attention aggregation.

use crate::error::{EmoError, Result};
use crate::models::AttentionAggregator;
use crate::numcore::{GradSet, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregatorKind {
    Mean,
    Sum,
    Attention,
}

impl AggregatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Sum => "sum",
            AggregatorKind::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(AggregatorKind::Mean),
            "sum" => Ok(AggregatorKind::Sum),
            "attention" => Ok(AggregatorKind::Attention),
            other => Err(EmoError::Config(format!("unknown aggregator `{other}` (mean, sum, attention)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InnerOptimizer {
    Sgd,
    Momentum,
    Adam,
    Emo,
}

impl InnerOptimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            InnerOptimizer::Sgd => "sgd",
            InnerOptimizer::Momentum => "momentum",
            InnerOptimizer::Adam => "adam",
            InnerOptimizer::Emo => "emo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(InnerOptimizer::Sgd),
            "momentum" => Ok(InnerOptimizer::Momentum),
            "adam" => Ok(InnerOptimizer::Adam),
            "emo" => Ok(InnerOptimizer::Emo),
            other => Err(EmoError::Config(format!("unknown optimizer `{other}` (sgd, momentum, adam, emo)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerOptConfig {
    pub optimizer: InnerOptimizer,
    pub alpha: f64,
    pub steps: usize,
    /// Number of memories retrieved per task.
    pub k: usize,
    pub aggregator: AggregatorKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Before the first gradient step, move to `θ − α·mean(V)` using the
    /// retrieved memories alone.
    pub recall: bool,
    /// Global-norm clipping of each inner gradient.
    pub clip_norm: Option<f64>,
}

impl Default for InnerOptConfig {
    fn default() -> Self {
        Self {
            optimizer: InnerOptimizer::Emo,
            alpha: 0.001,
            steps: 5,
            k: 20,
            aggregator: AggregatorKind::Mean,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            recall: false,
            clip_norm: None,
        }
    }
}

impl InnerOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(EmoError::Config(format!("inner.alpha must be > 0, got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(EmoError::Config("inner.k must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(EmoError::Config("momentum and Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(EmoError::Config("inner.eps must be > 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(EmoError::Config("inner.clip_norm must be > 0".into()));
            }
        }
        Ok(())
    }
}

fn check_finite(g: &GradSet, what: &str) -> Result<()> {
    match g.first_non_finite() {
        Some(l) => Err(EmoError::NonFinite(format!("{what} at layer `{l}`"))),
        None => Ok(()),
    }
}

fn sum_memories(g: &GradSet, v: &[GradSet]) -> Result<GradSet> {
    let mut acc = g.clone();
    for m in v {
        acc.axpy(1.0, m)?;
    }
    Ok(acc)
}

/// `(g + Σ Vᵢ) / (M + 1)`; `g` when `V` is empty.
pub fn aggr_mean(g: &GradSet, v: &[GradSet]) -> Result<GradSet> {
    if v.is_empty() {
        return Ok(g.clone());
    }
    let total = sum_memories(g, v)?;
    let m = (v.len() + 1) as f64;
    Ok(total.map(|t| t.map(|x| x / m)))
}

/// `g + (1/M) Σ Vᵢ`; `g` when `V` is empty.
pub fn aggr_sum(g: &GradSet, v: &[GradSet]) -> Result<GradSet> {
    if v.is_empty() {
        return Ok(g.clone());
    }
    let mut mem = v[0].clone();
    for m in &v[1..] {
        g.expect_congruent(m)?;
        mem.axpy(1.0, m)?;
    }
    g.expect_congruent(&mem)?;
    let m = v.len() as f64;
    g.zip_map(&mem, |a, b| a.zip_map(b, |x, y| x + y / m))
}

/// Sorts retrieved `(slot_index, values)` pairs by slot index so the
/// summation order, and hence the result, does not depend on retrieval rank.
pub fn order_by_slot(mut retrieved: Vec<(usize, GradSet)>) -> Vec<GradSet> {
    retrieved.sort_by_key(|(i, _)| *i);
    retrieved.into_iter().map(|(_, v)| v).collect()
}

/// How the EMO step combines the current gradient with the retrieved ones.
#[derive(Clone, Copy, Debug)]
pub enum Aggregation<'a> {
    Mean,
    Sum,
    Attention(&'a AttentionAggregator, &'a ParamSet),
}

pub fn aggregate(how: Aggregation<'_>, g: &GradSet, v: &[GradSet]) -> Result<GradSet> {
    let out = match how {
        Aggregation::Mean => aggr_mean(g, v)?,
        Aggregation::Sum => aggr_sum(g, v)?,
        Aggregation::Attention(net, params) => net.aggregate(params, g, v)?,
    };
    check_finite(&out, "aggregated gradient")?;
    Ok(out)
}

/// `θ − α · Aggr(g, V)`.
pub fn emo_step(theta: &ParamSet, g: &GradSet, v: &[GradSet], alpha: f64, how: Aggregation<'_>) -> Result<ParamSet> {
    if !(alpha > 0.0) {
        return Err(EmoError::Config(format!("learning rate must be > 0, got {alpha}")));
    }
    check_finite(g, "gradient")?;
    let agg = aggregate(how, g, v)?;
    let mut out = theta.clone();
    out.axpy(-alpha, &agg)?;
    Ok(out)
}

/// `θ − α g`.
pub fn sgd_step(theta: &ParamSet, g: &GradSet, alpha: f64) -> Result<ParamSet> {
    check_finite(g, "gradient")?;
    let mut out = theta.clone();
    out.axpy(-alpha, g)?;
    Ok(out)
}

/// Heavy-ball buffer `v ← β v + g`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentumState {
    pub buf: Option<GradSet>,
}

pub fn momentum_step(theta: &ParamSet, g: &GradSet, state: &MomentumState, alpha: f64, beta: f64) -> Result<(ParamSet, MomentumState)> {
    check_finite(g, "gradient")?;
    let buf = match &state.buf {
        None => g.clone(),
        Some(b) => {
            let mut nb = b.scale(beta);
            nb.axpy(1.0, g)?;
            nb
        }
    };
    let mut out = theta.clone();
    out.axpy(-alpha, &buf)?;
    Ok((out, MomentumState { buf: Some(buf) }))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Option<GradSet>,
    pub v: Option<GradSet>,
    pub t: u32,
}

/// Adam with bias correction.
pub fn adam_step(
    theta: &ParamSet,
    g: &GradSet,
    state: &AdamState,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(ParamSet, AdamState)> {
    check_finite(g, "gradient")?;
    let m0 = state.m.clone().unwrap_or_else(|| g.zeros_like());
    let v0 = state.v.clone().unwrap_or_else(|| g.zeros_like());
    let m = m0.zip_map(g, |a, b| a.zip_map(b, |x, y| beta1 * x + (1.0 - beta1) * y))?;
    let v = v0.zip_map(g, |a, b| a.zip_map(b, |x, y| beta2 * x + (1.0 - beta2) * y * y))?;
    let t = state.t + 1;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    let step = m.zip_map(&v, |a, b| a.zip_map(b, |mi, vi| (mi / c1) / ((vi / c2).sqrt() + eps)))?;
    let mut out = theta.clone();
    out.axpy(-alpha, &step)?;
    Ok((out, AdamState { m: Some(m), v: Some(v), t }))
}

/// Scales `g` so its global 2-norm is at most `max_norm`.
pub fn clip_global_norm(g: &GradSet, max_norm: f64) -> GradSet {
    let norm = g.tensors().map(|t| t.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm <= max_norm || norm == 0.0 {
        g.clone()
    } else {
        g.scale(max_norm / norm)
    }
}

/// One-layer [`GradSet`] holding `values`, handy for scalar examples.
pub fn single(name: &str, values: Vec<f64>) -> GradSet {
    GradSet::from_entries(vec![(name.to_string(), Tensor::vector(values))]).expect("single layer")
}

#[cfg(test)]
mod tests;
