use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::inner::{adapt, Adaptation, MetaModel, MetaParams};
use super::problem::Problem;
use super::{MetaLearnerSpec, OuterOptimizer, META_SGD_MIN_LR};
use crate::error::{EmoError, Result};
use crate::memstore::MemoryStore;
use crate::numcore::{GradSet, ParamSet};
use crate::optim::{adam_step, AdamState, InnerOptimizer};
use crate::taskgen::TaskStream;

/// Outer gradient of one task, tagged with its stream index.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGrads {
    pub task_id: u64,
    pub grads: GradSet,
}

/// State carried between outer updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OuterState {
    pub adam: AdamState,
    pub clamp_events: usize,
}

/// Averages `batch` in task order and applies one outer step to the
/// trainable parameters. Returns the number of learning rates clamped.
pub fn outer_update(params: &mut MetaParams, batch: &[TaskGrads], spec: &MetaLearnerSpec, state: &mut OuterState) -> Result<usize> {
    if batch.is_empty() {
        return Err(EmoError::Empty("meta-batch".into()));
    }
    let mut merged = params.trainable();
    let mut mean = merged.zeros_like();
    for tg in batch {
        if let Some(layer) = tg.grads.first_non_finite() {
            return Err(EmoError::NonFinite(format!("outer gradient of task {} at layer `{layer}`", tg.task_id)));
        }
        mean.axpy(1.0, &tg.grads)?;
    }
    let mean = mean.scale(1.0 / batch.len() as f64);
    if spec.beta == 0.0 {
        return Ok(0);
    }
    merged = match spec.outer_optimizer {
        OuterOptimizer::Sgd => {
            let mut m = merged;
            m.axpy(-spec.beta, &mean)?;
            m
        }
        OuterOptimizer::Adam => {
            let (next, st) = adam_step(&merged, &mean, &state.adam, spec.beta, 0.9, 0.999, 1e-8)?;
            state.adam = st;
            next
        }
    };
    if let Some(layer) = merged.first_non_finite() {
        return Err(EmoError::NonFinite(format!("parameters after outer update at layer `{layer}`")));
    }
    let mut clamped = 0;
    for i in 0..merged.len() {
        if merged.name(i).starts_with("lr.") {
            for v in merged.tensor_mut(i).data_mut() {
                if *v < META_SGD_MIN_LR {
                    *v = META_SGD_MIN_LR;
                    clamped += 1;
                }
            }
        }
    }
    state.clamp_events += clamped;
    params.set_trainable(&merged)?;
    Ok(clamped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Batch-mean support loss before each inner step and after the last.
    pub support_losses: Vec<f64>,
    pub query_loss: f64,
    pub metric: f64,
    pub wall_seconds: f64,
    pub clamp_events: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<IterationLog>,
}

impl TrainingLog {
    /// One row per iteration. Wall time is left out unless asked for so
    /// that logs of identical runs compare byte for byte.
    pub fn to_csv(&self, with_wall_time: bool) -> String {
        let steps = self.rows.first().map_or(0, |r| r.support_losses.len());
        let mut out = String::from("iteration");
        for s in 0..steps {
            let _ = write!(out, ",support_loss_{s}");
        }
        out.push_str(",query_loss,metric,clamp_events");
        if with_wall_time {
            out.push_str(",wall_seconds");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.iteration);
            for l in &r.support_losses {
                let _ = write!(out, ",{l:e}");
            }
            let _ = write!(out, ",{:e},{:e},{}", r.query_loss, r.metric, r.clamp_events);
            if with_wall_time {
                let _ = write!(out, ",{:.6}", r.wall_seconds);
            }
            out.push('\n');
        }
        out
    }
}

fn sample<P: Problem>(problem: &P, stream: &TaskStream, id: u64) -> Result<P::Task> {
    problem.sample_task(&mut stream.rng(id))
}

fn commit(store: &mut MemoryStore, spec: &MetaLearnerSpec, a: &Adaptation) -> Result<()> {
    if spec.inner.optimizer != InnerOptimizer::Emo {
        return Ok(());
    }
    store.touch(&a.retrieved);
    if let (Some(key), Some(value)) = (&a.key, &a.memory_value) {
        store.write(key.clone(), value.clone())?;
    }
    Ok(())
}

/// One meta-iteration over tasks `first_id .. first_id + meta_batch`.
///
/// Tasks are adapted against the store as it was at the start of the
/// iteration; their accesses and writes are then applied in task order.
/// `eval_order` permutes the order in which tasks are evaluated, which
/// must not change the result.
pub fn meta_train_iteration<P: Problem>(
    problem: &P,
    model: &MetaModel,
    spec: &MetaLearnerSpec,
    params: &mut MetaParams,
    store: &mut MemoryStore,
    stream: &TaskStream,
    first_id: u64,
    state: &mut OuterState,
    eval_order: Option<&[usize]>,
) -> Result<(Vec<Adaptation>, usize)> {
    let b = spec.meta_batch;
    let ids: Vec<u64> = (0..b as u64).map(|j| first_id + j).collect();
    let mut results: Vec<Option<Adaptation>> = vec![None; b];
    if spec.per_task_writes {
        for (j, &id) in ids.iter().enumerate() {
            let task = sample(problem, stream, id)?;
            let a = adapt(problem, model, spec, params, Some(&*store), &task, true, true)?;
            commit(store, spec, &a)?;
            results[j] = Some(a);
        }
    } else {
        let order: Vec<usize> = match eval_order {
            Some(o) => {
                let mut check = o.to_vec();
                check.sort_unstable();
                if check != (0..b).collect::<Vec<_>>() {
                    return Err(EmoError::Config("evaluation order must permute the meta-batch".into()));
                }
                o.to_vec()
            }
            None => (0..b).collect(),
        };
        let frozen_view: &MemoryStore = store;
        let done: Vec<(usize, Result<Adaptation>)> = order
            .par_iter()
            .map(|&j| {
                let r = sample(problem, stream, ids[j])
                    .and_then(|task| adapt(problem, model, spec, params, Some(frozen_view), &task, true, true));
                (j, r)
            })
            .collect();
        for (j, r) in done {
            results[j] = Some(r?);
        }
        for a in results.iter().flatten() {
            commit(store, spec, a)?;
        }
    }
    let results: Vec<Adaptation> = results.into_iter().map(|a| a.expect("every task adapted")).collect();
    let batch: Vec<TaskGrads> = results
        .iter()
        .zip(&ids)
        .map(|(a, &id)| TaskGrads { task_id: id, grads: a.outer.clone().expect("outer gradient requested") })
        .collect();
    let clamped = outer_update(params, &batch, spec, state)?;
    Ok((results, clamped))
}

/// Runs `iterations` meta-iterations; iteration `i` uses tasks
/// `i·B .. (i+1)·B` of `stream`.
pub fn meta_train<P: Problem>(
    problem: &P,
    model: &MetaModel,
    spec: &MetaLearnerSpec,
    params: &mut MetaParams,
    store: &mut MemoryStore,
    iterations: usize,
    stream: &TaskStream,
) -> Result<TrainingLog> {
    spec.validate()?;
    if store.is_frozen() {
        return Err(EmoError::Protocol("meta-training needs a writable memory store".into()));
    }
    let mut state = OuterState::default();
    let mut log = TrainingLog::default();
    for it in 0..iterations {
        let start = Instant::now();
        let first = (it * spec.meta_batch) as u64;
        let (results, clamped) = meta_train_iteration(problem, model, spec, params, store, stream, first, &mut state, None)?;
        let n = results.len() as f64;
        let steps = results[0].step_losses.len();
        let support_losses =
            (0..steps).map(|s| results.iter().map(|a| a.step_losses[s]).sum::<f64>() / n).collect();
        log.rows.push(IterationLog {
            iteration: it,
            support_losses,
            query_loss: results.iter().map(|a| a.query_loss).sum::<f64>() / n,
            metric: results.iter().map(|a| a.metric).sum::<f64>() / n,
            wall_seconds: start.elapsed().as_secs_f64(),
            clamp_events: clamped,
        });
    }
    Ok(log)
}

/// Outcome of one meta-test episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub task_id: u64,
    pub query_loss: f64,
    pub metric: f64,
    pub step_losses: Vec<f64>,
    pub retrieved: Vec<usize>,
    pub theta_prime: ParamSet,
}

/// Adapts to each of tasks `0..n` of `stream` with a frozen store.
pub fn meta_test<P: Problem>(
    problem: &P,
    model: &MetaModel,
    spec: &MetaLearnerSpec,
    params: &MetaParams,
    store: &MemoryStore,
    stream: &TaskStream,
    n: usize,
) -> Result<Vec<EpisodeResult>> {
    if !store.is_frozen() {
        return Err(EmoError::Protocol("meta-test requires a frozen memory store".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let task = sample(problem, stream, id)?;
            let a = adapt(problem, model, spec, params, Some(store), &task, false, false)?;
            Ok(EpisodeResult {
                task_id: id,
                query_loss: a.query_loss,
                metric: a.metric,
                step_losses: a.step_losses,
                retrieved: a.retrieved,
                theta_prime: a.theta_prime,
            })
        })
        .collect()
}

/// Sample mean and the half-width of its normal 95% interval.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}
