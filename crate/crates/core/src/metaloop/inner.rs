use rand_chacha::ChaCha8Rng;

use super::problem::Problem;
use super::{MetaLearnerSpec, Variant, META_SGD_MIN_LR};
use crate::error::{EmoError, Result, SnapshotError};
use crate::memstore::snapshot::{put_u32, Reader};
use crate::memstore::MemoryStore;
use crate::models::{AttentionAggregator, EncoderConfig, KeyEncoder};
use crate::numcore::{grad, BoundParams, GradSet, Graph, ParamSet, Tensor, TensorSet, Var};
use crate::optim::{AggregatorKind, InnerOptimizer};

/// Networks shared by every task: the key encoder and, for attention
/// aggregation, the aggregator.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaModel {
    pub encoder: KeyEncoder,
    pub aggregator: Option<AttentionAggregator>,
}

impl MetaModel {
    /// `encoder.input_dim` and `encoder.label_dim` are taken from the problem.
    pub fn new<P: Problem>(
        problem: &P,
        spec: &MetaLearnerSpec,
        encoder: EncoderConfig,
        d_agg: usize,
        agg_ffn: usize,
        theta: &ParamSet,
    ) -> Result<Self> {
        let cfg = EncoderConfig { input_dim: problem.key_input_dim(), label_dim: problem.key_label_dim(), ..encoder };
        let encoder = KeyEncoder::new(cfg)?;
        let aggregator = if spec.inner.optimizer == InnerOptimizer::Emo && spec.inner.aggregator == AggregatorKind::Attention {
            let schema = theta.subset(&adapted_names(problem, spec, theta))?.schema();
            Some(AttentionAggregator::new(schema, d_agg, agg_ffn)?)
        } else {
            None
        };
        Ok(Self { encoder, aggregator })
    }
}

/// Everything a meta-learner owns. Only `theta`, `agg` and `lr` receive
/// outer updates; the key encoder is reached through nearest-neighbour
/// lookups only and keeps its initial weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaParams {
    pub theta: ParamSet,
    pub key: ParamSet,
    pub agg: ParamSet,
    /// Meta-SGD per-parameter learning rates, named `lr.{param}`.
    pub lr: ParamSet,
}

impl MetaParams {
    pub fn init<P: Problem>(problem: &P, model: &MetaModel, spec: &MetaLearnerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let theta = problem.init_params(rng)?;
        let key = model.encoder.init(rng)?;
        let agg = match &model.aggregator {
            Some(a) => a.init(rng)?,
            None => ParamSet::new(),
        };
        let mut lr = ParamSet::new();
        if spec.variant == Variant::MetaSgd {
            for name in adapted_names(problem, spec, &theta) {
                let shape = theta.get(&name).unwrap().shape().to_vec();
                lr.insert(format!("lr.{name}"), Tensor::filled(&shape, spec.inner.alpha))?;
            }
        }
        Ok(Self { theta, key, agg, lr })
    }

    /// `theta ∪ agg ∪ lr`, in that order.
    pub fn trainable(&self) -> ParamSet {
        let mut out = self.theta.clone();
        for set in [&self.agg, &self.lr] {
            for (n, t) in set.iter() {
                out.insert(n, t.clone()).expect("disjoint parameter names");
            }
        }
        out
    }

    pub fn set_trainable(&mut self, merged: &ParamSet) -> Result<()> {
        self.trainable().expect_congruent(merged)?;
        for set in [&mut self.theta, &mut self.agg, &mut self.lr] {
            for i in 0..set.len() {
                let name = set.name(i).to_string();
                *set.tensor_mut(i) = merged.get(&name).unwrap().clone();
            }
        }
        Ok(())
    }
}

/// Leading bytes of a [`MetaParams`] snapshot.
pub const PARAMS_MAGIC: &[u8; 4] = b"EMP1";
pub const PARAMS_VERSION: u32 = 1;

impl MetaParams {
    /// Little-endian dump of the four parameter sets with their schemas.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        for set in [&self.theta, &self.key, &self.agg, &self.lr] {
            put_u32(&mut out, set.len());
            for (name, t) in set.iter() {
                put_u32(&mut out, name.len());
                out.extend_from_slice(name.as_bytes());
                put_u32(&mut out, t.rank());
                for &d in t.shape() {
                    put_u32(&mut out, d);
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PARAMS_MAGIC, PARAMS_VERSION)?;
        let mut sets = Vec::with_capacity(4);
        for _ in 0..4 {
            let n = r.u32()?;
            let mut set = ParamSet::new();
            for _ in 0..n {
                let name = r.string()?;
                let rank = r.u32()?;
                let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let len = shape
                    .iter()
                    .try_fold(1usize, |a, &d| a.checked_mul(d))
                    .ok_or_else(|| SnapshotError::Malformed(format!("layer `{name}` is too large")))?;
                let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                set.insert(name, Tensor::new(shape, data)?).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
            }
            sets.push(set);
        }
        r.finish()?;
        let lr = sets.pop().unwrap();
        let agg = sets.pop().unwrap();
        let key = sets.pop().unwrap();
        let theta = sets.pop().unwrap();
        Ok(Self { theta, key, agg, lr })
    }
}

pub(crate) fn adapted_names<P: Problem>(problem: &P, spec: &MetaLearnerSpec, theta: &ParamSet) -> Vec<String> {
    match spec.variant {
        Variant::Anil => problem.head_params(),
        Variant::Maml | Variant::MetaSgd => theta.names().map(String::from).collect(),
    }
}

/// Layers stored per memory slot: the adapted layers, then one
/// `lr.{param}` pseudo-layer per adapted layer for Meta-SGD.
pub fn memory_schema<P: Problem>(problem: &P, spec: &MetaLearnerSpec, theta: &ParamSet) -> Result<Vec<(String, Vec<usize>)>> {
    let names = adapted_names(problem, spec, theta);
    let mut schema = theta.subset(&names)?.schema();
    if spec.variant == Variant::MetaSgd {
        let extra: Vec<_> = schema.iter().map(|(n, s)| (format!("lr.{n}"), s.clone())).collect();
        schema.extend(extra);
    }
    Ok(schema)
}

/// Result of adapting to one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Adaptation {
    pub theta_prime: ParamSet,
    /// Support loss before each step and after the last one.
    pub step_losses: Vec<f64>,
    pub query_loss: f64,
    pub metric: f64,
    pub key: Option<Vec<f64>>,
    /// Retrieved slots, nearest first.
    pub retrieved: Vec<usize>,
    /// Raw support gradient at θ (plus learning-rate gradients for Meta-SGD),
    /// in memory-schema order.
    pub memory_value: Option<TensorSet>,
    /// Gradient of the query loss with respect to [`MetaParams::trainable`].
    pub outer: Option<GradSet>,
}

fn sum_vars(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

/// Adapts `params.theta` to `task` and evaluates on the query set.
///
/// The store is only read here; access metadata and writes are the
/// caller's business so a whole meta-batch can share one snapshot.
pub fn adapt<P: Problem>(
    problem: &P,
    model: &MetaModel,
    spec: &MetaLearnerSpec,
    params: &MetaParams,
    store: Option<&MemoryStore>,
    task: &P::Task,
    want_outer: bool,
    want_memory: bool,
) -> Result<Adaptation> {
    let inner = &spec.inner;
    if problem.key_examples(task).is_empty() {
        return Err(EmoError::Empty("support set".into()));
    }
    if want_outer && !spec.first_order && params.trainable().num_values() > spec.second_order_max_params {
        return Err(EmoError::Config(format!(
            "second-order gradients refused for {} trainable values (limit {})",
            params.trainable().num_values(),
            spec.second_order_max_params
        )));
    }
    let names = adapted_names(problem, spec, &params.theta);
    let is_emo = inner.optimizer == InnerOptimizer::Emo;
    let meta_sgd = spec.variant == Variant::MetaSgd;

    let (key, retrieved) = if is_emo {
        let key = model.encoder.key(&params.key, problem.key_examples(task))?;
        let hits = match store {
            Some(s) if !s.is_empty() => s.lookup(&key, inner.k)?,
            _ => Vec::new(),
        };
        (Some(key), hits)
    } else {
        (None, Vec::new())
    };
    let mut by_slot = retrieved.clone();
    by_slot.sort_unstable();
    let memories: Vec<&TensorSet> = by_slot.iter().map(|&i| &store.unwrap().slot(i).values).collect();

    let mut g = Graph::new();
    let theta_b = params.theta.bind(&mut g);
    let agg_b = params.agg.bind(&mut g);
    let lr_b = params.lr.bind(&mut g);
    let mut cur = theta_b.clone();
    let mut cur_vars: Vec<Var> = names.iter().map(|n| cur.get(n)).collect::<Result<_>>()?;

    // memory values as constants, one row of adapted layers per memory
    let mem_vars: Vec<Vec<Var>> = memories
        .iter()
        .map(|m| names.iter().map(|n| Ok(g.constant(m.get(n).ok_or_else(|| missing(n))?.clone()))).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    // per-parameter step sizes for Meta-SGD, corrected by remembered
    // learning-rate gradients
    let lr_vars: Option<Vec<Var>> = if meta_sgd {
        let mut out = Vec::with_capacity(names.len());
        for n in &names {
            let lname = format!("lr.{n}");
            let mut a = lr_b.get(&lname)?;
            if !memories.is_empty() {
                let mut mean = Tensor::zeros(params.lr.get(&lname).unwrap().shape());
                for m in &memories {
                    mean.axpy(1.0, m.get(&lname).ok_or_else(|| missing(&lname))?)?;
                }
                let corr = mean.scale(-inner.alpha / memories.len() as f64);
                let c = g.constant(corr);
                a = g.add(a, c)?;
            }
            let vals = g.value(a).clone();
            if vals.data().iter().any(|&v| v < META_SGD_MIN_LR) {
                let mask = g.constant(vals.map(|v| if v < META_SGD_MIN_LR { 0.0 } else { 1.0 }));
                let floor = g.constant(vals.map(|v| if v < META_SGD_MIN_LR { META_SGD_MIN_LR } else { 0.0 }));
                let kept = g.mul(a, mask)?;
                a = g.add(kept, floor)?;
            }
            out.push(a);
        }
        Some(out)
    } else {
        None
    };

    let apply = |g: &mut Graph, cur_vars: &mut Vec<Var>, dir: &[Var]| -> Result<()> {
        for i in 0..cur_vars.len() {
            let delta = match &lr_vars {
                Some(a) => g.mul(a[i], dir[i])?,
                None => g.scale(dir[i], inner.alpha),
            };
            cur_vars[i] = g.sub(cur_vars[i], delta)?;
        }
        Ok(())
    };
    let sync = |cur: &mut BoundParams, cur_vars: &[Var]| -> Result<()> {
        for (n, &v) in names.iter().zip(cur_vars) {
            cur.replace(n, v)?;
        }
        Ok(())
    };

    if is_emo && inner.recall && !mem_vars.is_empty() {
        let m = mem_vars.len() as f64;
        let mut dir = Vec::with_capacity(names.len());
        for l in 0..names.len() {
            let col: Vec<Var> = mem_vars.iter().map(|r| r[l]).collect();
            let s = sum_vars(&mut g, &col)?;
            dir.push(g.scale(s, 1.0 / m));
        }
        apply(&mut g, &mut cur_vars, &dir)?;
        sync(&mut cur, &cur_vars)?;
    }

    let mut step_losses = Vec::with_capacity(inner.steps + 1);
    let mut mom: Option<Vec<Var>> = None;
    let mut adam_m: Option<Vec<Var>> = None;
    let mut adam_v: Option<Vec<Var>> = None;
    for t in 1..=inner.steps {
        let loss = problem.support_loss(&mut g, &cur, task)?;
        step_losses.push(g.value(loss).item());
        let mut grads = g.gradients(loss, &cur_vars)?;
        if spec.first_order {
            grads = grads.into_iter().map(|v| g.detach(v)).collect();
        }
        if let Some(c) = inner.clip_norm {
            let norm = grads.iter().map(|&v| g.value(v).data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
            if norm > c {
                grads = grads.into_iter().map(|v| g.scale(v, c / norm)).collect();
            }
        }
        if let Some(l) = grads.iter().position(|&v| !g.value(v).is_finite()) {
            return Err(EmoError::NonFinite(format!("inner gradient at layer `{}`", names[l])));
        }
        let dir: Vec<Var> = match inner.optimizer {
            InnerOptimizer::Sgd => grads,
            InnerOptimizer::Momentum => {
                let buf = match mom.take() {
                    None => grads,
                    Some(b) => b
                        .into_iter()
                        .zip(grads)
                        .map(|(b, gr)| {
                            let s = g.scale(b, inner.momentum);
                            g.add(s, gr)
                        })
                        .collect::<Result<_>>()?,
                };
                mom = Some(buf.clone());
                buf
            }
            InnerOptimizer::Adam => {
                let (b1, b2) = (inner.beta1, inner.beta2);
                let mut m_new = Vec::with_capacity(grads.len());
                let mut v_new = Vec::with_capacity(grads.len());
                for (i, &gr) in grads.iter().enumerate() {
                    let gm = g.scale(gr, 1.0 - b1);
                    let sq = g.mul(gr, gr)?;
                    let gv = g.scale(sq, 1.0 - b2);
                    let (m, v) = match (&adam_m, &adam_v) {
                        (Some(pm), Some(pv)) => {
                            let a = g.scale(pm[i], b1);
                            let b = g.scale(pv[i], b2);
                            (g.add(a, gm)?, g.add(b, gv)?)
                        }
                        _ => (gm, gv),
                    };
                    m_new.push(m);
                    v_new.push(v);
                }
                let c1 = 1.0 - b1.powi(t as i32);
                let c2 = 1.0 - b2.powi(t as i32);
                let mut dir = Vec::with_capacity(grads.len());
                for (&m, &v) in m_new.iter().zip(&v_new) {
                    let mhat = g.scale(m, 1.0 / c1);
                    let vhat = g.scale(v, 1.0 / c2);
                    let root = g.powf(vhat, 0.5);
                    let den = g.add_scalar(root, inner.eps);
                    let inv = g.powf(den, -1.0);
                    dir.push(g.mul(mhat, inv)?);
                }
                adam_m = Some(m_new);
                adam_v = Some(v_new);
                dir
            }
            InnerOptimizer::Emo => {
                if mem_vars.is_empty() {
                    grads
                } else {
                    match inner.aggregator {
                        AggregatorKind::Mean => {
                            let scale = 1.0 / (mem_vars.len() + 1) as f64;
                            (0..names.len())
                                .map(|l| {
                                    let mut col = vec![grads[l]];
                                    col.extend(mem_vars.iter().map(|r| r[l]));
                                    let s = sum_vars(&mut g, &col)?;
                                    Ok(g.scale(s, scale))
                                })
                                .collect::<Result<_>>()?
                        }
                        AggregatorKind::Sum => {
                            let scale = 1.0 / mem_vars.len() as f64;
                            (0..names.len())
                                .map(|l| {
                                    let col: Vec<Var> = mem_vars.iter().map(|r| r[l]).collect();
                                    let s = sum_vars(&mut g, &col)?;
                                    let s = g.scale(s, scale);
                                    g.add(grads[l], s)
                                })
                                .collect::<Result<_>>()?
                        }
                        AggregatorKind::Attention => {
                            let net = model
                                .aggregator
                                .as_ref()
                                .ok_or_else(|| EmoError::Config("attention aggregation needs an aggregator network".into()))?;
                            net.forward(&mut g, &agg_b, &grads, &mem_vars)?
                        }
                    }
                }
            }
        };
        if let Some(l) = dir.iter().position(|&v| !g.value(v).is_finite()) {
            return Err(EmoError::NonFinite(format!("aggregated gradient at layer `{}`", names[l])));
        }
        apply(&mut g, &mut cur_vars, &dir)?;
        sync(&mut cur, &cur_vars)?;
    }
    let last = problem.support_loss(&mut g, &cur, task)?;
    step_losses.push(g.value(last).item());

    let theta_prime = cur.values(&g);
    let outer = if want_outer {
        let q = problem.query_loss(&mut g, &cur, task)?;
        let mut wrt: Vec<Var> = theta_b.vars().to_vec();
        wrt.extend_from_slice(agg_b.vars());
        wrt.extend_from_slice(lr_b.vars());
        let mut all_names: Vec<String> = theta_b.names().to_vec();
        all_names.extend_from_slice(agg_b.names());
        all_names.extend_from_slice(lr_b.names());
        Some(grad(&mut g, q, &BoundParams::new(all_names, wrt))?)
    } else {
        None
    };
    let (query_loss, metric) = problem.evaluate(&theta_prime, task)?;

    let memory_value = if want_memory && is_emo { Some(memory_value(problem, spec, params, task, &names)?) } else { None };

    Ok(Adaptation { theta_prime, step_losses, query_loss, metric, key, retrieved, memory_value, outer })
}

fn missing(name: &str) -> EmoError {
    EmoError::Shape(format!("memory value lacks layer `{name}`"))
}

fn support_grad<P: Problem>(problem: &P, theta: &ParamSet, task: &P::Task, names: &[String]) -> Result<GradSet> {
    let mut g = Graph::new();
    let b = theta.bind(&mut g);
    let loss = problem.support_loss(&mut g, &b, task)?;
    let vars: Vec<Var> = names.iter().map(|n| b.get(n)).collect::<Result<_>>()?;
    grad(&mut g, loss, &BoundParams::new(names.to_vec(), vars))
}

/// Raw support gradient at the meta-initialisation; for Meta-SGD also
/// `∂L_S(θ − α ⊙ g)/∂α = −∇L_S(θ − α ⊙ g) ⊙ g`.
fn memory_value<P: Problem>(
    problem: &P,
    spec: &MetaLearnerSpec,
    params: &MetaParams,
    task: &P::Task,
    names: &[String],
) -> Result<TensorSet> {
    let g0 = support_grad(problem, &params.theta, task, names)?;
    if let Some(l) = g0.first_non_finite() {
        return Err(EmoError::NonFinite(format!("support gradient at layer `{l}`")));
    }
    if spec.variant != Variant::MetaSgd {
        return Ok(g0);
    }
    let mut stepped = params.theta.clone();
    for n in names {
        let a = params.lr.get(&format!("lr.{n}")).unwrap();
        let step = a.zip_map(g0.get(n).unwrap(), |x, y| x * y)?;
        stepped.get_mut(n).unwrap().axpy(-1.0, &step)?;
    }
    let g1 = support_grad(problem, &stepped, task, names)?;
    let mut out = g0.clone();
    for n in names {
        let lr_grad = g1.get(n).unwrap().zip_map(g0.get(n).unwrap(), |a, b| -a * b)?;
        out.insert(format!("lr.{n}"), lr_grad)?;
    }
    Ok(out)
}
