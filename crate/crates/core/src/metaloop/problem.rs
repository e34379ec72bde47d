use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EmoError, Result};
use crate::models::Learner;
use crate::numcore::{BoundParams, Graph, ParamSet, SmallMatrix, Tensor, Var};
use crate::taskgen::{
    sample_multimode_task, sample_quadratic_task, sample_sinusoid_task, Example, FamilyConfig, QuadraticConfig,
    QuadraticTask, SinusoidConfig, Target, Task,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Query accuracy, higher is better.
    Accuracy,
    /// Query mean squared error.
    Mse,
    /// `f(θ') − f*` on quadratic tasks.
    Suboptimality,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mse => "mse",
            Metric::Suboptimality => "suboptimality",
        }
    }
}

/// A task distribution together with the model adapted on it.
pub trait Problem: Sync {
    type Task: Send + Sync;

    fn sample_task(&self, rng: &mut ChaCha8Rng) -> Result<Self::Task>;
    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParamSet>;
    /// Parameters adapted by ANIL.
    fn head_params(&self) -> Vec<String>;
    /// Mean support loss.
    fn support_loss(&self, g: &mut Graph, p: &BoundParams, task: &Self::Task) -> Result<Var>;
    fn query_loss(&self, g: &mut Graph, p: &BoundParams, task: &Self::Task) -> Result<Var>;
    /// `(query loss, metric)`.
    fn evaluate(&self, p: &ParamSet, task: &Self::Task) -> Result<(f64, f64)>;
    /// Labelled pairs the key encoder summarises.
    fn key_examples<'a>(&self, task: &'a Self::Task) -> &'a [Example];
    fn key_input_dim(&self) -> usize;
    fn key_label_dim(&self) -> usize;
    fn metric(&self) -> Metric;
    fn task_bytes(&self, task: &Self::Task) -> Vec<u8>;
}

/// Multi-mode Gaussian-cluster classification with an MLP learner.
#[derive(Clone, Debug)]
pub struct ClusterProblem {
    pub family: FamilyConfig,
    pub learner: Learner,
    pub init_gain: f64,
}

impl ClusterProblem {
    pub fn new(family: FamilyConfig, learner: Learner) -> Result<Self> {
        family.validate()?;
        if learner.net.input_dim() != family.input_dim || learner.net.output_dim() != family.n_way {
            return Err(EmoError::Config(format!(
                "learner maps {} -> {}, family needs {} -> {}",
                learner.net.input_dim(),
                learner.net.output_dim(),
                family.input_dim,
                family.n_way
            )));
        }
        Ok(Self { family, learner, init_gain: 1.0 })
    }
}

fn supervised_eval(learner: &Learner, p: &ParamSet, examples: &[Example]) -> Result<(f64, f64)> {
    learner.evaluate(p, examples)
}

impl Problem for ClusterProblem {
    type Task = Task;

    fn sample_task(&self, rng: &mut ChaCha8Rng) -> Result<Task> {
        sample_multimode_task(&self.family, rng)
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
        self.learner.net.init(self.init_gain, rng)
    }

    fn head_params(&self) -> Vec<String> {
        self.learner.net.head_param_names()
    }

    fn support_loss(&self, g: &mut Graph, p: &BoundParams, task: &Task) -> Result<Var> {
        self.learner.loss(g, p, &task.support)
    }

    fn query_loss(&self, g: &mut Graph, p: &BoundParams, task: &Task) -> Result<Var> {
        self.learner.loss(g, p, &task.query)
    }

    fn evaluate(&self, p: &ParamSet, task: &Task) -> Result<(f64, f64)> {
        supervised_eval(&self.learner, p, &task.query)
    }

    fn key_examples<'a>(&self, task: &'a Task) -> &'a [Example] {
        &task.support
    }

    fn key_input_dim(&self) -> usize {
        self.family.input_dim
    }

    fn key_label_dim(&self) -> usize {
        self.family.n_way
    }

    fn metric(&self) -> Metric {
        Metric::Accuracy
    }

    fn task_bytes(&self, task: &Task) -> Vec<u8> {
        task.to_bytes()
    }
}

/// Sinusoid regression with an MLP learner.
#[derive(Clone, Debug)]
pub struct SinusoidProblem {
    pub cfg: SinusoidConfig,
    pub learner: Learner,
    pub init_gain: f64,
}

impl SinusoidProblem {
    pub fn new(cfg: SinusoidConfig, learner: Learner) -> Result<Self> {
        cfg.validate()?;
        if learner.net.input_dim() != 1 || learner.net.output_dim() != 1 {
            return Err(EmoError::Config("sinusoid learner must map 1 -> 1".into()));
        }
        Ok(Self { cfg, learner, init_gain: 1.0 })
    }
}

impl Problem for SinusoidProblem {
    type Task = Task;

    fn sample_task(&self, rng: &mut ChaCha8Rng) -> Result<Task> {
        sample_sinusoid_task(&self.cfg, rng)
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
        self.learner.net.init(self.init_gain, rng)
    }

    fn head_params(&self) -> Vec<String> {
        self.learner.net.head_param_names()
    }

    fn support_loss(&self, g: &mut Graph, p: &BoundParams, task: &Task) -> Result<Var> {
        self.learner.loss(g, p, &task.support)
    }

    fn query_loss(&self, g: &mut Graph, p: &BoundParams, task: &Task) -> Result<Var> {
        self.learner.loss(g, p, &task.query)
    }

    fn evaluate(&self, p: &ParamSet, task: &Task) -> Result<(f64, f64)> {
        supervised_eval(&self.learner, p, &task.query)
    }

    fn key_examples<'a>(&self, task: &'a Task) -> &'a [Example] {
        &task.support
    }

    fn key_input_dim(&self) -> usize {
        1
    }

    fn key_label_dim(&self) -> usize {
        1
    }

    fn metric(&self) -> Metric {
        Metric::Mse
    }

    fn task_bytes(&self, task: &Task) -> Vec<u8> {
        task.to_bytes()
    }
}

/// Family of quadratic bowls whose optima scatter around a shared centre.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFamily {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    /// Standard deviation of the fixed per-task linear perturbation of the
    /// support loss, i.e. the few-shot gradient noise.
    pub sigma: f64,
    /// Scale of the optimum scatter around the centre.
    pub spread: f64,
    /// Distance of the centre from the origin, where θ starts.
    pub center_norm: f64,
    /// One Hessian for the whole family instead of one per task.
    pub shared_h: bool,
    /// Noise on the probe observations the key encoder sees.
    pub probe_noise: f64,
    pub seed: u64,
}

impl Default for QuadraticFamily {
    fn default() -> Self {
        Self { dim: 4, mu: 1.0, l: 10.0, sigma: 0.1, spread: 0.05, center_norm: 2.0, shared_h: true, probe_noise: 0.01, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticEpisode {
    pub task: QuadraticTask,
    /// Linear term of the support loss; its gradient offset.
    pub noise: Vec<f64>,
    /// `(probe point, noisy f(probe))` pairs.
    pub probes: Vec<Example>,
}

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    pub family: QuadraticFamily,
    center: Vec<f64>,
    shared: Option<QuadraticTask>,
}

impl QuadraticProblem {
    pub fn new(family: QuadraticFamily) -> Result<Self> {
        QuadraticConfig { dim: family.dim, mu: family.mu, l: family.l, sigma: family.sigma }.validate()?;
        if !(family.spread >= 0.0 && family.center_norm >= 0.0 && family.probe_noise >= 0.0) {
            return Err(EmoError::Config("quadratic spread, center_norm and probe_noise must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(family.seed);
        let dir: Vec<f64> = (0..family.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let center = dir.iter().map(|v| v / n * family.center_norm).collect();
        let shared = if family.shared_h {
            let cfg = QuadraticConfig { dim: family.dim, mu: family.mu, l: family.l, sigma: family.sigma };
            Some(sample_quadratic_task(&cfg, &mut rng)?)
        } else {
            None
        };
        Ok(Self { family, center, shared })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn probe_points(&self) -> Vec<Vec<f64>> {
        let d = self.family.dim;
        let mut pts = vec![vec![0.0; d]];
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            pts.push(e);
        }
        pts
    }
}

impl Problem for QuadraticProblem {
    type Task = QuadraticEpisode;

    fn sample_task(&self, rng: &mut ChaCha8Rng) -> Result<QuadraticEpisode> {
        let f = &self.family;
        let cfg = QuadraticConfig { dim: f.dim, mu: f.mu, l: f.l, sigma: f.sigma };
        let base = match &self.shared {
            Some(t) => t.clone(),
            None => sample_quadratic_task(&cfg, rng)?,
        };
        let theta_star: Vec<f64> = self
            .center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                c + f.spread * z
            })
            .collect();
        let task = QuadraticTask { theta_star, ..base };
        let noise = task.noise(rng);
        let probes = self
            .probe_points()
            .into_iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(rng);
                let y = task.value(&x) + f.probe_noise * z;
                Example { x, y: Target::Value(y) }
            })
            .collect();
        Ok(QuadraticEpisode { task, noise, probes })
    }

    fn init_params(&self, _rng: &mut ChaCha8Rng) -> Result<ParamSet> {
        ParamSet::from_entries(vec![("theta".into(), Tensor::zeros(&[self.family.dim]))])
    }

    fn head_params(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn support_loss(&self, g: &mut Graph, p: &BoundParams, ep: &QuadraticEpisode) -> Result<Var> {
        let th = p.get("theta")?;
        let f = ep.task.value_var(g, th)?;
        let e = g.constant(Tensor::vector(ep.noise.clone()));
        let lin = g.mul(e, th)?;
        let lin = g.sum(lin);
        g.add(f, lin)
    }

    fn query_loss(&self, g: &mut Graph, p: &BoundParams, ep: &QuadraticEpisode) -> Result<Var> {
        ep.task.value_var(g, p.get("theta")?)
    }

    fn evaluate(&self, p: &ParamSet, ep: &QuadraticEpisode) -> Result<(f64, f64)> {
        let th = p.get("theta").ok_or_else(|| EmoError::Config("missing `theta`".into()))?;
        let v = ep.task.value(th.data());
        Ok((v, v))
    }

    fn key_examples<'a>(&self, ep: &'a QuadraticEpisode) -> &'a [Example] {
        &ep.probes
    }

    fn key_input_dim(&self) -> usize {
        self.family.dim
    }

    fn key_label_dim(&self) -> usize {
        1
    }

    fn metric(&self) -> Metric {
        Metric::Suboptimality
    }

    fn task_bytes(&self, ep: &QuadraticEpisode) -> Vec<u8> {
        let mut out = Vec::new();
        for v in ep.task.h.data().iter().chain(&ep.task.theta_star).chain(&ep.noise) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &ep.probes {
            out.extend_from_slice(&p.y.value().unwrap_or(0.0).to_le_bytes());
        }
        out
    }
}

/// Quadratic with a given Hessian, used by tests that need exact control.
pub fn fixed_quadratic(h: SmallMatrix, theta_star: Vec<f64>) -> Result<QuadraticTask> {
    QuadraticTask::new(h, theta_star, 0.0)
}

