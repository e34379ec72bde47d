//! Meta-training and meta-testing: MAML, ANIL and Meta-SGD outer loops
//! around any inner optimizer, with episodic memory writes during training
//! and a frozen store at test time.

mod inner;
mod problem;
mod train;

pub use inner::{adapt, memory_schema, Adaptation, MetaModel, MetaParams, PARAMS_MAGIC, PARAMS_VERSION};
pub use problem::{
    fixed_quadratic, ClusterProblem, Metric, Problem, QuadraticEpisode, QuadraticFamily, QuadraticProblem,
    SinusoidProblem,
};
pub use train::{
    mean_ci95, meta_test, meta_train, meta_train_iteration, outer_update, EpisodeResult, IterationLog, OuterState, TaskGrads, TrainingLog,
};

use crate::error::{EmoError, Result};
use crate::optim::InnerOptConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Maml,
    Anil,
    MetaSgd,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Maml => "maml",
            Variant::Anil => "anil",
            Variant::MetaSgd => "meta-sgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "maml" => Ok(Variant::Maml),
            "anil" => Ok(Variant::Anil),
            "meta-sgd" | "metasgd" | "meta_sgd" => Ok(Variant::MetaSgd),
            other => Err(EmoError::Config(format!("unknown variant `{other}` (maml, anil, meta-sgd)"))),
        }
    }

    /// Default meta-batch size for the variant.
    pub fn default_batch(self) -> usize {
        match self {
            Variant::Anil => 8,
            Variant::Maml | Variant::MetaSgd => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OuterOptimizer {
    Sgd,
    Adam,
}

impl OuterOptimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            OuterOptimizer::Sgd => "sgd",
            OuterOptimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OuterOptimizer::Sgd),
            "adam" => Ok(OuterOptimizer::Adam),
            other => Err(EmoError::Config(format!("unknown outer optimizer `{other}` (sgd, adam)"))),
        }
    }
}

/// Smallest learning rate Meta-SGD may hold.
pub const META_SGD_MIN_LR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaLearnerSpec {
    pub variant: Variant,
    /// Outer learning rate β.
    pub beta: f64,
    pub meta_batch: usize,
    pub inner: InnerOptConfig,
    pub first_order: bool,
    pub outer_optimizer: OuterOptimizer,
    /// Write each task's memory right after it adapts instead of after the
    /// whole batch.
    pub per_task_writes: bool,
    /// Second-order runs are refused above this many trainable values.
    pub second_order_max_params: usize,
}

impl Default for MetaLearnerSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Maml,
            beta: 0.01,
            meta_batch: Variant::Maml.default_batch(),
            inner: InnerOptConfig::default(),
            first_order: true,
            outer_optimizer: OuterOptimizer::Sgd,
            per_task_writes: false,
            second_order_max_params: 20_000,
        }
    }
}

impl MetaLearnerSpec {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(EmoError::Config(format!("meta.beta must be >= 0, got {}", self.beta)));
        }
        if self.meta_batch == 0 {
            return Err(EmoError::Config("meta.batch must be >= 1".into()));
        }
        Ok(())
    }
}
