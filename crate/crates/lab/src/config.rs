use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use emo_core::convlab::MultiStepSpec;
use emo_core::memstore::ControllerKind;
use emo_core::metaloop::{MetaLearnerSpec, OuterOptimizer, QuadraticFamily, Variant};
use emo_core::models::{Activation, EncoderConfig};
use emo_core::optim::{AggregatorKind, InnerOptConfig, InnerOptimizer};
use emo_core::taskgen::{FamilyConfig, ModeConfig, SinusoidConfig};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CompareOptimizers,
    AblateMemorySize,
    AblateK,
    AblateController,
    AblateAggregator,
    AblateSteps,
    Theorem1Sweep,
    Train,
    Eval,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::CompareOptimizers,
        ExperimentKind::AblateMemorySize,
        ExperimentKind::AblateK,
        ExperimentKind::AblateController,
        ExperimentKind::AblateAggregator,
        ExperimentKind::AblateSteps,
        ExperimentKind::Theorem1Sweep,
        ExperimentKind::Train,
        ExperimentKind::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::CompareOptimizers => "compare-optimizers",
            ExperimentKind::AblateMemorySize => "ablate-memory-size",
            ExperimentKind::AblateK => "ablate-k",
            ExperimentKind::AblateController => "ablate-controller",
            ExperimentKind::AblateAggregator => "ablate-aggregator",
            ExperimentKind::AblateSteps => "ablate-steps",
            ExperimentKind::Theorem1Sweep => "theorem1-sweep",
            ExperimentKind::Train => "train",
            ExperimentKind::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn is_ablation(self) -> bool {
        matches!(
            self,
            ExperimentKind::AblateMemorySize
                | ExperimentKind::AblateK
                | ExperimentKind::AblateController
                | ExperimentKind::AblateAggregator
                | ExperimentKind::AblateSteps
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Cluster,
    Sinusoid,
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterCfg {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub input_dim: usize,
    pub n_modes: usize,
    pub prototype_scale: f64,
    pub noise_std: f64,
    pub jitter: f64,
    pub prototype_seed: u64,
}

impl Default for ClusterCfg {
    fn default() -> Self {
        let f = FamilyConfig::default();
        Self {
            n_way: f.n_way,
            k_shot: f.k_shot,
            m_query: f.m_query,
            input_dim: f.input_dim,
            n_modes: f.modes.len(),
            prototype_scale: 1.0,
            noise_std: 0.5,
            jitter: f.jitter,
            prototype_seed: f.prototype_seed,
        }
    }
}

impl ClusterCfg {
    /// Modes share scale and noise and differ by a cyclic label shift.
    pub fn family(&self) -> FamilyConfig {
        FamilyConfig {
            n_way: self.n_way,
            k_shot: self.k_shot,
            m_query: self.m_query,
            input_dim: self.input_dim,
            modes: (0..self.n_modes)
                .map(|m| ModeConfig { prototype_scale: self.prototype_scale, noise_std: self.noise_std, label_shift: m })
                .collect(),
            jitter: self.jitter,
            prototype_seed: self.prototype_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinusoidCfg {
    pub k_shot: usize,
    pub m_query: usize,
    pub amplitude: [f64; 2],
    pub phase: [f64; 2],
    pub x_range: [f64; 2],
}

impl Default for SinusoidCfg {
    fn default() -> Self {
        let s = SinusoidConfig::default();
        Self {
            k_shot: s.k_shot,
            m_query: s.m_query,
            amplitude: [s.amplitude.0, s.amplitude.1],
            phase: [s.phase.0, s.phase.1],
            x_range: [s.x_range.0, s.x_range.1],
        }
    }
}

impl SinusoidCfg {
    pub fn family(&self) -> SinusoidConfig {
        SinusoidConfig {
            k_shot: self.k_shot,
            m_query: self.m_query,
            amplitude: (self.amplitude[0], self.amplitude[1]),
            phase: (self.phase[0], self.phase[1]),
            x_range: (self.x_range[0], self.x_range[1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticCfg {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    pub sigma: f64,
    pub spread: f64,
    pub center_norm: f64,
    pub shared_h: bool,
    pub probe_noise: f64,
    pub seed: u64,
}

impl Default for QuadraticCfg {
    fn default() -> Self {
        let q = QuadraticFamily::default();
        Self {
            dim: q.dim,
            mu: q.mu,
            l: q.l,
            sigma: q.sigma,
            spread: q.spread,
            center_norm: q.center_norm,
            shared_h: q.shared_h,
            probe_noise: q.probe_noise,
            seed: q.seed,
        }
    }
}

impl QuadraticCfg {
    pub fn family(&self) -> QuadraticFamily {
        QuadraticFamily {
            dim: self.dim,
            mu: self.mu,
            l: self.l,
            sigma: self.sigma,
            spread: self.spread,
            center_norm: self.center_norm,
            shared_h: self.shared_h,
            probe_noise: self.probe_noise,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyCfg {
    pub kind: FamilyKind,
    pub cluster: ClusterCfg,
    pub sinusoid: SinusoidCfg,
    pub quadratic: QuadraticCfg,
}

impl Default for FamilyCfg {
    fn default() -> Self {
        Self {
            kind: FamilyKind::Cluster,
            cluster: ClusterCfg::default(),
            sinusoid: SinusoidCfg::default(),
            quadratic: QuadraticCfg::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationCfg {
    Tanh,
    Relu,
}

impl From<ActivationCfg> for Activation {
    fn from(a: ActivationCfg) -> Self {
        match a {
            ActivationCfg::Tanh => Activation::Tanh,
            ActivationCfg::Relu => Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerCfg {
    pub hidden: Vec<usize>,
    pub activation: ActivationCfg,
    pub init_gain: f64,
}

impl Default for LearnerCfg {
    fn default() -> Self {
        Self { hidden: vec![32], activation: ActivationCfg::Relu, init_gain: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantCfg {
    Maml,
    Anil,
    MetaSgd,
}

impl From<VariantCfg> for Variant {
    fn from(v: VariantCfg) -> Self {
        match v {
            VariantCfg::Maml => Variant::Maml,
            VariantCfg::Anil => Variant::Anil,
            VariantCfg::MetaSgd => Variant::MetaSgd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterCfg {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaCfg {
    pub variant: VariantCfg,
    pub beta: f64,
    /// 0 picks the variant's default batch size.
    pub batch: usize,
    pub first_order: bool,
    pub outer_optimizer: OuterCfg,
    pub per_task_writes: bool,
    pub second_order_max_params: usize,
}

impl Default for MetaCfg {
    fn default() -> Self {
        let s = MetaLearnerSpec::default();
        Self {
            variant: VariantCfg::Maml,
            beta: s.beta,
            batch: 0,
            first_order: s.first_order,
            outer_optimizer: OuterCfg::Sgd,
            per_task_writes: s.per_task_writes,
            second_order_max_params: s.second_order_max_params,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerCfg {
    Sgd,
    Momentum,
    Adam,
    Emo,
}

impl OptimizerCfg {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerCfg::Sgd => "sgd",
            OptimizerCfg::Momentum => "momentum",
            OptimizerCfg::Adam => "adam",
            OptimizerCfg::Emo => "emo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [OptimizerCfg::Sgd, OptimizerCfg::Momentum, OptimizerCfg::Adam, OptimizerCfg::Emo]
            .into_iter()
            .find(|o| o.as_str() == s)
    }
}

impl From<OptimizerCfg> for InnerOptimizer {
    fn from(o: OptimizerCfg) -> Self {
        match o {
            OptimizerCfg::Sgd => InnerOptimizer::Sgd,
            OptimizerCfg::Momentum => InnerOptimizer::Momentum,
            OptimizerCfg::Adam => InnerOptimizer::Adam,
            OptimizerCfg::Emo => InnerOptimizer::Emo,
        }
    }
}

fn default_optimizer() -> OptimizerCfg {
    OptimizerCfg::Emo
}
fn default_k() -> usize {
    20
}
fn default_aggregator() -> String {
    "mean".into()
}
fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// `alpha` and `steps` have no defaults and must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerCfg {
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerCfg,
    pub alpha: f64,
    pub steps: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_aggregator")]
    pub aggregator: String,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Take one mean-of-memories step before the first gradient step.
    #[serde(default)]
    pub recall: bool,
    /// 0 disables clipping.
    #[serde(default)]
    pub clip_norm: f64,
}

impl Default for InnerCfg {
    fn default() -> Self {
        Self {
            optimizer: default_optimizer(),
            alpha: 0.01,
            steps: 5,
            k: default_k(),
            aggregator: default_aggregator(),
            momentum: default_momentum(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            recall: false,
            clip_norm: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryCfg {
    pub capacity: usize,
    pub controller: String,
}

impl Default for MemoryCfg {
    fn default() -> Self {
        Self { capacity: 100, controller: "fifo".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderCfg {
    pub hidden: Vec<usize>,
    pub d_e: usize,
    pub d_key: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    pub init_gain: f64,
}

impl Default for EncoderCfg {
    fn default() -> Self {
        let e = EncoderConfig::new(1, 1);
        Self { hidden: e.hidden, d_e: e.d_e, d_key: e.d_key, blocks: e.blocks, ffn_hidden: e.ffn_hidden, init_gain: e.init_gain }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorCfg {
    pub d_agg: usize,
    pub ffn_hidden: usize,
}

impl Default for AggregatorCfg {
    fn default() -> Self {
        Self { d_agg: 32, ffn_hidden: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareCfg {
    pub conditions: Vec<String>,
}

impl Default for CompareCfg {
    fn default() -> Self {
        Self { conditions: ["sgd", "momentum", "adam", "emo"].map(String::from).to_vec() }
    }
}

/// A grid entry: a number for sizes and counts, a name for controllers and
/// aggregators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Int(u64),
    Name(String),
}

impl std::fmt::Display for GridValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridValue::Int(v) => write!(f, "{v}"),
            GridValue::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationCfg {
    /// Empty picks the default grid of the experiment kind.
    pub values: Vec<GridValue>,
}

impl Default for AblationCfg {
    fn default() -> Self {
        Self { values: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Cfg {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    pub sigma: f64,
    /// Step count S; ignored when `weights` is given.
    pub steps: usize,
    /// Empty means uniform `1/S`.
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub horizon: usize,
    pub n_seeds: usize,
    pub tol: f64,
    /// Offset of the starting point from the optimum; empty means all ones.
    pub start_offset: Vec<f64>,
    /// Step sizes for the λ_max table.
    pub sweep_alphas: Vec<f64>,
}

impl Default for Theorem1Cfg {
    fn default() -> Self {
        Self {
            dim: 2,
            mu: 1.0,
            l: 10.0,
            sigma: 0.1,
            steps: 1,
            weights: Vec::new(),
            alpha: 0.02,
            horizon: 500,
            n_seeds: 100,
            tol: 0.05,
            start_offset: Vec::new(),
            sweep_alphas: vec![0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2],
        }
    }
}

impl Theorem1Cfg {
    pub fn resolved_weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0 / self.steps.max(1) as f64; self.steps]
        } else {
            self.weights.clone()
        }
    }

    pub fn spec(&self, alpha: f64) -> emo_core::Result<MultiStepSpec> {
        MultiStepSpec::new(self.resolved_weights(), alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalCfg {
    /// Parameter snapshot written by a train run.
    pub params: String,
    /// Memory snapshot written by a train run.
    pub memory: String,
}

fn default_iterations() -> usize {
    100
}
fn default_test_episodes() -> usize {
    100
}
fn default_output() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_test_episodes")]
    pub test_episodes: usize,
    /// Output directory. Not part of the config hash.
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub family: FamilyCfg,
    #[serde(default)]
    pub learner: LearnerCfg,
    #[serde(default)]
    pub meta: MetaCfg,
    pub inner: InnerCfg,
    #[serde(default)]
    pub memory: MemoryCfg,
    #[serde(default)]
    pub encoder: EncoderCfg,
    #[serde(default)]
    pub aggregator: AggregatorCfg,
    #[serde(default)]
    pub compare: CompareCfg,
    #[serde(default)]
    pub ablation: AblationCfg,
    #[serde(default)]
    pub theorem1: Theorem1Cfg,
    #[serde(default)]
    pub eval: EvalCfg,
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Parses and validates a TOML config. Errors carry the dotted path of the
/// offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| LabError::Parse(e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().message().trim().to_string();
        let path = match missing_field(&message) {
            Some(field) if path == "." => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        LabError::Config { path, message }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn check(ok: bool, path: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(LabError::config(path, message))
    }
}

fn core(path: &str, r: emo_core::Result<()>) -> Result<()> {
    r.map_err(|e| LabError::config(path, e.to_string()))
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment: kind,
            seeds: vec![0, 1, 2],
            iterations: default_iterations(),
            test_episodes: default_test_episodes(),
            output: format!("out/{}", kind.as_str()),
            family: FamilyCfg::default(),
            learner: LearnerCfg::default(),
            meta: MetaCfg::default(),
            inner: InnerCfg::default(),
            memory: MemoryCfg::default(),
            encoder: EncoderCfg::default(),
            aggregator: AggregatorCfg::default(),
            compare: CompareCfg::default(),
            ablation: AblationCfg::default(),
            theorem1: Theorem1Cfg::default(),
            eval: EvalCfg::default(),
        };
        if kind.is_ablation() {
            cfg.ablation.values = default_grid(kind);
        }
        if kind == ExperimentKind::Eval {
            cfg.eval = EvalCfg { params: "out/train/params_seed0.emp".into(), memory: "out/train/memory_seed0.emo".into() };
        }
        cfg
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        check(!self.seeds.is_empty(), "seeds", "at least one seed is required")?;
        let inner = self.inner_config().map_err(|e| LabError::config("inner", e.to_string()))?;
        core("inner", inner.validate())?;
        self.controller()?;
        check(self.meta.beta >= 0.0 && self.meta.beta.is_finite(), "meta.beta", "must be >= 0")?;
        match self.family.kind {
            FamilyKind::Cluster => {
                check(self.family.cluster.n_modes >= 1, "family.cluster.n_modes", "must be >= 1")?;
                core("family.cluster", self.family.cluster.family().validate())?;
            }
            FamilyKind::Sinusoid => core("family.sinusoid", self.family.sinusoid.family().validate())?,
            FamilyKind::Quadratic => {
                let q = &self.family.quadratic;
                check(q.dim >= 1, "family.quadratic.dim", "must be >= 1")?;
                check(q.mu > 0.0 && q.l >= q.mu, "family.quadratic.mu", "need 0 < mu <= l")?;
            }
        }
        check(self.learner.init_gain > 0.0, "learner.init_gain", "must be > 0")?;
        let enc = &self.encoder;
        check(enc.d_e == enc.d_key, "encoder.d_key", "must equal encoder.d_e")?;
        check(enc.d_e > 0 && enc.ffn_hidden > 0, "encoder.d_e", "must be >= 1")?;
        check(self.aggregator.d_agg > 0 && self.aggregator.ffn_hidden > 0, "aggregator.d_agg", "must be >= 1")?;
        let reports = !matches!(self.experiment, ExperimentKind::Theorem1Sweep | ExperimentKind::Train);
        if reports {
            check(
                self.seeds.len() * self.test_episodes >= 30,
                "test_episodes",
                "confidence intervals need at least 30 test episodes per condition",
            )?;
        }
        match self.experiment {
            ExperimentKind::CompareOptimizers => {
                check(!self.compare.conditions.is_empty(), "compare.conditions", "must not be empty")?;
                for c in &self.compare.conditions {
                    check(OptimizerCfg::parse(c).is_some(), "compare.conditions", format!("unknown optimizer `{c}`"))?;
                }
            }
            k if k.is_ablation() => {
                let grid = if self.ablation.values.is_empty() { default_grid(k) } else { self.ablation.values.clone() };
                for v in &grid {
                    let probe = self.with_axis(v).map_err(|e| LabError::config("ablation.values", e.to_string()))?;
                    probe.inner_config().map_err(|e| LabError::config("ablation.values", e.to_string()))?;
                    probe.controller().map_err(|e| LabError::config("ablation.values", e.to_string()))?;
                }
            }
            ExperimentKind::Theorem1Sweep => {
                let t = &self.theorem1;
                check(t.dim >= 1, "theorem1.dim", "must be >= 1")?;
                check(t.mu > 0.0 && t.l >= t.mu, "theorem1.mu", "need 0 < mu <= l")?;
                check(t.sigma >= 0.0, "theorem1.sigma", "must be >= 0")?;
                check(t.steps >= 1 || !t.weights.is_empty(), "theorem1.steps", "must be >= 1")?;
                core("theorem1.weights", t.spec(t.alpha).map(|_| ()))?;
                check(t.n_seeds >= 1, "theorem1.n_seeds", "must be >= 1")?;
                check(t.start_offset.is_empty() || t.start_offset.len() == t.dim, "theorem1.start_offset", "needs dim entries")?;
                for &a in &t.sweep_alphas {
                    check(a > 0.0 && a.is_finite(), "theorem1.sweep_alphas", "step sizes must be > 0")?;
                }
            }
            ExperimentKind::Eval => {
                check(!self.eval.params.is_empty(), "eval.params", "path required")?;
                check(!self.eval.memory.is_empty(), "eval.memory", "path required")?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn inner_config(&self) -> emo_core::Result<InnerOptConfig> {
        let i = &self.inner;
        Ok(InnerOptConfig {
            optimizer: i.optimizer.into(),
            alpha: i.alpha,
            steps: i.steps,
            k: i.k,
            aggregator: AggregatorKind::parse(&i.aggregator)?,
            momentum: i.momentum,
            beta1: i.beta1,
            beta2: i.beta2,
            eps: i.eps,
            recall: i.recall,
            clip_norm: if i.clip_norm > 0.0 { Some(i.clip_norm) } else { None },
        })
    }

    pub fn controller(&self) -> Result<ControllerKind> {
        ControllerKind::parse(&self.memory.controller).map_err(|e| LabError::config("memory.controller", e.to_string()))
    }

    pub fn meta_spec(&self) -> emo_core::Result<MetaLearnerSpec> {
        let variant: Variant = self.meta.variant.into();
        let spec = MetaLearnerSpec {
            variant,
            beta: self.meta.beta,
            meta_batch: if self.meta.batch == 0 { variant.default_batch() } else { self.meta.batch },
            inner: self.inner_config()?,
            first_order: self.meta.first_order,
            outer_optimizer: match self.meta.outer_optimizer {
                OuterCfg::Sgd => OuterOptimizer::Sgd,
                OuterCfg::Adam => OuterOptimizer::Adam,
            },
            per_task_writes: self.meta.per_task_writes,
            second_order_max_params: self.meta.second_order_max_params,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            hidden: e.hidden.clone(),
            d_e: e.d_e,
            d_key: e.d_key,
            blocks: e.blocks,
            ffn_hidden: e.ffn_hidden,
            init_gain: e.init_gain,
            ..EncoderConfig::new(1, 1)
        }
    }

    /// Copy with one ablation axis set to `v`.
    pub fn with_axis(&self, v: &GridValue) -> std::result::Result<Self, String> {
        let mut c = self.clone();
        let int = |v: &GridValue| match v {
            GridValue::Int(i) => Ok(*i as usize),
            GridValue::Name(s) => Err(format!("expected a number, got `{s}`")),
        };
        let name = |v: &GridValue| match v {
            GridValue::Name(s) => Ok(s.clone()),
            GridValue::Int(i) => Err(format!("expected a name, got {i}")),
        };
        match self.experiment {
            ExperimentKind::AblateMemorySize => c.memory.capacity = int(v)?,
            ExperimentKind::AblateK => {
                c.inner.k = int(v)?;
                if c.inner.k == 0 {
                    return Err("k must be >= 1".into());
                }
            }
            ExperimentKind::AblateController => c.memory.controller = name(v)?,
            ExperimentKind::AblateAggregator => c.inner.aggregator = name(v)?,
            ExperimentKind::AblateSteps => c.inner.steps = int(v)?,
            _ => return Err("not an ablation experiment".into()),
        }
        Ok(c)
    }

    /// Copy with implicit defaults made explicit, so equivalent configs
    /// hash alike.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if c.meta.batch == 0 {
            c.meta.batch = Variant::from(c.meta.variant).default_batch();
        }
        if c.theorem1.weights.is_empty() {
            c.theorem1.weights = c.theorem1.resolved_weights();
        }
        if c.theorem1.start_offset.is_empty() {
            c.theorem1.start_offset = vec![1.0; c.theorem1.dim];
        }
        if c.ablation.values.is_empty() && c.experiment.is_ablation() {
            c.ablation.values = default_grid(c.experiment);
        }
        c.inner.aggregator = c.inner.aggregator.to_ascii_lowercase();
        c.memory.controller = c.memory.controller.to_ascii_lowercase();
        c
    }

    /// SHA-256 of the resolved config as canonical JSON, output path excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self.resolved()).expect("config serialises");
        if let Some(map) = v.as_object_mut() {
            map.remove("output");
        }
        let digest = Sha256::digest(serde_json::to_string(&v).expect("json").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn default_grid(kind: ExperimentKind) -> Vec<GridValue> {
    let ints = |xs: &[u64]| xs.iter().map(|&x| GridValue::Int(x)).collect();
    let names = |xs: &[&str]| xs.iter().map(|x| GridValue::Name(x.to_string())).collect();
    match kind {
        ExperimentKind::AblateMemorySize => ints(&[10, 50, 100]),
        ExperimentKind::AblateK => ints(&[1, 5, 10, 20]),
        ExperimentKind::AblateController => names(&["fifo", "lru", "clock"]),
        ExperimentKind::AblateAggregator => names(&["mean", "sum", "attention"]),
        ExperimentKind::AblateSteps => ints(&[0, 1, 2, 5]),
        _ => Vec::new(),
    }
}
