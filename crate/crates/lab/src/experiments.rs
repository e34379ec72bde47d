use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use emo_core::convlab::{lambda_max, spectral_radius_at, tau_grid, verify_theorem1, Theorem1Report, TAU_GRID_POINTS};
use emo_core::memstore::MemoryStore;
use emo_core::metaloop::{
    mean_ci95, memory_schema, meta_test, meta_train, ClusterProblem, EpisodeResult, MetaLearnerSpec, MetaModel,
    MetaParams, Problem, QuadraticProblem, SinusoidProblem, TrainingLog,
};
use emo_core::models::{Learner, LossKind, Mlp};
use emo_core::taskgen::{sample_quadratic_task, QuadraticConfig, Split, TaskStream};

use crate::config::{ExperimentConfig, ExperimentKind, FamilyKind, OptimizerCfg};
use crate::error::{LabError, Result};
use crate::report::{versioned, write_file, ReportRow, RunReport};

/// Stream used for drawing initial weights, apart from every task stream.
const INIT_STREAM: u64 = u64::MAX;

pub enum AnyProblem {
    Cluster(ClusterProblem),
    Sinusoid(SinusoidProblem),
    Quadratic(QuadraticProblem),
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<AnyProblem> {
    let l = &cfg.learner;
    Ok(match cfg.family.kind {
        FamilyKind::Cluster => {
            let fam = cfg.family.cluster.family();
            let net = Mlp::learner(fam.input_dim, &l.hidden, fam.n_way, l.activation.into())?;
            let mut p = ClusterProblem::new(fam, Learner::new(net, LossKind::CrossEntropy))?;
            p.init_gain = l.init_gain;
            AnyProblem::Cluster(p)
        }
        FamilyKind::Sinusoid => {
            let net = Mlp::learner(1, &l.hidden, 1, l.activation.into())?;
            let mut p = SinusoidProblem::new(cfg.family.sinusoid.family(), Learner::new(net, LossKind::Mse))?;
            p.init_gain = l.init_gain;
            AnyProblem::Sinusoid(p)
        }
        FamilyKind::Quadratic => AnyProblem::Quadratic(QuadraticProblem::new(cfg.family.quadratic.family())?),
    })
}

/// Runs `$body` with `$p` bound to the concrete problem.
#[macro_export]
macro_rules! with_problem {
    ($any:expr, $p:ident => $body:expr) => {
        match $any {
            $crate::experiments::AnyProblem::Cluster($p) => $body,
            $crate::experiments::AnyProblem::Sinusoid($p) => $body,
            $crate::experiments::AnyProblem::Quadratic($p) => $body,
        }
    };
}

/// Everything one seed of one condition produces.
pub struct SeedRun {
    pub model: MetaModel,
    pub spec: MetaLearnerSpec,
    pub params: MetaParams,
    pub store: MemoryStore,
    pub log: TrainingLog,
    pub wall_seconds: f64,
}

/// Fresh model, parameters and empty store for `seed`. Initial weights
/// depend only on the seed and architecture, so conditions sharing a seed
/// start from the same θ.
pub fn init_seed<P: Problem>(p: &P, cfg: &ExperimentConfig, seed: u64) -> Result<(MetaModel, MetaLearnerSpec, MetaParams, MemoryStore)> {
    let spec = cfg.meta_spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let theta = p.init_params(&mut rng.clone())?;
    let model = MetaModel::new(p, &spec, cfg.encoder_config(), cfg.aggregator.d_agg, cfg.aggregator.ffn_hidden, &theta)?;
    let params = MetaParams::init(p, &model, &spec, &mut rng)?;
    let schema = memory_schema(p, &spec, &params.theta)?;
    let store = MemoryStore::new(cfg.memory.capacity, model.encoder.cfg.d_key, schema, cfg.controller()?)?;
    Ok((model, spec, params, store))
}

pub fn train_seed<P: Problem>(p: &P, cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let (model, spec, mut params, mut store) = init_seed(p, cfg, seed)?;
    let log = meta_train(p, &model, &spec, &mut params, &mut store, cfg.iterations, &TaskStream::new(seed, Split::Train))?;
    store.set_frozen(true);
    Ok(SeedRun { model, spec, params, store, log, wall_seconds: start.elapsed().as_secs_f64() })
}

pub fn test_seed<P: Problem>(p: &P, run: &SeedRun, spec: &MetaLearnerSpec, seed: u64, episodes: usize) -> Result<Vec<EpisodeResult>> {
    Ok(meta_test(p, &run.model, spec, &run.params, &run.store, &TaskStream::new(seed, Split::Test), episodes)?)
}

/// Result of a `run`: the report (when the experiment produces one) and a
/// one-line status.
pub struct RunOutcome {
    pub report: Option<RunReport>,
    pub status: String,
}

struct CellResult {
    label: String,
    seed: u64,
    metrics: Vec<f64>,
    log: TrainingLog,
    wall_seconds: f64,
}

fn summarise(experiment: &str, hash: &str, metric: &str, labels: &[String], cells: &[CellResult]) -> RunReport {
    let rows = labels
        .iter()
        .map(|label| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| &c.label == label).collect();
            let all: Vec<f64> = mine.iter().flat_map(|c| c.metrics.iter().copied()).collect();
            let (mean, ci95) = mean_ci95(&all);
            ReportRow {
                condition: label.clone(),
                metric: metric.to_string(),
                mean,
                ci95,
                n_episodes: all.len(),
                wall_seconds: mine.iter().map(|c| c.wall_seconds).sum(),
            }
        })
        .collect();
    RunReport { experiment: experiment.to_string(), config_hash: hash.to_string(), rows }
}

fn curves_csv(cells: &[CellResult]) -> String {
    let mut out = String::from("condition,seed,iteration,query_loss,metric\n");
    for c in cells {
        for r in &c.log.rows {
            let _ = writeln!(out, "{},{},{},{:e},{:e}", c.label, c.seed, r.iteration, r.query_loss, r.metric);
        }
    }
    versioned(&out)
}

fn per_seed_csv(cells: &[CellResult]) -> String {
    let mut out = String::from("condition,seed,mean,ci95,n_episodes\n");
    for c in cells {
        let (m, h) = mean_ci95(&c.metrics);
        let _ = writeln!(out, "{},{},{:.6},{:.6},{}", c.label, c.seed, m, h, c.metrics.len());
    }
    versioned(&out)
}

fn write_report(out: &Path, report: &RunReport) -> Result<()> {
    write_file(&out.join("report.csv"), report.to_csv())?;
    write_file(&out.join("summary.md"), report.to_markdown())
}

/// Writes whatever finished, then surfaces the first failure.
fn finish(
    out: &Path,
    cfg: &ExperimentConfig,
    metric: &str,
    labels: &[String],
    results: Vec<Result<CellResult>>,
) -> Result<RunOutcome> {
    let mut cells = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let done: Vec<String> = labels
        .iter()
        .filter(|l| cells.iter().filter(|c| &c.label == *l).count() == cfg.seeds.len())
        .cloned()
        .collect();
    let report = summarise(cfg.experiment.as_str(), &cfg.hash(), metric, &done, &cells);
    write_report(out, &report)?;
    write_file(&out.join("curves.csv"), curves_csv(&cells))?;
    write_file(&out.join("per_seed.csv"), per_seed_csv(&cells))?;
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(RunOutcome { status: format!("{} conditions written to {}", report.rows.len(), out.display()), report: Some(report) })
}

fn grid_conditions(cfg: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    match cfg.experiment {
        ExperimentKind::CompareOptimizers => Ok(cfg
            .compare
            .conditions
            .iter()
            .map(|c| {
                let mut v = cfg.clone();
                v.inner.optimizer = OptimizerCfg::parse(c).expect("validated");
                (c.clone(), v)
            })
            .collect()),
        _ => {
            let axis = cfg.experiment.as_str().trim_start_matches("ablate-");
            cfg.ablation
                .values
                .iter()
                .map(|v| Ok((format!("{axis}={v}"), cfg.with_axis(v).map_err(|e| LabError::config("ablation.values", e))?)))
                .collect()
        }
    }
}

fn run_grid<P: Problem>(p: &P, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let conditions = grid_conditions(cfg)?;
    let labels: Vec<String> = conditions.iter().map(|(l, _)| l.clone()).collect();
    let jobs: Vec<(&String, &ExperimentConfig, u64)> =
        conditions.iter().flat_map(|(l, c)| cfg.seeds.iter().map(move |&s| (l, c, s))).collect();
    let results: Vec<Result<CellResult>> = jobs
        .par_iter()
        .map(|&(label, c, seed)| {
            let run = train_seed(p, c, seed)?;
            let eps = test_seed(p, &run, &run.spec, seed, c.test_episodes)?;
            Ok(CellResult {
                label: label.clone(),
                seed,
                metrics: eps.iter().map(|e| e.metric).collect(),
                log: run.log,
                wall_seconds: run.wall_seconds,
            })
        })
        .collect();
    finish(out, cfg, p.metric().as_str(), &labels, results)
}

/// Trains once per seed with the configured step count and evaluates at
/// every step count of the grid, so the `steps=0` row is the accuracy of
/// the meta-trained model before any adaptation.
fn run_steps<P: Problem>(p: &P, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let steps: Vec<usize> = cfg
        .ablation
        .values
        .iter()
        .map(|v| cfg.with_axis(v).map(|c| c.inner.steps).map_err(|e| LabError::config("ablation.values", e)))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = steps.iter().map(|s| format!("steps={s}")).collect();
    let per_seed: Vec<Result<Vec<CellResult>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = train_seed(p, cfg, seed)?;
            steps
                .iter()
                .zip(&labels)
                .map(|(&s, label)| {
                    let mut spec = run.spec.clone();
                    spec.inner.steps = s;
                    let start = Instant::now();
                    let eps = test_seed(p, &run, &spec, seed, cfg.test_episodes)?;
                    Ok(CellResult {
                        label: label.clone(),
                        seed,
                        metrics: eps.iter().map(|e| e.metric).collect(),
                        log: if s == cfg.inner.steps { run.log.clone() } else { TrainingLog::default() },
                        wall_seconds: start.elapsed().as_secs_f64(),
                    })
                })
                .collect()
        })
        .collect();
    let mut results = Vec::new();
    for r in per_seed {
        match r {
            Ok(cells) => results.extend(cells.into_iter().map(Ok)),
            Err(e) => results.push(Err(e)),
        }
    }
    finish(out, cfg, p.metric().as_str(), &labels, results)
}

fn run_train<P: Problem>(p: &P, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let hash = cfg.hash();
    let mut rows = Vec::new();
    let mut first_err = None;
    let runs: Vec<(u64, Result<(SeedRun, Vec<EpisodeResult>)>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let r = train_seed(p, cfg, seed).and_then(|run| {
                let eps = test_seed(p, &run, &run.spec, seed, cfg.test_episodes)?;
                Ok((run, eps))
            });
            (seed, r)
        })
        .collect();
    for (seed, r) in runs {
        match r {
            Ok((run, eps)) => {
                write_file(&out.join(format!("train_seed{seed}.csv")), versioned(&run.log.to_csv(false)))?;
                write_file(&out.join(format!("memory_seed{seed}.emo")), run.store.snapshot())?;
                write_file(&out.join(format!("params_seed{seed}.emp")), run.params.snapshot())?;
                let metrics: Vec<f64> = eps.iter().map(|e| e.metric).collect();
                let (mean, ci95) = mean_ci95(&metrics);
                rows.push(ReportRow {
                    condition: format!("seed{seed}"),
                    metric: p.metric().as_str().into(),
                    mean,
                    ci95,
                    n_episodes: metrics.len(),
                    wall_seconds: run.wall_seconds,
                });
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let report = RunReport { experiment: cfg.experiment.as_str().into(), config_hash: hash, rows };
    write_report(out, &report)?;
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(RunOutcome { status: format!("trained {} seeds into {}", report.rows.len(), out.display()), report: Some(report) })
}

fn read(path: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| LabError::io(Path::new(path), e))
}

fn run_eval<P: Problem>(p: &P, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let params = MetaParams::load(&read(&cfg.eval.params)?)?;
    let mut store = MemoryStore::load(&read(&cfg.eval.memory)?)?;
    store.set_frozen(true);
    let (model, spec, fresh, _) = init_seed(p, cfg, cfg.seeds[0])?;
    fresh.trainable().expect_congruent(&params.trainable())?;
    fresh.key.expect_congruent(&params.key)?;
    let start = Instant::now();
    let mut metrics = Vec::new();
    for &seed in &cfg.seeds {
        let eps = meta_test(p, &model, &spec, &params, &store, &TaskStream::new(seed, Split::Test), cfg.test_episodes)?;
        metrics.extend(eps.iter().map(|e| e.metric));
    }
    let (mean, ci95) = mean_ci95(&metrics);
    let report = RunReport {
        experiment: cfg.experiment.as_str().into(),
        config_hash: cfg.hash(),
        rows: vec![ReportRow {
            condition: "eval".into(),
            metric: p.metric().as_str().into(),
            mean,
            ci95,
            n_episodes: metrics.len(),
            wall_seconds: start.elapsed().as_secs_f64(),
        }],
    };
    write_report(out, &report)?;
    Ok(RunOutcome { status: format!("evaluated {} episodes", metrics.len()), report: Some(report) })
}

/// The bound check for the configured step size plus a λ_max table over
/// `sweep_alphas`.
pub fn theorem1(cfg: &ExperimentConfig) -> Result<(Theorem1Report, String)> {
    let t = &cfg.theorem1;
    let qc = QuadraticConfig { dim: t.dim, mu: t.mu, l: t.l, sigma: t.sigma };
    let task = sample_quadratic_task(&qc, &mut ChaCha8Rng::seed_from_u64(cfg.seeds[0]))?;
    let offset = if t.start_offset.is_empty() { vec![1.0; t.dim] } else { t.start_offset.clone() };
    let theta1: Vec<f64> = task.theta_star.iter().zip(&offset).map(|(a, b)| a + b).collect();
    let spec = t.spec(t.alpha)?;
    let report = verify_theorem1(&task, &spec, &theta1, t.horizon, t.n_seeds, cfg.seeds[0], t.tol)?;
    let grid = tau_grid(t.mu, t.l, TAU_GRID_POINTS)?;
    let mut sweep = String::from("alpha,lambda_max,max_spectral_radius,applicable\n");
    for &a in &t.sweep_alphas {
        let s = t.spec(a)?;
        let lam = lambda_max(&s, t.mu, t.l)?;
        let rho = grid.iter().map(|&tau| spectral_radius_at(&s, tau)).fold(0.0, f64::max);
        let _ = writeln!(sweep, "{a:e},{lam:.12},{rho:.12},{}", lam < 1.0);
    }
    Ok((report, versioned(&sweep)))
}

fn run_theorem1(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let (report, sweep) = theorem1(cfg)?;
    let hash = cfg.hash();
    write_file(&out.join("theorem1.csv"), versioned(&report.to_csv(&hash)))?;
    write_file(&out.join("lambda_sweep.csv"), sweep)?;
    let verdict = if !report.applicable {
        "inapplicable".to_string()
    } else {
        format!("satisfied={}", report.satisfied)
    };
    let md = format!(
        "# theorem1-sweep\n\nconfig hash `{hash}`\n\n- lambda_max: {:.6}\n- verdict: {verdict}\n- steps checked: {}\n",
        report.lambda_max,
        report.rows.len()
    );
    write_file(&out.join("summary.md"), md)?;
    Ok(RunOutcome { report: None, status: format!("lambda_max={:.6} {verdict}", report.lambda_max) })
}

/// Runs `cfg`, writing artifacts under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let cfg = &cfg.resolved();
    if cfg.experiment == ExperimentKind::Theorem1Sweep {
        return run_theorem1(cfg, out);
    }
    let problem = build_problem(cfg)?;
    with_problem!(&problem, p => match cfg.experiment {
        ExperimentKind::CompareOptimizers
        | ExperimentKind::AblateMemorySize
        | ExperimentKind::AblateK
        | ExperimentKind::AblateController
        | ExperimentKind::AblateAggregator => run_grid(p, cfg, out),
        ExperimentKind::AblateSteps => run_steps(p, cfg, out),
        ExperimentKind::Train => run_train(p, cfg, out),
        ExperimentKind::Eval => run_eval(p, cfg, out),
        ExperimentKind::Theorem1Sweep => unreachable!(),
    })
}

/// `output` from the config, relative paths resolved against `base`.
pub fn output_dir(cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    let p = Path::new(&cfg.output);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
