//! Method-vs-baseline runs over seeded streams, metrics, aggregation and CSV.

mod config;
mod csv_io;
mod metrics;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{contract, Error, Result};
use crate::generators::{
    gen_classification_stream, gen_expert_stream, gen_regression_stream, max_abs_label,
    squared_loss_lipschitz, StreamCfg,
};
use crate::loss::{LossKind, Task};
use crate::meta_loss::{meta_loss_ewa_eta, meta_loss_ewa_prior, meta_loss_oga, InnerSolverCfg};
use crate::meta_strategy::{
    alpha_eta, alpha_oga, alpha_practical, alpha_prior, lipschitz_oga, ogms_eta_step, opms_step,
    opms_step_mean, MetaState,
};
use crate::params::{Bounds, OgaParam, TuningParam};
use crate::within_task::{run_ewa, run_oga, TaskTrace};

pub use config::{parse_config, ConfigMap};
pub use csv_io::{read_csv, write_csv, CSV_HEADER};
pub use metrics::{
    aggregate, final_regret, last_half_mean, mse_end_of_task, regret_curve, summarize,
    summarize_runs, CurvePoint, SummaryCell,
};

/// Candidate gradient bounds scanned by OPMS when no grid is given.
pub const DEFAULT_GAMMA_GRID: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodName {
    IsolationOga,
    MeanOpms,
    FullOpms,
    IsolationEwa,
    OgmsEta,
    OpmsEta,
    OpmsPrior,
}

impl MethodName {
    pub const ALL: [MethodName; 7] = [
        MethodName::IsolationOga,
        MethodName::MeanOpms,
        MethodName::FullOpms,
        MethodName::IsolationEwa,
        MethodName::OgmsEta,
        MethodName::OpmsEta,
        MethodName::OpmsPrior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::IsolationOga => "i-oga",
            MethodName::MeanOpms => "mean-opms",
            MethodName::FullOpms => "opms",
            MethodName::IsolationEwa => "i-ewa",
            MethodName::OgmsEta => "ogms-eta",
            MethodName::OpmsEta => "opms-eta",
            MethodName::OpmsPrior => "opms-prior",
        }
    }

    pub fn is_ewa(self) -> bool {
        matches!(
            self,
            MethodName::IsolationEwa | MethodName::OgmsEta | MethodName::OpmsEta | MethodName::OpmsPrior
        )
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaRule {
    Theoretical,
    /// `1 / sqrt(T)`
    Practical,
    Fixed(f64),
}

impl FromStr for AlphaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" | "theoretical" => Ok(AlphaRule::Theoretical),
            "practical" => Ok(AlphaRule::Practical),
            v => {
                let a: f64 = v
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad alpha {v:?}")))?;
                if a > 0.0 && a.is_finite() {
                    Ok(AlphaRule::Fixed(a))
                } else {
                    Err(Error::Parse(format!("alpha must be positive, got {v}")))
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaRule {
    Fixed,
    Learned,
}

/// Which of several parallel learners (one per gradient-bound candidate) is
/// reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SelectionRule {
    /// The learner with the lowest end-of-task loss summed over the whole stream.
    #[default]
    Hindsight,
    /// Before each task, the learner with the lowest end-of-task loss so far.
    EndOfTaskLoss,
    /// Before each task, the learner with the lowest online loss so far.
    OnlineLoss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: MethodName,
    pub alpha_rule: AlphaRule,
    pub gamma_rule: GammaRule,
    pub gamma_grid: Option<Vec<f64>>,
}

impl MethodSpec {
    /// Practical step, fixed step size except for OPMS, which learns it over
    /// the default grid.
    pub fn new(name: MethodName) -> Self {
        let (gamma_rule, gamma_grid) = match name {
            MethodName::FullOpms => (GammaRule::Learned, Some(DEFAULT_GAMMA_GRID.to_vec())),
            _ => (GammaRule::Fixed, None),
        };
        MethodSpec {
            name,
            alpha_rule: AlphaRule::Practical,
            gamma_rule,
            gamma_grid,
        }
    }

    pub fn with_alpha(mut self, rule: AlphaRule) -> Self {
        self.alpha_rule = rule;
        self
    }

    pub fn with_grid(mut self, grid: Option<Vec<f64>>) -> Self {
        self.gamma_grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.name, self.gamma_rule) {
            (MethodName::MeanOpms, GammaRule::Learned) => {
                return Err(contract("mean-OPMS keeps the step size fixed"))
            }
            (MethodName::FullOpms, GammaRule::Fixed) => {
                return Err(contract("OPMS learns the step size"))
            }
            _ => {}
        }
        if let Some(grid) = &self.gamma_grid {
            if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                return Err(contract("gradient-bound grid must be non-empty and positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Protocol {
    Regression,
    Classification,
    Experts {
        m: usize,
        support: Vec<usize>,
        loss_range: f64,
        /// Which EWA parameter the isolation baseline stands for.
        target: EwaTarget,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwaTarget {
    Rate,
    Prior,
}

/// Settings shared by all methods of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentCfg {
    pub protocol: Protocol,
    /// Stream shape; its seed is replaced by each run's seed.
    pub stream: StreamCfg,
    pub radius: f64,
    pub gamma_hi: f64,
    pub beta: f64,
    /// Step size of I-OGA and mean-OPMS, and the initial one of OPMS.
    /// Defaults to `1 / sqrt(n)`.
    pub gamma_fixed: Option<f64>,
    /// Gradient bound when no grid is used. Defaults to `2c + 2C` for
    /// squared losses and 1 for hinge losses.
    pub lipschitz: Option<f64>,
    pub exp_concavity: f64,
    pub selection: SelectionRule,
}

impl ExperimentCfg {
    pub fn regression(r: f64) -> Self {
        ExperimentCfg::new(Protocol::Regression, StreamCfg::regression(r, 0))
    }

    pub fn classification() -> Self {
        ExperimentCfg::new(Protocol::Classification, StreamCfg::classification(0))
    }

    pub fn experts(m: usize, support: Vec<usize>, n: usize, tasks: usize, target: EwaTarget) -> Self {
        let stream = StreamCfg {
            d: m,
            n,
            tasks,
            r: 0.0,
            sigma2: 0.0,
            theta0: DVector::zeros(m),
            flip_frac: 0.0,
            seed: 0,
        };
        ExperimentCfg::new(
            Protocol::Experts {
                m,
                support,
                loss_range: 1.0,
                target,
            },
            stream,
        )
    }

    fn new(protocol: Protocol, stream: StreamCfg) -> Self {
        ExperimentCfg {
            protocol,
            stream,
            radius: 100.0,
            gamma_hi: 1.0,
            beta: 1.0,
            gamma_fixed: None,
            lipschitz: None,
            exp_concavity: 1.0,
            selection: SelectionRule::default(),
        }
    }

    pub fn gamma_init(&self) -> f64 {
        self.gamma_fixed
            .unwrap_or_else(|| 1.0 / (self.stream.n as f64).sqrt())
    }

    fn generate(&self, seed: u64) -> Result<Vec<Task>> {
        let cfg = StreamCfg { seed, ..self.stream.clone() };
        match &self.protocol {
            Protocol::Regression => gen_regression_stream(&cfg),
            Protocol::Classification => gen_classification_stream(&cfg),
            Protocol::Experts { m, support, loss_range, .. } => {
                gen_expert_stream(*m, cfg.n, cfg.tasks, support, *loss_range, seed)
            }
        }
    }
}

/// Per-task metrics of one seed and method.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: MethodName,
    pub r: f64,
    pub seed: u64,
    /// Mean loss of the end-of-task decision over the task's own losses.
    pub per_task_mse: Vec<f64>,
    /// Sum of those losses: the summands of the end-of-task regret.
    pub per_task_cumloss: Vec<f64>,
}

/// A run record plus quantities that stay out of the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamRun {
    pub record: RunRecord,
    /// Within-task online cumulative loss per task.
    pub online_loss: Vec<f64>,
    /// Meta-loss at the parameter used on each task, when tracked.
    pub meta_loss: Option<Vec<f64>>,
    /// Parameter used on each task.
    pub lambdas: Vec<TuningParam>,
    /// Gradient bound of the reported learner on each task.
    pub selected_lipschitz: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Compute the meta-loss at each task's parameter. Always on for EWA.
    pub track_meta_loss: bool,
}

/// Runs every method on every seed. Output order is seed-major, then the
/// order of `methods`, whatever the thread schedule.
pub fn run_stream(
    methods: &[MethodSpec],
    cfg: &ExperimentCfg,
    seeds: &[u64],
    opts: RunOptions,
) -> Result<Vec<StreamRun>> {
    for m in methods {
        m.validate()?;
    }
    cfg.stream.validate()?;
    let per_seed: Vec<Result<Vec<StreamRun>>> = seeds
        .par_iter()
        .map(|&seed| {
            let tasks = cfg.generate(seed)?;
            methods
                .par_iter()
                .map(|spec| run_method(spec, cfg, &tasks, seed, opts))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(seeds.len() * methods.len());
    for runs in per_seed {
        out.extend(runs?);
    }
    Ok(out)
}

fn in_run(seed: u64, task: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InRun { .. } => e,
        other => Error::InRun {
            seed,
            task,
            source: Box::new(other),
        },
    }
}

/// Runs one method on one pre-generated stream.
pub fn run_method(
    spec: &MethodSpec,
    cfg: &ExperimentCfg,
    tasks: &[Task],
    seed: u64,
    opts: RunOptions,
) -> Result<StreamRun> {
    spec.validate()?;
    if tasks.is_empty() {
        return Err(contract("empty task stream"));
    }
    let r = match cfg.protocol {
        Protocol::Experts { .. } => 0.0,
        _ => cfg.stream.r,
    };
    if spec.name.is_ewa() {
        run_ewa_method(spec, cfg, tasks, seed, r)
    } else {
        run_oga_method(spec, cfg, tasks, seed, r, opts)
    }
}

struct Learner {
    state: MetaState,
    bounds: Bounds,
    score: f64,
    run: StreamRun,
}

fn default_lipschitz(cfg: &ExperimentCfg, tasks: &[Task]) -> f64 {
    if let Some(g) = cfg.lipschitz {
        return g;
    }
    match tasks[0].kind() {
        LossKind::SquaredError => squared_loss_lipschitz(1.0, max_abs_label(tasks), cfg.radius),
        _ => 1.0,
    }
}

fn oga_alpha(rule: AlphaRule, bounds: &Bounds, n: usize, tasks: usize) -> f64 {
    match rule {
        AlphaRule::Practical => alpha_practical(tasks),
        AlphaRule::Fixed(a) => a,
        AlphaRule::Theoretical => {
            let l = lipschitz_oga(n, bounds.lipschitz, bounds.radius, bounds.gamma_lo);
            alpha_oga(bounds.radius, l, tasks)
        }
    }
}

fn run_oga_method(
    spec: &MethodSpec,
    cfg: &ExperimentCfg,
    tasks: &[Task],
    seed: u64,
    r: f64,
    opts: RunOptions,
) -> Result<StreamRun> {
    let n = tasks[0].n();
    let d = tasks[0].dim();
    let t_total = tasks.len();
    let inner = match tasks[0].kind() {
        LossKind::SquaredError => InnerSolverCfg::newton(10),
        _ => InnerSolverCfg::gradient(50),
    };
    let candidates: Vec<f64> = match (&spec.gamma_grid, spec.name) {
        (Some(grid), MethodName::FullOpms) => grid.clone(),
        _ => vec![default_lipschitz(cfg, tasks)],
    };
    let gamma0 = cfg.gamma_init();
    let mut learners = candidates
        .iter()
        .map(|&g| {
            let bounds = Bounds::new(n, cfg.beta, cfg.radius, g, cfg.gamma_hi)?;
            let alpha = oga_alpha(spec.alpha_rule, &bounds, n, t_total);
            let lambda = TuningParam::Oga(OgaParam::new(DVector::zeros(d), gamma0));
            Ok(Learner {
                state: MetaState::new(lambda, alpha)?,
                bounds,
                score: 0.0,
                run: empty_run(spec.name, r, seed, t_total, opts.track_meta_loss),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut chosen = Vec::with_capacity(t_total);
    for (t, task) in tasks.iter().enumerate() {
        let wrap = in_run(seed, t);
        chosen.push(argmin(learners.iter().map(|l| l.score)));
        for learner in learners.iter_mut() {
            let TuningParam::Oga(param) = &learner.state.lambda else {
                unreachable!("OGA learners hold OGA parameters")
            };
            let trace = run_oga(task, param, &learner.bounds).map_err(&wrap)?;
            let end_sum = task.total_loss(&trace.end_decision).map_err(&wrap)?;
            push_task(&mut learner.run, task, &trace, end_sum, &learner.state.lambda);
            learner.run.selected_lipschitz.push(learner.bounds.lipschitz);
            if let Some(ml) = learner.run.meta_loss.as_mut() {
                let v = meta_loss_oga(task, param, &learner.bounds, &inner).map_err(&wrap)?;
                ml.push(v.value);
            }
            learner.score += match cfg.selection {
                SelectionRule::EndOfTaskLoss | SelectionRule::Hindsight => end_sum,
                SelectionRule::OnlineLoss => trace.cumulative_loss,
            };
            learner.state = match spec.name {
                MethodName::IsolationOga => continue,
                MethodName::MeanOpms => opms_step_mean(&learner.state, task, &learner.bounds, &inner),
                MethodName::FullOpms => opms_step(&learner.state, task, &learner.bounds, &inner),
                _ => unreachable!("EWA methods take the other path"),
            }
            .map_err(&wrap)?;
        }
    }

    if cfg.selection == SelectionRule::Hindsight || learners.len() == 1 {
        let best = argmin(learners.iter().map(|l| l.score));
        return Ok(learners.swap_remove(best).run);
    }
    let mut run = empty_run(spec.name, r, seed, t_total, opts.track_meta_loss);
    for (t, k) in chosen.into_iter().enumerate() {
        let src = &learners[k].run;
        run.record.per_task_mse.push(src.record.per_task_mse[t]);
        run.record.per_task_cumloss.push(src.record.per_task_cumloss[t]);
        run.online_loss.push(src.online_loss[t]);
        run.lambdas.push(src.lambdas[t].clone());
        run.selected_lipschitz.push(src.selected_lipschitz[t]);
        if let (Some(dst), Some(ml)) = (run.meta_loss.as_mut(), src.meta_loss.as_ref()) {
            dst.push(ml[t]);
        }
    }
    Ok(run)
}

/// Index of the smallest score; ties go to the earliest.
fn argmin(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, s) in scores.enumerate() {
        if s < best.1 {
            best = (k, s);
        }
    }
    best.0
}

fn empty_run(method: MethodName, r: f64, seed: u64, t: usize, track: bool) -> StreamRun {
    StreamRun {
        record: RunRecord {
            method,
            r,
            seed,
            per_task_mse: Vec::with_capacity(t),
            per_task_cumloss: Vec::with_capacity(t),
        },
        online_loss: Vec::with_capacity(t),
        meta_loss: track.then(|| Vec::with_capacity(t)),
        lambdas: Vec::with_capacity(t),
        selected_lipschitz: Vec::new(),
    }
}

fn push_task(run: &mut StreamRun, task: &Task, trace: &TaskTrace, end_sum: f64, lambda: &TuningParam) {
    run.record.per_task_mse.push(end_sum / task.n() as f64);
    run.record.per_task_cumloss.push(end_sum);
    run.online_loss.push(trace.cumulative_loss);
    run.lambdas.push(lambda.clone());
}

fn run_ewa_method(
    spec: &MethodSpec,
    cfg: &ExperimentCfg,
    tasks: &[Task],
    seed: u64,
    r: f64,
) -> Result<StreamRun> {
    let Protocol::Experts { m, loss_range, target, .. } = &cfg.protocol else {
        return Err(Error::Unsupported("EWA methods need an expert-table stream"));
    };
    let (m, b) = (*m, *loss_range);
    let n = tasks[0].n();
    let t_total = tasks.len();
    let cexp = cfg.exp_concavity;
    let mf = m as f64;
    let uniform = DVector::from_element(m, 1.0 / mf);
    let bounds = Bounds::new(n, cfg.beta, cfg.radius, 1.0, cfg.gamma_hi)?
        .with_loss_range(b)?
        .with_exp_concavity(cexp)?;
    let eta_iso = ((2.0 / b) * (2.0 * mf.ln() / n as f64).sqrt()).clamp(1.0 / n as f64, 1.0);

    let alpha = match (spec.alpha_rule, spec.name) {
        (AlphaRule::Fixed(a), _) => a,
        (AlphaRule::Practical, _) => alpha_practical(t_total),
        (AlphaRule::Theoretical, MethodName::OpmsPrior) => alpha_prior(cexp, m, t_total),
        (AlphaRule::Theoretical, MethodName::IsolationEwa) if *target == EwaTarget::Prior => {
            alpha_prior(cexp, m, t_total)
        }
        (AlphaRule::Theoretical, _) => alpha_eta(n, b, mf, t_total).1,
    };
    let lambda = match (spec.name, target) {
        (MethodName::OpmsPrior, _) | (MethodName::IsolationEwa, EwaTarget::Prior) => {
            TuningParam::EwaPrior(uniform.clone())
        }
        (MethodName::IsolationEwa, EwaTarget::Rate) => TuningParam::EwaRate(eta_iso),
        _ => TuningParam::EwaRate(1.0),
    };
    let mut state = MetaState::new(lambda, alpha)?;
    let inner = match spec.name {
        MethodName::OpmsPrior => InnerSolverCfg::gradient(50),
        _ => InnerSolverCfg::newton(50),
    };

    let mut run = empty_run(spec.name, r, seed, t_total, true);
    for (t, task) in tasks.iter().enumerate() {
        let wrap = in_run(seed, t);
        let (eta, prior) = match &state.lambda {
            TuningParam::EwaRate(eta) => (*eta, uniform.clone()),
            TuningParam::EwaPrior(pi) => (1.0 / cexp, pi.clone()),
            TuningParam::Oga(_) => unreachable!("EWA state never holds an OGA parameter"),
        };
        let trace = run_ewa(task, eta, &prior, None).map_err(&wrap)?;
        let end_sum = task.total_loss(&trace.end_decision).map_err(&wrap)?;
        let meta = match &state.lambda {
            TuningParam::EwaRate(eta) => meta_loss_ewa_eta(task, *eta, mf),
            TuningParam::EwaPrior(pi) => meta_loss_ewa_prior(task, pi, cexp),
            TuningParam::Oga(_) => unreachable!("EWA state never holds an OGA parameter"),
        }
        .map_err(&wrap)?;
        push_task(&mut run, task, &trace, end_sum, &state.lambda);
        if let Some(ml) = run.meta_loss.as_mut() {
            ml.push(meta.value);
        }
        state = match spec.name {
            MethodName::IsolationEwa => continue,
            MethodName::OgmsEta => ogms_eta_step(&state, task, mf, n),
            MethodName::OpmsEta | MethodName::OpmsPrior => opms_step(&state, task, &bounds, &inner),
            _ => unreachable!("OGA methods take the other path"),
        }
        .map_err(&wrap)?;
    }
    Ok(run)
}
