use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use metabound::certificates::verify_all;
use metabound::experiments::{
    final_regret, last_half_mean, parse_config, run_stream, summarize, summarize_runs, write_csv, AlphaRule,
    EwaTarget, ExperimentCfg, MethodName, MethodSpec, Protocol, RunOptions, StreamRun,
    SummaryCell,
};

#[derive(Parser)]
#[command(name = "metabound", version, about = "Online meta-learning of within-task tuning parameters")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Online least squares on unit-sphere inputs.
    Regression(OgaArgs),
    /// Online hinge-loss classification with flipped labels.
    Classification(OgaArgs),
    /// Learning the EWA learning rate.
    EwaEta(EwaArgs),
    /// Learning the EWA prior.
    EwaPrior(EwaArgs),
    /// Run the invariant suite; exits 1 on any violation.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Rounds per task.
    #[arg(long)]
    n: Option<usize>,
    /// Number of tasks.
    #[arg(long = "T")]
    tasks: Option<usize>,
    /// Independent runs (seeds `seed..seed+runs`).
    #[arg(long, default_value_t = 10)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Meta step: `theory`, `practical` (1/sqrt(T)) or a positive number.
    #[arg(long)]
    alpha: Option<AlphaRule>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// File of `key=value` lines; flags on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaArm {
    Fixed,
    Learned,
}

#[derive(Args, Clone)]
struct OgaArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    d: Option<usize>,
    /// Task-similarity radii.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<f64>>,
    /// Run I-OGA with mean-OPMS (`fixed`) or with OPMS (`learned`); both by default.
    #[arg(long, value_enum)]
    gamma: Option<GammaArm>,
    /// Gradient-bound candidates for OPMS.
    #[arg(long = "gamma-grid", value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    /// Decision-ball radius.
    #[arg(long = "C")]
    radius: Option<f64>,
}

#[derive(Args, Clone)]
struct EwaArgs {
    #[command(flatten)]
    common: Common,
    /// Number of experts.
    #[arg(long = "M", default_value_t = 50)]
    m: usize,
    /// Indices that can be a task's best expert.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    support: Vec<usize>,
    /// Loss range.
    #[arg(long = "B", default_value_t = 1.0)]
    loss_range: f64,
    /// Exp-concavity constant of the prior meta-loss.
    #[arg(long = "Cexp", default_value_t = 1.0)]
    cexp: f64,
}

/// Inserts `--key value` pairs from `--config` right after the subcommand so
/// that later command-line flags override them.
fn expand_config(args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = args.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {path}"))?;
    let pairs = parse_config(&text)?;
    let mut out = args[..2.min(args.len())].to_vec();
    for (k, v) in pairs {
        out.push(format!("--{k}"));
        out.push(v);
    }
    out.extend(args.into_iter().skip(2));
    Ok(out)
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ArgumentConflict, msg).exit()
}

fn seeds(c: &Common) -> Vec<u64> {
    (c.seed..c.seed + c.runs).collect()
}

fn oga_methods(a: &OgaArgs, default_alpha: AlphaRule) -> Vec<MethodSpec> {
    let alpha = a.common.alpha.unwrap_or(default_alpha);
    let opms = MethodSpec::new(MethodName::FullOpms).with_alpha(alpha);
    let opms = match &a.gamma_grid {
        Some(g) => opms.with_grid(Some(g.clone())),
        None => opms,
    };
    let mut methods = vec![MethodSpec::new(MethodName::IsolationOga).with_alpha(alpha)];
    match a.gamma {
        Some(GammaArm::Fixed) => methods.push(MethodSpec::new(MethodName::MeanOpms).with_alpha(alpha)),
        Some(GammaArm::Learned) => methods.push(opms),
        None => {
            methods.push(MethodSpec::new(MethodName::MeanOpms).with_alpha(alpha));
            methods.push(opms);
        }
    }
    methods
}

fn run_oga_cmd(a: &OgaArgs, classification: bool) -> anyhow::Result<()> {
    if matches!(a.gamma, Some(GammaArm::Fixed)) && a.gamma_grid.is_some() {
        usage_error("--gamma-grid applies only to the learned step size");
    }
    if a.common.runs == 0 {
        usage_error("--runs must be at least 1");
    }
    let mut base = if classification {
        ExperimentCfg::classification()
    } else {
        ExperimentCfg::regression(0.0)
    };
    if let Some(d) = a.d {
        base.stream = base.stream.with_dim(d);
    }
    if let Some(n) = a.common.n {
        base.stream.n = n;
    }
    if let Some(t) = a.common.tasks {
        base.stream.tasks = t;
    }
    if let Some(c) = a.radius {
        base.radius = c;
    }
    let radii = a
        .r
        .clone()
        .unwrap_or_else(|| if classification { vec![2.0] } else { vec![0.0, 5.0, 10.0, 30.0] });
    let methods = oga_methods(a, AlphaRule::Practical);
    let seeds = seeds(&a.common);

    let mut runs: Vec<StreamRun> = Vec::new();
    for r in &radii {
        let mut cfg = base.clone();
        cfg.stream.r = *r;
        runs.extend(run_stream(&methods, &cfg, &seeds, RunOptions::default())?);
    }
    let records: Vec<_> = runs.into_iter().map(|r| r.record).collect();
    write_out(&a.common, &records)?;
    let n = base.stream.n;
    let cells = if classification {
        println!("final end-of-task regret R(T)");
        summarize(&records, |rec| final_regret(rec, n))
    } else {
        println!("mean end-of-task MSE over the last half of the tasks");
        summarize(&records, |rec| last_half_mean(&rec.per_task_mse))
    };
    print_table(&cells);
    Ok(())
}

fn run_ewa_cmd(a: &EwaArgs, target: EwaTarget) -> anyhow::Result<()> {
    if a.support.is_empty() || a.support.iter().any(|k| *k >= a.m) {
        usage_error(format!("--support must list indices below --M {}", a.m));
    }
    if a.common.runs == 0 {
        usage_error("--runs must be at least 1");
    }
    let n = a.common.n.unwrap_or(20);
    let tasks = a.common.tasks.unwrap_or(400);
    let mut cfg = ExperimentCfg::experts(a.m, a.support.clone(), n, tasks, target);
    if let Protocol::Experts { loss_range, .. } = &mut cfg.protocol {
        *loss_range = a.loss_range;
    }
    cfg.exp_concavity = a.cexp;
    let alpha = a.common.alpha.unwrap_or(AlphaRule::Theoretical);
    let names: &[MethodName] = match target {
        EwaTarget::Rate => &[MethodName::IsolationEwa, MethodName::OgmsEta, MethodName::OpmsEta],
        EwaTarget::Prior => &[MethodName::IsolationEwa, MethodName::OpmsPrior],
    };
    let methods: Vec<_> = names
        .iter()
        .map(|m| MethodSpec::new(*m).with_alpha(alpha))
        .collect();
    let runs = run_stream(&methods, &cfg, &seeds(&a.common), RunOptions::default())?;
    let records: Vec<_> = runs.iter().map(|r| r.record.clone()).collect();
    write_out(&a.common, &records)?;

    println!("cumulative meta-loss over {tasks} tasks");
    let cells = summarize_runs(&runs, |r| &r.record, |r| {
        r.meta_loss.as_ref().map_or(f64::NAN, |v| v.iter().sum())
    });
    print_table(&cells);
    Ok(())
}

fn write_out(c: &Common, records: &[metabound::experiments::RunRecord]) -> anyhow::Result<()> {
    if let Some(path) = &c.out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(BufWriter::new(f), records)?;
    }
    Ok(())
}

fn print_table(cells: &[SummaryCell]) {
    let mut radii: Vec<f64> = Vec::new();
    let mut methods: Vec<MethodName> = Vec::new();
    for c in cells {
        if !radii.iter().any(|r| r.to_bits() == c.r.to_bits()) {
            radii.push(c.r);
        }
        if !methods.contains(&c.method) {
            methods.push(c.method);
        }
    }
    print!("{:<12}", "method");
    for r in &radii {
        print!("{:>22}", format!("r={r}"));
    }
    println!();
    for m in methods {
        print!("{:<12}", m.as_str());
        for r in &radii {
            let cell = cells.iter().find(|c| c.method == m && c.r.to_bits() == r.to_bits());
            let text = match cell {
                Some(SummaryCell { mean, half_width: Some(h), .. }) => format!("{mean:.4} ± {h:.4}"),
                Some(SummaryCell { mean, .. }) => format!("{mean:.4}"),
                None => "-".into(),
            };
            print!("{text:>22}");
        }
        println!();
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let mut cmd = Cli::command();
    for name in ["regression", "classification", "ewa-eta", "ewa-prior"] {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    let cli = match cmd
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.cmd {
        Cmd::Regression(a) => run_oga_cmd(a, false),
        Cmd::Classification(a) => run_oga_cmd(a, true),
        Cmd::EwaEta(a) => run_ewa_cmd(a, EwaTarget::Rate),
        Cmd::EwaPrior(a) => run_ewa_cmd(a, EwaTarget::Prior),
        Cmd::Verify { seed } => {
            let checks = verify_all(*seed);
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return ExitCode::from(1);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
