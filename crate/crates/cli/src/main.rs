use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tanksim::convergence::{
    reference_sensitivity, run_study, synthetic_study, Scenario, StudyConfig, StudyReport,
};
use tanksim::gfunc::{check_gain_conditions, spill_radius, GainReport};
use tanksim::io::{
    fmt_num, snapshot_file_name, write_snapshot_csv, write_trace_csv, RunSummary, ScenarioFile,
};
use tanksim::params::Scaling;
use tanksim::plan::{plan_transfer, PlanRequest};
use tanksim::{ControllerKind, Error, MonitorMode, RightStencil};

#[derive(Parser)]
#[command(
    name = "tanksim",
    version,
    about = "Viscous liquid tank simulator with output-feedback control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop simulation and write its trace.
    Simulate(SimulateArgs),
    /// Select gains for a spill-free transfer and run it.
    Plan(PlanArgs),
    /// Measure the one-step accuracy order by self-convergence.
    Converge(ConvergeArgs),
    /// Evaluate the sufficient gain conditions.
    CheckGains(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorArg {
    Enforce,
    Warn,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Treat failed gain conditions as errors.
    #[arg(long)]
    strict: bool,
    /// Use the literal right-wall term `3 h_0` in the energy functional.
    #[arg(long)]
    as_printed: bool,
    /// Comma-separated snapshot times, replacing those in the scenario.
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    monitor: Option<MonitorArg>,
    /// Override the controller (`full`, `reduced`, `full-state`).
    #[arg(long)]
    controller: Option<String>,
}

#[derive(clap::Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance in the dimensionless frame, replacing `plan.epsilon`.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Case {
    SineWave,
    CosineBump,
    ReferenceExperiment,
    Equilibrium,
}

#[derive(clap::Args)]
struct ConvergeArgs {
    /// Scenario file with expression initial data (dimensionless).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in scenarios; defaults to sine-wave and cosine-bump.
    #[arg(long = "case", value_enum)]
    cases: Vec<Case>,
    /// Controllers to study; defaults to full and reduced.
    #[arg(long = "controller")]
    controllers: Vec<String>,
    /// Make the scenario file's velocity compatible with the walls.
    #[arg(long)]
    compatible_walls: bool,
    /// Also measure sensitivity to the reference resolution.
    #[arg(long)]
    check_reference: bool,
    /// Fit exact power laws instead of running the scheme.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Level-set radius in the dimensionless frame; defaults to `R / 2`.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    strict: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Rejected { .. } => 3,
            Error::InfeasibleTolerance(_) => 4,
            Error::InfeasibleGains(_) | Error::NotConverged { .. } => 5,
            Error::Io(_) | Error::Study(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Plan(a) => plan(a),
        Command::Converge(a) => converge(a),
        Command::CheckGains(a) => check_gains(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> CliResult {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| fail(1, e.to_string()))?;
    Ok(())
}

fn gain_report(file: &ScenarioFile, r: Option<f64>) -> Result<GainReport, Failure> {
    let p = file.params.resolve()?;
    let scaling = Scaling::new(&p);
    let dim = scaling.params(&p);
    let gains = scaling.gains(&file.gains()?);
    let r = r.or(file.r).unwrap_or_else(|| 0.5 * spill_radius(&dim));
    Ok(check_gain_conditions(&gains, &dim, r)?)
}

fn print_checks(report: &GainReport) {
    for c in &report.checks {
        let tag = if c.holds { "ok  " } else { "WARN" };
        println!(
            "  {tag} {}: {} vs {} (margin {:e})",
            c.name, c.lhs, c.rhs, c.margin
        );
    }
}

fn simulate(a: SimulateArgs) -> CliResult {
    let mut file = ScenarioFile::load(&a.scenario)?;
    if let Some(name) = &a.controller {
        let kind: ControllerKind = name.parse()?;
        if file.controller != Some(kind) {
            file.initial.observer = None;
        }
        file.controller = Some(kind);
    }
    if a.as_printed {
        file.stencil = RightStencil::AsPrinted;
    }
    if let Some(times) = a.snapshot_times {
        file.snapshot_times = times;
    }
    match a.monitor {
        Some(MonitorArg::Enforce) => file.monitor = MonitorMode::Enforce,
        Some(MonitorArg::Warn) => file.monitor = MonitorMode::Warn,
        None => {}
    }
    let resolved = file.resolve()?;

    let report = gain_report(&file, None).ok();
    if let Some(rep) = &report {
        for c in rep.failures() {
            eprintln!(
                "warning: gain condition fails: {} ({} vs {})",
                c.name, c.lhs, c.rhs
            );
        }
        if a.strict && !rep.all_hold() {
            return Err(fail(5, "gain conditions fail and --strict is set"));
        }
    }

    let trace = tanksim::run(&resolved.config)?;
    write_trace_csv(create(&a.out, "trace.csv")?, &trace.records)?;
    let mut summary = RunSummary::new(&file, &resolved, &trace, report);
    for (i, snap) in trace.snapshots.iter().enumerate() {
        let name = snapshot_file_name(i, snap.t);
        write_snapshot_csv(create(&a.out, &name)?, snap)?;
        summary.snapshot_files.push(name);
    }
    write_json(&a.out, "summary.json", &summary)?;

    println!("controller     {}", trace.controller.name());
    println!(
        "accepted dt    {} ({} halvings, {} steps)",
        trace.dt, trace.halvings, trace.steps
    );
    println!(
        "omega          {} -> {}",
        fmt_num(summary.omega_initial),
        fmt_num(summary.omega_final)
    );
    println!(
        "monitor        {} -> {}",
        fmt_num(summary.monitor_initial),
        fmt_num(summary.monitor_final)
    );
    println!("monitor rises  {}", trace.violations);
    println!("spill free     {}", trace.spill_ok);
    println!("output         {}", a.out.display());
    Ok(())
}

fn plan(a: PlanArgs) -> CliResult {
    let file = ScenarioFile::load(&a.scenario)?;
    let spec = file.plan;
    let epsilon = a
        .epsilon
        .or(spec.map(|s| s.epsilon))
        .ok_or_else(|| fail(2, "missing required field `plan.epsilon` (or --epsilon)"))?;
    let p = file.params.resolve()?;
    let state = file.physical_state(&p, ControllerKind::FullState, 0.0)?;
    let scaling = Scaling::new(&p);
    let req = PlanRequest {
        params: scaling.params(&p),
        epsilon,
        initial: scaling.state(&state),
        dt: spec.and_then(|s| s.dt),
        t_max: spec.map_or(5000.0, |s| s.t_max),
        sample_stride: file.sample_stride,
    };
    let plan = plan_transfer(&req)?;
    let c = &plan.choice;
    println!("r      {}", c.r);
    println!("q      {}", c.gains.q);
    println!("k      {}", c.gains.k);
    println!("sigma  {}", c.gains.sigma);
    println!("gamma  {}", c.gains.gamma);
    println!("beta   {} (inert at lambda = 0)", c.gains.beta);
    println!("inequalities:");
    for ch in plan.tolerance_checks.iter().chain(&c.checks) {
        println!("  {}: margin {:e}", ch.name, ch.margin);
    }
    println!("T achieved   {}", plan.t_achieved);
    println!("final norm   {}", plan.final_norm);
    println!("spill free   {}", plan.spill_ok);
    if let Some(dir) = &a.out {
        write_trace_csv(create(dir, "plan_trace.csv")?, &plan.trace)?;
        let summary = serde_json::json!({
            "scenario": file,
            "epsilon": epsilon,
            "n": plan.n,
            "dt": plan.dt,
            "choice": plan.choice,
            "tolerance_checks": plan.tolerance_checks,
            "initial_rest_norm": plan.initial_rest_norm,
            "t_achieved": plan.t_achieved,
            "final_norm": plan.final_norm,
            "spill_ok": plan.spill_ok,
        });
        write_json(dir, "plan.json", &summary)?;
    }
    if !plan.spill_ok {
        return Err(fail(5, "the transfer spilled"));
    }
    Ok(())
}

fn print_study(r: &StudyReport) {
    let slope = |s: Option<f64>| s.map_or("exact".to_string(), |p| format!("{p:.4}"));
    println!(
        "{} / {}: p_t = {}, p_x = {} [{}]{}",
        r.scenario,
        r.controller.name(),
        slope(r.p_t.slope),
        slope(r.p_x.slope),
        if r.passed() { "pass" } else { "FAIL" },
        if r.plateau {
            " (error plateau: reference may be too coarse)"
        } else {
            ""
        }
    );
}

fn converge(a: ConvergeArgs) -> CliResult {
    let cfg = StudyConfig::default();
    let mut reports = Vec::new();
    if a.synthetic {
        reports.push(synthetic_study(&cfg, 1.0)?);
    } else {
        let controllers: Vec<ControllerKind> = if a.controllers.is_empty() {
            vec![ControllerKind::FullOrder, ControllerKind::ReducedOrder]
        } else {
            a.controllers
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()?
        };
        let mut scenarios: Vec<Scenario> = Vec::new();
        if let Some(path) = &a.scenario {
            let file = ScenarioFile::load(path)?;
            let name = path
                .file_stem()
                .map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            let s = file.convergence_scenario(&name)?;
            scenarios.push(if a.compatible_walls {
                s.with_compatible_walls()?
            } else {
                s
            });
        }
        let cases = if a.cases.is_empty() && a.scenario.is_none() {
            vec![Case::SineWave, Case::CosineBump]
        } else {
            a.cases.clone()
        };
        for case in cases {
            for &k in &controllers {
                scenarios.push(match case {
                    Case::SineWave => Scenario::sine_wave(k),
                    Case::CosineBump => Scenario::cosine_bump(k),
                    Case::ReferenceExperiment => Scenario::reference_experiment(k),
                    Case::Equilibrium => Scenario::equilibrium(k),
                });
            }
        }
        for s in &scenarios {
            let r = run_study(s, &cfg)?;
            if a.check_reference {
                let (dt_change, dx_change) = reference_sensitivity(s, &cfg)?;
                println!(
                    "{} / {}: finer reference changes coarsest errors by {:.2e} (temporal), {:.2e} (spatial)",
                    s.name,
                    s.controller.name(),
                    dt_change,
                    dx_change
                );
            }
            reports.push(r);
        }
    }
    for r in &reports {
        print_study(r);
    }
    if let Some(dir) = &a.out {
        let mut rows = String::from("scenario,controller,direction,rung,n,dx,dt,error\n");
        for r in &reports {
            for (dir_name, rungs) in [("temporal", &r.temporal), ("spatial", &r.spatial)] {
                for (i, g) in rungs.iter().enumerate() {
                    rows.push_str(&format!(
                        "{},{},{dir_name},{i},{},{},{},{}\n",
                        r.scenario,
                        r.controller.name(),
                        g.n,
                        fmt_num(g.dx),
                        fmt_num(g.dt),
                        fmt_num(g.error)
                    ));
                }
            }
        }
        fs::create_dir_all(dir)?;
        fs::write(dir.join("study.csv"), rows)?;
        write_json(dir, "study.json", &reports)?;
    }
    if reports.iter().all(StudyReport::passed) {
        Ok(())
    } else {
        Err(fail(1, "fitted orders outside the acceptance band"))
    }
}

fn check_gains(a: CheckArgs) -> CliResult {
    let file = ScenarioFile::load(&a.scenario)?;
    let report = gain_report(&file, a.r)?;
    println!("r = {} (R = {})", report.r, report.constants.radius);
    println!(
        "c = {}, theta = {}, b = {}, spectral bound = {}",
        report.constants.c, report.constants.theta, report.constants.b, report.spectral_bound
    );
    print_checks(&report);
    if report.all_hold() {
        println!("all conditions hold");
        Ok(())
    } else if a.strict {
        Err(fail(5, "gain conditions fail"))
    } else {
        println!("some conditions fail; they are sufficient, not necessary");
        Ok(())
    }
}
