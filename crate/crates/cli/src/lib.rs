//! Command-line front end: scenario ingestion, command dispatch and output.
//!
//! Exit codes: 0 success or secure, 1 usage or validation error, 2 security
//! violation, 3 solver failure.

pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use stvs_core::critmoments::{check_security, eval_moment, moment_error_report, CriticalMomentState, MomentTag, Study, Tunings};
use stvs_core::netmodel::FaultSpec;
use stvs_core::scenario::{bundled, PresetSharing, Scenario};
use stvs_core::tuning::TuningFile;
use stvs_core::Phasor;
use stvs_optimizer::assemble::tally;
use stvs_optimizer::multistart::default_starts;
use stvs_optimizer::{optimize, IpmOptions, OptError, OptimizationConfig};
use stvs_sim::{
    baseline_tunings, ride_through_assessment, run_simulation, ControlScheme, Output, SimConfig, SimError,
    OVERCURRENT_TOL,
};

use report::{FaultVerdict, MomentErrorEntry, OptimizerSummary, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INSECURE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Absolute slack on the analytic security check.
pub const ANALYTIC_TOL: f64 = 1e-8;
/// Slack on simulated moment voltages before the simulation is said to
/// contradict a secure analytic result.
pub const SIM_VOLTAGE_TOL: f64 = 5e-3;
/// Overcurrent runs of at least this many steps count as violations.
pub const OVERCURRENT_STEPS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] stvs_core::Error),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<OptError> for CliError {
    fn from(e: OptError) -> Self {
        match e {
            OptError::Core(c) => Self::Core(c),
            other => Self::Solver(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solver(_) => EXIT_SOLVER,
            Self::Sim(SimError::NonFinite { .. }) => EXIT_SOLVER,
            _ => EXIT_USAGE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "stvs", version, about = "Co-tune and check inverter fault ride-through controls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for virtual impedances and FRT presets.
    Optimize(OptimizeArgs),
    /// Simulate faults with a tuning file or the conventional controls.
    Simulate(SimulateArgs),
    /// Compare the algebraic moments with simulation for every fault.
    Verify(VerifyArgs),
    /// Simulate once per value of one tuning parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file, or the name of a bundled scenario.
    pub scenario: String,
    /// Directory for written files.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SharingArg {
    PerFault,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportStyle {
    Table1,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub preset_sharing: Option<SharingArg>,
    #[arg(long, value_enum)]
    pub report: Option<ReportStyle>,
    /// Number of starting points (scenario setting by default).
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to these contingencies.
    #[arg(long, value_delimiter = ',')]
    pub faults: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub tunings: Option<PathBuf>,
    /// Simulate only this fault.
    #[arg(long)]
    pub fault: Option<String>,
    /// Run the conventional FRT controls instead of a tuning file.
    #[arg(long)]
    pub baseline: bool,
    /// Record every n-th step (scenario setting by default).
    #[arg(long)]
    pub decimate: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub tunings: PathBuf,
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// One of x_virtual, b_virtual, k_q.
    #[arg(long)]
    pub param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Apply the value to this device only.
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long)]
    pub fault: Option<String>,
    #[arg(long)]
    pub tunings: Option<PathBuf>,
    #[arg(long)]
    pub baseline: bool,
}

pub const SWEEP_PARAMS: [&str; 3] = ["x_virtual", "b_virtual", "k_q"];

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(c) = &e {
                for issue in c.issues() {
                    eprintln!("  {issue}");
                }
            }
            e.exit_code()
        }
    }
}

/// Threads for fan-out: `STVS_THREADS` if set, else all cores.
pub fn thread_cap() -> usize {
    std::env::var("STVS_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .expect("thread pool")
}

pub fn load_scenario(spec: &str) -> CliResult<Scenario> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(text) = bundled::by_name(spec.trim_end_matches(".scn")) {
            return Ok(Scenario::from_toml_str(text)?);
        }
    }
    Ok(Scenario::load(path)?)
}

fn prepare(common: &Common) -> CliResult<(Scenario, Study<f64>)> {
    let sc = load_scenario(&common.scenario)?;
    let study = Study::new(&sc)?;
    std::fs::create_dir_all(&common.out_dir).map_err(|source| CliError::Io {
        path: common.out_dir.display().to_string(),
        source,
    })?;
    Ok((sc, study))
}

fn out_path(common: &Common, file: String) -> PathBuf {
    common.out_dir.join(file)
}

fn write_report(common: &Common, rep: &mut RunReport, name: &str) -> CliResult<()> {
    let path = out_path(common, format!("{name}.report.json"));
    rep.outputs.push(path.display().to_string());
    rep.write(&path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for p in &rep.outputs {
        println!("{p}");
    }
    Ok(())
}

fn select_faults<'a>(sc: &'a Scenario, only: Option<&str>) -> CliResult<Vec<&'a FaultSpec>> {
    match only {
        Some(id) => sc
            .fault(id)
            .map(|f| vec![f])
            .ok_or_else(|| CliError::Usage(format!("no fault named {id:?} in scenario {}", sc.name))),
        None if sc.faults.is_empty() => Err(CliError::Usage(format!("scenario {} has no faults", sc.name))),
        None => Ok(sc.faults.iter().collect()),
    }
}

pub fn cmd_optimize(a: &OptimizeArgs) -> CliResult<i32> {
    let (sc, study) = prepare(&a.common)?;
    let mut cfg = OptimizationConfig::from_study(&study);
    if let Some(s) = a.preset_sharing {
        cfg.preset_sharing = match s {
            SharingArg::PerFault => PresetSharing::PerFault,
            SharingArg::Shared => PresetSharing::Shared,
        };
    }
    if !a.faults.is_empty() {
        let ids: Vec<&str> = a.faults.iter().map(String::as_str).collect();
        cfg = cfg.with_faults(&ids)?;
    }
    let opts = IpmOptions {
        max_iter: sc.opt.max_iter,
        ..IpmOptions::default()
    };
    let starts = default_starts(a.starts.unwrap_or(sc.opt.starts).max(1), a.seed.unwrap_or(sc.opt.seed));
    let t0 = Instant::now();
    let out = optimize(&study, &cfg, &opts, &starts, thread_cap())?;
    let wall = t0.elapsed().as_secs_f64();
    let sol = out.solution();
    let p = &out.nlp.problem;
    let summary = OptimizerSummary {
        status: sol.status.as_str().into(),
        objective: sol.objective,
        constraint_violation: sol.max_constraint_violation,
        kkt_residual: sol.kkt_residual,
        solution_time_s: sol.wall_time_s,
        iterations: sol.iterations,
        variables: p.n(),
        equalities: p.eq.len(),
        inequalities: p.ineq.len(),
        starts: starts.len(),
        optimal_starts: out.report.n_optimal(),
        objective_spread: out.report.spread(),
        certificate: sol.certificate.clone(),
    };
    log::info!("optimisation took {wall:.3} s over {} starts", starts.len());
    if a.report == Some(ReportStyle::Table1) {
        print!("{}", report::table1(study.net.n_bus(), &summary));
    }
    let mut rep = RunReport::new("optimize", &sc.name);
    let code = match &out.tunings {
        Some(ext) => {
            let path = out_path(&a.common, format!("{}.tunings.scn", sc.name));
            ext.file.save(&path)?;
            rep.outputs.push(path.display().to_string());
            EXIT_OK
        }
        None => {
            eprintln!(
                "optimisation ended {} (violation {:.3e}){}",
                sol.status,
                sol.max_constraint_violation,
                sol.certificate.as_ref().map(|c| format!("; worst constraint: {c}")).unwrap_or_default()
            );
            EXIT_SOLVER
        }
    };
    rep.optimizer = Some(summary);
    write_report(&a.common, &mut rep, &sc.name)?;
    Ok(code)
}

/// Tunings and per-fault presets read from a tuning file.
struct Loaded {
    tunings: Tunings<f64>,
    presets: Vec<Vec<Phasor<f64>>>,
}

fn load_tunings(path: &Path, sc: &Scenario, faults: &[&FaultSpec]) -> CliResult<Loaded> {
    let file = TuningFile::load(path)?;
    file.validate(sc)?;
    let tunings = file.tunings(sc)?;
    let presets = faults
        .iter()
        .map(|f| file.presets_for(sc, &f.id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Loaded { tunings, presets })
}

fn sim_config(sc: &Scenario, dt: Option<f64>, decimate: Option<usize>, scheme: ControlScheme) -> SimConfig {
    let mut cfg = SimConfig::from_scenario(sc).with_scheme(scheme);
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    if let Some(d) = decimate {
        cfg.record_decimation = d.max(1);
    }
    cfg
}

fn verdict(study: &Study<f64>, fault: &FaultSpec, scheme: ControlScheme, out: &Output) -> FaultVerdict {
    let assess = ride_through_assessment(&out.trajectory, &study.scenario.limits);
    let mut notes = Vec::new();
    for (k, d) in study.devices.iter().enumerate() {
        if out.longest_overcurrent[k] >= OVERCURRENT_STEPS {
            notes.push(format!(
                "{}: |I| above {} for {} consecutive steps",
                d.id,
                d.i_max + OVERCURRENT_TOL,
                out.longest_overcurrent[k]
            ));
        }
    }
    FaultVerdict {
        fault: fault.id.clone(),
        scheme: match scheme {
            ControlScheme::Proposed => "proposed".into(),
            ControlScheme::Baseline => "baseline".into(),
        },
        secure: assess.secure() && notes.is_empty(),
        analytic_secure: None,
        max_current: out.max_current.clone(),
        longest_overcurrent_steps: out.longest_overcurrent.clone(),
        devices: assess.devices,
        notes,
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<i32> {
    let (sc, study) = prepare(&a.common)?;
    let faults = select_faults(&sc, a.fault.as_deref())?;
    let (scheme, tunings, presets) = match (&a.tunings, a.baseline) {
        (_, true) => (ControlScheme::Baseline, baseline_tunings(&sc), None),
        (Some(p), false) => {
            let l = load_tunings(p, &sc, &faults)?;
            (ControlScheme::Proposed, l.tunings, Some(l.presets))
        }
        (None, false) => return Err(CliError::Usage("simulate needs --tunings FILE or --baseline".into())),
    };
    let cfg = sim_config(&sc, a.dt, a.decimate, scheme);
    let tag = if a.baseline { ".baseline" } else { "" };
    let mut rep = RunReport::new("simulate", &sc.name);
    for (i, f) in faults.iter().enumerate() {
        let pre = presets.as_ref().map(|p| p[i].as_slice());
        let out = run_simulation(&study, &tunings, pre, Some(f), &cfg)?;
        let path = out_path(&a.common, format!("{}.{}{tag}.traj.csv", sc.name, f.id));
        out.trajectory.write_csv(&path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        rep.outputs.push(path.display().to_string());
        rep.verdicts.push(verdict(&study, f, scheme, &out));
    }
    write_report(&a.common, &mut rep, &sc.name)?;
    Ok(if rep.secure() { EXIT_OK } else { EXIT_INSECURE })
}

/// Per-fault result of `verify`.
struct Checked {
    states: Vec<CriticalMomentState<f64>>,
    verdict: FaultVerdict,
    samples: stvs_core::critmoments::MomentSamples,
}

fn verify_fault(study: &Study<f64>, t: &Tunings<f64>, presets: &[Phasor<f64>], f: &FaultSpec, cfg: &SimConfig) -> CliResult<Checked> {
    let src = study.sources(t)?;
    let states = MomentTag::ALL
        .iter()
        .map(|&m| eval_moment(study, Some(f), t, &src, presets, m))
        .collect::<Result<Vec<_>, _>>()?;
    let analytic = check_security(&states, &study.devices, &study.device_bus, &study.scenario.limits, ANALYTIC_TOL);
    let out = run_simulation(study, t, Some(presets), Some(f), cfg)?;
    let mut v = verdict(study, f, ControlScheme::Proposed, &out);
    // Voltage window at the device buses, read at the sampled moments.
    let lim = &study.scenario.limits;
    for (m, tag) in MomentTag::ALL.iter().enumerate() {
        let Some(vm) = &out.moments.vmag[m] else { continue };
        for (k, d) in study.devices.iter().enumerate() {
            let x = vm[study.device_bus[k]];
            if x < lim.v_lvrt_th - SIM_VOLTAGE_TOL || x > lim.v_hvrt_th + SIM_VOLTAGE_TOL {
                v.notes.push(format!("{}: simulated |V| {x:.4} outside the window at {tag:?}", d.id));
            }
        }
    }
    for viol in &analytic.violations {
        v.notes.push(format!(
            "analytic {:?} {} {:?}: {:.6} vs limit {}",
            viol.moment, viol.device, viol.kind, viol.value, viol.limit
        ));
    }
    v.analytic_secure = Some(analytic.is_secure());
    v.secure = v.notes.is_empty();
    Ok(Checked {
        states,
        verdict: v,
        samples: out.moments,
    })
}

pub fn cmd_verify(a: &VerifyArgs) -> CliResult<i32> {
    let (sc, study) = prepare(&a.common)?;
    let faults = select_faults(&sc, None)?;
    let loaded = load_tunings(&a.tunings, &sc, &faults)?;
    let cfg = sim_config(&sc, a.dt, None, ControlScheme::Proposed);
    let checked: Vec<CliResult<Checked>> = pool().install(|| {
        faults
            .par_iter()
            .enumerate()
            .map(|(i, f)| verify_fault(&study, &loaded.tunings, &loaded.presets[i], f, &cfg))
            .collect()
    });
    let checked = checked.into_iter().collect::<CliResult<Vec<_>>>()?;
    let states: Vec<_> = checked.iter().flat_map(|c| c.states.iter().cloned()).collect();
    let samples: Vec<_> = checked.iter().map(|c| c.samples.clone()).collect();
    let errors = moment_error_report(&states, &samples)?;
    let mut rep = RunReport::new("verify", &sc.name);
    println!("{:<8} {:<6} {:>12} {:>12}", "fault", "moment", "max", "mean");
    for row in &errors.rows {
        let mean = row.mean;
        println!("{:<8} {:<6} {:>12.3e} {:>12.3e}", row.fault, row.moment.to_string(), row.max, mean);
        rep.moment_errors.push(MomentErrorEntry {
            fault: row.fault.clone(),
            moment: row.moment.to_string(),
            max: row.max,
            mean,
        });
    }
    rep.verdicts = checked.into_iter().map(|c| c.verdict).collect();
    write_report(&a.common, &mut rep, &sc.name)?;
    Ok(if rep.secure() { EXIT_OK } else { EXIT_INSECURE })
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// Lowest monitored `|V|` at the first faulted step.
    pub min_fault_v: f64,
    pub max_i: f64,
    /// Highest monitored `|V|` from clearance on.
    pub max_clear_v: f64,
    /// Largest device current at the first faulted step.
    pub max_i_fault: f64,
}

pub const SWEEP_HEADER: &str = "value,min_fault_v,max_i,max_clear_v,max_i_fault";

fn sweep_one(
    study: &Study<f64>,
    base: &Tunings<f64>,
    file_presets: Option<&[Phasor<f64>]>,
    a: &SweepArgs,
    fault: &FaultSpec,
    value: f64,
) -> CliResult<SweepRow> {
    let pick = |id: &str| a.device.as_deref().is_none_or(|d| d == id);
    let mut t = base.clone();
    let mut s = study.clone();
    match a.param.as_str() {
        "x_virtual" => {
            for d in s.devices.iter().filter(|d| d.kind == stvs_core::devices::DeviceKind::Gfm && pick(&d.id)) {
                t.x_gfm[d.k] = value;
            }
        }
        "b_virtual" => {
            for d in s.devices.iter().filter(|d| d.kind == stvs_core::devices::DeviceKind::Gfl && pick(&d.id)) {
                t.b_gfl[d.k] = value;
            }
        }
        "k_q" => {
            for g in s.scenario.gfl.iter_mut().filter(|g| pick(&g.id)) {
                g.k_q = value;
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep parameter {other:?}; valid names: {}",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    let scheme = if a.baseline { ControlScheme::Baseline } else { ControlScheme::Proposed };
    let held;
    let presets = match (scheme, file_presets) {
        (ControlScheme::Baseline, _) => None,
        (_, Some(p)) => Some(p),
        (_, None) => {
            held = s.sources(&t)?.device_sources();
            Some(held.as_slice())
        }
    };
    let cfg = sim_config(&s.scenario, None, None, scheme);
    let out = run_simulation(&s, &t, presets, Some(fault), &cfg)?;
    let mon = |v: &[f64]| s.monitored.iter().map(|&r| v[r]).collect::<Vec<_>>();
    let tau1 = out.moments.vmag[0].as_deref().map(mon).unwrap_or_default();
    let mut max_clear_v = out.moments.vmag[2].as_deref().map(mon).unwrap_or_default().into_iter().fold(0.0, f64::max);
    for (n, tt) in out.trajectory.t.iter().enumerate() {
        if *tt >= fault.t_clear {
            for &r in &s.monitored {
                max_clear_v = max_clear_v.max(out.trajectory.vmag[n][r]);
            }
        }
    }
    Ok(SweepRow {
        value,
        min_fault_v: tau1.into_iter().fold(f64::INFINITY, f64::min),
        max_i: out.max_current.iter().copied().fold(0.0, f64::max),
        max_clear_v,
        max_i_fault: out.moment_currents[0].as_ref().map_or(0.0, |c| c.iter().copied().fold(0.0, f64::max)),
    })
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult<i32> {
    if !SWEEP_PARAMS.contains(&a.param.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown sweep parameter {:?}; valid names: {}",
            a.param,
            SWEEP_PARAMS.join(", ")
        )));
    }
    let (sc, study) = prepare(&a.common)?;
    let fault = select_faults(&sc, a.fault.as_deref().or(sc.faults.first().map(|f| f.id.as_str())))?[0];
    if let Some(d) = &a.device {
        if !study.devices.iter().any(|x| &x.id == d) {
            return Err(CliError::Usage(format!("no device named {d:?}")));
        }
    }
    let (base, presets) = match (&a.tunings, a.baseline) {
        (Some(p), false) => {
            let l = load_tunings(p, &sc, &[fault])?;
            (l.tunings, l.presets.into_iter().next())
        }
        (_, true) => (baseline_tunings(&sc), None),
        (None, false) => (Tunings::from_scenario(&sc), None),
    };
    let rows: Vec<CliResult<SweepRow>> = pool().install(|| {
        a.values
            .par_iter()
            .map(|&v| sweep_one(&study, &base, presets.as_deref(), a, fault, v))
            .collect()
    });
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.value, r.min_fault_v, r.max_i, r.max_clear_v, r.max_i_fault));
    }
    let path = out_path(&a.common, format!("{}.{}.sweep_{}.csv", sc.name, fault.id, a.param));
    std::fs::write(&path, csv).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rep = RunReport::new("sweep", &sc.name);
    rep.outputs.push(path.display().to_string());
    write_report(&a.common, &mut rep, &sc.name)?;
    Ok(EXIT_OK)
}

/// Variable and constraint counts for a study and configuration.
pub fn problem_size(study: &Study<f64>, cfg: &OptimizationConfig) -> stvs_optimizer::Tally {
    let mut mag: Vec<usize> = study.monitored.iter().chain(&study.device_bus).copied().collect();
    mag.sort_unstable();
    mag.dedup();
    tally(
        study.net.n_bus(),
        study.scenario.gfm.len(),
        study.scenario.gfl.len(),
        study.monitored.len(),
        mag.len(),
        cfg.contingencies.len(),
        cfg.groups().len(),
        cfg.moment_weights.iter().filter(|w| **w > 0.0).count(),
    )
}
