//! Scenario runner: parse a scenario file, check the standing assumptions,
//! synthesize the forwarding controller, simulate, audit and write
//! artifacts.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cascade_core::plant::AssumptionReport;
use cascade_core::simulate::Scenario;
use cascade_core::sylvester::SylvesterError;
use cascade_core::verify::{
    contraction_audit, convergence_study, decay_audit, nonresonance_rank, norm_equivalence_audit,
    observability_probe, zero_trajectory_like, ProbeReport, VerifyError, UNOBSERVABLE_TOL,
};
use cascade_core::{
    check_assumption1, run, synthesize_with, AuditReport, Controller, ForwardingError, SimError, SimulationTrace,
};
use thiserror::Error;

pub use config::{parse_scenario_file, ConfigError, Prepared, ScenarioFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Output directory used when neither `--out` nor the environment sets one.
pub const DEFAULT_OUT: &str = "out";
pub const OUT_ENV: &str = "CASCADE_FORWARD_OUT";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_MODES: usize = 16;
const NORM_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("assumption check failed (use --force to continue):\n{0}")]
    Assumption(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(ConfigError::Io { .. }) | Self::Io(_) => EXIT_IO,
            Self::Config(_) => EXIT_CONFIG,
            Self::Assumption(_) => EXIT_ASSUMPTION,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// `--out` wins, then `CASCADE_FORWARD_OUT`, then `out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub force: bool,
    pub lenient: bool,
    pub seed: u64,
    /// Flip the sign of the feedback. Test hook for the audits.
    pub sabotage: bool,
    pub modes: usize,
    /// Times at which to dump w profiles to `profile.txt`.
    pub profile_times: Vec<f64>,
}

impl RunOptions {
    pub fn new(out: PathBuf) -> Self {
        Self {
            out,
            force: false,
            lenient: false,
            seed: DEFAULT_SEED,
            sabotage: false,
            modes: DEFAULT_MODES,
            profile_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub assumptions: AssumptionReport,
    pub audits: Vec<AuditReport>,
    pub warnings: Vec<String>,
    pub trace_path: PathBuf,
}

impl RunOutcome {
    pub fn audit(&self, name: &str) -> Option<&AuditReport> {
        self.audits.iter().find(|a| a.name == name)
    }
}

fn map_synthesis(e: ForwardingError) -> CliError {
    match e {
        ForwardingError::Sylvester(SylvesterError::Resonant { .. }) => CliError::Assumption(e.to_string()),
        ForwardingError::Sylvester(SylvesterError::ScalarOnly | SylvesterError::ClosedFormDomain { .. }) => {
            CliError::Config(ConfigError::Invalid { key: "sylvester.method".into(), message: e.to_string() })
        }
        other => CliError::Numerical(other.to_string()),
    }
}

fn map_sim(e: SimError) -> CliError {
    match e {
        SimError::Invalid(m) => CliError::Config(ConfigError::Invalid { key: "sim".into(), message: m }),
        other => CliError::Numerical(other.to_string()),
    }
}

fn map_verify(e: VerifyError) -> CliError {
    match e {
        VerifyError::Input(m) => CliError::Config(ConfigError::Invalid { key: "grids".into(), message: m }),
        VerifyError::Sim(s) => map_sim(s),
        VerifyError::Sylvester(s) => map_synthesis(ForwardingError::Sylvester(s)),
        other => CliError::Numerical(other.to_string()),
    }
}

/// Loads a scenario file and checks it down to the nonlinearities and
/// initial data. Returns the prepared inputs plus parser warnings.
pub fn load(path: &Path, lenient: bool) -> Result<(Prepared, Vec<String>), CliError> {
    let (file, warnings) = parse_scenario_file(path, lenient)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok((file.prepare(base)?, warnings))
}

fn assumption_text(r: &AssumptionReport) -> String {
    let mut out = String::new();
    for (label, v) in [("dissipative", &r.dissipative), ("hurwitz", &r.hurwitz), ("disjoint_spectra", &r.disjoint)] {
        let _ = writeln!(
            out,
            "assumption {label} {} value={:.6e} | {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.value,
            v.detail
        );
    }
    let _ = writeln!(out, "assumption disjoint_method {:?}", r.disjoint_method);
    if let Some(gap) = r.discrete_gap {
        let _ = writeln!(out, "assumption discrete_gap {gap:.6e}");
    }
    out
}

/// Checks assumptions and synthesizes; `force` continues past a failed
/// check.
pub fn build_scenario(prep: &Prepared, force: bool) -> Result<(Scenario, AssumptionReport), CliError> {
    let report = check_assumption1(&prep.plant, &prep.grid);
    if !report.all_pass() && !force {
        return Err(CliError::Assumption(assumption_text(&report)));
    }
    let controller =
        synthesize_with(&prep.plant, &prep.grid, prep.sigma.clone(), &prep.options).map_err(map_synthesis)?;
    let scenario = Scenario {
        plant: prep.plant.clone(),
        grid: prep.grid,
        controller,
        z0: prep.z0.clone(),
        w0: prep.w0.clone(),
        t_final: prep.t_final,
        cfl_safety: prep.cfl_safety,
        record_stride: prep.record_stride,
        integrator: prep.integrator,
    };
    scenario.validate().map_err(map_sim)?;
    Ok((scenario, report))
}

/// Non-resonance rank test at the eigenvalues reached by the probe.
fn nonresonance_audit(sc: &Scenario, probe: &ProbeReport) -> Result<AuditReport, CliError> {
    let p = &sc.plant;
    let mut failing = Vec::new();
    for pr in &probe.probes {
        if !nonresonance_rank(p.a(), p.b(), p.c(), pr.eigenvalue).map_err(map_verify)? {
            failing.push(pr.mode_index);
        }
    }
    Ok(AuditReport {
        name: "nonresonance".into(),
        pass: failing.is_empty(),
        worst_violation: failing.len() as f64,
        context: format!(
            "rank test at {} probed eigenvalues; rank-deficient at modes {failing:?}",
            probe.probes.len()
        ),
        figures: vec![("modes".into(), probe.probes.len() as f64)],
    })
}

fn observability_audit(probe: &ProbeReport) -> AuditReport {
    let flagged = probe.flagged();
    let min = probe.probes.iter().map(|p| p.pairing_magnitude).fold(f64::INFINITY, f64::min);
    AuditReport {
        name: "observability_probe".into(),
        pass: flagged.is_empty(),
        worst_violation: flagged.len() as f64,
        context: format!("flagged modes {flagged:?} (pairing ≤ {UNOBSERVABLE_TOL:e}); {}", probe.note),
        figures: vec![("min_pairing".into(), min)],
    }
}

fn audit_lines(audits: &[AuditReport]) -> String {
    let mut out = String::new();
    for a in audits {
        let _ = writeln!(out, "{a}");
    }
    out
}

/// `run`: writes `trace.csv`, `controller.txt` and `audits.txt` (plus
/// `profile.txt` when profile times are given) into `opts.out`. Failed
/// audits are reported, not turned into an error.
pub fn cmd_run(path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let (prep, warnings) = load(path, opts.lenient)?;
    let (mut sc, assumptions) = build_scenario(&prep, opts.force)?;
    if opts.sabotage {
        sc.controller = sc.controller.with_reversed_feedback();
    }
    fs::create_dir_all(&opts.out).map_err(|e| io_err(&opts.out, e))?;
    write_file(&opts.out.join("controller.txt"), &sc.controller.to_text())?;
    let trace = match run(&sc) {
        Ok(t) => t,
        Err(SimError::NonFinite { t, step, last_finite }) => {
            let mut diag = format!("non-finite state at t = {t} (step {step}); last finite state at t = {}\n", last_finite.t);
            let _ = writeln!(diag, "z = {:?}", last_finite.z);
            let _ = writeln!(diag, "max |w| = {:e}", last_finite.w.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs())));
            write_file(&opts.out.join("abort.txt"), &diag)?;
            return Err(CliError::Numerical(diag));
        }
        Err(e) => return Err(map_sim(e)),
    };
    let trace_path = opts.out.join("trace.csv");
    write_file(&trace_path, &trace.to_csv())?;
    if !opts.profile_times.is_empty() {
        write_file(&opts.out.join("profile.txt"), &trace.profile_dump(&opts.profile_times))?;
    }

    let ctl = &sc.controller;
    let probe = observability_probe(&sc.plant, ctl, opts.modes).map_err(map_verify)?;
    let audits = vec![
        decay_audit(&trace, ctl).map_err(map_verify)?,
        contraction_audit(&trace, &zero_trajectory_like(&trace), ctl).map_err(map_verify)?,
        norm_equivalence_audit(&sc.plant, ctl, NORM_SAMPLES, opts.seed).map_err(map_verify)?,
        nonresonance_audit(&sc, &probe)?,
        observability_audit(&probe),
    ];

    let mut text = format!("scenario {}\n", path.display());
    for w in &warnings {
        let _ = writeln!(text, "warning {w}");
    }
    text.push_str(&assumption_text(&assumptions));
    let _ = writeln!(
        text,
        "synthesis method={} residual={} mnorm2={:.6e} c_lo={:.6e} c_hi={:.6e} sabotage={}",
        ctl.gain().method.name(),
        ctl.gain().residual.map_or("none".to_string(), |r| format!("{r:.6e}")),
        ctl.mnorm2(),
        ctl.c_lo(),
        ctl.c_hi(),
        opts.sabotage
    );
    let last = trace.records.len() - 1;
    let _ = writeln!(
        text,
        "simulation t_final={} dt={:.6e} records={} x_norm_ratio={:.6e}",
        sc.t_final,
        trace.dt,
        trace.records.len(),
        trace.x_norm(last) / trace.x_norm(0).max(f64::MIN_POSITIVE)
    );
    text.push_str(&audit_lines(&audits));
    let _ = writeln!(text, "overall {}", if audits.iter().all(|a| a.pass) { "PASS" } else { "FAIL" });
    write_file(&opts.out.join("audits.txt"), &text)?;

    Ok(RunOutcome { assumptions, audits, warnings, trace_path })
}

/// Parses `100,200,400`.
pub fn parse_grid_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| {
            CliError::Config(ConfigError::Invalid {
                key: "grids".into(),
                message: format!("{text:?} is not a comma-separated list of cell counts"),
            })
        })
}

/// `converge`: writes `convergence.csv` and returns its contents.
pub fn cmd_converge(path: &Path, grids: &[usize], out: &Path, lenient: bool, force: bool) -> Result<String, CliError> {
    if grids.len() < 3 {
        return Err(CliError::Config(ConfigError::Invalid {
            key: "grids".into(),
            message: format!("need at least 3 grids, got {}", grids.len()),
        }));
    }
    let (prep, _) = load(path, lenient)?;
    let (sc, _) = build_scenario(&prep, force)?;
    let report = convergence_study(&sc, grids).map_err(map_verify)?;
    let csv = report.to_csv();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_file(&out.join("convergence.csv"), &csv)?;
    Ok(format!(
        "{csv}reference {}\ngain_order {}\nfinal_norm_order {}\n",
        report.reference, report.gain_order, report.final_norm_order
    ))
}

/// `audit`: re-runs the decay audit from a trace CSV and a controller
/// export. Contraction needs full states, which CSV traces do not carry.
pub fn cmd_audit(trace_path: &Path, controller_path: &Path) -> Result<AuditReport, CliError> {
    let trace_text = fs::read_to_string(trace_path).map_err(|e| io_err(trace_path, e))?;
    let ctl_text = fs::read_to_string(controller_path).map_err(|e| io_err(controller_path, e))?;
    let trace = SimulationTrace::from_csv(&trace_text).map_err(|e| {
        CliError::Config(ConfigError::Invalid { key: trace_path.display().to_string(), message: e.to_string() })
    })?;
    let ctl = Controller::from_text(&ctl_text).map_err(|e| {
        CliError::Config(ConfigError::Invalid { key: controller_path.display().to_string(), message: e.to_string() })
    })?;
    decay_audit(&trace, &ctl).map_err(|e| match e {
        VerifyError::Input(m) => CliError::Config(ConfigError::Invalid { key: "trace".into(), message: m }),
        other => map_verify(other),
    })
}

/// `probe`: writes `probe.csv` with one row per mode and returns it.
pub fn cmd_probe(path: &Path, modes: usize, out: &Path, lenient: bool, force: bool) -> Result<(ProbeReport, String), CliError> {
    let (prep, _) = load(path, lenient)?;
    let (sc, _) = build_scenario(&prep, force)?;
    let probe = observability_probe(&sc.plant, &sc.controller, modes).map_err(map_verify)?;
    let p = &sc.plant;
    let mut csv = String::from("k,mu_re,mu_im,pairing,flagged,nonresonant\n");
    for pr in &probe.probes {
        let nonres = nonresonance_rank(p.a(), p.b(), p.c(), pr.eigenvalue).map_err(map_verify)?;
        let _ = writeln!(
            csv,
            "{},{:.16e},{:.16e},{:.16e},{},{}",
            pr.mode_index,
            pr.eigenvalue.re,
            pr.eigenvalue.im,
            pr.pairing_magnitude,
            pr.pairing_magnitude <= UNOBSERVABLE_TOL,
            nonres
        );
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_file(&out.join("probe.csv"), &csv)?;
    Ok((probe, csv))
}
