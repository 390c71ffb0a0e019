//! Command-line front end: scenario configuration, CSV and plot export, and
//! the `verify` pipeline.
//!
//! A scenario file is a flat JSON object whose keys are the long flag names
//! (`"t-max": 25`, `"kernel": "exponential:gamma=0.5"`). Flags given on the
//! command line override the file.

use crate::classic_sir::{rk4_at_times, simulate_rk4, sis_closed_form, SirParams, SisParams, Trajectory};
use crate::error::{Result, SirError};
use crate::nonlocal_time::{parse_cdf_kernel, solve_volterra};
use crate::numerics::{detect_peaks_in, geomspace, linspace, GridFunction};
use crate::peak_construction::{construct, verify_profile, GridSpec, PeakMode, PeakSpec};
use crate::s_domain::{
    alpha0_threshold, builtin_profile, case3_profiles, forward_profile, inverse_profile, load_profile_csv, SProfile,
    PROFILE_TOL,
};
use crate::table;
use crate::tau_model::{
    i1_exponential, i1_general, max_principle_check, parse_tau_kernel, AdmissibleKernel,
};
use crate::tau_scale::{peak_tau, reconstruct_with_tau, tau_infinity, times_on_grid, TauSolution};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Every scenario setting. All fields are optional so that a file and the
/// flags can be merged; defaults are applied per subcommand.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Flat JSON scenario file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model name (scenario files only; the subcommand sets it otherwise).
    #[arg(skip)]
    pub model: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub i0: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// `exponential:gamma=<x>`, `exp-tau:A=<x>` or `file:<path>`.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    #[arg(long, alias = "nodes")]
    pub n_nodes: Option<usize>,
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Two-column gnuplot data file.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Accepted and ignored: every algorithm is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Built-in profile name (`case3-g`, `case3-f`) or `file:<path>`.
    #[arg(long)]
    pub profile: Option<String>,
    /// `forward` (g to f), `inverse` (f to g) or `none`.
    #[arg(long)]
    pub transform: Option<String>,
    #[arg(long)]
    pub s_max: Option<f64>,
    /// Peak window `M1:M2`.
    #[arg(long)]
    pub window: Option<String>,
    /// Comma-separated peak locations.
    #[arg(long)]
    pub at: Option<String>,
    #[arg(long)]
    pub accumulation: Option<f64>,
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub m0: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub delta0: Option<f64>,
    /// Peak construction mode for scenario files: rough, precise or infinite.
    #[arg(skip)]
    pub mode: Option<String>,
}

macro_rules! overlay_fields {
    ($top:expr, $base:expr, $($field:ident),*) => {
        ScenarioConfig { $($field: $top.$field.or($base.$field),)* }
    };
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SirError::Parse(format!("scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SirError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Fields set in `self` win over those in `base`.
    pub fn overlay(self, base: ScenarioConfig) -> ScenarioConfig {
        overlay_fields!(
            self, base, config, model, lambda, gamma, s0, i0, mu, beta, kernel, dt, h, tol, t_max, tau_max, n_nodes,
            cap, out, report, plot, seed, profile, transform, s_max, window, at, accumulation, truncation, m0, theta,
            epsilon, eta0, delta0, mode
        )
    }

    /// Reads the `--config` file, if any, underneath the given flags.
    pub fn resolve(self) -> Result<Self> {
        match &self.config {
            Some(path) => {
                let file = Self::load(path)?;
                Ok(self.overlay(file))
            }
            None => Ok(self),
        }
    }

    /// Numeric fields positive, referenced files present.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("dt", self.dt),
            ("h", self.h),
            ("tol", self.tol),
            ("t-max", self.t_max),
            ("tau-max", self.tau_max),
            ("s-max", self.s_max),
            ("theta", self.theta),
            ("epsilon", self.epsilon),
            ("eta0", self.eta0),
            ("delta0", self.delta0),
        ];
        for (name, value) in positive {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(SirError::invalid(format!("--{name} must be positive, got {v}")));
                }
            }
        }
        if self.n_nodes == Some(0) {
            return Err(SirError::invalid("--n-nodes must be positive"));
        }
        if let Some(cap) = self.cap {
            if !(cap > 0.0 && cap < 1.0) {
                return Err(SirError::invalid(format!("--cap must lie in (0, 1), got {cap}")));
            }
        }
        for spec in [&self.kernel, &self.profile].into_iter().flatten() {
            if let Some(path) = spec.strip_prefix("file:") {
                if !Path::new(path).exists() {
                    return Err(SirError::invalid(format!("referenced file `{path}` does not exist")));
                }
            }
        }
        if let Some(model) = &self.model {
            Model::parse(model)?;
        }
        Ok(())
    }

    fn require(&self, name: &str, value: Option<f64>) -> Result<f64> {
        value.ok_or_else(|| SirError::invalid(format!("missing --{name}")))
    }

    pub fn sir_params(&self) -> Result<SirParams> {
        SirParams::new(
            self.require("lambda", self.lambda)?,
            self.require("gamma", self.gamma)?,
            self.require("s0", self.s0)?,
            self.require("i0", self.i0)?,
        )
    }

    /// Parameters with the reference scenario `(1, 0.5, 0.99, 0.01)` as fallback.
    pub fn sir_params_or_reference(&self) -> Result<SirParams> {
        SirParams::new(
            self.lambda.unwrap_or(1.0),
            self.gamma.unwrap_or(0.5),
            self.s0.unwrap_or(0.99),
            self.i0.unwrap_or(0.01),
        )
    }

    pub fn sis_params(&self) -> Result<SisParams> {
        SisParams::new(
            self.require("lambda", self.lambda)?,
            self.require("gamma", self.gamma)?,
            self.require("mu", self.mu)?,
            self.require("s0", self.s0)?,
        )
    }

    fn tol(&self) -> f64 {
        self.tol.unwrap_or(1e-10)
    }

    fn window_bounds(&self) -> Result<(f64, f64)> {
        let text = self.window.as_deref().unwrap_or("2:10");
        let (lo, hi) = text
            .split_once(':')
            .ok_or_else(|| SirError::invalid(format!("window `{text}` must look like M1:M2")))?;
        Ok((parse_number(lo, "window")?, parse_number(hi, "window")?))
    }

    fn locations(&self) -> Result<Vec<f64>> {
        let text = self.at.as_deref().unwrap_or("3,5,8");
        text.split(',').map(|v| parse_number(v, "at")).collect()
    }

    /// Peak specification for `mode`.
    pub fn peak_spec(&self, mode: PeakMode) -> Result<PeakSpec> {
        let beta = self.beta.unwrap_or(2.0);
        let mut spec = match mode {
            PeakMode::Rough => PeakSpec::rough(beta, self.m0.unwrap_or(1)),
            PeakMode::Precise => PeakSpec::precise(beta, self.window_bounds()?, self.locations()?),
            PeakMode::InfiniteTruncated => PeakSpec::infinite(
                beta,
                self.window_bounds()?,
                self.accumulation.unwrap_or(5.0),
                self.truncation.unwrap_or(5),
            ),
        };
        spec.theta = self.theta;
        spec.epsilon = self.epsilon;
        spec.eta0 = self.eta0;
        spec.delta0 = self.delta0;
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_number(text: &str, flag: &str) -> Result<f64> {
    text.trim()
        .parse()
        .map_err(|_| SirError::invalid(format!("--{flag}: `{text}` is not a number")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Classic,
    Tau,
    Sis,
    Nonlocal,
    TauModel,
    Sdomain,
    Peaks,
}

impl Model {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "classic" => Model::Classic,
            "tau" => Model::Tau,
            "sis" => Model::Sis,
            "nonlocal" => Model::Nonlocal,
            "tau-model" => Model::TauModel,
            "sdomain" => Model::Sdomain,
            "peaks" => Model::Peaks,
            other => return Err(SirError::invalid(format!("unknown model `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PeakModeArg {
    Rough,
    Precise,
    Infinite,
}

impl From<PeakModeArg> for PeakMode {
    fn from(m: PeakModeArg) -> Self {
        match m {
            PeakModeArg::Rough => PeakMode::Rough,
            PeakModeArg::Precise => PeakMode::Precise,
            PeakModeArg::Infinite => PeakMode::InfiniteTruncated,
        }
    }
}

fn parse_peak_mode(name: &str) -> Result<PeakMode> {
    match name {
        "rough" => Ok(PeakMode::Rough),
        "precise" => Ok(PeakMode::Precise),
        "infinite" => Ok(PeakMode::InfiniteTruncated),
        other => Err(SirError::invalid(format!("unknown peak mode `{other}`"))),
    }
}

#[derive(Debug, Parser)]
#[command(name = "nlsir", version, about = "Classic and nonlocal SIR models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// RK4 trajectory of the classic model (`t,S,I,R`).
    Classic(ScenarioConfig),
    /// Exact solution on the rescaled clock (`tau,t,S1,I1`).
    Tau(ScenarioConfig),
    /// SIS closed form on the rescaled clock (`tau,S,I`).
    Sis(ScenarioConfig),
    /// Volterra solve with a recovery-time CDF (`t,S,I,R`).
    Nonlocal(ScenarioConfig),
    /// Rescaled-clock model with an admissible kernel (`tau,S1,I1`).
    TauModel(ScenarioConfig),
    /// Kernel/profile transform between g and f (`s,value`).
    Sdomain(ScenarioConfig),
    /// Multi-peak profile construction and verification (`s,value`).
    Peaks {
        #[arg(value_enum)]
        mode: PeakModeArg,
        #[command(flatten)]
        config: ScenarioConfig,
    },
    /// Runs the invariant suite for a scenario.
    Verify {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        config: ScenarioConfig,
    },
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

pub fn exit_code(err: &SirError) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Classic(c) => with_model(c, Model::Classic),
        Command::Tau(c) => with_model(c, Model::Tau),
        Command::Sis(c) => with_model(c, Model::Sis),
        Command::Nonlocal(c) => with_model(c, Model::Nonlocal),
        Command::TauModel(c) => with_model(c, Model::TauModel),
        Command::Sdomain(c) => with_model(c, Model::Sdomain),
        Command::Peaks { mode, config } => {
            let mut cfg = config.resolve()?;
            cfg.mode = Some(
                match mode {
                    PeakModeArg::Rough => "rough",
                    PeakModeArg::Precise => "precise",
                    PeakModeArg::Infinite => "infinite",
                }
                .into(),
            );
            cfg.validate()?;
            run_peaks(&cfg, mode.into())
        }
        Command::Verify { scenario, config } => {
            let mut cfg = config.resolve()?;
            if let Some(path) = scenario {
                cfg = cfg.overlay(ScenarioConfig::load(&path)?);
            }
            cfg.validate()?;
            let report = verify_suite(&cfg)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            emit_text(cfg.out.as_deref(), &(text + "\n"))?;
            Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATION })
        }
    }
}

fn with_model(config: ScenarioConfig, model: Model) -> Result<i32> {
    let cfg = config.resolve()?;
    cfg.validate()?;
    run_model(&cfg, model)?;
    Ok(EXIT_OK)
}

/// Runs one model subcommand with an already merged configuration.
pub fn run_model(cfg: &ScenarioConfig, model: Model) -> Result<()> {
    match model {
        Model::Classic => {
            let p = cfg.sir_params()?;
            let traj = simulate_rk4(&p, cfg.t_max.unwrap_or(25.0), cfg.dt.unwrap_or(1e-3))?;
            export_csv(&Export::Trajectory(&traj), cfg.out.as_deref())?;
            write_plot(cfg.plot.as_deref(), &traj.t, &traj.i)
        }
        Model::Tau => {
            let p = cfg.sir_params()?;
            let (taus, traj) =
                reconstruct_with_tau(&p, cfg.n_nodes.unwrap_or(2000), cfg.cap.unwrap_or(0.999), cfg.tol.unwrap_or(1e-12))?;
            export_csv(&Export::TauSolution { taus: &taus, traj: &traj }, cfg.out.as_deref())?;
            write_plot(cfg.plot.as_deref(), &taus, &traj.i)?;
            let solution = TauSolution::new(&p)?;
            let report = serde_json::json!({
                "tau_inf": solution.tau_inf,
                "case": solution.case_tag,
                "peak_tau": peak_tau(&p),
            });
            write_report(cfg.report.as_deref(), &report)
        }
        Model::Sis => {
            let p = cfg.sis_params()?;
            let taus = linspace(0.0, cfg.tau_max.unwrap_or(10.0), cfg.n_nodes.unwrap_or(1000).max(2));
            let (s, i): (Vec<f64>, Vec<f64>) = taus
                .iter()
                .map(|&tau| sis_closed_form(&p, tau))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            emit_csv(cfg.out.as_deref(), &["tau", "S", "I"], &[&taus, &s, &i])?;
            write_plot(cfg.plot.as_deref(), &taus, &i)
        }
        Model::Nonlocal => {
            let p = cfg.sir_params()?;
            let spec = cfg.kernel.clone().unwrap_or_else(|| format!("exponential:gamma={}", p.gamma()));
            let kernel = parse_cdf_kernel(&spec)?;
            let traj = solve_volterra(&p, &kernel, cfg.h.unwrap_or(1e-3), cfg.t_max.unwrap_or(25.0))?;
            export_csv(&Export::Trajectory(&traj), cfg.out.as_deref())?;
            write_plot(cfg.plot.as_deref(), &traj.t, &traj.i)
        }
        Model::TauModel => {
            let p = cfg.sir_params()?;
            let spec = cfg.kernel.clone().unwrap_or_else(|| format!("exp-tau:A={}", p.gamma()));
            let (kernel, tau_max) = tau_kernel(&p, &spec, cfg)?;
            let taus = linspace(0.0, tau_max, cfg.n_nodes.unwrap_or(1000).max(2));
            let tol = cfg.tol();
            let s1: Vec<f64> = taus.iter().map(|&t| p.s0() * (-p.lambda() * t).exp()).collect();
            let i1 = taus
                .iter()
                .map(|&t| i1_general(&p, &kernel, t, tol))
                .collect::<Result<Vec<f64>>>()?;
            emit_csv(cfg.out.as_deref(), &["tau", "S1", "I1"], &[&taus, &s1, &i1])?;
            write_plot(cfg.plot.as_deref(), &taus, &i1)?;
            if cfg.report.is_some() {
                let mp = max_principle_check(&p, &kernel, &taus, tol)?;
                let report = serde_json::json!({
                    "kernel": kernel.name(),
                    "min_margin": mp.min_margin,
                    "max_principle_holds": mp.holds,
                    "peaks": detect_peaks_in(&taus, &i1),
                });
                write_report(cfg.report.as_deref(), &report)?;
            }
            Ok(())
        }
        Model::Sdomain => {
            let input = load_profile(cfg)?;
            let beta = cfg.beta.unwrap_or(2.0);
            let transform = cfg.transform.as_deref().unwrap_or("forward");
            let (g, f, output) = match transform {
                "forward" => {
                    let f = forward_profile(&input, beta, PROFILE_TOL)?;
                    (input, f.clone(), f)
                }
                "inverse" | "none" => {
                    let g = inverse_profile(&input, beta, PROFILE_TOL)?;
                    let output = if transform == "none" { input.clone() } else { g.clone() };
                    (g, input, output)
                }
                other => return Err(SirError::invalid(format!("unknown transform `{other}`"))),
            };
            let output = &output;
            let s_max = cfg.s_max.unwrap_or(100.0);
            let nodes = profile_nodes(output, s_max, cfg.n_nodes.unwrap_or(1000));
            export_csv(&Export::Profile { profile: output, nodes: &nodes }, cfg.out.as_deref())?;
            let sampled = output.sample(&nodes)?;
            write_plot(cfg.plot.as_deref(), sampled.nodes(), sampled.values())?;
            if cfg.report.is_some() {
                let f_vals = f.sample(&nodes)?;
                let report = serde_json::json!({
                    "beta": beta,
                    "transform": transform,
                    "f_peaks": detect_peaks_in(f_vals.nodes(), f_vals.values()),
                    "alpha0": alpha0_threshold(&g, s_max, PROFILE_TOL).ok(),
                });
                write_report(cfg.report.as_deref(), &report)?;
            }
            Ok(())
        }
        Model::Peaks => {
            let mode = parse_peak_mode(cfg.mode.as_deref().unwrap_or("precise"))?;
            run_peaks(cfg, mode).map(|_| ())
        }
    }
}

fn tau_kernel(p: &SirParams, spec: &str, cfg: &ScenarioConfig) -> Result<(AdmissibleKernel, f64)> {
    if spec.starts_with("exp-tau:") {
        return Ok((parse_tau_kernel(spec)?, cfg.tau_max.unwrap_or(10.0)));
    }
    // a recovery-time CDF is carried to the rescaled clock through t(τ)
    let cdf = parse_cdf_kernel(spec)?;
    let tau_inf = tau_infinity(p)?;
    let tau_max = cfg.tau_max.unwrap_or(0.99 * tau_inf);
    if tau_max >= tau_inf {
        return Err(SirError::domain(format!(
            "tau-max = {tau_max} must stay below the horizon {tau_inf} for a time-map kernel"
        )));
    }
    let taus = linspace(0.0, tau_max, 2001);
    let times = times_on_grid(p, &taus, 1e-12)?;
    Ok((AdmissibleKernel::from_time_map(&cdf, GridFunction::new(taus, times)?), tau_max))
}

fn load_profile(cfg: &ScenarioConfig) -> Result<SProfile> {
    let spec = cfg.profile.as_deref().unwrap_or("case3-g");
    match spec.strip_prefix("file:") {
        Some(path) => load_profile_csv(Path::new(path), cfg.theta.unwrap_or(1.0)),
        None => builtin_profile(spec),
    }
}

fn profile_nodes(profile: &SProfile, s_max: f64, n: usize) -> Vec<f64> {
    let mut nodes = geomspace(1.0, s_max, n.max(2));
    nodes.extend(profile.breakpoints().into_iter().filter(|&b| b < s_max));
    nodes.extend(profile.markers().iter().copied().filter(|&m| m < s_max));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes
}

fn run_peaks(cfg: &ScenarioConfig, mode: PeakMode) -> Result<i32> {
    let spec = cfg.peak_spec(mode)?;
    let built = construct(&spec)?;
    let grid = GridSpec {
        s_max: cfg.s_max.unwrap_or(1e4),
        nodes: cfg.n_nodes.unwrap_or(10_000),
        ..GridSpec::default()
    };
    let report = verify_profile(&built.profile, spec.beta, &grid)?;
    let nodes = grid.build(&built.profile);
    export_csv(&Export::Profile { profile: &built.profile, nodes: &nodes }, cfg.out.as_deref())?;
    if cfg.plot.is_some() {
        let sampled = built.profile.sample(&nodes)?;
        write_plot(cfg.plot.as_deref(), sampled.nodes(), sampled.values())?;
    }
    let feasible = report.feasible();
    let json = serde_json::json!({
        "spec": spec,
        "construction": built.summary,
        "verification": report,
        "feasible": feasible,
    });
    write_report(cfg.report.as_deref(), &json)?;
    if !feasible {
        return Err(SirError::Construction {
            reason: "constructed profile failed verification".into(),
            margin: report.inequality_margin,
        });
    }
    Ok(EXIT_OK)
}

/// Something that can be written as one of the CSV formats.
pub enum Export<'a> {
    /// `t,S,I,R`
    Trajectory(&'a Trajectory),
    /// `tau,t,S1,I1`
    TauSolution { taus: &'a [f64], traj: &'a Trajectory },
    /// `s,value`
    Profile { profile: &'a SProfile, nodes: &'a [f64] },
}

/// Renders `item` as CSV text.
pub fn render_csv(item: &Export<'_>) -> Result<String> {
    match item {
        Export::Trajectory(traj) => table::render(&["t", "S", "I", "R"], &[&traj.t, &traj.s, &traj.i, &traj.r]),
        Export::TauSolution { taus, traj } => table::render(&["tau", "t", "S1", "I1"], &[taus, &traj.t, &traj.s, &traj.i]),
        Export::Profile { profile, nodes } => {
            let sampled = profile.sample(nodes)?;
            table::render(&["s", "value"], &[sampled.nodes(), sampled.values()])
        }
    }
}

/// Writes `item` to `path`, or to standard output when `path` is `None`.
pub fn export_csv(item: &Export<'_>, path: Option<&Path>) -> Result<()> {
    emit_text(path, &render_csv(item)?)
}

fn emit_csv(path: Option<&Path>, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    emit_text(path, &table::render(header, columns)?)
}

fn emit_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => std::fs::write(path, text).map_err(|source| SirError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|source| SirError::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

/// Gnuplot-style whitespace separated `x y` rows.
pub fn render_plot(xs: &[f64], ys: &[f64]) -> String {
    let mut out = String::with_capacity(xs.len() * 48);
    for (x, y) in xs.iter().zip(ys) {
        out.push_str(&table::format_value(*x));
        out.push(' ');
        out.push_str(&table::format_value(*y));
        out.push('\n');
    }
    out
}

fn write_plot(path: Option<&Path>, xs: &[f64], ys: &[f64]) -> Result<()> {
    match path {
        Some(path) => emit_text(Some(path), &render_plot(xs, ys)),
        None => Ok(()),
    }
}

fn write_report(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    match path {
        Some(path) => {
            let text = serde_json::to_string_pretty(value).expect("report serializes");
            emit_text(Some(path), &(text + "\n"))
        }
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Every module's invariant checks for the scenario parameters (the
/// reference scenario fills in missing rates and initial values).
pub fn verify_suite(cfg: &ScenarioConfig) -> Result<SuiteReport> {
    let p = cfg.sir_params_or_reference()?;
    let mut checks = Vec::new();

    let dt = cfg.dt.unwrap_or(1e-3);
    let t_max = cfg.t_max.unwrap_or(25.0);
    let rk4 = simulate_rk4(&p, t_max, dt)?;
    checks.push(CheckResult::at_most("classic-conservation", rk4.max_conservation_error(), 1e-12));

    let (_, tau_traj) = reconstruct_with_tau(&p, cfg.n_nodes.unwrap_or(2000), cfg.cap.unwrap_or(0.999), 1e-12)?;
    let oracle = rk4_at_times(&p, &tau_traj.t, 1e-4)?;
    let (os, oi): (Vec<f64>, Vec<f64>) = oracle.into_iter().unzip();
    let err = max_abs_diff(&tau_traj.s, &os).max(max_abs_diff(&tau_traj.i, &oi));
    checks.push(CheckResult::at_most("tau-reconstruction-vs-rk4", err, 1e-5));

    let tau_inf = tau_infinity(&p)?;
    let residual = (p.s0() + p.i0() - p.s0() * (-p.lambda() * tau_inf).exp() - p.gamma() * tau_inf).abs();
    checks.push(CheckResult::at_most("tau-infinity-residual", residual, 1e-12));

    let taus = linspace(0.0, tau_inf, 1001);
    let i1: Vec<f64> = taus
        .iter()
        .map(|&t| crate::tau_scale::closed_form(&p, t).map(|v| v.1))
        .collect::<Result<_>>()?;
    let concavity = i1.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult::at_most("tau-concavity", concavity, 1e-12));
    if let Some(peak) = peak_tau(&p) {
        let sampled = taus[i1
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0)];
        checks.push(CheckResult::at_most("tau-peak-location", (sampled - peak).abs(), taus[1]));
    }

    let h = cfg.h.unwrap_or(1e-3);
    let exponential = parse_cdf_kernel(&format!("exponential:gamma={}", p.gamma()))?;
    let volterra = solve_volterra(&p, &exponential, h, t_max)?;
    let oracle = rk4_at_times(&p, &volterra.t, h / 10.0)?;
    let (os, oi): (Vec<f64>, Vec<f64>) = oracle.into_iter().unzip();
    let err = max_abs_diff(&volterra.s, &os).max(max_abs_diff(&volterra.i, &oi));
    checks.push(CheckResult::at_most("nonlocal-exponential-vs-rk4", err, 1e-4));

    let tol = cfg.tol();
    let tau_grid = linspace(0.0, cfg.tau_max.unwrap_or(10.0), 1000);
    let mut kernels = vec![AdmissibleKernel::exp_tau(p.gamma())?, AdmissibleKernel::zero()];
    if let Some(spec) = &cfg.kernel {
        if spec.starts_with("exp-tau:") {
            kernels.push(parse_tau_kernel(spec)?);
        } else {
            parse_cdf_kernel(spec)?.validate()?;
        }
    }
    let mut worst = f64::INFINITY;
    for k in &kernels {
        worst = worst.min(max_principle_check(&p, k, &tau_grid, tol)?.min_margin);
    }
    checks.push(CheckResult::at_least("max-principle", worst, -1e-9));

    let rate = p.gamma();
    let exp_kernel = AdmissibleKernel::exp_tau(rate)?;
    let mut gap: f64 = 0.0;
    for &t in &linspace(0.0, 10.0, 100) {
        gap = gap.max((i1_general(&p, &exp_kernel, t, 1e-12)? - i1_exponential(&p, rate, t)).abs());
    }
    checks.push(CheckResult::at_most("exponential-closed-form", gap, 1e-8));

    let (g3, f3) = case3_profiles();
    let nodes = geomspace(1.0, 100.0, 1000);
    let there = forward_profile(&g3, 2.0, PROFILE_TOL)?;
    let back = inverse_profile(&there, 2.0, PROFILE_TOL)?;
    let err = max_abs_diff(back.sample(&nodes)?.values(), g3.sample(&nodes)?.values());
    checks.push(CheckResult::at_most("sdomain-roundtrip", err, 1e-8));
    let fine = linspace(1.0, 10.0, 9001);
    let f_vals = f3.sample(&fine)?;
    let count = detect_peaks_in(f_vals.nodes(), f_vals.values()).len() as f64;
    checks.push(CheckResult::at_most("case3-peak-count", (count - 2.0).abs(), 0.0));

    let spec = cfg.peak_spec(PeakMode::Precise)?;
    let built = construct(&spec)?;
    let report = verify_profile(&built.profile, spec.beta, &GridSpec::default())?;
    checks.push(CheckResult::at_most("peaks-inequality-margin", report.inequality_margin, 0.0));
    checks.push(CheckResult::at_most(
        "peaks-count",
        (report.peaks_found.len() as f64 - spec.m0 as f64).abs(),
        0.0,
    ));
    checks.push(CheckResult::at_least(
        "peaks-feasible",
        report.feasible() as u8 as f64,
        1.0,
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport { checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(line: &str) -> Vec<String> {
        std::iter::once("nlsir".to_string())
            .chain(line.split_whitespace().map(String::from))
            .collect()
    }

    #[test]
    fn overlay_prefers_flags() {
        let file = ScenarioConfig::from_json(r#"{"lambda": 2.0, "gamma": 0.5, "t-max": 10}"#).unwrap();
        let flags = ScenarioConfig {
            lambda: Some(1.0),
            ..Default::default()
        };
        let merged = flags.overlay(file);
        assert_eq!(merged.lambda, Some(1.0));
        assert_eq!(merged.gamma, Some(0.5));
        assert_eq!(merged.t_max, Some(10.0));
    }

    #[test]
    fn unknown_scenario_keys_are_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let bad = ScenarioConfig {
            dt: Some(-1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let missing = ScenarioConfig {
            kernel: Some("file:/does/not/exist.csv".into()),
            ..Default::default()
        };
        assert!(missing.validate().is_err());
        let model = ScenarioConfig {
            model: Some("nope".into()),
            ..Default::default()
        };
        assert!(model.validate().is_err());
        assert!(ScenarioConfig::default().sir_params().is_err());
    }

    #[test]
    fn window_and_locations_parse() {
        let cfg = ScenarioConfig {
            window: Some("2:10".into()),
            at: Some("3, 5,8".into()),
            ..Default::default()
        };
        assert_eq!(cfg.window_bounds().unwrap(), (2.0, 10.0));
        assert_eq!(cfg.locations().unwrap(), vec![3.0, 5.0, 8.0]);
        let bad = ScenarioConfig {
            window: Some("2-10".into()),
            ..Default::default()
        };
        assert!(bad.window_bounds().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(argv("--bogus")), EXIT_VALIDATION);
        assert_eq!(run(argv("classic --lambda 1 --gamma 0.5 --s0 0.99 --i0 0.01 --unknown 3")), EXIT_VALIDATION);
        assert_eq!(run(argv("classic --lambda -1 --gamma 0.5 --s0 0.99 --i0 0.01")), EXIT_VALIDATION);
        assert_eq!(exit_code(&SirError::StepSize("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&SirError::Parse("x".into())), EXIT_VALIDATION);
    }

    #[test]
    fn io_failure_reports_path() {
        let traj = simulate_rk4(&SirParams::new(1.0, 0.5, 0.99, 0.01).unwrap(), 0.1, 0.01).unwrap();
        let err = export_csv(&Export::Trajectory(&traj), Some(Path::new("/nonexistent/dir/out.csv"))).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_NUMERICAL);
        assert!(err.to_string().contains("/nonexistent/dir/out.csv"));
    }

    #[test]
    fn plot_rows() {
        let text = render_plot(&[1.0, 2.0], &[0.5, 0.25]);
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| l.split(' ').count() == 2));
    }
}
