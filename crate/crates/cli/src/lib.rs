//! Front end for `sigma2-core`: argument and config-file parsing, command dispatch,
//! CSV traces and JSON summaries.
//!
//! Every config-file key is the long name of exactly one flag. The effective
//! configuration is the config file overlaid with the command-line flags.

// `!(x > 0.0)` also rejects NaN; that is the intent wherever it appears.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use sigma2_core::flow::{self, FlowConfig, MonitorRecord};
use sigma2_core::geometry::{functional_f2, functional_v_eps, schouten_conformal, sobolev_quotient};
use sigma2_core::symfun::garding_pairing;
use sigma2_core::testmetric::{
    assemble_and_compare, fit_lambda2_slope, sphere_constants, AssembledMetric, ConstructionConfig, TransitionRadii,
};
use sigma2_core::{BackgroundGeometry, BubbleParams, ConformalField, Error, RadialGrid, SymmetricMatrix};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Trace sampling when `trace-every` is unset; every step would give ~10⁵ rows per time unit.
pub const DEFAULT_TRACE_EVERY: usize = 100;

/// Header of the flow trace CSV.
pub const TRACE_HEADER: &str = "t,F2,V_eps,r_eps,s_eps,min_sigma2,sup_grad,dF2dt_measured,dF2dt_formula";

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Usage = 2,
    Numeric = 3,
    Io = 4,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: ExitCode::Usage, message: msg.into() }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        Self { code: ExitCode::Io, message: format!("{}: {err}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Run the normalized flow and write its trace.
    Flow,
    /// Solve the nonlinear eigenvalue problem (ε = 2).
    Eigen,
    /// Solve along a decreasing ε ladder.
    Continuation,
    /// Discrete identity and inequality checks on one field.
    Verify,
    /// Build one glued test metric and compare it with the round sphere.
    Construct,
    /// Construct over several λ and fit the λ² coefficient.
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Eigen => "eigen",
            Command::Continuation => "continuation",
            Command::Verify => "verify",
            Command::Construct => "construct",
            Command::Sweep => "sweep",
        }
    }

    fn is_construction(self) -> bool {
        matches!(self, Command::Construct | Command::Sweep)
    }
}

/// Comma-separated list of floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

/// Shortest round-trip rendering, in exponent form for very small or large magnitudes.
fn fmt_key_float(x: f64) -> String {
    if x != 0.0 && !(1e-4..1e16).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

impl fmt::Display for FloatList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|&x| fmt_key_float(x)).collect();
        f.write_str(&parts.join(","))
    }
}

/// Initial profile `name[:key=value,...]` from the registry {constant, bump, cosine}.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// `u = value`.
    Constant { value: f64 },
    /// `u = amp·exp(−(1 − cos θ)/width)`, concentrated at the north pole.
    Bump { amp: f64, width: f64 },
    /// `u = amp·cos(kθ)`.
    Cosine { amp: f64, k: u32 },
}

impl InitSpec {
    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            InitSpec::Constant { value } => value,
            InitSpec::Bump { amp, width } => amp * (-(1.0 - theta.cos()) / width).exp(),
            InitSpec::Cosine { amp, k } => amp * (k as f64 * theta).cos(),
        }
    }
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Cosine { amp: 0.1, k: 1 }
    }
}

impl FromStr for InitSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got '{part}'"))?;
            let v: f64 = v.trim().parse().map_err(|e| format!("init parameter {k}: {e}"))?;
            if kv.insert(k.trim().to_string(), v).is_some() {
                return Err(format!("init parameter {k} given twice"));
            }
        }
        let mut take = |key: &str, default: f64| kv.remove(key).unwrap_or(default);
        let spec = match name.trim() {
            "constant" => InitSpec::Constant { value: take("value", 0.0) },
            "bump" => InitSpec::Bump { amp: take("amp", 0.1), width: take("width", 0.5) },
            "cosine" => {
                let k = take("k", 1.0);
                if !(k >= 1.0 && k.fract() == 0.0 && k <= 64.0) {
                    return Err(format!("cosine k = {k} must be an integer in [1, 64]"));
                }
                InitSpec::Cosine { amp: take("amp", 0.1), k: k as u32 }
            }
            other => return Err(format!("unknown init profile '{other}' (expected constant, bump or cosine)")),
        };
        if let Some(k) = kv.keys().next() {
            return Err(format!("unknown parameter '{k}' for init profile '{}'", name.trim()));
        }
        match spec {
            InitSpec::Bump { width, .. } if !(width > 0.0) => Err("bump width must be positive".into()),
            _ => Ok(spec),
        }
    }
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Constant { value } => write!(f, "constant:value={}", fmt_key_float(*value)),
            InitSpec::Bump { amp, width } => {
                write!(f, "bump:amp={},width={}", fmt_key_float(*amp), fmt_key_float(*width))
            }
            InitSpec::Cosine { amp, k } => write!(f, "cosine:amp={},k={k}", fmt_key_float(*amp)),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sigma2",
    version,
    about = "σ₂ curvature flows and test-metric constructions",
    args_override_self = true
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub params: Params,
}

/// Flags shared by all commands. Unset values fall back to per-command defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Params {
    /// Dimension (≥ 5; ≥ 9 for construct and sweep).
    #[arg(long)]
    pub n: Option<usize>,
    /// Subcritical exponent ε in [0, 2].
    #[arg(long)]
    pub eps: Option<f64>,
    /// Strictly decreasing ε ladder for continuation.
    #[arg(long = "eps-ladder")]
    pub eps_ladder: Option<FloatList>,
    /// Number of latitude nodes.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Flow-time budget; reaching it ends the run with status `timeout`
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    /// Fraction of the explicit stability limit, in (0, 1].
    #[arg(long = "dt-safety")]
    pub dt_safety: Option<f64>,
    /// Sup-norm velocity below which the run counts as converged
    #[arg(long = "tol-converge")]
    pub tol_converge: Option<f64>,
    /// Keep every k-th step in the trace.
    #[arg(long = "trace-every")]
    pub trace_every: Option<usize>,
    /// Initial profile, e.g. `cosine:amp=0.1,k=1`, `bump:amp=0.1,width=0.5`, `constant:value=0`.
    #[arg(long)]
    pub init: Option<InitSpec>,
    /// CSV output (trace, rung table, radial profile or sweep table).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary; printed to stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Bubble scale λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// λ values for sweep.
    #[arg(long)]
    pub lambdas: Option<FloatList>,
    /// Tube exponent γ in (1, 2).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Bubble radius exponent β in (1/4, 1/2).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Laplacian of the scalar curvature at the gluing point (≤ 0).
    #[arg(long = "deltaR", allow_hyphen_values = true)]
    pub delta_r: Option<f64>,
    /// Patch radius.
    #[arg(long)]
    pub r0: Option<f64>,
    /// Margin ε of the transition equation.
    #[arg(long = "eps-margin")]
    pub eps_margin: Option<f64>,
    /// Curvature of the background exponent `log(1 + μr²)`.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Transition radii r4,r5,r6,r7,r8,r2.
    #[arg(long)]
    pub radii: Option<FloatList>,
}

/// Config-file keys, in serialization order. Each is the long name of one flag.
pub const CONFIG_KEYS: &[&str] = &[
    "n",
    "eps",
    "eps-ladder",
    "grid",
    "t-max",
    "dt-safety",
    "tol-converge",
    "trace-every",
    "init",
    "out",
    "summary",
    "lambda",
    "lambdas",
    "gamma",
    "beta",
    "deltaR",
    "r0",
    "eps-margin",
    "mu",
    "radii",
];

/// Effective configuration with every default resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub n: usize,
    pub eps: f64,
    pub eps_ladder: Vec<f64>,
    pub grid: usize,
    pub t_max: f64,
    pub dt_safety: f64,
    pub tol_converge: f64,
    pub trace_every: usize,
    pub init: InitSpec,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub delta_r: f64,
    pub r0: f64,
    pub eps_margin: f64,
    pub mu: Option<f64>,
    pub radii: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn resolve(command: Command, p: Params) -> Result<Self, CliError> {
        let flow = FlowConfig::default();
        let construct = ConstructionConfig::default();
        let cfg = Self {
            command,
            n: p.n.unwrap_or(if command.is_construction() { 9 } else { 5 }),
            eps: p.eps.unwrap_or(2.0),
            eps_ladder: p.eps_ladder.map(|l| l.0).unwrap_or_else(|| vec![2.0, 1.5, 1.0, 0.5, 0.25]),
            grid: p.grid.unwrap_or(128),
            t_max: p.t_max.unwrap_or(flow.t_max),
            dt_safety: p.dt_safety.unwrap_or(flow.dt_safety),
            tol_converge: p.tol_converge.unwrap_or(flow.tol_converge),
            trace_every: p.trace_every.unwrap_or(DEFAULT_TRACE_EVERY),
            init: p.init.unwrap_or_default(),
            out: p.out,
            summary: p.summary,
            lambda: p.lambda.unwrap_or(1e-4),
            lambdas: p.lambdas.map(|l| l.0).unwrap_or_else(|| vec![1e-3, 3e-4, 1e-4]),
            gamma: p.gamma.unwrap_or(construct.gamma),
            beta: p.beta.unwrap_or(0.3),
            delta_r: p.delta_r.unwrap_or(-1.0),
            r0: p.r0.unwrap_or(2.0),
            eps_margin: p.eps_margin.unwrap_or(construct.eps_margin),
            mu: p.mu,
            radii: p.radii.map(|l| l.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that do not need the numerical core.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::usage(msg));
        if self.n < 5 {
            return bad(format!("n = {} must be >= 5", self.n));
        }
        if self.command.is_construction() && self.n < 9 {
            return bad(format!("n = {} must be >= 9 for {}", self.n, self.command.as_str()));
        }
        if self.n > 64 {
            return bad(format!("n = {} must be <= 64", self.n));
        }
        if !(0.0..=2.0).contains(&self.eps) {
            return bad(format!("eps = {} outside [0, 2]", self.eps));
        }
        if self.eps_ladder.is_empty() || self.eps_ladder.iter().any(|&e| !(e > 0.0 && e <= 2.0)) {
            return bad("eps-ladder entries must lie in (0, 2]".into());
        }
        if self.eps_ladder.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("eps-ladder must be strictly decreasing".into());
        }
        if !(16..=100_000).contains(&self.grid) {
            return bad(format!("grid = {} outside [16, 100000]", self.grid));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("t-max = {} must be positive", self.t_max));
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return bad(format!("dt-safety = {} outside (0, 1]", self.dt_safety));
        }
        if !(self.tol_converge >= 0.0) {
            return bad(format!("tol-converge = {} must be >= 0", self.tol_converge));
        }
        if self.trace_every == 0 {
            return bad("trace-every must be >= 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda = {} outside (0, 1)", self.lambda));
        }
        if self.lambdas.len() < 2 || self.lambdas.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return bad("lambdas needs at least two values in (0, 1)".into());
        }
        if !(self.gamma > 1.0 && self.gamma < 2.0) {
            return bad(format!("gamma = {} outside (1, 2)", self.gamma));
        }
        if !(self.beta > 0.25 && self.beta < 0.5) {
            return bad(format!("beta = {} outside (1/4, 1/2)", self.beta));
        }
        if !(self.delta_r <= 0.0) {
            return bad(format!("deltaR = {} must be <= 0", self.delta_r));
        }
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return bad(format!("r0 = {} must be positive", self.r0));
        }
        if !(self.eps_margin > 0.0) {
            return bad(format!("eps-margin = {} must be positive", self.eps_margin));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) {
                return bad(format!("mu = {mu} must be positive"));
            }
        }
        if let Some(r) = &self.radii {
            if r.len() != 6 {
                return bad(format!("radii needs 6 values r4,r5,r6,r7,r8,r2, got {}", r.len()));
            }
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`CONFIG_KEYS`] order; unset optional keys are omitted.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let all = [
            ("n", Some(self.n.to_string())),
            ("eps", Some(fmt_key_float(self.eps))),
            ("eps-ladder", Some(FloatList(self.eps_ladder.clone()).to_string())),
            ("grid", Some(self.grid.to_string())),
            ("t-max", Some(fmt_key_float(self.t_max))),
            ("dt-safety", Some(fmt_key_float(self.dt_safety))),
            ("tol-converge", Some(fmt_key_float(self.tol_converge))),
            ("trace-every", Some(self.trace_every.to_string())),
            ("init", Some(self.init.to_string())),
            ("out", path(&self.out)),
            ("summary", path(&self.summary)),
            ("lambda", Some(fmt_key_float(self.lambda))),
            ("lambdas", Some(FloatList(self.lambdas.clone()).to_string())),
            ("gamma", Some(fmt_key_float(self.gamma))),
            ("beta", Some(fmt_key_float(self.beta))),
            ("deltaR", Some(fmt_key_float(self.delta_r))),
            ("r0", Some(fmt_key_float(self.r0))),
            ("eps-margin", Some(fmt_key_float(self.eps_margin))),
            ("mu", self.mu.map(fmt_key_float)),
            ("radii", self.radii.clone().map(|r| FloatList(r).to_string())),
        ];
        all.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect()
    }

    /// The effective configuration as a config file, `command` first.
    pub fn to_config_text(&self) -> String {
        let mut s = format!("command={}\n", self.command.as_str());
        for (k, v) in self.entries() {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            dt_safety: self.dt_safety,
            tol_converge: self.tol_converge,
            t_max: self.t_max,
            trace_every: self.trace_every,
            ..FlowConfig::default()
        }
    }

    fn construction_config(&self) -> ConstructionConfig {
        ConstructionConfig {
            gamma: self.gamma,
            eps_margin: self.eps_margin,
            mu: self.mu,
            radii: self.radii.as_ref().map(|r| TransitionRadii {
                r0: self.r0,
                r4: r[0],
                r5: r[1],
                r6: r[2],
                r7: r[3],
                r8: r[4],
                r2: r[5],
            }),
        }
    }
}

/// `(key, value)` pairs in file order.
pub type KeyValues = Vec<(String, String)>;

/// Parses a key=value config file into `(key, value)` pairs. `#` starts a comment.
/// `command` is returned separately.
pub fn parse_config_text(text: &str) -> Result<(Option<Command>, KeyValues), CliError> {
    let mut command = None;
    let mut seen = BTreeMap::new();
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if seen.insert(k.to_string(), ()).is_some() {
            return Err(CliError::usage(format!("config line {}: duplicate key '{k}'", lineno + 1)));
        }
        if k == "command" {
            command = Some(
                Command::from_str(v, false)
                    .map_err(|_| CliError::usage(format!("config line {}: unknown command '{v}'", lineno + 1)))?,
            );
            continue;
        }
        if !CONFIG_KEYS.contains(&k) {
            return Err(CliError::usage(format!("config line {}: unknown key '{k}'", lineno + 1)));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok((command, pairs))
}

/// Parses argv (program name first), merging in `--config` if present.
pub fn parse_args<I, S>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::usage(e.to_string()))?;
    let Some(path) = cli.config else {
        return RunConfig::resolve(cli.command, cli.params);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let (file_command, pairs) = parse_config_text(&text)?;
    if let Some(c) = file_command {
        if c != cli.command {
            return Err(CliError::usage(format!(
                "config file is for '{}' but the command is '{}'",
                c.as_str(),
                cli.command.as_str()
            )));
        }
    }
    // File values go first so that later command-line flags override them.
    let mut merged = vec![argv[0].clone()];
    merged.extend(pairs.into_iter().map(|(k, v)| format!("--{k}={v}")));
    merged.extend(argv[1..].iter().cloned());
    let merged_cli = Cli::try_parse_from(&merged).map_err(|e| CliError::usage(e.to_string()))?;
    RunConfig::resolve(cli.command, merged_cli.params)
}

/// Parses a config file produced by [`RunConfig::to_config_text`].
pub fn parse_config_file_text(text: &str) -> Result<RunConfig, CliError> {
    let (command, pairs) = parse_config_text(text)?;
    let command = command.ok_or_else(|| CliError::usage("config text has no command"))?;
    let mut argv = vec!["sigma2".to_string(), command.as_str().to_string()];
    argv.extend(pairs.into_iter().map(|(k, v)| format!("--{k}={v}")));
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::usage(e.to_string()))?;
    RunConfig::resolve(command, cli.params)
}

/// Fixed 17-significant-digit rendering used in every CSV.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the trace CSV: header, then one row per record.
pub fn emit_trace<W: Write>(mut w: W, rows: &[MonitorRecord]) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        let vals =
            [r.t, r.f2, r.v_eps, r.r_eps, r.s_eps, r.min_sigma2, r.sup_grad_bound, r.df2dt_measured, r.df2dt_formula];
        let line: Vec<String> = vals.iter().map(|&v| fmt_float(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

/// Generic table: header, then rows of already formatted cells.
fn emit_table<W: Write>(mut w: W, header: &str, rows: &[Vec<String>]) -> io::Result<()> {
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()
}

/// Renders a summary: version, command, status, config echo, then the command's scalars.
pub fn emit_summary(cfg: &RunConfig, status: &str, message: Option<&str>, result: Map<String, Value>) -> String {
    let mut top = Map::new();
    top.insert("version".into(), json!(format!("sigma2 {VERSION}")));
    top.insert("command".into(), json!(cfg.command.as_str()));
    top.insert("status".into(), json!(status));
    top.insert("message".into(), json!(message));
    let config: Map<String, Value> = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    top.insert("config".into(), Value::Object(config));
    for (k, v) in result {
        top.insert(k, v);
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(top)).expect("summary serializes");
    s.push('\n');
    s
}

/// Numeric failure status for a core error, `None` for usage-type errors.
fn numeric_status(err: &Error) -> Option<&'static str> {
    match err {
        Error::Domain(_) | Error::Shape(_) | Error::GridTooCoarse { .. } => None,
        Error::ConeViolation { .. } => Some("cone_exit"),
        Error::Stiffness { .. } => Some("stiffness"),
        Error::Divergence(_) => Some("divergence"),
        Error::Numeric(_) => Some("numeric_error"),
        Error::Construction { .. } => Some("construction_failed"),
    }
}

/// What a command produced.
struct Report {
    status: String,
    message: Option<String>,
    code: ExitCode,
    result: Map<String, Value>,
    table: Option<Table>,
}

enum Table {
    Trace(Vec<MonitorRecord>),
    Rows { header: &'static str, rows: Vec<Vec<String>> },
}

impl Report {
    fn ok(result: Map<String, Value>, table: Option<Table>) -> Self {
        Self { status: "ok".into(), message: None, code: ExitCode::Ok, result, table }
    }
}

fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("summary fragments are objects"),
    }
}

fn sphere_setup(cfg: &RunConfig) -> Result<(BackgroundGeometry, ConformalField), Error> {
    let bg = BackgroundGeometry::round_sphere(cfg.n)?;
    let grid = Arc::new(RadialGrid::sphere(cfg.n, cfg.grid)?);
    let init = cfg.init.clone();
    let field = ConformalField::from_fn(grid, move |t| init.eval(t))?;
    Ok((bg, field))
}

fn oscillation(field: &ConformalField) -> f64 {
    let v = field.values();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

fn run_flow(cfg: &RunConfig) -> Result<Report, Error> {
    let (bg, init) = sphere_setup(cfg)?;
    let out = flow::run(&bg, init, cfg.eps, &cfg.flow_config())?;
    let st = &out.state;
    let m = st.monitors();
    let result = obj(json!({
        "experimental": out.experimental,
        "steps": out.stats.steps,
        "t_final": st.t(),
        "F2": m.f2,
        "V_eps": m.v_eps,
        "r_eps": m.r_eps,
        "F2_tilde_eps": st.f2_tilde_eps(),
        "min_sigma2": out.stats.min_sigma2,
        "relative_volume_drift": out.stats.relative_volume_drift(),
        "max_f2_increase": out.stats.max_f2_increase,
        "equation_residual": out.equation_residual,
        "oscillation": oscillation(st.field()),
        "trace_rows": out.trace.len(),
    }));
    let code = match out.status {
        flow::RunStatus::ConeExit | flow::RunStatus::Stiffness | flow::RunStatus::BlowupSuspected => ExitCode::Numeric,
        _ => ExitCode::Ok,
    };
    Ok(Report {
        status: out.status.as_str().into(),
        message: out.message.clone(),
        code,
        result,
        table: Some(Table::Trace(out.trace)),
    })
}

fn run_eigen(cfg: &RunConfig) -> Result<Report, Error> {
    let (bg, init) = sphere_setup(cfg)?;
    let r = flow::eigen_solve(&bg, init, &cfg.flow_config())?;
    let result = obj(json!({
        "lambda1": r.lambda1,
        "max_relative_deviation": r.max_relative_deviation,
        "run_status": r.outcome.status.as_str(),
        "steps": r.outcome.stats.steps,
        "t_final": r.outcome.state.t(),
        "equation_residual": r.outcome.equation_residual,
        "oscillation": oscillation(&r.field),
    }));
    Ok(Report::ok(result, Some(Table::Trace(r.outcome.trace))))
}

fn run_continuation(cfg: &RunConfig) -> Result<Report, Error> {
    let (bg, init) = sphere_setup(cfg)?;
    let c = flow::continuation(&bg, init, &cfg.eps_ladder, &cfg.flow_config())?;
    let rungs: Vec<Value> = c
        .rungs
        .iter()
        .map(|r| {
            json!({
                "eps": r.eps,
                "Y_eps": r.y_eps,
                "F2_tilde": r.yamabe_quotient,
                "status": r.status.as_str(),
                "steps": r.steps,
                "t_final": r.t_final,
                "equation_residual": r.equation_residual,
            })
        })
        .collect();
    let rows = c
        .rungs
        .iter()
        .map(|r| {
            vec![
                fmt_float(r.eps),
                fmt_float(r.y_eps),
                fmt_float(r.yamabe_quotient),
                r.status.as_str().to_string(),
                r.steps.to_string(),
                fmt_float(r.t_final),
                fmt_float(r.equation_residual),
            ]
        })
        .collect();
    let y2 = sphere_constants(cfg.n)?.y2_sphere;
    let result = obj(json!({ "rungs": rungs, "Y2_sphere": y2, "completed": c.rungs.len() == cfg.eps_ladder.len() }));
    let success = c.status.is_success();
    Ok(Report {
        status: if success { "ok".into() } else { c.status.as_str().into() },
        message: c.message,
        code: if success { ExitCode::Ok } else { ExitCode::Numeric },
        result,
        table: Some(Table::Rows { header: "eps,Y_eps,F2_tilde,status,steps,t_final,equation_residual", rows }),
    })
}

/// Divergence identity, Garding positivity, Poincaré and Sobolev bounds on the init field.
fn run_verify(cfg: &RunConfig) -> Result<Report, Error> {
    let (bg, field) = sphere_setup(cfg)?;
    let w = schouten_conformal(&bg, &field)?;
    if let Some(i) = w.first_outside_gamma2() {
        return Err(Error::ConeViolation {
            location: format!("node {i}"),
            detail: "init field is not admissible".into(),
        });
    }
    let divergence = sigma2_core::geometry::divergence_identity_residual(&bg, &field)?;
    // T₁(W) paired with the round-sphere Schouten tensor I/2.
    let half = SymmetricMatrix::scalar(cfg.n, 0.5);
    let mut garding_min = f64::INFINITY;
    for i in 0..w.len() {
        let (pairing, bound) = garding_pairing(&w.matrix(i), &half)?;
        garding_min = garding_min.min(pairing - bound);
    }
    let f2 = functional_f2(&bg, &field)?;
    let v2 = functional_v_eps(&bg, &field, 2.0)?;
    let eig = flow::eigen_solve(&bg, field.clone(), &cfg.flow_config())?;
    let quotient = sobolev_quotient(&bg, &field)?;
    let y2 = sphere_constants(cfg.n)?.y2_sphere;
    let checks = [
        ("divergence_identity", divergence <= 1e-3),
        ("garding", garding_min >= -1e-12),
        ("poincare", f2 >= eig.lambda1 * v2 * (1.0 - 1e-9)),
        ("sobolev", quotient >= y2 * (1.0 - 1e-9)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let result = obj(json!({
        "divergence_residual": divergence,
        "garding_min_excess": garding_min,
        "F2": f2,
        "V_2": v2,
        "lambda1": eig.lambda1,
        "poincare_ratio": f2 / (eig.lambda1 * v2),
        "sobolev_quotient": quotient,
        "Y2_sphere": y2,
        "checks": checks.iter().map(|c| (c.0.to_string(), json!(c.1))).collect::<Map<_, _>>(),
    }));
    if failed.is_empty() {
        Ok(Report::ok(result, None))
    } else {
        Ok(Report {
            status: "check_failed".into(),
            message: Some(format!("failed: {}", failed.join(", "))),
            code: ExitCode::Numeric,
            result,
            table: None,
        })
    }
}

fn construction_scalars(m: &AssembledMetric) -> Value {
    json!({
        "lambda": m.params.lambda,
        "gamma2_ok": m.gamma2_ok,
        "first_violation": m.first_violation,
        "F2_tilde": m.f2_tilde,
        "Y2_sphere": m.y2_sphere,
        "margin": m.margin,
        "lambda2_slope": m.lambda2_slope,
        "predicted_lambda2_slope": m.predicted_lambda2_slope,
        "beta_in_proof_range": m.beta_in_proof_range,
        "delta": m.gluing.delta,
        "delta1": m.gluing.delta1,
        "matching_ratio": m.gluing.matching_ratio,
        "bernoulli_max_residual": m.gluing.max_residual,
        "energy_constant": m.gluing.energy_constant,
        "volume_constant": m.gluing.volume_constant,
        "b1": m.b1,
        "F2_bubble": m.f2_bubble,
        "F2_gluing": m.f2_gluing,
        "F2_transition": m.f2_transition,
        "F2_outer": m.f2_outer,
        "volume_patch": m.volume_patch,
        "volume_outer": m.volume_outer,
        "bridge_theta": m.transition.bridge_theta,
        "window_shrinks": m.transition.window_shrinks,
        "min_cone_ratio": m.transition.min_cone_ratio.min(m.gluing.min_cone_ratio),
        "radii": m.transition.radii,
        "mu": m.config.mu,
    })
}

fn construct_one(cfg: &RunConfig, lambda: f64) -> Result<AssembledMetric, Error> {
    let bp = BubbleParams::new(cfg.n, lambda, cfg.r0, cfg.beta, cfg.delta_r)?;
    assemble_and_compare(&bp, &cfg.construction_config())
}

fn run_construct(cfg: &RunConfig) -> Result<Report, Error> {
    let m = construct_one(cfg, cfg.lambda)?;
    let mut result = obj(construction_scalars(&m));
    // A single construction has no fit; the per-run slope stands in.
    result.insert("lambda2_slope".into(), json!(m.lambda2_slope));
    let rows = m
        .nodes
        .iter()
        .zip(&m.u)
        .zip(&m.cone)
        .map(|((&r, &u), c)| {
            vec![fmt_float(r), fmt_float(u), fmt_float(c.sigmas[0]), fmt_float(c.sigmas[1]), c.in_cone.to_string()]
        })
        .collect();
    let table = Some(Table::Rows { header: "r,u,sigma1,sigma2,in_gamma2", rows });
    if m.gamma2_ok {
        Ok(Report::ok(result, table))
    } else {
        Ok(Report {
            status: "cone_violation".into(),
            message: m.first_violation.map(|r| format!("first violation at r = {r}")),
            code: ExitCode::Numeric,
            result,
            table,
        })
    }
}

fn run_sweep(cfg: &RunConfig) -> Result<Report, Error> {
    let runs: Vec<AssembledMetric> =
        cfg.lambdas.par_iter().map(|&l| construct_one(cfg, l)).collect::<Result<Vec<_>, _>>()?;
    let fit = fit_lambda2_slope(&runs)?;
    let c = sphere_constants(cfg.n)?.c;
    let rows = runs
        .iter()
        .map(|m| {
            vec![
                fmt_float(m.params.lambda),
                m.gamma2_ok.to_string(),
                fmt_float(m.f2_tilde),
                fmt_float(m.y2_sphere),
                fmt_float(m.margin),
                fmt_float(m.lambda2_slope),
            ]
        })
        .collect();
    let all_ok = runs.iter().all(|m| m.gamma2_ok);
    let result = obj(json!({
        "gamma2_ok": all_ok,
        "F2_tilde": runs.iter().map(|m| m.f2_tilde).collect::<Vec<_>>(),
        "Y2_sphere": runs[0].y2_sphere,
        "margin": runs.iter().map(|m| m.margin).collect::<Vec<_>>(),
        "lambda2_slope": fit.slope,
        "predicted_lambda2_slope": fit.predicted,
        "lambda2_rel_error": fit.rel_error,
        "C": c,
        "runs": runs.iter().map(construction_scalars).collect::<Vec<_>>(),
    }));
    let table = Some(Table::Rows { header: "lambda,gamma2_ok,F2_tilde,Y2_sphere,margin,lambda2_slope", rows });
    if all_ok {
        Ok(Report::ok(result, table))
    } else {
        Ok(Report {
            status: "cone_violation".into(),
            message: Some("a construction left the cone".into()),
            code: ExitCode::Numeric,
            result,
            table,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Applies `SIGMA2_THREADS` to the global rayon pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SIGMA2_THREADS") else {
        return Ok(());
    };
    let k: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| CliError::usage(format!("SIGMA2_THREADS = '{v}' must be a positive integer")))?;
    // A pool may already exist when called twice in one process; the first setting stands.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    Ok(())
}

/// Runs a parsed configuration, writing outputs. Returns the exit code.
pub fn execute(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    // Open outputs up front so an unwritable path fails before any work.
    let mut out = cfg.out.as_deref().map(create).transpose()?;
    let mut summary = cfg.summary.as_deref().map(create).transpose()?;
    let outcome = match cfg.command {
        Command::Flow => run_flow(cfg),
        Command::Eigen => run_eigen(cfg),
        Command::Continuation => run_continuation(cfg),
        Command::Verify => run_verify(cfg),
        Command::Construct => run_construct(cfg),
        Command::Sweep => run_sweep(cfg),
    };
    let report = match outcome {
        Ok(r) => r,
        Err(e) => match numeric_status(&e) {
            None => return Err(CliError::usage(e.to_string())),
            Some(status) => Report {
                status: status.into(),
                message: Some(e.to_string()),
                code: ExitCode::Numeric,
                result: Map::new(),
                table: None,
            },
        },
    };
    if let (Some(w), Some(path)) = (out.as_mut(), cfg.out.as_deref()) {
        let res = match &report.table {
            Some(Table::Trace(rows)) => emit_trace(w, rows),
            Some(Table::Rows { header, rows }) => emit_table(w, header, rows),
            None => emit_table(w, "", &[]),
        };
        res.map_err(|e| CliError::io(path, e))?;
    }
    let text = emit_summary(cfg, &report.status, report.message.as_deref(), report.result);
    match (summary.as_mut(), cfg.summary.as_deref()) {
        (Some(w), Some(path)) => {
            w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))?
        }
        _ => print!("{text}"),
    }
    if let Some(msg) = &report.message {
        if report.code != ExitCode::Ok {
            eprintln!("sigma2: {}: {msg}", report.status);
        }
    }
    Ok(report.code)
}

/// Full entry point: parse, configure threads, execute. Returns the process exit code.
pub fn parse_and_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    // Help and version requests print and succeed.
    if let Err(e) = Cli::try_parse_from(&argv) {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            print!("{e}");
            return ExitCode::Ok as i32;
        }
    }
    let result = configure_threads().and_then(|_| parse_args(argv)).and_then(|cfg| execute(&cfg));
    match result {
        Ok(code) => code as i32,
        Err(e) => {
            eprintln!("sigma2: {e}");
            e.code as i32
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig, CliError> {
        parse_args(std::iter::once("sigma2").chain(args.iter().copied()))
    }

    #[test]
    fn init_specs_parse_and_print() {
        for s in ["cosine:amp=0.1,k=2", "bump:amp=0.2,width=0.3", "constant:value=-1"] {
            let spec: InitSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<InitSpec>().unwrap(), spec);
        }
        assert_eq!("cosine".parse::<InitSpec>().unwrap(), InitSpec::Cosine { amp: 0.1, k: 1 });
        assert!("gauss".parse::<InitSpec>().is_err());
        assert!("cosine:amp=0.1,phase=2".parse::<InitSpec>().is_err());
        assert!("cosine:k=1.5".parse::<InitSpec>().is_err());
        assert!("bump:width=0".parse::<InitSpec>().is_err());
    }

    #[test]
    fn dimension_below_five_is_usage_error() {
        let e = parse(&["flow", "--n", "3"]).unwrap_err();
        assert_eq!(e.code, ExitCode::Usage);
        let e = parse(&["construct", "--n", "8"]).unwrap_err();
        assert_eq!(e.code, ExitCode::Usage);
    }

    #[test]
    fn construct_defaults_to_n9() {
        let cfg = parse(&["construct", "--deltaR", "-1"]).unwrap();
        assert_eq!(cfg.n, 9);
        assert_eq!(cfg.delta_r, -1.0);
        assert_eq!(parse(&["flow"]).unwrap().n, 5);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let e = parse_config_text("n=5\nfoo=1\n").unwrap_err();
        assert_eq!(e.code, ExitCode::Usage);
        assert!(e.message.contains("foo"));
        assert!(parse_config_text("n=5\nn=6\n").is_err());
        assert!(parse_config_text("config=x\n").is_err());
    }

    #[test]
    fn config_keys_match_flags() {
        let cfg = parse(&["construct", "--mu", "0.01", "--radii", "3.6,0.92,0.84,0.8,0.6,0.56", "--r0", "4"]).unwrap();
        let keys: Vec<&str> = cfg.entries().iter().map(|e| e.0).collect();
        assert_eq!(keys.len(), CONFIG_KEYS.len() - 2);
        for k in CONFIG_KEYS {
            assert!(Cli::try_parse_from(["sigma2", "flow", &format!("--{k}=1")])
                .map_or_else(|e| e.kind() != clap::error::ErrorKind::UnknownArgument, |_| true));
        }
    }

    #[test]
    fn round_trip_is_idempotent() {
        let cfg = parse(&[
            "continuation",
            "--eps-ladder",
            "2,1,0.5",
            "--init",
            "bump:amp=0.05,width=0.7",
            "--summary",
            "s.json",
            "--t-max",
            "12.5",
        ])
        .unwrap();
        let text = cfg.to_config_text();
        let back = parse_config_file_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_config_text(), text);
    }

    #[test]
    fn trace_format() {
        let mut buf = Vec::new();
        emit_trace(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{TRACE_HEADER}\n"));
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-2.5), "-2.5000000000000000e0");
    }
}
