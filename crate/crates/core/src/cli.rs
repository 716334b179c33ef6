//! Command-line front end: argument parsing, run directories, manifests and
//! replay of recorded configurations.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::channel::{erg_check, period_and_cycles};
use crate::error::{Error, Result};
use crate::instrument::{Builtin, Instrument};
use crate::limits::{
    self, berry_esseen_scan, clt_check, cumulant_curve, derivatives_at_zero, gamma_estimates, ineqlog_scan,
    ldp_check, legendre_transform, log_moment, normalized_statistics, scalar_f_checks, sigma2_estimates, BeMode,
    LdpMethod, LdpMode, DERIVATIVE_STEP,
};
use crate::operator::{
    build_mesh, leading_spectrum, KernelSkeleton, MeshKind, ScgfEvaluator, Tilt, TiltDomain, TiltFamily,
};
use crate::projective::{ComplexMatrix, ProjectivePoint, C64};
use crate::purification::{g_mc, g_series_exact, pur_diagnostic, pur_necessary_check, Verdict};
use crate::sampler::{self, Initial, Observable, RunConfig};

pub const DEFAULT_OUT: &str = "qtraj-out";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
const CONFIG_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "qtraj",
    version,
    about = "Quantum trajectories: channel analysis, simulation and limit-theorem checks"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GlobalArgs {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory [default: qtraj-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tolerance for stochasticity and eigenspace decisions.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct InstrumentArgs {
    /// Instrument JSON file.
    #[arg(long, conflicts_with = "builtin")]
    pub instrument: Option<PathBuf>,
    /// Built-in instrument, e.g. `DR:0.3,1.0` or `AD`.
    #[arg(long)]
    pub builtin: Option<String>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct MeshArgs {
    #[arg(long, default_value_t = 1500)]
    pub mesh_size: usize,
    #[arg(long, default_value = "fibonacci")]
    pub mesh: String,
    #[arg(long, default_value_t = 0)]
    pub mesh_seed: u64,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Check stochasticity of an instrument.
    Validate(ValidateArgs),
    /// Ergodicity, period and cyclic decomposition of the channel.
    AnalyzeChannel(AnalyzeArgs),
    /// g(n) by enumeration and Monte Carlo, with a purification verdict.
    Purification(PurificationArgs),
    /// Simulate trajectories and write per-trajectory terminal values.
    Simulate(SimulateArgs),
    /// Leading eigenvalues of the discretized (optionally tilted) kernel.
    Spectrum(SpectrumArgs),
    /// Cumulant generating function curve and its Legendre transform.
    Scgf(ScgfArgs),
    /// Kolmogorov–Smirnov test of the normalized sums.
    Clt(CltArgs),
    /// Scaled sup-distances to the normal law across n.
    BerryEsseen(BerryEsseenArgs),
    /// Empirical large-deviation rates against the Legendre rate.
    Ldp(LdpArgs),
    /// Three estimators of the Lyapunov exponent and their consistency.
    Lyapunov(LyapunovArgs),
    /// Scalar-function bounds and the log-moment inequality scan.
    ScalarChecks(ScalarArgs),
    /// Re-run a recorded configuration.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct PurificationArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[arg(long, default_value_t = 10)]
    pub nmax: usize,
    #[arg(long, default_value_t = 10_000)]
    pub mc_samples: usize,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1000)]
    pub traj: usize,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    #[arg(long)]
    pub track_product: bool,
    /// `const:c`, `diag:a,b,...` or `quad:FILE` with a JSON matrix.
    #[arg(long, default_value = "const:0")]
    pub observable: String,
    /// `haar` or `basis:j`.
    #[arg(long, default_value = "haar")]
    pub initial: String,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub gap_tol: f64,
    /// `none`, `obs:θ` or `lyap:s`.
    #[arg(long, default_value = "none")]
    pub tilt: String,
    #[arg(long, default_value = "diag:1,-1")]
    pub observable: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiltKind {
    Obs,
    Lyap,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ScgfArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
    #[arg(long, value_enum, default_value = "obs")]
    pub tilt: TiltKind,
    /// `a:b:step`, inclusive.
    #[arg(long, default_value = "-2:2:0.1")]
    pub grid: String,
    #[arg(long, default_value = "diag:1,-1")]
    pub observable: String,
    /// Points of the rate-function grid across the restricted domain.
    #[arg(long, default_value_t = 101)]
    pub rate_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Observable,
    Lyapunov,
    Both,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct CltArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub traj: usize,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    #[arg(long, default_value = "diag:1,-1")]
    pub observable: String,
    #[arg(long, value_enum, default_value = "both")]
    pub statistic: Statistic,
    #[arg(long, default_value = "haar")]
    pub initial: String,
    /// Also compare the batch variance with the curvature of Λ on a mesh of this size.
    #[arg(long)]
    pub spectral_mesh: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeKind {
    Obs,
    Lyap,
    Coin,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct BerryEsseenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[arg(long, value_enum, default_value = "obs")]
    pub mode: BeKind,
    #[arg(long, default_value = "100,400,1600,6400")]
    pub n_list: String,
    #[arg(long, default_value_t = 10_000)]
    pub traj: usize,
    #[arg(long, default_value = "diag:1,-1")]
    pub observable: String,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct LdpArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
    #[arg(long, value_enum, default_value = "obs")]
    pub mode: TiltKind,
    /// Threshold; defaults to `Λ'(0) + a_sigma √Λ''(0)`.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub a_sigma: f64,
    #[arg(long, default_value = "50,100,200")]
    pub n_list: String,
    #[arg(long, default_value_t = 100_000)]
    pub traj: usize,
    /// Tilt bracket `lo:hi` for the Legendre search.
    #[arg(long, allow_hyphen_values = true)]
    pub bracket: Option<String>,
    /// Comma-separated subset of `direct,is`.
    #[arg(long, default_value = "direct,is")]
    pub methods: String,
    #[arg(long, default_value = "diag:1,-1")]
    pub observable: String,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InstrumentArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub traj: usize,
    #[arg(long, default_value_t = 100)]
    pub burn_in: usize,
    #[arg(long, default_value = "haar")]
    pub initial: String,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ScalarArgs {
    #[arg(long, default_value_t = 12)]
    pub nmax: u32,
    /// `re` or `re,im`.
    #[arg(long, default_value = "1.5")]
    pub z: String,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value = "0.025:10:0.025")]
    pub t_grid: String,
    /// Hölder exponents.
    #[arg(long, default_value = "0.5,1")]
    pub r: String,
    /// Exponents `s` for the log-moment inequality scan; empty to skip.
    #[arg(long, default_value = "-1,1", allow_hyphen_values = true)]
    pub ineqlog_s: String,
    #[arg(long, default_value_t = 10_000)]
    pub ineqlog_trials: usize,
    /// Size of the Haar sample standing in for ν.
    #[arg(long, default_value_t = 1000)]
    pub ineqlog_sample: usize,
    #[arg(long, default_value_t = 2)]
    pub ineqlog_dim: usize,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub config: PathBuf,
}

/// Everything needed to reproduce a run: parsed arguments plus the resolved
/// contents of every input file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub global: GlobalArgs,
    pub command: Command,
    pub instrument: Option<Value>,
    pub observable: Option<ObservableSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableSpec {
    Constant(f64),
    Quadratic(ComplexMatrix),
}

impl ObservableSpec {
    pub fn parse(text: &str, inputs: &mut Vec<InputRecord>) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            location: format!("observable `{text}`"),
            message: m,
        };
        let (kind, arg) = text
            .split_once(':')
            .ok_or_else(|| bad("expected const:c, diag:a,b,... or quad:FILE".into()))?;
        match kind {
            "const" => Ok(Self::Constant(arg.trim().parse().map_err(|e| bad(format!("{e}")))?)),
            "diag" => Ok(Self::Quadratic(ComplexMatrix::diag_real(&parse_list(arg)?))),
            "quad" => {
                let bytes = fs::read(arg)?;
                inputs.push(InputRecord::new(arg, &bytes));
                let m: ComplexMatrix = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
                Ok(Self::Quadratic(m))
            }
            _ => Err(bad(format!("unknown observable kind `{kind}`"))),
        }
    }

    pub fn observable(&self) -> Observable {
        match self {
            Self::Constant(c) => Observable::constant(*c),
            Self::Quadratic(a) => Observable::quadratic(a.clone()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

impl InputRecord {
    fn new(path: &str, bytes: &[u8]) -> Self {
        Self {
            path: path.to_string(),
            sha256: sha256_hex(bytes),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Float formatting shared by every CSV: 17 significant digits.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                location: format!("list `{text}`"),
                message: e.to_string(),
            })
        })
        .collect()
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim().parse::<usize>().map_err(|e| Error::Parse {
                location: format!("list `{text}`"),
                message: e.to_string(),
            })
        })
        .collect()
}

/// `a:b:step`, inclusive of `b` up to rounding.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Parse {
        location: format!("grid `{text}`"),
        message: m.to_string(),
    };
    let parts = parse_list(&text.replace(':', ","))?;
    let [a, b, step] = parts[..] else {
        return Err(bad("expected a:b:step"));
    };
    if !(step > 0.0) || !(b >= a) {
        return Err(bad("need a <= b and step > 0"));
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| a + i as f64 * step).collect())
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let v = parse_list(&text.replace(':', ","))?;
    match v[..] {
        [lo, hi] if lo < hi => Ok((lo, hi)),
        _ => Err(Error::Parse {
            location: format!("range `{text}`"),
            message: "expected lo:hi with lo < hi".into(),
        }),
    }
}

fn parse_initial(text: &str, k: usize) -> Result<Initial> {
    if text == "haar" {
        return Ok(Initial::Haar);
    }
    if let Some(j) = text.strip_prefix("basis:") {
        let j: usize = j.trim().parse().map_err(|e: std::num::ParseIntError| Error::Parse {
            location: format!("initial `{text}`"),
            message: e.to_string(),
        })?;
        if j >= k {
            return Err(Error::IndexOutOfRange { index: j, len: k });
        }
        return Ok(Initial::Fixed(ProjectivePoint::basis(k, j)));
    }
    Err(Error::Parse {
        location: format!("initial `{text}`"),
        message: "expected haar or basis:j".into(),
    })
}

fn parse_z(text: &str) -> Result<C64> {
    match parse_list(text)?[..] {
        [re] => Ok(C64::new(re, 0.0)),
        [re, im] => Ok(C64::new(re, im)),
        _ => Err(Error::Parse {
            location: format!("z `{text}`"),
            message: "expected re or re,im".into(),
        }),
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn complex_pair(z: &C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Output directory bookkeeping for one run.
struct RunDir {
    out: PathBuf,
    outputs: Vec<InputRecord>,
}

impl RunDir {
    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.out.join(name), contents)?;
        self.outputs.push(InputRecord::new(name, contents));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable output");
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn verdict(&mut self, pass: bool, details: Value) -> Result<bool> {
        self.write_json("verdict.json", &json!({ "pass": pass, "details": details }))?;
        Ok(pass)
    }
}

fn instrument_args(cmd: &Command) -> Option<&InstrumentArgs> {
    match cmd {
        Command::Validate(a) => Some(&a.input),
        Command::AnalyzeChannel(a) => Some(&a.input),
        Command::Purification(a) => Some(&a.input),
        Command::Simulate(a) => Some(&a.input),
        Command::Spectrum(a) => Some(&a.input),
        Command::Scgf(a) => Some(&a.input),
        Command::Clt(a) => Some(&a.input),
        Command::BerryEsseen(a) if a.mode != BeKind::Coin => Some(&a.input),
        Command::Ldp(a) => Some(&a.input),
        Command::Lyapunov(a) => Some(&a.input),
        _ => None,
    }
}

fn observable_arg(cmd: &Command) -> Option<&str> {
    match cmd {
        Command::Simulate(a) => Some(&a.observable),
        Command::Spectrum(a) => Some(&a.observable),
        Command::Scgf(a) if a.tilt == TiltKind::Obs => Some(&a.observable),
        Command::Clt(a) => Some(&a.observable),
        Command::BerryEsseen(a) if a.mode == BeKind::Obs => Some(&a.observable),
        Command::Ldp(a) if a.mode == TiltKind::Obs => Some(&a.observable),
        _ => None,
    }
}

/// Reads every input file named on the command line into the config.
pub fn resolve(global: GlobalArgs, command: Command) -> Result<(ExperimentConfig, Vec<InputRecord>)> {
    let mut inputs = Vec::new();
    let instrument = match instrument_args(&command) {
        None => None,
        Some(InstrumentArgs {
            instrument: Some(path),
            ..
        }) => {
            let bytes = fs::read(path)?;
            inputs.push(InputRecord::new(&path.to_string_lossy(), &bytes));
            let text = String::from_utf8_lossy(&bytes);
            serde_json::from_str::<Value>(&text).map_err(|e| Error::Parse {
                location: path.display().to_string(),
                message: e.to_string(),
            })?;
            Some(serde_json::from_str(&text).expect("checked above"))
        }
        Some(InstrumentArgs {
            builtin: Some(spec), ..
        }) => {
            let ins = Builtin::parse(spec)?.build()?;
            Some(serde_json::to_value(&ins).expect("instrument serializes"))
        }
        Some(_) => {
            return Err(Error::Precondition(
                "one of --instrument FILE or --builtin NAME is required".into(),
            ))
        }
    };
    let observable = match observable_arg(&command) {
        Some(text) => Some(ObservableSpec::parse(text, &mut inputs)?),
        None => None,
    };
    Ok((
        ExperimentConfig {
            version: CONFIG_VERSION,
            global,
            command,
            instrument,
            observable,
        },
        inputs,
    ))
}

fn load_instrument(cfg: &ExperimentConfig) -> Result<Instrument> {
    let value = cfg
        .instrument
        .as_ref()
        .ok_or_else(|| Error::Precondition("configuration has no instrument".into()))?;
    let loaded = Instrument::from_json(&value.to_string(), cfg.global.tol)?;
    if let Some(w) = &loaded.warning {
        eprintln!("warning: {w}");
    }
    Ok(loaded.instrument)
}

fn load_observable(cfg: &ExperimentConfig) -> Observable {
    cfg.observable
        .as_ref()
        .map(ObservableSpec::observable)
        .unwrap_or_else(|| Observable::constant(0.0))
}

fn skeleton(ins: &Instrument, m: &MeshArgs) -> Result<KernelSkeleton> {
    let kind: MeshKind = m.mesh.parse()?;
    let mesh = Arc::new(build_mesh(ins.dim(), m.mesh_size, kind, m.mesh_seed)?);
    KernelSkeleton::new(ins, mesh)
}

/// Runs `cfg` into `out`; `Ok(false)` is a verdict failure.
pub fn execute(cfg: &ExperimentConfig, out: &Path, inputs: Vec<InputRecord>) -> Result<bool> {
    if cfg.version != CONFIG_VERSION {
        return Err(Error::Parse {
            location: CONFIG_FILE.into(),
            message: format!("unsupported config version {}", cfg.version),
        });
    }
    fs::create_dir_all(out)?;
    let mut dir = RunDir {
        out: out.to_path_buf(),
        outputs: Vec::new(),
    };
    let mut recorded = cfg.clone();
    recorded.global.out = Some(out.to_path_buf());
    dir.write_json(CONFIG_FILE, &recorded)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.global.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let pass = pool.install(|| run_command(cfg, &mut dir))?;
    let manifest = json!({
        "version": CONFIG_VERSION,
        "command": serde_json::to_value(&cfg.command).expect("serializable")["name"],
        "inputs": inputs,
        "outputs": dir.outputs,
    });
    let mut s = serde_json::to_string_pretty(&manifest).expect("serializable");
    s.push('\n');
    fs::write(out.join(MANIFEST_FILE), s)?;
    Ok(pass)
}

fn run_command(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let seed = cfg.global.seed;
    let tol = cfg.global.tol;
    match &cfg.command {
        Command::Validate(_) => {
            let ins = load_instrument(cfg)?;
            let rep = ins.validate(tol);
            dir.write_json(
                "validate.json",
                &json!({
                    "label": ins.label(),
                    "dim": ins.dim(),
                    "atoms": ins.len(),
                    "report": rep,
                }),
            )?;
            Ok(rep.passed)
        }
        Command::AnalyzeChannel(_) => {
            let ins = load_instrument(cfg)?;
            let erg = erg_check(&ins, tol)?;
            let cycles = if erg.holds {
                Some(period_and_cycles(&ins, tol)?)
            } else {
                None
            };
            let cyc_json: Vec<Value> = cycles
                .as_ref()
                .map(|cd| {
                    (0..cd.m)
                        .map(|r| {
                            json!({
                                "basis": cd.e_bases[r],
                                "M": cd.m_r[r],
                                "rho": cd.rho[r],
                            })
                        })
                        .collect()
                })
                .unwrap_or_default();
            dir.write_json(
                "channel.json",
                &json!({
                    "erg": erg,
                    "period": cycles.as_ref().map(|c| c.m),
                    "peripheral": cycles.as_ref().map(|c| c.peripheral.iter().map(complex_pair).collect::<Vec<_>>()),
                    "cycles": cyc_json,
                    "log_moment": log_moment(&ins),
                    "second_moment": ins.second_moment(),
                }),
            )?;
            Ok(true)
        }
        Command::Purification(a) => {
            let ins = load_instrument(cfg)?;
            let mut exact_n = a.nmax;
            while exact_n > 0 && (ins.len() as f64).powi(exact_n as i32) > crate::purification::G_EXACT_BUDGET {
                exact_n -= 1;
            }
            let exact = g_series_exact(&ins, exact_n)?;
            let mut rows = Vec::new();
            let mut mc = Vec::new();
            for n in 1..=a.nmax {
                let (g, se) = g_mc(&ins, n, a.mc_samples, seed)?;
                mc.push(g);
                rows.push(vec![
                    n.to_string(),
                    exact.get(n - 1).map(|&v| fmt_f(v)).unwrap_or_default(),
                    fmt_f(g),
                    fmt_f(se),
                ]);
            }
            dir.write("purification.csv", csv("n,g_exact,g_mc,stderr", rows).as_bytes())?;
            let verdict = pur_necessary_check(&ins);
            let series = if exact.len() == a.nmax { &exact } else { &mc };
            let fit = pur_diagnostic(series).ok();
            let pass = verdict.verdict != Verdict::Fails;
            dir.verdict(pass, json!({ "verdict": verdict, "fit": fit }))
        }
        Command::Simulate(a) => {
            let ins = load_instrument(cfg)?;
            let mut rc = RunConfig::new(a.steps, a.traj, seed);
            rc.burn_in = a.burn_in;
            rc.track_product = a.track_product;
            rc.observable = load_observable(cfg);
            rc.initial = parse_initial(&a.initial, ins.dim())?;
            let stats = sampler::run(&ins, &rc)?;
            let header = if a.track_product {
                "traj,sum_h,log_norm,log_op_norm"
            } else {
                "traj,sum_h,log_norm"
            };
            let rows = stats.trajectories.iter().enumerate().map(|(i, r)| {
                let mut row = vec![i.to_string(), fmt_f(r.sum_h), fmt_f(r.log_norm)];
                if let Some(l) = r.log_op_norm {
                    row.push(fmt_f(l));
                }
                row
            });
            dir.write("trajectories.csv", csv(header, rows).as_bytes())?;
            let gamma = sampler::lyapunov_estimate(&stats).ok();
            dir.write_json(
                "summary.json",
                &json!({
                    "n_steps": stats.n_steps,
                    "n_traj": a.traj,
                    "burn_in": stats.burn_in,
                    "summary": stats.summary,
                    "lyapunov": gamma,
                    "occupation_points": stats.occupation.len(),
                }),
            )?;
            Ok(true)
        }
        Command::Spectrum(a) => {
            let ins = load_instrument(cfg)?;
            let skel = skeleton(&ins, &a.mesh)?;
            let tilt = parse_tilt(&a.tilt, load_observable(cfg))?;
            let k = skel.tilted(tilt, &TiltDomain::default())?;
            let rep = leading_spectrum(&k, a.count, a.gap_tol)?;
            let dev = k.row_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
            dir.write_json(
                "spectrum.json",
                &json!({
                    "mesh_size": skel.len(),
                    "eigenvalues": rep.eigenvalues.iter().map(complex_pair).collect::<Vec<_>>(),
                    "moduli": rep.eigenvalues.iter().map(|z| z.norm()).collect::<Vec<_>>(),
                    "gap": rep.gap,
                    "period_estimate": rep.period_estimate,
                    "method": rep.method,
                    "max_row_sum_deviation": dev,
                }),
            )?;
            Ok(true)
        }
        Command::Scgf(a) => {
            let ins = load_instrument(cfg)?;
            let skel = skeleton(&ins, &a.mesh)?;
            let family = match a.tilt {
                TiltKind::Obs => TiltFamily::Observable(load_observable(cfg)),
                TiltKind::Lyap => TiltFamily::Lyapunov,
            };
            let grid = parse_grid(&a.grid)?;
            let curve = cumulant_curve(&skel, &family, &grid, &TiltDomain::default())?;
            dir.write(
                "scgf.csv",
                csv(
                    "parameter,value",
                    curve.grid.iter().zip(&curve.values).map(|(t, v)| vec![fmt_f(*t), fmt_f(*v)]),
                )
                .as_bytes(),
            )?;
            let convex = curve.check_convex(limits::CONVEXITY_TOL).is_ok();
            let rate = if convex {
                let (lo, hi) = curve.end_slopes();
                let pts = a.rate_points.max(2);
                let xs: Vec<f64> = (0..pts)
                    .map(|i| lo + (hi - lo) * i as f64 / (pts - 1) as f64)
                    .collect();
                let r = legendre_transform(&curve, &xs)?;
                dir.write(
                    "rate.csv",
                    csv(
                        "x,rate,maximizer,at_endpoint",
                        (0..r.x.len()).map(|i| {
                            vec![
                                fmt_f(r.x[i]),
                                fmt_f(r.values[i]),
                                fmt_f(r.maximizer[i]),
                                r.at_endpoint[i].to_string(),
                            ]
                        }),
                    )
                    .as_bytes(),
                )?;
                Some(r.domain)
            } else {
                None
            };
            dir.write_json(
                "scgf.json",
                &json!({
                    "derivatives": curve.derivatives,
                    "convex": convex,
                    "restricted_domain": rate,
                }),
            )?;
            Ok(true)
        }
        Command::Clt(a) => run_clt(cfg, a, dir),
        Command::BerryEsseen(a) => {
            let ins = match a.mode {
                BeKind::Coin => None,
                _ => Some(load_instrument(cfg)?),
            };
            let mode = match a.mode {
                BeKind::Obs => BeMode::Observable(load_observable(cfg)),
                BeKind::Lyap => BeMode::Lyapunov,
                BeKind::Coin => BeMode::IidCoin,
            };
            let ns = parse_usize_list(&a.n_list)?;
            let rep = berry_esseen_scan(ins.as_ref(), &mode, &ns, a.traj, seed)?;
            let rows = rep.series.iter().flat_map(|s| {
                s.rows.iter().map(move |r| {
                    vec![
                        s.statistic.clone(),
                        r.n.to_string(),
                        fmt_f(r.distance),
                        fmt_f(s.exponent),
                        fmt_f(r.scaled),
                        fmt_f(r.excess),
                    ]
                })
            });
            dir.write(
                "berry_esseen.csv",
                csv("statistic,n,distance,exponent,scaled,excess", rows).as_bytes(),
            )?;
            let pass = !rep.degenerate && rep.series.iter().all(|s| s.bounded);
            dir.verdict(pass, serde_json::to_value(&rep).expect("serializable"))
        }
        Command::Ldp(a) => {
            let ins = load_instrument(cfg)?;
            let skel = skeleton(&ins, &a.mesh)?;
            let domain = TiltDomain::default();
            let mode = match a.mode {
                TiltKind::Obs => LdpMode::Observable(load_observable(cfg)),
                TiltKind::Lyap => LdpMode::Lyapunov,
            };
            let mut ev = ScgfEvaluator::new(&skel, mode.family(), domain);
            let derivs = derivatives_at_zero(|t| ev.eval(t), DERIVATIVE_STEP)?;
            let threshold = a
                .a
                .unwrap_or_else(|| derivs.d1 + a.a_sigma * derivs.d2.max(0.0).sqrt());
            let bracket = match (&a.bracket, a.mode) {
                (Some(b), _) => parse_range(b)?,
                (None, TiltKind::Obs) => (-5.0, 5.0),
                (None, TiltKind::Lyap) => (domain.lower, domain.upper),
            };
            let methods = a
                .methods
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|m| match m.trim() {
                    "direct" => Ok(LdpMethod::Direct),
                    "is" => Ok(LdpMethod::ImportanceSampling),
                    other => Err(Error::Parse {
                        location: "--methods".into(),
                        message: format!("unknown method `{other}`"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            let ns = parse_usize_list(&a.n_list)?;
            let rep = ldp_check(&ins, &mode, threshold, &ns, a.traj, seed, &skel, bracket, &domain, &methods)?;
            let rows = rep.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    match r.method {
                        LdpMethod::Direct => "direct".into(),
                        LdpMethod::ImportanceSampling => "is".into(),
                    },
                    fmt_f(r.p_hat),
                    fmt_f(r.p_stderr),
                    r.hits.to_string(),
                    fmt_f(r.rate_hat),
                    fmt_f(r.rate),
                    fmt_f(r.rel_err),
                    r.unreachable.to_string(),
                ]
            });
            dir.write(
                "ldp.csv",
                csv("n,method,p_hat,p_stderr,hits,rate_hat,rate,rel_err,unreachable", rows).as_bytes(),
            )?;
            let pass = rep.within_target;
            dir.verdict(pass, json!({ "derivatives": derivs, "report": rep }))
        }
        Command::Lyapunov(a) => {
            let ins = load_instrument(cfg)?;
            let skel = skeleton(&ins, &a.mesh)?;
            let mut ev = ScgfEvaluator::new(&skel, TiltFamily::Lyapunov, TiltDomain::default());
            let slope = derivatives_at_zero(|s| ev.eval(s), DERIVATIVE_STEP)?;
            let mut rc = RunConfig::new(a.steps, a.traj, seed);
            rc.burn_in = a.burn_in;
            rc.initial = parse_initial(&a.initial, ins.dim())?;
            let stats = sampler::run(&ins, &rc)?;
            let g = gamma_estimates(&ins, &stats, &slope)?;
            dir.write(
                "lyapunov.csv",
                csv(
                    "estimator,value,stderr",
                    [
                        ("trajectory", g.traj, g.traj_err),
                        ("integral", g.integral, g.integral_err),
                        ("slope", g.slope, g.slope_err),
                    ]
                    .iter()
                    .map(|(n, v, e)| vec![n.to_string(), fmt_f(*v), fmt_f(*e)]),
                )
                .as_bytes(),
            )?;
            dir.verdict(g.consistent, serde_json::to_value(g).expect("serializable"))
        }
        Command::ScalarChecks(a) => {
            let z = parse_z(&a.z)?;
            let grid = parse_grid(&a.t_grid)?;
            let rs = parse_list(&a.r)?;
            let rep = scalar_f_checks(a.nmax, z, a.theta, &grid, &rs)?;
            dir.write(
                "scalar.csv",
                csv(
                    "check,checked,worst_ratio,pass,skipped",
                    rep.checks.iter().map(|c| {
                        vec![
                            c.name.clone(),
                            c.checked.to_string(),
                            fmt_f(c.worst_ratio),
                            c.pass.to_string(),
                            c.skipped.to_string(),
                        ]
                    }),
                )
                .as_bytes(),
            )?;
            let ss = parse_list(&a.ineqlog_s)?;
            let mut ineq = Vec::new();
            if !ss.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sample: Vec<ProjectivePoint> = (0..a.ineqlog_sample)
                    .map(|_| ProjectivePoint::haar(a.ineqlog_dim, &mut rng))
                    .collect();
                for &s in &ss {
                    ineq.push(ineqlog_scan(&sample, s, a.ineqlog_trials, seed)?);
                }
                dir.write(
                    "ineqlog.csv",
                    csv(
                        "s,trials,min_r,max_r,smallest_eigenvalue",
                        ineq.iter().map(|r| {
                            vec![
                                fmt_f(r.s),
                                r.trials.to_string(),
                                fmt_f(r.min_r),
                                fmt_f(r.max_r),
                                fmt_f(r.smallest_eigenvalue),
                            ]
                        }),
                    )
                    .as_bytes(),
                )?;
            }
            let pass = rep.pass && ineq.iter().all(|r| r.min_r > 0.0 && r.max_r.is_finite());
            dir.verdict(pass, json!({ "scalar": rep, "ineqlog": ineq }))
        }
        Command::Replay(_) => Err(Error::Precondition("replay configs cannot be nested".into())),
    }
}

fn parse_tilt(text: &str, h: Observable) -> Result<Tilt> {
    if text == "none" {
        return Ok(Tilt::None);
    }
    let bad = || Error::Parse {
        location: format!("tilt `{text}`"),
        message: "expected none, obs:θ or lyap:s".into(),
    };
    let (kind, v) = text.split_once(':').ok_or_else(bad)?;
    let v: f64 = v.trim().parse().map_err(|_| bad())?;
    match kind {
        "obs" => Ok(Tilt::Observable { theta: v, h }),
        "lyap" => Ok(Tilt::Lyapunov { s: v }),
        _ => Err(bad()),
    }
}

fn run_clt(cfg: &ExperimentConfig, a: &CltArgs, dir: &mut RunDir) -> Result<bool> {
    let ins = load_instrument(cfg)?;
    let h = load_observable(cfg);
    let mut rc = RunConfig::new(a.steps, a.traj, cfg.global.seed);
    rc.burn_in = a.burn_in;
    rc.observable = h.clone();
    rc.initial = parse_initial(&a.initial, ins.dim())?;
    rc.occupation_budget = 0;
    let stats = sampler::run(&ins, &rc)?;
    let len = a.steps - a.burn_in;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut push = |name: &str, xs: Vec<f64>| -> Result<()> {
        let center = xs.iter().sum::<f64>() / (xs.len() as f64 * len as f64);
        let samples = normalized_statistics(&xs, len);
        let (_, var) = crate::stats::mean_var(&samples);
        let mut rep = clt_check(&samples, var)?;
        rep.n = Some(len);
        rows.push(vec![
            name.to_string(),
            len.to_string(),
            rep.sample_count.to_string(),
            fmt_f(center),
            fmt_f(rep.sigma2),
            fmt_f(rep.ks),
            fmt_f(rep.threshold),
            rep.pass.to_string(),
            rep.degenerate.to_string(),
        ]);
        reports.push(json!({ "statistic": name, "center_per_step": center, "report": rep }));
        Ok(())
    };
    if a.statistic != Statistic::Lyapunov {
        push(
            "sum_h",
            stats.trajectories.iter().map(|r| r.sum_h - r.sum_h_burn).collect(),
        )?;
    }
    if a.statistic != Statistic::Observable {
        push(
            "log_norm_wx",
            stats.trajectories.iter().map(|r| r.log_norm - r.log_norm_burn).collect(),
        )?;
    }
    dir.write(
        "clt.csv",
        csv("statistic,n,samples,center,sigma2,ks,threshold,pass,degenerate", rows).as_bytes(),
    )?;
    let pass = reports.iter().all(|r| r["report"]["pass"] == json!(true));
    let spectral = match (a.spectral_mesh, a.statistic != Statistic::Lyapunov) {
        (Some(n), true) => {
            let skel = skeleton(
                &ins,
                &MeshArgs {
                    mesh_size: n,
                    mesh: "fibonacci".into(),
                    mesh_seed: 0,
                },
            )?;
            let mut ev = ScgfEvaluator::new(&skel, TiltFamily::Observable(h), TiltDomain::default());
            let d = derivatives_at_zero(|t| ev.eval(t), DERIVATIVE_STEP)?;
            Some(sigma2_estimates(&stats, &d))
        }
        _ => None,
    };
    dir.verdict(pass, json!({ "statistics": reports, "sigma2": spectral }))
}

/// Parses `argv` and runs; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run_cli(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Replay(r) => {
            let text = fs::read_to_string(&r.config)?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
                location: r.config.display().to_string(),
                message: e.to_string(),
            })?;
            if cli.global.threads.is_some() {
                cfg.global.threads = cli.global.threads;
            }
            let out = cli
                .global
                .out
                .or_else(|| cfg.global.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let inputs = vec![InputRecord::new(&r.config.to_string_lossy(), text.as_bytes())];
            execute(&cfg, &out, inputs)
        }
        command => {
            let out = cli.global.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let (cfg, inputs) = resolve(cli.global, command)?;
            execute(&cfg, &out, inputs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_and_lists() {
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("-2:2:0.1").unwrap().len(), 41);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1").is_err());
        assert_eq!(parse_usize_list("100,400").unwrap(), vec![100, 400]);
        assert_eq!(parse_range("-1.5:8").unwrap(), (-1.5, 8.0));
        assert_eq!(parse_z("1.2,0.5").unwrap(), C64::new(1.2, 0.5));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 6.02e23, 1e-300] {
            assert_eq!(fmt_f(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn observable_specs() {
        let mut inputs = Vec::new();
        assert!(matches!(
            ObservableSpec::parse("const:2.5", &mut inputs).unwrap(),
            ObservableSpec::Constant(c) if c == 2.5
        ));
        let ObservableSpec::Quadratic(m) = ObservableSpec::parse("diag:1,-1", &mut inputs).unwrap() else {
            panic!("expected quadratic");
        };
        assert_eq!(m, ComplexMatrix::diag_real(&[1.0, -1.0]));
        assert!(ObservableSpec::parse("cubic:1", &mut inputs).is_err());
        assert!(inputs.is_empty());
    }

    #[test]
    fn config_round_trips() {
        let cli = Cli::try_parse_from(["qtraj", "--seed", "5", "simulate", "--builtin", "AD", "--steps", "10"]).unwrap();
        let (cfg, _) = resolve(cli.global, cli.command).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        assert_eq!(back.global.seed, 5);
    }

    #[test]
    fn missing_instrument_is_an_error() {
        let cli = Cli::try_parse_from(["qtraj", "validate"]).unwrap();
        assert!(resolve(cli.global, cli.command).is_err());
    }
}
