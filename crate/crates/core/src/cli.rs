//! Command-line front end. Each subcommand has a serde config section; values
//! from `--config` are loaded first and any flag given on the command line
//! replaces the corresponding field.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cascade::{run_replicas, simulate_path_with, uniform_grid, PathOptions, Record};
use crate::error::CascadeError;
use crate::kpz::{
    box_dimension_estimate, critical_time, kpz_ode_solve, phi_inverse, BoxDimension, RaySet,
};
use crate::noise::derive_seed;
use crate::regularity::{regularity_report, Measure};
use crate::sde::{path_observables, write_observables_csv};
use crate::stats::mean;
use crate::transport::{
    coupling_upper_bound, holder_fit, lag_distances, wasserstein_exact, wasserstein_lp_oracle,
    write_lag_csv, HolderFit, LP_MAX_DEPTH,
};
use crate::tree_flow::{Flow, DEFAULT_MAX_DEPTH};
use crate::verify::{run_suite, Budget, SuiteConfig, TestReport, Verdict};
use crate::weight::WeightSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TEST_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "cascade",
    version,
    about = "Simulate and analyze measure-valued cascade processes on the binary tree"
)]
pub struct Cli {
    /// JSON config file; flags given on the command line override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit without running
    #[arg(long, global = true)]
    pub dump_config: bool,
    /// Worker threads for replica loops (0 = one per core); results do not depend on it
    #[arg(long, global = true, env = "CASCADE_THREADS", value_name = "N")]
    pub threads: Option<usize>,
    /// Largest tree depth accepted, in levels [default: 26]
    #[arg(long, global = true, value_name = "LEVELS")]
    pub max_depth: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate cascade paths and write per-time observables as CSV
    Simulate(SimulateArgs),
    /// Regularity report (pressure, alpha, critical exponent, lifetime) as JSON
    Analyze(AnalyzeArgs),
    /// Transport distance between two flows, or a Hölder fit of simulated paths
    Transport(TransportArgs),
    /// Integrate the KPZ dimension ODE and optionally estimate image box dimensions
    Kpz(KpzArgs),
    /// Run the statistical verification suite and write a JSON report
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightKind {
    Gaussian,
    CompoundPoisson,
}

/// Flags shared by commands that take a weight law.
#[derive(Debug, Args)]
pub struct WeightArgs {
    /// Weight law of the increments
    #[arg(long, value_enum)]
    pub weights: Option<WeightKind>,
    /// Compound Poisson jump rate, in jumps per unit model time
    #[arg(long)]
    pub rate: Option<f64>,
    /// Compound Poisson mean of the log-jump size
    #[arg(long)]
    pub jump_mean: Option<f64>,
    /// Compound Poisson standard deviation of the log-jump size
    #[arg(long)]
    pub jump_sd: Option<f64>,
}

impl WeightArgs {
    fn apply(&self, spec: &mut WeightSpec) {
        match self.weights {
            Some(WeightKind::Gaussian) => *spec = WeightSpec::Gaussian,
            Some(WeightKind::CompoundPoisson) if spec.is_gaussian() => {
                *spec = WeightSpec::compound_poisson_default();
            }
            _ => {}
        }
        if let WeightSpec::CompoundPoisson {
            rate,
            jump_mean,
            jump_sd,
        } = spec
        {
            set(rate, self.rate);
            set(jump_mean, self.jump_mean);
            set(jump_sd, self.jump_sd);
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_some<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Initial measure: `theta` (uniform) or a flow file (.json or .csv)
    #[arg(long)]
    pub measure: Option<String>,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Tree depth n of the finite-depth process, in levels
    #[arg(long)]
    pub depth: Option<u32>,
    /// Final time, in model time units
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Grid step, in model time units
    #[arg(long)]
    pub step: Option<f64>,
    /// Number of independent paths
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observables CSV (time,replica,root_mass,overlap,cum_qv); stdout if absent
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Final snapshot of replica 0 as a flow file (.json or .csv)
    #[arg(long, value_name = "FILE")]
    pub snapshot_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Measure: `theta` (uniform, closed forms) or a flow file (.json or .csv)
    #[arg(long)]
    pub measure: Option<String>,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Depth used when reading or simulating the measure, in levels
    #[arg(long)]
    pub depth: Option<u32>,
    /// Time t at which alpha_t and h_t are evaluated, in model time units
    #[arg(long)]
    pub t: Option<f64>,
    /// Comma-separated exponents h at which pressure and alpha are sampled
    #[arg(long, value_delimiter = ',')]
    pub h: Option<Vec<f64>>,
    /// Analyze the simulated snapshot at this time instead of the measure itself, in model time units
    #[arg(long)]
    pub from_time: Option<f64>,
    /// Seed for --from-time
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON; stdout if absent
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// CSV of h,pressure,alpha
    #[arg(long, value_name = "FILE")]
    pub curves_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransportArgs {
    /// First flow file (.json or .csv)
    #[arg(long, value_name = "FILE")]
    pub mu: Option<PathBuf>,
    /// Second flow file, same depth as --mu
    #[arg(long, value_name = "FILE")]
    pub nu: Option<PathBuf>,
    /// Fit the Hölder exponent of simulated uniform-start paths instead
    #[arg(long)]
    pub holder: bool,
    /// Tree depth for --holder, in levels
    #[arg(long)]
    pub depth: Option<u32>,
    /// Final time for --holder, in model time units
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Grid step 2^-K for --holder; this sets K
    #[arg(long)]
    pub step_log2: Option<u32>,
    /// Paths for --holder
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Snapshot pairs per lag for --holder
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Master seed for --holder
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result JSON; stdout if absent
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// CSV of lag,replica,distance for --holder
    #[arg(long, value_name = "FILE")]
    pub lags_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KpzArgs {
    /// Initial dimension d(0), in [0, 1]
    #[arg(long)]
    pub d0: Option<f64>,
    /// Final time, in model time units, at most 2 log 2
    #[arg(long)]
    pub t_end: Option<f64>,
    /// RK4 step, in model time units
    #[arg(long)]
    pub step: Option<f64>,
    /// CSV of t,d_ode,d_closed_form; stdout if absent
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Tree depth for box counting, in levels
    #[arg(long)]
    pub box_depth: Option<u32>,
    /// Time of the snapshot used for box counting, in model time units
    #[arg(long)]
    pub box_t: Option<f64>,
    /// Snapshots averaged for box counting
    #[arg(long)]
    pub box_replicas: Option<usize>,
    /// Seed for box counting
    #[arg(long)]
    pub seed: Option<u64>,
    /// Box-dimension JSON; box counting runs only when this is given
    #[arg(long, value_name = "FILE")]
    pub box_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Budget preset: `default` (alias `fast`) or `full`
    #[arg(long)]
    pub suite: Option<String>,
    /// Suite seed; each test derives its own seed from this and its name
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of tests; all tests if absent
    #[arg(long, value_delimiter = ',')]
    pub tests: Option<Vec<String>>,
    /// Minimum KS p-value for distributional tests to pass
    #[arg(long)]
    pub ks_p_min: Option<f64>,
    /// Largest |z| for mean tests to pass, in standard errors
    #[arg(long)]
    pub z_max: Option<f64>,
    /// Report JSON; stdout if absent
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub measure: String,
    pub weights: WeightSpec,
    pub depth: u32,
    pub t_end: f64,
    pub step: f64,
    pub replicas: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub snapshot_out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            measure: "theta".into(),
            weights: WeightSpec::Gaussian,
            depth: 10,
            t_end: 1.0,
            step: 0.01,
            replicas: 1,
            seed: 0,
            out: None,
            snapshot_out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub measure: String,
    pub weights: WeightSpec,
    pub depth: Option<u32>,
    pub t: f64,
    pub h: Vec<f64>,
    pub from_time: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub curves_out: Option<PathBuf>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            measure: "theta".into(),
            weights: WeightSpec::Gaussian,
            depth: None,
            t: 0.5,
            h: (0..=30).map(|k| 0.1 * k as f64).collect(),
            from_time: None,
            seed: 0,
            out: None,
            curves_out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub mu: Option<PathBuf>,
    pub nu: Option<PathBuf>,
    pub holder: bool,
    pub depth: u32,
    pub t_end: f64,
    pub step_log2: u32,
    pub replicas: usize,
    pub pairs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub lags_out: Option<PathBuf>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            mu: None,
            nu: None,
            holder: false,
            depth: 12,
            t_end: 0.5,
            step_log2: 10,
            replicas: 8,
            pairs: 64,
            seed: 0,
            out: None,
            lags_out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpzConfig {
    pub d0: f64,
    pub t_end: f64,
    pub step: f64,
    pub out: Option<PathBuf>,
    pub box_depth: u32,
    pub box_t: f64,
    pub box_replicas: usize,
    pub seed: u64,
    pub box_out: Option<PathBuf>,
}

impl Default for KpzConfig {
    fn default() -> Self {
        KpzConfig {
            d0: 0.75,
            t_end: 1.386,
            step: 1e-3,
            out: None,
            box_depth: 18,
            box_t: 0.5,
            box_replicas: 4,
            seed: 0,
            box_out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suite: String,
    pub seed: u64,
    /// All tests when absent.
    pub tests: Option<Vec<String>>,
    pub ks_p_min: f64,
    pub z_max: f64,
    /// Replaces the preset budget when present.
    pub budget: Option<Budget>,
    pub out: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let s = SuiteConfig::default();
        VerifyConfig {
            suite: "default".into(),
            seed: s.seed,
            tests: None,
            ks_p_min: s.ks_p_min,
            z_max: s.z_max,
            budget: None,
            out: None,
        }
    }
}

/// Everything a run can be configured with; the JSON form of `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub threads: usize,
    pub max_depth: u32,
    pub simulate: SimulateConfig,
    pub analyze: AnalyzeConfig,
    pub transport: TransportConfig,
    pub kpz: KpzConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 0,
            max_depth: DEFAULT_MAX_DEPTH,
            simulate: SimulateConfig::default(),
            analyze: AnalyzeConfig::default(),
            transport: TransportConfig::default(),
            kpz: KpzConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(CascadeError),
    Tests(usize),
}

impl From<CascadeError> for Failure {
    fn from(e: CascadeError) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn config_err<T>(r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure::Config(e.to_string()))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
        Err(Failure::Tests(n)) => {
            eprintln!("{n} test(s) failed");
            EXIT_TEST_FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Applies the command-line flags of `cmd` on top of `cfg`.
fn merge(cfg: &mut RunConfig, cli: &Cli) {
    set(&mut cfg.threads, cli.threads);
    set(&mut cfg.max_depth, cli.max_depth);
    match &cli.command {
        Command::Simulate(a) => {
            let c = &mut cfg.simulate;
            set(&mut c.measure, a.measure.clone());
            a.weights.apply(&mut c.weights);
            set(&mut c.depth, a.depth);
            set(&mut c.t_end, a.t_end);
            set(&mut c.step, a.step);
            set(&mut c.replicas, a.replicas);
            set(&mut c.seed, a.seed);
            set_some(&mut c.out, a.out.clone());
            set_some(&mut c.snapshot_out, a.snapshot_out.clone());
        }
        Command::Analyze(a) => {
            let c = &mut cfg.analyze;
            set(&mut c.measure, a.measure.clone());
            a.weights.apply(&mut c.weights);
            set_some(&mut c.depth, a.depth);
            set(&mut c.t, a.t);
            set(&mut c.h, a.h.clone());
            set_some(&mut c.from_time, a.from_time);
            set(&mut c.seed, a.seed);
            set_some(&mut c.out, a.out.clone());
            set_some(&mut c.curves_out, a.curves_out.clone());
        }
        Command::Transport(a) => {
            let c = &mut cfg.transport;
            set_some(&mut c.mu, a.mu.clone());
            set_some(&mut c.nu, a.nu.clone());
            c.holder |= a.holder;
            set(&mut c.depth, a.depth);
            set(&mut c.t_end, a.t_end);
            set(&mut c.step_log2, a.step_log2);
            set(&mut c.replicas, a.replicas);
            set(&mut c.pairs, a.pairs);
            set(&mut c.seed, a.seed);
            set_some(&mut c.out, a.out.clone());
            set_some(&mut c.lags_out, a.lags_out.clone());
        }
        Command::Kpz(a) => {
            let c = &mut cfg.kpz;
            set(&mut c.d0, a.d0);
            set(&mut c.t_end, a.t_end);
            set(&mut c.step, a.step);
            set_some(&mut c.out, a.out.clone());
            set(&mut c.box_depth, a.box_depth);
            set(&mut c.box_t, a.box_t);
            set(&mut c.box_replicas, a.box_replicas);
            set(&mut c.seed, a.seed);
            set_some(&mut c.box_out, a.box_out.clone());
        }
        Command::Verify(a) => {
            let c = &mut cfg.verify;
            set(&mut c.suite, a.suite.clone());
            set(&mut c.seed, a.seed);
            set_some(&mut c.tests, a.tests.clone());
            set(&mut c.ks_p_min, a.ks_p_min);
            set(&mut c.z_max, a.z_max);
            set_some(&mut c.out, a.out.clone());
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    merge(&mut cfg, &cli);
    if cli.dump_config {
        return emit(None, |w| write_json(w, &cfg));
    }
    let plan = validate(&cfg, &cli.command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    pool.install(|| plan.run())
}

fn positive(name: &str, x: f64) -> CliResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

fn nonnegative(name: &str, x: f64) -> CliResult<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be nonnegative and finite, got {x}"
        )))
    }
}

fn depth_ok(depth: u32, max: u32) -> CliResult<()> {
    if depth > max {
        return Err(Failure::Config(
            CascadeError::DepthTooLarge { depth, max }.to_string(),
        ));
    }
    Ok(())
}

fn load_flow(path: &Path) -> CliResult<Flow> {
    Flow::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Reads `theta` or a flow file, truncated to `depth` when given.
fn load_measure(source: &str, depth: Option<u32>, max: u32) -> CliResult<Option<Flow>> {
    if source == "theta" {
        return Ok(None);
    }
    let f = load_flow(Path::new(source))?;
    depth_ok(f.depth(), max.max(depth.unwrap_or(0)))?;
    let f = match depth {
        Some(d) if d != f.depth() => config_err(f.truncate(d))?,
        _ => f,
    };
    Ok(Some(f))
}

/// A validated command, ready to run.
enum Plan {
    Simulate(SimulateConfig, Flow),
    Analyze(AnalyzeConfig, Option<Flow>),
    Distance(TransportConfig, Flow, Flow),
    Holder(TransportConfig),
    Kpz(KpzConfig),
    Verify(SuiteConfig, Option<PathBuf>),
}

fn validate(cfg: &RunConfig, cmd: &Command) -> CliResult<Plan> {
    let max = cfg.max_depth;
    match cmd {
        Command::Simulate(_) => {
            let c = cfg.simulate.clone();
            config_err(c.weights.validate())?;
            depth_ok(c.depth, max)?;
            nonnegative("t_end", c.t_end)?;
            positive("step", c.step)?;
            if c.replicas == 0 {
                return Err(invalid("replicas must be at least 1"));
            }
            let base = match load_measure(&c.measure, Some(c.depth), max)? {
                Some(f) => f,
                None => Flow::uniform(c.depth),
            };
            Ok(Plan::Simulate(c, base))
        }
        Command::Analyze(_) => {
            let c = cfg.analyze.clone();
            config_err(c.weights.validate())?;
            nonnegative("t", c.t)?;
            for &h in &c.h {
                nonnegative("h", h)?;
            }
            if let Some(d) = c.depth {
                depth_ok(d, max)?;
            }
            let mut flow = load_measure(&c.measure, c.depth, max)?;
            if let Some(s) = c.from_time {
                nonnegative("from_time", s)?;
                if flow.is_none() {
                    let d = c
                        .depth
                        .ok_or_else(|| invalid("--from-time with theta needs --depth"))?;
                    flow = Some(Flow::uniform(d));
                }
            }
            Ok(Plan::Analyze(c, flow))
        }
        Command::Transport(_) => {
            let c = cfg.transport.clone();
            if c.holder {
                depth_ok(c.depth, max)?;
                positive("t_end", c.t_end)?;
                if c.replicas == 0 || c.pairs == 0 {
                    return Err(invalid("replicas and pairs must be at least 1"));
                }
                return Ok(Plan::Holder(c));
            }
            let (Some(mu), Some(nu)) = (&c.mu, &c.nu) else {
                return Err(invalid("transport needs --mu and --nu, or --holder"));
            };
            let mu = load_flow(mu)?;
            let nu = load_flow(nu)?;
            depth_ok(mu.depth(), max)?;
            if mu.depth() != nu.depth() {
                return Err(invalid(
                    CascadeError::DepthMismatch(mu.depth(), nu.depth()).to_string(),
                ));
            }
            Ok(Plan::Distance(c, mu, nu))
        }
        Command::Kpz(_) => {
            let c = cfg.kpz.clone();
            if !(0.0..=1.0).contains(&c.d0) {
                return Err(invalid(format!("d0 = {} outside [0, 1]", c.d0)));
            }
            positive("step", c.step)?;
            nonnegative("t_end", c.t_end)?;
            if c.t_end > critical_time() {
                return Err(invalid(format!("t_end = {} beyond 2 log 2", c.t_end)));
            }
            if c.step > c.t_end {
                return Err(invalid("step must not exceed t_end"));
            }
            if c.box_out.is_some() {
                depth_ok(c.box_depth, max)?;
                nonnegative("box_t", c.box_t)?;
                if c.box_depth < 10 || c.box_replicas == 0 {
                    return Err(invalid(
                        "box counting needs box_depth >= 10 and box_replicas >= 1",
                    ));
                }
            }
            Ok(Plan::Kpz(c))
        }
        Command::Verify(_) => {
            let c = &cfg.verify;
            let mut s = config_err(SuiteConfig::preset(&c.suite))?;
            s.seed = c.seed;
            if let Some(t) = &c.tests {
                s.tests = t.clone();
            }
            s.ks_p_min = c.ks_p_min;
            s.z_max = c.z_max;
            if let Some(b) = &c.budget {
                s.budget = b.clone();
            }
            if !(0.0..1.0).contains(&s.ks_p_min) {
                return Err(invalid(format!("ks_p_min = {} outside [0, 1)", s.ks_p_min)));
            }
            positive("z_max", s.z_max)?;
            for name in &s.tests {
                if !crate::verify::ALL_TESTS.contains(&name.as_str()) {
                    return Err(invalid(CascadeError::UnknownTest(name.clone()).to_string()));
                }
            }
            Ok(Plan::Verify(s, c.out.clone()))
        }
    }
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> crate::Result<()>) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut file =
                std::io::BufWriter::new(std::fs::File::create(p).map_err(CascadeError::from)?);
            f(&mut file)?;
            file.flush().map_err(CascadeError::from)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush().map_err(CascadeError::from)?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> crate::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct DistanceReport {
    depth: u32,
    /// Root masses before normalization; distances are between normalized flows.
    root_masses: (f64, f64),
    exact: f64,
    coupling_upper_bound: f64,
    truncation_bound: f64,
    /// Absent above the LP size limit.
    lp_oracle: Option<f64>,
}

#[derive(Serialize)]
struct HolderReport {
    depth: u32,
    t_end: f64,
    step: f64,
    replicas: usize,
    slope: Option<f64>,
    confidence_interval: Option<(f64, f64)>,
    fit: HolderFit,
}

#[derive(Serialize)]
struct BoxReport {
    depth: u32,
    t: f64,
    replicas: usize,
    scales: Vec<u32>,
    estimates: Vec<f64>,
    mean: f64,
    predicted: f64,
    replica_zero: BoxDimension,
}

#[derive(Serialize)]
struct SuiteReport<'a> {
    seed: u64,
    passed: usize,
    failed: usize,
    inconclusive: usize,
    tests: &'a [TestReport],
}

impl Plan {
    fn run(self) -> CliResult<()> {
        match self {
            Plan::Simulate(c, base) => {
                let grid = uniform_grid(c.t_end, c.step)?;
                let paths: Vec<_> = run_replicas(c.replicas, c.seed, |r, rs| {
                    let opts = PathOptions {
                        record: if r == 0 && c.snapshot_out.is_some() {
                            Record::Final
                        } else {
                            Record::None
                        },
                        ..PathOptions::default()
                    };
                    simulate_path_with(&base, &c.weights, &grid, c.depth, rs, &opts).map(|p| {
                        (
                            path_observables(&p),
                            (r == 0).then(|| p.snapshots().first().cloned()).flatten(),
                        )
                    })
                })
                .into_iter()
                .collect::<crate::Result<_>>()?;
                let (rows, snaps): (Vec<_>, Vec<_>) = paths.into_iter().unzip();
                emit(c.out.as_deref(), |w| write_observables_csv(&rows, w))?;
                if let (Some(path), Some(Some(s))) = (&c.snapshot_out, snaps.into_iter().next()) {
                    s.save(path)?;
                }
                Ok(())
            }
            Plan::Analyze(c, flow) => {
                let flow = match (flow, c.from_time) {
                    (Some(f), Some(t)) if t > 0.0 => {
                        let opts = PathOptions {
                            record: Record::Final,
                            ..PathOptions::default()
                        };
                        let d = f.depth();
                        let p = simulate_path_with(
                            &f,
                            &c.weights,
                            &[0.0, t],
                            d,
                            derive_seed(c.seed, "analyze"),
                            &opts,
                        )?;
                        Some(p.snapshots()[0].clone())
                    }
                    (f, _) => f,
                };
                let measure = match &flow {
                    Some(f) => Measure::Empirical(f),
                    None => Measure::Theta,
                };
                let report = regularity_report(measure, &c.weights, c.t, &c.h)?;
                emit(c.out.as_deref(), |w| write_json(w, &report))?;
                if let Some(p) = &c.curves_out {
                    report.write_curves(std::fs::File::create(p).map_err(CascadeError::from)?)?;
                }
                Ok(())
            }
            Plan::Distance(c, mu, nu) => {
                let root_masses = (mu.root_mass(), nu.root_mass());
                let (mu, nu) = (mu.normalize(), nu.normalize());
                let exact = wasserstein_exact(&mu, &nu)?;
                let report = DistanceReport {
                    depth: mu.depth(),
                    root_masses,
                    exact: exact.value,
                    coupling_upper_bound: coupling_upper_bound(&mu, &nu)?.value,
                    truncation_bound: exact.truncation_bound,
                    lp_oracle: if mu.depth() <= LP_MAX_DEPTH {
                        Some(wasserstein_lp_oracle(&mu, &nu)?.value)
                    } else {
                        None
                    },
                };
                emit(c.out.as_deref(), |w| write_json(w, &report))
            }
            Plan::Holder(c) => {
                let step = (-(c.step_log2 as f64)).exp2();
                let grid = uniform_grid(c.t_end, step)?;
                let base = Flow::uniform(c.depth);
                let opts = PathOptions {
                    record: Record::All,
                    ..PathOptions::default()
                };
                let per_path: Vec<_> = run_replicas(c.replicas, c.seed, |_, rs| {
                    let p = simulate_path_with(
                        &base,
                        &WeightSpec::Gaussian,
                        &grid,
                        c.depth,
                        rs,
                        &opts,
                    )?;
                    lag_distances(&p, c.pairs)
                })
                .into_iter()
                .collect::<crate::Result<_>>()?;
                let fit = holder_fit(&per_path)?;
                if let Some(p) = &c.lags_out {
                    write_lag_csv(
                        &per_path,
                        std::fs::File::create(p).map_err(CascadeError::from)?,
                    )?;
                }
                let report = HolderReport {
                    depth: c.depth,
                    t_end: c.t_end,
                    step,
                    replicas: c.replicas,
                    slope: fit.slope(),
                    confidence_interval: fit.confidence_interval(),
                    fit,
                };
                emit(c.out.as_deref(), |w| write_json(w, &report))
            }
            Plan::Kpz(c) => {
                let path = kpz_ode_solve(c.d0, c.t_end, c.step)?;
                emit(c.out.as_deref(), |w| path.write_csv(w))?;
                if let Some(p) = &c.box_out {
                    let g = WeightSpec::Gaussian;
                    let scales = crate::verify::box_scales(c.box_depth);
                    let base = Flow::uniform(c.box_depth);
                    let fits: Vec<BoxDimension> = run_replicas(c.box_replicas, c.seed, |_, rs| {
                        let opts = PathOptions {
                            record: Record::Final,
                            ..PathOptions::default()
                        };
                        let snap = if c.box_t == 0.0 {
                            base.clone()
                        } else {
                            simulate_path_with(&base, &g, &[0.0, c.box_t], c.box_depth, rs, &opts)?
                                .snapshots()[0]
                                .clone()
                        };
                        box_dimension_estimate(&snap, RaySet::EvenFree, &scales)
                    })
                    .into_iter()
                    .collect::<crate::Result<_>>()?;
                    let estimates: Vec<f64> = fits.iter().map(|f| f.estimate).collect();
                    let report = BoxReport {
                        depth: c.box_depth,
                        t: c.box_t,
                        replicas: c.box_replicas,
                        scales,
                        mean: mean(&estimates),
                        predicted: phi_inverse(&g, c.box_t, RaySet::EvenFree.dimension())?,
                        estimates,
                        replica_zero: fits.into_iter().next().expect("at least one replica"),
                    };
                    emit(Some(p), |w| write_json(w, &report))?;
                }
                Ok(())
            }
            Plan::Verify(s, out) => {
                let reports = run_suite(&s)?;
                let count = |v: Verdict| reports.iter().filter(|r| r.verdict == v).count();
                let summary = SuiteReport {
                    seed: s.seed,
                    passed: count(Verdict::Pass),
                    failed: count(Verdict::Fail),
                    inconclusive: count(Verdict::Inconclusive),
                    tests: &reports,
                };
                emit(out.as_deref(), |w| write_json(w, &summary))?;
                for r in reports.iter().filter(|r| !r.passed()) {
                    eprintln!(
                        "{}: {:?} (statistic {}, threshold {})",
                        r.test_name, r.verdict, r.statistic, r.threshold
                    );
                }
                eprintln!(
                    "{} passed, {} failed, {} inconclusive",
                    summary.passed, summary.failed, summary.inconclusive
                );
                match summary.failed {
                    0 => Ok(()),
                    n => Err(Failure::Tests(n)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("cascade").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_values() {
        let cli = parse(&[
            "simulate",
            "--depth",
            "7",
            "--weights",
            "compound-poisson",
            "--rate",
            "2",
        ]);
        let mut cfg = RunConfig::default();
        cfg.simulate.depth = 3;
        cfg.simulate.seed = 9;
        merge(&mut cfg, &cli);
        assert_eq!(cfg.simulate.depth, 7);
        assert_eq!(cfg.simulate.seed, 9);
        assert_eq!(
            cfg.simulate.weights,
            WeightSpec::CompoundPoisson {
                rate: 2.0,
                jump_mean: 0.0,
                jump_sd: 0.3
            }
        );
    }

    #[test]
    fn validation_rejects_bad_numbers() {
        let mut cfg = RunConfig::default();
        let cli = parse(&["simulate"]);
        cfg.simulate.step = 0.0;
        assert!(matches!(
            validate(&cfg, &cli.command),
            Err(Failure::Config(_))
        ));
        cfg.simulate.step = 0.01;
        cfg.simulate.depth = 30;
        assert!(matches!(
            validate(&cfg, &cli.command),
            Err(Failure::Config(_))
        ));
        let cli = parse(&["kpz", "--t-end", "2"]);
        merge(&mut cfg, &cli);
        assert!(matches!(
            validate(&cfg, &cli.command),
            Err(Failure::Config(_))
        ));
        let cli = parse(&["verify", "--tests", "nope"]);
        merge(&mut cfg, &cli);
        assert!(matches!(
            validate(&cfg, &cli.command),
            Err(Failure::Config(_))
        ));
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"kpz": {"d0": 0.3}}"#).unwrap();
        assert_eq!(partial.kpz.d0, 0.3);
        assert_eq!(partial.kpz.step, KpzConfig::default().step);
    }

    #[test]
    fn help_mentions_units() {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        for sub in ["simulate", "analyze", "transport", "kpz"] {
            let help = cmd
                .find_subcommand_mut(sub)
                .unwrap()
                .render_long_help()
                .to_string();
            assert!(
                help.contains("model time units") || help.contains("levels"),
                "{sub}"
            );
        }
    }
}
