//! Subcommand definitions. Each command has a flag struct (everything
//! optional, so a config file can supply values) and a resolved parameter
//! struct with defaults filled in; the latter is what the manifest records.

use std::fs;
use std::path::{Path, PathBuf};

use cdcov::baselines::log_grid;
use cdcov::haar::random_psd;
use cdcov::matrix::fmt_f64;
use cdcov::sim::ArVariance;
use cdcov::sure::{default_grid, k_grid, select_k_with};
use cdcov::{
    adaptive_threshold, cd_estimate, center_columns, cov_pair, haar_mc_oracle, poet, risk_oracle,
    run_cell, sparsity_sweep, AtConfig, DataMatrix, HaarScheme, Method, MethodOptions, MomentConvention,
    PoetConfig, RngSeed, Setting, SimConfig, SymMat,
};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{read_config_file, resolve, to_map};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::render::{emit_plot_data, group_records, group_title, render_table, write_records, TableSpec};

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file or a manifest from a previous run; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Benchmark methods on one simulated configuration.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: BenchFlags,
    },
    /// Benchmark methods across sparsity levels; writes long-format plot data.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: BenchFlags,
    },
    /// Estimate a covariance matrix from a data file.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: EstimateFlags,
    },
    /// SURE curve and selected compression dimension for a data file.
    Sure {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SureFlags,
    },
    /// Monte Carlo risk curve of the C-D estimator for a known covariance.
    RiskOracle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: RiskFlags,
    },
    /// Compare the closed-form C-D estimator with a Haar Monte Carlo average.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: OracleFlags,
    },
    /// Render a records CSV as tables and plot data.
    Render {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: RenderFlags,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::Estimate { .. } => "estimate",
            Command::Sure { .. } => "sure",
            Command::RiskOracle { .. } => "risk-oracle",
            Command::OracleCheck { .. } => "oracle-check",
            Command::Render { .. } => "render",
        }
    }
}

// Flag structs. Field names are the config keys.

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchFlags {
    #[arg(long)]
    pub setting: Option<u8>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub ktr: Option<usize>,
    /// Sparsity level (simulate).
    #[arg(long)]
    pub s: Option<f64>,
    /// Comma-separated sparsity levels (sweep).
    #[arg(long, value_delimiter = ',')]
    pub s_list: Option<Vec<f64>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of cd,at,poet,sample.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub sigma0_sq: Option<f64>,
    #[arg(long)]
    pub ar_error_var: Option<f64>,
    #[arg(long)]
    pub ar_coef: Option<f64>,
    /// Read ar_error_var as the innovation or the marginal variance.
    #[arg(long)]
    pub ar_variance: Option<String>,
    #[arg(long)]
    pub grid_step: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// POET factor count; defaults to ktr.
    #[arg(long)]
    pub poet_factors: Option<usize>,
    /// Compute the oracle dimension for the C-D estimator.
    #[arg(long)]
    pub oracle: Option<bool>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateFlags {
    #[arg(long)]
    pub method: Option<Method>,
    /// CSV with one row per variable and one column per observation.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Skip the first line of the input.
    #[arg(long)]
    pub header: Option<bool>,
    /// Compression dimension for cd; selected by SURE when absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Factor count for poet.
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SureFlags {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub header: Option<bool>,
    #[arg(long)]
    pub grid_min: Option<usize>,
    #[arg(long)]
    pub grid_max: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<usize>,
    /// Moment coefficients: unbiased or published.
    #[arg(long)]
    pub moments: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RiskFlags {
    /// Covariance matrix CSV.
    #[arg(long)]
    pub sigma0: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid_min: Option<usize>,
    #[arg(long)]
    pub grid_max: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleFlags {
    /// Dimension of the random test matrix (ignored with --sigma).
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Matrix CSV to average instead of a random PSD matrix.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Disable block splitting and conjugate pairing.
    #[arg(long)]
    pub plain: Option<bool>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RenderFlags {
    /// Records CSV written by simulate or sweep.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

// Resolved parameters.

fn default_replicates() -> usize {
    100
}
fn default_methods() -> Vec<Method> {
    vec![Method::Cd, Method::At, Method::Poet]
}
fn default_sigma0_sq() -> f64 {
    1.0
}
fn default_ar_error_var() -> f64 {
    0.4
}
fn default_ar_coef() -> f64 {
    0.1
}
fn default_grid_step() -> usize {
    10
}
fn default_delta_grid() -> Vec<f64> {
    log_grid(0.05, 5.0, 50)
}
fn default_folds() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchParams {
    pub setting: u8,
    pub n: usize,
    pub p: usize,
    pub ktr: usize,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub s_list: Option<Vec<f64>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_sigma0_sq")]
    pub sigma0_sq: f64,
    #[serde(default = "default_ar_error_var")]
    pub ar_error_var: f64,
    #[serde(default = "default_ar_coef")]
    pub ar_coef: f64,
    #[serde(default)]
    pub ar_variance: ArVariance,
    #[serde(default = "default_grid_step")]
    pub grid_step: usize,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub poet_factors: Option<usize>,
    #[serde(default = "default_true")]
    pub oracle: bool,
}

impl BenchParams {
    fn sim_config(&self, s: f64) -> Result<SimConfig, CliError> {
        let cfg = SimConfig {
            ar_error_var: self.ar_error_var,
            ar_coef: self.ar_coef,
            ar_variance: self.ar_variance,
            sigma0_sq: self.sigma0_sq,
            ..SimConfig::new(
                Setting::from_number(self.setting)?,
                self.n,
                self.p,
                self.ktr,
                s,
                self.replicates,
                self.seed,
            )
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> Result<MethodOptions, CliError> {
        let at = AtConfig {
            delta_grid: self.delta_grid.clone(),
            folds: self.folds,
        };
        at.validate()?;
        if self.grid_step == 0 {
            return Err(CliError::Usage("grid_step must be >= 1".into()));
        }
        Ok(MethodOptions {
            grid_step: self.grid_step,
            at,
            poet_factors: self.poet_factors,
            oracle: self.oracle,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateParams {
    pub method: Method,
    pub input: PathBuf,
    #[serde(default)]
    pub header: bool,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_grid_step")]
    pub grid_step: usize,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub factors: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SureParams {
    pub input: PathBuf,
    #[serde(default)]
    pub header: bool,
    #[serde(default)]
    pub grid_min: Option<usize>,
    #[serde(default)]
    pub grid_max: Option<usize>,
    #[serde(default = "default_grid_step")]
    pub grid_step: usize,
    #[serde(default)]
    pub moments: MomentConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskParams {
    pub sigma0: PathBuf,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub grid_min: Option<usize>,
    #[serde(default)]
    pub grid_max: Option<usize>,
    #[serde(default = "default_grid_step")]
    pub grid_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    #[serde(default)]
    pub p: Option<usize>,
    pub k: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub sigma: Option<PathBuf>,
    #[serde(default)]
    pub plain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderParams {
    pub input: PathBuf,
}

/// Parameters as actually used and the root seed, if any randomness was drawn.
struct Ran {
    config: Map<String, Value>,
    seed: Option<RngSeed>,
}

struct Out<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Out<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(CliError::io(path))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("serializable output");
        self.write(name, text + "\n")
    }
}

/// Parse `value` as a JSON string into an enum (used for string-valued flags).
fn parse_named<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::String(value.to_string()))
        .map_err(|e| CliError::Usage(format!("{key}: {e}")))
}

fn flags_map<T: Serialize>(flags: &T) -> Result<Map<String, Value>, CliError> {
    to_map(flags)
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::Usage(format!("{what} draws random numbers and needs --seed")))
}

fn sure_grid(p: usize, min: Option<usize>, max: Option<usize>, step: usize) -> Result<Vec<usize>, CliError> {
    if step == 0 {
        return Err(CliError::Usage("grid_step must be >= 1".into()));
    }
    Ok(match (min, max) {
        (None, None) => default_grid(p, step),
        (lo, hi) => k_grid(lo.unwrap_or(step.min(p)), hi.unwrap_or(p), step)?,
    })
}

fn load_data(input: &Path, header: bool) -> Result<DataMatrix, CliError> {
    Ok(center_columns(&DataMatrix::read_csv(input, header)?)?)
}

fn run_bench(params: BenchParams, sweep: bool, out: &mut Out) -> Result<Ran, CliError> {
    let opts = params.options()?;
    let records = if sweep {
        if params.s.is_some() {
            return Err(CliError::Usage("sweep takes s_list, not s".into()));
        }
        let s_values = params
            .s_list
            .clone()
            .ok_or_else(|| CliError::Usage("sweep needs s_list".into()))?;
        let base = params.sim_config(*s_values.first().unwrap_or(&0.5))?;
        for &s in &s_values {
            params.sim_config(s)?;
        }
        sparsity_sweep(&base, &s_values, &params.methods, &opts)?
    } else {
        if params.s_list.is_some() {
            return Err(CliError::Usage("simulate takes s, not s_list".into()));
        }
        let s = params.s.ok_or_else(|| CliError::Usage("simulate needs s".into()))?;
        run_cell(&params.sim_config(s)?, &params.methods, &opts)?
    };
    write_records(&records, &out.path("records.csv"))?;
    write_tables(&records, out)?;
    if sweep {
        emit_plot_data(&records, &out.path("plot_data.csv"))?;
    }
    Ok(Ran {
        config: to_map(&params)?,
        seed: Some(RngSeed::new(params.seed)),
    })
}

fn write_tables(records: &[cdcov::BenchRecord], out: &mut Out) -> Result<(), CliError> {
    let mut text = String::new();
    let mut csv = String::new();
    for (i, group) in group_records(records).iter().enumerate() {
        let table = render_table(group, &TableSpec::covering(group_title(&group[0]), group));
        if i > 0 {
            text.push('\n');
        }
        text.push_str(&table.text);
        let body = if i == 0 { &table.csv[..] } else { table.csv.split_once('\n').map_or("", |x| x.1) };
        let title = group_title(&group[0]);
        for (j, line) in body.lines().enumerate() {
            if i == 0 && j == 0 {
                csv.push_str("table,");
            } else {
                csv.push_str(&format!("\"{title}\","));
            }
            csv.push_str(line);
            csv.push('\n');
        }
    }
    out.write("table.txt", text)?;
    out.write("table.csv", csv)
}

fn run_estimate(params: EstimateParams, out: &mut Out) -> Result<Ran, CliError> {
    let x = load_data(&params.input, params.header)?;
    let cov = cov_pair(&x)?;
    let at = AtConfig {
        delta_grid: params.delta_grid.clone(),
        folds: params.folds,
    };
    let mut meta = Map::new();
    meta.insert("method".into(), json!(params.method));
    meta.insert("p".into(), json!(x.p()));
    meta.insert("n".into(), json!(x.n()));
    let mut seed = None;
    let estimate = match params.method {
        Method::Cd => {
            let k = match params.k {
                Some(k) => {
                    meta.insert("k_source".into(), json!("given"));
                    k
                }
                None => {
                    let grid = sure_grid(x.p(), None, None, params.grid_step)?;
                    let curve = select_k_with(&cov, &grid, MomentConvention::Unbiased)?;
                    meta.insert("k_source".into(), json!("sure"));
                    curve.k_hat
                }
            };
            meta.insert("k".into(), json!(k));
            cd_estimate(&cov.unbiased, k)?
        }
        Method::At => {
            let root = RngSeed::new(require_seed(params.seed, "at")?);
            seed = Some(root);
            let fit = adaptive_threshold(&x, &at, root)?;
            meta.insert("delta".into(), json!(fit.delta));
            fit.estimate
        }
        Method::Poet => {
            let root = RngSeed::new(require_seed(params.seed, "poet")?);
            seed = Some(root);
            let factors = params
                .factors
                .ok_or_else(|| CliError::Usage("poet needs --factors".into()))?;
            let fit = poet(&x, &PoetConfig { factors, residual: at }, root)?;
            meta.insert("factors".into(), json!(factors));
            meta.insert("delta".into(), json!(fit.residual.delta));
            fit.estimate
        }
        Method::Sample => cov.unbiased.clone(),
    };
    estimate.write_csv(&out.path("estimate.csv"))?;
    out.json("estimate.json", &meta)?;
    Ok(Ran {
        config: to_map(&params)?,
        seed,
    })
}

fn run_sure(mut params: SureParams, out: &mut Out) -> Result<Ran, CliError> {
    let x = load_data(&params.input, params.header)?;
    let cov = cov_pair(&x)?;
    let grid = sure_grid(x.p(), params.grid_min, params.grid_max, params.grid_step)?;
    params.grid_min = grid.first().copied();
    params.grid_max = grid.last().copied();
    let curve = select_k_with(&cov, &grid, params.moments)?;
    let mut csv = String::from("k,sure,discrepancy,optimism\n");
    for t in &curve.terms {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            t.k,
            fmt_f64(t.sure),
            fmt_f64(t.discrepancy),
            fmt_f64(t.optimism)
        ));
    }
    out.json("sure_curve.json", &curve)?;
    out.write("sure_curve.csv", csv)?;
    Ok(Ran {
        config: to_map(&params)?,
        seed: None,
    })
}

fn run_risk(mut params: RiskParams, out: &mut Out) -> Result<Ran, CliError> {
    let sigma0 = SymMat::read_csv(&params.sigma0)?;
    let grid = sure_grid(sigma0.dim(), params.grid_min, params.grid_max, params.grid_step)?;
    params.grid_min = grid.first().copied();
    params.grid_max = grid.last().copied();
    let root = RngSeed::new(params.seed);
    let curve = risk_oracle(&sigma0, params.n, &grid, params.reps, root)?;
    let mut csv = String::from("k,risk,se\n");
    for ((k, r), se) in curve.k_grid.iter().zip(&curve.risk_values).zip(&curve.risk_se) {
        csv.push_str(&format!("{k},{},{}\n", fmt_f64(*r), fmt_f64(*se)));
    }
    out.write("risk_curve.csv", csv)?;
    out.json("risk_curve.json", &curve)?;
    Ok(Ran {
        config: to_map(&params)?,
        seed: Some(root),
    })
}

fn run_oracle(mut params: OracleParams, out: &mut Out) -> Result<Ran, CliError> {
    let root = RngSeed::new(params.seed);
    let s = match &params.sigma {
        Some(path) => {
            let s = SymMat::read_csv(path)?;
            if params.p.is_some_and(|p| p != s.dim()) {
                return Err(CliError::Usage(format!("p does not match the {}x{} input matrix", s.dim(), s.dim())));
            }
            s
        }
        None => {
            let p = params
                .p
                .ok_or_else(|| CliError::Usage("oracle-check needs p or sigma".into()))?;
            if p == 0 {
                return Err(CliError::Usage("p must be >= 1".into()));
            }
            random_psd(p, root.with_stream(1))
        }
    };
    params.p = Some(s.dim());
    let scheme = if params.plain { HaarScheme::plain() } else { HaarScheme::default() };
    let report = haar_mc_oracle(&s, params.k, params.samples, root, scheme)?;
    out.json("haar_report.json", &report)?;
    Ok(Ran {
        config: to_map(&params)?,
        seed: Some(root),
    })
}

fn run_render(params: RenderParams, out: &mut Out) -> Result<Ran, CliError> {
    let records = crate::render::read_records(&params.input)?;
    write_tables(&records, out)?;
    emit_plot_data(&records, &out.path("plot_data.csv"))?;
    Ok(Ran {
        config: to_map(&params)?,
        seed: None,
    })
}

/// Resolve parameters, run the command, and write the manifest.
pub fn execute(cmd: Command, threads: usize) -> Result<RunManifest, CliError> {
    let name = cmd.name();
    let started = chrono::Utc::now().to_rfc3339();
    let (common, flags) = match &cmd {
        Command::Simulate { common, flags } | Command::Sweep { common, flags } => (common, flags_map(flags)?),
        Command::Estimate { common, flags } => (common, flags_map(flags)?),
        Command::Sure { common, flags } => (common, flags_map(flags)?),
        Command::RiskOracle { common, flags } => (common, flags_map(flags)?),
        Command::OracleCheck { common, flags } => (common, flags_map(flags)?),
        Command::Render { common, flags } => (common, flags_map(flags)?),
    };
    let file = match &common.config {
        Some(path) => {
            let (map, from) = read_config_file(path)?;
            if let Some(from) = from.filter(|c| c != name) {
                return Err(CliError::Usage(format!(
                    "{} is a manifest for `{from}`, not `{name}`",
                    path.display()
                )));
            }
            map
        }
        None => Map::new(),
    };
    let mut flags = flags;
    // String-valued enum flags are stored in their serialized form.
    if let Some(Value::String(v)) = flags.get("ar_variance") {
        let parsed: ArVariance = parse_named("ar_variance", v)?;
        flags.insert("ar_variance".into(), serde_json::to_value(parsed).expect("enum"));
    }
    if let Some(Value::String(v)) = flags.get("moments") {
        let parsed: MomentConvention = parse_named("moments", v)?;
        flags.insert("moments".into(), serde_json::to_value(parsed).expect("enum"));
    }

    let dir = common.out.clone();
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let mut out = Out {
        dir: &dir,
        written: Vec::new(),
    };
    let ran = match &cmd {
        Command::Simulate { .. } => run_bench(resolve(file, flags)?, false, &mut out)?,
        Command::Sweep { .. } => run_bench(resolve(file, flags)?, true, &mut out)?,
        Command::Estimate { .. } => run_estimate(resolve(file, flags)?, &mut out)?,
        Command::Sure { .. } => run_sure(resolve(file, flags)?, &mut out)?,
        Command::RiskOracle { .. } => run_risk(resolve(file, flags)?, &mut out)?,
        Command::OracleCheck { .. } => run_oracle(resolve(file, flags)?, &mut out)?,
        Command::Render { .. } => run_render(resolve(file, flags)?, &mut out)?,
    };
    let artifacts = out.written;
    let manifest = RunManifest {
        command: name.to_string(),
        config: ran.config,
        seed: ran.seed,
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        artifacts,
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
    };
    manifest.write(&dir)?;
    Ok(manifest)
}
