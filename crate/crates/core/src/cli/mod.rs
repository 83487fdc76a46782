//! Command-line interface: `simulate`, `fit`, `loglik`, `test` and `bench`.
//!
//! Exit status is 0 on success, 1 for usage, configuration and input errors,
//! and 2 for numerical failures.

pub mod config;
pub mod io;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::error::{Error, Result};
use crate::inference::{lrt, wald_test};
use crate::likelihood::loglik_importance;
use crate::model::{Dataset, ParamLayout, Theta};
use crate::numerics::rng::{Purpose, RngStream};
use crate::numerics::special::logit;
use crate::saem::fit;
use crate::sampler::SamplerMode;
use crate::simstudy::{
    builtin_setting, generate_dataset, reduce_theta, run_replications, type1_study,
    write_metrics_csv, SettingSpec,
};

use config::RunConfig;
use output::{
    DataSummary, FitOutput, LoglikFileOutput, LoglikOutput, NamedTest, ParamEstimate, TestOutput,
    SCHEMA, VERSION,
};

pub use io::{load_dataset_csv, read_dataset, write_dataset, write_dataset_csv, ColumnSchema};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "zibbmr",
    version,
    about = "Zero-inflated beta-binomial mixed regression by SAEM"
)]
pub struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from a built-in setting and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit the model to a CSV dataset.
    Fit(FitArgs),
    /// Recompute the importance-sampling log-likelihood of a saved fit.
    Loglik(LoglikArgs),
    /// Wald and likelihood-ratio tests of coefficients pinned to zero.
    Test(TestArgs),
    /// Monte Carlo replication study for a built-in setting.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampler mode: original or augmented.
    #[arg(long)]
    pub mode: Option<SamplerMode>,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub setting: u8,
    /// Optional JSON file for the realized true parameters.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Use this setting's default starting value and chain count.
    #[arg(long)]
    pub setting: Option<u8>,
}

#[derive(Debug, Args)]
pub struct LoglikArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Result file written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub setting: Option<u8>,
    /// Comma-separated coefficients pinned to zero, e.g. alpha_1,beta_1.
    #[arg(long, value_delimiter = ',', required = true)]
    pub null: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub setting: u8,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Run the Type-I error study (Wald and LRT) instead of parameter recovery.
    #[arg(long)]
    pub type1: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Shape(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Loglik(a) => cmd_loglik(a),
        Command::Test(a) => cmd_test(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn setting_with_overrides(id: u8, cfg: &RunConfig) -> Result<SettingSpec> {
    let mut spec = builtin_setting(id)?;
    if let Some(n) = cfg.n_subjects {
        spec.n_subjects = n;
    }
    if let Some(t) = cfg.t_per_subject {
        spec.t_per_subject = t;
    }
    if let Some(init) = &cfg.init_theta {
        spec.theta_init = init.to_theta()?;
    }
    Ok(spec)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Data-driven starting value when neither a setting nor `init_theta` is given.
pub fn default_init(data: &Dataset) -> Theta {
    let n = data.n_observations() as f64;
    let positives: Vec<_> = data.observations().filter(|o| o.y > 0).collect();
    let frac = (positives.len() as f64 / n).clamp(0.01, 0.99);
    let mean_u = if positives.is_empty() {
        0.5
    } else {
        positives
            .iter()
            .map(|o| o.y as f64 / o.s as f64)
            .sum::<f64>()
            / positives.len() as f64
    };
    Theta {
        phi: 10.0,
        a: logit(frac).expect("clamped"),
        b: logit(mean_u.clamp(0.01, 0.99)).expect("clamped"),
        alpha: vec![0.0; data.dim_x],
        beta: vec![0.0; data.dim_z],
        sigma1_sq: 0.25,
        sigma2_sq: 0.25,
    }
}

fn resolve_init(cfg: &RunConfig, setting: Option<u8>, data: &Dataset) -> Result<(Theta, usize)> {
    let (init, chains) = match (&cfg.init_theta, setting) {
        (Some(t), s) => (
            t.to_theta()?,
            s.map(builtin_setting).transpose()?.map_or(5, |s| s.chains),
        ),
        (None, Some(id)) => {
            let s = builtin_setting(id)?;
            (s.theta_init, s.chains)
        }
        (None, None) => (default_init(data), 5),
    };
    if init.alpha.len() != data.dim_x || init.beta.len() != data.dim_z {
        return Err(Error::Config(format!(
            "starting value has {} / {} coefficients but the data have {} / {} covariates",
            init.alpha.len(),
            init.beta.len(),
            data.dim_x,
            data.dim_z
        )));
    }
    Ok((init, chains))
}

fn loglik_stream(seed: u64, which: u64) -> RngStream {
    RngStream::for_purpose(seed, Purpose::Loglik, 0, which)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let spec = setting_with_overrides(a.setting, &cfg)?;
    let mut stream = RngStream::for_purpose(cfg.seed, Purpose::Generate, 0, 0);
    let (data, truth) = generate_dataset(&spec, &mut stream)?;
    write_dataset_csv(&a.common.out, &data)?;
    if let Some(p) = &a.truth {
        write_json(p, &truth)?;
    }
    info!(
        "wrote {} subjects to {}",
        data.n_subjects(),
        a.common.out.display()
    );
    Ok(())
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let data = load_dataset_csv(&a.data, &cfg.column_schema())?;
    let (init, chains) = resolve_init(&cfg, a.setting, &data)?;
    let result = fit(&data, &init, &cfg.fit_config(chains))?;
    let is = cfg.is_config();
    let (value, mc_se) = loglik_importance(
        &data,
        &result.theta,
        &result.moments,
        &is,
        &loglik_stream(cfg.seed, 0),
    )?;
    let ll = LoglikOutput {
        value,
        mc_se,
        nu: is.nu,
        k: is.k_samples,
        seed: cfg.seed,
    };
    let summary = DataSummary::new(&data, Some(a.data.display().to_string()));
    write_json(
        &a.common.out,
        &FitOutput::new(&result, &cfg, summary, &init, Some(ll)),
    )
}

pub fn cmd_loglik(a: &LoglikArgs) -> Result<()> {
    let saved: FitOutput = serde_json::from_str(&std::fs::read_to_string(&a.fit)?)?;
    if saved.schema != SCHEMA {
        return Err(Error::Config(format!(
            "unsupported result schema '{}'",
            saved.schema
        )));
    }
    let mut cfg = saved.config.clone();
    if let Some(c) = &a.common.config {
        cfg = RunConfig::load(c)?;
    }
    let seed = a.common.seed.unwrap_or(saved.seed);
    let data = load_dataset_csv(&a.data, &cfg.column_schema())?;
    let is = cfg.is_config();
    let (value, mc_se) = loglik_importance(
        &data,
        &saved.theta,
        &saved.moments,
        &is,
        &loglik_stream(seed, 0),
    )?;
    write_json(
        &a.common.out,
        &LoglikFileOutput {
            schema: SCHEMA.into(),
            version: VERSION.into(),
            command: "loglik".into(),
            seed,
            data: DataSummary::new(&data, Some(a.data.display().to_string())),
            theta: saved.theta,
            loglik: LoglikOutput {
                value,
                mc_se,
                nu: is.nu,
                k: is.k_samples,
                seed,
            },
        },
    )
}

/// Map `alpha_j` / `beta_j` names to 0-based covariate columns.
pub fn parse_null(names: &[String], layout: &ParamLayout) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for n in names {
        let bad = || {
            Error::Config(format!(
                "cannot pin '{n}': only alpha_j and beta_j coefficients can be tested"
            ))
        };
        let (kind, j) = n.split_once('_').ok_or_else(bad)?;
        let j: usize = j.parse().map_err(|_| bad())?;
        let (list, dim) = match kind {
            "alpha" => (&mut xs, layout.dim_x),
            "beta" => (&mut zs, layout.dim_z),
            _ => return Err(bad()),
        };
        if j == 0 || j > dim {
            return Err(Error::Config(format!(
                "'{n}' is out of range (model has {dim} such coefficients)"
            )));
        }
        if list.contains(&(j - 1)) {
            return Err(Error::Config(format!("'{n}' listed twice")));
        }
        list.push(j - 1);
    }
    Ok((xs, zs))
}

fn estimates(fit: &crate::saem::FitResult) -> Vec<ParamEstimate> {
    let v = fit.theta.to_vec();
    fit.names
        .iter()
        .enumerate()
        .map(|(k, n)| ParamEstimate {
            name: n.clone(),
            estimate: v[k],
            se: fit.se.as_ref().map(|s| s[k]),
        })
        .collect()
}

pub fn cmd_test(a: &TestArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let data = load_dataset_csv(&a.data, &cfg.column_schema())?;
    let (init, chains) = resolve_init(&cfg, a.setting, &data)?;
    let layout = init.layout();
    let (xs, zs) = parse_null(&a.null, &layout)?;
    let fc = cfg.fit_config(chains);
    let is = cfg.is_config();

    let full = fit(&data, &init, &fc)?;
    let reduced_data = data.drop_columns(&xs, &zs);
    let reduced = fit(&reduced_data, &reduce_theta(&init, &xs, &zs), &fc)?;
    let (ll_f, se_f) = loglik_importance(
        &data,
        &full.theta,
        &full.moments,
        &is,
        &loglik_stream(cfg.seed, 0),
    )?;
    let (ll_r, se_r) = loglik_importance(
        &reduced_data,
        &reduced.theta,
        &reduced.moments,
        &is,
        &loglik_stream(cfg.seed, 1),
    )?;

    let values = full.theta.to_vec();
    let mut wald = Vec::new();
    for name in &a.null {
        let k = layout.index_of(name).expect("validated name");
        let test = match &full.se {
            Some(se) => NamedTest {
                parameter: name.clone(),
                result: Some(wald_test(values[k], se[k], 0.0)?),
                unavailable: None,
            },
            None => {
                let why = full
                    .diagnostics
                    .se_unavailable
                    .clone()
                    .unwrap_or_else(|| "no standard errors".into());
                warn!("Wald test for {name} skipped: {why}");
                NamedTest {
                    parameter: name.clone(),
                    result: None,
                    unavailable: Some(why),
                }
            }
        };
        wald.push(test);
    }
    let df = (xs.len() + zs.len()) as u32;
    let joint = lrt(ll_f, ll_r, df, (se_f * se_f + se_r * se_r).sqrt())?;
    let ll = |value, mc_se| LoglikOutput {
        value,
        mc_se,
        nu: is.nu,
        k: is.k_samples,
        seed: cfg.seed,
    };
    write_json(
        &a.common.out,
        &TestOutput {
            schema: SCHEMA.into(),
            version: VERSION.into(),
            command: "test".into(),
            seed: cfg.seed,
            config: cfg.clone(),
            data: DataSummary::new(&data, Some(a.data.display().to_string())),
            null: a.null.clone(),
            full: estimates(&full),
            reduced: estimates(&reduced),
            loglik_full: ll(ll_f, se_f),
            loglik_reduced: ll(ll_r, se_r),
            wald,
            lrt: joint,
        },
    )
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let spec = setting_with_overrides(a.setting, &cfg)?;
    let fc = cfg.fit_config(spec.chains);
    let file = std::fs::File::create(&a.common.out)?;
    if a.type1 {
        let outcome = type1_study(
            &spec,
            &fc,
            &cfg.is_config(),
            a.reps,
            &[0.05, 0.01],
            cfg.seed,
        )?;
        let mut w = csv::Writer::from_writer(file);
        for row in &outcome.rows {
            w.serialize(row)?;
        }
        w.flush()?;
    } else {
        let outcome = run_replications(&spec, &fc, a.reps, cfg.seed)?;
        write_metrics_csv(file, &spec.id.to_string(), &outcome.metrics, outcome.n_fail)?;
    }
    Ok(())
}
