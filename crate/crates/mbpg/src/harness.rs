//! Command-line experiment harness: config resolution, seeded multi-run
//! execution, and lossless CSV/JSON export of learning curves.
//!
//! Metrics follow the probe-count convention: the x-axis of every exported
//! curve is the cumulative number of environment state transitions, and the
//! reported score is the undiscounted episode return averaged over each
//! iteration's batch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{CartPole, Environment, TabularMdp};
use crate::optimizers::{train, Algorithm, RunRow, ScheduleParams, TrainConfig};
use crate::policy::{MlpSoftmax, Policy, TabularSoftmax};
use crate::{Error, Result};

/// Exact column order of every exported CSV.
pub const CSV_HEADER: &str = "iteration,system_probes,avg_return,grad_norm,eta,beta,wall_ms";

/// Hidden-layer widths of the built-in categorical policy used for the
/// classic-control environment.
pub const CARTPOLE_HIDDEN: [usize; 2] = [8, 8];

/// Which environment a run trains on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvSpec {
    CartPole,
    /// A tabular environment loaded from a JSON description file.
    Tabular(PathBuf),
}

impl std::str::FromStr for EnvSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "cartpole" {
            return Ok(EnvSpec::CartPole);
        }
        if let Some(path) = s.strip_prefix("tabular:") {
            if path.is_empty() {
                return Err(Error::Invalid {
                    what: "env".to_string(),
                    why: "tabular environment needs a file path, e.g. tabular:mdp.json".to_string(),
                });
            }
            return Ok(EnvSpec::Tabular(PathBuf::from(path)));
        }
        Err(Error::Invalid {
            what: "env".to_string(),
            why: format!("unknown environment {s:?}; expected cartpole or tabular:<path>"),
        })
    }
}

impl std::fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvSpec::CartPole => f.write_str("cartpole"),
            EnvSpec::Tabular(path) => write!(f, "tabular:{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Invalid {
                what: "format".to_string(),
                why: format!("unknown format {other:?}; expected csv or json"),
            }),
        }
    }
}

/// Fully resolved invocation: training hyperparameters plus everything the
/// suite runner and exporter need.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub train: TrainConfig,
    pub env: EnvSpec,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub format: ExportFormat,
}

/// Provenance attached to every exported record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    /// Package name and version that produced the record.
    pub build: String,
    pub env: String,
    /// Every hyperparameter the run actually used.
    pub config: TrainConfig,
}

/// One seed's complete learning curve plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub metadata: RunMetadata,
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    /// Rows must be ordered by iteration, strictly increasing in probe
    /// count, and entirely finite.
    pub fn check_invariants(&self) -> Result<()> {
        let mut last_probes = 0u64;
        for (i, row) in self.rows.iter().enumerate() {
            if row.iteration != i as u64 + 1 {
                return Err(Error::Invalid {
                    what: "record rows".to_string(),
                    why: format!("row {i} has iteration {}", row.iteration),
                });
            }
            if row.system_probes <= last_probes {
                return Err(Error::Invalid {
                    what: "record rows".to_string(),
                    why: format!(
                        "system_probes not strictly increasing at iteration {}",
                        row.iteration
                    ),
                });
            }
            last_probes = row.system_probes;
            for (name, v) in [
                ("avg_return", row.avg_return),
                ("grad_norm", row.grad_norm),
                ("eta", row.eta),
                ("beta", row.beta),
            ] {
                if !v.is_finite() {
                    return Err(Error::Invalid {
                        what: "record rows".to_string(),
                        why: format!("{name} is {v} at iteration {}", row.iteration),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A seed whose run aborted; the suite keeps going.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedFailure {
    pub seed: u64,
    pub reason: String,
}

/// Result of a multi-seed suite: successful records and flagged failures,
/// both in the order the seeds were requested.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<SeedFailure>,
    /// Importance weights that overflowed to the saturation value across all
    /// successful runs.
    pub saturated_weights: u64,
}

/// Mean/spread learning curves on a fixed probe grid, for plotting a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    /// Upper edge (inclusive) of each probe bucket.
    pub bucket_end_probes: Vec<u64>,
    /// `per_seed_return[s][b]`: seed `s`'s latest average return at or before
    /// bucket end `b`; NaN before the seed's first logged iteration.
    pub per_seed_return: Vec<Vec<f64>>,
    /// Arithmetic mean over seeds with a value in the bucket.
    pub mean_return: Vec<f64>,
    /// Population standard deviation over the same seeds.
    pub std_return: Vec<f64>,
}

const DEFAULT_PROBE_BUDGET: u64 = 500_000;
const DEFAULT_BATCH: usize = 50;
const DEFAULT_K: f64 = 0.75;
const DEFAULT_M: f64 = 2.0;
const DEFAULT_C: f64 = 2.0;
const DEFAULT_LR: f64 = 0.01;
const DEFAULT_CLIP: (f64, f64) = (1e-4, 1e4);
const DEFAULT_HVP_DELTA: f64 = 1e-4;
const DEFAULT_SEED: u64 = 1;

#[derive(Parser, Debug, Default)]
#[command(
    name = "mbpg",
    version,
    about = "Momentum-based variance-reduced policy gradient trainer",
    long_about = "Trains a policy with one of four gradient methods and exports \
                  per-iteration learning curves keyed by environment probe counts."
)]
struct Cli {
    /// Algorithm: is-mbpg, ha-mbpg, is-mbpg-star, or vanilla-pg.
    #[arg(long)]
    algo: Option<String>,
    /// Environment: cartpole or tabular:<path-to-json>.
    #[arg(long)]
    env: Option<String>,
    /// Step-size numerator.
    #[arg(long)]
    k: Option<f64>,
    /// Step-size offset inside the cube root.
    #[arg(long)]
    m: Option<f64>,
    /// Momentum constant: beta = min(c * eta^2, 1).
    #[arg(long)]
    c: Option<f64>,
    /// Constant learning rate for vanilla-pg.
    #[arg(long)]
    lr: Option<f64>,
    /// Episodes sampled per iteration.
    #[arg(long)]
    batch: Option<usize>,
    /// Maximum episode length.
    #[arg(long)]
    horizon: Option<usize>,
    /// Discount factor in (0, 1].
    #[arg(long)]
    gamma: Option<f64>,
    /// Total environment-transition budget per run.
    #[arg(long)]
    probes: Option<u64>,
    /// Seed for a single run.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list for a suite, e.g. 1,2,3.
    #[arg(long)]
    seeds: Option<String>,
    /// Lower edge of the importance-weight clip window.
    #[arg(long)]
    clip_low: Option<f64>,
    /// Upper edge of the importance-weight clip window.
    #[arg(long)]
    clip_high: Option<f64>,
    /// Base step for finite-difference curvature probes.
    #[arg(long)]
    hvp_delta: Option<f64>,
    /// Export path; suites add a _seed<N> suffix per CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export format: csv or json.
    #[arg(long)]
    format: Option<String>,
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config-file schema: same keys as the flags, all optional, unknown keys
/// rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    algo: Option<String>,
    env: Option<String>,
    k: Option<f64>,
    m: Option<f64>,
    c: Option<f64>,
    lr: Option<f64>,
    batch: Option<usize>,
    horizon: Option<usize>,
    gamma: Option<f64>,
    probes: Option<u64>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    clip_low: Option<f64>,
    clip_high: Option<f64>,
    hvp_delta: Option<f64>,
    out: Option<PathBuf>,
    format: Option<String>,
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|part| {
            part.trim().parse::<u64>().map_err(|_| Error::Invalid {
                what: "seeds".to_string(),
                why: format!("{part:?} is not an unsigned integer"),
            })
        })
        .collect()
}

fn check_distinct_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Invalid {
            what: "seeds".to_string(),
            why: "at least one seed is required".to_string(),
        });
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::Invalid {
                what: "seeds".to_string(),
                why: format!("seed {} requested more than once", pair[0]),
            });
        }
    }
    Ok(())
}

/// Parse a full argument list (including the program name) into a resolved
/// config. Resolution order per key: command line, then config file, then
/// built-in defaults; for the discount factor and horizon the default comes
/// from the selected environment.
pub fn parse_config<I, T>(args: I) -> Result<HarnessConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Invalid {
        what: "arguments".to_string(),
        why: e.to_string(),
    })?;
    resolve_config(cli)
}

fn resolve_config(cli: Cli) -> Result<HarnessConfig> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Invalid {
                what: format!("config file {}", path.display()),
                why: e.to_string(),
            })?
        }
        None => FileConfig::default(),
    };

    let env_text = cli
        .env
        .or(file.env)
        .unwrap_or_else(|| "cartpole".to_string());
    let env: EnvSpec = env_text.parse()?;

    // Discount factor and horizon default to what the environment declares;
    // for the tabular case that means reading the description file.
    let (env_horizon, env_gamma) = match &env {
        EnvSpec::CartPole => {
            let cp = CartPole::default();
            (cp.horizon(), cp.gamma())
        }
        EnvSpec::Tabular(path) => {
            let mdp = TabularMdp::from_json_file(&path.display().to_string())?;
            (mdp.horizon(), mdp.gamma())
        }
    };

    let algorithm: Algorithm = cli
        .algo
        .or(file.algo)
        .unwrap_or_else(|| "is-mbpg".to_string())
        .parse()?;

    // A seed choice on the command line (either flag) replaces the file's
    // entirely, so `--seed 7` overrides a seed list from the config file.
    let seeds: Vec<u64> = if cli.seeds.is_some() || cli.seed.is_some() {
        match (&cli.seeds, cli.seed) {
            (Some(list), _) => parse_seed_list(list)?,
            (None, Some(s)) => vec![s],
            (None, None) => unreachable!(),
        }
    } else if let Some(list) = file.seeds {
        list
    } else {
        vec![file.seed.unwrap_or(DEFAULT_SEED)]
    };
    check_distinct_seeds(&seeds)?;

    let clip_low = cli.clip_low.or(file.clip_low).unwrap_or(DEFAULT_CLIP.0);
    let clip_high = cli.clip_high.or(file.clip_high).unwrap_or(DEFAULT_CLIP.1);

    let train = TrainConfig {
        algorithm,
        batch_size: cli.batch.or(file.batch).unwrap_or(DEFAULT_BATCH),
        probe_budget: cli.probes.or(file.probes).unwrap_or(DEFAULT_PROBE_BUDGET),
        horizon: cli.horizon.or(file.horizon).unwrap_or(env_horizon),
        gamma: cli.gamma.or(file.gamma).unwrap_or(env_gamma),
        schedule: ScheduleParams {
            k: cli.k.or(file.k).unwrap_or(DEFAULT_K),
            m: cli.m.or(file.m).unwrap_or(DEFAULT_M),
            c: cli.c.or(file.c).unwrap_or(DEFAULT_C),
        },
        learning_rate: cli.lr.or(file.lr).unwrap_or(DEFAULT_LR),
        clip: Some((clip_low, clip_high)),
        hvp_delta: cli
            .hvp_delta
            .or(file.hvp_delta)
            .unwrap_or(DEFAULT_HVP_DELTA),
        seed: seeds[0],
    };
    train.validate()?;

    let format: ExportFormat = match cli.format.or(file.format) {
        Some(text) => text.parse()?,
        None => ExportFormat::Csv,
    };

    Ok(HarnessConfig {
        train,
        env,
        seeds,
        out: cli.out.or(file.out),
        format,
    })
}

fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Run one seed per thread and collect results in seed order. Each run owns
/// its generator and optimizer state, so the outcome is independent of
/// scheduling; an aborted seed is flagged and the suite continues.
pub fn run_suite<E, P>(
    base: &TrainConfig,
    env: &E,
    policy: &P,
    seeds: &[u64],
    env_name: &str,
) -> Result<SuiteOutcome>
where
    E: Environment + Sync,
    E::State: Send,
    E::Action: Send,
    P: Policy<State = E::State, Action = E::Action> + Sync,
{
    check_distinct_seeds(seeds)?;
    let results: Vec<std::result::Result<(RunRecord, u64), SeedFailure>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    scope.spawn(move || {
                        let mut cfg = base.clone();
                        cfg.seed = seed;
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        match train(&cfg, env, policy, &mut rng) {
                            Ok(out) => Ok((
                                RunRecord {
                                    metadata: RunMetadata {
                                        seed,
                                        build: build_id(),
                                        env: env_name.to_string(),
                                        config: cfg,
                                    },
                                    rows: out.rows,
                                },
                                out.saturated_weights,
                            )),
                            Err(e) => Err(SeedFailure {
                                seed,
                                reason: e.to_string(),
                            }),
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .zip(seeds)
                .map(|(handle, &seed)| {
                    handle.join().unwrap_or_else(|_| {
                        Err(SeedFailure {
                            seed,
                            reason: "run panicked".to_string(),
                        })
                    })
                })
                .collect()
        });

    let mut outcome = SuiteOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        saturated_weights: 0,
    };
    for result in results {
        match result {
            Ok((record, saturated)) => {
                outcome.saturated_weights += saturated;
                outcome.records.push(record);
            }
            Err(failure) => outcome.failures.push(failure),
        }
    }
    Ok(outcome)
}

/// Aggregate per-seed curves onto `num_buckets` equal probe buckets spanning
/// `(0, probe_budget]`. Within a bucket each seed contributes its most recent
/// logged average return (a step function of probes); the mean is the
/// arithmetic mean over seeds that have logged by then.
pub fn seed_bucket_curve(
    records: &[RunRecord],
    probe_budget: u64,
    num_buckets: usize,
) -> SuiteSummary {
    assert!(num_buckets >= 1, "need at least one bucket");
    let bucket_end_probes: Vec<u64> = (1..=num_buckets as u128)
        .map(|i| ((probe_budget as u128 * i) / num_buckets as u128) as u64)
        .collect();

    let per_seed_return: Vec<Vec<f64>> = records
        .iter()
        .map(|record| {
            let mut out = Vec::with_capacity(num_buckets);
            let mut idx = 0;
            let mut latest = f64::NAN;
            for &end in &bucket_end_probes {
                while idx < record.rows.len() && record.rows[idx].system_probes <= end {
                    latest = record.rows[idx].avg_return;
                    idx += 1;
                }
                out.push(latest);
            }
            out
        })
        .collect();

    let mut mean_return = Vec::with_capacity(num_buckets);
    let mut std_return = Vec::with_capacity(num_buckets);
    for b in 0..num_buckets {
        let values: Vec<f64> = per_seed_return
            .iter()
            .map(|curve| curve[b])
            .filter(|v| !v.is_nan())
            .collect();
        if values.is_empty() {
            mean_return.push(f64::NAN);
            std_return.push(f64::NAN);
        } else {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            mean_return.push(mean);
            std_return.push(var.sqrt());
        }
    }

    SuiteSummary {
        bucket_end_probes,
        per_seed_return,
        mean_return,
        std_return,
    }
}

fn fmt_row(row: &RunRow) -> String {
    // `{}` on f64 prints the shortest decimal that parses back to the same
    // bits, so the CSV is lossless and byte-stable across runs.
    format!(
        "{},{},{},{},{},{},{}",
        row.iteration,
        row.system_probes,
        row.avg_return,
        row.grad_norm,
        row.eta,
        row.beta,
        row.wall_ms
    )
}

/// Render one record's rows as CSV text.
pub fn rows_to_csv(rows: &[RunRow]) -> String {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&fmt_row(row));
        text.push('\n');
    }
    text
}

/// Parse CSV text produced by [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<RunRow>> {
    let invalid = |why: String| Error::Invalid {
        what: "csv".to_string(),
        why,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(invalid(format!(
                "bad header {:?}; expected {CSV_HEADER:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(invalid(format!(
                "line {} has {} fields, expected 7",
                i + 2,
                fields.len()
            )));
        }
        let int = |s: &str| -> Result<u64> {
            s.parse::<u64>()
                .map_err(|_| invalid(format!("line {}: {:?} is not an integer", i + 2, s)))
        };
        let real = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| invalid(format!("line {}: {:?} is not a number", i + 2, s)))
        };
        rows.push(RunRow {
            iteration: int(fields[0])?,
            system_probes: int(fields[1])?,
            avg_return: real(fields[2])?,
            grad_norm: real(fields[3])?,
            eta: real(fields[4])?,
            beta: real(fields[5])?,
            wall_ms: int(fields[6])?,
        });
    }
    Ok(rows)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn seed_suffixed(path: &Path, seed: u64) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}_seed{seed}"),
    };
    path.with_file_name(name)
}

/// Write records to disk and return the paths written.
///
/// CSV: one file per record, suffixed `_seed<N>` when there are several; an
/// empty record list writes a header-only file. JSON: one file holding the
/// full list of records, rows and metadata together.
pub fn export_records(
    records: &[RunRecord],
    path: &Path,
    format: ExportFormat,
) -> Result<Vec<PathBuf>> {
    match format {
        ExportFormat::Csv => match records {
            [] => {
                write_text(path, &rows_to_csv(&[]))?;
                Ok(vec![path.to_path_buf()])
            }
            [single] => {
                write_text(path, &rows_to_csv(&single.rows))?;
                Ok(vec![path.to_path_buf()])
            }
            many => {
                let mut written = Vec::with_capacity(many.len());
                for record in many {
                    let target = seed_suffixed(path, record.metadata.seed);
                    write_text(&target, &rows_to_csv(&record.rows))?;
                    written.push(target);
                }
                Ok(written)
            }
        },
        ExportFormat::Json => {
            let text = serde_json::to_string_pretty(records)?;
            write_text(path, &text)?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

/// Read back a JSON export produced by [`export_records`].
pub fn records_from_json_file(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn print_suite(cfg: &HarnessConfig, outcome: &SuiteOutcome) {
    println!(
        "algo={} env={} seeds={} batch={} horizon={} gamma={} probes={}",
        cfg.train.algorithm,
        cfg.env,
        cfg.seeds.len(),
        cfg.train.batch_size,
        cfg.train.horizon,
        cfg.train.gamma,
        cfg.train.probe_budget
    );
    for record in &outcome.records {
        let last = record.rows.last();
        println!(
            "seed {}: {} iterations, {} probes, final avg_return {}",
            record.metadata.seed,
            record.rows.len(),
            last.map_or(0, |r| r.system_probes),
            last.map_or(f64::NAN, |r| r.avg_return)
        );
    }
    for failure in &outcome.failures {
        println!("seed {}: FAILED ({})", failure.seed, failure.reason);
    }
    if outcome.saturated_weights > 0 {
        println!(
            "note: {} importance weight(s) saturated",
            outcome.saturated_weights
        );
    }
}

fn run_resolved(cfg: &HarnessConfig) -> Result<i32> {
    let started = std::time::Instant::now();
    let env_name = cfg.env.to_string();
    let outcome = match &cfg.env {
        EnvSpec::CartPole => {
            let env = CartPole::with_horizon(cfg.train.horizon, cfg.train.gamma);
            let policy = MlpSoftmax::new(
                CartPole::STATE_DIM,
                CARTPOLE_HIDDEN.to_vec(),
                CartPole::NUM_ACTIONS,
            );
            run_suite(&cfg.train, &env, &policy, &cfg.seeds, &env_name)?
        }
        EnvSpec::Tabular(path) => {
            let mdp = TabularMdp::from_json_file(&path.display().to_string())?;
            let policy = TabularSoftmax::new(mdp.num_states, mdp.num_actions);
            run_suite(&cfg.train, &mdp, &policy, &cfg.seeds, &env_name)?
        }
    };
    // Wall time goes to stderr only: exported artifacts must be byte-stable.
    eprintln!("suite finished in {:.3?}", started.elapsed());

    print_suite(cfg, &outcome);
    if let Some(path) = &cfg.out {
        for written in export_records(&outcome.records, path, cfg.format)? {
            println!("wrote {}", written.display());
        }
    }
    Ok(if outcome.failures.is_empty() { 0 } else { 2 })
}

/// Full command-line entry point; returns the process exit code: 0 on
/// success, 1 on configuration errors, 2 when at least one seed failed.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let cfg = match resolve_config(cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return 1;
        }
    };
    match run_resolved(&cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> Vec<String> {
        let mut v = vec!["mbpg".to_string()];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    }

    fn row(iteration: u64, probes: u64, ret: f64) -> RunRow {
        RunRow {
            iteration,
            system_probes: probes,
            avg_return: ret,
            grad_norm: 0.5,
            eta: 0.1,
            beta: 0.9,
            wall_ms: 0,
        }
    }

    fn record(seed: u64, rows: Vec<RunRow>) -> RunRecord {
        RunRecord {
            metadata: RunMetadata {
                seed,
                build: build_id(),
                env: "cartpole".to_string(),
                config: TrainConfig {
                    algorithm: Algorithm::IsMbpg,
                    batch_size: 1,
                    probe_budget: 100,
                    horizon: 10,
                    gamma: 0.99,
                    schedule: ScheduleParams {
                        k: 0.75,
                        m: 2.0,
                        c: 2.0,
                    },
                    learning_rate: 0.01,
                    clip: Some(DEFAULT_CLIP),
                    hvp_delta: 1e-4,
                    seed,
                },
            },
            rows,
        }
    }

    #[test]
    fn env_spec_parses_both_forms() {
        assert_eq!("cartpole".parse::<EnvSpec>().unwrap(), EnvSpec::CartPole);
        assert_eq!(
            "tabular:examples/mdp.json".parse::<EnvSpec>().unwrap(),
            EnvSpec::Tabular(PathBuf::from("examples/mdp.json"))
        );
        assert!("mountaincar".parse::<EnvSpec>().is_err());
        assert!("tabular:".parse::<EnvSpec>().is_err());
    }

    #[test]
    fn defaults_match_the_reference_cartpole_row() {
        let cfg = parse_config(args(&[])).unwrap();
        assert_eq!(cfg.train.algorithm, Algorithm::IsMbpg);
        assert_eq!(cfg.env, EnvSpec::CartPole);
        assert_eq!(cfg.train.batch_size, 50);
        assert_eq!(cfg.train.horizon, 100);
        assert_eq!(cfg.train.gamma, 0.99);
        assert_eq!(cfg.train.probe_budget, 500_000);
        assert_eq!(cfg.train.schedule.k, 0.75);
        assert_eq!(cfg.train.schedule.m, 2.0);
        assert_eq!(cfg.train.schedule.c, 2.0);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.clip, Some((1e-4, 1e4)));
        assert_eq!(cfg.train.hvp_delta, 1e-4);
        assert_eq!(cfg.seeds, vec![1]);
        assert_eq!(cfg.format, ExportFormat::Csv);
        assert!(cfg.out.is_none());
    }

    #[test]
    fn full_reference_invocation_parses() {
        let cfg = parse_config(args(&[
            "--algo",
            "is-mbpg",
            "--env",
            "cartpole",
            "--k",
            "0.75",
            "--c",
            "2",
            "--m",
            "2",
            "--batch",
            "50",
            "--horizon",
            "100",
            "--gamma",
            "0.99",
            "--probes",
            "500000",
            "--seed",
            "1",
        ]))
        .unwrap();
        assert_eq!(cfg.train.algorithm, Algorithm::IsMbpg);
        assert_eq!(cfg.seeds, vec![1]);
        assert_eq!(cfg.train.seed, 1);
    }

    #[test]
    fn vanilla_shorthand_parses() {
        let cfg = parse_config(args(&["--algo", "vanilla-pg", "--lr", "0.01"])).unwrap();
        assert_eq!(cfg.train.algorithm, Algorithm::VanillaPg);
        assert_eq!(cfg.train.learning_rate, 0.01);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(parse_config(args(&["--batch", "0"])).is_err());
        assert!(parse_config(args(&["--algo", "sgd"])).is_err());
        assert!(parse_config(args(&["--gamma", "1.5"])).is_err());
        assert!(parse_config(args(&["--seeds", "1,2,1"])).is_err());
        assert!(parse_config(args(&["--seeds", "1,x"])).is_err());
        assert!(parse_config(args(&["--format", "yaml"])).is_err());
        assert!(parse_config(args(&["--clip-low", "0"])).is_err());
    }

    #[test]
    fn cli_overrides_file_and_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"k": 0.5, "batch": 7, "seeds": [3, 4], "format": "json"}"#,
        )
        .unwrap();
        let p = path.display().to_string();

        let cfg = parse_config(args(&["--config", &p])).unwrap();
        assert_eq!(cfg.train.schedule.k, 0.5);
        assert_eq!(cfg.train.batch_size, 7);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.format, ExportFormat::Json);

        let cfg = parse_config(args(&["--config", &p, "--k", "0.9"])).unwrap();
        assert_eq!(cfg.train.schedule.k, 0.9);
        assert_eq!(cfg.train.batch_size, 7);

        // A command-line seed choice replaces the file's seed list outright.
        let cfg = parse_config(args(&["--config", &p, "--seed", "7"])).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
    }

    #[test]
    fn unknown_config_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"learning_rate": 0.01}"#).unwrap();
        let err = parse_config(args(&["--config", &path.display().to_string()])).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn tabular_env_supplies_gamma_and_horizon_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mdp.json");
        let mdp = TabularMdp::two_state_example();
        std::fs::write(&path, serde_json::to_string(&mdp).unwrap()).unwrap();
        let spec = format!("tabular:{}", path.display());

        let cfg = parse_config(args(&["--env", &spec])).unwrap();
        assert_eq!(cfg.train.horizon, 3);
        assert_eq!(cfg.train.gamma, 0.9);

        let cfg = parse_config(args(&["--env", &spec, "--gamma", "0.5"])).unwrap();
        assert_eq!(cfg.train.gamma, 0.5);
        assert_eq!(cfg.train.horizon, 3);
    }

    #[test]
    fn csv_round_trips_byte_identically_on_awkward_floats() {
        let rows = vec![
            RunRow {
                iteration: 1,
                system_probes: 50,
                avg_return: 0.1 + 0.2,
                grad_norm: f64::MIN_POSITIVE,
                eta: 1.0 / 3.0,
                beta: 1e-300,
                wall_ms: 0,
            },
            RunRow {
                iteration: 2,
                system_probes: 100,
                avg_return: -123456.78901234567,
                #[allow(clippy::excessive_precision)] // a 17-digit mantissa is the awkward case
                grad_norm: 9.999999999999999e22,
                eta: 0.5952753944880748,
                beta: 1.0,
                wall_ms: 0,
            },
        ];
        let text = rows_to_csv(&rows);
        let parsed = rows_from_csv(&text).unwrap();
        assert_eq!(parsed, rows);
        assert_eq!(rows_to_csv(&parsed), text);
    }

    #[test]
    fn empty_export_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let written = export_records(&[], &path, ExportFormat::Csv).unwrap();
        assert_eq!(written, vec![path.clone()]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn multi_record_csv_gets_seed_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let records = vec![
            record(1, vec![row(1, 10, 3.0)]),
            record(2, vec![row(1, 10, 4.0)]),
        ];
        let written = export_records(&records, &path, ExportFormat::Csv).unwrap();
        assert_eq!(
            written,
            vec![
                dir.path().join("run_seed1.csv"),
                dir.path().join("run_seed2.csv")
            ]
        );
        for p in &written {
            assert!(p.exists());
        }
    }

    #[test]
    fn json_export_round_trips_records_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let records = vec![
            record(1, vec![row(1, 10, 0.1 + 0.2), row(2, 20, 1.0 / 3.0)]),
            record(2, vec![row(1, 10, -4.0)]),
        ];
        export_records(&records, &path, ExportFormat::Json).unwrap();
        let back = records_from_json_file(&path).unwrap();
        assert_eq!(back, records);
        // Metadata carries the seed and every hyperparameter.
        let text = std::fs::read_to_string(&path).unwrap();
        for key in [
            "\"seed\"",
            "\"algorithm\"",
            "\"batch_size\"",
            "\"probe_budget\"",
            "\"horizon\"",
            "\"gamma\"",
            "\"k\"",
            "\"m\"",
            "\"c\"",
            "\"learning_rate\"",
            "\"clip\"",
            "\"hvp_delta\"",
            "\"build\"",
            "\"env\"",
        ] {
            assert!(text.contains(key), "missing {key} in JSON export");
        }
    }

    #[test]
    fn record_invariants_catch_disorder_and_nonfinite_rows() {
        let good = record(1, vec![row(1, 10, 1.0), row(2, 20, 2.0)]);
        good.check_invariants().unwrap();
        let stalled = record(1, vec![row(1, 10, 1.0), row(2, 10, 2.0)]);
        assert!(stalled.check_invariants().is_err());
        let misnumbered = record(1, vec![row(2, 10, 1.0)]);
        assert!(misnumbered.check_invariants().is_err());
        let inf = record(1, vec![row(1, 10, f64::INFINITY)]);
        assert!(inf.check_invariants().is_err());
    }

    #[test]
    fn bucket_curve_carries_forward_and_averages() {
        let a = record(1, vec![row(1, 10, 1.0), row(2, 35, 3.0)]);
        let b = record(2, vec![row(1, 25, 5.0)]);
        let summary = seed_bucket_curve(&[a, b], 40, 4);
        assert_eq!(summary.bucket_end_probes, vec![10, 20, 30, 40]);
        assert_eq!(summary.per_seed_return[0], vec![1.0, 1.0, 1.0, 3.0]);
        assert!(summary.per_seed_return[1][0].is_nan());
        assert_eq!(summary.per_seed_return[1][3], 5.0);
        // First bucket: only seed 1 has logged anything.
        assert_eq!(summary.mean_return[0], 1.0);
        // Final bucket: plain arithmetic mean of the two curves.
        assert_eq!(summary.mean_return[3], 4.0);
        assert_eq!(summary.std_return[3], 1.0);
    }

    #[test]
    fn bucket_mean_equals_per_seed_average_exactly() {
        let records = vec![
            record(1, vec![row(1, 5, 0.3), row(2, 12, 0.7)]),
            record(2, vec![row(1, 6, -0.1), row(2, 11, 0.9)]),
            record(3, vec![row(1, 4, 2.2), row(2, 13, -3.3)]),
        ];
        let summary = seed_bucket_curve(&records, 16, 8);
        for b in 0..8 {
            let values: Vec<f64> = summary
                .per_seed_return
                .iter()
                .map(|c| c[b])
                .filter(|v| !v.is_nan())
                .collect();
            if values.is_empty() {
                assert!(summary.mean_return[b].is_nan());
            } else {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                assert!((summary.mean_return[b] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn suite_runs_each_seed_and_stays_deterministic() {
        let mdp = TabularMdp::two_state_example();
        let policy = TabularSoftmax::new(2, 2);
        let base = TrainConfig {
            algorithm: Algorithm::IsMbpg,
            batch_size: 2,
            probe_budget: 120,
            horizon: 3,
            gamma: 0.9,
            schedule: ScheduleParams {
                k: 0.75,
                m: 2.0,
                c: 2.0,
            },
            learning_rate: 0.01,
            clip: Some(DEFAULT_CLIP),
            hvp_delta: 1e-4,
            seed: 0,
        };
        let a = run_suite(&base, &mdp, &policy, &[5, 9], "tabular:test").unwrap();
        assert_eq!(a.records.len(), 2);
        assert!(a.failures.is_empty());
        assert_eq!(a.records[0].metadata.seed, 5);
        assert_eq!(a.records[1].metadata.seed, 9);
        for record in &a.records {
            record.check_invariants().unwrap();
            assert_eq!(record.metadata.config.seed, record.metadata.seed);
        }
        let b = run_suite(&base, &mdp, &policy, &[5, 9], "tabular:test").unwrap();
        assert_eq!(a.records, b.records);

        assert!(run_suite(&base, &mdp, &policy, &[], "t").is_err());
        assert!(run_suite(&base, &mdp, &policy, &[1, 1], "t").is_err());
    }

    #[test]
    fn aborted_seeds_are_flagged_instead_of_failing_the_suite() {
        let mdp = TabularMdp::two_state_example();
        let policy = TabularSoftmax::new(2, 2);
        let base = TrainConfig {
            algorithm: Algorithm::VanillaPg,
            batch_size: 1,
            probe_budget: 60,
            horizon: 3,
            gamma: 0.9,
            schedule: ScheduleParams {
                k: 0.75,
                m: 2.0,
                c: 2.0,
            },
            learning_rate: 1e12,
            clip: Some(DEFAULT_CLIP),
            hvp_delta: 1e-4,
            seed: 0,
        };
        let outcome = run_suite(&base, &mdp, &policy, &[1, 2, 3], "tabular:test").unwrap();
        assert!(outcome.records.is_empty());
        assert_eq!(outcome.failures.len(), 3);
        assert!(outcome.failures[0].reason.contains("diverged"));
    }

    #[test]
    fn seed_suffix_handles_extensionless_paths() {
        assert_eq!(
            seed_suffixed(Path::new("out/run.csv"), 3),
            PathBuf::from("out/run_seed3.csv")
        );
        assert_eq!(
            seed_suffixed(Path::new("out/run"), 3),
            PathBuf::from("out/run_seed3")
        );
    }
}
