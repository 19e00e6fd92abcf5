//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biasbench_core::bounds::{
    cover_sandwich_check, examples_bound, feature_learning_counts, featnet_cover_logs, greedy_cover, markov_tail,
    minimum_cover, multitask_examples_bound, random_tiny_instance, tasks_bound, vc_deviation, BoundQuery,
    CoverCenters, DistributionSpec, FiniteFamily, HypothesisSpace, XY,
};
use biasbench_core::environment::{sample_nm, EnvConfig, SharedFeatureEnvironment};
use biasbench_core::featnet::{train_multitask, transfer_evaluate, FeatureNet, TrainConfig};
use biasbench_core::feature_map::OutputSquash;
use biasbench_core::hierbayes::{clarke_barron_decay, cumulative_risk, RiskConfig};
use biasbench_core::{seed, LossKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::error::{usage, HarnessError, Result};
use crate::manifest::{sibling, write_atomic, RunManifest};
use crate::sweep::{run_sweep, SweepConfig, DATA_STREAM, INIT_STREAM, TRANSFER_STREAM};

pub const SEED_ENV: &str = "BIASBENCH_SEED";

#[derive(Debug, Parser)]
#[command(name = "biasbench", version, about = "Learning-to-learn experiments: shared-feature transfer, hierarchical Bayes risk, and sample-complexity bounds")]
pub struct Cli {
    /// Master seed (overridden by BIASBENCH_SEED when set).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Primary output file; related outputs and the run manifest are written
    /// beside it. Without it everything goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config for the subcommand; explicit flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all available).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: Option<u32>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a shared-feature environment.
    GenEnv(GenEnvArgs),
    /// Train a shared-feature net on an (n,m)-sample.
    Train(TrainArgs),
    /// Evaluate frozen features on novel tasks.
    Transfer(TransferArgs),
    /// Transfer error over a grid of task counts and examples per task.
    Sweep(SweepArgs),
    /// Cumulative KL risk of the hierarchical Bayes learner.
    BayesRisk(BayesRiskArgs),
    /// Evaluate a closed-form sample-complexity bound.
    Bound(BoundArgs),
    /// Covering numbers: points on a line, or the cover sandwich on finite families.
    Cover(CoverArgs),
}

fn squash_arg(s: &str) -> std::result::Result<OutputSquash, String> {
    s.parse().map_err(|e: biasbench_core::Error| e.to_string())
}

fn loss_arg(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: biasbench_core::Error| e.to_string())
}

fn centers_arg(s: &str) -> std::result::Result<CoverCenters, String> {
    s.parse().map_err(|e: biasbench_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenEnvArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub d: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub h: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[arg(long)]
    pub head_std: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// identity or logistic_tanh
    #[arg(long, value_parser = squash_arg)]
    pub output_squash: Option<OutputSquash>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub head_refit_every: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        set(&mut cfg.learning_rate, self.lr);
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.init_std, self.init_std);
        set(&mut cfg.head_refit_every, self.head_refit_every);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Environment JSON from gen-env.
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub m: u64,
    /// Hidden width of the learner (default: the environment's).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub h: Option<u64>,
    /// Feature count of the learner (default: the environment's).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub env: PathBuf,
    /// Net snapshot written by train.
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub m_novel: usize,
    #[arg(long, default_value_t = 200)]
    pub m_test: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub m_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub m_novel: Option<usize>,
    #[arg(long)]
    pub m_test: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub target_error: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BayesRiskArgs {
    #[arg(long)]
    pub a: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated shared block (default: derived from the seed).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub pi_star: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub outer_trials: Option<usize>,
    #[arg(long)]
    pub x_draws: Option<usize>,
    /// Clamp the shared block to its true value.
    #[arg(long)]
    pub known_prior: bool,
    /// Fit the single-task decay of the per-trial risk instead.
    #[arg(long)]
    pub decay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Formula {
    Nbound,
    Mbound,
    Nmbound,
    Vc,
    Featcover,
    Featlearn,
    Markov,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, value_enum)]
    pub formula: Formula,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub d_vc: Option<u64>,
    #[arg(long)]
    pub ln_cover_star: Option<f64>,
    #[arg(long)]
    pub ln_cover_nl: Option<f64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub w: Option<u64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub kappa_prime: Option<f64>,
    /// Environment error for the Markov tail.
    #[arg(long)]
    pub er_q: Option<f64>,
    /// Error threshold for the Markov tail.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CoverArgs {
    /// Cover radius (random families draw their own).
    #[arg(long, required_unless_present = "random_families")]
    pub eps: Option<f64>,
    /// Comma-separated points on the real line.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with_all = ["family", "random_families"])]
    pub points: Option<Vec<f64>>,
    /// Family JSON: a list of spaces, each a list of {"grid","values"} tables.
    #[arg(long, requires = "dists")]
    pub family: Option<PathBuf>,
    /// Distribution list JSON: [{"atoms": [[[x, y], p], ...]}, ...].
    #[arg(long)]
    pub dists: Option<PathBuf>,
    /// Run the sandwich check on this many seeded random tiny families.
    #[arg(long, conflicts_with = "family")]
    pub random_families: Option<u64>,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, value_parser = centers_arg, default_value = "external")]
    pub centers: CoverCenters,
    #[arg(long, value_parser = loss_arg, default_value = "zero_one")]
    pub loss: LossKind,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))
}

/// A command's outputs: the primary goes to `--out`, the rest beside it.
struct Outputs {
    primary: Vec<u8>,
    siblings: Vec<(&'static str, Vec<u8>)>,
}

impl Outputs {
    fn single(primary: Vec<u8>) -> Self {
        Outputs { primary, siblings: Vec::new() }
    }

    fn emit(self, out: Option<&Path>) -> Result<Vec<PathBuf>> {
        match out {
            Some(path) => {
                write_atomic(path, &self.primary)?;
                let mut written = vec![path.to_path_buf()];
                for (suffix, bytes) in self.siblings {
                    let p = sibling(path, suffix);
                    write_atomic(&p, &bytes)?;
                    written.push(p);
                }
                Ok(written)
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                let err = |source| HarnessError::Write { path: PathBuf::from("<stdout>"), source };
                stdout.write_all(&self.primary).map_err(err)?;
                for (_, bytes) in self.siblings {
                    stdout.write_all(&bytes).map_err(err)?;
                }
                stdout.flush().map_err(err)?;
                Ok(Vec::new())
            }
        }
    }
}

/// Seed precedence: BIASBENCH_SEED, then --seed, then the config's own seed.
fn master_seed(flag: Option<u64>, config_seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(flag.unwrap_or(config_seed)),
    }
}

fn cmd_gen_env(cli: &Cli, a: &GenEnvArgs) -> Result<(serde_json::Value, u64, Outputs)> {
    let mut cfg: EnvConfig = load_config(cli.config.as_deref())?;
    set(&mut cfg.d, a.d.map(|v| v as usize));
    set(&mut cfg.h, a.h.map(|v| v as usize));
    set(&mut cfg.k, a.k.map(|v| v as usize));
    set(&mut cfg.head_std, a.head_std);
    set(&mut cfg.noise_std, a.noise_std);
    set(&mut cfg.output_squash, a.output_squash);
    cfg.seed = master_seed(cli.seed, cfg.seed)?;
    let env = SharedFeatureEnvironment::generate(&cfg)?;
    Ok((json!(cfg), cfg.seed, Outputs::single(to_json(&env))))
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(serde_json::Value, u64, Outputs)> {
    let env: SharedFeatureEnvironment = read_json(&a.env)?;
    env.validate()?;
    let mut cfg: TrainConfig = load_config(cli.config.as_deref())?;
    a.train.apply(&mut cfg);
    let master = master_seed(cli.seed, cfg.seed)?;
    cfg.seed = seed::derive(master, &[INIT_STREAM]);
    let (n, m) = (a.n as usize, a.m as usize);
    let dims = (a.h.map_or(env.h, |v| v as usize), a.k.map_or(env.k, |v| v as usize));
    let z = sample_nm(&env, n, m, seed::derive(master, &[DATA_STREAM]))?;
    let outcome = train_multitask(&z, dims, &cfg)?;
    let primary = match cli.format {
        Format::Csv => csv_bytes(&["epoch", "loss"], outcome.trace.iter().enumerate())?,
        Format::Json => to_json(&json!({ "final_loss": outcome.final_loss, "trace": outcome.trace })),
    };
    let snapshot = (cli.out.is_some()).then(|| ("net.json", to_json(&outcome.net)));
    let config = json!({ "env": a.env, "n": n, "m": m, "h": dims.0, "k": dims.1, "train": cfg });
    Ok((config, master, Outputs { primary, siblings: snapshot.into_iter().collect() }))
}

fn cmd_transfer(cli: &Cli, a: &TransferArgs) -> Result<(serde_json::Value, u64, Outputs)> {
    let env: SharedFeatureEnvironment = read_json(&a.env)?;
    env.validate()?;
    let net: FeatureNet = read_json(&a.net)?;
    let master = master_seed(cli.seed, 0)?;
    let s = transfer_evaluate(&env, &net, a.m_novel, a.m_test, a.trials, seed::derive(master, &[TRANSFER_STREAM]))?;
    let primary = match cli.format {
        Format::Csv => csv_bytes(&["trial", "test_error"], s.values.iter().enumerate())?,
        Format::Json => to_json(&json!({
            "mean": s.mean, "std": s.std, "stderr": s.stderr(), "values": s.values
        })),
    };
    let config = json!({ "env": a.env, "net": a.net, "m_novel": a.m_novel, "m_test": a.m_test, "trials": a.trials });
    Ok((config, master, Outputs::single(primary)))
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<(serde_json::Value, u64, Outputs)> {
    let mut cfg: SweepConfig = load_config(cli.config.as_deref())?;
    if a.env.is_some() {
        cfg.env_file = a.env.clone();
    }
    set(&mut cfg.n_grid, a.n_grid.clone());
    set(&mut cfg.m_grid, a.m_grid.clone());
    set(&mut cfg.m_novel, a.m_novel);
    set(&mut cfg.m_test, a.m_test);
    set(&mut cfg.trials, a.trials);
    set(&mut cfg.target_error, a.target_error);
    a.train.apply(&mut cfg.train);
    cfg.seed = master_seed(cli.seed, cfg.seed)?;
    cfg.validate()?;
    let env = match &cfg.env_file {
        Some(p) => read_json::<SharedFeatureEnvironment>(p)?,
        None => SharedFeatureEnvironment::generate(&EnvConfig { seed: cfg.seed, ..cfg.env.clone() })?,
    };
    env.validate()?;
    let report = run_sweep(&env, &cfg)?;
    let out = match cli.format {
        Format::Csv => {
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let cells = csv_bytes(
                &["n", "m", "mean_transfer_error", "stderr", "status"],
                report.cells.iter().map(|c| (c.n, c.m, fmt(c.mean_transfer_error), fmt(c.stderr), &c.status)),
            )?;
            let summary = csv_bytes(
                &["n", "m_star"],
                report.m_star.iter().map(|s| (s.n, s.m_star.map_or("none".to_string(), |m| m.to_string()))),
            )?;
            Outputs { primary: cells, siblings: vec![("mstar.csv", summary)] }
        }
        Format::Json => Outputs::single(to_json(&report)),
    };
    Ok((json!(cfg), cfg.seed, out))
}

fn cmd_bayes_risk(cli: &Cli, a: &BayesRiskArgs) -> Result<(serde_json::Value, u64, Outputs)> {
    let mut cfg: RiskConfig = load_config(cli.config.as_deref())?;
    set(&mut cfg.a, a.a);
    set(&mut cfg.b, a.b);
    set(&mut cfg.tau, a.tau);
    set(&mut cfg.rho, a.rho);
    set(&mut cfg.sigma, a.sigma);
    if a.pi_star.is_some() {
        cfg.pi_star = a.pi_star.clone();
    }
    set(&mut cfg.n, a.n);
    set(&mut cfg.m_max, a.m_max);
    set(&mut cfg.outer_trials, a.outer_trials);
    set(&mut cfg.x_draws, a.x_draws);
    cfg.known_prior |= a.known_prior;
    cfg.seed = master_seed(cli.seed, cfg.seed)?;

    if a.decay {
        let fit = clarke_barron_decay(&cfg)?;
        let summary = json!({
            "exponent": fit.exponent, "target": -1.0, "constant": fit.constant, "window": fit.window
        });
        let out = match cli.format {
            Format::Csv => Outputs {
                primary: csv_bytes(&["m", "per_trial_nats"], fit.risk.iter().enumerate())?,
                siblings: vec![("decay.json", to_json(&summary))],
            },
            Format::Json => Outputs::single(to_json(&json!({ "fit": summary, "risk": fit.risk }))),
        };
        return Ok((json!(cfg), cfg.seed, out));
    }

    let curve = cumulative_risk(&cfg)?;
    let target = cfg.target_slope();
    let slope = json!({
        "slope": curve.slope,
        "target": target,
        "ratio": curve.slope.map(|s| s / target),
        "window": curve.slope_window,
        "known_prior": cfg.known_prior,
        "pi_star": curve.pi_star,
        "trials_used": curve.trials_used,
        "failed_trials": curve.failures,
    });
    let out = match cli.format {
        Format::Csv => {
            let rows = (0..curve.m_values.len())
                .map(|i| (curve.n, curve.m_values[i], curve.cumulative[i], curve.per_trial[i], curve.stderr[i]));
            Outputs {
                primary: csv_bytes(&["n", "m", "cumulative_nats", "per_trial_nats", "stderr"], rows)?,
                siblings: vec![("slope.json", to_json(&slope))],
            }
        }
        Format::Json => Outputs::single(to_json(&json!({ "slope": slope, "curve": curve }))),
    };
    Ok((json!(cfg), cfg.seed, out))
}

fn cmd_bound(cli: &Cli, a: &BoundArgs) -> Result<(serde_json::Value, u64, Outputs)> {
    let mut q: BoundQuery = load_config(cli.config.as_deref())?;
    set(&mut q.epsilon, a.eps);
    set(&mut q.delta, a.delta);
    set(&mut q.n, a.n);
    set(&mut q.m, a.m);
    set(&mut q.d_vc, a.d_vc);
    set(&mut q.ln_cover_star, a.ln_cover_star);
    set(&mut q.ln_cover_nl, a.ln_cover_nl);
    set(&mut q.k, a.k);
    set(&mut q.w, a.w);
    set(&mut q.kappa, a.kappa);
    set(&mut q.kappa_prime, a.kappa_prime);
    let name = a.formula.to_possible_value().expect("named").get_name().to_string();
    let (inputs, value) = match a.formula {
        Formula::Nbound => (json!(q), json!(tasks_bound(&q)?)),
        Formula::Mbound => (json!(q), json!(examples_bound(&q)?)),
        Formula::Nmbound => (json!(q), json!(multitask_examples_bound(&q)?)),
        Formula::Vc => (json!(q), json!(vc_deviation(&q)?)),
        Formula::Featcover => (json!(q), json!(featnet_cover_logs(&q)?)),
        Formula::Featlearn => (json!(q), json!(feature_learning_counts(&q)?)),
        Formula::Markov => {
            let (er_q, gamma) = match (a.er_q, a.gamma) {
                (Some(e), Some(g)) => (e, g),
                _ => return Err(usage("markov needs --er-q and --gamma")),
            };
            (json!({ "er_q": er_q, "gamma": gamma }), json!(markov_tail(er_q, gamma)?))
        }
    };
    let report = json!({ "inputs": inputs, "value": value, "formula": name });
    Ok((inputs, 0, Outputs::single(to_json(&report))))
}

fn cmd_cover(cli: &Cli, a: &CoverArgs) -> Result<(serde_json::Value, u64, Outputs)> {
    if let Some(points) = &a.points {
        let eps = a.eps.expect("clap requires --eps");
        let dist: Vec<Vec<f64>> = points.iter().map(|p| points.iter().map(|q| (p - q).abs()).collect()).collect();
        let greedy = greedy_cover(&dist, eps)?;
        let minimum = minimum_cover(&dist, eps)?;
        let report = json!({
            "epsilon": eps,
            "size": greedy.len(),
            "centers": greedy.iter().map(|&i| points[i]).collect::<Vec<_>>(),
            "minimum_size": minimum.len(),
        });
        return Ok((json!({ "points": points, "eps": eps }), 0, Outputs::single(to_json(&report))));
    }
    if let Some(count) = a.random_families {
        let master = master_seed(cli.seed, 0)?;
        let mut rows = Vec::new();
        for i in 0..count {
            let inst = random_tiny_instance(seed::derive(master, &[i]));
            let r = cover_sandwich_check(&inst.family, &inst.distributions, inst.n, inst.epsilon, a.centers)?;
            rows.push(r);
        }
        let violations = rows.iter().filter(|r| !r.passed()).count();
        let strict = rows.iter().filter(|r| r.strict_middle()).count();
        let report = json!({
            "families": count,
            "centers": a.centers,
            "violations": violations,
            "strict_middle": strict,
            "reports": rows,
        });
        return Ok((json!({ "random_families": count, "centers": a.centers }), master, Outputs::single(to_json(&report))));
    }
    let (Some(fam), Some(dists)) = (&a.family, &a.dists) else {
        return Err(usage("cover needs --points, --random-families, or --family with --dists"));
    };
    let spaces: Vec<HypothesisSpace> = read_json(fam)?;
    let family = FiniteFamily::new(spaces, a.loss)?;
    let dlist: Vec<DistributionSpec<XY>> = read_json(dists)?;
    let eps = a.eps.expect("clap requires --eps");
    let report = cover_sandwich_check(&family, &dlist, a.n, eps, a.centers)?;
    let config = json!({ "family": fam, "dists": dists, "n": a.n, "eps": eps, "centers": a.centers, "loss": a.loss });
    Ok((config, 0, Outputs::single(to_json(&report))))
}

fn dispatch(cli: &Cli) -> Result<(serde_json::Value, u64, Outputs)> {
    match &cli.command {
        Command::GenEnv(a) => cmd_gen_env(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Transfer(a) => cmd_transfer(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::BayesRisk(a) => cmd_bayes_risk(cli, a),
        Command::Bound(a) => cmd_bound(cli, a),
        Command::Cover(a) => cmd_cover(cli, a),
    }
}

/// Runs a parsed command, bracketing it with a manifest when `--out` is set.
pub fn run(cli: &Cli, command_line: Vec<String>) -> Result<()> {
    let manifest_path = cli.out.as_deref().map(|o| sibling(o, "manifest.json"));
    let mut manifest = RunManifest::start(command_line, serde_json::Value::Null, cli.seed.unwrap_or(0));
    if let Some(p) = &manifest_path {
        manifest.write(p)?;
    }
    let job = || dispatch(cli);
    let result = match cli.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j as usize)
            .build()
            .map_err(|e| usage(format!("cannot start {j} workers: {e}")))?
            .install(job),
        None => job(),
    };
    match result {
        Ok((config, master, outputs)) => {
            let written = outputs.emit(cli.out.as_deref())?;
            if let Some(p) = &manifest_path {
                manifest.config = config;
                manifest.master_seed = master;
                manifest.finish("ok", &written)?;
                manifest.write(p)?;
            }
            Ok(())
        }
        Err(e) => {
            if let Some(p) = &manifest_path {
                manifest.finish(format!("failed: {e}"), &[])?;
                manifest.write(p)?;
            }
            Err(e)
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let line = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, line) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
