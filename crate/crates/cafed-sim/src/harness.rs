//! Experiment configuration, presets, summary metrics, and the CLI:
//! `simulate`, `population`, `bounds`, `optimize-q`, `sweep`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::availability::{build_population, sample_trace};
use crate::bounds::{
    gamma_heterogeneity, kkt_objective, optimize_weights_kkt, theorem1_bound, theorem2_bound,
    theorem3_bound, ProblemConstants,
};
use crate::cafed::CaFedConfig;
use crate::data::generate_synthetic_for_groups;
use crate::engine::{biased_importance, run_experiment, RunMetrics, RunResult};
use crate::error::{Error, Result};
use crate::model::{minimize_weighted, smoothness_constant, LinearModel, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[value(name = "cafed")]
    #[serde(rename = "cafed")]
    CaFed,
    Unbiased,
}

impl StrategyKind {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::CaFed => "cafed",
            StrategyKind::Unbiased => "unbiased",
        }
    }
}

/// Population shape parameters: `g` is the fraction of less-available
/// clients, `nu` the fraction of correlated clients, `eps` the eigenvalue
/// floor/ceiling margin.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AvailabilityParams {
    pub g: f64,
    pub nu: f64,
    pub eps: f64,
}

/// Full description of one experiment. Serializable; its canonical JSON
/// encoding is hashed into every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub n_clients: usize,
    pub t_rounds: usize,
    pub seeds: Vec<u64>,
    pub strategy: StrategyKind,
    /// Grants strategies the true `(pi, lambda2)` instead of estimates.
    pub oracle_availability: bool,
    pub lr_local: f64,
    pub lr_server: f64,
    pub e_steps: usize,
    pub batch_size: usize,
    pub availability: AvailabilityParams,
    pub cafed: CaFedConfig,
    pub dim: usize,
    pub samples_per_client: usize,
    pub ridge: f64,
    pub radius: f64,
    pub mnist_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The synthetic-dataset reference setup: 24 clients, two availability
    /// and two correlation classes (g = 0.4, nu = 0.9, eps = 1e-2), ridge
    /// 1e-2, tau = 0, beta = 0.2, three seeds, 500 rounds.
    pub fn preset_synthetic() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            n_clients: 24,
            t_rounds: 500,
            seeds: vec![1, 2, 3],
            strategy: StrategyKind::CaFed,
            oracle_availability: true,
            lr_local: 1.0,
            lr_server: 2.0,
            e_steps: 10,
            batch_size: 32,
            availability: AvailabilityParams { g: 0.4, nu: 0.9, eps: 1e-2 },
            cafed: CaFedConfig::default(),
            dim: 10,
            samples_per_client: 150,
            ridge: 1e-2,
            radius: 100.0,
            mnist_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Parameter("n_clients must be >= 1".into()));
        }
        if self.t_rounds < 2 {
            return Err(Error::Parameter("t_rounds must be >= 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Parameter("at least one seed required".into()));
        }
        if !(0.0 < self.availability.g && self.availability.g < 1.0) {
            return Err(Error::Parameter("g must lie in (0, 1)".into()));
        }
        if !(0.0 < self.availability.nu && self.availability.nu <= 1.0) {
            return Err(Error::Parameter("nu must lie in (0, 1]".into()));
        }
        if !(0.0 < self.availability.eps && self.availability.eps < 0.5) {
            return Err(Error::Parameter("eps must lie in (0, 0.5)".into()));
        }
        if self.lr_local < 0.0 || self.lr_server <= 0.0 {
            return Err(Error::Parameter("learning rates must be positive".into()));
        }
        if self.e_steps == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("e_steps and batch_size must be >= 1".into()));
        }
        if self.dim == 0 || self.samples_per_client < 10 {
            return Err(Error::Parameter("dim >= 1 and samples_per_client >= 10 required".into()));
        }
        if self.ridge <= 0.0 || self.radius <= 0.0 {
            return Err(Error::Parameter("ridge and radius must be positive".into()));
        }
        self.cafed.validate()
    }

    /// SHA-256 of the canonical JSON encoding, hex, first 16 characters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

/// The learning-rate grid searched in the reference setup:
/// `lr_local in {1e-3, 1e-2, 1e-1} x lr_server in {1e-2, 1e-1, 1}`.
pub fn learning_rate_grid() -> Vec<(f64, f64)> {
    let local = [1e-3, 1e-2, 1e-1];
    let server = [1e-2, 1e-1, 1.0];
    local
        .iter()
        .flat_map(|&l| server.iter().map(move |&s| (l, s)))
        .collect()
}

/// Summary metrics from an accuracy series: max over rounds, mean over all
/// rounds, population standard deviation over the second half.
pub fn compute_metrics(accuracy: &[f64]) -> Result<RunMetrics> {
    let t = accuracy.len();
    if t < 2 {
        return Err(Error::Parameter("accuracy series must have length >= 2".into()));
    }
    let max_accuracy = accuracy.iter().cloned().fold(f64::NAN, f64::max);
    let time_avg_accuracy = accuracy.iter().sum::<f64>() / t as f64;
    let tail = &accuracy[(t + 1) / 2..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / tail.len() as f64;
    Ok(RunMetrics { max_accuracy, time_avg_accuracy, second_half_std: var.sqrt() })
}

fn join_compact(values: impl Iterator<Item = String>) -> String {
    values.collect::<Vec<_>>().join(";")
}

/// Round-level CSV in the documented column order. Every row repeats the
/// config hash and seed; `q` and `excluded` are semicolon-joined.
pub fn write_round_csv(
    path: &Path,
    result: &RunResult,
    config_hash: &str,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "config_hash",
        "seed",
        "strategy",
        "round",
        "n_active",
        "n_participating",
        "q",
        "excluded",
        "gamma_prime_hat",
        "test_accuracy",
        "test_loss",
        "running_avg_accuracy",
    ])?;
    let mut acc_sum = 0.0;
    for log in &result.rounds {
        acc_sum += log.test_accuracy;
        let n_active = log.active.iter().filter(|&&a| a).count();
        let n_participating = log.participating.iter().filter(|&&p| p).count();
        let q = join_compact(log.q.iter().map(|v| format!("{v:.12e}")));
        let (excluded, gamma_prime) = match &log.snapshot {
            Some(s) => (
                join_compact(s.excluded.iter().map(|k| k.to_string())),
                format!("{:.12e}", s.gamma_prime_hat),
            ),
            None => (String::new(), String::new()),
        };
        writer.write_record([
            config_hash.to_string(),
            result.seed.to_string(),
            result.strategy.clone(),
            log.round.to_string(),
            n_active.to_string(),
            n_participating.to_string(),
            q,
            excluded,
            gamma_prime,
            format!("{:.12e}", log.test_accuracy),
            format!("{:.12e}", log.test_loss),
            format!("{:.12e}", acc_sum / log.round as f64),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricsRecord<'a> {
    config_hash: &'a str,
    seed: u64,
    strategy: &'a str,
    metrics: &'a RunMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
}

pub fn write_metrics_json(
    path: &Path,
    result: &RunResult,
    config_hash: &str,
    with_timestamp: bool,
) -> Result<()> {
    let timestamp_unix = if with_timestamp {
        Some(
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        )
    } else {
        None
    };
    let record = MetricsRecord {
        config_hash,
        seed: result.seed,
        strategy: &result.strategy,
        metrics: &result.metrics,
        timestamp_unix,
    };
    fs::write(path, serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(
    name = "cafed",
    about = "Simulator for federated learning under correlated client availability"
)]
struct Cli {
    /// Suppress progress messages.
    #[arg(long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Print extra diagnostics (config hash, resolved paths).
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// JSON config file; defaults to the synthetic preset when omitted.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset ("synthetic").
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_rounds: Option<usize>,
    #[arg(long)]
    n_clients: Option<usize>,
    #[arg(long)]
    lr_local: Option<f64>,
    #[arg(long)]
    lr_server: Option<f64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, self.preset.as_deref()) {
            (Some(path), _) => ExperimentConfig::from_json_file(path)?,
            (None, Some("synthetic")) | (None, None) => ExperimentConfig::preset_synthetic(),
            (None, Some(other)) => {
                return Err(Error::Parameter(format!(
                    "unknown preset '{other}' (available: synthetic)"
                )))
            }
        };
        if let Some(s) = self.strategy {
            config.strategy = s;
        }
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(t) = self.t_rounds {
            config.t_rounds = t;
        }
        if let Some(n) = self.n_clients {
            config.n_clients = n;
        }
        if let Some(lr) = self.lr_local {
            config.lr_local = lr;
        }
        if let Some(lr) = self.lr_server {
            config.lr_server = lr;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment; emit a round CSV and a metrics JSON per seed.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; falls back to $CAFED_OUT, then ".".
        #[arg(long)]
        out: Option<PathBuf>,
        /// Omit the timestamp field for byte-identical reruns.
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Emit the population spec and a sampled availability trace as JSON.
    Population {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the error bounds for a config at the zero initializer.
    Bounds {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the aggregation-weight problem from a JSON description.
    OptimizeQ {
        /// JSON with fields a_diag, b, pi, q_total.
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over (lr_local, lr_server); emits one CSV row per cell.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; falls back to $CAFED_OUT, then ".".
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolve an output directory: explicit flag, else $CAFED_OUT, else ".".
fn resolve_out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os("CAFED_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightProblem {
    pub a_diag: Vec<f64>,
    pub b: f64,
    pub pi: Vec<f64>,
    pub q_total: f64,
}

#[derive(Debug, Serialize)]
struct BoundsReport {
    config_hash: String,
    seed: u64,
    l: f64,
    mu: f64,
    kappa: f64,
    gamma: f64,
    gamma_prime: f64,
    f_b_gap_at_zero: f64,
    theorem1: f64,
    theorem3: f64,
    theorem2: f64,
    lambda_p: f64,
    /// The optimization-error bound uses the Markov state-space size 2^N, which is very loose
    /// for large N; reported as evaluated.
    m_states: f64,
}

fn bounds_report(config: &ExperimentConfig, seed: u64) -> Result<BoundsReport> {
    let population = build_population(
        config.n_clients,
        config.availability.g,
        config.availability.nu,
        config.availability.eps,
        seed,
    )?;
    let fed = generate_synthetic_for_groups(
        &population.group_ids(),
        config.dim,
        config.samples_per_client,
        seed.wrapping_add(1),
    )?;
    let alpha = fed.target_weights.clone();
    let pi = population.stationary_activity()?;
    let q: Vec<f64> = alpha.iter().zip(&pi).map(|(a, p)| a / p).collect();
    let p = biased_importance(&pi, &q)?;

    let model_config = ModelConfig {
        dim: config.dim,
        n_classes: fed.n_classes,
        ridge: config.ridge,
        radius: config.radius,
        bias: true,
    };
    let l = smoothness_constant(&fed, &model_config);
    let mu = config.ridge;
    let kappa = l / mu;
    let (gamma, gamma_prime) = gamma_heterogeneity(&fed, &alpha, &p, model_config)?;

    // gap of the biased objective at the zero initializer
    let (w_b, f_b_star) = minimize_weighted(&fed, &p, model_config, 1e-9, None)?;
    let zero = LinearModel::new(model_config)?;
    let f_b_zero = crate::model::weighted_loss(&zero, &fed, &p)?;
    let f_b_gap = (f_b_zero - f_b_star).max(0.0);
    let w0_dist_sq: f64 = w_b.weights().iter().map(|w| w * w).sum();

    let theorem1 = theorem1_bound(kappa, f_b_gap, &alpha, &p, gamma)?;
    let theorem3 = theorem3_bound(kappa, f_b_gap, &alpha, &p, gamma_prime)?;

    let included = vec![true; config.n_clients];
    let chains = population.chains();
    let lambda_p = crate::availability::product_chain_lambda(&chains, &included)?;
    let m_states = 2f64.powi(config.n_clients as i32);
    let consts = ProblemConstants {
        l,
        mu,
        d: 1.0,
        g: 1.0,
        h: 1.0,
        sigma: vec![0.0; config.n_clients],
        gamma,
        gamma_prime,
        c_p: 1.0,
        t_p: 1,
        m_states,
        e_steps: config.e_steps,
        w0_dist_sq,
    };
    let eta: Vec<f64> =
        (1..=config.t_rounds).map(|t| config.lr_local / (t as f64).sqrt()).collect();
    let theorem2 = theorem2_bound(&consts, &q, &pi, &eta, lambda_p)?;

    Ok(BoundsReport {
        config_hash: config.hash(),
        seed,
        l,
        mu,
        kappa,
        gamma,
        gamma_prime,
        f_b_gap_at_zero: f_b_gap,
        theorem1,
        theorem3,
        theorem2,
        lambda_p,
        m_states,
    })
}

/// Entry point used by the `cafed` binary; exposed for in-process testing.
pub fn run_cli<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Parameter(e.to_string()))?;
    match cli.command {
        Command::Simulate { config, out, no_timestamp } => {
            let config = config.build()?;
            let out = resolve_out_dir(out);
            fs::create_dir_all(&out)?;
            let hash = config.hash();
            if cli.verbose {
                eprintln!("config hash {hash}, output dir {}", out.display());
            }
            for &seed in &config.seeds {
                let result = run_experiment(&config, seed)?;
                let label = config.strategy.label();
                let csv_path = out.join(format!("rounds_{label}_{seed}.csv"));
                write_round_csv(&csv_path, &result, &hash)?;
                write_metrics_json(
                    &out.join(format!("metrics_{label}_{seed}.json")),
                    &result,
                    &hash,
                    !no_timestamp,
                )?;
                if !cli.quiet {
                    eprintln!(
                        "seed {seed}: time-avg accuracy {:.4}, wrote {}",
                        result.metrics.time_avg_accuracy,
                        csv_path.display()
                    );
                }
            }
            Ok(())
        }
        Command::Population { config, out } => {
            let config = config.build()?;
            let seed = config.seeds[0];
            let population = build_population(
                config.n_clients,
                config.availability.g,
                config.availability.nu,
                config.availability.eps,
                seed,
            )?;
            let trace = sample_trace(&population, config.t_rounds, seed)?;
            let body = serde_json::json!({
                "config_hash": config.hash(),
                "seed": seed,
                "population": population,
                "trace": trace,
            });
            emit(out.as_deref(), &serde_json::to_string_pretty(&body)?)
        }
        Command::Bounds { config, out } => {
            let config = config.build()?;
            let report = bounds_report(&config, config.seeds[0])?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }
        Command::OptimizeQ { problem, out } => {
            let text = fs::read_to_string(&problem)?;
            let spec: WeightProblem = serde_json::from_str(&text)?;
            let q = optimize_weights_kkt(&spec.a_diag, spec.b, &spec.pi, spec.q_total)?;
            let value = kkt_objective(&spec.a_diag, spec.b, &spec.pi, &q);
            let body = serde_json::json!({ "q": q, "objective": value });
            emit(out.as_deref(), &serde_json::to_string_pretty(&body)?)
        }
        Command::Sweep { config, out } => {
            let base = config.build()?;
            let out = resolve_out_dir(out);
            fs::create_dir_all(&out)?;
            let mut writer = csv::Writer::from_path(out.join("sweep.csv"))?;
            writer.write_record([
                "config_hash",
                "lr_local",
                "lr_server",
                "strategy",
                "seed",
                "max_accuracy",
                "time_avg_accuracy",
                "second_half_std",
            ])?;
            for (lr_local, lr_server) in learning_rate_grid() {
                let mut config = base.clone();
                config.lr_local = lr_local;
                config.lr_server = lr_server;
                let hash = config.hash();
                for &seed in &config.seeds {
                    let result = run_experiment(&config, seed)?;
                    writer.write_record([
                        hash.clone(),
                        format!("{lr_local:e}"),
                        format!("{lr_server:e}"),
                        config.strategy.label().to_string(),
                        seed.to_string(),
                        format!("{:.12e}", result.metrics.max_accuracy),
                        format!("{:.12e}", result.metrics.time_avg_accuracy),
                        format!("{:.12e}", result.metrics.second_half_std),
                    ])?;
                }
            }
            writer.flush()?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn preset_round_trips_and_validates() {
        let config = ExperimentConfig::preset_synthetic();
        config.validate().unwrap();
        let json = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config.hash(), back.hash());
        assert_eq!(config.n_clients, 24);
        assert_abs_diff_eq!(config.availability.g, 0.4);
        assert_abs_diff_eq!(config.availability.nu, 0.9);
        assert_abs_diff_eq!(config.cafed.beta, 0.2);
        assert_eq!(config.cafed.tau, 0.0);
        assert_eq!(config.seeds.len(), 3);
    }

    #[test]
    fn preset_population_pi_values() {
        let config = ExperimentConfig::preset_synthetic();
        let population = build_population(
            config.n_clients,
            config.availability.g,
            config.availability.nu,
            config.availability.eps,
            1,
        )
        .unwrap();
        let pis = population.stationary_activity().unwrap();
        for pi in pis {
            assert!(
                (pi - 0.9).abs() < 1e-12 || (pi - 0.1).abs() < 1e-12,
                "unexpected pi {pi}"
            );
        }
    }

    #[test]
    fn grid_matches_reference_setup() {
        let grid = learning_rate_grid();
        assert_eq!(grid.len(), 9);
        assert!(grid.contains(&(1e-3, 1e-2)));
        assert!(grid.contains(&(1e-1, 1.0)));
    }

    #[test]
    fn metrics_examples() {
        let m = compute_metrics(&[0.4, 0.4, 0.4]).unwrap();
        assert_abs_diff_eq!(m.max_accuracy, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(m.time_avg_accuracy, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(m.second_half_std, 0.0, epsilon = 1e-15);

        let m = compute_metrics(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(m.max_accuracy, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.time_avg_accuracy, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.second_half_std, 0.5, epsilon = 1e-15);

        assert!(compute_metrics(&[0.5]).is_err());
    }

    #[test]
    fn metrics_linear_ramp_closed_form() {
        let t = 100;
        let series: Vec<f64> = (0..t).map(|i| i as f64 / (t - 1) as f64).collect();
        let m = compute_metrics(&series).unwrap();
        assert_abs_diff_eq!(m.time_avg_accuracy, 0.5, epsilon = 1e-12);
        // second half is a uniform grid of 50 points with spacing 1/99;
        // population std of {0..n-1} spaced h is h*sqrt((n^2-1)/12)
        let h = 1.0 / 99.0;
        let n = 50.0f64;
        let expected = h * ((n * n - 1.0) / 12.0).sqrt();
        assert_abs_diff_eq!(m.second_half_std, expected, epsilon = 1e-12);
    }

    #[test]
    fn config_hash_changes_with_content() {
        let a = ExperimentConfig::preset_synthetic();
        let mut b = a.clone();
        b.lr_local *= 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn cli_rejects_unknown_subcommand() {
        assert!(run_cli(["cafed", "frobnicate"]).is_err());
    }

    #[test]
    fn cli_simulate_deterministic_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        for out in [&out1, &out2] {
            run_cli([
                "cafed",
                "simulate",
                "--strategy",
                "unbiased",
                "--seed",
                "1",
                "--t-rounds",
                "8",
                "--n-clients",
                "4",
                "--no-timestamp",
                "--out",
                out.to_str().unwrap(),
            ])
            .unwrap();
        }
        let csv1 = fs::read(out1.join("rounds_unbiased_1.csv")).unwrap();
        let csv2 = fs::read(out2.join("rounds_unbiased_1.csv")).unwrap();
        assert!(!csv1.is_empty());
        assert_eq!(csv1, csv2);
        let json1 = fs::read(out1.join("metrics_unbiased_1.json")).unwrap();
        let json2 = fs::read(out2.join("metrics_unbiased_1.json")).unwrap();
        assert_eq!(json1, json2);
    }

    #[test]
    fn cli_metrics_match_csv_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        run_cli([
            "cafed",
            "simulate",
            "--strategy",
            "cafed",
            "--seed",
            "2",
            "--t-rounds",
            "10",
            "--n-clients",
            "5",
            "--no-timestamp",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .unwrap();
        let mut reader =
            csv::Reader::from_path(dir.path().join("rounds_cafed_2.csv")).unwrap();
        let idx = reader
            .headers()
            .unwrap()
            .iter()
            .position(|h| h == "test_accuracy")
            .unwrap();
        let series: Vec<f64> = reader
            .records()
            .map(|r| r.unwrap()[idx].parse().unwrap())
            .collect();
        let recomputed = compute_metrics(&series).unwrap();
        let text =
            fs::read_to_string(dir.path().join("metrics_cafed_2.json")).unwrap();
        let record: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_abs_diff_eq!(
            record["metrics"]["time_avg_accuracy"].as_f64().unwrap(),
            recomputed.time_avg_accuracy,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            record["metrics"]["second_half_std"].as_f64().unwrap(),
            recomputed.second_half_std,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cli_optimize_q_symmetric_example() {
        let dir = tempfile::tempdir().unwrap();
        let problem = dir.path().join("problem.json");
        fs::write(
            &problem,
            serde_json::to_string(&WeightProblem {
                a_diag: vec![1.0, 1.0],
                b: 0.5,
                pi: vec![0.4, 0.4],
                q_total: 2.0,
            })
            .unwrap(),
        )
        .unwrap();
        let out = dir.path().join("solution.json");
        run_cli([
            "cafed",
            "optimize-q",
            "--problem",
            problem.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        let solution: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_abs_diff_eq!(solution["q"][0].as_f64().unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(solution["q"][1].as_f64().unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn cli_population_and_bounds_emit_json() {
        let dir = tempfile::tempdir().unwrap();
        let pop_out = dir.path().join("population.json");
        run_cli([
            "cafed",
            "population",
            "--n-clients",
            "6",
            "--t-rounds",
            "5",
            "--seed",
            "3",
            "--out",
            pop_out.to_str().unwrap(),
        ])
        .unwrap();
        let body: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&pop_out).unwrap()).unwrap();
        assert_eq!(body["population"]["clients"].as_array().unwrap().len(), 6);

        let bounds_out = dir.path().join("bounds.json");
        run_cli([
            "cafed",
            "bounds",
            "--n-clients",
            "4",
            "--t-rounds",
            "20",
            "--seed",
            "3",
            "--out",
            bounds_out.to_str().unwrap(),
        ])
        .unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&bounds_out).unwrap()).unwrap();
        assert!(report["kappa"].as_f64().unwrap() >= 1.0);
        assert!(report["theorem1"].as_f64().unwrap() >= 0.0);
        assert!(report["theorem3"].as_f64().unwrap() >= 0.0);
        assert!(report["theorem2"].as_f64().unwrap() > 0.0);
    }
}
