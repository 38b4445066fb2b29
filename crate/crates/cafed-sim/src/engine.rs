//! Federated training loop: per-round client participation driven by the
//! sampled availability trace, aggregation strategies that assign weights to
//! active clients, and the deterministic experiment runner.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::availability::{build_population, sample_trace, AvailabilityTrace, PopulationSpec};
use crate::cafed::{CaFedStrategy, EstimatorSnapshot};
use crate::data::{generate_synthetic_for_groups, FederationData};
use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, StrategyKind};
use crate::model::{LinearModel, ModelConfig};

/// Normalized importance induced by aggregation weights `q` under
/// stationary availabilities `pi`: `p_k = pi_k q_k / sum_h pi_h q_h`.
pub fn biased_importance(pi: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if pi.len() != q.len() {
        return Err(Error::Shape("pi and q must have equal length".into()));
    }
    if pi.iter().any(|&p| p < 0.0) || q.iter().any(|&v| v < 0.0) {
        return Err(Error::Parameter("pi and q must be nonnegative".into()));
    }
    let total: f64 = pi.iter().zip(q).map(|(p, v)| p * v).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights(
            "pi . q must be positive to normalize importances".into(),
        ));
    }
    Ok(pi.iter().zip(q).map(|(p, v)| p * v / total).collect())
}

/// A server-side rule assigning aggregation weights each round.
///
/// Called once per round with the full activity indicator and the losses
/// reported by active clients (`None` for inactive ones). Returns
/// nonnegative weights over all clients; inactive clients never
/// participate regardless of their entry.
pub trait AggregationStrategy {
    fn name(&self) -> &'static str;

    fn weights(
        &mut self,
        round: usize,
        active: &[bool],
        losses: &[Option<f64>],
    ) -> Result<Vec<f64>>;

    fn estimator_snapshot(&self) -> Option<EstimatorSnapshot> {
        None
    }
}

/// Assigns `q_k = alpha_k / pi_k` to active clients, which makes the
/// expected aggregate importance match the target weights.
pub struct UnbiasedStrategy {
    alpha: Vec<f64>,
    pi: Vec<f64>,
}

impl UnbiasedStrategy {
    pub fn new(alpha: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        if alpha.len() != pi.len() {
            return Err(Error::Shape("alpha and pi must have equal length".into()));
        }
        if pi.iter().any(|&p| p <= 0.0) {
            return Err(Error::Parameter("pi must be strictly positive".into()));
        }
        Ok(Self { alpha, pi })
    }
}

impl AggregationStrategy for UnbiasedStrategy {
    fn name(&self) -> &'static str {
        "unbiased"
    }

    fn weights(
        &mut self,
        _round: usize,
        active: &[bool],
        _losses: &[Option<f64>],
    ) -> Result<Vec<f64>> {
        Ok((0..self.alpha.len())
            .map(|k| if active[k] { self.alpha[k] / self.pi[k] } else { 0.0 })
            .collect())
    }
}

/// Per-round record emitted by the runner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub active: Vec<bool>,
    pub q: Vec<f64>,
    /// Active clients with positive weight that trained this round.
    pub participating: Vec<bool>,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub snapshot: Option<EstimatorSnapshot>,
}

/// Aggregate metrics over a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub max_accuracy: f64,
    pub time_avg_accuracy: f64,
    /// Population standard deviation of accuracy over the second half of
    /// the rounds.
    pub second_half_std: f64,
}

/// Everything a single run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: String,
    pub seed: u64,
    pub rounds: Vec<RoundLog>,
    pub metrics: RunMetrics,
}

fn subseed(seed: u64, tag: u64) -> u64 {
    // splitmix64 round over the combined value
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The derived seed [`run_experiment`] feeds to [`build_population`], so
/// callers can rebuild the exact population of a run for analysis.
pub fn population_subseed(seed: u64) -> u64 {
    subseed(seed, 1)
}

fn round_rng(seed: u64, round: usize, client: usize, purpose: u64) -> ChaCha12Rng {
    let tag = (round as u64)
        .wrapping_mul(1_000_003)
        .wrapping_add(client as u64)
        .wrapping_mul(4)
        .wrapping_add(purpose);
    ChaCha12Rng::seed_from_u64(subseed(seed, tag))
}

/// Test accuracy and loss weighted by the target importances `alpha`.
pub fn evaluate(model: &LinearModel, fed: &FederationData, alpha: &[f64]) -> Result<(f64, f64)> {
    let mut acc = 0.0;
    let mut loss = 0.0;
    for (client, &a) in fed.clients.iter().zip(alpha) {
        acc += a * model.accuracy(&client.test)?;
        loss += a * model.loss(&client.test, None)?;
    }
    Ok((acc, loss))
}

/// One communication round. Active clients report the loss of the current
/// model on a fresh batch; the strategy assigns weights; weighted active
/// clients run local SGD; the server applies the aggregated update and
/// projects. Rounds where no client participates leave the model unchanged.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    model: &mut LinearModel,
    fed: &FederationData,
    active: &[bool],
    strategy: &mut dyn AggregationStrategy,
    lr_local: f64,
    lr_server: f64,
    e_steps: usize,
    batch_size: usize,
    round: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = fed.clients.len();
    if active.len() != n {
        return Err(Error::Shape("active vector must cover all clients".into()));
    }

    let mut losses = vec![None; n];
    for k in 0..n {
        if active[k] {
            let mut rng = round_rng(seed, round, k, 0);
            losses[k] = Some(model.batch_loss(&fed.clients[k].train, batch_size, &mut rng)?);
        }
    }

    let q = strategy.weights(round, active, &losses)?;
    if q.len() != n {
        return Err(Error::Shape("strategy returned a weight vector of wrong length".into()));
    }
    if q.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateWeights("strategy returned invalid weights".into()));
    }

    let mut participating = vec![false; n];
    let mut update: ndarray::Array2<f64> = ndarray::Array2::zeros(model.weights().dim());
    for k in 0..n {
        if active[k] && q[k] > 0.0 {
            participating[k] = true;
            let mut rng = round_rng(seed, round, k, 1);
            let delta = model.local_sgd(
                &fed.clients[k].train,
                e_steps,
                lr_local,
                batch_size,
                &mut rng,
            )?;
            update.scaled_add(q[k], &delta);
        }
    }
    if participating.iter().any(|&p| p) {
        model.apply_update(&update, lr_server)?;
    }
    Ok((q, participating))
}

/// Builds the population, availability trace, federation and strategy from
/// the configuration and runs `t_rounds` of training. Deterministic in
/// `(config, seed)`.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let population = build_population(
        config.n_clients,
        config.availability.g,
        config.availability.nu,
        config.availability.eps,
        subseed(seed, 1),
    )?;
    let trace = sample_trace(&population, config.t_rounds, subseed(seed, 2))?;
    let fed = build_federation(config, &population, subseed(seed, 3))?;
    let alpha = fed.target_weights.clone();
    let pi = population.stationary_activity()?;
    let lambda2 = population.second_eigenvalues();

    let mut strategy: Box<dyn AggregationStrategy> = match config.strategy {
        StrategyKind::Unbiased => Box::new(UnbiasedStrategy::new(alpha.clone(), pi.clone())?),
        StrategyKind::CaFed => {
            let s = CaFedStrategy::new(alpha.clone(), config.cafed)?;
            if config.oracle_availability {
                Box::new(s.with_oracle(pi.clone(), lambda2.clone())?)
            } else {
                Box::new(s)
            }
        }
    };

    run_with_strategy(config, &fed, &alpha, &trace, strategy.as_mut(), seed)
}

/// Runs the training loop against a prebuilt federation and trace.
pub fn run_with_strategy(
    config: &ExperimentConfig,
    fed: &FederationData,
    alpha: &[f64],
    trace: &AvailabilityTrace,
    strategy: &mut dyn AggregationStrategy,
    seed: u64,
) -> Result<RunResult> {
    let model_config = ModelConfig {
        dim: fed.dim,
        n_classes: fed.n_classes,
        ridge: config.ridge,
        radius: config.radius,
        bias: true,
    };
    let mut model = LinearModel::new(model_config)?;

    let mut rounds = Vec::with_capacity(config.t_rounds);
    for round in 1..=config.t_rounds {
        let active = trace.active_set(round - 1).to_vec();
        let (q, participating) = run_round(
            &mut model,
            fed,
            &active,
            strategy,
            config.lr_local,
            config.lr_server,
            config.e_steps,
            config.batch_size,
            round,
            subseed(seed, 4),
        )?;
        let (test_accuracy, test_loss) = evaluate(&model, fed, alpha)?;
        rounds.push(RoundLog {
            round,
            active,
            q,
            participating,
            test_accuracy,
            test_loss,
            snapshot: strategy.estimator_snapshot(),
        });
    }

    let accuracy: Vec<f64> = rounds.iter().map(|r| r.test_accuracy).collect();
    let metrics = crate::harness::compute_metrics(&accuracy)?;
    Ok(RunResult { strategy: strategy.name().to_string(), seed, rounds, metrics })
}

fn build_federation(
    config: &ExperimentConfig,
    population: &PopulationSpec,
    seed: u64,
) -> Result<FederationData> {
    generate_synthetic_for_groups(
        &population.group_ids(),
        config.dim,
        config.samples_per_client,
        seed,
    )
}
