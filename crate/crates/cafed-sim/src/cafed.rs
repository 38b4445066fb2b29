//! The CA-Fed aggregation strategy: server-side loss and availability
//! estimators, the error proxy balancing optimization and bias terms, and
//! the greedy two-pass client-exclusion procedure.

use serde::{Deserialize, Serialize};

use crate::bounds::total_variation;
use crate::engine::{biased_importance, AggregationStrategy};
use crate::error::{Error, Result};

/// CA-Fed hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CaFedConfig {
    /// Exclusion threshold: a client is dropped only if the proxy decreases
    /// by at least `tau`. `+inf` disables exclusion.
    pub tau: f64,
    /// Auto-regressive smoothing for the loss estimates, in (0, 1].
    pub beta: f64,
    /// Relative weight of the bias term in the proxy; 1 recovers the plain
    /// proxy.
    pub kappa_bar_sq: f64,
    /// Beta prior pseudo-counts for the availability estimator.
    pub prior_active: f64,
    pub prior_inactive: f64,
    /// Per-row pseudo-count for the transition-matrix estimator.
    pub transition_prior: f64,
}

impl Default for CaFedConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            beta: 0.2,
            kappa_bar_sq: 1.0,
            prior_active: 1.0,
            prior_inactive: 1.0,
            transition_prior: 1.0,
        }
    }
}

impl CaFedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 0.0 {
            return Err(Error::Parameter("tau must be >= 0".into()));
        }
        if !(0.0 < self.beta && self.beta <= 1.0) {
            return Err(Error::Parameter("beta must lie in (0, 1]".into()));
        }
        if self.kappa_bar_sq <= 0.0 {
            return Err(Error::Parameter("kappa_bar_sq must be positive".into()));
        }
        if self.prior_active <= 0.0 || self.prior_inactive <= 0.0 || self.transition_prior <= 0.0 {
            return Err(Error::Parameter("priors must be positive".into()));
        }
        Ok(())
    }
}

/// Read-only view of the server's running estimates, emitted per round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSnapshot {
    pub f_hat: Vec<Option<f64>>,
    pub f_star_hat: Vec<Option<f64>>,
    pub pi_hat: Vec<f64>,
    pub lambda2_hat: Vec<f64>,
    pub gamma_prime_hat: f64,
    /// Clients assigned zero aggregation weight this round.
    pub excluded: Vec<usize>,
}

/// The server's running estimates of per-client losses, loss minima,
/// availabilities, and transition matrices.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    config: CaFedConfig,
    /// Smoothed loss estimate; `None` until the client's first report.
    f_hat: Vec<Option<f64>>,
    /// Running minimum of `f_hat`.
    f_star_hat: Vec<Option<f64>>,
    rounds_seen: u64,
    active_counts: Vec<u64>,
    prev_active: Option<Vec<bool>>,
    /// `[from][to]` with 0 = active, 1 = inactive.
    transition_counts: Vec<[[u64; 2]; 2]>,
}

impl EstimatorState {
    pub fn new(n_clients: usize, config: CaFedConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            f_hat: vec![None; n_clients],
            f_star_hat: vec![None; n_clients],
            rounds_seen: 0,
            active_counts: vec![0; n_clients],
            prev_active: None,
            transition_counts: vec![[[0; 2]; 2]; n_clients],
        })
    }

    pub fn n_clients(&self) -> usize {
        self.f_hat.len()
    }

    /// Auto-regressive update of the loss estimates from the losses reported
    /// by active clients, followed by the running-minimum update. A client's
    /// first report initializes its estimate directly.
    pub fn update_loss_estimates(
        &mut self,
        active: &[bool],
        losses: &[Option<f64>],
    ) -> Result<()> {
        if active.len() != self.n_clients() || losses.len() != self.n_clients() {
            return Err(Error::Shape("active/loss vectors must cover all clients".into()));
        }
        for k in 0..self.n_clients() {
            match (active[k], losses[k]) {
                (true, Some(loss)) => {
                    let updated = match self.f_hat[k] {
                        Some(prev) => (1.0 - self.config.beta) * prev + self.config.beta * loss,
                        None => loss,
                    };
                    self.f_hat[k] = Some(updated);
                    self.f_star_hat[k] =
                        Some(self.f_star_hat[k].map_or(updated, |m| m.min(updated)));
                }
                (true, None) => {
                    return Err(Error::Protocol(format!("active client {k} reported no loss")));
                }
                (false, Some(_)) => {
                    return Err(Error::Protocol(format!("inactive client {k} reported a loss")));
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    /// Bayesian availability and transition updates from the full active-set
    /// indicator of the current round.
    pub fn update_availability_estimates(&mut self, active: &[bool]) -> Result<()> {
        if active.len() != self.n_clients() {
            return Err(Error::Shape("active vector must cover all clients".into()));
        }
        self.rounds_seen += 1;
        for (count, &a) in self.active_counts.iter_mut().zip(active) {
            *count += a as u64;
        }
        if let Some(prev) = &self.prev_active {
            for k in 0..self.n_clients() {
                let from = !prev[k] as usize;
                let to = !active[k] as usize;
                self.transition_counts[k][from][to] += 1;
            }
        }
        self.prev_active = Some(active.to_vec());
        Ok(())
    }

    /// `pi_hat_k = (activity count + n_k) / (t + n_k + m_k)`.
    pub fn pi_hat(&self) -> Vec<f64> {
        let (n, m) = (self.config.prior_active, self.config.prior_inactive);
        self.active_counts
            .iter()
            .map(|&c| (c as f64 + n) / (self.rounds_seen as f64 + n + m))
            .collect()
    }

    /// Second eigenvalue of the row-wise Bayesian transition estimate.
    pub fn lambda2_hat(&self) -> Vec<f64> {
        let prior = self.config.transition_prior;
        self.transition_counts
            .iter()
            .map(|counts| {
                let stay = |row: usize| {
                    let total = counts[row][0] + counts[row][1];
                    (counts[row][row] as f64 + prior) / (total as f64 + 2.0 * prior)
                };
                stay(0) + stay(1) - 1.0
            })
            .collect()
    }

    /// `F_hat - F_hat*` per client; clients with no report yet contribute 0.
    pub fn loss_gaps(&self) -> Vec<f64> {
        self.f_hat
            .iter()
            .zip(&self.f_star_hat)
            .map(|(f, fs)| match (f, fs) {
                (Some(f), Some(fs)) => f - fs,
                _ => 0.0,
            })
            .collect()
    }

    /// `max_k (F_hat_k - F_hat_k*)`.
    pub fn gamma_prime_hat(&self) -> f64 {
        self.loss_gaps().into_iter().fold(0.0, f64::max)
    }

    pub fn f_hat(&self) -> &[Option<f64>] {
        &self.f_hat
    }

    pub fn f_star_hat(&self) -> &[Option<f64>] {
        &self.f_star_hat
    }
}

/// The error proxy `<F_hat - F_hat*, p(q)> + kappa_bar^2 * d_TV^2(alpha, p(q)) * Gamma'`
/// with `p(q)` the normalized availability-weighted importance.
/// `kappa_bar_sq = 1` recovers the plain proxy.
pub fn error_proxy(
    loss_gaps: &[f64],
    gamma_prime: f64,
    pi: &[f64],
    q: &[f64],
    alpha: &[f64],
    kappa_bar_sq: f64,
) -> Result<f64> {
    let p = biased_importance(pi, q)?;
    let opt_term: f64 = loss_gaps.iter().zip(&p).map(|(g, pk)| g * pk).sum();
    let dtv = total_variation(alpha, &p)?;
    Ok(opt_term + kappa_bar_sq * dtv * dtv * gamma_prime)
}

/// One greedy exclusion pass: clients are visited in descending `rho` order;
/// a tentative `q_k = 0` is committed iff the proxy decreases by at least
/// `tau`. An exclusion that would empty the support is skipped.
#[allow(clippy::too_many_arguments)]
pub fn exclusion_pass(
    mut q: Vec<f64>,
    alpha: &[f64],
    loss_gaps: &[f64],
    gamma_prime: f64,
    pi: &[f64],
    rho: &[f64],
    tau: f64,
    kappa_bar_sq: f64,
) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| rho[b].partial_cmp(&rho[a]).unwrap().then(a.cmp(&b)));

    let mut eps = error_proxy(loss_gaps, gamma_prime, pi, &q, alpha, kappa_bar_sq)?;
    for k in order {
        if q[k] == 0.0 {
            continue;
        }
        let support = q.iter().filter(|&&v| v > 0.0).count();
        if support <= 1 {
            break;
        }
        let mut candidate = q.clone();
        candidate[k] = 0.0;
        let eps_plus =
            error_proxy(loss_gaps, gamma_prime, pi, &candidate, alpha, kappa_bar_sq)?;
        if eps - eps_plus >= tau {
            eps = eps_plus;
            q = candidate;
        }
    }
    Ok(q)
}

/// CA-Fed: initializes `q = alpha / pi_hat`, runs an exclusion pass ordered
/// by descending correlation estimate, then one ordered by ascending
/// availability estimate. When an oracle supplies the true `(pi, lambda2)`
/// the estimators are bypassed for those quantities, as in evaluations that
/// grant all strategies the true availability parameters.
pub struct CaFedStrategy {
    alpha: Vec<f64>,
    config: CaFedConfig,
    state: EstimatorState,
    oracle: Option<(Vec<f64>, Vec<f64>)>,
    last_snapshot: Option<EstimatorSnapshot>,
}

impl CaFedStrategy {
    pub fn new(alpha: Vec<f64>, config: CaFedConfig) -> Result<Self> {
        let state = EstimatorState::new(alpha.len(), config)?;
        Ok(Self { alpha, config, state, oracle: None, last_snapshot: None })
    }

    /// Feeds the true availability parameters instead of the Bayesian
    /// estimates.
    pub fn with_oracle(mut self, pi: Vec<f64>, lambda2: Vec<f64>) -> Result<Self> {
        if pi.len() != self.alpha.len() || lambda2.len() != self.alpha.len() {
            return Err(Error::Shape("oracle vectors must cover all clients".into()));
        }
        if pi.iter().any(|&p| p <= 0.0 || p >= 1.0) {
            return Err(Error::Parameter("oracle pi must lie in (0, 1)".into()));
        }
        self.oracle = Some((pi, lambda2));
        Ok(self)
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    fn compute_weights(&mut self, active: &[bool], losses: &[Option<f64>]) -> Result<Vec<f64>> {
        self.state.update_loss_estimates(active, losses)?;
        self.state.update_availability_estimates(active)?;

        let (pi, lambda2) = match &self.oracle {
            Some((pi, lam)) => (pi.clone(), lam.clone()),
            None => (self.state.pi_hat(), self.state.lambda2_hat()),
        };
        let gaps = self.state.loss_gaps();
        let gamma_prime = self.state.gamma_prime_hat();

        let q0: Vec<f64> = self.alpha.iter().zip(&pi).map(|(a, p)| a / p).collect();
        let q1 = exclusion_pass(
            q0,
            &self.alpha,
            &gaps,
            gamma_prime,
            &pi,
            &lambda2,
            self.config.tau,
            self.config.kappa_bar_sq,
        )?;
        let neg_pi: Vec<f64> = pi.iter().map(|p| -p).collect();
        let q2 = exclusion_pass(
            q1,
            &self.alpha,
            &gaps,
            gamma_prime,
            &pi,
            &neg_pi,
            self.config.tau,
            self.config.kappa_bar_sq,
        )?;

        self.last_snapshot = Some(EstimatorSnapshot {
            f_hat: self.state.f_hat().to_vec(),
            f_star_hat: self.state.f_star_hat().to_vec(),
            pi_hat: pi,
            lambda2_hat: lambda2,
            gamma_prime_hat: gamma_prime,
            excluded: q2
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 0.0)
                .map(|(k, _)| k)
                .collect(),
        });
        Ok(q2)
    }
}

impl AggregationStrategy for CaFedStrategy {
    fn name(&self) -> &'static str {
        "cafed"
    }

    fn weights(
        &mut self,
        _round: usize,
        active: &[bool],
        losses: &[Option<f64>],
    ) -> Result<Vec<f64>> {
        self.compute_weights(active, losses)
    }

    fn estimator_snapshot(&self) -> Option<EstimatorSnapshot> {
        self.last_snapshot.clone()
    }
}
