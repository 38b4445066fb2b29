//! Two-state availability Markov chains: construction from stationary
//! availability and second eigenvalue, spectral quantities of the product
//! chain, mixing diagnostics, and seeded trace sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A two-state (active/inactive) Markov chain describing one client's
/// availability. The transition matrix is
///
/// ```text
/// P = [ p_stay_active      1 - p_stay_active   ]
///     [ 1 - p_stay_inactive    p_stay_inactive ]
/// ```
///
/// with rows summing to one exactly. Construction rejects the fully
/// absorbing chain (both self-loop probabilities equal to one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainRepr", into = "ChainRepr")]
pub struct ClientChain {
    p_stay_active: f64,
    p_stay_inactive: f64,
}

#[derive(Serialize, Deserialize)]
struct ChainRepr {
    p_stay_active: f64,
    p_stay_inactive: f64,
}

impl TryFrom<ChainRepr> for ClientChain {
    type Error = Error;
    fn try_from(r: ChainRepr) -> Result<Self> {
        ClientChain::new(r.p_stay_active, r.p_stay_inactive)
    }
}

impl From<ClientChain> for ChainRepr {
    fn from(c: ClientChain) -> Self {
        ChainRepr { p_stay_active: c.p_stay_active, p_stay_inactive: c.p_stay_inactive }
    }
}

impl ClientChain {
    pub fn new(p_stay_active: f64, p_stay_inactive: f64) -> Result<Self> {
        for (name, p) in [("p_stay_active", p_stay_active), ("p_stay_inactive", p_stay_inactive)] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Parameter(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if p_stay_active >= 1.0 && p_stay_inactive >= 1.0 {
            return Err(Error::DegenerateChain(
                "both self-loop probabilities are 1 (reducible absorbing chain)".into(),
            ));
        }
        Ok(Self { p_stay_active, p_stay_inactive })
    }

    /// Bypasses the ergodicity check. Intended for tests and diagnostics on
    /// degenerate chains (e.g. always-active clients).
    pub fn new_unchecked(p_stay_active: f64, p_stay_inactive: f64) -> Self {
        Self { p_stay_active, p_stay_inactive }
    }

    /// Inverts the (stationary activity, second eigenvalue) parametrization:
    /// the unique two-state chain with stationary active-probability
    /// `pi_active` and second eigenvalue `lambda2` has
    /// `p_stay_active = lambda2 + (1 - lambda2) * pi_active` and
    /// `p_stay_inactive = lambda2 + (1 - lambda2) * (1 - pi_active)`.
    pub fn from_pi_lambda(pi_active: f64, lambda2: f64) -> Result<Self> {
        if !(0.0 < pi_active && pi_active < 1.0) {
            return Err(Error::Parameter(format!("pi_active = {pi_active} outside (0, 1)")));
        }
        if lambda2.abs() >= 1.0 {
            return Err(Error::Parameter(format!("lambda2 = {lambda2} outside (-1, 1)")));
        }
        let p_aa = lambda2 + (1.0 - lambda2) * pi_active;
        let p_ii = lambda2 + (1.0 - lambda2) * (1.0 - pi_active);
        if !(0.0..=1.0).contains(&p_aa) || !(0.0..=1.0).contains(&p_ii) {
            return Err(Error::Parameter(format!(
                "(pi_active = {pi_active}, lambda2 = {lambda2}) implies transition \
                 probabilities ({p_aa}, {p_ii}) outside [0, 1]"
            )));
        }
        Self::new(p_aa, p_ii)
    }

    pub fn p_stay_active(&self) -> f64 {
        self.p_stay_active
    }

    pub fn p_stay_inactive(&self) -> f64 {
        self.p_stay_inactive
    }

    /// Row-stochastic transition matrix, rows/columns ordered (active, inactive).
    pub fn transition_matrix(&self) -> [[f64; 2]; 2] {
        [
            [self.p_stay_active, 1.0 - self.p_stay_active],
            [1.0 - self.p_stay_inactive, self.p_stay_inactive],
        ]
    }

    /// Irreducible and aperiodic.
    pub fn is_ergodic(&self) -> bool {
        self.p_stay_active < 1.0
            && self.p_stay_inactive < 1.0
            && !(self.p_stay_active == 0.0 && self.p_stay_inactive == 0.0)
    }

    /// Stationary distribution `(pi_active, pi_inactive)` solving `pi P = pi`.
    ///
    /// Defined for every chain with at least one non-unit self-loop; the
    /// period-2 chain (both self-loops zero) still has a stationary vector
    /// even though it is not ergodic.
    pub fn stationary_distribution(&self) -> Result<(f64, f64)> {
        let leave_active = 1.0 - self.p_stay_active;
        let leave_inactive = 1.0 - self.p_stay_inactive;
        let denom = leave_active + leave_inactive;
        if denom <= 0.0 {
            return Err(Error::DegenerateChain(
                "absorbing chain has no unique stationary distribution".into(),
            ));
        }
        let pi_active = leave_inactive / denom;
        Ok((pi_active, 1.0 - pi_active))
    }

    /// Second eigenvalue of the transition matrix, exact for 2x2 stochastic
    /// matrices: `trace(P) - 1`.
    pub fn second_eigenvalue(&self) -> f64 {
        self.p_stay_active + self.p_stay_inactive - 1.0
    }

    /// `max_{i,j} |[P^t]_{ij} - pi_j|`, computed by exponentiation by
    /// squaring of the transition matrix.
    pub fn mixing_deviation(&self, t: u32) -> Result<f64> {
        if t == 0 {
            return Err(Error::Parameter("mixing deviation requires t >= 1".into()));
        }
        let (pi_a, pi_i) = self.stationary_distribution()?;
        let pt = mat2_pow(self.transition_matrix(), t);
        let dev = [
            (pt[0][0] - pi_a).abs(),
            (pt[0][1] - pi_i).abs(),
            (pt[1][0] - pi_a).abs(),
            (pt[1][1] - pi_i).abs(),
        ];
        Ok(dev.into_iter().fold(0.0, f64::max))
    }
}

fn mat2_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn mat2_pow(m: [[f64; 2]; 2], mut t: u32) -> [[f64; 2]; 2] {
    let mut base = m;
    let mut acc = [[1.0, 0.0], [0.0, 1.0]];
    while t > 0 {
        if t & 1 == 1 {
            acc = mat2_mul(acc, base);
        }
        base = mat2_mul(base, base);
        t >>= 1;
    }
    acc
}

/// The correlation parameter `lambda(P) = (|lambda2| + 1) / 2` governing the
/// geometric mixing inequality.
pub fn lambda_param(lambda2: f64) -> f64 {
    (lambda2.abs() + 1.0) / 2.0
}

/// `lambda(P')` of the product chain restricted to the included clients:
/// the maximum of the per-client correlation parameters.
pub fn product_chain_lambda(chains: &[ClientChain], included: &[bool]) -> Result<f64> {
    if chains.len() != included.len() {
        return Err(Error::Shape(format!(
            "{} chains but {} mask entries",
            chains.len(),
            included.len()
        )));
    }
    chains
        .iter()
        .zip(included)
        .filter(|(_, &inc)| inc)
        .map(|(c, _)| lambda_param(c.second_eigenvalue()))
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
        .ok_or_else(|| Error::Parameter("product chain requires at least one included client".into()))
}

/// Brute-force verifier for [`product_chain_lambda`]: forms the full
/// `2^n x 2^n` Kronecker-product transition matrix, extracts the
/// second-largest eigenvalue modulus by dense eigendecomposition, and
/// returns `(lambda2 + 1) / 2`.
pub fn kron_product_oracle(chains: &[ClientChain], max_n: usize) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::Parameter("empty chain list".into()));
    }
    if chains.len() > max_n {
        return Err(Error::Parameter(format!(
            "{} chains exceed the oracle size cap {max_n}",
            chains.len()
        )));
    }
    let mut prod = DMatrix::from_element(1, 1, 1.0);
    for chain in chains {
        let m = chain.transition_matrix();
        let p = DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]]);
        prod = prod.kronecker(&p);
    }
    let mut moduli: Vec<f64> = prod.complex_eigenvalues().iter().map(|c| c.norm()).collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok((moduli[1] + 1.0) / 2.0)
}

/// Mixing lag `J_t = min{ max{ ceil(ln(2 C_P H t) / ln(1/lambda)), T_P }, t }`.
pub fn compute_jt(t: u64, lambda_p: f64, c_p: f64, t_p: u64, h: f64) -> Result<u64> {
    if t == 0 {
        return Err(Error::Parameter("round index t must be >= 1".into()));
    }
    if !(0.0 < lambda_p && lambda_p < 1.0) {
        return Err(Error::Parameter(format!("lambda(P) = {lambda_p} outside (0, 1)")));
    }
    if c_p <= 0.0 || h <= 0.0 || t_p == 0 {
        return Err(Error::Parameter("C_P, H must be positive and T_P >= 1".into()));
    }
    let raw = ((2.0 * c_p * h * t as f64).ln() / (1.0 / lambda_p).ln()).ceil();
    let ceiled = if raw.is_finite() && raw > 0.0 { raw as u64 } else { 0 };
    Ok(ceiled.max(t_p).min(t))
}

/// Availability class within a group: stationary activity `1/2 + g` or `1/2 - g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvailabilityClass {
    More,
    Less,
}

/// Correlation class: persistent chains (`lambda2 = nu`) or weakly correlated
/// ones (`lambda2 ~ N(0, eps^2)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationClass {
    Correlated,
    Weak,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientAvailability {
    pub group_id: u8,
    pub availability_class: AvailabilityClass,
    pub correlation_class: CorrelationClass,
    pub chain: ClientChain,
}

/// Per-client availability chains plus the group/class partition they were
/// drawn from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub clients: Vec<ClientAvailability>,
}

impl PopulationSpec {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn chains(&self) -> Vec<ClientChain> {
        self.clients.iter().map(|c| c.chain).collect()
    }

    /// True stationary activity per client (the oracle availability vector).
    pub fn stationary_activity(&self) -> Result<Vec<f64>> {
        self.clients.iter().map(|c| Ok(c.chain.stationary_distribution()?.0)).collect()
    }

    pub fn second_eigenvalues(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.chain.second_eigenvalue()).collect()
    }

    pub fn group_ids(&self) -> Vec<u8> {
        self.clients.iter().map(|c| c.group_id).collect()
    }
}

/// Boolean round-by-client availability matrix; row `t` is the active set `A_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TraceRepr", into = "TraceRepr")]
pub struct AvailabilityTrace {
    n_rounds: usize,
    n_clients: usize,
    bits: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct TraceRepr {
    n_rounds: usize,
    n_clients: usize,
    /// Row-major 0/1 entries.
    rows: Vec<Vec<u8>>,
}

impl TryFrom<TraceRepr> for AvailabilityTrace {
    type Error = Error;
    fn try_from(r: TraceRepr) -> Result<Self> {
        if r.rows.len() != r.n_rounds || r.rows.iter().any(|row| row.len() != r.n_clients) {
            return Err(Error::Shape("trace dimensions do not match rows".into()));
        }
        let bits = r.rows.iter().flatten().map(|&b| b != 0).collect();
        Ok(Self { n_rounds: r.n_rounds, n_clients: r.n_clients, bits })
    }
}

impl From<AvailabilityTrace> for TraceRepr {
    fn from(t: AvailabilityTrace) -> Self {
        let rows = (0..t.n_rounds)
            .map(|r| t.bits[r * t.n_clients..(r + 1) * t.n_clients].iter().map(|&b| b as u8).collect())
            .collect();
        TraceRepr { n_rounds: t.n_rounds, n_clients: t.n_clients, rows }
    }
}

impl AvailabilityTrace {
    pub fn n_rounds(&self) -> usize {
        self.n_rounds
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    /// Active mask `A_t` for round `t` (0-based).
    pub fn active_set(&self, t: usize) -> &[bool] {
        &self.bits[t * self.n_clients..(t + 1) * self.n_clients]
    }

    pub fn is_active(&self, t: usize, client: usize) -> bool {
        self.bits[t * self.n_clients + client]
    }
}

fn client_rng(seed: u64, client: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(client as u64 + 1);
    rng
}

/// Samples an availability trace. Each client's row is an independent
/// realization of its chain with the initial state drawn from the stationary
/// distribution; the per-client random streams are derived from
/// `(seed, client)` so the result does not depend on iteration order.
pub fn sample_trace(spec: &PopulationSpec, n_rounds: usize, seed: u64) -> Result<AvailabilityTrace> {
    let n = spec.n_clients();
    let mut bits = vec![false; n_rounds * n];
    for (k, client) in spec.clients.iter().enumerate() {
        let chain = &client.chain;
        let (pi_a, _) = chain.stationary_distribution()?;
        let mut rng = client_rng(seed, k);
        let mut active = rng.gen::<f64>() < pi_a;
        for t in 0..n_rounds {
            bits[t * n + k] = active;
            let stay = if active { chain.p_stay_active() } else { chain.p_stay_inactive() };
            if rng.gen::<f64>() >= stay {
                active = !active;
            }
        }
    }
    Ok(AvailabilityTrace { n_rounds, n_clients: n, bits })
}

/// Builds the four-way client partition: two groups of (almost) equal size,
/// each split into more/less available halves (stationary activity
/// `1/2 +- g`), each of those split into correlated (`lambda2 = nu`) and
/// weakly correlated (`lambda2 ~ N(0, eps^2)`, clamped to (-1, 1)) halves.
/// Assignments are uniform under `seed`. When a split is uneven the first
/// class takes the remainder.
pub fn build_population(n: usize, g: f64, nu: f64, eps: f64, seed: u64) -> Result<PopulationSpec> {
    if n == 0 {
        return Err(Error::Parameter("population must be non-empty".into()));
    }
    if !(0.0..0.5).contains(&g) {
        return Err(Error::Parameter(format!("g = {g} outside [0, 1/2)")));
    }
    if nu.abs() >= 1.0 {
        return Err(Error::Parameter(format!("nu = {nu} outside (-1, 1)")));
    }
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::Parameter(format!("eps = {eps} must be non-negative")));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates under the seeded rng.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let weak_law = Normal::new(0.0, eps.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut clients: Vec<Option<ClientAvailability>> = vec![None; n];
    let mut cursor = 0usize;
    for (group_id, group_size) in split_first_heavy(n).into_iter().enumerate() {
        for (avail_idx, avail_size) in split_first_heavy(group_size).into_iter().enumerate() {
            let availability_class = if avail_idx == 0 { AvailabilityClass::More } else { AvailabilityClass::Less };
            let pi_active = if avail_idx == 0 { 0.5 + g } else { 0.5 - g };
            for (corr_idx, corr_size) in split_first_heavy(avail_size).into_iter().enumerate() {
                let correlation_class =
                    if corr_idx == 0 { CorrelationClass::Correlated } else { CorrelationClass::Weak };
                for _ in 0..corr_size {
                    let lambda2 = if corr_idx == 0 {
                        nu
                    } else {
                        weak_law.sample(&mut rng).clamp(-1.0 + 1e-9, 1.0 - 1e-9)
                    };
                    let chain = ClientChain::from_pi_lambda(pi_active, lambda2)?;
                    clients[order[cursor]] = Some(ClientAvailability {
                        group_id: group_id as u8 + 1,
                        availability_class,
                        correlation_class,
                        chain,
                    });
                    cursor += 1;
                }
            }
        }
    }
    Ok(PopulationSpec { clients: clients.into_iter().map(|c| c.expect("all assigned")).collect() })
}

fn split_first_heavy(n: usize) -> [usize; 2] {
    [n - n / 2, n / 2]
}
