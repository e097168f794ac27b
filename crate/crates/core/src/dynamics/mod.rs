//! Dynamic layer: normalized choice values over the discretized state,
//! the stage-one entry test, and hard and kernel-smoothed choice rules.
//!
//! All values are in units of the fixed production cost. The state is the
//! discretized `psi/(w+m)`; each state carries a representative value used in
//! the flow payoffs.

mod choice;
mod engine;
mod solve;

pub use choice::{hard_choice, simulate_conditional_prob, smoothed_probabilities};
pub use engine::ProbabilityEngine;
pub use solve::{
    choice_values, choice_values_with_mode, emax_solve, flow_payoff, solve_commitment_values,
    solve_discounted, EmaxSolution,
};

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChoicePair, Preferences};

/// Default discount factor; the discount rate `1 - delta` is 0.05.
pub const DEFAULT_DISCOUNT: f64 = 0.95;

/// Tolerance on transition-matrix row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Four row-stochastic K x K matrices, one per (innovate, export) choice.
///
/// `prob(choice, k, j)` is the probability of moving from state `k` to state
/// `j` (both 0-based here) after making `choice` in state `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    k: usize,
    /// Row-major matrices indexed by [`ChoicePair::index`].
    matrices: [Vec<f64>; 4],
}

impl TransitionSet {
    pub fn new(k: usize, matrices: [Vec<f64>; 4]) -> Result<Self> {
        let set = Self { k, matrices };
        set.validate()?;
        Ok(set)
    }

    /// The same matrix for every choice.
    pub fn uniform_across_choices(k: usize, matrix: Vec<f64>) -> Result<Self> {
        Self::new(
            k,
            [matrix.clone(), matrix.clone(), matrix.clone(), matrix],
        )
    }

    pub fn from_rows(rows: [Vec<Vec<f64>>; 4]) -> Result<Self> {
        let k = rows[0].len();
        let flat = rows.map(|m| m.into_iter().flatten().collect::<Vec<_>>());
        Self::new(k, flat)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::domain(format!("K = {} must be at least 2", self.k)));
        }
        for (idx, m) in self.matrices.iter().enumerate() {
            let choice = ChoicePair::from_index(idx);
            if m.len() != self.k * self.k {
                return Err(Error::domain(format!(
                    "transition matrix for {choice} has {} entries, expected {}",
                    m.len(),
                    self.k * self.k
                )));
            }
            for (r, row) in m.chunks(self.k).enumerate() {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::domain(format!(
                        "transition row {} for {choice} has entries outside [0, 1]",
                        r + 1
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::domain(format!(
                        "transition row {} for {choice} sums to {sum}",
                        r + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self, choice: ChoicePair) -> &[f64] {
        &self.matrices[choice.index()]
    }

    pub fn row(&self, choice: ChoicePair, from: usize) -> &[f64] {
        &self.matrices[choice.index()][from * self.k..(from + 1) * self.k]
    }

    pub fn prob(&self, choice: ChoicePair, from: usize, to: usize) -> f64 {
        self.matrices[choice.index()][from * self.k + to]
    }
}

/// Known primitives of the dynamic problem, taken from earlier estimation
/// steps (or the truth in simulation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrimitives {
    pub prefs: Preferences,
    pub delta: f64,
    pub sigma: f64,
    pub transitions: TransitionSet,
    /// Representative `psi/(w+m)` for states 1..K, strictly increasing.
    pub state_values: Vec<f64>,
}

impl ModelPrimitives {
    pub fn new(
        prefs: Preferences,
        delta: f64,
        sigma: f64,
        transitions: TransitionSet,
        state_values: Vec<f64>,
    ) -> Result<Self> {
        let prims = Self {
            prefs,
            delta,
            sigma,
            transitions,
            state_values,
        };
        prims.validate()?;
        Ok(prims)
    }

    /// State values `1, 2, ..., K`.
    pub fn index_state_values(k: usize) -> Vec<f64> {
        (1..=k).map(|s| s as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.prefs.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::domain(format!("sigma = {} outside (0, 1)", self.sigma)));
        }
        self.transitions.validate()?;
        if self.state_values.len() != self.transitions.k() {
            return Err(Error::domain(format!(
                "{} state values for K = {}",
                self.state_values.len(),
                self.transitions.k()
            )));
        }
        if self.state_values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::domain("state values must be positive"));
        }
        if self.state_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("state values must be strictly increasing"));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.transitions.k()
    }

    /// Effective discount `delta * sigma` applied to continuation values.
    pub fn beta_discount(&self) -> f64 {
        self.delta * self.sigma
    }
}

/// Dynamic-choice parameters.
///
/// `beta0` is the log export-demand composite; `beta1`/`beta2` the log fixed
/// costs of export and innovation; `beta3`/`beta5` the log entry costs of
/// export and innovation with big-firm shifters `beta4`/`beta6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralBeta {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
}

impl StructuralBeta {
    pub const LEN: usize = 7;

    pub const NAMES: [&'static str; 7] =
        ["beta0", "beta1", "beta2", "beta3", "beta4", "beta5", "beta6"];

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            beta0: v[0],
            beta1: v[1],
            beta2: v[2],
            beta3: v[3],
            beta4: v[4],
            beta5: v[5],
            beta6: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.beta0, self.beta1, self.beta2, self.beta3, self.beta4, self.beta5, self.beta6,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn with_beta0(self, beta0: f64) -> Self {
        Self { beta0, ..self }
    }

    pub(crate) fn export_entry(&self, is_big: bool) -> f64 {
        (self.beta3 + if is_big { self.beta4 } else { 0.0 }).exp()
    }

    pub(crate) fn innovation_entry(&self, is_big: bool) -> f64 {
        (self.beta5 + if is_big { self.beta6 } else { 0.0 }).exp()
    }
}

/// One simulated vector of capability composites and cost shocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub lambda1_hat: f64,
    pub lambda2_hat: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub eps5: f64,
    pub eps6: f64,
}

impl Draw {
    /// Location of the log-normal capability draws; with variance ln 2 the
    /// population mean and variance are both one.
    pub fn log_location() -> f64 {
        -0.5 * std::f64::consts::LN_2
    }

    pub fn log_scale() -> f64 {
        std::f64::consts::LN_2.sqrt()
    }

    pub fn sample_capability<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (Self::log_location() + Self::log_scale() * z).exp()
    }

    pub fn sample_shock<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        rng.sample(StandardNormal)
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            lambda1_hat: Self::sample_capability(rng),
            lambda2_hat: Self::sample_capability(rng),
            eps3: Self::sample_shock(rng),
            eps4: Self::sample_shock(rng),
            eps5: Self::sample_shock(rng),
            eps6: Self::sample_shock(rng),
        }
    }
}

/// A fixed set of simulation draws reused at every parameter evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSet {
    pub seed: u64,
    pub rows: Vec<Draw>,
}

impl DrawSet {
    pub fn generate(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..d).map(|_| Draw::sample(&mut rng)).collect();
        Self { seed, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Observation cell: discretized state, lagged choices and firm size class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ZCell {
    /// State index in 1..=K.
    pub state: usize,
    pub lags: ChoicePair,
    pub is_big: bool,
}

impl ZCell {
    pub fn new(state: usize, lags: ChoicePair, is_big: bool) -> Self {
        Self {
            state,
            lags,
            is_big,
        }
    }

    /// Dense index in `0..8K`.
    pub fn index(&self) -> usize {
        ((self.state - 1) * 4 + self.lags.index()) * 2 + self.is_big as usize
    }

    pub fn from_index(i: usize) -> Self {
        let is_big = i % 2 == 1;
        let lags = ChoicePair::from_index((i / 2) % 4);
        Self::new(i / 8 + 1, lags, is_big)
    }

    /// All `8K` cells in index order.
    pub fn all(k: usize) -> impl Iterator<Item = ZCell> {
        (0..8 * k).map(ZCell::from_index)
    }

    pub fn count(k: usize) -> usize {
        8 * k
    }
}

impl fmt::Display for ZCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(state={}, lag_innovate={}, lag_export={}, big={})",
            self.state,
            self.lags.chi1(),
            self.lags.chi2(),
            self.is_big as u8
        )
    }
}

/// Normalized values of the four choices, indexed by [`ChoicePair::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceValues(pub [f64; 4]);

impl ChoiceValues {
    pub fn new(v00: f64, v01: f64, v10: f64, v11: f64) -> Self {
        Self([v00, v01, v10, v11])
    }

    pub fn get(&self, choice: ChoicePair) -> f64 {
        self.0[choice.index()]
    }

    pub fn v00(&self) -> f64 {
        self.0[0]
    }

    pub fn v11(&self) -> f64 {
        self.0[3]
    }
}

/// How continuation values are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueMode {
    /// Each choice value recurses on the same choice from next period on.
    #[default]
    Commitment,
    /// Standard Bellman continuation with a max over choices.
    Emax,
}

impl std::str::FromStr for ValueMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "commitment" => Ok(Self::Commitment),
            "emax" => Ok(Self::Emax),
            other => Err(Error::config(format!("unknown dynamics mode '{other}'"))),
        }
    }
}

/// Settings of the kernel-smoothed probability simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbabilityConfig {
    /// Logistic smoothing scale; 1 reproduces the plain logit smoother.
    pub scale: f64,
    /// Gate the numerator by the entry indicator as well as the denominator.
    pub gate_numerator: bool,
    pub mode: ValueMode,
}

impl Default for ProbabilityConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            gate_numerator: true,
            mode: ValueMode::Commitment,
        }
    }
}
