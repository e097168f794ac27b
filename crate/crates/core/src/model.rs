//! Static firm economics: CES demand, marginal cost under product innovation,
//! markup pricing, revenues and per-period profits.
//!
//! Everything here is in raw (un-normalized) units. The dynamic layer works
//! with profits divided by the fixed production cost; see [`crate::dynamics`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CES preference parameters for the home and export markets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    pub rho: f64,
    pub rho_tilde: f64,
}

impl Preferences {
    pub fn new(rho: f64, rho_tilde: f64) -> Result<Self> {
        let prefs = Self { rho, rho_tilde };
        prefs.validate()?;
        Ok(prefs)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("rho_tilde", self.rho_tilde)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::domain(format!("{name} = {v} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Elasticity of substitution 1/(1-rho) in the home market.
    pub fn elasticity(&self) -> f64 {
        1.0 / (1.0 - self.rho)
    }

    pub fn elasticity_export(&self) -> f64 {
        1.0 / (1.0 - self.rho_tilde)
    }

    /// rho/(1-rho): the exponent mapping capability into home-market profit.
    pub fn home_exponent(&self) -> f64 {
        self.rho / (1.0 - self.rho)
    }

    /// rho~/(1-rho~).
    pub fn export_exponent(&self) -> f64 {
        self.rho_tilde / (1.0 - self.rho_tilde)
    }

    /// (1-rho) rho~ / (rho (1-rho~)): elasticity of export profit with
    /// respect to home-market profit scale.
    pub fn cross_exponent(&self) -> f64 {
        self.export_exponent() / self.home_exponent()
    }
}

/// Firm capability endowments drawn at entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endowments {
    /// Production capability.
    pub lambda1: f64,
    /// Innovation capability.
    pub lambda2: f64,
    /// Attractiveness of new products relative to existing ones.
    pub zeta: f64,
}

impl Endowments {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("zeta", self.zeta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Innovation premium lambda2^(rho/(1-rho)) zeta^(rho/(1-rho)): the
    /// proportional lift in home-market gross profit from innovating.
    pub fn innovation_premium(&self, prefs: &Preferences) -> f64 {
        (prefs.home_exponent() * (self.lambda2.ln() + self.zeta.ln())).exp()
    }
}

/// Fixed, entry and trade costs in currency units per period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostStructure {
    /// Fixed cost of production.
    pub f: f64,
    /// Fixed cost of innovation.
    pub f_n: f64,
    /// Entry cost of innovation.
    pub f_n_e: f64,
    /// Fixed cost of export.
    pub f_e: f64,
    /// Entry cost of export.
    pub f_e_e: f64,
    /// Iceberg trade cost.
    pub tau: f64,
}

impl CostStructure {
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0) {
            return Err(Error::domain(format!("f = {} must be positive", self.f)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::domain(format!("tau = {} must be positive", self.tau)));
        }
        Ok(())
    }
}

/// Market environment faced by a firm in one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketEnv {
    /// Home aggregate demand.
    pub a: f64,
    /// Foreign aggregate demand.
    pub a_tilde: f64,
    /// Per-worker variable input cost (wage plus intermediates).
    pub w_plus_m: f64,
    /// Observed labor-productivity component.
    pub psi: f64,
}

impl MarketEnv {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("A", self.a),
            ("A_tilde", self.a_tilde),
            ("w+m", self.w_plus_m),
            ("psi", self.psi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Innovation (`innovate`) and export (`export`) indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChoicePair {
    pub innovate: bool,
    pub export: bool,
}

impl ChoicePair {
    pub const NONE: ChoicePair = ChoicePair::new(false, false);
    pub const EXPORT: ChoicePair = ChoicePair::new(false, true);
    pub const INNOVATE: ChoicePair = ChoicePair::new(true, false);
    pub const BOTH: ChoicePair = ChoicePair::new(true, true);

    /// All four choices in tie-breaking priority order.
    pub const ALL: [ChoicePair; 4] = [Self::NONE, Self::EXPORT, Self::INNOVATE, Self::BOTH];

    pub const fn new(innovate: bool, export: bool) -> Self {
        Self { innovate, export }
    }

    /// Builds a pair from 0/1 indicators, rejecting anything else.
    pub fn from_indicators(chi1: u8, chi2: u8) -> Result<Self> {
        let bit = |v: u8, name: &str| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::domain(format!("{name} = {v} outside {{0, 1}}"))),
        };
        Ok(Self::new(bit(chi1, "chi1")?, bit(chi2, "chi2")?))
    }

    /// Position in [`ChoicePair::ALL`]: (0,0)=0, (0,1)=1, (1,0)=2, (1,1)=3.
    pub const fn index(self) -> usize {
        (self.innovate as usize) * 2 + self.export as usize
    }

    pub const fn from_index(i: usize) -> Self {
        Self::ALL[i & 3]
    }

    pub fn chi1(self) -> u8 {
        self.innovate as u8
    }

    pub fn chi2(self) -> u8 {
        self.export as u8
    }
}

impl std::fmt::Display for ChoicePair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.chi1(), self.chi2())
    }
}

/// Marginal cost of the CES composite good at innovation level `eta`.
///
/// `c = (lambda2 + eta)(w+m) / [lambda2 (1 + zeta^rho eta^rho)^(1/rho) lambda1 psi]`,
/// evaluated in logs.
pub fn marginal_cost(
    endow: &Endowments,
    env: &MarketEnv,
    prefs: &Preferences,
    eta: f64,
) -> Result<f64> {
    endow.validate()?;
    env.validate()?;
    prefs.validate()?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::domain(format!("eta = {eta} must be non-negative")));
    }
    let rho = prefs.rho;
    let aggregator_ln = if eta == 0.0 {
        0.0
    } else {
        let inner = rho * (endow.zeta.ln() + eta.ln());
        ln_1p_exp(inner) / rho
    };
    let ln_c = (endow.lambda2 + eta).ln() + env.w_plus_m.ln()
        - endow.lambda2.ln()
        - aggregator_ln
        - endow.lambda1.ln()
        - env.psi.ln();
    Ok(ln_c.exp())
}

/// Cost-minimizing innovation level `lambda2^(1/(1-rho)) zeta^(rho/(1-rho))`.
pub fn optimal_eta(endow: &Endowments, prefs: &Preferences) -> f64 {
    let rho = prefs.rho;
    ((endow.lambda2.ln() + rho * endow.zeta.ln()) / (1.0 - rho)).exp()
}

/// Markup prices `(c/rho, tau c/rho~)`.
pub fn optimal_prices(c: f64, tau: f64, prefs: &Preferences) -> (f64, f64) {
    (c / prefs.rho, tau * c / prefs.rho_tilde)
}

/// CES demand `q = A p^(1/(rho-1))`.
pub fn demand(aggregate: f64, price: f64, rho: f64) -> f64 {
    aggregate * price.powf(1.0 / (rho - 1.0))
}

/// Optimal home and export revenues at marginal cost `c`.
///
/// `R = rho^(rho/(1-rho)) A c^(rho/(rho-1))` and
/// `R~ = rho~^(rho~/(1-rho~)) A~ (tau c)^(rho~/(rho~-1))`.
pub fn revenues(env: &MarketEnv, prefs: &Preferences, c: f64, tau: f64) -> (f64, f64) {
    let (rho, rt) = (prefs.rho, prefs.rho_tilde);
    let home =
        (prefs.home_exponent() * rho.ln() + env.a.ln() + rho / (rho - 1.0) * c.ln()).exp();
    let export = (prefs.export_exponent() * rt.ln()
        + env.a_tilde.ln()
        + rt / (rt - 1.0) * (c.ln() + tau.ln()))
    .exp();
    (home, export)
}

/// Per-period home profit and, when exporting, export profit.
///
/// Entry costs are charged only when the matching lagged indicator is zero.
/// The innovation level is the optimal one on innovation branches and zero
/// otherwise.
pub fn period_profit(
    choice: ChoicePair,
    lags: ChoicePair,
    endow: &Endowments,
    env: &MarketEnv,
    costs: &CostStructure,
    prefs: &Preferences,
) -> Result<(f64, Option<f64>)> {
    costs.validate()?;
    let eta = if choice.innovate {
        optimal_eta(endow, prefs)
    } else {
        0.0
    };
    let c = marginal_cost(endow, env, prefs, eta)?;
    let (home_rev, export_rev) = revenues(env, prefs, c, costs.tau);

    let mut pi = (1.0 - prefs.rho) * home_rev - costs.f;
    if choice.innovate {
        pi -= costs.f_n + if lags.innovate { 0.0 } else { costs.f_n_e };
    }
    let pi_tilde = choice.export.then_some(
        (1.0 - prefs.rho_tilde) * export_rev
            - costs.f_e
            - if lags.export { 0.0 } else { costs.f_e_e },
    );
    Ok((pi, pi_tilde))
}

/// ln(1 + e^x) without overflow.
pub(crate) fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
