//! Forward simulation of firm panels from known parameters.

use std::collections::BTreeSet;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::counterfactual::adjust_beta0;
use crate::dynamics::{
    choice_values, hard_choice, Draw, ModelPrimitives, StructuralBeta, TransitionSet, ZCell,
};
use crate::error::{Error, Result};
use crate::model::ChoicePair;
use crate::panel::{AggregateRow, Aggregates, Panel, PanelRow};

/// How the capability composites evolve over a firm's life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndowmentMode {
    /// Drawn once at entry and kept.
    #[default]
    FixedAtEntry,
    /// Redrawn every year from the distribution conditional on passing the
    /// entry test at the current state.
    RedrawYearly,
}

/// How the cost shocks evolve over a firm's life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockMode {
    #[default]
    Yearly,
    FixedPerFirm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Firms passing the entry test each calendar year.
    pub n_entrants_per_year: usize,
    /// Years written to the panel. Gaps are simulated but not recorded.
    pub years: Vec<i32>,
    /// Unrecorded years simulated before the first recorded year.
    pub burn_in: usize,
    /// Parameters with the post-liberalization `beta0`.
    pub true_beta: StructuralBeta,
    pub prims: ModelPrimitives,
    /// Relative standard deviation of the total variable cost error.
    pub noise_tvc: f64,
    /// Standard deviation of the error in the trade-cost regression.
    pub noise_lny: f64,
    pub aggregates: Aggregates,
    /// Log change of the iceberg cost at liberalization.
    pub alpha1_true: f64,
    pub seed: u64,
    pub big_share: f64,
    pub endowments: EndowmentMode,
    pub shocks: ShockMode,
    /// Emit workers and capital so that the principal-component state
    /// construction recovers the simulated state. Revenues are rescaled
    /// per row to keep the cost identity exact.
    pub raw_states: bool,
    /// Share of exporter rows flagged as processing trade.
    pub processing_share: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::reference(1)
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.years.is_empty() {
            return Err(Error::config("year list is empty"));
        }
        if self.n_entrants_per_year == 0 {
            return Err(Error::config("n_entrants_per_year must be at least 1"));
        }
        if !(self.noise_tvc >= 0.0 && self.noise_lny >= 0.0) {
            return Err(Error::config("noise levels must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.big_share) || !(0.0..=1.0).contains(&self.processing_share)
        {
            return Err(Error::config("shares must lie in [0, 1]"));
        }
        if !self.true_beta.is_finite() || !self.alpha1_true.is_finite() {
            return Err(Error::config("true parameters must be finite"));
        }
        self.prims.validate()?;
        let years: BTreeSet<i32> = self.years.iter().cloned().collect();
        if years.len() != self.years.len() {
            return Err(Error::config("duplicate simulation years"));
        }
        self.aggregates.check_covers(&years)?;
        Ok(())
    }

    /// Post-liberalization flag of a calendar year: taken from the latest
    /// aggregate row at or before it, else from the earliest row.
    fn is_post(&self, year: i32) -> bool {
        let rows = &self.aggregates.rows;
        rows.iter()
            .filter(|r| r.year <= year)
            .max_by_key(|r| r.year)
            .or_else(|| rows.iter().min_by_key(|r| r.year))
            .is_none_or(|r| r.dwto == 1)
    }
}

/// Aggregates growing at fixed rates with `dwto = 1` after `liberalized`.
pub fn growth_aggregates(years: &[i32], liberalized: i32) -> Aggregates {
    let rows = years
        .iter()
        .map(|y| {
            let t = (*y - years[0]) as f64;
            AggregateRow {
                year: *y,
                gni_pc_home: 7000.0 * 1.09f64.powf(t),
                gni_pc_world: 5200.0 * 1.025f64.powf(t),
                dwto: (*y > liberalized) as u8,
            }
        })
        .collect();
    Aggregates { rows }
}

/// Four-state transition matrices shaped like typical estimates: persistent
/// states, with exporting and innovating shifting mass upward.
pub fn reference_transitions() -> TransitionSet {
    TransitionSet::from_rows([
        vec![
            vec![0.72, 0.25, 0.03, 0.00],
            vec![0.20, 0.58, 0.19, 0.03],
            vec![0.02, 0.17, 0.72, 0.09],
            vec![0.02, 0.05, 0.16, 0.77],
        ],
        vec![
            vec![0.70, 0.27, 0.03, 0.00],
            vec![0.11, 0.59, 0.30, 0.00],
            vec![0.02, 0.11, 0.71, 0.16],
            vec![0.00, 0.02, 0.08, 0.90],
        ],
        vec![
            vec![0.64, 0.36, 0.00, 0.00],
            vec![0.00, 0.62, 0.33, 0.05],
            vec![0.04, 0.08, 0.67, 0.21],
            vec![0.05, 0.00, 0.16, 0.79],
        ],
        vec![
            vec![0.50, 0.25, 0.00, 0.25],
            vec![0.00, 0.67, 0.33, 0.00],
            vec![0.03, 0.03, 0.81, 0.13],
            vec![0.00, 0.00, 0.02, 0.98],
        ],
    ])
    .expect("reference matrices are stochastic")
}

impl SimConfig {
    /// Calibrated reference setup over 2000-2007 with liberalization after
    /// 2001: (rho, rho_tilde, sigma) = (0.75, 0.92, 0.75), a trade-cost drop
    /// of 0.135 in logs, and large entry relative to fixed costs.
    pub fn reference(seed: u64) -> Self {
        let years: Vec<i32> = (2000..=2007).collect();
        let prims = ModelPrimitives::new(
            crate::model::Preferences::new(0.75, 0.92).expect("valid preferences"),
            0.95,
            0.75,
            reference_transitions(),
            vec![3.5, 4.0, 4.5, 5.0],
        )
        .expect("valid primitives");
        Self {
            n_entrants_per_year: 64,
            aggregates: growth_aggregates(&years, 2001),
            years,
            burn_in: 10,
            true_beta: StructuralBeta {
                beta0: -8.9705,
                beta1: 0.4345,
                beta2: -1.7658,
                beta3: 8.3171,
                beta4: -2.3615,
                beta5: 8.4302,
                beta6: -1.404,
            },
            prims,
            noise_tvc: 0.02,
            noise_lny: 0.1,
            alpha1_true: -0.135,
            seed,
            big_share: 0.3,
            endowments: EndowmentMode::RedrawYearly,
            shocks: ShockMode::Yearly,
            raw_states: false,
            processing_share: 0.0,
        }
    }
}

/// Simulator ground truth for one panel row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowTruth {
    pub state: usize,
    pub is_big: bool,
    pub lambda1_hat: f64,
    pub lambda2_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub panel: Panel,
    pub aggregates: Aggregates,
    /// Aligned with `panel.rows`.
    pub truth: Vec<RowTruth>,
    pub entrants: usize,
    /// Firms that left because no endowment passed the entry test.
    pub forced_exits: usize,
}

const MAX_ENTRY_ATTEMPTS: usize = 10_000;

/// Stationary distribution of the no-activity transition matrix, or uniform
/// when that matrix is not irreducible.
pub fn stationary_initial_states(transitions: &TransitionSet) -> Vec<f64> {
    let k = transitions.k();
    let m = transitions.matrix(ChoicePair::NONE);
    let uniform = vec![1.0 / k as f64; k];
    if !irreducible(m, k) {
        warn!("no-activity transition matrix is not irreducible; initial states uniform");
        return uniform;
    }
    let a = DMatrix::from_fn(k, k, |i, j| {
        if i == k - 1 {
            1.0
        } else {
            m[j * k + i] - if i == j { 1.0 } else { 0.0 }
        }
    });
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    match a.lu().solve(&b) {
        Some(pi) => pi.iter().map(|p| p.max(0.0)).collect(),
        None => {
            warn!("stationary distribution solve failed; initial states uniform");
            uniform
        }
    }
}

fn irreducible(m: &[f64], k: usize) -> bool {
    let reach = |from: usize, forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let p = if forward { m[i * k + j] } else { m[j * k + i] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(0, true) && reach(0, false)
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

struct Firm {
    rng: ChaCha8Rng,
    state: usize,
    lags: ChoicePair,
    is_big: bool,
    draw: Draw,
}

impl Firm {
    fn v00(&self, prims: &ModelPrimitives, beta: &StructuralBeta, draw: &Draw) -> f64 {
        let cell = ZCell::new(self.state, self.lags, self.is_big);
        choice_values(&cell, beta, draw, prims).v00()
    }

    /// Redraws endowments until the entry test passes at the current state.
    fn draw_endowments(&mut self, prims: &ModelPrimitives, beta: &StructuralBeta) -> bool {
        for _ in 0..MAX_ENTRY_ATTEMPTS {
            let mut d = self.draw;
            d.lambda1_hat = Draw::sample_capability(&mut self.rng);
            d.lambda2_hat = Draw::sample_capability(&mut self.rng);
            if self.v00(prims, beta, &d) >= 0.0 {
                self.draw = d;
                return true;
            }
        }
        false
    }

    fn draw_shocks(&mut self) {
        self.draw.eps3 = Draw::sample_shock(&mut self.rng);
        self.draw.eps4 = Draw::sample_shock(&mut self.rng);
        self.draw.eps5 = Draw::sample_shock(&mut self.rng);
        self.draw.eps6 = Draw::sample_shock(&mut self.rng);
    }
}

/// Simulates entry, exit, choices and state transitions and emits the
/// observable panel.
pub fn simulate_panel(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let prims = &cfg.prims;
    let prefs = &prims.prefs;
    let (rho, rt) = (prefs.rho, prefs.rho_tilde);
    let (a, at, g) = (
        prefs.home_exponent(),
        prefs.export_exponent(),
        prefs.cross_exponent(),
    );
    let beta_post = cfg.true_beta;
    let beta_pre = beta_post.with_beta0(adjust_beta0(beta_post.beta0, cfg.alpha1_true, rt));
    let init = stationary_initial_states(&prims.transitions);

    let recorded: BTreeSet<i32> = cfg.years.iter().cloned().collect();
    let first = *recorded.iter().next().unwrap();
    let last = *recorded.iter().last().unwrap();
    let start = first - cfg.burn_in as i32;
    let y_ref = cfg.aggregates.get(first).unwrap();

    let mut rows = Vec::new();
    let mut truth = Vec::new();
    let mut entrants = 0usize;
    let mut forced_exits = 0usize;
    let mut firm_no = 0usize;

    for (cohort, entry_year) in (start..=last).enumerate() {
        for j in 0..cfg.n_entrants_per_year {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((cohort * cfg.n_entrants_per_year + j) as u64);
            let is_big = rng.gen::<f64>() < cfg.big_share;
            let state = sample_index(&mut rng, &init) + 1;
            let draw = Draw::sample(&mut rng);
            let mut firm = Firm {
                rng,
                state,
                lags: ChoicePair::NONE,
                is_big,
                draw,
            };
            let beta0 = if cfg.is_post(entry_year) {
                &beta_post
            } else {
                &beta_pre
            };
            if !firm.draw_endowments(prims, beta0) {
                forced_exits += 1;
                continue;
            }
            entrants += 1;
            firm_no += 1;
            let id = format!("f{firm_no:05}");

            for year in entry_year..=last {
                let post = cfg.is_post(year);
                let beta = if post { &beta_post } else { &beta_pre };
                if year > entry_year {
                    if cfg.endowments == EndowmentMode::RedrawYearly
                        && !firm.draw_endowments(prims, beta)
                    {
                        forced_exits += 1;
                        break;
                    }
                    if cfg.shocks == ShockMode::Yearly {
                        firm.draw_shocks();
                    }
                }
                let cell = ZCell::new(firm.state, firm.lags, firm.is_big);
                let choice = hard_choice(&choice_values(&cell, beta, &firm.draw, prims));

                if recorded.contains(&year) {
                    let agg = cfg.aggregates.get(year).unwrap();
                    let (row, t) = observe(
                        cfg, &mut firm, &id, year, choice, beta.beta0, agg, y_ref, (rho, rt, a, at, g),
                    );
                    rows.push(row);
                    truth.push(t);
                }

                if firm.rng.gen::<f64>() >= prims.sigma {
                    break;
                }
                let next = sample_index(&mut firm.rng, prims.transitions.row(choice, firm.state - 1));
                firm.state = next + 1;
                firm.lags = choice;
            }
        }
    }
    info!(
        "simulated {} rows from {} entrants ({} forced exits)",
        rows.len(),
        entrants,
        forced_exits
    );
    let aggregates = Aggregates {
        rows: cfg
            .aggregates
            .rows
            .iter()
            .filter(|r| recorded.contains(&r.year))
            .cloned()
            .collect(),
    };
    Ok(SimOutput {
        panel: Panel { rows },
        aggregates,
        truth,
        entrants,
        forced_exits,
    })
}

#[allow(clippy::too_many_arguments)]
fn observe(
    cfg: &SimConfig,
    firm: &mut Firm,
    id: &str,
    year: i32,
    choice: ChoicePair,
    beta0: f64,
    agg: &AggregateRow,
    y_ref: &AggregateRow,
    (rho, rt, a, at, g): (f64, f64, f64, f64, f64),
) -> (PanelRow, RowTruth) {
    let rng = &mut firm.rng;
    let d = &firm.draw;
    let sv = cfg.prims.state_values[firm.state - 1].ln();
    let innov = if choice.innovate {
        d.lambda2_hat.ln_1p()
    } else {
        0.0
    };
    let mut dom = (a * rho.ln() + a * sv + d.lambda1_hat.ln() + innov).exp()
        * (agg.gni_pc_home / y_ref.gni_pc_home);
    let lny_noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_lny;
    let mut exp = if choice.export {
        (at * rt.ln() + beta0 + at * sv + g * (d.lambda1_hat.ln() + innov)
            + lny_noise * rt / (rt - 1.0))
            .exp()
            * (agg.gni_pc_world / y_ref.gni_pc_world)
    } else {
        0.0
    };

    let (workers, kl) = if cfg.raw_states {
        let tl = (0.6 * firm.state as f64 + rng.gen_range(-0.2..0.2)).exp() / 10.0;
        let scale = tl / (rho * dom + rt * exp);
        dom *= scale;
        exp *= scale;
        (tl, 20.0 * (rng.gen_range(-0.05..0.05f64)).exp())
    } else {
        let tl = if firm.is_big {
            rng.gen_range(1.0..5.0)
        } else {
            rng.gen_range(0.05..0.5)
        };
        let kl = (50f64.ln() + 0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        (tl, kl)
    };

    let exact = rho * dom + rt * exp;
    let tvc_noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_tvc;
    let tvc = (exact * (1.0 + tvc_noise)).max(1e-6 * exact);
    let wage_share = rng.gen_range(0.08..0.2);
    let new_share = rng.gen_range(0.1..0.6);
    let processing = choice.export && rng.gen::<f64>() < cfg.processing_share;

    let row = PanelRow {
        firm_id: id.to_string(),
        year,
        dom_revenue: dom,
        export_revenue: exp,
        total_wage: tvc * wage_share,
        intermediates: tvc * (1.0 - wage_share),
        workers,
        new_product_value: if choice.innovate { dom * new_share } else { 0.0 },
        fixed_assets_net: kl * workers,
        processing_flag: Some(processing as u8),
        state: Some(firm.state),
    };
    let t = RowTruth {
        state: firm.state,
        is_big: firm.is_big,
        lambda1_hat: d.lambda1_hat,
        lambda2_hat: d.lambda2_hat,
    };
    (row, t)
}
