use std::collections::BTreeSet;

use log::info;
use serde::{Deserialize, Serialize};

use super::FirmYear;
use crate::dynamics::{DrawSet, ModelPrimitives, ProbabilityConfig, ProbabilityEngine, StructuralBeta, ZCell};
use crate::error::{Error, Result};
use crate::optim::{anneal, nelder_mead, AnnealConfig, SimplexConfig};

/// Observations aggregated by cell: the objective only depends on how many
/// joint and non-joint firm-years each cell holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub cells: Vec<ZCell>,
    pub joint: Vec<u64>,
    pub total: Vec<u64>,
    pub n: u64,
    /// Rows dropped because their previous calendar year is not sampled.
    pub dropped_no_lag: usize,
    /// Rows outside the selected years.
    pub dropped_years: usize,
}

/// Counts over rows with defined lags, optionally restricted to `years`.
pub fn cell_counts(sample: &[FirmYear], k: usize, years: Option<&BTreeSet<i32>>) -> CellCounts {
    let mut joint = vec![0u64; ZCell::count(k)];
    let mut total = vec![0u64; ZCell::count(k)];
    let mut dropped_no_lag = 0;
    let mut dropped_years = 0;
    for o in sample {
        if years.is_some_and(|y| !y.contains(&o.year)) {
            dropped_years += 1;
            continue;
        }
        match o.cell() {
            Some(c) => {
                total[c.index()] += 1;
                joint[c.index()] += o.joint() as u64;
            }
            None => dropped_no_lag += 1,
        }
    }
    let keep: Vec<usize> = (0..total.len()).filter(|i| total[*i] > 0).collect();
    CellCounts {
        cells: keep.iter().map(|i| ZCell::from_index(*i)).collect(),
        joint: keep.iter().map(|i| joint[*i]).collect(),
        total: keep.iter().map(|i| total[*i]).collect(),
        n: total.iter().sum(),
        dropped_no_lag,
        dropped_years,
    }
}

/// `(1/2N) sum (chi1 chi2 - Pr)^2` given per-cell probabilities.
pub fn objective_from_probabilities(counts: &CellCounts, probs: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..counts.cells.len() {
        let ones = counts.joint[i] as f64;
        let zeros = (counts.total[i] - counts.joint[i]) as f64;
        q += ones * (1.0 - probs[i]).powi(2) + zeros * probs[i].powi(2);
    }
    q / (2.0 * counts.n as f64)
}

/// Simulated least-squares objective.
pub fn dynamic_objective(
    beta: &StructuralBeta,
    counts: &CellCounts,
    engine: &ProbabilityEngine,
) -> Result<f64> {
    if counts.n == 0 {
        return Err(Error::estimation("dynamic", "no observations with lags"));
    }
    let probs = engine.cell_probabilities(beta, &counts.cells)?;
    Ok(objective_from_probabilities(counts, &probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicConfig {
    pub draws: usize,
    pub draw_seed: u64,
    pub probability: ProbabilityConfig,
    pub lower: f64,
    pub upper: f64,
    pub initial: StructuralBeta,
    /// Skip the global phase and start the simplex at `initial`.
    pub skip_anneal: bool,
    pub anneal: AnnealConfig,
    pub simplex: SimplexConfig,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            draws: 1000,
            draw_seed: 20011211,
            probability: ProbabilityConfig::default(),
            lower: -15.0,
            upper: 15.0,
            initial: StructuralBeta {
                beta0: -9.0,
                beta1: 0.0,
                beta2: 0.0,
                beta3: 5.0,
                beta4: 0.0,
                beta5: 5.0,
                beta6: 0.0,
            },
            skip_anneal: false,
            anneal: AnnealConfig::default(),
            simplex: SimplexConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicEstimate {
    pub beta: StructuralBeta,
    pub q: f64,
    pub q_initial: f64,
    pub q_anneal: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub n_obs: u64,
    pub n_cells: usize,
    pub dropped_no_lag: usize,
    pub dropped_years: usize,
    pub draws: usize,
    pub draw_seed: u64,
    pub bootstrap_se: Option<[f64; 7]>,
}

/// Annealing over the parameter box followed by the simplex, with one draw
/// set held fixed across every evaluation.
pub fn estimate_dynamic(
    counts: &CellCounts,
    prims: &ModelPrimitives,
    cfg: &DynamicConfig,
) -> Result<DynamicEstimate> {
    let draws = DrawSet::generate(cfg.draws, cfg.draw_seed);
    let engine = ProbabilityEngine::new(prims, &draws, cfg.probability)?;
    estimate_with_engine(counts, &engine, cfg)
}

pub fn estimate_with_engine(
    counts: &CellCounts,
    engine: &ProbabilityEngine,
    cfg: &DynamicConfig,
) -> Result<DynamicEstimate> {
    if !cfg.initial.is_finite() {
        return Err(Error::config("initial parameters must be finite"));
    }
    let q_initial = dynamic_objective(&cfg.initial, counts, engine)?;
    let q = |x: &[f64]| {
        dynamic_objective(&StructuralBeta::from_slice(x), counts, engine).unwrap_or(f64::INFINITY)
    };
    let x0 = cfg.initial.to_array();
    let lower = [cfg.lower; 7];
    let upper = [cfg.upper; 7];
    let (start, q_anneal, mut evaluations) = if cfg.skip_anneal {
        (x0.to_vec(), q_initial, 1)
    } else {
        let m = anneal(q, &x0, &lower, &upper, &cfg.anneal);
        info!("annealing: Q = {:.6e} after {} evaluations", m.f, m.evaluations);
        (m.x, m.f, m.evaluations + 1)
    };
    let clamped = |x: &[f64]| {
        let y: Vec<f64> = x.iter().map(|v| v.clamp(cfg.lower, cfg.upper)).collect();
        q(&y)
    };
    let m = nelder_mead(clamped, &start, &cfg.simplex);
    evaluations += m.evaluations;
    let x: Vec<f64> = m.x.iter().map(|v| v.clamp(cfg.lower, cfg.upper)).collect();
    let (beta, qv) = if m.f <= q_anneal {
        (StructuralBeta::from_slice(&x), m.f)
    } else {
        (StructuralBeta::from_slice(&start), q_anneal)
    };
    info!(
        "simplex: Q = {:.6e}, converged = {}, {} evaluations",
        qv, m.converged, evaluations
    );
    Ok(DynamicEstimate {
        beta,
        q: qv,
        q_initial,
        q_anneal,
        converged: m.converged,
        evaluations,
        n_obs: counts.n,
        n_cells: counts.cells.len(),
        dropped_no_lag: counts.dropped_no_lag,
        dropped_years: counts.dropped_years,
        draws: engine.draws(),
        draw_seed: cfg.draw_seed,
        bootstrap_se: None,
    })
}
