//! Runs the estimation steps in order, with optional firm-block bootstrap,
//! and collects everything into a self-describing report.

use std::collections::{BTreeMap, BTreeSet};

use log::info;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{
    adjust_beta0, build_series, descriptive_tables, CounterfactualConfig, DescriptiveTables,
    YearSeries,
};
use crate::dynamics::{DrawSet, ModelPrimitives, ProbabilityEngine, TransitionSet};
use crate::error::{Error, Result};
use crate::estimation::dynamic::estimate_with_engine;
use crate::estimation::{
    apply_state, build_state, cell_counts, construct_lny, estimate_ces, estimate_exit,
    estimate_trade_cost, estimate_transitions, firm_years, run_bootstrap, CesResult,
    DynamicConfig, DynamicEstimate, ExitResult, FirmYear, ReMethod, ReplicateTable, StateConfig,
    StateSpec, TradeCostResult, TradeCostSpec, TransitionResult,
};
use crate::model::{ChoicePair, Preferences};
use crate::panel::{Aggregates, Panel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Steps to run, from 1 (CES) to 4 (dynamic).
    pub steps: Vec<u8>,
    /// Seed of the bootstrap resampling.
    pub seed: u64,
    /// Bootstrap replicates per step; 0 disables the bootstrap.
    pub bootstrap: usize,
    pub filter_processing: bool,
    pub state: StateConfig,
    /// Representative state values; `1..=K` when absent.
    pub state_values: Option<Vec<f64>>,
    pub delta: f64,
    pub trade_cost_spec: TradeCostSpec,
    pub re_method: ReMethod,
    /// Restrict the dynamic step to years flagged post-liberalization.
    pub post_only: bool,
    pub dynamic: DynamicConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            steps: vec![1, 2, 3, 4],
            seed: 1,
            bootstrap: 0,
            filter_processing: false,
            state: StateConfig::default(),
            state_values: None,
            delta: 0.95,
            trade_cost_spec: TradeCostSpec::default(),
            re_method: ReMethod::default(),
            post_only: true,
            dynamic: DynamicConfig::default(),
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.steps.iter().any(|s| !(1..=4).contains(s)) {
            return Err(Error::config(format!("steps must be within 1..=4, got {:?}", self.steps)));
        }
        if self.bootstrap == 1 {
            return Err(Error::config("bootstrap needs at least 2 replicates"));
        }
        if self.state.k < 2 {
            return Err(Error::config("at least 2 states are required"));
        }
        if let Some(sv) = &self.state_values {
            if sv.len() != self.state.k {
                return Err(Error::config(format!(
                    "{} state values for {} states",
                    sv.len(),
                    self.state.k
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta must lie in (0, 1)"));
        }
        if self.dynamic.draws == 0 {
            return Err(Error::config("draws must be at least 1"));
        }
        Ok(())
    }

    fn runs(&self, step: u8) -> bool {
        self.steps.contains(&step)
    }

    fn state_values(&self) -> Vec<f64> {
        self.state_values
            .clone()
            .unwrap_or_else(|| ModelPrimitives::index_state_values(self.state.k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStep {
    pub name: String,
    pub rows_before: usize,
    pub rows_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub rows: usize,
    pub firms: usize,
    pub years: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedStep {
    pub step: u8,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesReport {
    #[serde(flatten)]
    pub result: CesResult,
    pub bootstrap_se: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    #[serde(flatten)]
    pub result: ExitResult,
    pub bootstrap_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub schema_version: u32,
    pub software_version: String,
    pub config: EstimationConfig,
    /// Steps computed in this run; other results were carried over.
    pub steps_run: Vec<u8>,
    pub filters: Vec<FilterStep>,
    pub sample: SampleSummary,
    pub ces: Option<CesReport>,
    pub trade_cost: Option<TradeCostResult>,
    pub states: Option<StateSpec>,
    pub exit: Option<ExitReport>,
    pub transitions: Option<TransitionResult>,
    pub descriptive: Option<DescriptiveTables>,
    pub primitives: Option<ModelPrimitives>,
    pub dynamic: Option<DynamicEstimate>,
    pub replicates: BTreeMap<String, ReplicateTable>,
    pub failed_step: Option<FailedStep>,
}

impl EstimationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serializing report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("reading report: {e}")))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "report schema {} is not supported (expected {SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    fn require<'a, T>(v: &'a Option<T>, field: &str) -> Result<&'a T> {
        v.as_ref()
            .ok_or_else(|| Error::config(format!("report lacks '{field}'")))
    }
}

/// Applies the configured row filters and records them.
pub fn filter_panel(panel: &Panel, cfg: &EstimationConfig) -> (Panel, Vec<FilterStep>) {
    let mut p = panel.clone();
    let mut filters = Vec::new();
    if cfg.filter_processing {
        let before = p.len();
        p.drop_processing();
        filters.push(FilterStep {
            name: "drop processing-trade firms".into(),
            rows_before: before,
            rows_after: p.len(),
        });
    }
    (p, filters)
}

fn sample_summary(p: &Panel) -> SampleSummary {
    SampleSummary {
        rows: p.len(),
        firms: p.firm_count(),
        years: p.years().into_iter().collect(),
    }
}

fn step2(panel: &Panel, aggs: &Aggregates, cfg: &EstimationConfig, ces: &CesResult) -> Result<TradeCostResult> {
    let lny = construct_lny(panel, aggs, ces.rho, ces.rho_tilde)?;
    estimate_trade_cost(&lny, aggs, cfg.trade_cost_spec, cfg.re_method)
}

fn sample_with_states(panel: &Panel, spec: &StateSpec) -> Result<Vec<FirmYear>> {
    Ok(firm_years(panel, &apply_state(panel, spec)?))
}

fn primitives(
    cfg: &EstimationConfig,
    ces: &CesResult,
    sigma: f64,
    transitions: TransitionSet,
) -> Result<ModelPrimitives> {
    ModelPrimitives::new(
        Preferences::new(ces.rho, ces.rho_tilde)?,
        cfg.delta,
        sigma,
        transitions,
        cfg.state_values(),
    )
}

fn dynamic_years(aggs: &Aggregates, cfg: &EstimationConfig) -> Option<BTreeSet<i32>> {
    cfg.post_only.then(|| aggs.post_years())
}

fn transition_names(k: usize) -> Vec<String> {
    let mut names = vec!["sigma".to_string()];
    for c in ChoicePair::ALL {
        for i in 1..=k {
            for j in 1..=k {
                names.push(format!("p{}{}_{i}_{j}", c.chi1(), c.chi2()));
            }
        }
    }
    names
}

fn step3_values(sample: &[FirmYear], k: usize) -> Result<Vec<f64>> {
    let exit = estimate_exit(sample)?;
    let tr = estimate_transitions(sample, k)?;
    let mut v = vec![exit.sigma];
    for c in ChoicePair::ALL {
        v.extend_from_slice(tr.transitions.matrix(c));
    }
    Ok(v)
}

/// Runs the selected steps. Results of unselected steps come from `prior`
/// when given. A failing step is recorded in the report and stops the run.
pub fn run_estimation(
    panel: &Panel,
    aggs: &Aggregates,
    cfg: &EstimationConfig,
    prior: Option<&EstimationReport>,
) -> Result<EstimationReport> {
    cfg.validate()?;
    let (panel, filters) = filter_panel(panel, cfg);
    if panel.is_empty() {
        return Err(Error::config("no rows left after filtering"));
    }
    let mut steps: Vec<u8> = cfg.steps.clone();
    steps.sort_unstable();
    steps.dedup();
    let mut report = EstimationReport {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        steps_run: steps.clone(),
        filters,
        sample: sample_summary(&panel),
        ces: None,
        trade_cost: None,
        states: None,
        exit: None,
        transitions: None,
        descriptive: None,
        primitives: None,
        dynamic: None,
        replicates: BTreeMap::new(),
        failed_step: None,
    };
    if let Some(p) = prior {
        if !cfg.runs(1) {
            report.ces = p.ces.clone();
        }
        if !cfg.runs(2) {
            report.trade_cost = p.trade_cost.clone();
        }
        if !cfg.runs(3) {
            report.states = p.states.clone();
            report.exit = p.exit.clone();
            report.transitions = p.transitions.clone();
            report.descriptive = p.descriptive.clone();
        }
        for (name, t) in &p.replicates {
            let step = name.as_bytes().first().map(|b| b - b'0');
            if step.is_some_and(|s| !cfg.runs(s)) {
                report.replicates.insert(name.clone(), t.clone());
            }
        }
    }
    for step in steps {
        info!("step {step}");
        let res = match step {
            1 => run_step1(&panel, cfg, &mut report),
            2 => run_step2(&panel, aggs, cfg, &mut report),
            3 => run_step3(&panel, cfg, &mut report),
            _ => run_step4(&panel, aggs, cfg, &mut report),
        };
        if let Err(e) = res {
            log::error!("step {step} failed: {e}");
            report.failed_step = Some(FailedStep {
                step,
                error: e.to_string(),
            });
            break;
        }
    }
    Ok(report)
}

fn run_step1(panel: &Panel, cfg: &EstimationConfig, report: &mut EstimationReport) -> Result<()> {
    let result = estimate_ces(panel)?;
    let mut bootstrap_se = None;
    if cfg.bootstrap >= 2 {
        let t = run_bootstrap(panel, &["rho", "rho_tilde"], cfg.bootstrap, cfg.seed.wrapping_add(1), |p| {
            let r = estimate_ces(p)?;
            Ok(vec![r.rho, r.rho_tilde])
        })?;
        bootstrap_se = Some([t.se[0], t.se[1]]);
        report.replicates.insert("1_ces".into(), t);
    }
    report.ces = Some(CesReport {
        result,
        bootstrap_se,
    });
    Ok(())
}

fn run_step2(
    panel: &Panel,
    aggs: &Aggregates,
    cfg: &EstimationConfig,
    report: &mut EstimationReport,
) -> Result<()> {
    let ces = EstimationReport::require(&report.ces, "ces")?.result;
    let mut result = step2(panel, aggs, cfg, &ces)?;
    if cfg.bootstrap >= 2 {
        let names: Vec<String> = result.coefficients.iter().map(|c| c.name.clone()).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let t = run_bootstrap(panel, &refs, cfg.bootstrap, cfg.seed.wrapping_add(2), |p| {
            let ces = estimate_ces(p)?;
            let r = step2(p, aggs, cfg, &ces)?;
            if r.coefficients.len() != names.len() {
                return Err(Error::estimation("bootstrap", "regressor set changed"));
            }
            Ok(r.coefficients.iter().map(|c| c.value).collect())
        })?;
        for (c, se) in result.coefficients.iter_mut().zip(&t.se) {
            c.bootstrap_se = Some(*se);
        }
        report.replicates.insert("2_trade_cost".into(), t);
    }
    report.trade_cost = Some(result);
    Ok(())
}

fn run_step3(panel: &Panel, cfg: &EstimationConfig, report: &mut EstimationReport) -> Result<()> {
    let (assign, spec) = build_state(panel, &cfg.state)?;
    let sample = firm_years(panel, &assign);
    let exit = estimate_exit(&sample)?;
    let mut tr = estimate_transitions(&sample, spec.k)?;
    let mut exit_se = None;
    if cfg.bootstrap >= 2 {
        let names = transition_names(spec.k);
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let t = run_bootstrap(panel, &refs, cfg.bootstrap, cfg.seed.wrapping_add(3), |p| {
            step3_values(&sample_with_states(p, &spec)?, spec.k)
        })?;
        exit_se = Some(t.se[0]);
        let kk = spec.k * spec.k;
        tr.se = Some(std::array::from_fn(|c| {
            let m = tr.transitions.matrix(ChoicePair::from_index(c));
            (0..kk)
                .map(|i| {
                    if m[i] == 0.0 || m[i] == 1.0 {
                        0.0
                    } else {
                        t.se[1 + c * kk + i]
                    }
                })
                .collect()
        }));
        report.replicates.insert("3_exit_transitions".into(), t);
    }
    report.descriptive = Some(descriptive_tables(&sample));
    report.states = Some(spec);
    report.exit = Some(ExitReport {
        result: exit,
        bootstrap_se: exit_se,
    });
    report.transitions = Some(tr);
    Ok(())
}

fn run_step4(
    panel: &Panel,
    aggs: &Aggregates,
    cfg: &EstimationConfig,
    report: &mut EstimationReport,
) -> Result<()> {
    let ces = EstimationReport::require(&report.ces, "ces")?.result;
    let spec = EstimationReport::require(&report.states, "states")?.clone();
    let sigma = EstimationReport::require(&report.exit, "exit")?.result.sigma;
    let transitions = EstimationReport::require(&report.transitions, "transitions")?
        .transitions
        .clone();
    if transitions.k() != spec.k {
        return Err(Error::config("transition matrices do not match the state count"));
    }
    let prims = primitives(cfg, &ces, sigma, transitions)?;
    if cfg.post_only {
        aggs.check_covers(&panel.years())?;
    }
    let years = dynamic_years(aggs, cfg);
    let sample = sample_with_states(panel, &spec)?;
    let counts = cell_counts(&sample, spec.k, years.as_ref());
    let draws = DrawSet::generate(cfg.dynamic.draws, cfg.dynamic.draw_seed);
    let engine = ProbabilityEngine::new(&prims, &draws, cfg.dynamic.probability)?;
    let mut est = estimate_with_engine(&counts, &engine, &cfg.dynamic)?;

    if cfg.bootstrap >= 2 {
        let names = crate::dynamics::StructuralBeta::NAMES;
        let t = run_bootstrap(panel, &names, cfg.bootstrap, cfg.seed.wrapping_add(4), |p| {
            let ces = estimate_ces(p)?;
            let sample = sample_with_states(p, &spec)?;
            let exit = estimate_exit(&sample)?;
            let tr = estimate_transitions(&sample, spec.k)?;
            let prims = primitives(cfg, &ces, exit.sigma, tr.transitions)?;
            let counts = cell_counts(&sample, spec.k, years.as_ref());
            let engine = ProbabilityEngine::new(&prims, &draws, cfg.dynamic.probability)?;
            Ok(estimate_with_engine(&counts, &engine, &cfg.dynamic)?.beta.to_array().to_vec())
        })?;
        est.bootstrap_se = Some(std::array::from_fn(|i| t.se[i]));
        report.replicates.insert("4_dynamic".into(), t);
    }
    report.primitives = Some(prims);
    report.dynamic = Some(est);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub alpha1: f64,
    pub beta0_post: f64,
    pub beta0_pre: f64,
    pub series: YearSeries,
    pub did_effect: f64,
    pub did_effect_fitted: f64,
}

/// Observed against model joint probabilities by year, from a finished
/// report and the panel it was estimated on.
pub fn run_counterfactual(
    report: &EstimationReport,
    panel: &Panel,
    cfg: &CounterfactualConfig,
) -> Result<CounterfactualResult> {
    let dynamic = EstimationReport::require(&report.dynamic, "dynamic")?;
    let prims = EstimationReport::require(&report.primitives, "primitives")?;
    let spec = EstimationReport::require(&report.states, "states")?;
    let tc = EstimationReport::require(&report.trade_cost, "trade_cost")?;
    let alpha1 = tc
        .alpha1()
        .ok_or_else(|| Error::config("report lacks 'trade_cost.alpha1'"))?;
    prims.validate()?;
    let (panel, _) = filter_panel(panel, &report.config);
    let sample = sample_with_states(&panel, spec)?;
    let dc = &report.config.dynamic;
    let draws = DrawSet::generate(dynamic.draws, dynamic.draw_seed);
    let engine = ProbabilityEngine::new(prims, &draws, dc.probability)?;
    let beta0_pre = adjust_beta0(dynamic.beta.beta0, alpha1, prims.prefs.rho_tilde);
    let series = build_series(&sample, &engine, &dynamic.beta, beta0_pre, cfg)?;
    Ok(CounterfactualResult {
        alpha1,
        beta0_post: dynamic.beta.beta0,
        beta0_pre,
        did_effect: series.did_effect()?,
        did_effect_fitted: series.did_effect_fitted()?,
        series,
    })
}
