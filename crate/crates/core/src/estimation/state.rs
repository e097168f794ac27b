use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::stats::{median, quantile_sorted, Pca2};

/// Where the discretized state comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSource {
    /// The `state` column when every row has one, else principal components.
    #[default]
    Auto,
    Column,
    Pca,
}

impl std::str::FromStr for StateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "column" => Ok(Self::Column),
            "pca" => Ok(Self::Pca),
            other => Err(Error::config(format!("unknown state source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    pub k: usize,
    pub source: StateSource,
    /// Workers above which a firm is big; pooled median when unset.
    pub big_threshold: Option<f64>,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            k: 4,
            source: StateSource::Auto,
            big_threshold: None,
        }
    }
}

/// Persisted state construction, reused by later runs on the same cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub k: usize,
    /// `Column` or `Pca`.
    pub source: StateSource,
    /// Interior bin edges of the principal-component index (PCA only).
    pub edges: Vec<f64>,
    pub pca: Option<Pca2>,
    pub big_threshold: f64,
    /// Share of rows in each state.
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateAssignment {
    pub state: Vec<usize>,
    pub is_big: Vec<bool>,
}

fn pca_index(panel: &Panel, pca: &Pca2) -> Vec<f64> {
    panel
        .rows
        .iter()
        .map(|r| pca.score(r.workers, r.kl()) / r.wm())
        .collect()
}

fn bin(x: f64, edges: &[f64]) -> usize {
    1 + edges.iter().filter(|e| **e < x).count()
}

/// Discretizes the capability-to-cost index into `k` quantile bins and
/// flags big firms.
pub fn build_state(panel: &Panel, cfg: &StateConfig) -> Result<(StateAssignment, StateSpec)> {
    if cfg.k < 2 {
        return Err(Error::config(format!("K = {} must be at least 2", cfg.k)));
    }
    if panel.is_empty() {
        return Err(Error::estimation("state", "empty panel"));
    }
    let source = match cfg.source {
        StateSource::Auto if panel.has_state_column() => StateSource::Column,
        StateSource::Auto => StateSource::Pca,
        s => s,
    };
    let workers: Vec<f64> = panel.rows.iter().map(|r| r.workers).collect();
    let big_threshold = cfg.big_threshold.unwrap_or_else(|| median(&workers));

    let (edges, pca) = match source {
        StateSource::Column => {
            if !panel.has_state_column() {
                return Err(Error::config("state column requested but missing"));
            }
            (Vec::new(), None)
        }
        _ => {
            let kl: Vec<f64> = panel.rows.iter().map(|r| r.kl()).collect();
            let pca = Pca2::fit(&workers, &kl)?;
            let mut idx = pca_index(panel, &pca);
            idx.sort_by(f64::total_cmp);
            let edges = (1..cfg.k)
                .map(|j| quantile_sorted(&idx, j as f64 / cfg.k as f64))
                .collect();
            (edges, Some(pca))
        }
    };
    let mut spec = StateSpec {
        k: cfg.k,
        source,
        edges,
        pca,
        big_threshold,
        shares: Vec::new(),
    };
    let assignment = apply_state(panel, &spec)?;
    spec.shares = (1..=cfg.k)
        .map(|s| {
            assignment.state.iter().filter(|x| **x == s).count() as f64 / panel.len() as f64
        })
        .collect();
    info!("states from {:?}: shares {:?}", spec.source, spec.shares);
    Ok((assignment, spec))
}

/// Assigns states and size classes with previously built cuts.
pub fn apply_state(panel: &Panel, spec: &StateSpec) -> Result<StateAssignment> {
    let state = match (&spec.source, &spec.pca) {
        (StateSource::Pca, Some(pca)) => pca_index(panel, pca)
            .into_iter()
            .map(|x| bin(x, &spec.edges))
            .collect(),
        (StateSource::Column, _) => panel
            .rows
            .iter()
            .map(|r| match r.state {
                Some(s) if (1..=spec.k).contains(&s) => Ok(s),
                Some(s) => Err(Error::domain(format!(
                    "state {s} of firm {} in {} outside 1..{}",
                    r.firm_id, r.year, spec.k
                ))),
                None => Err(Error::domain(format!(
                    "missing state for firm {} in {}",
                    r.firm_id, r.year
                ))),
            })
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(Error::config("state spec lacks principal-component weights")),
    };
    Ok(StateAssignment {
        state,
        is_big: panel
            .rows
            .iter()
            .map(|r| r.workers > spec.big_threshold)
            .collect(),
    })
}
