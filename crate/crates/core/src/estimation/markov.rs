use log::warn;
use serde::{Deserialize, Serialize};

use super::{FirmYear, NextYear};
use crate::dynamics::TransitionSet;
use crate::error::{Error, Result};
use crate::model::ChoicePair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitResult {
    pub sigma: f64,
    pub se: f64,
    /// Firm-years whose next calendar year is sampled.
    pub n_eligible: usize,
    pub n_exits: usize,
}

/// Survival probability as one minus the share of firm-years not observed
/// the following year.
pub fn estimate_exit(sample: &[FirmYear]) -> Result<ExitResult> {
    let eligible: Vec<_> = sample
        .iter()
        .filter(|o| o.next != NextYear::Unknown)
        .collect();
    if eligible.is_empty() {
        return Err(Error::estimation(
            "exit",
            "no firm-year has a sampled following year",
        ));
    }
    let n = eligible.len();
    let exits = eligible.iter().filter(|o| o.next == NextYear::Exit).count();
    let sigma = 1.0 - exits as f64 / n as f64;
    Ok(ExitResult {
        sigma,
        se: (sigma * (1.0 - sigma) / n as f64).sqrt(),
        n_eligible: n,
        n_exits: exits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionResult {
    pub transitions: TransitionSet,
    /// Row-major pair counts per choice.
    pub counts: [Vec<u64>; 4],
    /// Rows without data, filled uniformly: `(choice index, 1-based state)`.
    pub empty_rows: Vec<(usize, usize)>,
    /// Bootstrap standard errors, row-major per choice.
    pub se: Option<[Vec<f64>; 4]>,
}

impl TransitionResult {
    /// Observed number of pairs leaving `state` under `choice`.
    pub fn row_count(&self, choice: ChoicePair, state: usize) -> u64 {
        let k = self.transitions.k();
        self.counts[choice.index()][(state - 1) * k..state * k]
            .iter()
            .sum()
    }
}

/// Frequency estimator of the state transition matrices, one per choice,
/// over consecutive-year pairs of surviving firms.
pub fn estimate_transitions(sample: &[FirmYear], k: usize) -> Result<TransitionResult> {
    let mut counts: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0u64; k * k]);
    for o in sample {
        if let NextYear::Present { state } = o.next {
            counts[o.choice.index()][(o.state - 1) * k + state - 1] += 1;
        }
    }
    let mut empty_rows = Vec::new();
    let mut matrices: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; k * k]);
    for c in 0..4 {
        for from in 0..k {
            let row = &counts[c][from * k..(from + 1) * k];
            let total: u64 = row.iter().sum();
            for to in 0..k {
                matrices[c][from * k + to] = if total == 0 {
                    1.0 / k as f64
                } else {
                    row[to] as f64 / total as f64
                };
            }
            if total == 0 {
                empty_rows.push((c, from + 1));
            }
        }
    }
    if !empty_rows.is_empty() {
        warn!(
            "{} transition rows without data filled uniformly",
            empty_rows.len()
        );
    }
    Ok(TransitionResult {
        transitions: TransitionSet::new(k, matrices)?,
        counts,
        empty_rows,
        se: None,
    })
}
