//! The four estimation steps: CES parameters from the cost identity, the
//! trade-cost shift, exit and state transitions, and the dynamic choice
//! parameters by simulated least squares.

pub mod bootstrap;
pub mod ces;
pub mod dynamic;
pub mod markov;
pub mod state;
pub mod trade_cost;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dynamics::ZCell;
use crate::model::ChoicePair;
use crate::panel::Panel;

pub use bootstrap::{resample_firms, run_bootstrap, ReplicateTable};
pub use ces::{estimate_ces, CesResult};
pub use dynamic::{
    cell_counts, dynamic_objective, estimate_dynamic, CellCounts, DynamicConfig, DynamicEstimate,
};
pub use markov::{estimate_exit, estimate_transitions, ExitResult, TransitionResult};
pub use state::{apply_state, build_state, StateAssignment, StateConfig, StateSource, StateSpec};
pub use trade_cost::{
    construct_lny, estimate_trade_cost, LnyObs, ReMethod, TradeCostResult, TradeCostSpec,
};

/// What is known about a firm's presence in the following calendar year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextYear {
    /// The following year is not in the sample.
    Unknown,
    Exit,
    Present { state: usize },
}

/// A panel row with its derived choice, lags, state and size class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirmYear {
    /// Index into the panel rows.
    pub row: usize,
    pub year: i32,
    pub choice: ChoicePair,
    /// Previous-year choices; `None` when the previous calendar year is not
    /// in the sample. Firms absent in a sampled previous year have no lags
    /// to carry and count as `(0,0)`.
    pub lags: Option<ChoicePair>,
    pub state: usize,
    pub is_big: bool,
    pub next: NextYear,
}

impl FirmYear {
    pub fn cell(&self) -> Option<ZCell> {
        self.lags.map(|l| ZCell::new(self.state, l, self.is_big))
    }

    pub fn joint(&self) -> bool {
        self.choice == ChoicePair::BOTH
    }
}

/// Derives the firm-year sample. Adjacency is by calendar year: lags need
/// year `t-1` and next-year status needs year `t+1` in the sample.
pub fn firm_years(panel: &Panel, states: &StateAssignment) -> Vec<FirmYear> {
    let years: BTreeSet<i32> = panel.years();
    let index: HashMap<(&str, i32), usize> = panel
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.firm_id.as_str(), r.year), i))
        .collect();
    panel
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let id = r.firm_id.as_str();
            let lags = if years.contains(&(r.year - 1)) {
                Some(
                    index
                        .get(&(id, r.year - 1))
                        .map_or(ChoicePair::NONE, |j| panel.rows[*j].choice()),
                )
            } else {
                None
            };
            let next = if !years.contains(&(r.year + 1)) {
                NextYear::Unknown
            } else {
                match index.get(&(id, r.year + 1)) {
                    Some(j) => NextYear::Present {
                        state: states.state[*j],
                    },
                    None => NextYear::Exit,
                }
            };
            FirmYear {
                row: i,
                year: r.year,
                choice: r.choice(),
                lags,
                state: states.state[i],
                is_big: states.is_big[i],
                next,
            }
        })
        .collect()
}
