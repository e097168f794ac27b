use nalgebra::{DMatrix, DVector};

use super::{ChoiceValues, Draw, ModelPrimitives, StructuralBeta, ValueMode, ZCell};
use crate::model::ChoicePair;

/// Normalized per-period payoff of `choice` at `cell` for one draw.
///
/// Home profit is `(1-rho) rho^(rho/(1-rho)) sv^(rho/(1-rho)) lambda1_hat (1 + lambda2_hat chi1) - 1`.
/// Export adds `(1-rho~) rho~^(rho~/(1-rho~)) e^beta0 sv^(rho~/(1-rho~))
/// lambda1_hat^g (1+lambda2_hat)^(g chi1)` with `g` the cross exponent, less
/// the fixed cost `e^beta1 + eps3`. Innovation costs `e^beta2 + eps4`. Entry
/// costs are added only when `charge_entry` is set and the matching lag is 0.
pub fn flow_payoff(
    choice: ChoicePair,
    cell: &ZCell,
    draw: &Draw,
    beta: &StructuralBeta,
    prims: &ModelPrimitives,
    charge_entry: bool,
) -> f64 {
    let prefs = &prims.prefs;
    let (rho, rt) = (prefs.rho, prefs.rho_tilde);
    let (a, at, g) = (
        prefs.home_exponent(),
        prefs.export_exponent(),
        prefs.cross_exponent(),
    );
    let ln_sv = prims.state_values[cell.state - 1].ln();

    let home_ln = (1.0 - rho).ln() + a * rho.ln() + a * ln_sv + draw.lambda1_hat.ln();
    let mut home = home_ln.exp();
    if choice.innovate {
        home *= 1.0 + draw.lambda2_hat;
    }
    let mut payoff = home - 1.0;

    if choice.export {
        let mut export_ln =
            (1.0 - rt).ln() + at * rt.ln() + beta.beta0 + at * ln_sv + g * draw.lambda1_hat.ln();
        if choice.innovate {
            export_ln += g * draw.lambda2_hat.ln_1p();
        }
        payoff += export_ln.exp() - (beta.beta1.exp() + draw.eps3);
        if charge_entry && !cell.lags.export {
            payoff -= beta.export_entry(cell.is_big) + draw.eps5;
        }
    }
    if choice.innovate {
        payoff -= beta.beta2.exp() + draw.eps4;
        if charge_entry && !cell.lags.innovate {
            payoff -= beta.innovation_entry(cell.is_big) + draw.eps6;
        }
    }
    payoff
}

/// Solves `w = flow + discount * M w` for a row-major K x K matrix `M`.
pub fn solve_discounted(matrix: &[f64], k: usize, discount: f64, flow: &[f64]) -> Vec<f64> {
    let a = DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - discount * matrix[i * k + j]
    });
    let b = DVector::from_column_slice(flow);
    a.lu()
        .solve(&b)
        .expect("I - discount * M is nonsingular for discount < 1")
        .as_slice()
        .to_vec()
}

fn no_entry_flows(
    choice: ChoicePair,
    beta: &StructuralBeta,
    draw: &Draw,
    prims: &ModelPrimitives,
) -> Vec<f64> {
    (1..=prims.k())
        .map(|s| {
            let cell = ZCell::new(s, choice, false);
            flow_payoff(choice, &cell, draw, beta, prims, false)
        })
        .collect()
}

/// Per-state value of repeating `choice` forever once its entry costs are sunk.
pub fn solve_commitment_values(
    choice: ChoicePair,
    beta: &StructuralBeta,
    draw: &Draw,
    prims: &ModelPrimitives,
) -> Vec<f64> {
    let flow = no_entry_flows(choice, beta, draw, prims);
    solve_discounted(
        prims.transitions.matrix(choice),
        prims.k(),
        prims.beta_discount(),
        &flow,
    )
}

/// Choice values at `cell` under commitment continuation.
pub fn choice_values(
    cell: &ZCell,
    beta: &StructuralBeta,
    draw: &Draw,
    prims: &ModelPrimitives,
) -> ChoiceValues {
    let discount = prims.beta_discount();
    let from = cell.state - 1;
    let mut v = [0.0; 4];
    for choice in ChoicePair::ALL {
        let w = solve_commitment_values(choice, beta, draw, prims);
        let continuation: f64 = prims
            .transitions
            .row(choice, from)
            .iter()
            .zip(&w)
            .map(|(p, x)| p * x)
            .sum();
        v[choice.index()] =
            flow_payoff(choice, cell, draw, beta, prims, true) + discount * continuation;
    }
    ChoiceValues(v)
}

pub fn choice_values_with_mode(
    cell: &ZCell,
    beta: &StructuralBeta,
    draw: &Draw,
    prims: &ModelPrimitives,
    mode: ValueMode,
) -> ChoiceValues {
    match mode {
        ValueMode::Commitment => choice_values(cell, beta, draw, prims),
        ValueMode::Emax => emax_solve(cell.is_big, beta, draw, prims).choice_values(cell, beta, draw, prims),
    }
}

/// Optimal value function over `(state, lagged choices)` for one draw and
/// firm size class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaxSolution {
    k: usize,
    /// Indexed by `(state - 1) * 4 + lags.index()`.
    pub values: Vec<f64>,
    pub policy: Vec<ChoicePair>,
    pub iterations: usize,
}

impl EmaxSolution {
    pub fn value(&self, state: usize, lags: ChoicePair) -> f64 {
        self.values[(state - 1) * 4 + lags.index()]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// One-step lookahead values at `cell` given this value function.
    pub fn choice_values(
        &self,
        cell: &ZCell,
        beta: &StructuralBeta,
        draw: &Draw,
        prims: &ModelPrimitives,
    ) -> ChoiceValues {
        ChoiceValues(q_values(&self.values, cell, beta, draw, prims))
    }

    /// Sup-norm Bellman residual.
    pub fn residual(
        &self,
        is_big: bool,
        beta: &StructuralBeta,
        draw: &Draw,
        prims: &ModelPrimitives,
    ) -> f64 {
        (0..self.values.len())
            .map(|s| {
                let cell = ZCell::new(s / 4 + 1, ChoicePair::from_index(s % 4), is_big);
                let q = q_values(&self.values, &cell, beta, draw, prims);
                let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (best - self.values[s]).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn q_values(
    values: &[f64],
    cell: &ZCell,
    beta: &StructuralBeta,
    draw: &Draw,
    prims: &ModelPrimitives,
) -> [f64; 4] {
    let discount = prims.beta_discount();
    let from = cell.state - 1;
    let mut q = [0.0; 4];
    for choice in ChoicePair::ALL {
        let continuation: f64 = prims
            .transitions
            .row(choice, from)
            .iter()
            .enumerate()
            .map(|(j, p)| p * values[j * 4 + choice.index()])
            .sum();
        q[choice.index()] =
            flow_payoff(choice, cell, draw, beta, prims, true) + discount * continuation;
    }
    q
}

fn first_argmax(q: &[f64; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if q[i] > q[best] {
            best = i;
        }
    }
    best
}

/// Solves the Bellman equation with a max over the four choices inside the
/// continuation, by policy iteration from the greedy commitment policy.
pub fn emax_solve(
    is_big: bool,
    beta: &StructuralBeta,
    draw: &Draw,
    prims: &ModelPrimitives,
) -> EmaxSolution {
    let k = prims.k();
    let n = 4 * k;
    let discount = prims.beta_discount();
    let cells: Vec<ZCell> = (0..n)
        .map(|s| ZCell::new(s / 4 + 1, ChoicePair::from_index(s % 4), is_big))
        .collect();
    let rewards: Vec<[f64; 4]> = cells
        .iter()
        .map(|cell| ChoicePair::ALL.map(|c| flow_payoff(c, cell, draw, beta, prims, true)))
        .collect();

    let mut policy: Vec<usize> = cells
        .iter()
        .map(|cell| first_argmax(&choice_values(cell, beta, draw, prims).0))
        .collect();
    let mut values = vec![0.0; n];
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let a = DMatrix::from_fn(n, n, |s, t| {
            let c = ChoicePair::from_index(policy[s]);
            let mut entry = if s == t { 1.0 } else { 0.0 };
            if t % 4 == c.index() {
                entry -= discount * prims.transitions.prob(c, s / 4, t / 4);
            }
            entry
        });
        let b = DVector::from_iterator(n, (0..n).map(|s| rewards[s][policy[s]]));
        values = a
            .lu()
            .solve(&b)
            .expect("policy evaluation system is nonsingular")
            .as_slice()
            .to_vec();

        let mut changed = false;
        for s in 0..n {
            let q = q_values(&values, &cells[s], beta, draw, prims);
            let best = first_argmax(&q);
            let current = q[policy[s]];
            if q[best] > current + 1e-12 * (1.0 + current.abs()) {
                policy[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    EmaxSolution {
        k,
        values,
        policy: policy.into_iter().map(ChoicePair::from_index).collect(),
        iterations,
    }
}
