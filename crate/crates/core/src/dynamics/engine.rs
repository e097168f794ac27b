use nalgebra::DMatrix;

use super::{
    emax_solve, smoothed_probabilities, ChoiceValues, Draw, DrawSet, ModelPrimitives,
    ProbabilityConfig, StructuralBeta, ValueMode, ZCell,
};
use crate::error::{Error, Result};
use crate::model::ChoicePair;

/// Cached evaluator of simulated choice probabilities over all cells.
///
/// Under commitment continuation the stationary value of a choice is linear
/// in `(1, e^beta0, e^beta1, e^beta2)`, so the beta-free pieces are solved
/// once per draw and each parameter evaluation is a handful of products.
/// The entry test only involves the no-activity value and is cached as well.
#[derive(Debug, Clone)]
pub struct ProbabilityEngine {
    prims: ModelPrimitives,
    draws: Vec<Draw>,
    cfg: ProbabilityConfig,
    k: usize,
    /// `(I - delta sigma M)^-1` applied to home profit, per (draw, choice, state).
    home: Vec<f64>,
    /// Same for the export revenue term without `e^beta0`.
    export: Vec<f64>,
    /// `1 / (1 - delta sigma)`.
    annuity: f64,
    /// Entry indicator per (state, draw).
    enters: Vec<bool>,
}

impl ProbabilityEngine {
    pub fn new(prims: &ModelPrimitives, draws: &DrawSet, cfg: ProbabilityConfig) -> Result<Self> {
        prims.validate()?;
        if draws.is_empty() {
            return Err(Error::config("draw set is empty"));
        }
        if !(cfg.scale > 0.0) {
            return Err(Error::config(format!(
                "smoothing scale {} must be positive",
                cfg.scale
            )));
        }
        let k = prims.k();
        let disc = prims.beta_discount();
        let prefs = &prims.prefs;
        let (rho, rt) = (prefs.rho, prefs.rho_tilde);
        let (a, at, g) = (
            prefs.home_exponent(),
            prefs.export_exponent(),
            prefs.cross_exponent(),
        );

        let inverses: Vec<DMatrix<f64>> = ChoicePair::ALL
            .iter()
            .map(|c| {
                let m = prims.transitions.matrix(*c);
                let id = DMatrix::<f64>::identity(k, k);
                let dm = DMatrix::from_row_slice(k, k, m) * disc;
                (id - dm)
                    .try_inverse()
                    .expect("I - delta sigma M is invertible")
            })
            .collect();

        let home_const = (1.0 - rho).ln() + a * rho.ln();
        let export_const = (1.0 - rt).ln() + at * rt.ln();
        let mut home = vec![0.0; draws.len() * 4 * k];
        let mut export = vec![0.0; draws.len() * 4 * k];
        for (d, draw) in draws.rows.iter().enumerate() {
            let l1 = draw.lambda1_hat.ln();
            let l2 = draw.lambda2_hat.ln_1p();
            for c in ChoicePair::ALL {
                let h = nalgebra::DVector::from_iterator(
                    k,
                    prims.state_values.iter().map(|sv| {
                        let base = (home_const + a * sv.ln() + l1).exp();
                        if c.innovate {
                            base * (1.0 + draw.lambda2_hat)
                        } else {
                            base
                        }
                    }),
                );
                let x = nalgebra::DVector::from_iterator(
                    k,
                    prims.state_values.iter().map(|sv| {
                        let mut ln = export_const + at * sv.ln() + g * l1;
                        if c.innovate {
                            ln += g * l2;
                        }
                        ln.exp()
                    }),
                );
                let gh = &inverses[c.index()] * h;
                let gx = &inverses[c.index()] * x;
                let off = (d * 4 + c.index()) * k;
                home[off..off + k].copy_from_slice(gh.as_slice());
                export[off..off + k].copy_from_slice(gx.as_slice());
            }
        }

        let annuity = 1.0 / (1.0 - disc);
        let mut enters = vec![false; k * draws.len()];
        for s in 0..k {
            for d in 0..draws.len() {
                let v00 = home[d * 4 * k + s] - annuity;
                enters[s * draws.len() + d] = v00 >= 0.0;
            }
        }

        Ok(Self {
            prims: prims.clone(),
            draws: draws.rows.clone(),
            cfg,
            k,
            home,
            export,
            annuity,
            enters,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn draws(&self) -> usize {
        self.draws.len()
    }

    pub fn config(&self) -> &ProbabilityConfig {
        &self.cfg
    }

    pub fn primitives(&self) -> &ModelPrimitives {
        &self.prims
    }

    /// Number of draws passing the entry test at `state` (commitment values).
    pub fn entrants(&self, state: usize) -> usize {
        let n = self.draws.len();
        self.enters[(state - 1) * n..state * n]
            .iter()
            .filter(|e| **e)
            .count()
    }

    /// Choice values at `cell` for draw `d` under commitment continuation.
    pub fn values(&self, beta: &StructuralBeta, cell: &ZCell, d: usize) -> ChoiceValues {
        let costs = Costs::new(beta, cell.is_big);
        self.values_with(&costs, cell, d)
    }

    fn values_with(&self, costs: &Costs, cell: &ZCell, d: usize) -> ChoiceValues {
        let k = self.k;
        let s = cell.state - 1;
        let draw = &self.draws[d];
        let mut v = [0.0; 4];
        for c in ChoicePair::ALL {
            let off = (d * 4 + c.index()) * k + s;
            let mut x = self.home[off] - self.annuity;
            if c.export {
                x += costs.e0 * self.export[off] - self.annuity * (costs.e1 + draw.eps3);
                if !cell.lags.export {
                    x -= costs.export_entry + draw.eps5;
                }
            }
            if c.innovate {
                x -= self.annuity * (costs.e2 + draw.eps4);
                if !cell.lags.innovate {
                    x -= costs.innovation_entry + draw.eps6;
                }
            }
            v[c.index()] = x;
        }
        ChoiceValues(v)
    }

    /// Conditional-on-entry averages of the four smoothed choice
    /// probabilities at each cell, in the order given.
    pub fn cell_choice_probabilities(
        &self,
        beta: &StructuralBeta,
        cells: &[ZCell],
    ) -> Result<Vec<[f64; 4]>> {
        match self.cfg.mode {
            ValueMode::Commitment => cells
                .iter()
                .map(|cell| self.commitment_cell(beta, cell))
                .collect(),
            ValueMode::Emax => self.emax_cells(beta, cells),
        }
    }

    /// Simulated `Pr(innovate and export | entry)` at each cell.
    pub fn cell_probabilities(&self, beta: &StructuralBeta, cells: &[ZCell]) -> Result<Vec<f64>> {
        Ok(self
            .cell_choice_probabilities(beta, cells)?
            .into_iter()
            .map(|p| p[ChoicePair::BOTH.index()])
            .collect())
    }

    fn commitment_cell(&self, beta: &StructuralBeta, cell: &ZCell) -> Result<[f64; 4]> {
        let costs = Costs::new(beta, cell.is_big);
        let n = self.draws.len();
        let mask = &self.enters[(cell.state - 1) * n..cell.state * n];
        let mut acc = [0.0; 4];
        let mut entrants = 0usize;
        for (d, enters) in mask.iter().enumerate() {
            if *enters {
                entrants += 1;
            } else if self.cfg.gate_numerator {
                continue;
            }
            let p = smoothed_probabilities(&self.values_with(&costs, cell, d), self.cfg.scale);
            for i in 0..4 {
                acc[i] += p[i];
            }
        }
        if entrants == 0 {
            return Err(Error::NoEntrants(*cell));
        }
        Ok(acc.map(|x| x / entrants as f64))
    }

    fn emax_cells(&self, beta: &StructuralBeta, cells: &[ZCell]) -> Result<Vec<[f64; 4]>> {
        let n = self.draws.len();
        let mut acc = vec![[0.0; 4]; cells.len()];
        let mut entrants = vec![0usize; cells.len()];
        for is_big in [false, true] {
            if !cells.iter().any(|c| c.is_big == is_big) {
                continue;
            }
            for d in 0..n {
                let draw = &self.draws[d];
                let sol = emax_solve(is_big, beta, draw, &self.prims);
                for (i, cell) in cells.iter().enumerate() {
                    if cell.is_big != is_big {
                        continue;
                    }
                    let v = sol.choice_values(cell, beta, draw, &self.prims);
                    let enters = v.v00() >= 0.0;
                    if enters {
                        entrants[i] += 1;
                    } else if self.cfg.gate_numerator {
                        continue;
                    }
                    let p = smoothed_probabilities(&v, self.cfg.scale);
                    for j in 0..4 {
                        acc[i][j] += p[j];
                    }
                }
            }
        }
        cells
            .iter()
            .zip(acc.into_iter().zip(entrants))
            .map(|(cell, (a, e))| {
                if e == 0 {
                    Err(Error::NoEntrants(*cell))
                } else {
                    Ok(a.map(|x| x / e as f64))
                }
            })
            .collect()
    }
}

struct Costs {
    e0: f64,
    e1: f64,
    e2: f64,
    export_entry: f64,
    innovation_entry: f64,
}

impl Costs {
    fn new(beta: &StructuralBeta, is_big: bool) -> Self {
        Self {
            e0: beta.beta0.exp(),
            e1: beta.beta1.exp(),
            e2: beta.beta2.exp(),
            export_entry: beta.export_entry(is_big),
            innovation_entry: beta.innovation_entry(is_big),
        }
    }
}
