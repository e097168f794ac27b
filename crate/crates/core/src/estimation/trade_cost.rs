use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Aggregates, Panel};
use crate::stats::ols;

/// Transformed export-to-domestic revenue ratio of one exporter-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnyObs {
    pub firm_id: String,
    pub year: i32,
    pub lny: f64,
}

/// Builds `lny` for every exporter row. Equals the log iceberg cost plus a
/// constant when revenues follow the model.
pub fn construct_lny(
    panel: &Panel,
    aggregates: &Aggregates,
    rho: f64,
    rho_tilde: f64,
) -> Result<Vec<LnyObs>> {
    if !(rho > 0.0 && rho < 1.0 && rho_tilde > 0.0 && rho_tilde < 1.0) {
        return Err(Error::domain(format!(
            "preference estimates ({rho}, {rho_tilde}) outside (0, 1)"
        )));
    }
    let exporters: Vec<_> = panel.rows.iter().filter(|r| r.exports()).collect();
    let years: BTreeSet<i32> = exporters.iter().map(|r| r.year).collect();
    aggregates.check_covers(&years)?;
    let eh = (rho - 1.0) / rho;
    let ex = (rho_tilde - 1.0) / rho_tilde;
    Ok(exporters
        .into_iter()
        .map(|r| {
            let agg = aggregates.get(r.year).unwrap();
            let lny = rho_tilde.ln() + ex * r.export_revenue.ln()
                - rho.ln()
                - eh * r.dom_revenue.ln()
                + eh * agg.gni_pc_home.ln()
                - ex * agg.gni_pc_world.ln();
            LnyObs {
                firm_id: r.firm_id.clone(),
                year: r.year,
                lny,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeCostSpec {
    /// Regime dummy from the aggregates file.
    #[default]
    Dwto,
    /// Regime dummy shifted one year later.
    LaggedDwto,
    /// One dummy per year except the first.
    YearDummies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReMethod {
    /// Feasible GLS with Swamy-Arora variance components.
    #[default]
    SwamyArora,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
    pub se: f64,
    pub bootstrap_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeCostResult {
    pub spec: TradeCostSpec,
    pub method: ReMethod,
    pub coefficients: Vec<Coefficient>,
    pub n: usize,
    pub n_firms: usize,
    pub sigma_u2: f64,
    pub sigma_e2: f64,
}

impl TradeCostResult {
    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn alpha0(&self) -> f64 {
        self.coefficients[0].value
    }

    /// Regime coefficient, absent for the year-dummy specification.
    pub fn alpha1(&self) -> Option<f64> {
        self.coef("alpha1").map(|c| c.value)
    }
}

fn regressors(
    obs: &[LnyObs],
    aggregates: &Aggregates,
    spec: TradeCostSpec,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    match spec {
        TradeCostSpec::Dwto => {
            let years: BTreeSet<i32> = obs.iter().map(|o| o.year).collect();
            aggregates.check_covers(&years)?;
            Ok((
                vec!["alpha1".into()],
                obs.iter()
                    .map(|o| vec![aggregates.get(o.year).unwrap().dwto as f64])
                    .collect(),
            ))
        }
        TradeCostSpec::LaggedDwto => {
            let first_post = aggregates
                .post_years()
                .into_iter()
                .next()
                .ok_or_else(|| Error::SingularDesign("no post-regime year".into()))?;
            Ok((
                vec!["alpha1".into()],
                obs.iter()
                    .map(|o| vec![(o.year > first_post) as u8 as f64])
                    .collect(),
            ))
        }
        TradeCostSpec::YearDummies => {
            let years: Vec<i32> = obs
                .iter()
                .map(|o| o.year)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .skip(1)
                .collect();
            Ok((
                years.iter().map(|y| format!("year_{y}")).collect(),
                obs.iter()
                    .map(|o| years.iter().map(|y| (o.year == *y) as u8 as f64).collect())
                    .collect(),
            ))
        }
    }
}

/// Random-effects regression of `lny` on an intercept and the regime
/// regressors.
pub fn estimate_trade_cost(
    obs: &[LnyObs],
    aggregates: &Aggregates,
    spec: TradeCostSpec,
    method: ReMethod,
) -> Result<TradeCostResult> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, o) in obs.iter().enumerate() {
        groups.entry(o.firm_id.as_str()).or_default().push(i);
    }
    let n = obs.len();
    let n_firms = groups.len();
    if n_firms < 2 || !groups.values().any(|g| g.len() >= 2) {
        return Err(Error::estimation(
            "exporters",
            format!("{n_firms} firms; need at least 2 with one observed twice"),
        ));
    }
    let (names, x) = regressors(obs, aggregates, spec)?;
    let k = names.len();
    let y: Vec<f64> = obs.iter().map(|o| o.lny).collect();

    let pooled_design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let pooled = ols(&pooled_design, &DVector::from_column_slice(&y), "trade cost")?;

    let (sigma_u2, sigma_e2) = match method {
        ReMethod::Pooled => (0.0, pooled.sigma2()),
        ReMethod::SwamyArora => variance_components(&groups, &x, &y, k).unwrap_or_else(|| {
            warn!("variance components unavailable; using pooled least squares");
            (0.0, pooled.sigma2())
        }),
    };

    // A negligible idiosyncratic variance would put all weight on the
    // within transformation and leave the intercept unidentified.
    let scale = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let fit = if sigma_u2 > 0.0 && sigma_e2 > 1e-12 * scale {
        let mut theta = vec![0.0; n];
        let mut ybar = vec![0.0; n];
        let mut xbar = vec![vec![0.0; k]; n];
        for g in groups.values() {
            let t = g.len() as f64;
            let th = 1.0 - (sigma_e2 / (t * sigma_u2 + sigma_e2)).sqrt();
            let my = g.iter().map(|i| y[*i]).sum::<f64>() / t;
            let mx: Vec<f64> = (0..k)
                .map(|j| g.iter().map(|i| x[*i][j]).sum::<f64>() / t)
                .collect();
            for i in g {
                theta[*i] = th;
                ybar[*i] = my;
                xbar[*i] = mx.clone();
            }
        }
        let design = DMatrix::from_fn(n, k + 1, |i, j| {
            if j == 0 {
                1.0 - theta[i]
            } else {
                x[i][j - 1] - theta[i] * xbar[i][j - 1]
            }
        });
        let ys = DVector::from_iterator(n, (0..n).map(|i| y[i] - theta[i] * ybar[i]));
        ols(&design, &ys, "trade cost")?
    } else {
        pooled
    };

    let mut coefficients = vec![Coefficient {
        name: "alpha0".into(),
        value: fit.coef[0],
        se: fit.se[0],
        bootstrap_se: None,
    }];
    for (j, name) in names.into_iter().enumerate() {
        coefficients.push(Coefficient {
            name,
            value: fit.coef[j + 1],
            se: fit.se[j + 1],
            bootstrap_se: None,
        });
    }
    Ok(TradeCostResult {
        spec,
        method,
        coefficients,
        n,
        n_firms,
        sigma_u2,
        sigma_e2,
    })
}

/// Swamy-Arora components from the within and between regressions, with a
/// harmonic-mean group size for unbalanced panels.
fn variance_components(
    groups: &BTreeMap<&str, Vec<usize>>,
    x: &[Vec<f64>],
    y: &[f64],
    k: usize,
) -> Option<(f64, f64)> {
    let n = y.len();
    let nf = groups.len();
    let mut wy = vec![0.0; n];
    let mut wx = vec![vec![0.0; k]; n];
    let mut by = Vec::with_capacity(nf);
    let mut bx = Vec::with_capacity(nf);
    for g in groups.values() {
        let t = g.len() as f64;
        let my = g.iter().map(|i| y[*i]).sum::<f64>() / t;
        let mx: Vec<f64> = (0..k)
            .map(|j| g.iter().map(|i| x[*i][j]).sum::<f64>() / t)
            .collect();
        for i in g {
            wy[*i] = y[*i] - my;
            for j in 0..k {
                wx[*i][j] = x[*i][j] - mx[j];
            }
        }
        by.push(my);
        bx.push(mx);
    }
    let dof_w = n.checked_sub(nf + k).filter(|d| *d > 0)?;
    let within = ols(
        &DMatrix::from_fn(n, k, |i, j| wx[i][j]),
        &DVector::from_column_slice(&wy),
        "within",
    )
    .ok()?;
    let sigma_e2 = within.ssr / dof_w as f64;

    let dof_b = nf.checked_sub(k + 1).filter(|d| *d > 0)?;
    let between = ols(
        &DMatrix::from_fn(nf, k + 1, |i, j| if j == 0 { 1.0 } else { bx[i][j - 1] }),
        &DVector::from_column_slice(&by),
        "between",
    )
    .ok()?;
    let sigma_b2 = between.ssr / dof_b as f64;
    let t_bar = nf as f64 / groups.values().map(|g| 1.0 / g.len() as f64).sum::<f64>();
    Some(((sigma_b2 - sigma_e2 / t_bar).max(0.0), sigma_e2))
}
