use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::stats::ols;

/// Fit diagnostics of a no-intercept regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n: usize,
    pub mean_residual: f64,
    /// Uncentered R squared.
    pub r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CesResult {
    pub rho: f64,
    pub rho_se: f64,
    pub rho_tilde: f64,
    pub rho_tilde_se: f64,
    pub domestic: FitDiagnostics,
    pub exporters: FitDiagnostics,
}

impl CesResult {
    pub fn elasticity(&self) -> f64 {
        1.0 / (1.0 - self.rho)
    }

    pub fn elasticity_export(&self) -> f64 {
        1.0 / (1.0 - self.rho_tilde)
    }
}

fn through_origin(x: &[f64], y: &[f64], what: &str) -> Result<(f64, f64, FitDiagnostics)> {
    let fit = ols(
        &DMatrix::from_column_slice(x.len(), 1, x),
        &DVector::from_column_slice(y),
        what,
    )?;
    let b = fit.coef[0];
    let resid_sum: f64 = x.iter().zip(y).map(|(x, y)| y - b * x).sum();
    let tss: f64 = y.iter().map(|v| v * v).sum();
    Ok((
        b,
        fit.se[0],
        FitDiagnostics {
            n: x.len(),
            mean_residual: resid_sum / x.len() as f64,
            r2: 1.0 - fit.ssr / tss,
        },
    ))
}

/// Regresses total variable cost on domestic revenue among non-exporters,
/// then the remainder on export revenue among exporters. No intercepts.
pub fn estimate_ces(panel: &Panel) -> Result<CesResult> {
    let (dom, exp): (Vec<_>, Vec<_>) = panel.rows.iter().partition(|r| !r.exports());
    if dom.len() < 2 {
        return Err(Error::estimation(
            "non-exporters",
            format!("{} observations, need at least 2", dom.len()),
        ));
    }
    if exp.len() < 2 {
        return Err(Error::estimation(
            "exporters",
            format!("{} observations, need at least 2", exp.len()),
        ));
    }
    let r: Vec<f64> = dom.iter().map(|r| r.dom_revenue).collect();
    let tvc: Vec<f64> = dom.iter().map(|r| r.tvc()).collect();
    let (rho, rho_se, domestic) = through_origin(&r, &tvc, "non-exporters")?;

    let rt: Vec<f64> = exp.iter().map(|r| r.export_revenue).collect();
    let rest: Vec<f64> = exp.iter().map(|r| r.tvc() - rho * r.dom_revenue).collect();
    let (rho_tilde, rho_tilde_se, exporters) = through_origin(&rt, &rest, "exporters")?;

    for (name, v) in [("rho", rho), ("rho_tilde", rho_tilde)] {
        if !(v > 0.0 && v < 1.0) {
            warn!("{name} estimate {v} outside (0, 1)");
        }
    }
    Ok(CesResult {
        rho,
        rho_se,
        rho_tilde,
        rho_tilde_se,
        domestic,
        exporters,
    })
}
