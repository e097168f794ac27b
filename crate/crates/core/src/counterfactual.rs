//! Descriptive frequency tables and the observed-versus-simulated yearly
//! joint probabilities used to read off the trade-liberalization effect.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ProbabilityEngine, StructuralBeta, ZCell};
use crate::error::{Error, Result};
use crate::estimation::FirmYear;

/// Export-profit intercept before the trade-cost change, given its value
/// after and the estimated change in log trade cost.
pub fn adjust_beta0(beta0_post: f64, alpha1: f64, rho_tilde: f64) -> f64 {
    beta0_post + rho_tilde / (rho_tilde - 1.0) * (-alpha1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Innovation,
    Export,
}

impl Activity {
    fn of(self, c: crate::model::ChoicePair) -> bool {
        match self {
            Activity::Innovation => c.innovate,
            Activity::Export => c.export,
        }
    }

    fn other(self) -> Activity {
        match self {
            Activity::Innovation => Activity::Export,
            Activity::Export => Activity::Innovation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Same activity in the previous year.
    Lagged,
    /// The other activity in the same year.
    Contemporaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    /// Value of the conditioning indicator.
    pub given: u8,
    pub n: usize,
    /// Probability that the activity is undertaken.
    pub p1: f64,
    pub se: f64,
    /// No observations in this conditioning cell.
    pub empty: bool,
}

impl FrequencyRow {
    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub activity: Activity,
    pub conditioning: Conditioning,
    pub rows: [FrequencyRow; 2],
}

impl FrequencyTable {
    /// `P(1 | given 1) / P(1 | given 0)`; infinite when the denominator is 0.
    pub fn ratio(&self) -> f64 {
        self.rows[1].p1 / self.rows[0].p1
    }
}

/// Tables for both activities under one conditioning. Lagged tables only
/// use rows whose previous year is sampled.
pub fn conditional_frequencies(sample: &[FirmYear], conditioning: Conditioning) -> [FrequencyTable; 2] {
    [Activity::Innovation, Activity::Export].map(|activity| {
        let mut n = [0usize; 2];
        let mut ones = [0usize; 2];
        for o in sample {
            let given = match conditioning {
                Conditioning::Lagged => match o.lags {
                    Some(l) => activity.of(l),
                    None => continue,
                },
                Conditioning::Contemporaneous => activity.other().of(o.choice),
            } as usize;
            n[given] += 1;
            ones[given] += activity.of(o.choice) as usize;
        }
        let rows = [0, 1].map(|g| {
            let p = if n[g] == 0 { 0.0 } else { ones[g] as f64 / n[g] as f64 };
            FrequencyRow {
                given: g as u8,
                n: n[g],
                p1: p,
                se: if n[g] == 0 { 0.0 } else { (p * (1.0 - p) / n[g] as f64).sqrt() },
                empty: n[g] == 0,
            }
        });
        FrequencyTable {
            activity,
            conditioning,
            rows,
        }
    })
}

/// Phi coefficient between the innovation and export indicators.
pub fn phi_correlation(sample: &[FirmYear]) -> f64 {
    let mut t = [[0f64; 2]; 2];
    for o in sample {
        t[o.choice.innovate as usize][o.choice.export as usize] += 1.0;
    }
    let r0 = t[0][0] + t[0][1];
    let r1 = t[1][0] + t[1][1];
    let c0 = t[0][0] + t[1][0];
    let c1 = t[0][1] + t[1][1];
    let den = (r0 * r1 * c0 * c1).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (t[1][1] * t[0][0] - t[1][0] * t[0][1]) / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTables {
    pub lagged: [FrequencyTable; 2],
    pub contemporaneous: [FrequencyTable; 2],
    pub phi: f64,
}

pub fn descriptive_tables(sample: &[FirmYear]) -> DescriptiveTables {
    DescriptiveTables {
        lagged: conditional_frequencies(sample, Conditioning::Lagged),
        contemporaneous: conditional_frequencies(sample, Conditioning::Contemporaneous),
        phi: phi_correlation(sample),
    }
}

/// Years whose previous calendar year is also sampled.
pub fn default_series_years(sample: &[FirmYear]) -> Vec<i32> {
    let years: BTreeSet<i32> = sample.iter().map(|o| o.year).collect();
    years.iter().copied().filter(|y| years.contains(&(y - 1))).collect()
}

/// Share of firms both exporting and innovating, per requested year.
pub fn observed_yearly_joint(sample: &[FirmYear], years: &[i32]) -> Result<Vec<(i32, usize, f64)>> {
    let mut counts: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for o in sample {
        let e = counts.entry(o.year).or_default();
        e.0 += 1;
        e.1 += o.joint() as usize;
    }
    let missing: Vec<i32> = years.iter().copied().filter(|y| !counts.contains_key(y)).collect();
    if !missing.is_empty() {
        return Err(Error::config(format!("no observations for years {missing:?}")));
    }
    Ok(years
        .iter()
        .map(|y| {
            let (n, j) = counts[y];
            (*y, n, j as f64 / n as f64)
        })
        .collect())
}

/// Empirical distribution of cells among rows of `year` with defined lags.
pub fn cell_distribution(sample: &[FirmYear], year: i32) -> Vec<(ZCell, f64)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n = 0usize;
    for o in sample.iter().filter(|o| o.year == year) {
        if let Some(c) = o.cell() {
            *counts.entry(c.index()).or_default() += 1;
            n += 1;
        }
    }
    counts
        .into_iter()
        .map(|(i, c)| (ZCell::from_index(i), c as f64 / n as f64))
        .collect()
}

/// `sum_z Pr(1,1 | z) w(z)` over cells with positive weight.
pub fn mixture_probability(
    engine: &ProbabilityEngine,
    beta: &StructuralBeta,
    dist: &[(ZCell, f64)],
) -> Result<f64> {
    let weighted: Vec<&(ZCell, f64)> = dist.iter().filter(|(_, w)| *w > 0.0).collect();
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    if weighted.is_empty() || (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("cell distribution sums to {total}, expected 1")));
    }
    let cells: Vec<ZCell> = weighted.iter().map(|(c, _)| *c).collect();
    let probs = engine.cell_probabilities(beta, &cells)?;
    Ok(probs
        .iter()
        .zip(&weighted)
        .map(|(p, (_, w))| p * w)
        .sum::<f64>()
        .clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearPoint {
    /// Position in the series, starting at 1.
    pub index: usize,
    pub year: i32,
    pub n: usize,
    pub observed: f64,
    /// Model probability with the post-liberalization intercept in every year.
    pub simulated: f64,
    /// Model probability with the intercept of the year's own regime.
    pub fitted: f64,
    pub post: bool,
    pub cells: Vec<(ZCell, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSeries {
    pub points: Vec<YearPoint>,
    pub beta0_post: f64,
    pub beta0_pre: f64,
    pub post_after: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    /// Years strictly after this belong to the post regime.
    pub post_after: i32,
    /// Defaults to every year whose previous year is sampled.
    pub years: Option<Vec<i32>>,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            post_after: 2002,
            years: None,
        }
    }
}

pub fn build_series(
    sample: &[FirmYear],
    engine: &ProbabilityEngine,
    beta: &StructuralBeta,
    beta0_pre: f64,
    cfg: &CounterfactualConfig,
) -> Result<YearSeries> {
    let years = cfg.years.clone().unwrap_or_else(|| default_series_years(sample));
    if years.is_empty() {
        return Err(Error::config("no years with a sampled previous year"));
    }
    let observed = observed_yearly_joint(sample, &years)?;
    let pre_beta = beta.with_beta0(beta0_pre);
    let mut points = Vec::with_capacity(years.len());
    for (i, (year, n, obs)) in observed.into_iter().enumerate() {
        let cells = cell_distribution(sample, year);
        if cells.is_empty() {
            return Err(Error::config(format!("year {year} has no rows with lags")));
        }
        let post = year > cfg.post_after;
        let simulated = mixture_probability(engine, beta, &cells)?;
        let fitted = if post {
            simulated
        } else {
            mixture_probability(engine, &pre_beta, &cells)?
        };
        points.push(YearPoint {
            index: i + 1,
            year,
            n,
            observed: obs,
            simulated,
            fitted,
            post,
            cells,
        });
    }
    Ok(YearSeries {
        points,
        beta0_post: beta.beta0,
        beta0_pre,
        post_after: cfg.post_after,
    })
}

/// Mean gap `model - observed` before minus the mean gap after.
pub fn did_effect(gaps: &[(bool, f64)]) -> Result<f64> {
    let mean = |post: bool| {
        let v: Vec<f64> = gaps.iter().filter(|g| g.0 == post).map(|g| g.1).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    match (mean(false), mean(true)) {
        (Some(pre), Some(post)) => Ok(pre - post),
        _ => Err(Error::domain("difference-in-differences needs years in both regimes")),
    }
}

impl YearSeries {
    pub fn did_effect(&self) -> Result<f64> {
        did_effect(
            &self
                .points
                .iter()
                .map(|p| (p.post, p.simulated - p.observed))
                .collect::<Vec<_>>(),
        )
    }

    /// Same contrast using each regime's own intercept; near zero when the
    /// model accounts for the regime change.
    pub fn did_effect_fitted(&self) -> Result<f64> {
        did_effect(
            &self
                .points
                .iter()
                .map(|p| (p.post, p.fitted - p.observed))
                .collect::<Vec<_>>(),
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "year", "observed", "simulated", "fitted", "regime", "n"])?;
        for p in &self.points {
            w.write_record([
                p.index.to_string(),
                p.year.to_string(),
                format!("{:.6}", p.observed),
                format!("{:.6}", p.simulated),
                format!("{:.6}", p.fitted),
                if p.post { "post" } else { "pre" }.to_string(),
                p.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
