//! Derivative-free minimizers: simulated annealing for a global start and
//! the Nelder-Mead simplex for local refinement.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub iterations: usize,
    /// Starting temperature relative to the objective at the start point.
    pub initial_temperature: f64,
    /// Final temperature as a fraction of the initial one.
    pub final_fraction: f64,
    /// Initial proposal scale as a fraction of each box width.
    pub step: f64,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            initial_temperature: 0.2,
            final_fraction: 1e-4,
            step: 0.1,
            seed: 1,
        }
    }
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut y = (x - lo) % (2.0 * w);
    if y < 0.0 {
        y += 2.0 * w;
    }
    if y > w {
        y = 2.0 * w - y;
    }
    lo + y
}

/// Single-coordinate Metropolis moves under a geometric cooling schedule;
/// proposals reflect off the box. Returns the best point visited.
pub fn anneal<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &AnnealConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<f64> = (0..n).map(|i| x0[i].clamp(lower[i], upper[i])).collect();
    let mut fx = f(&x);
    let mut best = (x.clone(), fx);
    let t0 = cfg.initial_temperature * fx.abs().max(1e-12);
    let rate = cfg.final_fraction.ln() / cfg.iterations.max(1) as f64;
    let mut scale: Vec<f64> = (0..n).map(|i| cfg.step * (upper[i] - lower[i])).collect();
    let mut accepted = vec![0usize; n];
    let mut tried = vec![0usize; n];
    for it in 0..cfg.iterations {
        let t = t0 * (rate * it as f64).exp();
        let i = it % n;
        let mut y = x.clone();
        let z: f64 = rng.sample(StandardNormal);
        y[i] = reflect(x[i] + scale[i] * z, lower[i], upper[i]);
        let fy = f(&y);
        tried[i] += 1;
        let accept = fy <= fx || rng.gen::<f64>() < (-(fy - fx) / t).exp();
        if accept && fy.is_finite() {
            x = y;
            fx = fy;
            accepted[i] += 1;
            if fx < best.1 {
                best = (x.clone(), fx);
            }
        }
        // Keep acceptance near 40% per coordinate.
        if tried[i] == 20 {
            let rate = accepted[i] as f64 / 20.0;
            let w = upper[i] - lower[i];
            scale[i] = (scale[i] * if rate > 0.4 { 1.5 } else { 0.6 }).clamp(1e-6 * w, w);
            tried[i] = 0;
            accepted[i] = 0;
        }
    }
    Minimum {
        x: best.0,
        f: best.1,
        evaluations: cfg.iterations + 1,
        converged: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplexConfig {
    pub max_evaluations: usize,
    /// Stop when the spread of objective values across the simplex is
    /// below this.
    pub ftol: f64,
    /// And the simplex is smaller than this in every coordinate.
    pub xtol: f64,
    pub initial_step: f64,
    /// Fresh simplices started from the incumbent after convergence.
    pub restarts: usize,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            ftol: 1e-8,
            xtol: 1e-6,
            initial_step: 0.5,
            restarts: 2,
        }
    }
}

/// Nelder-Mead with standard coefficients, restarted from the incumbent.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &SimplexConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut start = x0.to_vec();
    let mut result = (start.clone(), f64::INFINITY, false);
    let mut used = 0usize;
    for _ in 0..=cfg.restarts {
        let budget = cfg.max_evaluations.saturating_sub(used);
        if budget <= x0.len() + 1 {
            break;
        }
        let (x, fx, conv, n) = simplex_run(&mut eval, &start, cfg, budget);
        used += n;
        let improved = fx < result.1 - cfg.ftol;
        if fx <= result.1 {
            result = (x, fx, conv);
        } else {
            result.2 = conv;
        }
        start = result.0.clone();
        if !improved && result.2 {
            break;
        }
    }
    Minimum {
        x: result.0,
        f: result.1,
        evaluations: evals,
        converged: result.2,
    }
}

fn simplex_run<F>(
    eval: &mut F,
    x0: &[f64],
    cfg: &SimplexConfig,
    budget: usize,
) -> (Vec<f64>, f64, bool, usize)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if p[i].abs() > 1e-8 {
            cfg.initial_step * p[i].abs().max(1.0)
        } else {
            cfg.initial_step
        };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut used = n + 1;
    let mut converged = false;
    while used < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
        pts = order.iter().map(|i| pts[*i].clone()).collect();
        vals = order.iter().map(|i| vals[*i]).collect();

        let fspread = vals[n] - vals[0];
        let xspread = (0..n)
            .map(|j| {
                pts.iter()
                    .map(|p| (p[j] - pts[0][j]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if fspread <= cfg.ftol && xspread <= cfg.xtol.max(cfg.ftol) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + t * (pts[n][j] - centroid[j]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        used += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            used += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            used += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = (0..n)
                        .map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]))
                        .collect();
                    vals[i] = eval(&pts[i]);
                }
                used += n;
            }
        }
    }
    let best = (0..=n)
        .min_by(|a, b| vals[*a].total_cmp(&vals[*b]))
        .unwrap();
    (pts[best].clone(), vals[best], converged, used)
}
