use log::warn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::stats::std_dev;

/// Draws firms with replacement, keeping each firm's rows together. A firm
/// drawn more than once gets a distinct id per copy.
pub fn resample_firms<R: Rng + ?Sized>(panel: &Panel, rng: &mut R) -> Panel {
    let firms = panel.by_firm();
    let mut rows = Vec::with_capacity(panel.len());
    for copy in 0..firms.len() {
        let f = &firms[rng.gen_range(0..firms.len())];
        for r in f {
            let mut r = (*r).clone();
            r.firm_id = format!("{}#{copy}", r.firm_id);
            rows.push(r);
        }
    }
    Panel { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateTable {
    pub names: Vec<String>,
    /// Successful replicates in replicate order.
    pub replicates: Vec<Vec<f64>>,
    /// Indices of replicates whose estimation failed.
    pub failures: Vec<usize>,
    pub se: Vec<f64>,
}

impl ReplicateTable {
    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.se[i])
    }
}

/// Runs `estimate` on `b` firm-block resamples. Replicate `r` uses its own
/// RNG stream, so results do not depend on scheduling.
pub fn run_bootstrap<F>(
    panel: &Panel,
    names: &[&str],
    b: usize,
    seed: u64,
    estimate: F,
) -> Result<ReplicateTable>
where
    F: Fn(&Panel) -> Result<Vec<f64>> + Sync,
{
    if b < 2 {
        return Err(Error::config("bootstrap needs at least 2 replicates"));
    }
    let results: Vec<Result<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            estimate(&resample_firms(panel, &mut rng))
        })
        .collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) if v.len() == names.len() && v.iter().all(|x| x.is_finite()) => replicates.push(v),
            Ok(_) => {
                warn!("replicate {r}: non-finite estimates");
                failures.push(r);
            }
            Err(e) => {
                warn!("replicate {r}: {e}");
                failures.push(r);
            }
        }
    }
    if replicates.len() < 2 {
        return Err(Error::estimation(
            "bootstrap",
            format!("only {} of {b} replicates succeeded", replicates.len()),
        ));
    }
    let se = (0..names.len())
        .map(|j| std_dev(&replicates.iter().map(|v| v[j]).collect::<Vec<_>>()))
        .collect();
    Ok(ReplicateTable {
        names: names.iter().map(|s| s.to_string()).collect(),
        replicates,
        failures,
        se,
    })
}
