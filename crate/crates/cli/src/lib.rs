//! Command-line driver: simulate panels, run the estimation pipeline,
//! compute the counterfactual series and render reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use exinnov::counterfactual::{CounterfactualConfig, FrequencyTable};
use exinnov::dynamics::{StructuralBeta, ValueMode};
use exinnov::panel::{Aggregates, Panel};
use exinnov::pipeline::{run_counterfactual, run_estimation, EstimationConfig, EstimationReport};
use exinnov::synthetic::{growth_aggregates, simulate_panel, SimConfig};

pub const REPORT_FILE: &str = "report.json";
pub const SERIES_FILE: &str = "counterfactual.csv";
pub const COUNTERFACTUAL_FILE: &str = "counterfactual.json";

#[derive(Debug, Parser)]
#[command(name = "exinnov", version, about = "Export and innovation dynamics: simulation, estimation, counterfactuals")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a firm panel and its aggregates.
    Simulate(SimulateArgs),
    /// Run estimation steps 1-4 and write a report.
    Estimate(EstimateArgs),
    /// Observed against simulated joint probabilities by year.
    Counterfactual(CounterfactualArgs),
    /// Render a report as text.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_states: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub aggregates: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of 1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<u8>>,
    #[arg(long)]
    pub k_states: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// commitment or emax.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub filter_processing: bool,
    /// Earlier report supplying results of steps not run now.
    #[arg(long)]
    pub prior: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Last year of the pre-liberalization regime.
    #[arg(long)]
    pub post_after: Option<i32>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write report.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of the TOML configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub panel: Option<PathBuf>,
    pub aggregates: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Overrides of the reference simulation. `liberalized_after` sets the
    /// last pre-liberalization year when aggregates are generated.
    pub simulate: Option<toml::Table>,
    pub estimate: Option<EstimationConfig>,
    pub counterfactual: Option<CounterfactualConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Machine-readable failure record printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl ErrorRecord {
    pub fn from_error(e: &anyhow::Error) -> Self {
        let kind = e
            .chain()
            .find_map(|c| c.downcast_ref::<exinnov::Error>())
            .map_or("cli", |x| x.kind());
        Self {
            kind: kind.to_string(),
            message: format!("{e:#}"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

/// What a command produced, for the caller to print.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    /// Set when the command wrote its outputs but should still exit nonzero.
    pub failure: Option<anyhow::Error>,
}

fn pick<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| anyhow!("missing {what}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    if !dir.exists() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        info!("created {}", dir.display());
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_report(path: &Path) -> Result<EstimationReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EstimationReport::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let file = RunConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.workers.or(file.workers) {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        // A second call in the same process fails harmlessly.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, file),
        Command::Estimate(a) => estimate(a, file),
        Command::Counterfactual(a) => counterfactual(a, file),
        Command::Report(a) => report(a, file),
    }
}

/// Simulation settings from the reference design, the file and the flags.
pub fn sim_config(file: &RunConfig, seed: Option<u64>, k_states: Option<usize>) -> Result<SimConfig> {
    let seed = pick(seed, file.seed, "seed (--seed or `seed` in the config file)")?;
    let mut table = file.simulate.clone().unwrap_or_default();
    let liberalized = match table.remove("liberalized_after") {
        Some(v) => Some(
            v.as_integer()
                .ok_or_else(|| anyhow!("simulate.liberalized_after must be an integer"))?
                as i32,
        ),
        None => None,
    };
    let regenerate = !table.contains_key("aggregates");
    let mut cfg: SimConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid [simulate] section")?;
    cfg.seed = seed;
    if let Some(k) = k_states {
        if k != cfg.prims.k() {
            bail!(
                "--k-states {k} does not match the {} states of the simulated transitions",
                cfg.prims.k()
            );
        }
    }
    if regenerate {
        let first = *cfg.years.iter().min().ok_or_else(|| anyhow!("simulate.years is empty"))?;
        cfg.aggregates = growth_aggregates(&cfg.years, liberalized.unwrap_or(first.max(2001)));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(a: SimulateArgs, file: RunConfig) -> Result<Outcome> {
    let cfg = sim_config(&file, a.seed, a.k_states)?;
    let out = pick(a.out, file.out, "output directory (--out)")?;
    create_dir(&out)?;
    let sim = simulate_panel(&cfg)?;
    sim.panel.write_path(out.join("panel.csv"))?;
    sim.aggregates.write_path(out.join("aggregates.csv"))?;
    let mut truth = serde_json::to_string_pretty(&cfg)?;
    truth.push('\n');
    write(&out.join("simulation.json"), &truth)?;
    Ok(Outcome {
        stdout: format!(
            "{} rows, {} firms, {} entrants -> {}\n",
            sim.panel.len(),
            sim.panel.firm_count(),
            sim.entrants,
            out.display()
        ),
        failure: None,
    })
}

/// Estimation settings from the file and the flags.
pub fn estimation_config(a: &EstimateArgs, file: &RunConfig) -> Result<EstimationConfig> {
    let mut cfg = file.estimate.clone().unwrap_or_default();
    cfg.seed = pick(a.seed, file.seed, "seed (--seed or `seed` in the config file)")?;
    if let Some(s) = &a.steps {
        cfg.steps = s.clone();
    }
    if let Some(k) = a.k_states {
        cfg.state.k = k;
    }
    if let Some(d) = a.draws {
        cfg.dynamic.draws = d;
    }
    if let Some(b) = a.bootstrap {
        cfg.bootstrap = b;
    }
    if let Some(m) = &a.mode {
        cfg.dynamic.probability.mode = m.parse::<ValueMode>()?;
    }
    if a.filter_processing {
        cfg.filter_processing = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn estimate(a: EstimateArgs, file: RunConfig) -> Result<Outcome> {
    let cfg = estimation_config(&a, &file)?;
    let panel_path = pick(a.panel.clone(), file.panel.clone(), "panel (--panel)")?;
    let aggs_path = pick(a.aggregates.clone(), file.aggregates.clone(), "aggregates (--aggregates)")?;
    let out = pick(a.out.clone(), file.out.clone(), "output directory (--out)")?;
    let panel = Panel::read_path(&panel_path)?;
    let aggs = Aggregates::read_path(&aggs_path)?;
    let prior = a.prior.as_deref().map(load_report).transpose()?;
    create_dir(&out)?;
    let report = run_estimation(&panel, &aggs, &cfg, prior.as_ref())?;
    let path = out.join(REPORT_FILE);
    write(&path, &report.to_json()?)?;
    let failure = report
        .failed_step
        .as_ref()
        .map(|f| anyhow!("step {} failed: {}", f.step, f.error));
    Ok(Outcome {
        stdout: format!("report -> {}\n", path.display()),
        failure,
    })
}

fn counterfactual(a: CounterfactualArgs, file: RunConfig) -> Result<Outcome> {
    let report_path = pick(a.report, file.report.clone(), "report (--report)")?;
    let panel_path = pick(a.panel, file.panel.clone(), "panel (--panel)")?;
    let out = pick(a.out, file.out.clone(), "output directory (--out)")?;
    let mut cfg = file.counterfactual.clone().unwrap_or_default();
    if let Some(y) = a.post_after {
        cfg.post_after = y;
    }
    let report = load_report(&report_path)?;
    let panel = Panel::read_path(&panel_path)?;
    let res = run_counterfactual(&report, &panel, &cfg)?;
    create_dir(&out)?;
    let mut csv = Vec::new();
    res.series.write_csv(&mut csv)?;
    fs::write(out.join(SERIES_FILE), csv)?;
    let mut json = serde_json::to_string_pretty(&res)?;
    json.push('\n');
    write(&out.join(COUNTERFACTUAL_FILE), &json)?;
    Ok(Outcome {
        stdout: format!(
            "did_effect {:.6}\ndid_effect_fitted {:.6}\n",
            res.did_effect, res.did_effect_fitted
        ),
        failure: None,
    })
}

fn report(a: ReportArgs, file: RunConfig) -> Result<Outcome> {
    let path = pick(a.report, file.report.clone(), "report (--report)")?;
    let text = render_report(&load_report(&path)?);
    if let Some(out) = a.out.or(file.out) {
        create_dir(&out)?;
        write(&out.join("report.txt"), &text)?;
    }
    Ok(Outcome {
        stdout: text,
        failure: None,
    })
}

fn se_text(se: Option<f64>) -> String {
    se.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"))
}

fn frequency_lines(s: &mut String, t: &FrequencyTable) {
    let _ = writeln!(
        s,
        "  {:?} | {:?}: P(1|0) {:.3} (n {}), P(1|1) {:.3} (n {}), ratio {:.2}",
        t.activity,
        t.conditioning,
        t.rows[0].p1,
        t.rows[0].n,
        t.rows[1].p1,
        t.rows[1].n,
        t.ratio()
    );
}

/// Plain-text summary of every section present in a report.
pub fn render_report(r: &EstimationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "exinnov report (schema {}, version {})", r.schema_version, r.software_version);
    let _ = writeln!(
        s,
        "sample: {} rows, {} firms, years {:?}",
        r.sample.rows, r.sample.firms, r.sample.years
    );
    for f in &r.filters {
        let _ = writeln!(s, "filter: {} ({} -> {} rows)", f.name, f.rows_before, f.rows_after);
    }
    let _ = writeln!(s, "steps run: {:?}", r.steps_run);
    if let Some(f) = &r.failed_step {
        let _ = writeln!(s, "FAILED at step {}: {}", f.step, f.error);
    }
    if let Some(c) = &r.ces {
        let b = c.bootstrap_se;
        let _ = writeln!(s, "\n[1] CES preferences");
        let _ = writeln!(
            s,
            "  rho       {:.4}  se {:.4}  bootstrap {}  elasticity {:.2}",
            c.result.rho,
            c.result.rho_se,
            se_text(b.map(|x| x[0])),
            c.result.elasticity()
        );
        let _ = writeln!(
            s,
            "  rho_tilde {:.4}  se {:.4}  bootstrap {}  elasticity {:.2}",
            c.result.rho_tilde,
            c.result.rho_tilde_se,
            se_text(b.map(|x| x[1])),
            c.result.elasticity_export()
        );
    }
    if let Some(t) = &r.trade_cost {
        let _ = writeln!(s, "\n[2] Trade cost ({:?}, {:?}, n {}, firms {})", t.spec, t.method, t.n, t.n_firms);
        for c in &t.coefficients {
            let _ = writeln!(
                s,
                "  {:<10} {:>9.4}  se {:.4}  bootstrap {}",
                c.name,
                c.value,
                c.se,
                se_text(c.bootstrap_se)
            );
        }
    }
    if let Some(st) = &r.states {
        let _ = writeln!(s, "\n[3] States: K {} from {:?}, big above {:.3} workers", st.k, st.source, st.big_threshold);
        let shares: Vec<String> = st.shares.iter().map(|x| format!("{x:.3}")).collect();
        let _ = writeln!(s, "  shares {}", shares.join(" "));
    }
    if let Some(e) = &r.exit {
        let _ = writeln!(
            s,
            "  survival sigma {:.4}  se {:.4}  bootstrap {}  ({} exits of {})",
            e.result.sigma,
            e.result.se,
            se_text(e.bootstrap_se),
            e.result.n_exits,
            e.result.n_eligible
        );
    }
    if let Some(t) = &r.transitions {
        let k = t.transitions.k();
        for c in exinnov::model::ChoicePair::ALL {
            let _ = writeln!(s, "  transitions under {c}");
            for i in 1..=k {
                let row: Vec<String> = t.transitions.row(c, i - 1).iter().map(|p| format!("{p:.3}")).collect();
                let _ = writeln!(s, "    {i}: {}  (n {})", row.join(" "), t.row_count(c, i));
            }
        }
        if !t.empty_rows.is_empty() {
            let _ = writeln!(s, "  rows filled uniformly: {:?}", t.empty_rows);
        }
    }
    if let Some(d) = &r.descriptive {
        let _ = writeln!(s, "\nConditional frequencies");
        for t in d.lagged.iter().chain(&d.contemporaneous) {
            frequency_lines(&mut s, t);
        }
        let _ = writeln!(s, "  phi {:.3}", d.phi);
    }
    if let Some(d) = &r.dynamic {
        let _ = writeln!(
            s,
            "\n[4] Dynamic parameters (N {}, cells {}, draws {}, Q {:.6e}, converged {})",
            d.n_obs, d.n_cells, d.draws, d.q, d.converged
        );
        for (i, (name, v)) in StructuralBeta::NAMES.iter().zip(d.beta.to_array()).enumerate() {
            let _ = writeln!(s, "  {name}  {v:>9.4}  bootstrap {}", se_text(d.bootstrap_se.map(|x| x[i])));
        }
    }
    s
}
