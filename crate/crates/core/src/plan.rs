//! Experiment plans: loading, validation, builtin sweeps, and the runner
//! that writes `results.csv` and `manifest.json`.
//!
//! A plan is a JSON document with top-level `name` and `scenarios[]`; every
//! scenario field is optional and falls back to the benchmark defaults
//! (`gamma` 1.345, `epsilon` 1e-6, `eta` (10, 10), `T` 100, `L` 200,
//! `max_iterations` 50). Three builtin plans — `fig1`, `fig2`, `fig3` —
//! encode the standard sweeps over contamination ratios and the measurement
//! correlation coefficient.
//!
//! Output is reproducible: the manifest records the fully resolved
//! configuration including per-scenario seeds, and rerunning a plan with the
//! same manifest settings yields a byte-identical `results.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{run_monte_carlo, FilterKind, ScenarioConfig, SimError};

pub const DEFAULT_GAMMA: f64 = 1.345;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_ETA: [f64; 2] = [10.0, 10.0];
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_RUNS: usize = 200;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
pub const DEFAULT_SEED: u64 = 0x524b_4631;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("failed to read plan file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse plan: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("scenario {scenario} failed: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: SimError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

/// A named scenario inside a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedScenario {
    pub name: String,
    pub config: ScenarioConfig,
}

/// A fully resolved experiment plan: a sweep of scenarios plus the output
/// directory the runner writes into.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub name: String,
    pub scenarios: Vec<NamedScenario>,
    pub output_path: PathBuf,
    pub master_seed: u64,
}

impl ExperimentPlan {
    pub fn with_output(mut self, dir: PathBuf) -> Self {
        self.output_path = dir;
        self
    }

    /// Applies CLI overrides. A seed override replaces the seed of every
    /// scenario so a whole plan can be re-randomized from one value.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        runs: Option<usize>,
        steps: Option<usize>,
    ) {
        if let Some(seed) = seed {
            self.master_seed = seed;
            for s in &mut self.scenarios {
                s.config.seed = seed;
            }
        }
        if let Some(runs) = runs {
            for s in &mut self.scenarios {
                s.config.runs = runs;
            }
        }
        if let Some(steps) = steps {
            for s in &mut self.scenarios {
                s.config.steps = steps;
            }
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.scenarios.is_empty() {
            return Err(PlanError::Validation {
                field: "scenarios".into(),
                message: "a plan needs at least one scenario".into(),
            });
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.scenarios.len() {
            return Err(PlanError::Validation {
                field: "scenarios".into(),
                message: "scenario names must be unique within a plan".into(),
            });
        }
        for s in &self.scenarios {
            s.config.validate().map_err(|err| match err {
                SimError::InvalidScenario { field, message } => PlanError::Validation {
                    field: field.to_string(),
                    message: format!("scenario {}: {message}", s.name),
                },
                other => PlanError::Validation {
                    field: "scenarios".into(),
                    message: format!("scenario {}: {other}", s.name),
                },
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    name: String,
    scenarios: Vec<RawScenario>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    kappa12: Option<f64>,
    lambda: Option<[f64; 2]>,
    eta: Option<[f64; 2]>,
    #[serde(rename = "T")]
    steps: Option<usize>,
    #[serde(rename = "L")]
    runs: Option<usize>,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    max_iterations: Option<usize>,
    seed: Option<u64>,
    filters: Option<Vec<FilterKind>>,
}

/// Parses and validates a plan from JSON text, applying defaults.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan, PlanError> {
    let raw: RawPlan = serde_json::from_str(text)?;
    let mut scenarios = Vec::with_capacity(raw.scenarios.len());
    for (index, s) in raw.scenarios.into_iter().enumerate() {
        let kappa12 = s.kappa12.unwrap_or(0.0);
        let lambda = s.lambda.unwrap_or([0.0, 0.0]);
        let config = ScenarioConfig {
            kappa12,
            lambda,
            eta: s.eta.unwrap_or(DEFAULT_ETA),
            steps: s.steps.unwrap_or(DEFAULT_STEPS),
            runs: s.runs.unwrap_or(DEFAULT_RUNS),
            gamma: s.gamma.unwrap_or(DEFAULT_GAMMA),
            epsilon: s.epsilon.unwrap_or(DEFAULT_EPSILON),
            max_iterations: s.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS),
            seed: s.seed.unwrap_or(DEFAULT_SEED),
            filters: s.filters.unwrap_or_else(|| FilterKind::ALL.to_vec()),
        };
        let name = s.name.unwrap_or_else(|| {
            format!(
                "s{index:02}_k{kappa12:.2}_l1_{:.2}_l2_{:.2}",
                lambda[0], lambda[1]
            )
        });
        scenarios.push(NamedScenario { name, config });
    }
    let plan = ExperimentPlan {
        output_path: PathBuf::from(&raw.name),
        name: raw.name,
        scenarios,
        master_seed: DEFAULT_SEED,
    };
    plan.validate()?;
    Ok(plan)
}

/// Loads a plan file from disk.
pub fn load_plan(path: &Path) -> Result<ExperimentPlan, PlanError> {
    let text = fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_plan(&text)
}

/// Builtin plan names with one-line descriptions.
pub fn builtin_plans() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "fig1",
            "uncorrelated channels (kappa12 = 0): lambda1 in {0, 0.2}, lambda2 sweeps 0.05..0.50; ckf vs hckf vs mhckf",
        ),
        (
            "fig2",
            "correlated channels: kappa12 in {0.3, 0.5, 0.8}, lambda1 = 0.2, lambda2 sweeps 0.05..0.50; hckf vs mhckf",
        ),
        (
            "fig3",
            "correlation sweep: kappa12 in -0.9..0.9, lambda1 = lambda2 = 0.2; hckf vs mhckf",
        ),
    ]
}

/// Returns a builtin plan by name.
pub fn builtin_plan(name: &str) -> Option<ExperimentPlan> {
    let lambda2_grid: Vec<f64> = (1..=10).map(|i| i as f64 / 20.0).collect();
    let base = ScenarioConfig {
        kappa12: 0.0,
        lambda: [0.0, 0.0],
        eta: DEFAULT_ETA,
        steps: DEFAULT_STEPS,
        runs: DEFAULT_RUNS,
        gamma: DEFAULT_GAMMA,
        epsilon: DEFAULT_EPSILON,
        max_iterations: DEFAULT_MAX_ITERATIONS,
        seed: DEFAULT_SEED,
        filters: FilterKind::ALL.to_vec(),
    };
    let scenarios = match name {
        "fig1" => {
            let mut out = Vec::new();
            for &l1 in &[0.0, 0.2] {
                for &l2 in &lambda2_grid {
                    out.push(NamedScenario {
                        name: format!("l1_{l1:.2}_l2_{l2:.2}"),
                        config: ScenarioConfig {
                            lambda: [l1, l2],
                            ..base.clone()
                        },
                    });
                }
            }
            out
        }
        "fig2" => {
            let mut out = Vec::new();
            for &k in &[0.3, 0.5, 0.8] {
                for &l2 in &lambda2_grid {
                    out.push(NamedScenario {
                        name: format!("k_{k:.2}_l2_{l2:.2}"),
                        config: ScenarioConfig {
                            kappa12: k,
                            lambda: [0.2, l2],
                            runs: 500,
                            filters: vec![FilterKind::Hckf, FilterKind::Mhckf],
                            ..base.clone()
                        },
                    });
                }
            }
            out
        }
        "fig3" => {
            let mut grid: Vec<f64> = (-9..=9).step_by(2).map(|i| i as f64 / 10.0).collect();
            grid.push(0.0);
            grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
            grid.iter()
                .map(|&k| NamedScenario {
                    name: format!("k_{k:.2}"),
                    config: ScenarioConfig {
                        kappa12: k,
                        lambda: [0.2, 0.2],
                        runs: 500,
                        filters: vec![FilterKind::Hckf, FilterKind::Mhckf],
                        ..base.clone()
                    },
                })
                .collect()
        }
        _ => return None,
    };
    Some(ExperimentPlan {
        name: name.to_string(),
        scenarios,
        output_path: PathBuf::from(name),
        master_seed: DEFAULT_SEED,
    })
}

/// Renders a float with exactly 9 significant digits (scientific notation).
pub fn fmt_float9(x: f64) -> String {
    format!("{x:.8e}")
}

/// One `results.csv` row with all float fields pre-rendered, so every
/// consumer (file and console alike) sees identical digits.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub plan: String,
    pub scenario: String,
    pub kappa12: String,
    pub lambda1: String,
    pub lambda2: String,
    pub filter: String,
    pub component: usize,
    pub trmse: String,
    pub mean_iterations: String,
    pub excluded_runs: usize,
}

pub const CSV_HEADER: &str =
    "plan,scenario,kappa12,lambda1,lambda2,filter,component,trmse,mean_iterations,excluded_runs";

impl CsvRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.plan,
            self.scenario,
            self.kappa12,
            self.lambda1,
            self.lambda2,
            self.filter,
            self.component,
            self.trmse,
            self.mean_iterations,
            self.excluded_runs
        )
    }
}

#[derive(Serialize)]
struct ManifestScenario<'a> {
    name: &'a str,
    #[serde(flatten)]
    config: &'a ScenarioConfig,
    excluded_runs: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    plan: &'a str,
    master_seed: u64,
    crate_version: &'static str,
    scenarios: Vec<ManifestScenario<'a>>,
    wall_clock_seconds: f64,
}

/// Everything `run_plan` produced, with rows in CSV order.
#[derive(Debug)]
pub struct PlanOutcome {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: Vec<CsvRow>,
    pub excluded_runs: BTreeMap<String, usize>,
}

/// Runs every scenario of the plan and writes `results.csv` and
/// `manifest.json` into the plan's output directory.
///
/// Rows are sorted by (scenario, filter, component). Scenarios execute
/// sequentially; the Monte Carlo harness inside each scenario parallelizes
/// over runs.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome, PlanError> {
    plan.validate()?;
    let started = Instant::now();

    let mut rows = Vec::new();
    let mut excluded_per_scenario = BTreeMap::new();
    for scenario in &plan.scenarios {
        let result = run_monte_carlo(&scenario.config).map_err(|source| PlanError::Scenario {
            scenario: scenario.name.clone(),
            source,
        })?;
        excluded_per_scenario.insert(scenario.name.clone(), result.excluded_runs);
        for (kind, stats) in &result.per_filter {
            for component in 0..stats.trmse.len() {
                rows.push(CsvRow {
                    plan: plan.name.clone(),
                    scenario: scenario.name.clone(),
                    kappa12: fmt_float9(scenario.config.kappa12),
                    lambda1: fmt_float9(scenario.config.lambda[0]),
                    lambda2: fmt_float9(scenario.config.lambda[1]),
                    filter: kind.name().to_string(),
                    component: component + 1,
                    trmse: fmt_float9(stats.trmse[component]),
                    mean_iterations: fmt_float9(stats.mean_iterations),
                    excluded_runs: result.excluded_runs,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.scenario, &a.filter, a.component).cmp(&(&b.scenario, &b.filter, b.component))
    });

    fs::create_dir_all(&plan.output_path).map_err(|source| PlanError::Write {
        path: plan.output_path.display().to_string(),
        source,
    })?;

    let csv_path = plan.output_path.join("results.csv");
    let mut csv = String::with_capacity(rows.len() * 96);
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_line());
        csv.push('\n');
    }
    fs::write(&csv_path, csv).map_err(|source| PlanError::Write {
        path: csv_path.display().to_string(),
        source,
    })?;

    let manifest = Manifest {
        plan: &plan.name,
        master_seed: plan.master_seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        scenarios: plan
            .scenarios
            .iter()
            .map(|s| ManifestScenario {
                name: &s.name,
                config: &s.config,
                excluded_runs: excluded_per_scenario[&s.name],
            })
            .collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_path = plan.output_path.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, body + "\n").map_err(|source| PlanError::Write {
        path: manifest_path.display().to_string(),
        source,
    })?;

    Ok(PlanOutcome {
        csv_path,
        manifest_path,
        rows,
        excluded_runs: excluded_per_scenario,
    })
}
