//! JSON run configuration. Every field has a default; unknown keys are
//! rejected so typos fail loudly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use foresight::eval::{BackendSpec, PolicySpec, RunOptions};
use foresight::goal_select::GoalSelectConfig;
use foresight::imagination::remote::DEFAULT_TIMEOUT;
use foresight::imagination::HeuristicConfig;
use foresight::scene::GeneratorConfig;
use foresight::sensor::SensorConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scene directories. When empty, `num_scenes` scenes are generated
    /// from `generator` with seeds `seed, seed + 1, ...`.
    pub scenes: Vec<PathBuf>,
    pub num_scenes: usize,
    pub generator: GeneratorConfig,
    pub sensor: SensorConfig,
    pub goal_select: GoalSelectConfig,
    pub heuristic: HeuristicConfig,
    /// Policy names; empty means the task's default line-up.
    pub policies: Vec<String>,
    /// Backend for bare `imagination` / `foresight` entries:
    /// `builtin:<oracle|identity|heuristic>` or `remote:<endpoint>`.
    pub backend: String,
    /// ObjectNav categories; empty means the generator's categories.
    pub categories: Vec<String>,
    pub seed: u64,
    pub parallelism: usize,
    pub trace: bool,
    pub remote_timeout_secs: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenes: Vec::new(),
            num_scenes: 10,
            generator: GeneratorConfig::default(),
            sensor: SensorConfig::default(),
            goal_select: GoalSelectConfig::default(),
            heuristic: HeuristicConfig::default(),
            policies: Vec::new(),
            backend: "builtin:oracle".into(),
            categories: Vec::new(),
            seed: 0,
            parallelism: 1,
            trace: false,
            remote_timeout_secs: DEFAULT_TIMEOUT.as_secs_f64(),
            out: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskKind {
    Pointnav,
    Objectnav,
}

impl RunConfig {
    pub fn backend_spec(&self) -> Result<BackendSpec> {
        self.backend
            .parse()
            .with_context(|| format!("invalid backend {:?}", self.backend))
    }

    /// Parsed policies, with defaults filled in for the task.
    pub fn policy_specs(&self, task: TaskKind) -> Result<Vec<PolicySpec>> {
        let backend = self.backend_spec()?;
        let names: Vec<String> = if self.policies.is_empty() {
            match task {
                TaskKind::Pointnav => vec!["vanilla".into(), "imagination".into()],
                TaskKind::Objectnav => ["random", "greedy", "prior", "value", "foresight"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            }
        } else {
            self.policies.clone()
        };
        let mut out = Vec::new();
        for n in &names {
            let p = PolicySpec::parse_with_default(n, Some(&backend))?;
            let fits = p.is_pointnav() == (task == TaskKind::Pointnav);
            if !fits {
                bail!("policy '{p}' does not apply to {task:?}");
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            sensor: self.sensor,
            goal_select: self.goal_select.clone(),
            heuristic: self.heuristic,
            trace: self.trace,
            remote_timeout_secs: self.remote_timeout_secs,
        }
    }

    pub fn validate(&self, task: TaskKind) -> Result<()> {
        self.sensor.validate()?;
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if self.scenes.is_empty() && self.num_scenes == 0 {
            bail!("no scenes: give scene paths or num_scenes > 0");
        }
        self.policy_specs(task)?;
        Ok(())
    }
}

/// Reads a JSON config, naming the offending key on failure.
pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("invalid config {}", path.display()))
}
