//! Run configuration: one JSON document with nested sections, overridable by
//! dotted-path assignments.

use std::path::{Path, PathBuf};

use cablegraph_core::eval::EvalConfig;
use cablegraph_core::gnn::ModelConfig;
use cablegraph_core::graphgen::GraphConfig;
use cablegraph_core::mppi::{Bounds, MppiConfig, NavigationTask};
use cablegraph_core::refsim::SimParams;
use cablegraph_core::scenario::ScenarioKind;
use cablegraph_core::topology::{self, CableDefaults, RobotKind, RobotTopology};
use cablegraph_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CABLEGRAPH_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub kind: RobotKind,
    pub rod_length: f64,
    pub rod_mass: f64,
    pub cables: CableDefaults,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            kind: RobotKind::ThreeBar,
            rod_length: 1.0,
            rod_mass: 0.3,
            cables: CableDefaults::default(),
        }
    }
}

impl RobotConfig {
    pub fn topology(&self) -> CliResult<RobotTopology> {
        Ok(topology::build(self.kind, self.rod_length, self.rod_mass, &self.cables)?)
    }
}

/// One point of the simulation parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub friction_mu: f64,
    pub ground_stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// One simulation dataset per grid point.
    pub grid: Vec<GridPoint>,
    pub trajectories_per_dataset: usize,
    /// Trailing trajectories of each dataset held out for testing.
    pub test_per_dataset: usize,
    /// Seconds per trajectory.
    pub duration: f64,
    /// Cycled over trajectory indices.
    pub scenarios: Vec<ScenarioKind>,
    /// Also write a partially observed, noisy dataset.
    pub real_like: bool,
    pub real_like_params: GridPoint,
    pub real_like_trajectories: usize,
    pub real_like_test: usize,
    /// Endcap position noise (m) on the partially observed dataset.
    pub real_like_noise: f64,
    /// Number of simulation datasets pooled for training; all when `None`.
    pub sim_datasets_for_training: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let mut grid = Vec::new();
        for mu in [0.3, 0.5, 0.7] {
            for k in [5e3, 1e4, 2e4] {
                grid.push(GridPoint {
                    friction_mu: mu,
                    ground_stiffness: k,
                });
            }
        }
        Self {
            grid,
            trajectories_per_dataset: 9,
            test_per_dataset: 3,
            duration: 5.0,
            scenarios: vec![ScenarioKind::Gait, ScenarioKind::Random, ScenarioKind::Drop],
            real_like: false,
            real_like_params: GridPoint {
                friction_mu: 0.6,
                ground_stiffness: 1.5e4,
            },
            real_like_trajectories: 9,
            real_like_test: 3,
            real_like_noise: 0.002,
            sim_datasets_for_training: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterateConfig {
    pub iterations: usize,
    /// Explicit tasks; generated from `num_tasks` when empty.
    pub tasks: Vec<NavigationTask>,
    pub num_tasks: usize,
    pub goal_distance: f64,
    pub max_time: f64,
    /// Epochs of retraining after each collection round.
    pub retrain_epochs: usize,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            tasks: Vec::new(),
            num_tasks: 4,
            goal_distance: 1.0,
            max_time: 20.0,
            retrain_epochs: 10,
        }
    }
}

impl IterateConfig {
    /// Configured tasks, or `num_tasks` point-to-point tasks with seeded headings.
    pub fn resolved_tasks(&self, seed: u64) -> Vec<NavigationTask> {
        if !self.tasks.is_empty() {
            return self.tasks.clone();
        }
        let d = self.goal_distance;
        let margin = d + 1.0;
        (0..self.num_tasks)
            .map(|k| {
                let heading = std::f64::consts::TAU * k as f64 / self.num_tasks.max(1) as f64;
                NavigationTask {
                    name: format!("task{k}"),
                    seed: seed.wrapping_add(k as u64),
                    start: [0.0, 0.0],
                    goal: [d * heading.cos(), d * heading.sin()],
                    obstacles: Vec::new(),
                    bounds: Bounds {
                        min: [-margin, -margin],
                        max: [margin, margin],
                    },
                    max_time: self.max_time,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; copied into every stochastic section on resolution.
    pub seed: u64,
    pub robot: RobotConfig,
    pub sim: SimParams,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mppi: MppiConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    pub iterate: IterateConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            robot: RobotConfig::default(),
            sim: SimParams::default(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mppi: MppiConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig::default(),
            iterate: IterateConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Parses `a.b.c=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_assignment(text: &str) -> CliResult<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected key=value, got `{text}`")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("malformed key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok((path, value))
}

/// Sets `path` in `doc`, creating objects along the way. The key must exist in
/// `template` so that misspelt keys are rejected.
pub fn apply_assignment(doc: &mut Value, template: &Value, path: &[String], value: Value) -> CliResult<()> {
    let mut node = doc;
    let mut shape = Some(template);
    for (i, key) in path.iter().enumerate() {
        shape = shape.and_then(|s| s.get(key));
        let known = shape.is_some() || template_allows_any(template, &path[..i]);
        if !known {
            return Err(CliError::Config(format!("unknown config key `{}`", path.join("."))));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{}` is not a section", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(key.clone(), value);
            return Ok(());
        }
        node = obj.entry(key.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Sections whose keys are open-ended: optional values that serialise as null.
fn template_allows_any(template: &Value, prefix: &[String]) -> bool {
    let mut node = template;
    for k in prefix {
        match node.get(k) {
            Some(n) => node = n,
            None => return false,
        }
    }
    node.is_null()
}

impl RunConfig {
    /// Defaults, then the config file, then assignments, then the seed flag.
    pub fn load(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> CliResult<Self> {
        let template = serde_json::to_value(RunConfig::default())?;
        let mut doc = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for s in sets {
            let (path, value) = parse_assignment(s)?;
            apply_assignment(&mut doc, &template, &path, value)?;
        }
        let mut config: RunConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        config.resolve()?;
        Ok(config)
    }

    /// Propagates the global seed and shared settings, then validates.
    pub fn resolve(&mut self) -> CliResult<()> {
        self.train.seed = self.seed;
        self.mppi.seed = self.seed;
        self.eval.seed = self.seed;
        self.graph.n = self.model.n;
        self.graph.sample_dt = self.sim.sample_dt;
        self.sim.validate()?;
        self.graph.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.mppi.validate()?;
        self.eval.validate()?;
        if self.data.test_per_dataset >= self.data.trajectories_per_dataset {
            return Err(CliError::Config(
                "data.test_per_dataset must be smaller than data.trajectories_per_dataset".into(),
            ));
        }
        if self.data.real_like && self.data.real_like_test >= self.data.real_like_trajectories {
            return Err(CliError::Config(
                "data.real_like_test must be smaller than data.real_like_trajectories".into(),
            ));
        }
        Ok(())
    }

    pub fn sim_params_for(&self, point: GridPoint) -> SimParams {
        SimParams {
            friction_mu: point.friction_mu,
            ground_stiffness: point.ground_stiffness,
            ..self.sim.clone()
        }
    }

    /// Writes the resolved config as `<command>.config.json` in the report directory.
    pub fn echo(&self, command: &str) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.paths.report_dir).map_err(|e| CliError::io(&self.paths.report_dir, e))?;
        let path = self.paths.report_dir.join(format!("{command}.config.json"));
        crate::write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignments() {
        let template = serde_json::to_value(RunConfig::default()).unwrap();
        let mut doc = serde_json::json!({});
        let (p, v) = parse_assignment("train.epochs=7").unwrap();
        apply_assignment(&mut doc, &template, &p, v).unwrap();
        let (p, v) = parse_assignment("paths.data_dir=/tmp/x").unwrap();
        apply_assignment(&mut doc, &template, &p, v).unwrap();
        let (p, v) = parse_assignment("data.sim_datasets_for_training=2").unwrap();
        apply_assignment(&mut doc, &template, &p, v).unwrap();
        let cfg: RunConfig = serde_json::from_value(doc).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.paths.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.data.sim_datasets_for_training, Some(2));
        let (p, v) = parse_assignment("train.epochz=7").unwrap();
        assert!(apply_assignment(&mut serde_json::json!({}), &template, &p, v).is_err());
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn seed_propagates() {
        let cfg = RunConfig::load(None, &["model.n=4".into()], Some(9)).unwrap();
        assert_eq!((cfg.train.seed, cfg.mppi.seed, cfg.eval.seed), (9, 9, 9));
        assert_eq!(cfg.graph.n, 4);
    }

    #[test]
    fn generated_tasks() {
        let tasks = IterateConfig::default().resolved_tasks(5);
        assert_eq!(tasks.len(), 4);
        assert!((tasks[1].goal[1] - 1.0).abs() < 1e-12);
        assert_eq!(tasks[2].seed, 7);
    }
}
