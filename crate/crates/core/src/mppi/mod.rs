//! Sampling-based model-predictive control over a [`Simulator`], the grid
//! cost field it steers by, and controller-in-the-loop data collection.

mod costmap;

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use costmap::{build_costmap, wavefront, Bounds, CostMap, Lookup, ObstacleBox};

use crate::error::{Error, Result};
use crate::integrate::{OracleSimulator, Simulator};
use crate::refsim::{self, frame_from_state, FullState};
use crate::scenario::settled_state;
use crate::topology::RobotKind;
use crate::trajectory::{Trajectory, TrajectoryHeader};

/// Cost assigned to a sample whose rollout diverged.
pub const DIVERGED_COST: f64 = 1e9;
/// Lower bound on the obstacle distance in the collision term.
pub const COLLISION_FLOOR: f64 = 0.01;
/// Planar CoM distance at which a navigation task counts as solved.
pub const GOAL_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    /// Sample count `K`.
    pub num_samples: usize,
    /// Horizon in control chunks, each spanning one model call.
    pub horizon: usize,
    pub beta: f64,
    pub noise_sigma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Cost-map resolution in metres.
    pub cell_size: f64,
    pub seed: u64,
    /// Roll samples out concurrently.
    pub parallel: bool,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            num_samples: 64,
            horizon: 15,
            beta: 0.5,
            noise_sigma: 0.4,
            alpha1: 1.0,
            alpha2: 0.05,
            cell_size: 0.05,
            seed: 0,
            parallel: true,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter("num_samples and horizon must be >= 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter("beta must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise_sigma must be >= 0".into()));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidParameter("cell_size must be > 0".into()));
        }
        Ok(())
    }
}

/// A control sequence: one control vector per chunk.
pub type ControlSequence = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MppiResult {
    pub u_star: ControlSequence,
    pub weights: Vec<f64>,
    pub costs: Vec<f64>,
    pub rho: f64,
    pub eta: f64,
    pub samples: Vec<ControlSequence>,
}

pub fn com_xy(endcaps: &[Vector3<f64>]) -> [f64; 2] {
    let c = endcaps.iter().sum::<Vector3<f64>>() / endcaps.len() as f64;
    [c.x, c.y]
}

/// Per-frame cost and whether the CoM lookup had to be clamped.
pub fn cost(endcaps: &[Vector3<f64>], map: &CostMap, config: &MppiConfig) -> (f64, bool) {
    let lookup = map.lookup(com_xy(endcaps));
    let mut c = 0.0;
    if config.alpha1 != 0.0 {
        c += config.alpha1 * lookup.distance;
    }
    if config.alpha2 != 0.0 {
        let d = endcaps
            .iter()
            .map(|p| map.obstacle_distance([p.x, p.y]))
            .fold(f64::INFINITY, f64::min);
        c += config.alpha2 / d.max(COLLISION_FLOOR);
    }
    (c, lookup.clamped)
}

/// Sum of per-frame costs over a rollout.
pub fn trajectory_cost(frames: &[Vec<Vector3<f64>>], map: &CostMap, config: &MppiConfig) -> f64 {
    frames.iter().map(|f| cost(f, map, config).0).sum()
}

/// `K` perturbed copies of `nominal`, clamped to `[-1, 1]`; sample 0 is the nominal itself.
pub fn sample_controls(nominal: &[Vec<f64>], config: &MppiConfig, rng: &mut impl Rng) -> Vec<ControlSequence> {
    let normal = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.noise_sigma).expect("sigma is finite and positive"));
    let clamp = |x: f64| x.clamp(-1.0, 1.0);
    (0..config.num_samples)
        .map(|k| {
            nominal
                .iter()
                .map(|u| {
                    u.iter()
                        .map(|&x| match (&normal, k) {
                            (Some(n), k) if k > 0 => clamp(x + n.sample(rng)),
                            _ => clamp(x),
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Repeats each chunk control `chunk_len` times.
pub fn expand(sequence: &[Vec<f64>], chunk_len: usize) -> Vec<Vec<f64>> {
    sequence
        .iter()
        .flat_map(|u| std::iter::repeat_n(u.clone(), chunk_len))
        .collect()
}

/// Rolls every sample out from a copy of `start` and returns one cost per
/// sample, in order. Diverged rollouts cost [`DIVERGED_COST`].
pub fn rollout_batch<S: Simulator>(
    sim: &S,
    start: &S::State,
    samples: &[ControlSequence],
    map: &CostMap,
    config: &MppiConfig,
) -> Vec<f64> {
    let steps: Vec<Vec<Vec<f64>>> = samples.iter().map(|s| expand(s, sim.chunk_len())).collect();
    let refs: Vec<&[Vec<f64>]> = steps.iter().map(Vec::as_slice).collect();
    let mut states = vec![start.clone(); samples.len()];
    sim.advance_many(&mut states, &refs, config.parallel)
        .into_iter()
        .map(|r| match r {
            Ok(frames) => {
                let c = trajectory_cost(&frames, map, config);
                if c.is_nan() {
                    DIVERGED_COST
                } else {
                    c
                }
            }
            Err(_) => DIVERGED_COST,
        })
        .collect()
}

fn is_sentinel(c: f64) -> bool {
    !(c < DIVERGED_COST)
}

/// Soft-min weights over the sample costs and the weighted-average sequence.
pub fn weights_and_update(costs: &[f64], samples: &[ControlSequence], beta: f64) -> Result<MppiResult> {
    if costs.len() != samples.len() || costs.is_empty() {
        return Err(Error::Shape("one cost per sample required".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter("beta must be > 0".into()));
    }
    if costs.iter().all(|&c| is_sentinel(c)) {
        return Err(Error::NoValidSample);
    }
    let rho = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_finite() { (-(c - rho) / beta).exp() } else { 0.0 })
        .collect();
    let eta: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|r| r / eta).collect();
    let u_star = samples[0]
        .iter()
        .enumerate()
        .map(|(t, u)| {
            (0..u.len())
                .map(|j| {
                    let (lo, hi) = samples
                        .iter()
                        .map(|s| s[t][j])
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
                    let avg: f64 = samples.iter().zip(&weights).map(|(s, w)| w * s[t][j]).sum();
                    avg.clamp(lo, hi)
                })
                .collect()
        })
        .collect();
    Ok(MppiResult {
        u_star,
        weights,
        costs: costs.to_vec(),
        rho,
        eta,
        samples: samples.to_vec(),
    })
}

/// Diagnostics of one planning cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub weight_sum: f64,
    pub best_cost: f64,
    pub worst_cost: f64,
    /// Cost of rolling out the weighted-average sequence itself.
    pub u_star_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Simulated seconds before giving up.
    pub max_time: f64,
    pub dataset_id: usize,
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    /// Executed frames; empty when nothing was executed.
    pub trajectory: Trajectory,
    pub success: bool,
    pub completion_time: Option<f64>,
    pub cycles: Vec<CycleStats>,
    /// Planning cycles in which some CoM fell outside the map.
    pub clamped_cycles: usize,
}

impl ControlOutcome {
    pub fn executed_steps(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }

    /// Planar CoM path of the executed frames.
    pub fn com_path(&self) -> Vec<(f64, [f64; 2])> {
        self.trajectory
            .frames
            .iter()
            .map(|f| (f.time, com_xy(&f.endcap_positions())))
            .collect()
    }
}

fn distance_to(p: [f64; 2], g: [f64; 2]) -> f64 {
    (p[0] - g[0]).hypot(p[1] - g[1])
}

/// Receding-horizon control of the oracle plant using `model` for planning.
/// Each cycle plans over the horizon, executes the first chunk of the
/// weighted-average sequence and shifts it forward as the next nominal.
pub fn control_loop<M: Simulator>(
    model: &M,
    plant: &OracleSimulator<'_>,
    start: &FullState,
    map: &CostMap,
    config: &MppiConfig,
    loop_config: &LoopConfig,
) -> Result<ControlOutcome> {
    config.validate()?;
    let topology = plant.topology;
    let params = &plant.params;
    let width = topology.num_actuated();
    let chunk = model.chunk_len();
    let header = TrajectoryHeader {
        topology_ref: "topology.json".into(),
        sim_params: Some(params.clone()),
        dataset_id: loop_config.dataset_id,
        sample_dt: params.sample_dt,
        iteration: loop_config.iteration,
    };
    let mut executed = Trajectory {
        header: header.clone(),
        frames: vec![frame_from_state(start, topology, vec![0.0; width])],
    };
    let mut outcome = ControlOutcome {
        trajectory: Trajectory {
            header,
            frames: Vec::new(),
        },
        success: false,
        completion_time: None,
        cycles: Vec::new(),
        clamped_cycles: 0,
    };
    let at_goal = |s: &FullState| distance_to(com_xy(&refsim::endcap_positions(s, topology)), map.goal) <= GOAL_TOLERANCE;
    if at_goal(start) {
        outcome.success = true;
        outcome.completion_time = Some(0.0);
        return Ok(outcome);
    }
    let max_steps = (loop_config.max_time / params.sample_dt).round().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut nominal: ControlSequence = vec![vec![0.0; width]; config.horizon];
    let mut state = start.clone();
    let mut steps = 0;
    while steps < max_steps && !outcome.success {
        let planning = model.state_from_trajectory(&executed, executed.len() - 1)?;
        let samples = sample_controls(&nominal, config, &mut rng);
        let costs = rollout_batch(model, &planning, &samples, map, config);
        let result = weights_and_update(&costs, &samples, config.beta)?;
        let mut probe = planning.clone();
        let u_star_cost = match model.advance(&mut probe, &expand(&result.u_star, chunk)) {
            Ok(frames) => {
                if frames.iter().any(|f| map.lookup(com_xy(f)).clamped) {
                    outcome.clamped_cycles += 1;
                }
                trajectory_cost(&frames, map, config)
            }
            Err(_) => DIVERGED_COST,
        };
        outcome.cycles.push(CycleStats {
            weight_sum: result.weights.iter().sum(),
            best_cost: result.rho,
            worst_cost: costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            u_star_cost,
        });
        let u = result.u_star[0].clone();
        for _ in 0..chunk.min(max_steps - steps) {
            executed.frames.last_mut().expect("non-empty").controls = u.clone();
            refsim::advance_frame(&mut state, &u, topology, params)?;
            steps += 1;
            state.time = start.time + steps as f64 * params.sample_dt;
            executed.frames.push(frame_from_state(&state, topology, vec![0.0; width]));
            if at_goal(&state) {
                outcome.success = true;
                outcome.completion_time = Some(steps as f64 * params.sample_dt);
                break;
            }
        }
        nominal = result.u_star[1..].to_vec();
        nominal.push(vec![0.0; width]);
    }
    if steps > 0 {
        outcome.trajectory = executed;
    }
    Ok(outcome)
}

/// A point-to-point navigation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationTask {
    pub name: String,
    /// Seeds the initial yaw and the controller noise.
    pub seed: u64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    #[serde(default)]
    pub obstacles: Vec<ObstacleBox>,
    pub bounds: Bounds,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
}

fn default_max_time() -> f64 {
    30.0
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TaskFile {
    One(NavigationTask),
    Many(Vec<NavigationTask>),
}

/// Reads a task file holding one task or a list of tasks.
pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<NavigationTask>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(match serde_json::from_str(&text)? {
        TaskFile::One(t) => vec![t],
        TaskFile::Many(ts) => ts,
    })
}

impl NavigationTask {
    pub fn costmap(&self, cell_size: f64) -> Result<CostMap> {
        build_costmap(&self.obstacles, self.goal, self.bounds, cell_size)
    }

    /// Robot settled on the ground at the start point with a seeded yaw.
    pub fn initial_state(&self, robot: RobotKind, plant: &OracleSimulator<'_>) -> Result<FullState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        settled_state(robot, plant.topology, &plant.params, yaw, self.start, 1.0)
    }

    pub fn run<M: Simulator>(
        &self,
        model: &M,
        plant: &OracleSimulator<'_>,
        robot: RobotKind,
        config: &MppiConfig,
        dataset_id: usize,
        iteration: Option<usize>,
    ) -> Result<ControlOutcome> {
        let map = self.costmap(config.cell_size)?;
        let start = self.initial_state(robot, plant)?;
        let config = MppiConfig {
            seed: config.seed ^ self.seed.rotate_left(32),
            ..config.clone()
        };
        let loop_config = LoopConfig {
            max_time: self.max_time,
            dataset_id,
            iteration,
        };
        control_loop(model, plant, &start, &map, &config, &loop_config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub seed: u64,
    pub success: bool,
    pub completion_time: Option<f64>,
    pub executed_steps: usize,
    /// Planar CoM distance to goal at the end.
    pub final_distance: Option<f64>,
    pub error: Option<String>,
}

impl TaskMetrics {
    pub fn from_outcome(task: &NavigationTask, outcome: &ControlOutcome) -> Self {
        Self {
            task: task.name.clone(),
            seed: task.seed,
            success: outcome.success,
            completion_time: outcome.completion_time,
            executed_steps: outcome.executed_steps(),
            final_distance: outcome
                .trajectory
                .frames
                .last()
                .map(|f| distance_to(com_xy(&f.endcap_positions()), task.goal)),
            error: None,
        }
    }

    pub fn failed(task: &NavigationTask, error: &Error) -> Self {
        Self {
            task: task.name.clone(),
            seed: task.seed,
            success: false,
            completion_time: None,
            executed_steps: 0,
            final_distance: None,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub tasks: Vec<TaskMetrics>,
    pub success_rate: f64,
    /// Mean over successful tasks.
    pub mean_completion_time: Option<f64>,
}

impl IterationMetrics {
    pub fn from_tasks(iteration: usize, tasks: Vec<TaskMetrics>) -> Self {
        let done: Vec<f64> = tasks.iter().filter_map(|t| t.completion_time).collect();
        let success_rate = if tasks.is_empty() {
            0.0
        } else {
            tasks.iter().filter(|t| t.success).count() as f64 / tasks.len() as f64
        };
        Self {
            iteration,
            success_rate,
            mean_completion_time: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
            tasks,
        }
    }

    pub const TASK_CSV_HEADER: &'static str = "iteration,task,seed,success,completion_time,executed_steps,final_distance";

    pub fn task_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = format!("{}\n", Self::TASK_CSV_HEADER);
        for t in &self.tasks {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.iteration,
                t.task,
                t.seed,
                t.success,
                opt(t.completion_time),
                t.executed_steps,
                opt(t.final_distance)
            ));
        }
        out
    }
}

/// Runs every task once and returns the executed trajectories, tagged with
/// `dataset_id` and the iteration index, plus per-task metrics. Task
/// failures are recorded rather than propagated.
pub fn collect_iteration<M: Simulator>(
    model: &M,
    plant: &OracleSimulator<'_>,
    robot: RobotKind,
    tasks: &[NavigationTask],
    config: &MppiConfig,
    iteration: usize,
    dataset_id: usize,
) -> (Vec<Trajectory>, IterationMetrics) {
    let mut trajectories = Vec::new();
    let mut rows = Vec::new();
    for task in tasks {
        match task.run(model, plant, robot, config, dataset_id, Some(iteration)) {
            Ok(outcome) => {
                rows.push(TaskMetrics::from_outcome(task, &outcome));
                if !outcome.trajectory.is_empty() {
                    trajectories.push(outcome.trajectory);
                }
            }
            Err(e) => {
                log::warn!("task {} failed: {e}", task.name);
                rows.push(TaskMetrics::failed(task, &e));
            }
        }
    }
    (trajectories, IterationMetrics::from_tasks(iteration, rows))
}
