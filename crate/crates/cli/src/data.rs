//! Dataset directories: a manifest plus one JSON file per trajectory.

use std::path::{Path, PathBuf};

use cablegraph_core::refsim::{self, add_observation_noise, SimParams};
use cablegraph_core::scenario::{self, ScenarioKind};
use cablegraph_core::topology::RobotTopology;
use cablegraph_core::train::{DataSource, Dataset};
use cablegraph_core::trajectory::Trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    /// Path relative to the data directory.
    pub file: String,
    pub split: Split,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: usize,
    pub source: DataSource,
    pub sim_params: SimParams,
    pub trajectories: Vec<TrajectoryEntry>,
    /// Indices whose oracle rollout failed.
    pub skipped: Vec<usize>,
}

impl DatasetEntry {
    pub fn name(&self) -> String {
        format!("dataset_{}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub robot: crate::config::RobotConfig,
    pub seed: u64,
    pub datasets: Vec<DatasetEntry>,
}

/// Deterministic seed for one element of a seeded family.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        x ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

/// Replaces every endcap with a noisy measurement and drops hidden state.
pub fn make_real_like(traj: &mut Trajectory, topology: &RobotTopology, sigma: f64, seed: u64) {
    traj.strip_hidden_state();
    for (k, frame) in traj.frames.iter_mut().enumerate() {
        let obs = add_observation_noise(&frame.observation(), sigma, derive_seed(seed, &[k as u64]));
        frame.endcaps = obs.node_positions(topology).into_iter().map(Into::into).collect();
    }
}

struct DatasetSpec {
    id: usize,
    source: DataSource,
    params: SimParams,
    count: usize,
    test: usize,
}

fn generate_dataset(
    cfg: &RunConfig,
    topology: &RobotTopology,
    spec: &DatasetSpec,
    data_dir: &Path,
) -> CliResult<DatasetEntry> {
    let dir = data_dir.join(format!("dataset_{}", spec.id));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let steps = (cfg.data.duration / spec.params.sample_dt).round() as usize;
    let mut entry = DatasetEntry {
        id: spec.id,
        source: spec.source,
        sim_params: spec.params.clone(),
        trajectories: Vec::new(),
        skipped: Vec::new(),
    };
    for j in 0..spec.count {
        let seed = derive_seed(cfg.seed, &[spec.id as u64, j as u64]);
        let kind = cfg.data.scenarios[j % cfg.data.scenarios.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rolled = scenario::scenario(kind, cfg.robot.kind, topology, &spec.params, steps, &mut rng)
            .and_then(|(state, controls)| refsim::rollout(&state, &controls, topology, &spec.params));
        let mut traj = match rolled {
            Ok(t) => t,
            Err(e) => {
                log::warn!("dataset {} trajectory {j} skipped: {e}", spec.id);
                entry.skipped.push(j);
                continue;
            }
        };
        traj.header.dataset_id = spec.id;
        if spec.source == DataSource::RealLike {
            make_real_like(&mut traj, topology, cfg.data.real_like_noise, seed);
        }
        let file = format!("dataset_{}/traj_{j:03}.json", spec.id);
        let path = data_dir.join(&file);
        traj.save(&path)?;
        entry.trajectories.push(TrajectoryEntry {
            file,
            split: if j + spec.test >= spec.count { Split::Test } else { Split::Train },
            scenario: kind,
            seed,
            frames: traj.len(),
        });
    }
    Ok(entry)
}

/// Rolls out every configured dataset and writes the manifest.
pub fn generate(cfg: &RunConfig, topology: &RobotTopology) -> CliResult<Manifest> {
    let data_dir = &cfg.paths.data_dir;
    std::fs::create_dir_all(data_dir).map_err(|e| CliError::io(data_dir, e))?;
    if cfg.data.scenarios.is_empty() {
        return Err(CliError::Config("data.scenarios must not be empty".into()));
    }
    let mut specs: Vec<DatasetSpec> = cfg
        .data
        .grid
        .iter()
        .enumerate()
        .map(|(id, &p)| DatasetSpec {
            id,
            source: DataSource::Oracle,
            params: cfg.sim_params_for(p),
            count: cfg.data.trajectories_per_dataset,
            test: cfg.data.test_per_dataset,
        })
        .collect();
    if cfg.data.real_like {
        specs.push(DatasetSpec {
            id: specs.len(),
            source: DataSource::RealLike,
            params: cfg.sim_params_for(cfg.data.real_like_params),
            count: cfg.data.real_like_trajectories,
            test: cfg.data.real_like_test,
        });
    }
    let mut manifest = Manifest {
        robot: cfg.robot.clone(),
        seed: cfg.seed,
        datasets: Vec::new(),
    };
    for spec in &specs {
        manifest.datasets.push(generate_dataset(cfg, topology, spec, data_dir)?);
    }
    crate::write_json(&data_dir.join("topology.json"), topology)?;
    crate::write_json(&data_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

impl Manifest {
    pub fn load(data_dir: &Path) -> CliResult<Self> {
        let path = data_dir.join(MANIFEST);
        if !path.exists() {
            return Err(CliError::missing("dataset manifest", path));
        }
        crate::read_json(&path)
    }

    pub fn sim_params_of(&self, id: usize) -> Option<&SimParams> {
        self.datasets.iter().find(|d| d.id == id).map(|d| &d.sim_params)
    }
}

/// A dataset as it enters training: its manifest entry and the one-hot index
/// it is assigned.
#[derive(Debug, Clone)]
pub struct Selected<'a> {
    pub entry: &'a DatasetEntry,
    pub one_hot: usize,
}

/// Simulation datasets in id order, truncated to the configured count, then
/// the partially observed dataset when present.
pub fn select<'a>(manifest: &'a Manifest, cfg: &RunConfig) -> Vec<Selected<'a>> {
    let sims: Vec<&DatasetEntry> = manifest
        .datasets
        .iter()
        .filter(|d| d.source == DataSource::Oracle)
        .take(cfg.data.sim_datasets_for_training.unwrap_or(usize::MAX))
        .collect();
    let real = manifest.datasets.iter().find(|d| d.source == DataSource::RealLike);
    sims.into_iter()
        .chain(real)
        .enumerate()
        .map(|(one_hot, entry)| Selected { entry, one_hot })
        .collect()
}

pub fn trajectory_path(data_dir: &Path, entry: &TrajectoryEntry) -> PathBuf {
    data_dir.join(&entry.file)
}

/// Loads one split of a dataset with headers tagged by its one-hot index.
pub fn load_split(data_dir: &Path, sel: &Selected<'_>, split: Split) -> CliResult<Vec<Trajectory>> {
    sel.entry
        .trajectories
        .iter()
        .filter(|t| t.split == split)
        .map(|t| {
            let path = trajectory_path(data_dir, t);
            if !path.exists() {
                return Err(CliError::missing("trajectory", &path));
            }
            let mut traj = Trajectory::load(&path)?;
            traj.header.dataset_id = sel.one_hot;
            Ok(traj)
        })
        .collect()
}

/// Training splits as core datasets: simulation ones, then the partially
/// observed one.
pub fn training_datasets(
    data_dir: &Path,
    selected: &[Selected<'_>],
) -> CliResult<(Vec<Dataset>, Option<Dataset>)> {
    let mut sims = Vec::new();
    let mut real = None;
    for sel in selected {
        let ds = Dataset {
            trajectories: load_split(data_dir, sel, Split::Train)?,
            dataset_id: sel.one_hot,
            source: sel.entry.source,
            sim_params: Some(sel.entry.sim_params.clone()),
        };
        match sel.entry.source {
            DataSource::Oracle => sims.push(ds),
            DataSource::RealLike => real = Some(ds),
        }
    }
    Ok((sims, real))
}
