//! The command implementations behind each subcommand.

use std::path::{Path, PathBuf};

use cablegraph_core::eval::{full_traj_eval, short_horizon_eval, MetricSummary, MetricsReport};
use cablegraph_core::gnn::Model;
use cablegraph_core::integrate::{LearnedSimulator, OracleSimulator, Simulator};
use cablegraph_core::mppi::{collect_iteration, load_tasks, IterationMetrics, NavigationTask, TaskMetrics};
use cablegraph_core::topology::RobotTopology;
use cablegraph_core::train::{make_cotrain_pool, train_epochs, DataSource, Dataset, TrainConfig, TrainReport};
use cablegraph_core::trajectory::Trajectory;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{Checkpoint, TrainSummary, MAGIC};
use crate::config::RunConfig;
use crate::data::{self, derive_seed, Manifest, Selected, Split};
use crate::error::{CliError, CliResult};
use crate::{write_json, write_text};

/// Which transition model a command plans or predicts with.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Checkpoint(PathBuf),
    /// The reference simulator itself.
    Oracle,
}

fn report_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.report_dir.join(name)
}

fn fresh_model(cfg: &RunConfig, num_datasets: usize) -> CliResult<Model> {
    let mut graph = cfg.graph.clone();
    graph.num_datasets = num_datasets;
    graph.normalizer = None;
    Ok(Model::new(cfg.model.clone(), graph, cfg.seed)?)
}

/// Pools the training splits, with `extra` trajectories added to the dataset
/// whose one-hot index is `target`.
fn training_pool(
    mut sims: Vec<Dataset>,
    mut real: Option<Dataset>,
    extra: &[Trajectory],
    target: usize,
    seed: u64,
) -> CliResult<cablegraph_core::train::CotrainPool> {
    if !extra.is_empty() {
        let ds = match real.as_mut() {
            Some(r) if r.dataset_id == target => r,
            _ => sims
                .iter_mut()
                .find(|d| d.dataset_id == target)
                .ok_or_else(|| CliError::Config(format!("no dataset with one-hot index {target}")))?,
        };
        ds.trajectories.extend(extra.iter().cloned());
    }
    Ok(make_cotrain_pool(sims, real, seed)?)
}

fn log_epoch(r: &cablegraph_core::train::EpochRecord) {
    log::info!(
        "epoch {:>4}  train {:.6e}  val {:.6e}  lr {:.3e}",
        r.epoch,
        r.train_loss,
        r.val_loss,
        r.learning_rate
    );
}

pub fn gen_data(cfg: &RunConfig) -> CliResult<Manifest> {
    cfg.echo("gen-data")?;
    let topology = cfg.robot.topology()?;
    let manifest = data::generate(cfg, &topology)?;
    for d in &manifest.datasets {
        log::info!(
            "{}: {} trajectories, {} skipped",
            d.name(),
            d.trajectories.len(),
            d.skipped.len()
        );
    }
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub report: TrainReport,
}

/// Trains on the pooled training splits. With `resume`, continues from that
/// checkpoint and its epoch count.
pub fn train(cfg: &RunConfig, resume: Option<&Path>, out: Option<&Path>) -> CliResult<TrainOutput> {
    cfg.echo("train")?;
    let topology = cfg.robot.topology()?;
    let manifest = Manifest::load(&cfg.paths.data_dir)?;
    let selected = data::select(&manifest, cfg);
    let (sims, real) = data::training_datasets(&cfg.paths.data_dir, &selected)?;
    let pool = make_cotrain_pool(sims, real, cfg.seed)?;
    let (mut model, start_epoch) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let start = ckpt.epochs_completed();
            (ckpt.model, start)
        }
        None => (fresh_model(cfg, pool.num_datasets)?, 0),
    };
    let report = train_epochs(&pool, &mut model, &topology, &cfg.train, start_epoch, log_epoch)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    log::info!("training took {:.1} s", report.wall_time_s);
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.checkpoint_dir.join("model.ckpt"));
    let summary = TrainSummary::from_report(&report);
    Checkpoint::new(model, cfg.robot.clone(), Some(summary)).save(&path)?;
    write_json(&report_path(cfg, "train_report.json"), &report)?;
    write_text(&report_path(cfg, "train_loss.csv"), &report.loss_csv())?;
    Ok(TrainOutput {
        checkpoint: path,
        report,
    })
}

/// Full-trajectory and short-horizon metrics of one simulator on a test set.
fn evaluate_with<S: Simulator>(
    sim: &S,
    topology: &RobotTopology,
    test: &[Trajectory],
    history: usize,
    cfg: &RunConfig,
) -> CliResult<(MetricSummary, MetricSummary)> {
    let full = full_traj_eval(sim, topology, test, history, true)?;
    let short = short_horizon_eval(sim, topology, test, history, &cfg.eval, true)?;
    Ok((full, short))
}

fn pooled_report(model: &str, parts: &[MetricsReport], rods: usize) -> MetricsReport {
    let full = parts.iter().flat_map(|r| r.full.rows.clone()).collect();
    let short = parts.iter().flat_map(|r| r.short_horizon.rows.clone()).collect();
    MetricsReport {
        model: model.to_owned(),
        dataset: "all".into(),
        full: MetricSummary::from_rows(full, rods),
        short_horizon: MetricSummary::from_rows(short, rods),
    }
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

/// Evaluates on every selected dataset's test split and on their union.
pub fn eval(cfg: &RunConfig, source: &ModelSource) -> CliResult<Vec<MetricsReport>> {
    cfg.echo("eval")?;
    let manifest = Manifest::load(&cfg.paths.data_dir)?;
    let selected = data::select(&manifest, cfg);
    let ckpt = match source {
        ModelSource::Checkpoint(p) => Some(Checkpoint::load(p)?),
        ModelSource::Oracle => None,
    };
    let (topology, label, history) = match (&ckpt, source) {
        (Some(c), ModelSource::Checkpoint(p)) => (c.header.robot.topology()?, model_label(p), c.model.graph.h + 1),
        _ => (cfg.robot.topology()?, "oracle".to_owned(), cfg.graph.h + 1),
    };
    let mut reports = Vec::new();
    for sel in &selected {
        let test = data::load_split(&cfg.paths.data_dir, sel, Split::Test)?;
        if test.is_empty() {
            continue;
        }
        let (full, short) = match &ckpt {
            Some(c) => evaluate_with(&LearnedSimulator::new(&c.model, &topology), &topology, &test, history, cfg)?,
            None => {
                if !test.iter().all(Trajectory::has_full_state) {
                    log::warn!("{}: no oracle state, skipped", sel.entry.name());
                    continue;
                }
                let oracle = OracleSimulator {
                    topology: &topology,
                    params: sel.entry.sim_params.clone(),
                    chunk: cfg.model.n,
                };
                evaluate_with(&oracle, &topology, &test, history, cfg)?
            }
        };
        reports.push(MetricsReport {
            model: label.clone(),
            dataset: sel.entry.name(),
            full,
            short_horizon: short,
        });
    }
    if reports.is_empty() {
        return Err(CliError::Config("no test trajectories to evaluate".into()));
    }
    reports.push(pooled_report(&label, &reports, topology.rods.len()));
    write_json(&report_path(cfg, "eval_metrics.json"), &reports)?;
    write_text(&report_path(cfg, "eval_metrics.csv"), &MetricsReport::csv(&reports))?;
    Ok(reports)
}

/// Planar CoM path as `time,x,y` rows.
pub fn path_csv(traj: &Trajectory) -> String {
    let mut out = String::from("time,x,y\n");
    for f in &traj.frames {
        let [x, y] = cablegraph_core::mppi::com_xy(&f.endcap_positions());
        out.push_str(&format!("{},{},{}\n", f.time, x, y));
    }
    out
}

fn navigate_with<M: Simulator>(
    model: &M,
    plant: &OracleSimulator<'_>,
    tasks: &[NavigationTask],
    cfg: &RunConfig,
    dataset_id: usize,
) -> CliResult<Vec<TaskMetrics>> {
    let mut rows = Vec::new();
    for task in tasks {
        let outcome = task.run(model, plant, cfg.robot.kind, &cfg.mppi, dataset_id, None)?;
        let stem = format!("navigate_{}", task.name);
        outcome.trajectory.save(report_path(cfg, &format!("{stem}.trajectory.json")))?;
        write_text(&report_path(cfg, &format!("{stem}.path.csv")), &path_csv(&outcome.trajectory))?;
        log::info!(
            "{}: success {} after {} steps",
            task.name,
            outcome.success,
            outcome.executed_steps()
        );
        rows.push(TaskMetrics::from_outcome(task, &outcome));
    }
    Ok(rows)
}

/// Runs every task in `task_file` against the reference plant.
pub fn navigate(
    cfg: &RunConfig,
    source: &ModelSource,
    task_file: &Path,
    dataset_id: Option<usize>,
) -> CliResult<IterationMetrics> {
    cfg.echo("navigate")?;
    if !task_file.exists() {
        return Err(CliError::missing("task file", task_file));
    }
    let tasks = load_tasks(task_file)?;
    let rows = match source {
        ModelSource::Checkpoint(p) => {
            let ckpt = Checkpoint::load(p)?;
            let topology = ckpt.header.robot.topology()?;
            let plant = OracleSimulator {
                topology: &topology,
                params: cfg.sim.clone(),
                chunk: ckpt.model.n(),
            };
            let id = dataset_id.unwrap_or(ckpt.model.graph.num_datasets - 1);
            let learned = LearnedSimulator::new(&ckpt.model, &topology);
            navigate_with(&learned, &plant, &tasks, cfg, id)?
        }
        ModelSource::Oracle => {
            let topology = cfg.robot.topology()?;
            let plant = OracleSimulator {
                topology: &topology,
                params: cfg.sim.clone(),
                chunk: cfg.model.n,
            };
            navigate_with(&plant, &plant, &tasks, cfg, dataset_id.unwrap_or(0))?
        }
    };
    let metrics = IterationMetrics::from_tasks(0, rows);
    write_json(&report_path(cfg, "navigate_metrics.json"), &metrics)?;
    write_text(&report_path(cfg, "navigate_tasks.csv"), &metrics.task_csv())?;
    Ok(metrics)
}

/// One row of the iteration summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub checkpoint: String,
    pub epochs_completed: usize,
    pub collected_trajectories: usize,
    pub navigation: IterationMetrics,
    pub pooled_test: MetricsReport,
}

impl IterationRow {
    pub const CSV_HEADER: &'static str = "iteration,success_rate,mean_completion_time,collected_trajectories,epochs_completed,full_traj_pos_mean,full_traj_rot_mean,short_horizon_pos_mean,short_horizon_rot_mean";

    pub fn csv(rows: &[IterationRow]) -> String {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            let t = &r.pooled_test;
            out.push_str(&format!(
                "{},{:.6},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.navigation.success_rate,
                f(r.navigation.mean_completion_time),
                r.collected_trajectories,
                r.epochs_completed,
                f(t.full.e_pos_mean),
                f(t.full.e_rot_mean),
                f(t.short_horizon.e_pos_mean),
                f(t.short_horizon.e_rot_mean),
            ));
        }
        out
    }
}

/// Train, navigate, collect and retrain for the configured number of
/// iterations. Artifacts of finished iterations are written before the next
/// one starts.
pub fn iterate(cfg: &RunConfig) -> CliResult<Vec<IterationRow>> {
    cfg.echo("iterate")?;
    let topology = cfg.robot.topology()?;
    let data_dir = &cfg.paths.data_dir;
    let manifest = Manifest::load(data_dir)?;
    let selected = data::select(&manifest, cfg);
    let target: &Selected<'_> = selected
        .iter()
        .find(|s| s.entry.source == DataSource::RealLike)
        .or_else(|| selected.first())
        .ok_or_else(|| CliError::Config("manifest lists no datasets".into()))?;
    let (sims, real) = data::training_datasets(data_dir, &selected)?;
    let num_datasets = sims.len() + usize::from(real.is_some());
    let mut pooled_test = Vec::new();
    for sel in &selected {
        pooled_test.extend(data::load_split(data_dir, sel, Split::Test)?);
    }
    let iter_dir = data_dir.join("iterate");
    std::fs::create_dir_all(&iter_dir).map_err(|e| CliError::io(&iter_dir, e))?;
    write_json(&iter_dir.join("pooled_test.json"), &pooled_test)?;

    let tasks = cfg.iterate.resolved_tasks(cfg.seed);
    let plant = OracleSimulator {
        topology: &topology,
        params: target.entry.sim_params.clone(),
        chunk: cfg.model.n,
    };
    let history = cfg.graph.h + 1;
    let mut model = fresh_model(cfg, num_datasets)?;
    let mut epochs_done = 0;
    let mut collected: Vec<Trajectory> = Vec::new();
    let mut rows = Vec::new();
    for i in 0..cfg.iterate.iterations {
        let train_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &[i as u64]),
            epochs: if i == 0 { cfg.train.epochs } else { cfg.iterate.retrain_epochs },
            ..cfg.train.clone()
        };
        let pool = training_pool(sims.clone(), real.clone(), &collected, target.one_hot, train_cfg.seed)?;
        let report = train_epochs(&pool, &mut model, &topology, &train_cfg, epochs_done, log_epoch)?;
        epochs_done += train_cfg.epochs;
        let ckpt_path = cfg.paths.checkpoint_dir.join(format!("iter_{i}.ckpt"));
        let summary = TrainSummary::from_report(&report);
        Checkpoint::new(model.clone(), cfg.robot.clone(), Some(summary)).save(&ckpt_path)?;

        let learned = LearnedSimulator::new(&model, &topology);
        let (mut new_trajs, navigation) =
            collect_iteration(&learned, &plant, cfg.robot.kind, &tasks, &cfg.mppi, i, target.one_hot);
        let out_dir = iter_dir.join(format!("iter_{i}"));
        std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
        for (k, traj) in new_trajs.iter_mut().enumerate() {
            if target.entry.source == DataSource::RealLike {
                data::make_real_like(traj, &topology, cfg.data.real_like_noise, derive_seed(cfg.seed, &[i as u64, k as u64]));
            }
            traj.save(out_dir.join(format!("traj_{k:03}.json")))?;
        }
        let num_new = new_trajs.len();
        collected.extend(new_trajs);

        let (full, short) = evaluate_with(&learned, &topology, &pooled_test, history, cfg)?;
        rows.push(IterationRow {
            iteration: i,
            checkpoint: ckpt_path.display().to_string(),
            epochs_completed: epochs_done,
            collected_trajectories: num_new,
            navigation,
            pooled_test: MetricsReport {
                model: format!("iter_{i}"),
                dataset: "pooled_test".into(),
                full,
                short_horizon: short,
            },
        });
        log::info!(
            "iteration {i}: success rate {:.2}, {num_new} trajectories collected",
            rows[i].navigation.success_rate
        );
        write_json(&report_path(cfg, "iterate_metrics.json"), &rows)?;
        write_text(&report_path(cfg, "iterate_metrics.csv"), &IterationRow::csv(&rows))?;
        let tasks_csv: String = rows
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let csv = r.navigation.task_csv();
                if j == 0 {
                    csv
                } else {
                    csv.split_once('\n').map(|x| x.1.to_owned()).unwrap_or_default()
                }
            })
            .collect();
        write_text(&report_path(cfg, "iterate_tasks.csv"), &tasks_csv)?;
    }
    Ok(rows)
}

/// Metadata of a checkpoint, dataset directory, manifest or trajectory file.
pub fn inspect(path: &Path) -> CliResult<Value> {
    if !path.exists() {
        return Err(CliError::missing("path", path));
    }
    if path.is_dir() {
        return Ok(manifest_summary(&Manifest::load(path)?));
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        let ckpt = Checkpoint::from_bytes(&bytes, path)?;
        let h = &ckpt.header;
        return Ok(json!({
            "kind": "checkpoint",
            "version": h.version,
            "robot": h.robot,
            "model": h.model,
            "graph": {
                "h": h.graph.h,
                "n": h.graph.n,
                "num_datasets": h.graph.num_datasets,
                "sample_dt": h.graph.sample_dt,
                "contact_threshold": h.graph.contact_threshold,
                "normalized": h.graph.normalizer.is_some(),
            },
            "tensors": h.params.len(),
            "scalars": ckpt.model.params.num_scalars(),
            "train": h.train,
        }));
    }
    if path.file_name().is_some_and(|n| n == data::MANIFEST) {
        let manifest: Manifest = crate::read_json(path)?;
        return Ok(manifest_summary(&manifest));
    }
    let traj = Trajectory::load(path)?;
    Ok(json!({
        "kind": "trajectory",
        "header": traj.header,
        "frames": traj.len(),
        "duration": traj.frames.last().zip(traj.frames.first()).map(|(b, a)| b.time - a.time),
        "full_state": traj.has_full_state(),
        "rest_lengths": traj.has_rest_lengths(),
    }))
}

fn manifest_summary(m: &Manifest) -> Value {
    let datasets: Vec<Value> = m
        .datasets
        .iter()
        .map(|d| {
            let count = |s: Split| d.trajectories.iter().filter(|t| t.split == s).count();
            json!({
                "id": d.id,
                "source": d.source,
                "friction_mu": d.sim_params.friction_mu,
                "ground_stiffness": d.sim_params.ground_stiffness,
                "train": count(Split::Train),
                "test": count(Split::Test),
                "skipped": d.skipped.len(),
            })
        })
        .collect();
    json!({
        "kind": "dataset",
        "robot": m.robot,
        "seed": m.seed,
        "datasets": datasets,
    })
}
