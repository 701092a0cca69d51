//! Target construction, the weighted squared-error loss, co-training pools and
//! the epoch loop.

use std::fmt::Write as _;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{Model, PredictionBlock, RecurrentState};
use crate::graphgen::{build_graph_from_inputs, build_graph_raw, FeatureNormalizer, GraphBatch, GraphInputs, GraphSnapshot};
use crate::integrate::{controls_window, finite_difference_velocity, rest_length_estimates};
use crate::net::{Adam, AdamConfig, ParamStore, Tape, Var};
use crate::refsim::SimParams;
use crate::topology::RobotTopology;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub w1: f64,
    pub w2: f64,
    /// Sequences per optimiser step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Std of Gaussian noise added to input velocities (m/s); 0 disables.
    pub input_noise_sigma: f64,
    /// Fraction of trajectories held out for validation.
    pub validation_fraction: f64,
    /// Subtract the velocity noise from the first-step target.
    pub noise_corrects_targets: bool,
    /// Graphs per training sequence for recurrent models, `n` frames apart.
    pub sequence_graphs: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            input_noise_sigma: 0.01,
            validation_fraction: 0.1,
            noise_corrects_targets: true,
            sequence_graphs: 4,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w1 < 0.0 || self.w2 < 0.0 || self.w1 + self.w2 == 0.0 {
            return Err(Error::InvalidParameter("w1, w2 must be >= 0 and not both 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.sequence_graphs == 0 {
            return Err(Error::InvalidParameter("sequence_graphs must be >= 1".into()));
        }
        if self.input_noise_sigma < 0.0 {
            return Err(Error::InvalidParameter("input_noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Oracle,
    RealLike,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub dataset_id: usize,
    pub source: DataSource,
    pub sim_params: Option<SimParams>,
}

/// Graph inputs at one frame with the `n`-step ground-truth deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub t: usize,
    pub inputs: GraphInputs,
    pub logged_rest_deltas: Option<Vec<Vec<f64>>>,
    /// `[endcap][step]`.
    pub target_dv: Vec<Vec<[f64; 3]>>,
    /// `[cable][step]`.
    pub target_dl: Vec<Vec<f64>>,
}

impl TrainSample {
    pub fn graph(&self, model: &Model, topology: &RobotTopology) -> Result<GraphSnapshot> {
        let mut g = build_graph_from_inputs(&self.inputs, topology, &model.graph)?;
        g.logged_rest_deltas = self.logged_rest_deltas.clone();
        Ok(g)
    }

    fn dv_rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.target_dv
            .iter()
            .map(|steps| steps.iter().flat_map(|v| v.iter().copied()).collect())
    }
}

/// First and last frame index that yields a sample.
pub fn sample_range(len: usize, h: usize, n: usize) -> Option<(usize, usize)> {
    let first = h + 1;
    let last = len.checked_sub(1 + n)?;
    (first <= last).then_some((first, last))
}

/// One sample per valid frame; too-short trajectories yield a warning instead.
pub fn build_targets(
    traj: &Trajectory,
    topology: &RobotTopology,
    h: usize,
    n: usize,
) -> (Vec<TrainSample>, Option<String>) {
    let Some((first, last)) = sample_range(traj.len(), h, n) else {
        return (
            Vec::new(),
            Some(format!(
                "trajectory of {} frames is shorter than h + n + 2 = {}",
                traj.len(),
                h + n + 2
            )),
        );
    };
    let dt = traj.header.sample_dt;
    let positions = traj.positions();
    let rest = rest_length_estimates(traj, topology);
    let controls = traj.controls();
    let velocity: Vec<Vec<Vector3<f64>>> = (0..traj.len())
        .map(|t| finite_difference_velocity(&positions, t, dt))
        .collect();
    let samples = (first..=last)
        .map(|t| {
            let target_dv = (0..topology.num_endcaps())
                .map(|i| {
                    (0..n)
                        .map(|k| (velocity[t + k + 1][i] - velocity[t + k][i]).into())
                        .collect()
                })
                .collect();
            let target_dl: Vec<Vec<f64>> = (0..topology.cables.len())
                .map(|j| (0..n).map(|k| rest[t + k + 1][j] - rest[t + k][j]).collect())
                .collect();
            let logged = traj.has_rest_lengths().then(|| {
                (0..n)
                    .map(|k| (0..topology.cables.len()).map(|j| target_dl[j][k]).collect())
                    .collect()
            });
            TrainSample {
                t,
                inputs: GraphInputs {
                    positions: positions[t].clone(),
                    velocities: velocity[t].clone(),
                    rest_lengths: rest[t].clone(),
                    controls_window: controls_window(&controls, t, h, n, topology.num_actuated()),
                    dataset_id: traj.header.dataset_id,
                },
                logged_rest_deltas: logged,
                target_dv,
                target_dl,
            }
        })
        .collect();
    (samples, None)
}

/// Weighted squared error averaged over endcap and cable instances.
pub fn loss(preds: &[&PredictionBlock], targets: &[&TrainSample], w1: f64, w2: f64) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape("one target per prediction required".into()));
    }
    let (mut sv, mut sl, mut nodes, mut cables) = (0.0, 0.0, 0usize, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        if p.delta_v.len() != t.target_dv.len() || p.delta_rest.len() != t.target_dl.len() {
            return Err(Error::Shape("prediction and target sizes differ".into()));
        }
        for (a, b) in p.delta_v.iter().zip(&t.target_dv) {
            if a.len() != b.len() {
                return Err(Error::Shape("prediction and target steps differ".into()));
            }
            for (x, y) in a.iter().zip(b) {
                sv += (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>();
            }
        }
        for (a, b) in p.delta_rest.iter().zip(&t.target_dl) {
            if a.len() != b.len() {
                return Err(Error::Shape("prediction and target steps differ".into()));
            }
            sl += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        }
        nodes += t.target_dv.len();
        cables += t.target_dl.len();
    }
    let mut total = 0.0;
    if w1 != 0.0 && nodes > 0 {
        total += w1 * sv / nodes as f64;
    }
    if w2 != 0.0 && cables > 0 {
        total += w2 * sl / cables as f64;
    }
    Ok(total)
}

/// Gaussian perturbation of input velocities during training. With
/// `correct_targets` the first predicted velocity change absorbs the
/// perturbation, so the model learns to undo velocity error.
pub struct InputNoise<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub sigma: f64,
    pub correct_targets: bool,
}

/// Copy of `sample` with Gaussian noise on the input velocities. With
/// `correct_targets` the first velocity delta absorbs the noise so that
/// noisy velocity plus target still reaches the true next velocity.
pub fn perturb_sample(sample: &TrainSample, rng: &mut ChaCha8Rng, sigma: f64, correct_targets: bool) -> TrainSample {
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut noisy = sample.clone();
    for (i, v) in noisy.inputs.velocities.iter_mut().enumerate() {
        for k in 0..3 {
            let e = normal.sample(rng);
            v[k] += e;
            if correct_targets {
                noisy.target_dv[i][0][k] -= e;
            }
        }
    }
    noisy
}

/// Recorded tape loss of one batch of sequences: graphs at the same sequence
/// position are batched and the recurrent state is threaded from zeros.
pub fn batch_loss(
    model: &Model,
    topology: &RobotTopology,
    items: &[&TrainItem],
    w1: f64,
    w2: f64,
    mut noise: Option<InputNoise<'_>>,
    tape: &mut Tape,
) -> Result<Var> {
    let len = items
        .first()
        .map(|i| i.samples.len())
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    if items.iter().any(|i| i.samples.len() != len) {
        return Err(Error::Shape("sequences in a batch must share a length".into()));
    }
    let mut state: Option<(Var, Var)> = None;
    let mut total: Option<Var> = None;
    for pos in 0..len {
        let mut graphs = Vec::with_capacity(items.len());
        let mut noisy_samples = Vec::new();
        for item in items {
            let s = &item.samples[pos];
            let g = match noise.as_mut() {
                Some(InputNoise { rng, sigma, correct_targets }) if *sigma > 0.0 => {
                    let noisy = perturb_sample(s, rng, *sigma, *correct_targets);
                    let g = noisy.graph(model, topology)?;
                    noisy_samples.push(noisy);
                    g
                }
                _ => s.graph(model, topology)?,
            };
            graphs.push(g);
        }
        let sample_at = |j: usize| noisy_samples.get(j).unwrap_or(&items[j].samples[pos]);
        let refs: Vec<_> = graphs.iter().collect();
        let batch = GraphBatch::new(&refs)?;
        let (h, c) = match state {
            Some(hc) => hc,
            None => {
                let zeros = RecurrentState::zeros(batch.num_nodes(), model.latent_width());
                (tape.constant(zeros.h), tape.constant(zeros.c))
            }
        };
        let (dec, h, c) = model.forward(tape, &batch, h, c)?;
        state = Some((h, c));
        let mut terms = Vec::new();
        if w1 != 0.0 {
            let rows: Vec<Vec<f64>> = (0..items.len()).flat_map(|j| sample_at(j).dv_rows()).collect();
            let target = tape.constant(to_array(&rows, 3 * model.n())?);
            let diff = tape.sub(dec.delta_v, target);
            let sq = tape.sum_squares(diff);
            terms.push(tape.scale(sq, w1 / rows.len() as f64));
        }
        if w2 != 0.0 {
            let rows: Vec<Vec<f64>> = items
                .iter()
                .flat_map(|i| i.samples[pos].target_dl.iter().cloned())
                .collect();
            let target = tape.constant(to_array(&rows, model.n())?);
            let diff = tape.sub(dec.delta_rest, target);
            let sq = tape.sum_squares(diff);
            terms.push(tape.scale(sq, w2 / rows.len() as f64));
        }
        for t in terms {
            total = Some(match total {
                None => t,
                Some(acc) => tape.add(acc, t),
            });
        }
    }
    let total = total.expect("at least one loss term");
    Ok(tape.scale(total, 1.0 / len as f64))
}

fn to_array(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape(format!("target rows must have width {width}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::Shape(e.to_string()))
}

/// A run of samples `n` frames apart whose loss is taken with a threaded
/// recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub samples: Vec<TrainSample>,
    /// Index of the source trajectory.
    pub group: usize,
}

/// Sequences of `seq_len` samples at stride `n` ending at every valid frame.
pub fn build_items(
    trajectories: &[Trajectory],
    topology: &RobotTopology,
    h: usize,
    n: usize,
    seq_len: usize,
) -> (Vec<TrainItem>, Vec<String>) {
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for (group, traj) in trajectories.iter().enumerate() {
        let (samples, warn) = build_targets(traj, topology, h, n);
        if let Some(w) = warn {
            warnings.push(format!("trajectory {group}: {w}"));
        }
        let span = (seq_len - 1) * n;
        for end in span..samples.len() {
            items.push(TrainItem {
                samples: (0..seq_len).map(|j| samples[end - span + j * n].clone()).collect(),
                group,
            });
        }
    }
    (items, warnings)
}

/// Pooled trajectories with dataset ids assigned and a seeded interleaving.
#[derive(Debug, Clone, PartialEq)]
pub struct CotrainPool {
    pub trajectories: Vec<Trajectory>,
    pub num_datasets: usize,
}

pub fn make_cotrain_pool(
    sim_datasets: Vec<Dataset>,
    real_dataset: Option<Dataset>,
    seed: u64,
) -> Result<CotrainPool> {
    let num_sim = sim_datasets.len();
    let mut trajectories = Vec::new();
    for (id, ds) in sim_datasets.into_iter().enumerate() {
        trajectories.extend(ds.trajectories.into_iter().map(|mut t| {
            t.header.dataset_id = id;
            t
        }));
    }
    let has_real = real_dataset.is_some();
    if let Some(real) = real_dataset {
        trajectories.extend(real.trajectories.into_iter().map(|mut t| {
            t.header.dataset_id = num_sim;
            t
        }));
    }
    if trajectories.is_empty() {
        return Err(Error::EmptyPool("no trajectories in any dataset".into()));
    }
    trajectories.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(CotrainPool {
        trajectories,
        num_datasets: num_sim + usize::from(has_real),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub num_train_items: usize,
    pub num_val_items: usize,
    pub optimizer_steps: usize,
    pub warnings: Vec<String>,
    /// Seconds spent in the epoch loop; kept out of the serialised report.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
        }
        out
    }
}

/// Fits the feature normaliser and output scale from training items.
pub fn fit_statistics(model: &mut Model, topology: &RobotTopology, items: &[TrainItem]) -> Result<()> {
    let mut norm = FeatureNormalizer::new(&model.graph);
    let n = model.n();
    let mut v = vec![crate::graphgen::RunningStats::new(3 * n)];
    let mut l = vec![crate::graphgen::RunningStats::new(n)];
    for item in items {
        let s = item.samples.last().expect("non-empty sequence");
        let mut g = build_graph_raw(&s.inputs, topology, &model.graph)?;
        g.logged_rest_deltas = None;
        norm.accumulate(&g);
        let dv: Vec<Vec<f64>> = s.dv_rows().collect();
        v[0].push_rows(&to_array(&dv, 3 * n)?);
        let actuated: Vec<Vec<f64>> = s
            .target_dl
            .iter()
            .zip(&topology.cables)
            .filter(|(_, c)| c.actuated)
            .map(|(d, _)| d.clone())
            .collect();
        if !actuated.is_empty() {
            l[0].push_rows(&to_array(&actuated, n)?);
        }
    }
    model.graph.normalizer = Some(norm);
    model.output_scale.velocity = v[0].std();
    model.output_scale.rest = l[0].std();
    Ok(())
}

/// Mean loss over `items` in batches, without noise.
pub fn evaluate_loss(
    model: &Model,
    topology: &RobotTopology,
    items: &[TrainItem],
    config: &TrainConfig,
) -> Result<f64> {
    if items.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for chunk in items.chunks(config.batch_size) {
        let refs: Vec<_> = chunk.iter().collect();
        let mut tape = Tape::new();
        let l = batch_loss(model, topology, &refs, config.w1, config.w2, None, &mut tape)?;
        sum += tape.scalar(l) * chunk.len() as f64;
    }
    Ok(sum / items.len() as f64)
}

/// Mini-batch training from `start_epoch`; keeps the parameters of the epoch
/// with the lowest validation loss (training loss when there is no validation set).
pub fn train_items(
    model: &mut Model,
    topology: &RobotTopology,
    train: &[TrainItem],
    val: &[TrainItem],
    config: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyPool("no training samples".into()));
    }
    if model.graph.normalizer.is_none() {
        fit_statistics(model, topology, train)?;
    }
    let started = std::time::Instant::now();
    let mut adam = Adam::new(config.optimizer.clone(), &model.params);
    adam.learning_rate = config.optimizer.learning_rate * config.optimizer.decay_rate.powi(start_epoch as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: start_epoch,
        best_val_loss: f64::INFINITY,
        num_train_items: train.len(),
        num_val_items: val.len(),
        optimizer_steps: 0,
        warnings: Vec::new(),
        wall_time_s: 0.0,
    };
    for epoch in start_epoch..start_epoch + config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let items: Vec<_> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let noise = (config.input_noise_sigma > 0.0).then_some(InputNoise {
                rng: &mut rng,
                sigma: config.input_noise_sigma,
                correct_targets: config.noise_corrects_targets,
            });
            let l = batch_loss(model, topology, &items, config.w1, config.w2, noise, &mut tape)?;
            let value = tape.scalar(l);
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            tape.backward(l, &mut model.params)?;
            adam.step(&mut model.params).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::TrainingDiverged { epoch, batch: b },
                other => other,
            })?;
            report.optimizer_steps += 1;
            sum += value * chunk.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = evaluate_loss(model, topology, val, config)?;
        let score = if val.is_empty() { train_loss } else { val_loss };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.params.clone()));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: adam.learning_rate,
        };
        on_epoch(&record);
        report.epochs.push(record);
        adam.end_epoch();
    }
    if let Some((score, epoch, params)) = best {
        model.params = params;
        report.best_epoch = epoch;
        report.best_val_loss = score;
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Splits a pool by trajectory and trains on it.
pub fn train_epochs(
    pool: &CotrainPool,
    model: &mut Model,
    topology: &RobotTopology,
    config: &TrainConfig,
    start_epoch: usize,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if pool.num_datasets != model.graph.num_datasets {
        return Err(Error::InvalidParameter(format!(
            "pool has {} datasets, model one-hot width is {}",
            pool.num_datasets, model.graph.num_datasets
        )));
    }
    let (train, val, warnings) = split_items(pool, model, topology, config)?;
    let mut report = train_items(model, topology, &train, &val, config, start_epoch, on_epoch)?;
    report.warnings = warnings;
    Ok(report)
}

/// Training and validation items; the last `validation_fraction` of the
/// pooled trajectories (at least one when there are two or more) validate.
pub fn split_items(
    pool: &CotrainPool,
    model: &Model,
    topology: &RobotTopology,
    config: &TrainConfig,
) -> Result<(Vec<TrainItem>, Vec<TrainItem>, Vec<String>)> {
    let total = pool.trajectories.len();
    let mut n_val = (config.validation_fraction * total as f64).round() as usize;
    if config.validation_fraction > 0.0 && total >= 2 {
        n_val = n_val.max(1);
    }
    n_val = n_val.min(total.saturating_sub(1));
    let seq_len = sequence_length(model, config);
    let (train_t, val_t) = pool.trajectories.split_at(total - n_val);
    let (train, mut warnings) = build_items(train_t, topology, model.graph.h, model.n(), seq_len);
    let (val, w2) = build_items(val_t, topology, model.graph.h, model.n(), seq_len);
    warnings.extend(w2);
    Ok((train, val, warnings))
}

/// Graphs per training sequence: never fewer than the warm-up graphs plus one.
pub fn sequence_length(model: &Model, config: &TrainConfig) -> usize {
    if model.config.use_recurrence {
        config.sequence_graphs.max(model.config.warmup_graphs + 1)
    } else {
        1
    }
}
