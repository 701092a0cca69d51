//! Position and orientation error metrics and the full-trajectory and
//! short-horizon evaluation protocols.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Simulator;
use crate::topology::RobotTopology;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Short-horizon segments per trajectory.
    pub n_sh: usize,
    /// Short-horizon length in steps.
    pub t_sh: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_sh: 10,
            t_sh: 100,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sh == 0 || self.t_sh == 0 {
            return Err(Error::InvalidParameter("n_sh and t_sh must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_lengths<T>(gt: &[Vec<T>], pred: &[Vec<T>]) -> Result<usize> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} steps", gt.len(), pred.len())));
    }
    let mut count = 0;
    for (t, (a, b)) in gt.iter().zip(pred).enumerate() {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch(format!("step {t}: {} vs {} rods", a.len(), b.len())));
        }
        count += a.len();
    }
    if count == 0 {
        return Err(Error::LengthMismatch("no (rod, step) pairs".into()));
    }
    Ok(count)
}

/// Mean squared CoM distance over all (rod, step) pairs, divided by the rod
/// length and expressed in percent. Inputs are indexed `[step][rod]`.
pub fn e_pos(gt: &[Vec<Vector3<f64>>], pred: &[Vec<Vector3<f64>>], rod_length: f64) -> Result<f64> {
    if !(rod_length > 0.0) {
        return Err(Error::InvalidParameter("rod length must be > 0".into()));
    }
    let count = check_lengths(gt, pred)?;
    let sum: f64 = gt
        .iter()
        .zip(pred)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()))
        .sum();
    Ok(sum / (rod_length * count as f64) * 100.0)
}

/// Angle between two axes in degrees, in `[0, 180]`.
pub fn axis_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateAxis(format!("{a:?} vs {b:?}")));
    }
    let (ua, ub) = (a / na, b / nb);
    Ok(ua.cross(&ub).norm().atan2(ua.dot(&ub).clamp(-1.0, 1.0)).to_degrees())
}

/// Mean angle between rod axes over all (rod, step) pairs, in degrees.
pub fn e_rot(gt: &[Vec<Vector3<f64>>], pred: &[Vec<Vector3<f64>>]) -> Result<f64> {
    let count = check_lengths(gt, pred)?;
    let mut sum = 0.0;
    for (a, b) in gt.iter().zip(pred) {
        for (p, q) in a.iter().zip(b) {
            sum += axis_angle_deg(p, q)?;
        }
    }
    Ok(sum / count as f64)
}

/// Rod centres (endcap midpoints) in rod order.
pub fn rod_centres(endcaps: &[Vector3<f64>], topology: &RobotTopology) -> Vec<Vector3<f64>> {
    topology
        .rods
        .iter()
        .map(|r| (endcaps[r.endcap_indices[0]] + endcaps[r.endcap_indices[1]]) * 0.5)
        .collect()
}

/// Rod axes from the first to the second endcap, in rod order.
pub fn rod_axes(endcaps: &[Vector3<f64>], topology: &RobotTopology) -> Vec<Vector3<f64>> {
    topology
        .rods
        .iter()
        .map(|r| endcaps[r.endcap_indices[1]] - endcaps[r.endcap_indices[0]])
        .collect()
}

/// Errors of one predicted segment against ground truth.
pub fn segment_errors(
    gt: &[Vec<Vector3<f64>>],
    pred: &[Vec<Vector3<f64>>],
    topology: &RobotTopology,
) -> Result<(f64, f64)> {
    let centres = |f: &[Vec<Vector3<f64>>]| f.iter().map(|e| rod_centres(e, topology)).collect::<Vec<_>>();
    let axes = |f: &[Vec<Vector3<f64>>]| f.iter().map(|e| rod_axes(e, topology)).collect::<Vec<_>>();
    Ok((
        e_pos(&centres(gt), &centres(pred), topology.mean_rod_length())?,
        e_rot(&axes(gt), &axes(pred))?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub trajectory: usize,
    pub start: usize,
    pub steps: usize,
    pub diverged: bool,
    pub e_pos: Option<f64>,
    pub e_rot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub e_pos_mean: Option<f64>,
    pub e_pos_std: Option<f64>,
    pub e_rot_mean: Option<f64>,
    pub e_rot_std: Option<f64>,
    pub num_segments: usize,
    pub num_evaluated: usize,
    pub num_diverged: usize,
    /// Total (rod, step) pairs over evaluated segments.
    pub num_samples: usize,
    pub rows: Vec<SegmentRow>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (Some(m), Some(v.sqrt()))
}

impl MetricSummary {
    pub fn from_rows(rows: Vec<SegmentRow>, rods: usize) -> Self {
        let ok: Vec<&SegmentRow> = rows.iter().filter(|r| !r.diverged).collect();
        let pos: Vec<f64> = ok.iter().filter_map(|r| r.e_pos).collect();
        let rot: Vec<f64> = ok.iter().filter_map(|r| r.e_rot).collect();
        let (e_pos_mean, e_pos_std) = mean_std(&pos);
        let (e_rot_mean, e_rot_std) = mean_std(&rot);
        Self {
            e_pos_mean,
            e_pos_std,
            e_rot_mean,
            e_rot_std,
            num_segments: rows.len(),
            num_evaluated: ok.len(),
            num_diverged: rows.len() - ok.len(),
            num_samples: ok.iter().map(|r| r.steps * rods).sum(),
            rows,
        }
    }
}

/// A segment to evaluate: trajectory index, start frame and step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub trajectory: usize,
    pub start: usize,
    pub steps: usize,
}

/// Rolls every segment out from its ground-truth start state with the logged
/// controls and scores it against the logged endcaps.
pub fn evaluate_segments<S: Simulator>(
    sim: &S,
    topology: &RobotTopology,
    trajectories: &[Trajectory],
    segments: &[Segment],
    parallel: bool,
) -> Result<Vec<SegmentRow>> {
    let mut states = Vec::with_capacity(segments.len());
    let mut controls = Vec::with_capacity(segments.len());
    for s in segments {
        let traj = trajectories
            .get(s.trajectory)
            .ok_or_else(|| Error::InvalidParameter(format!("no trajectory {}", s.trajectory)))?;
        if s.start + s.steps >= traj.len() {
            return Err(Error::InvalidWindow(format!(
                "segment {}..{} exceeds trajectory {} of {} frames",
                s.start,
                s.start + s.steps,
                s.trajectory,
                traj.len()
            )));
        }
        states.push(sim.state_from_trajectory(traj, s.start)?);
        controls.push(traj.frames[s.start..s.start + s.steps].iter().map(|f| f.controls.clone()).collect::<Vec<_>>());
    }
    let refs: Vec<&[Vec<f64>]> = controls.iter().map(Vec::as_slice).collect();
    let results = sim.advance_many(&mut states, &refs, parallel);
    segments
        .iter()
        .zip(results)
        .map(|(s, r)| {
            let row = |diverged, e: Option<(f64, f64)>| SegmentRow {
                trajectory: s.trajectory,
                start: s.start,
                steps: s.steps,
                diverged,
                e_pos: e.map(|e| e.0),
                e_rot: e.map(|e| e.1),
            };
            match r {
                Ok(pred) if pred.iter().flatten().all(|p| p.iter().all(|x| x.is_finite())) => {
                    let gt: Vec<Vec<Vector3<f64>>> = trajectories[s.trajectory].frames
                        [s.start + 1..=s.start + s.steps]
                        .iter()
                        .map(|f| f.endcap_positions())
                        .collect();
                    Ok(row(false, Some(segment_errors(&gt, &pred, topology)?)))
                }
                Ok(_) | Err(Error::Diverged { .. }) | Err(Error::NumericalBlowup { .. }) => Ok(row(true, None)),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Whole-trajectory rollouts from frame `history` to the end.
pub fn full_traj_eval<S: Simulator>(
    sim: &S,
    topology: &RobotTopology,
    trajectories: &[Trajectory],
    history: usize,
    parallel: bool,
) -> Result<MetricSummary> {
    let segments: Vec<Segment> = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.len() < history + 2 {
                return Err(Error::InvalidWindow(format!(
                    "trajectory {i} has {} frames, needs at least {}",
                    t.len(),
                    history + 2
                )));
            }
            Ok(Segment {
                trajectory: i,
                start: history,
                steps: t.len() - 1 - history,
            })
        })
        .collect::<Result<_>>()?;
    let rows = evaluate_segments(sim, topology, trajectories, &segments, parallel)?;
    Ok(MetricSummary::from_rows(rows, topology.rods.len()))
}

/// Seeded start frames in `[history, len - 1 - t_sh]`.
pub fn short_horizon_starts(len: usize, history: usize, t_sh: usize, n_sh: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let last = len
        .checked_sub(1 + t_sh)
        .filter(|&l| l >= history)
        .ok_or_else(|| {
            Error::InvalidWindow(format!(
                "trajectory of {len} frames is too short for a {t_sh}-step segment after {history} history frames"
            ))
        })?;
    Ok((0..n_sh).map(|_| rng.random_range(history..=last)).collect())
}

pub fn short_horizon_segments(
    trajectories: &[Trajectory],
    history: usize,
    config: &EvalConfig,
) -> Result<Vec<Segment>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        for start in short_horizon_starts(t.len(), history, config.t_sh, config.n_sh, &mut rng)? {
            out.push(Segment {
                trajectory: i,
                start,
                steps: config.t_sh,
            });
        }
    }
    Ok(out)
}

/// `n_sh` short rollouts per trajectory from ground-truth states.
pub fn short_horizon_eval<S: Simulator>(
    sim: &S,
    topology: &RobotTopology,
    trajectories: &[Trajectory],
    history: usize,
    config: &EvalConfig,
    parallel: bool,
) -> Result<MetricSummary> {
    let segments = short_horizon_segments(trajectories, history, config)?;
    let rows = evaluate_segments(sim, topology, trajectories, &segments, parallel)?;
    Ok(MetricSummary::from_rows(rows, topology.rods.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    /// Name of the evaluated test set.
    pub dataset: String,
    pub full: MetricSummary,
    pub short_horizon: MetricSummary,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "model,dataset,full_traj_pos_mean,full_traj_pos_std,full_traj_rot_mean,full_traj_rot_std,short_horizon_pos_mean,short_horizon_pos_std,short_horizon_rot_mean,short_horizon_rot_std,full_traj_diverged,short_horizon_diverged";

    pub fn csv_row(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.dataset,
            f(self.full.e_pos_mean),
            f(self.full.e_pos_std),
            f(self.full.e_rot_mean),
            f(self.full.e_rot_std),
            f(self.short_horizon.e_pos_mean),
            f(self.short_horizon.e_pos_std),
            f(self.short_horizon.e_rot_mean),
            f(self.short_horizon.e_rot_std),
            self.full.num_diverged,
            self.short_horizon.num_diverged
        )
    }

    pub fn csv(reports: &[MetricsReport]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}
