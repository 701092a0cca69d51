//! Multi-step integration of predicted deltas, learned rollouts and the
//! [`Simulator`] abstraction shared by evaluation and MPPI.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gnn::{Model, PredictionBlock, RecurrentState};
use crate::graphgen::{build_graph_from_inputs, GraphInputs, GraphSnapshot};
use crate::refsim::{self, motor_deltas, FullState, SimParams};
use crate::topology::RobotTopology;
use crate::trajectory::Trajectory;

pub const REST_LENGTH_FLOOR: f64 = 1e-6;
pub const VELOCITY_LIMIT: f64 = 1e3;

/// Kinematic node state advanced by the learned model. The ground node is
/// stored last and never moves.
#[derive(Debug, Clone, PartialEq)]
pub struct SimNodeState {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub rest_lengths: Vec<f64>,
    pub time: f64,
    pub dt: f64,
}

impl SimNodeState {
    pub fn num_endcaps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn endcaps(&self) -> Vec<Vector3<f64>> {
        self.positions[..self.num_endcaps()].to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().chain(&self.velocities).all(|v| v.iter().all(|x| x.is_finite()))
            && self.rest_lengths.iter().all(|x| x.is_finite())
    }
}

/// States after each of the `n` integration steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistepOutput {
    pub states: Vec<SimNodeState>,
    /// Set when a rest length hit the floor.
    pub clamped: bool,
}

/// Symplectic Euler over the `n` predicted steps: velocity first, then
/// position with the new velocity, then rest length.
pub fn integrate_multistep(state: &SimNodeState, pred: &PredictionBlock) -> Result<MultistepOutput> {
    let endcaps = state.num_endcaps();
    if pred.delta_v.len() != endcaps || pred.delta_rest.len() != state.rest_lengths.len() {
        return Err(Error::Shape(format!(
            "prediction covers {} endcaps and {} cables, state has {} and {}",
            pred.delta_v.len(),
            pred.delta_rest.len(),
            endcaps,
            state.rest_lengths.len()
        )));
    }
    if !state.is_finite() || !pred.is_finite() {
        return Err(Error::State("non-finite integration input".into()));
    }
    let n = pred.steps();
    if pred.delta_v.iter().any(|d| d.len() != n) || pred.delta_rest.iter().any(|d| d.len() != n) {
        return Err(Error::Shape("ragged prediction block".into()));
    }
    let mut cur = state.clone();
    let mut states = Vec::with_capacity(n);
    let mut clamped = false;
    let ground = endcaps;
    for k in 0..n {
        for i in 0..endcaps {
            cur.velocities[i] += Vector3::from(pred.delta_v[i][k]);
            let v = cur.velocities[i];
            cur.positions[i] += v * cur.dt;
        }
        cur.velocities[ground] = Vector3::zeros();
        cur.positions[ground] = state.positions[ground];
        for (l, d) in cur.rest_lengths.iter_mut().zip(&pred.delta_rest) {
            *l += d[k];
            if *l < REST_LENGTH_FLOOR {
                *l = REST_LENGTH_FLOOR;
                clamped = true;
            }
        }
        cur.time = state.time + (k + 1) as f64 * state.dt;
        states.push(cur.clone());
    }
    Ok(MultistepOutput { states, clamped })
}

/// Per-frame rest lengths: logged values when every frame carries them,
/// otherwise the open-loop motor estimate from the topology's initial lengths.
pub fn rest_length_estimates(traj: &Trajectory, topology: &RobotTopology) -> Vec<Vec<f64>> {
    if traj.has_rest_lengths() {
        return traj
            .frames
            .iter()
            .map(|f| f.rest_lengths.clone().expect("checked"))
            .collect();
    }
    let controls = traj.controls();
    let initial = topology.initial_rest_lengths();
    let deltas = motor_deltas(&initial, &controls, topology, traj.header.sample_dt, 1);
    let mut out = Vec::with_capacity(traj.len());
    let mut cur = initial;
    out.push(cur.clone());
    for d in deltas.iter().take(traj.len().saturating_sub(1)) {
        for (l, x) in cur.iter_mut().zip(d) {
            *l += x;
        }
        out.push(cur.clone());
    }
    out
}

/// Control rows `t-h .. t+n`, zero-padded outside `controls`.
pub fn controls_window(controls: &[Vec<f64>], t: usize, h: usize, n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..h + n)
        .map(|k| {
            (t + k)
                .checked_sub(h)
                .and_then(|i| controls.get(i))
                .cloned()
                .unwrap_or_else(|| vec![0.0; width])
        })
        .collect()
}

/// Backward-difference velocity of every endcap at frame `t` (zero at `t = 0`).
pub fn finite_difference_velocity(positions: &[Vec<Vector3<f64>>], t: usize, dt: f64) -> Vec<Vector3<f64>> {
    if t == 0 {
        return vec![Vector3::zeros(); positions[0].len()];
    }
    positions[t]
        .iter()
        .zip(&positions[t - 1])
        .map(|(a, b)| (a - b) / dt)
        .collect()
}

/// Logged per-step rest-length deltas for frames `t .. t+n`, if all exist.
pub fn logged_deltas(rest: Option<&[Vec<f64>]>, t: usize, n: usize) -> Option<Vec<Vec<f64>>> {
    let rest = rest?;
    if t + n >= rest.len() {
        return None;
    }
    Some(
        (0..n)
            .map(|k| rest[t + k + 1].iter().zip(&rest[t + k]).map(|(a, b)| a - b).collect())
            .collect(),
    )
}

/// Graph of frame `t` of a recorded trajectory.
pub fn trajectory_graph(
    model: &Model,
    topology: &RobotTopology,
    traj: &Trajectory,
    positions: &[Vec<Vector3<f64>>],
    rest: &[Vec<f64>],
    controls: &[Vec<f64>],
    t: usize,
) -> Result<GraphSnapshot> {
    let cfg = &model.graph;
    let inputs = GraphInputs {
        positions: positions[t].clone(),
        velocities: finite_difference_velocity(positions, t, traj.header.sample_dt),
        rest_lengths: rest[t].clone(),
        controls_window: controls_window(controls, t, cfg.h, cfg.n, topology.num_actuated()),
        dataset_id: traj.header.dataset_id,
    };
    let mut g = build_graph_from_inputs(&inputs, topology, cfg)?;
    let logged = traj.has_rest_lengths().then_some(rest);
    g.logged_rest_deltas = logged_deltas(logged, t, cfg.n);
    Ok(g)
}

/// Everything a learned rollout carries between model calls.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedState {
    pub sim: SimNodeState,
    pub recurrent: RecurrentState,
    /// The last `h` applied controls, oldest first.
    pub past_controls: Vec<Vec<f64>>,
    /// Logged rest lengths from the start frame onward, for logged-delta substitution.
    pub logged_rest: Option<Vec<Vec<f64>>>,
    /// Steps taken since the start frame.
    pub step: usize,
    pub dataset_id: usize,
}

impl LearnedState {
    fn graph(&self, model: &Model, topology: &RobotTopology, future: &[Vec<f64>]) -> Result<GraphSnapshot> {
        let cfg = &model.graph;
        let width = topology.num_actuated();
        let mut window = self.past_controls.clone();
        for k in 0..cfg.n {
            window.push(future.get(k).cloned().unwrap_or_else(|| vec![0.0; width]));
        }
        let inputs = GraphInputs {
            positions: self.sim.endcaps(),
            velocities: self.sim.velocities[..self.sim.num_endcaps()].to_vec(),
            rest_lengths: self.sim.rest_lengths.clone(),
            controls_window: window,
            dataset_id: self.dataset_id,
        };
        let mut g = build_graph_from_inputs(&inputs, topology, cfg)?;
        g.logged_rest_deltas = logged_deltas(self.logged_rest.as_deref(), self.step, cfg.n);
        Ok(g)
    }

    fn push_controls(&mut self, applied: &[Vec<f64>], h: usize) {
        self.past_controls.extend(applied.iter().cloned());
        let excess = self.past_controls.len().saturating_sub(h);
        self.past_controls.drain(..excess);
    }
}

/// Initial learned state at frame `t` of a trajectory, with the recurrent state
/// warmed up by teacher-forcing the preceding graphs.
pub fn learned_state_from_trajectory(
    model: &Model,
    topology: &RobotTopology,
    traj: &Trajectory,
    t: usize,
) -> Result<LearnedState> {
    if t >= traj.len() {
        return Err(Error::InvalidWindow(format!("start frame {t} beyond trajectory of {}", traj.len())));
    }
    let positions = traj.positions();
    let rest = rest_length_estimates(traj, topology);
    let controls = traj.controls();
    let n = model.n();
    let mut recurrent = model.fresh_state(topology.num_nodes);
    if model.config.use_recurrence {
        for k in (1..=model.config.warmup_graphs).rev() {
            let Some(tw) = t.checked_sub(k * n) else { continue };
            let g = trajectory_graph(model, topology, traj, &positions, &rest, &controls, tw)?;
            recurrent = model.predict(&g, &recurrent)?.1;
        }
    }
    let dt = traj.header.sample_dt;
    let mut pos = positions[t].clone();
    pos.push(Vector3::zeros());
    let mut vel = finite_difference_velocity(&positions, t, dt);
    vel.push(Vector3::zeros());
    let h = model.graph.h;
    let past_controls = controls_window(&controls, t, h, 0, topology.num_actuated());
    Ok(LearnedState {
        sim: SimNodeState {
            positions: pos,
            velocities: vel,
            rest_lengths: rest[t].clone(),
            time: traj.frames[t].time,
            dt,
        },
        recurrent,
        past_controls,
        logged_rest: traj.has_rest_lengths().then(|| rest[t..].to_vec()),
        step: 0,
        dataset_id: traj.header.dataset_id,
    })
}

/// One model call for each state, batched; each state consumes up to `n`
/// controls from its chunk and returns the node states after every step.
pub fn step_chunk_many(
    model: &Model,
    topology: &RobotTopology,
    states: &mut [&mut LearnedState],
    chunks: &[&[Vec<f64>]],
) -> Vec<Result<Vec<SimNodeState>>> {
    let graphs: Vec<Result<GraphSnapshot>> = states
        .iter()
        .zip(chunks)
        .map(|(s, c)| s.graph(model, topology, c))
        .collect();
    let ok: Vec<usize> = (0..states.len()).filter(|&i| graphs[i].is_ok()).collect();
    let refs: Vec<&GraphSnapshot> = ok.iter().map(|&i| graphs[i].as_ref().expect("ok")).collect();
    let recs: Vec<&RecurrentState> = ok.iter().map(|&i| &states[i].recurrent).collect();
    let mut preds = if refs.is_empty() {
        Vec::new()
    } else {
        match model.predict_many(&refs, &recs) {
            Ok(p) => p,
            Err(e) => {
                let msg = e.to_string();
                return (0..states.len()).map(|_| Err(Error::State(msg.clone()))).collect();
            }
        }
    }
    .into_iter();
    let mut out = Vec::with_capacity(states.len());
    for (i, graph) in graphs.into_iter().enumerate() {
        if let Err(e) = graph {
            out.push(Err(e));
            continue;
        }
        let (pred, rec) = preds.next().expect("one prediction per graph");
        let state = &mut *states[i];
        let take = chunks[i].len().min(model.n());
        let result = integrate_multistep(&state.sim, &pred).and_then(|o| {
            let steps: Vec<_> = o.states.into_iter().take(take).collect();
            for (k, s) in steps.iter().enumerate() {
                if s.velocities.iter().any(|v| !(v.norm() <= VELOCITY_LIMIT)) {
                    return Err(Error::Diverged { step: state.step + k + 1 });
                }
            }
            Ok(steps)
        });
        if let Ok(steps) = &result {
            if let Some(last) = steps.last() {
                state.sim = last.clone();
            }
            state.recurrent = rec;
            state.step += take;
            state.push_controls(&chunks[i][..take], model.graph.h);
        }
        out.push(result);
    }
    out
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    /// Initial state followed by one state per control.
    pub states: Vec<SimNodeState>,
    pub model_calls: usize,
    pub final_state: LearnedState,
}

/// Autoregressive rollout: one graph build and model call per `n` steps.
pub fn rollout_model(
    model: &Model,
    topology: &RobotTopology,
    start: &LearnedState,
    controls: &[Vec<f64>],
) -> Result<RolloutOutput> {
    let mut state = start.clone();
    let mut states = vec![state.sim.clone()];
    let mut calls = 0;
    for chunk in controls.chunks(model.n()) {
        let mut res = step_chunk_many(model, topology, &mut [&mut state], &[chunk]);
        calls += 1;
        states.extend(res.remove(0)?);
    }
    Ok(RolloutOutput {
        states,
        model_calls: calls,
        final_state: state,
    })
}

/// Endcap positions after each step.
pub type EndcapFrames = Vec<Vec<Vector3<f64>>>;

/// A transition model usable by evaluation and MPPI.
pub trait Simulator: Sync {
    type State: Clone + Send + Sync;

    /// Steps per control chunk.
    fn chunk_len(&self) -> usize;

    fn state_from_trajectory(&self, traj: &Trajectory, t: usize) -> Result<Self::State>;

    fn endcaps(&self, state: &Self::State) -> Vec<Vector3<f64>>;

    /// Applies `controls` one per step and returns the endcaps after each step.
    fn advance(&self, state: &mut Self::State, controls: &[Vec<f64>]) -> Result<EndcapFrames>;

    /// Independent advances of several states.
    fn advance_many(
        &self,
        states: &mut [Self::State],
        controls: &[&[Vec<f64>]],
        parallel: bool,
    ) -> Vec<Result<EndcapFrames>> {
        if parallel {
            states
                .par_iter_mut()
                .zip(controls.par_iter())
                .map(|(s, c)| self.advance(s, c))
                .collect()
        } else {
            states
                .iter_mut()
                .zip(controls)
                .map(|(s, c)| self.advance(s, c))
                .collect()
        }
    }
}

/// The analytical reference simulator as a transition model.
#[derive(Debug, Clone)]
pub struct OracleSimulator<'a> {
    pub topology: &'a RobotTopology,
    pub params: SimParams,
    pub chunk: usize,
}

impl Simulator for OracleSimulator<'_> {
    type State = FullState;

    fn chunk_len(&self) -> usize {
        self.chunk
    }

    fn state_from_trajectory(&self, traj: &Trajectory, t: usize) -> Result<FullState> {
        traj.frames
            .get(t)
            .and_then(|f| f.state())
            .ok_or_else(|| Error::State(format!("frame {t} carries no full oracle state")))
    }

    fn endcaps(&self, state: &FullState) -> Vec<Vector3<f64>> {
        refsim::endcap_positions(state, self.topology)
    }

    fn advance(&self, state: &mut FullState, controls: &[Vec<f64>]) -> Result<EndcapFrames> {
        let start = state.time;
        controls
            .iter()
            .enumerate()
            .map(|(i, u)| {
                refsim::advance_frame(state, u, self.topology, &self.params)?;
                state.time = start + (i + 1) as f64 * self.params.sample_dt;
                Ok(refsim::endcap_positions(state, self.topology))
            })
            .collect()
    }
}

/// The learned model as a transition model; counts model calls.
#[derive(Debug)]
pub struct LearnedSimulator<'a> {
    pub model: &'a Model,
    pub topology: &'a RobotTopology,
    pub calls: std::sync::atomic::AtomicUsize,
}

impl<'a> LearnedSimulator<'a> {
    pub fn new(model: &'a Model, topology: &'a RobotTopology) -> Self {
        Self {
            model,
            topology,
            calls: Default::default(),
        }
    }

    pub fn model_calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::Relaxed)
    }
}

impl Simulator for LearnedSimulator<'_> {
    type State = LearnedState;

    fn chunk_len(&self) -> usize {
        self.model.n()
    }

    fn state_from_trajectory(&self, traj: &Trajectory, t: usize) -> Result<LearnedState> {
        learned_state_from_trajectory(self.model, self.topology, traj, t)
    }

    fn endcaps(&self, state: &LearnedState) -> Vec<Vector3<f64>> {
        state.sim.endcaps()
    }

    fn advance(&self, state: &mut LearnedState, controls: &[Vec<f64>]) -> Result<EndcapFrames> {
        self.advance_many(std::slice::from_mut(state), &[controls], false)
            .remove(0)
    }

    /// Batches all live states into one model call per chunk.
    fn advance_many(
        &self,
        states: &mut [LearnedState],
        controls: &[&[Vec<f64>]],
        _parallel: bool,
    ) -> Vec<Result<EndcapFrames>> {
        let n = self.model.n();
        let mut results: Vec<Result<EndcapFrames>> = states.iter().map(|_| Ok(Vec::new())).collect();
        let longest = controls.iter().map(|c| c.len()).max().unwrap_or(0);
        let mut offset = 0;
        while offset < longest {
            let live: Vec<usize> = (0..states.len())
                .filter(|&i| results[i].is_ok() && controls[i].len() > offset)
                .collect();
            let chunks: Vec<&[Vec<f64>]> = live
                .iter()
                .map(|&i| &controls[i][offset..(offset + n).min(controls[i].len())])
                .collect();
            let mut refs: Vec<&mut LearnedState> = Vec::with_capacity(live.len());
            let mut rest: &mut [LearnedState] = &mut *states;
            let mut base = 0;
            for &i in &live {
                let (_, tail) = rest.split_at_mut(i - base);
                let (head, tail) = tail.split_at_mut(1);
                refs.push(&mut head[0]);
                rest = tail;
                base = i + 1;
            }
            self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let outs = step_chunk_many(self.model, self.topology, &mut refs, &chunks);
            for (&i, out) in live.iter().zip(outs) {
                match out {
                    Ok(steps) => {
                        if let Ok(frames) = &mut results[i] {
                            frames.extend(steps.iter().map(SimNodeState::endcaps));
                        }
                    }
                    Err(e) => results[i] = Err(e),
                }
            }
            offset += n;
        }
        results
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(n_endcaps: usize, v: Vector3<f64>, dt: f64) -> SimNodeState {
        SimNodeState {
            positions: vec![Vector3::zeros(); n_endcaps + 1],
            velocities: (0..=n_endcaps)
                .map(|i| if i < n_endcaps { v } else { Vector3::zeros() })
                .collect(),
            rest_lengths: vec![0.5; 2],
            time: 0.0,
            dt,
        }
    }

    fn block(n_endcaps: usize, n: usize, dv: [f64; 3], dl: f64) -> PredictionBlock {
        PredictionBlock {
            delta_v: vec![vec![dv; n]; n_endcaps],
            delta_rest: vec![vec![dl; n]; 2],
        }
    }

    #[test]
    fn constant_velocity() {
        let s = state(2, Vector3::new(1.0, 0.0, 0.0), 0.1);
        let out = integrate_multistep(&s, &block(2, 3, [0.0; 3], 0.0)).unwrap();
        assert_eq!(out.states.len(), 3);
        let p = out.states[2].positions[0];
        assert!((p - Vector3::new(0.3, 0.0, 0.0)).norm() < 1e-12);
        assert!((out.states[2].time - 0.3).abs() < 1e-12);
    }

    #[test]
    fn constant_acceleration_recursion() {
        let s = state(1, Vector3::zeros(), 1.0);
        let out = integrate_multistep(&s, &block(1, 3, [0.1, 0.0, 0.0], 0.0)).unwrap();
        let last = &out.states[2];
        assert!((last.velocities[0].x - 0.3).abs() < 1e-12);
        assert!((last.positions[0].x - 0.6).abs() < 1e-12);
        assert_eq!(last.positions[1], Vector3::zeros());
        assert_eq!(last.velocities[1], Vector3::zeros());
    }

    #[test]
    fn rest_length_clamp() {
        let s = state(1, Vector3::zeros(), 0.01);
        let out = integrate_multistep(&s, &block(1, 2, [0.0; 3], -0.4)).unwrap();
        assert!(out.clamped);
        assert_eq!(out.states[1].rest_lengths[0], REST_LENGTH_FLOOR);
        let ok = integrate_multistep(&s, &block(1, 2, [0.0; 3], -0.1)).unwrap();
        assert!(!ok.clamped);
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let s = state(2, Vector3::zeros(), 0.01);
        assert!(matches!(integrate_multistep(&s, &block(3, 2, [0.0; 3], 0.0)), Err(Error::Shape(_))));
        let mut bad = s.clone();
        bad.positions[0].x = f64::NAN;
        assert!(integrate_multistep(&bad, &block(2, 2, [0.0; 3], 0.0)).is_err());
    }

    #[test]
    fn controls_window_padding() {
        let c: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let w = controls_window(&c, 1, 3, 2, 1);
        assert_eq!(w, vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0], vec![2.0]]);
        let w = controls_window(&c, 4, 1, 3, 1);
        assert_eq!(w, vec![vec![3.0], vec![4.0], vec![0.0], vec![0.0]]);
    }
}
