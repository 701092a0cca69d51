//! Initial poses and control programs used to generate oracle datasets.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::refsim::{self, ControlFrame, FullState, RodState, SimParams};
use crate::topology::{nominal_positions, RobotKind, RobotTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Gait,
    Random,
    Drop,
}

impl ScenarioKind {
    /// Round-robin assignment used by data generation.
    pub fn cycle(index: usize) -> Self {
        match index % 3 {
            0 => ScenarioKind::Gait,
            1 => ScenarioKind::Random,
            _ => ScenarioKind::Drop,
        }
    }
}

/// Nominal pose rotated by `yaw`, moved to `(x, y)` and lowered onto the ground.
pub fn placed_endcaps(
    kind: RobotKind,
    topology: &RobotTopology,
    yaw: f64,
    xy: [f64; 2],
) -> Vec<Vector3<f64>> {
    let rod_length = topology.mean_rod_length();
    let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    let mut pts: Vec<_> = nominal_positions(kind, rod_length)
        .into_iter()
        .map(|p| rot * p)
        .collect();
    let centre: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let min_z = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let radius = topology.rods[0].endcap_radius;
    for p in &mut pts {
        *p += Vector3::new(xy[0] - centre.x, xy[1] - centre.y, radius - min_z);
    }
    pts
}

/// A robot resting on the ground after `settle_time` seconds of passive simulation.
pub fn settled_state(
    kind: RobotKind,
    topology: &RobotTopology,
    params: &SimParams,
    yaw: f64,
    xy: [f64; 2],
    settle_time: f64,
) -> Result<FullState> {
    let pts = placed_endcaps(kind, topology, yaw, xy);
    let mut state = FullState::from_endcaps(topology, &pts, topology.initial_rest_lengths());
    let frames = (settle_time / params.sample_dt).round() as usize;
    let zero = vec![0.0; topology.num_actuated()];
    for _ in 0..frames {
        refsim::advance_frame(&mut state, &zero, topology, params)?;
    }
    state.time = 0.0;
    Ok(state)
}

/// A robot released in the air with a random attitude and velocity.
pub fn drop_state(kind: RobotKind, topology: &RobotTopology, rng: &mut impl Rng) -> FullState {
    let rod_length = topology.mean_rod_length();
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let rot = UnitQuaternion::from_scaled_axis(axis * 0.6);
    let mut pts: Vec<_> = nominal_positions(kind, rod_length)
        .into_iter()
        .map(|p| rot * p)
        .collect();
    let centre: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let min_z = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let lift = rng.random_range(0.05..0.3) * rod_length;
    let radius = topology.rods[0].endcap_radius;
    for p in &mut pts {
        *p += Vector3::new(-centre.x, -centre.y, radius + lift - min_z);
    }
    let mut state = FullState::from_endcaps(topology, &pts, topology.initial_rest_lengths());
    let v = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0);
    let w = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    for rod in &mut state.rods {
        *rod = RodState {
            velocity: v + w.cross(&(rod.position - centre)),
            angular_velocity: rod.orientation.inverse() * w,
            ..rod.clone()
        };
    }
    state
}

/// Periodic triplet retraction: cables are split into three groups by index
/// within each set of three, each group driven by a sinusoid phase-shifted by a
/// third of the period.
pub fn gait_controls(
    topology: &RobotTopology,
    steps: usize,
    sample_dt: f64,
    period: f64,
    phase: f64,
) -> Vec<ControlFrame> {
    let slots = topology.control_slots();
    (0..steps)
        .map(|i| {
            let t = i as f64 * sample_dt;
            let mut u = vec![0.0; topology.num_actuated()];
            for (c, slot) in slots.iter().enumerate() {
                if let Some(s) = slot {
                    let group = (c % 3) as f64;
                    let arg = 2.0 * std::f64::consts::PI * (t / period - group / 3.0) + phase;
                    u[*s] = arg.sin();
                }
            }
            ControlFrame { u, time: t }
        })
        .collect()
}

/// Piecewise-constant uniform random controls held for `hold` seconds.
pub fn random_controls(
    topology: &RobotTopology,
    steps: usize,
    sample_dt: f64,
    hold: f64,
    rng: &mut impl Rng,
) -> Vec<ControlFrame> {
    let hold_steps = ((hold / sample_dt).round() as usize).max(1);
    let m = topology.num_actuated();
    let mut current = vec![0.0; m];
    (0..steps)
        .map(|i| {
            if i % hold_steps == 0 {
                current = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
            }
            ControlFrame {
                u: current.clone(),
                time: i as f64 * sample_dt,
            }
        })
        .collect()
}

pub fn zero_controls(topology: &RobotTopology, steps: usize, sample_dt: f64) -> Vec<ControlFrame> {
    (0..steps)
        .map(|i| ControlFrame::zeros(topology.num_actuated(), i as f64 * sample_dt))
        .collect()
}

/// Initial state and control program for one generated trajectory.
pub fn scenario(
    kind: ScenarioKind,
    robot: RobotKind,
    topology: &RobotTopology,
    params: &SimParams,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<(FullState, Vec<ControlFrame>)> {
    let dt = params.sample_dt;
    Ok(match kind {
        ScenarioKind::Gait => {
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let state = settled_state(robot, topology, params, yaw, [0.0, 0.0], 1.0)?;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (state, gait_controls(topology, steps, dt, 2.0, phase))
        }
        ScenarioKind::Random => {
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let state = settled_state(robot, topology, params, yaw, [0.0, 0.0], 1.0)?;
            (state, random_controls(topology, steps, dt, 0.5, rng))
        }
        ScenarioKind::Drop => {
            let state = drop_state(robot, topology, rng);
            (state, zero_controls(topology, steps, dt))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_three_bar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn placed_robot_touches_ground() {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let pts = placed_endcaps(RobotKind::ThreeBar, &topo, 0.4, [1.0, 2.0]);
        let min_z = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert!((min_z - 0.02).abs() < 1e-12);
        let c: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / 6.0;
        assert!((c.x - 1.0).abs() < 1e-12 && (c.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn controls_bounded() {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in gait_controls(&topo, 300, 0.01, 2.0, 0.3)
            .into_iter()
            .chain(random_controls(&topo, 300, 0.01, 0.5, &mut rng))
        {
            assert_eq!(c.u.len(), 9);
            assert!(c.u.iter().all(|u| u.abs() <= 1.0));
        }
    }
}
