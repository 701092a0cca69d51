use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::topology::RobotTopology;

use super::{ControlFrame, FullState, SimParams};

/// World-frame endcap centres and velocities in node-id order.
#[derive(Debug, Clone)]
pub(crate) struct Kinematics {
    pub pos: Vec<Vector3<f64>>,
    pub vel: Vec<Vector3<f64>>,
}

pub(crate) fn kinematics(state: &FullState, topology: &RobotTopology) -> Kinematics {
    let n = topology.num_endcaps();
    let mut pos = vec![Vector3::zeros(); n];
    let mut vel = vec![Vector3::zeros(); n];
    for (rod, spec) in state.rods.iter().zip(&topology.rods) {
        let axis = rod.axis();
        let omega_world = rod.orientation * rod.angular_velocity;
        for (j, &node) in spec.endcap_indices.iter().enumerate() {
            let sign = if j == 0 { -0.5 } else { 0.5 };
            let r = axis * (sign * spec.length);
            pos[node] = rod.position + r;
            vel[node] = rod.velocity + omega_world.cross(&r);
        }
    }
    Kinematics { pos, vel }
}

/// Unilateral spring-damper forces on each endcap.
pub fn cable_forces(state: &FullState, topology: &RobotTopology) -> Result<Vec<Vector3<f64>>> {
    cable_forces_from(&kinematics(state, topology), &state.rest_lengths, topology)
}

pub(crate) fn cable_forces_from(
    kin: &Kinematics,
    rest_lengths: &[f64],
    topology: &RobotTopology,
) -> Result<Vec<Vector3<f64>>> {
    let mut f = vec![Vector3::zeros(); kin.pos.len()];
    for (cable, &rest) in topology.cables.iter().zip(rest_lengths) {
        let [a, b] = cable.endpoints;
        let delta = kin.pos[b] - kin.pos[a];
        let len = delta.norm();
        if len < 1e-9 {
            return Err(Error::DegenerateGeometry(format!(
                "cable {} endpoints coincide",
                cable.id
            )));
        }
        if len <= rest {
            continue;
        }
        let dir = delta / len;
        let len_rate = (kin.vel[b] - kin.vel[a]).dot(&dir);
        let tension = (cable.stiffness * (len - rest) + cable.damping * len_rate).max(0.0);
        f[a] += dir * tension;
        f[b] -= dir * tension;
    }
    Ok(f)
}

/// Penalty normal force plus capped viscous friction for endcaps below their radius.
pub fn contact_forces(
    state: &FullState,
    topology: &RobotTopology,
    params: &SimParams,
) -> Vec<Vector3<f64>> {
    contact_forces_from(&kinematics(state, topology), topology, params)
}

pub(crate) fn contact_forces_from(
    kin: &Kinematics,
    topology: &RobotTopology,
    params: &SimParams,
) -> Vec<Vector3<f64>> {
    let mut f = vec![Vector3::zeros(); kin.pos.len()];
    for (node, out) in f.iter_mut().enumerate() {
        let depth = topology.endcap_radius(node) - kin.pos[node].z;
        if depth <= 0.0 {
            continue;
        }
        let v = kin.vel[node];
        let normal = params.ground_stiffness * depth + params.ground_damping * (-v.z).max(0.0);
        let slip = Vector3::new(v.x, v.y, 0.0);
        let speed = slip.norm();
        let mut tangential = Vector3::zeros();
        if speed > 0.0 {
            let mag = (params.friction_mu * normal).min(params.ground_damping * speed);
            tangential = -slip / speed * mag;
        }
        *out = Vector3::new(0.0, 0.0, normal) + tangential;
    }
    f
}

/// Rate-limited rest-length integrator for the actuated cables.
///
/// `controls.u[j]` is the retract fraction of motor speed for the j-th actuated cable.
pub fn motor_step(
    rest_lengths: &[f64],
    controls: &ControlFrame,
    topology: &RobotTopology,
    dt: f64,
) -> Vec<f64> {
    let mut out = rest_lengths.to_vec();
    motor_step_in_place(&mut out, &controls.u, topology, dt);
    out
}

pub(crate) fn motor_step_in_place(rest: &mut [f64], u: &[f64], topology: &RobotTopology, dt: f64) {
    let mut slot = 0;
    for (cable, l) in topology.cables.iter().zip(rest.iter_mut()) {
        if !cable.actuated {
            continue;
        }
        let cmd = u.get(slot).copied().unwrap_or(0.0).clamp(-1.0, 1.0);
        slot += 1;
        *l = (*l - cmd * cable.motor_speed * dt)
            .clamp(cable.min_rest_length(), cable.max_rest_length());
    }
}

/// Per-step rest-length deltas the motor model produces over a control sequence,
/// `out[step][cable]`.
pub fn motor_deltas(
    rest_lengths: &[f64],
    controls: &[Vec<f64>],
    topology: &RobotTopology,
    dt: f64,
    substeps: usize,
) -> Vec<Vec<f64>> {
    let mut rest = rest_lengths.to_vec();
    let sub_dt = dt / substeps as f64;
    controls
        .iter()
        .map(|u| {
            let before = rest.clone();
            for _ in 0..substeps {
                motor_step_in_place(&mut rest, u, topology, sub_dt);
            }
            rest.iter().zip(&before).map(|(a, b)| a - b).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refsim::RodState;
    use crate::topology::{build_three_bar, CableSpec, RodSpec};
    use nalgebra::UnitQuaternion;

    fn two_rods(gap: f64, rest: f64, k: f64, c: f64) -> (RobotTopology, FullState) {
        let topo = RobotTopology {
            rods: vec![
                RodSpec { length: 1.0, mass: 1.0, endcap_radius: 0.02, endcap_indices: [0, 1] },
                RodSpec { length: 1.0, mass: 1.0, endcap_radius: 0.02, endcap_indices: [2, 3] },
            ],
            cables: vec![CableSpec {
                id: 0,
                endpoints: [1, 2],
                stiffness: k,
                damping: c,
                initial_rest_length: rest,
                actuated: true,
                motor_speed: 0.08,
            }],
            designated_node: 0,
            num_nodes: 5,
        };
        // Rods along world z, stacked so that node 1 (top of rod 0) sits `gap` below node 2.
        let state = FullState {
            rods: vec![
                RodState::at_rest(Vector3::new(0.0, 0.0, 1.0), UnitQuaternion::identity()),
                RodState::at_rest(Vector3::new(0.0, 0.0, 2.0 + gap), UnitQuaternion::identity()),
            ],
            rest_lengths: vec![rest],
            time: 0.0,
        };
        (topo, state)
    }

    #[test]
    fn slack_cable_has_no_force() {
        let (topo, state) = two_rods(0.5, 0.6, 500.0, 5.0);
        let f = cable_forces(&state, &topo).unwrap();
        assert!(f.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn stretched_cable_tension() {
        let (topo, state) = two_rods(1.01, 1.0, 500.0, 0.0);
        let f = cable_forces(&state, &topo).unwrap();
        // node 1 pulled up toward node 2 with k * 0.01 = 5 N
        assert!((f[1] - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-9);
        assert!((f[2] - Vector3::new(0.0, 0.0, -5.0)).norm() < 1e-9);
        let total: Vector3<f64> = f.iter().sum();
        assert!(total.norm() < 1e-12);
    }

    #[test]
    fn coincident_endpoints_error() {
        let (topo, state) = two_rods(0.0, 0.5, 500.0, 5.0);
        assert!(matches!(
            cable_forces(&state, &topo),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn contact_penalty_static() {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let params = SimParams::default();
        let kin = Kinematics {
            pos: vec![
                Vector3::new(0.0, 0.0, 0.019),
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vel: vec![Vector3::zeros(); 6],
        };
        let f = contact_forces_from(&kin, &topo, &params);
        // depth 0.001 m at 1e4 N/m
        assert!((f[0].z - 10.0).abs() < 1e-9);
        assert!(f[1..].iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn friction_respects_cone() {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let params = SimParams::default();
        let kin = Kinematics {
            pos: (0..6).map(|i| Vector3::new(i as f64, 0.0, 0.01 + 0.002 * i as f64)).collect(),
            vel: (0..6).map(|i| Vector3::new(0.3 * i as f64, -0.2, -0.05)).collect(),
        };
        let f = contact_forces_from(&kin, &topo, &params);
        for v in f {
            let t = (v.x * v.x + v.y * v.y).sqrt();
            assert!(t <= params.friction_mu * v.z + 1e-12);
        }
    }

    #[test]
    fn motor_rules() {
        let mut topo = build_three_bar(1.0, 0.3).unwrap();
        for c in &mut topo.cables {
            c.initial_rest_length = 1.0;
        }
        let mut rest = vec![1.0; 9];
        let zero = ControlFrame { u: vec![0.0; 9], time: 0.0 };
        assert_eq!(motor_step(&rest, &zero, &topo, 0.1), rest);
        let pull = ControlFrame { u: vec![1.0; 9], time: 0.0 };
        let c = &topo.cables[0];
        let out = motor_step(&rest, &pull, &topo, 0.1);
        assert!((out[0] - 0.992).abs() < 1e-12);
        rest[0] = c.min_rest_length();
        let out = motor_step(&rest, &pull, &topo, 0.1);
        assert_eq!(out[0], c.min_rest_length());
    }
}
