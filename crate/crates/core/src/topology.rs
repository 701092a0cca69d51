//! Robot structure: rods with two endcap nodes each, cables between endcaps
//! of different rods, and a single ground node with the highest node id.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodSpec {
    pub length: f64,
    pub mass: f64,
    pub endcap_radius: f64,
    pub endcap_indices: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableSpec {
    pub id: usize,
    pub endpoints: [usize; 2],
    pub stiffness: f64,
    pub damping: f64,
    pub initial_rest_length: f64,
    pub actuated: bool,
    pub motor_speed: f64,
}

impl CableSpec {
    /// Lower clamp of the motor-driven rest length.
    pub fn min_rest_length(&self) -> f64 {
        0.2 * self.initial_rest_length
    }

    /// Upper clamp of the motor-driven rest length.
    pub fn max_rest_length(&self) -> f64 {
        1.5 * self.initial_rest_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotTopology {
    pub rods: Vec<RodSpec>,
    pub cables: Vec<CableSpec>,
    pub designated_node: usize,
    pub num_nodes: usize,
}

/// Construction parameters shared by the stock robots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CableDefaults {
    pub endcap_radius: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub motor_speed: f64,
    /// Initial rest length as a fraction of the nominal geometric length.
    pub prestretch: f64,
}

impl Default for CableDefaults {
    fn default() -> Self {
        Self {
            endcap_radius: 0.02,
            stiffness: 500.0,
            damping: 5.0,
            motor_speed: 0.08,
            prestretch: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    ThreeBar,
    SixBar,
}

impl RobotTopology {
    pub fn ground_node(&self) -> usize {
        self.num_nodes - 1
    }

    pub fn num_endcaps(&self) -> usize {
        self.num_nodes - 1
    }

    pub fn num_actuated(&self) -> usize {
        self.cables.iter().filter(|c| c.actuated).count()
    }

    /// Rod owning `node`, or `None` for the ground node / out-of-range ids.
    pub fn rod_of(&self, node: usize) -> Option<usize> {
        self.rods
            .iter()
            .position(|r| r.endcap_indices.contains(&node))
    }

    /// The other endcap on the same rod.
    pub fn partner(&self, node: usize) -> Option<usize> {
        let rod = &self.rods[self.rod_of(node)?];
        Some(if rod.endcap_indices[0] == node {
            rod.endcap_indices[1]
        } else {
            rod.endcap_indices[0]
        })
    }

    pub fn endcap_radius(&self, node: usize) -> f64 {
        self.rod_of(node)
            .map(|r| self.rods[r].endcap_radius)
            .unwrap_or(0.0)
    }

    /// Map from cable index to its slot in a control vector (actuated cables only).
    pub fn control_slots(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.cables
            .iter()
            .map(|c| {
                if c.actuated {
                    next += 1;
                    Some(next - 1)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn initial_rest_lengths(&self) -> Vec<f64> {
        self.cables.iter().map(|c| c.initial_rest_length).collect()
    }

    /// Mean rod length, the normaliser of the position error metric.
    pub fn mean_rod_length(&self) -> f64 {
        self.rods.iter().map(|r| r.length).sum::<f64>() / self.rods.len().max(1) as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.rods.iter().map(|r| r.mass).sum()
    }

    /// Returns a description of every violated invariant; empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_nodes != 2 * self.rods.len() + 1 {
            out.push(format!(
                "num_nodes {} != 2 * {} rods + 1",
                self.num_nodes,
                self.rods.len()
            ));
        }
        let ground = self.num_nodes.saturating_sub(1);
        let mut seen = vec![0usize; self.num_nodes];
        for (k, rod) in self.rods.iter().enumerate() {
            if !(rod.length > 0.0) {
                out.push(format!("rod {k}: length must be positive"));
            }
            if !(rod.mass > 0.0) {
                out.push(format!("rod {k}: mass must be positive"));
            }
            if !(rod.endcap_radius >= 0.0) {
                out.push(format!("rod {k}: endcap radius must be non-negative"));
            }
            let [a, b] = rod.endcap_indices;
            if a == b {
                out.push(format!("rod {k}: endcap indices must be distinct"));
            }
            for idx in [a, b] {
                if idx >= ground {
                    out.push(format!("rod {k}: endcap index {idx} is not an endcap node"));
                } else {
                    seen[idx] += 1;
                }
            }
        }
        for (node, count) in seen.iter().enumerate().take(ground) {
            if *count != 1 {
                out.push(format!("node {node} is claimed by {count} rods"));
            }
        }
        for cable in &self.cables {
            let id = cable.id;
            let [a, b] = cable.endpoints;
            let ra = self.rod_of(a);
            let rb = self.rod_of(b);
            match (ra, rb) {
                (Some(ra), Some(rb)) if ra == rb => {
                    out.push(format!("cable {id}: both endpoints on rod {ra}"))
                }
                (Some(_), Some(_)) => {}
                _ => out.push(format!("cable {id}: endpoint is not a valid endcap node")),
            }
            if !(cable.stiffness >= 0.0) {
                out.push(format!("cable {id}: stiffness must be non-negative"));
            }
            if !(cable.damping >= 0.0) {
                out.push(format!("cable {id}: damping must be non-negative"));
            }
            if !(cable.initial_rest_length > 0.0) {
                out.push(format!("cable {id}: initial rest length must be positive"));
            }
        }
        if self.rod_of(self.designated_node).is_none() {
            out.push(format!(
                "designated node {} is not an endcap node",
                self.designated_node
            ));
        }
        out
    }

    /// Number of cables attached to each endcap node.
    pub fn cable_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_endcaps()];
        for c in &self.cables {
            for &e in &c.endpoints {
                if e < deg.len() {
                    deg[e] += 1;
                }
            }
        }
        deg
    }
}

fn check_dims(rod_length: f64, rod_mass: f64) -> Result<()> {
    if !(rod_length > 0.0) || !rod_length.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rod_length must be positive, got {rod_length}"
        )));
    }
    if !(rod_mass > 0.0) || !rod_mass.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rod_mass must be positive, got {rod_mass}"
        )));
    }
    Ok(())
}

fn assemble(
    rod_length: f64,
    rod_mass: f64,
    defaults: &CableDefaults,
    nominal: &[Vector3<f64>],
    pairs: &[[usize; 2]],
) -> RobotTopology {
    let num_rods = nominal.len() / 2;
    let rods = (0..num_rods)
        .map(|k| RodSpec {
            length: rod_length,
            mass: rod_mass,
            endcap_radius: defaults.endcap_radius,
            endcap_indices: [2 * k, 2 * k + 1],
        })
        .collect();
    let cables = pairs
        .iter()
        .enumerate()
        .map(|(id, &[a, b])| CableSpec {
            id,
            endpoints: [a, b],
            stiffness: defaults.stiffness,
            damping: defaults.damping,
            initial_rest_length: defaults.prestretch * (nominal[a] - nominal[b]).norm(),
            actuated: true,
            motor_speed: defaults.motor_speed,
        })
        .collect();
    RobotTopology {
        rods,
        cables,
        designated_node: 0,
        num_nodes: 2 * num_rods + 1,
    }
}

/// Endcap positions of the 3-prism at rest, rod `k` spanning nodes `2k` (bottom)
/// and `2k+1` (top), bottom triangle centred on the origin at height zero.
pub fn three_bar_nominal_positions(rod_length: f64) -> Vec<Vector3<f64>> {
    let side = 0.6 * rod_length;
    let radius = side / 3f64.sqrt();
    let twist = 150f64.to_radians();
    let chord = 2.0 * radius * (twist / 2.0).sin();
    let height = (rod_length * rod_length - chord * chord).sqrt();
    let mut out = Vec::with_capacity(6);
    for i in 0..3 {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
        out.push(Vector3::new(radius * theta.cos(), radius * theta.sin(), 0.0));
        out.push(Vector3::new(
            radius * (theta + twist).cos(),
            radius * (theta + twist).sin(),
            height,
        ));
    }
    out
}

fn three_bar_cable_pairs() -> Vec<[usize; 2]> {
    vec![
        // bottom triangle
        [0, 2],
        [2, 4],
        [0, 4],
        // top triangle
        [1, 3],
        [3, 5],
        [1, 5],
        // lateral: bottom of rod i to top of rod i-1
        [0, 5],
        [1, 2],
        [3, 4],
    ]
}

/// Builds the 3-bar prism: 3 rods, 9 actuated cables.
pub fn build_three_bar(rod_length: f64, rod_mass: f64) -> Result<RobotTopology> {
    build_three_bar_with(rod_length, rod_mass, &CableDefaults::default())
}

pub fn build_three_bar_with(
    rod_length: f64,
    rod_mass: f64,
    defaults: &CableDefaults,
) -> Result<RobotTopology> {
    check_dims(rod_length, rod_mass)?;
    let nominal = three_bar_nominal_positions(rod_length);
    Ok(assemble(
        rod_length,
        rod_mass,
        defaults,
        &nominal,
        &three_bar_cable_pairs(),
    ))
}

/// Endcap positions of the icosahedral 6-bar, centred on the origin. Rods come
/// in three parallel pairs aligned with the z, x and y axes.
pub fn six_bar_nominal_positions(rod_length: f64) -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let s = rod_length / (2.0 * phi);
    let mut out = Vec::with_capacity(12);
    for sign in [1.0, -1.0] {
        out.push(Vector3::new(0.0, sign, -phi) * s);
        out.push(Vector3::new(0.0, sign, phi) * s);
    }
    for sign in [1.0, -1.0] {
        out.push(Vector3::new(-phi, 0.0, sign) * s);
        out.push(Vector3::new(phi, 0.0, sign) * s);
    }
    for sign in [1.0, -1.0] {
        out.push(Vector3::new(sign, -phi, 0.0) * s);
        out.push(Vector3::new(sign, phi, 0.0) * s);
    }
    out
}

fn six_bar_cable_pairs(rod_length: f64) -> Vec<[usize; 2]> {
    let pos = six_bar_nominal_positions(rod_length);
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let edge = 2.0 * rod_length / (2.0 * phi);
    let group = |node: usize| node / 4;
    let mut pairs = Vec::new();
    for a in 0..pos.len() {
        for b in (a + 1)..pos.len() {
            let d = (pos[a] - pos[b]).norm();
            if (d - edge).abs() < 1e-9 * rod_length.max(1.0) && group(a) != group(b) {
                pairs.push([a, b]);
            }
        }
    }
    pairs
}

/// Builds the icosahedral 6-bar: 6 rods, 24 actuated cables.
pub fn build_six_bar(rod_length: f64, rod_mass: f64) -> Result<RobotTopology> {
    build_six_bar_with(rod_length, rod_mass, &CableDefaults::default())
}

pub fn build_six_bar_with(
    rod_length: f64,
    rod_mass: f64,
    defaults: &CableDefaults,
) -> Result<RobotTopology> {
    check_dims(rod_length, rod_mass)?;
    let nominal = six_bar_nominal_positions(rod_length);
    Ok(assemble(
        rod_length,
        rod_mass,
        defaults,
        &nominal,
        &six_bar_cable_pairs(rod_length),
    ))
}

pub fn build(kind: RobotKind, rod_length: f64, rod_mass: f64, defaults: &CableDefaults) -> Result<RobotTopology> {
    match kind {
        RobotKind::ThreeBar => build_three_bar_with(rod_length, rod_mass, defaults),
        RobotKind::SixBar => build_six_bar_with(rod_length, rod_mass, defaults),
    }
}

pub fn nominal_positions(kind: RobotKind, rod_length: f64) -> Vec<Vector3<f64>> {
    match kind {
        RobotKind::ThreeBar => three_bar_nominal_positions(rod_length),
        RobotKind::SixBar => six_bar_nominal_positions(rod_length),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_bar_counts() {
        let t = build_three_bar(1.0, 0.3).unwrap();
        assert_eq!(t.num_nodes, 7);
        assert_eq!(t.rods.len(), 3);
        assert_eq!(t.cables.len(), 9);
        assert!(t.cables.iter().all(|c| c.actuated));
        assert_eq!(t.designated_node, 0);
        assert_eq!(t.ground_node(), 6);
        assert_eq!(t.cable_degrees(), vec![3; 6]);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn three_bar_cables_by_hand() {
        // Hand enumeration of the 3-prism: each endcap joins its two triangle
        // neighbours and one lateral cable to the adjacent rod.
        let t = build_three_bar(1.0, 0.3).unwrap();
        let mut pairs: Vec<_> = t
            .cables
            .iter()
            .map(|c| {
                let [a, b] = c.endpoints;
                (a.min(b), a.max(b))
            })
            .collect();
        pairs.sort();
        assert_eq!(
            pairs,
            vec![(0, 2), (0, 4), (0, 5), (1, 2), (1, 3), (1, 5), (2, 4), (3, 4), (3, 5)]
        );
    }

    #[test]
    fn six_bar_counts() {
        let t = build_six_bar(1.0, 0.3).unwrap();
        assert_eq!(t.num_nodes, 13);
        assert_eq!(t.cables.len(), 24);
        assert_eq!(t.cable_degrees(), vec![4; 12]);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn six_bar_rods_have_requested_length() {
        let pos = six_bar_nominal_positions(1.3);
        for k in 0..6 {
            assert!(((pos[2 * k] - pos[2 * k + 1]).norm() - 1.3).abs() < 1e-12);
        }
    }

    #[test]
    fn three_bar_rods_have_requested_length() {
        let pos = three_bar_nominal_positions(0.8);
        for k in 0..3 {
            assert!(((pos[2 * k] - pos[2 * k + 1]).norm() - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_dimensions() {
        assert!(matches!(
            build_three_bar(-1.0, 0.3),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            build_six_bar(0.0, 0.3),
            Err(Error::InvalidParameter(_))
        ));
        assert!(build_three_bar(1.0, 0.0).is_err());
    }

    #[test]
    fn validate_flags_same_rod_cable() {
        let mut t = build_three_bar(1.0, 0.3).unwrap();
        t.cables[4].endpoints = [2, 3];
        let v = t.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("cable 4"), "{v:?}");
    }

    #[test]
    fn validate_flags_ground_as_designated() {
        let mut t = build_three_bar(1.0, 0.3).unwrap();
        t.designated_node = t.ground_node();
        assert_eq!(t.validate().len(), 1);
    }

    #[test]
    fn node_ids_dense() {
        for t in [build_three_bar(1.0, 0.3).unwrap(), build_six_bar(1.0, 0.3).unwrap()] {
            let mut ids: Vec<usize> = t.rods.iter().flat_map(|r| r.endcap_indices).collect();
            ids.push(t.ground_node());
            ids.sort();
            assert_eq!(ids, (0..t.num_nodes).collect::<Vec<_>>());
        }
    }

    #[test]
    fn degree_sequence_invariant_under_rod_rotation() {
        // Relabel rods by a cyclic rotation of the 3-prism construction.
        let t = build_three_bar(1.0, 0.3).unwrap();
        let rotate = |n: usize| (n + 2) % 6;
        let mut deg = vec![0; 6];
        for c in &t.cables {
            for &e in &c.endpoints {
                deg[rotate(e)] += 1;
            }
        }
        assert_eq!(deg, t.cable_degrees());
        let mut orig: Vec<_> = t
            .cables
            .iter()
            .map(|c| (c.endpoints[0].min(c.endpoints[1]), c.endpoints[0].max(c.endpoints[1])))
            .collect();
        let mut rotated: Vec<_> = t
            .cables
            .iter()
            .map(|c| {
                let (a, b) = (rotate(c.endpoints[0]), rotate(c.endpoints[1]));
                (a.min(b), a.max(b))
            })
            .collect();
        orig.sort();
        rotated.sort();
        assert_eq!(orig, rotated);
    }

    #[test]
    fn json_round_trip_uses_field_names() {
        let t = build_three_bar(1.0, 0.3).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        for key in ["rods", "cables", "designated_node", "endcap_indices", "initial_rest_length", "motor_speed"] {
            assert!(s.contains(key), "missing {key}");
        }
        let back: RobotTopology = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
