//! On-disk trajectory format: one JSON document per trajectory.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refsim::{ControlFrame, FullState, Observation, RodState, SimParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub topology_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_params: Option<SimParams>,
    pub dataset_id: usize,
    pub sample_dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodStateRecord {
    #[serde(rename = "P")]
    pub p: [f64; 3],
    /// Unit quaternion as `[w, x, y, z]`.
    #[serde(rename = "R")]
    pub r: [f64; 4],
    #[serde(rename = "V")]
    pub v: [f64; 3],
    #[serde(rename = "Omega")]
    pub omega: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub time: f64,
    /// Endcap centres in node-id order.
    pub endcaps: Vec<[f64; 3]>,
    /// Control applied from this frame to the next, one entry per actuated cable.
    pub controls: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_state: Option<Vec<RodStateRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_lengths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub frames: Vec<Frame>,
}

impl From<&RodState> for RodStateRecord {
    fn from(s: &RodState) -> Self {
        let q = s.orientation.quaternion();
        Self {
            p: s.position.into(),
            r: [q.w, q.i, q.j, q.k],
            v: s.velocity.into(),
            omega: s.angular_velocity.into(),
        }
    }
}

impl From<&RodStateRecord> for RodState {
    fn from(r: &RodStateRecord) -> Self {
        let q = nalgebra::Quaternion::new(r.r[0], r.r[1], r.r[2], r.r[3]);
        let orientation = if (q.norm() - 1.0).abs() <= 1e-12 {
            nalgebra::UnitQuaternion::new_unchecked(q)
        } else {
            nalgebra::UnitQuaternion::from_quaternion(q)
        };
        RodState {
            position: r.p.into(),
            orientation,
            velocity: r.v.into(),
            angular_velocity: r.omega.into(),
        }
    }
}

impl Frame {
    pub fn endcap_positions(&self) -> Vec<Vector3<f64>> {
        self.endcaps.iter().map(|&p| p.into()).collect()
    }

    pub fn observation(&self) -> Observation {
        Observation::from_node_positions(&self.endcap_positions(), self.time)
    }

    pub fn control_frame(&self) -> ControlFrame {
        ControlFrame {
            u: self.controls.clone(),
            time: self.time,
        }
    }

    /// Full oracle state, when the frame carries one.
    pub fn state(&self) -> Option<FullState> {
        let rods = self.full_state.as_ref()?;
        let rest = self.rest_lengths.clone()?;
        Some(FullState {
            rods: rods.iter().map(RodState::from).collect(),
            rest_lengths: rest,
            time: self.time,
        })
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_full_state(&self) -> bool {
        self.frames.iter().all(|f| f.full_state.is_some())
    }

    pub fn has_rest_lengths(&self) -> bool {
        self.frames.iter().all(|f| f.rest_lengths.is_some())
    }

    /// Drops oracle-only fields, leaving what an endcap tracker would record.
    pub fn strip_hidden_state(&mut self) {
        for f in &mut self.frames {
            f.full_state = None;
            f.rest_lengths = None;
        }
    }

    /// Per-frame endcap positions.
    pub fn positions(&self) -> Vec<Vec<Vector3<f64>>> {
        self.frames.iter().map(|f| f.endcap_positions()).collect()
    }

    pub fn controls(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.controls.clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
