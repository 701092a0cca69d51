//! Converts endcap observations, cable rest lengths and a control window into
//! a typed feature graph.
//!
//! Node feature layout (one row per node, ground last):
//!
//! | columns        | content                                              |
//! |----------------|------------------------------------------------------|
//! | 0..3           | velocity                                             |
//! | 3..6           | position relative to the designated node             |
//! | 6..9           | position relative to the rod centre (zero for ground)|
//! | 9..12          | unit rod axis from this endcap to its partner        |
//! | 12..14         | node type one-hot (endcap, ground)                   |
//! | 14..14+D       | dataset one-hot                                      |
//!
//! The ground node's reference point is the designated node projected onto the
//! ground plane, so every feature is invariant to horizontal translation.
//!
//! Edge features, with `dp = p_dst - p_src`:
//! * body: `[dp, |dp|]`
//! * cable: `[dp, |dp|, rest length, actuated, controls t-h .. t+n-1]`
//! * contact: `[dp, clearance - contact_threshold]`

use nalgebra::Vector3;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refsim::{motor_deltas, Observation};
use crate::topology::RobotTopology;

pub const VELOCITY_COLS: std::ops::Range<usize> = 0..3;
pub const DESIGNATED_COLS: std::ops::Range<usize> = 3..6;
pub const CONFIG_COLS: std::ops::Range<usize> = 3..12;
pub const TYPE_COLS: std::ops::Range<usize> = 12..14;
pub const DATASET_OFFSET: usize = 14;
pub const BODY_EDGE_WIDTH: usize = 4;
pub const CONTACT_EDGE_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Past control steps carried on cable edges.
    pub h: usize,
    /// Future control / prediction steps.
    pub n: usize,
    pub contact_threshold: f64,
    /// Width of the dataset one-hot.
    pub num_datasets: usize,
    /// Δt between frames.
    pub sample_dt: f64,
    /// Frozen feature statistics; `None` leaves features unnormalised.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<FeatureNormalizer>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            h: 6,
            n: 6,
            contact_threshold: 0.05,
            num_datasets: 1,
            sample_dt: 0.01,
            normalizer: None,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        if !(self.contact_threshold > 0.0) {
            return Err(Error::InvalidParameter("contact_threshold must be > 0".into()));
        }
        if self.num_datasets < 1 {
            return Err(Error::InvalidParameter("num_datasets must be >= 1".into()));
        }
        Ok(())
    }

    pub fn node_width(&self) -> usize {
        DATASET_OFFSET + self.num_datasets
    }

    pub fn cable_width(&self) -> usize {
        6 + self.h + self.n
    }

    pub fn window_len(&self) -> usize {
        self.h + self.n
    }
}

/// Welford running mean / variance per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    pub fn push_rows(&mut self, rows: &Array2<f64>) {
        for row in rows.rows() {
            self.count += 1;
            let n = self.count as f64;
            for (j, &x) in row.iter().enumerate() {
                let d = x - self.mean[j];
                self.mean[j] += d / n;
                self.m2[j] += d * (x - self.mean[j]);
            }
        }
    }

    /// Population standard deviation; columns that never varied report 1 so
    /// that they pass through centred but unscaled.
    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&m2| {
                let s = if self.count > 0 {
                    (m2 / self.count as f64).sqrt()
                } else {
                    0.0
                };
                if s < 1e-6 {
                    1.0
                } else {
                    s
                }
            })
            .collect()
    }

    fn apply(&self, rows: &mut Array2<f64>) {
        if self.count == 0 {
            return;
        }
        let std = self.std();
        for mut row in rows.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / (std[j] + 1e-8);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub node: RunningStats,
    pub body: RunningStats,
    pub cable: RunningStats,
    pub contact: RunningStats,
}

impl FeatureNormalizer {
    pub fn new(config: &GraphConfig) -> Self {
        Self {
            node: RunningStats::new(config.node_width()),
            body: RunningStats::new(BODY_EDGE_WIDTH),
            cable: RunningStats::new(config.cable_width()),
            contact: RunningStats::new(CONTACT_EDGE_WIDTH),
        }
    }

    /// Accumulates statistics from an unnormalised graph.
    pub fn accumulate(&mut self, graph: &GraphSnapshot) {
        self.node.push_rows(&graph.node_features);
        self.body.push_rows(&graph.body.features);
        self.cable.push_rows(&graph.cable.features);
        self.contact.push_rows(&graph.contact.features);
    }

    pub fn apply(&self, graph: &mut GraphSnapshot) {
        self.node.apply(&mut graph.node_features);
        self.body.apply(&mut graph.body.features);
        self.cable.apply(&mut graph.cable.features);
        self.contact.apply(&mut graph.contact.features);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// One row per edge.
    pub features: Array2<f64>,
}

impl EdgeSet {
    fn empty(width: usize) -> Self {
        Self {
            src: vec![],
            dst: vec![],
            features: Array2::zeros((0, width)),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeType {
    Body,
    Cable,
    Contact,
}

pub const EDGE_TYPES: [EdgeType; 3] = [EdgeType::Body, EdgeType::Cable, EdgeType::Contact];

impl EdgeType {
    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Body => "body",
            EdgeType::Cable => "cable",
            EdgeType::Contact => "contact",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub node_features: Array2<f64>,
    pub body: EdgeSet,
    pub cable: EdgeSet,
    pub contact: EdgeSet,
    /// Physical cable id of every cable edge.
    pub cable_edge_to_cable_id: Vec<usize>,
    /// For cable `j`, the index of its canonical edge (src = lower endcap id).
    pub canonical_cable_edges: Vec<usize>,
    /// Rest-length deltas of the analytical motor model over the next `n`
    /// steps, `[step][cable]`.
    pub analytic_rest_deltas: Vec<Vec<f64>>,
    /// Logged rest-length deltas, when the data carries them.
    pub logged_rest_deltas: Option<Vec<Vec<f64>>>,
}

impl GraphSnapshot {
    pub fn num_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn num_cables(&self) -> usize {
        self.canonical_cable_edges.len()
    }

    pub fn edges(&self, ty: EdgeType) -> &EdgeSet {
        match ty {
            EdgeType::Body => &self.body,
            EdgeType::Cable => &self.cable,
            EdgeType::Contact => &self.contact,
        }
    }
}

/// Kinematic inputs of one graph: the feature generator's arguments after
/// velocity estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    /// Endcap positions in node-id order (ground excluded).
    pub positions: Vec<Vector3<f64>>,
    /// Endcap velocities in node-id order (ground excluded).
    pub velocities: Vec<Vector3<f64>>,
    pub rest_lengths: Vec<f64>,
    /// `h + n` rows of per-actuated-cable controls, oldest first.
    pub controls_window: Vec<Vec<f64>>,
    pub dataset_id: usize,
}

/// Backward finite difference of the last two observations, ground included
/// (always zero). A single frame yields zeros.
pub fn estimate_node_velocity(
    window: &[Observation],
    sample_dt: f64,
    topology: &RobotTopology,
) -> Result<Vec<Vector3<f64>>> {
    let mut out = vec![Vector3::zeros(); topology.num_nodes];
    match window {
        [] => Err(Error::InvalidWindow("empty observation window".into())),
        [_] => Ok(out),
        [.., prev, last] => {
            let spacing = last.time - prev.time;
            if (spacing - sample_dt).abs() > 1e-6 * sample_dt.max(1.0) {
                return Err(Error::InvalidWindow(format!(
                    "frame spacing {spacing} differs from sample_dt {sample_dt}"
                )));
            }
            let p1 = last.node_positions(topology);
            let p0 = prev.node_positions(topology);
            for (i, (a, b)) in p1.iter().zip(&p0).enumerate() {
                out[i] = (a - b) / sample_dt;
            }
            Ok(out)
        }
    }
}

fn rod_geometry(
    positions: &[Vector3<f64>],
    topology: &RobotTopology,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    // Per endcap: rod centre and unit axis toward its partner.
    let n = topology.num_endcaps();
    let mut centre = vec![Vector3::zeros(); n];
    let mut axis = vec![Vector3::zeros(); n];
    for (k, rod) in topology.rods.iter().enumerate() {
        let [a, b] = rod.endcap_indices;
        let d = positions[b] - positions[a];
        let len = d.norm();
        if !(len > 1e-12) {
            return Err(Error::DegenerateGeometry(format!("rod {k} has coincident endcaps")));
        }
        let mid = (positions[a] + positions[b]) * 0.5;
        centre[a] = mid;
        centre[b] = mid;
        axis[a] = d / len;
        axis[b] = -d / len;
    }
    Ok((centre, axis))
}

/// Node feature matrix (see module docs for the layout).
pub fn node_features(
    positions: &[Vector3<f64>],
    velocities: &[Vector3<f64>],
    topology: &RobotTopology,
    dataset_id: usize,
    config: &GraphConfig,
) -> Result<Array2<f64>> {
    if dataset_id >= config.num_datasets {
        return Err(Error::InvalidId {
            id: dataset_id,
            width: config.num_datasets,
        });
    }
    let (centre, axis) = rod_geometry(positions, topology)?;
    let designated = positions[topology.designated_node];
    let ground = topology.ground_node();
    let mut out = Array2::zeros((topology.num_nodes, config.node_width()));
    for i in 0..topology.num_nodes {
        let mut row = out.row_mut(i);
        if i == ground {
            let reference = Vector3::new(designated.x, designated.y, 0.0);
            let rel = reference - designated;
            for j in 0..3 {
                row[3 + j] = rel[j];
            }
            row[13] = 1.0;
        } else {
            let rel_d = positions[i] - designated;
            let rel_c = positions[i] - centre[i];
            for j in 0..3 {
                row[j] = velocities[i][j];
                row[3 + j] = rel_d[j];
                row[6 + j] = rel_c[j];
                row[9 + j] = axis[i][j];
            }
            row[12] = 1.0;
        }
        row[DATASET_OFFSET + dataset_id] = 1.0;
    }
    Ok(out)
}

/// Endcaps whose surface clearance is strictly below the contact threshold,
/// as (endcap -> ground, ground -> endcap) pairs in endcap-id order.
pub fn contact_edges(
    positions: &[Vector3<f64>],
    topology: &RobotTopology,
    config: &GraphConfig,
) -> EdgeSet {
    let ground = topology.ground_node();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut rows = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let clearance = p.z - topology.endcap_radius(i);
        if clearance < config.contact_threshold {
            let gap = clearance - config.contact_threshold;
            // endcap -> ground: dp = projection - endcap
            src.push(i);
            dst.push(ground);
            rows.extend_from_slice(&[0.0, 0.0, -p.z, gap]);
            src.push(ground);
            dst.push(i);
            rows.extend_from_slice(&[0.0, 0.0, p.z, gap]);
        }
    }
    let features = Array2::from_shape_vec((src.len(), CONTACT_EDGE_WIDTH), rows)
        .expect("row-major contact features");
    EdgeSet { src, dst, features }
}

/// Body and cable edge sets plus the cable bookkeeping vectors.
pub fn edge_features(
    inputs: &GraphInputs,
    topology: &RobotTopology,
    config: &GraphConfig,
) -> Result<(EdgeSet, EdgeSet, Vec<usize>, Vec<usize>)> {
    let pos = &inputs.positions;
    let window = config.window_len();
    if inputs.controls_window.len() != window {
        return Err(Error::Shape(format!(
            "controls window has {} rows, expected h + n = {window}",
            inputs.controls_window.len()
        )));
    }
    let mut body = EdgeSet::empty(BODY_EDGE_WIDTH);
    let mut body_rows = Vec::new();
    for rod in &topology.rods {
        let [a, b] = rod.endcap_indices;
        for (s, d) in [(a, b), (b, a)] {
            let dp = pos[d] - pos[s];
            body.src.push(s);
            body.dst.push(d);
            body_rows.extend_from_slice(&[dp.x, dp.y, dp.z, dp.norm()]);
        }
    }
    body.features = Array2::from_shape_vec((body.src.len(), BODY_EDGE_WIDTH), body_rows)
        .expect("row-major body features");

    let slots = topology.control_slots();
    let width = config.cable_width();
    let mut cable = EdgeSet::empty(width);
    let mut cable_rows = Vec::new();
    let mut edge_to_cable = Vec::new();
    let mut canonical = Vec::new();
    for (j, spec) in topology.cables.iter().enumerate() {
        let [a, b] = spec.endpoints;
        let (lo, hi) = (a.min(b), a.max(b));
        canonical.push(cable.src.len());
        for (s, d) in [(lo, hi), (hi, lo)] {
            let dp = pos[d] - pos[s];
            cable.src.push(s);
            cable.dst.push(d);
            edge_to_cable.push(j);
            cable_rows.extend_from_slice(&[
                dp.x,
                dp.y,
                dp.z,
                dp.norm(),
                inputs.rest_lengths[j],
                if spec.actuated { 1.0 } else { 0.0 },
            ]);
            for step in &inputs.controls_window {
                cable_rows.push(match slots[j] {
                    Some(slot) => step.get(slot).copied().unwrap_or(0.0),
                    None => 0.0,
                });
            }
        }
    }
    cable.features = Array2::from_shape_vec((cable.src.len(), width), cable_rows)
        .expect("row-major cable features");
    Ok((body, cable, edge_to_cable, canonical))
}

/// Assembles an unnormalised snapshot from kinematic inputs.
pub fn build_graph_raw(
    inputs: &GraphInputs,
    topology: &RobotTopology,
    config: &GraphConfig,
) -> Result<GraphSnapshot> {
    config.validate()?;
    let node = node_features(
        &inputs.positions,
        &inputs.velocities,
        topology,
        inputs.dataset_id,
        config,
    )?;
    let (body, cable, cable_edge_to_cable_id, canonical_cable_edges) =
        edge_features(inputs, topology, config)?;
    let contact = contact_edges(&inputs.positions, topology, config);
    let future = &inputs.controls_window[config.h..];
    let analytic_rest_deltas =
        motor_deltas(&inputs.rest_lengths, future, topology, config.sample_dt, 1);
    Ok(GraphSnapshot {
        node_features: node,
        body,
        cable,
        contact,
        cable_edge_to_cable_id,
        canonical_cable_edges,
        analytic_rest_deltas,
        logged_rest_deltas: None,
    })
}

/// Snapshot from kinematic inputs, normalised when the config carries statistics.
pub fn build_graph_from_inputs(
    inputs: &GraphInputs,
    topology: &RobotTopology,
    config: &GraphConfig,
) -> Result<GraphSnapshot> {
    let mut g = build_graph_raw(inputs, topology, config)?;
    if let Some(norm) = &config.normalizer {
        norm.apply(&mut g);
    }
    Ok(g)
}

/// Snapshot from an observation window (velocity by finite difference).
pub fn build_graph(
    obs_window: &[Observation],
    controls_window: &[Vec<f64>],
    rest_lengths_estimate: &[f64],
    dataset_id: usize,
    topology: &RobotTopology,
    config: &GraphConfig,
) -> Result<GraphSnapshot> {
    let last = obs_window
        .last()
        .ok_or_else(|| Error::InvalidWindow("empty observation window".into()))?;
    let mut velocities = estimate_node_velocity(obs_window, config.sample_dt, topology)?;
    velocities.truncate(topology.num_endcaps());
    let inputs = GraphInputs {
        positions: last.node_positions(topology),
        velocities,
        rest_lengths: rest_lengths_estimate.to_vec(),
        controls_window: controls_window.to_vec(),
        dataset_id,
    };
    build_graph_from_inputs(&inputs, topology, config)
}

/// Several snapshots merged into one disjoint graph with offset node ids.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub node_features: Array2<f64>,
    pub edges: [EdgeSet; 3],
    /// Row in the batched cable edge set of every physical cable, graph by graph.
    pub canonical_cable_rows: Vec<usize>,
    /// Rows of the batched node matrix that are endcaps (ground excluded).
    pub endcap_rows: Vec<usize>,
    pub node_offsets: Vec<usize>,
    pub num_graphs: usize,
    /// Analytical motor deltas, one row per physical cable, `n` columns.
    pub analytic_rest: Array2<f64>,
    /// Logged deltas where available, analytical otherwise; same layout.
    pub logged_rest: Array2<f64>,
}

impl GraphBatch {
    pub fn new(graphs: &[&GraphSnapshot]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Shape("empty graph batch".into()))?;
        let node_views: Vec<_> = graphs.iter().map(|g| g.node_features.view()).collect();
        let node_features = ndarray::concatenate(Axis(0), &node_views)
            .map_err(|e| Error::Shape(format!("node feature widths differ: {e}")))?;
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut total = 0;
        for g in graphs {
            offsets.push(total);
            total += g.num_nodes();
        }
        let merge = |ty: EdgeType| -> Result<EdgeSet> {
            let width = first.edges(ty).features.ncols();
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let views: Vec<_> = graphs.iter().map(|g| g.edges(ty).features.view()).collect();
            for (g, off) in graphs.iter().zip(&offsets) {
                let e = g.edges(ty);
                src.extend(e.src.iter().map(|s| s + off));
                dst.extend(e.dst.iter().map(|d| d + off));
            }
            let features = if views.is_empty() {
                Array2::zeros((0, width))
            } else {
                ndarray::concatenate(Axis(0), &views)
                    .map_err(|e| Error::Shape(format!("edge feature widths differ: {e}")))?
            };
            Ok(EdgeSet { src, dst, features })
        };
        let edges = [merge(EdgeType::Body)?, merge(EdgeType::Cable)?, merge(EdgeType::Contact)?];
        let mut canonical_cable_rows = Vec::new();
        let mut endcap_rows = Vec::new();
        let mut cable_offset = 0;
        for (g, off) in graphs.iter().zip(&offsets) {
            canonical_cable_rows.extend(g.canonical_cable_edges.iter().map(|r| r + cable_offset));
            cable_offset += g.cable.len();
            // the ground node is always the last row of a snapshot
            endcap_rows.extend((0..g.num_nodes() - 1).map(|i| i + off));
        }
        let steps = first.analytic_rest_deltas.len();
        let cables: usize = graphs.iter().map(|g| g.num_cables()).sum();
        let mut analytic_rest = Array2::zeros((cables, steps));
        let mut logged_rest = Array2::zeros((cables, steps));
        let mut row = 0;
        for g in graphs {
            if g.analytic_rest_deltas.len() != steps {
                return Err(Error::Shape("graphs disagree on prediction steps".into()));
            }
            let logged = g.logged_rest_deltas.as_ref().unwrap_or(&g.analytic_rest_deltas);
            for j in 0..g.num_cables() {
                for k in 0..steps {
                    analytic_rest[[row, k]] = g.analytic_rest_deltas[k][j];
                    logged_rest[[row, k]] = logged[k][j];
                }
                row += 1;
            }
        }
        Ok(Self {
            node_features,
            edges,
            canonical_cable_rows,
            endcap_rows,
            node_offsets: offsets,
            num_graphs: graphs.len(),
            analytic_rest,
            logged_rest,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn edges(&self, ty: EdgeType) -> &EdgeSet {
        match ty {
            EdgeType::Body => &self.edges[0],
            EdgeType::Cable => &self.edges[1],
            EdgeType::Contact => &self.edges[2],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_three_bar, three_bar_nominal_positions};

    fn resting_inputs(lift: f64) -> (RobotTopology, GraphInputs) {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let positions: Vec<_> = three_bar_nominal_positions(1.0)
            .into_iter()
            .map(|p| p + Vector3::new(0.0, 0.0, 0.02 + lift))
            .collect();
        let inputs = GraphInputs {
            velocities: vec![Vector3::zeros(); 6],
            positions,
            rest_lengths: topo.initial_rest_lengths(),
            controls_window: vec![vec![0.0; 9]; 12],
            dataset_id: 0,
        };
        (topo, inputs)
    }

    fn obs(nodes: &[Vector3<f64>], t: f64) -> Observation {
        Observation::from_node_positions(nodes, t)
    }

    #[test]
    fn velocity_estimates() {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let p: Vec<_> = three_bar_nominal_positions(1.0);
        let still = estimate_node_velocity(&[obs(&p, 0.0), obs(&p, 0.01)], 0.01, &topo).unwrap();
        assert!(still.iter().all(|v| v.norm() == 0.0));
        let moved: Vec<_> = p.iter().map(|x| x + Vector3::new(0.01, 0.0, 0.0)).collect();
        let v = estimate_node_velocity(&[obs(&p, 0.0), obs(&moved, 0.01)], 0.01, &topo).unwrap();
        for vi in &v[..6] {
            assert!((vi - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
        }
        assert_eq!(v[6], Vector3::zeros());
        let single = estimate_node_velocity(&[obs(&p, 0.0)], 0.01, &topo).unwrap();
        assert!(single.iter().all(|v| v.norm() == 0.0));
        assert!(matches!(
            estimate_node_velocity(&[obs(&p, 0.0), obs(&p, 0.02)], 0.01, &topo),
            Err(Error::InvalidWindow(_))
        ));
    }

    #[test]
    fn designated_and_axis_features() {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let mut pos = three_bar_nominal_positions(1.0);
        // stand rod 1 vertically: node 2 below node 3
        pos[2] = Vector3::new(2.0, 0.0, 0.1);
        pos[3] = Vector3::new(2.0, 0.0, 1.1);
        let cfg = GraphConfig { num_datasets: 4, ..GraphConfig::default() };
        let f = node_features(&pos, &vec![Vector3::zeros(); 6], &topo, 2, &cfg).unwrap();
        for j in DESIGNATED_COLS {
            assert_eq!(f[[topo.designated_node, j]], 0.0);
        }
        assert_eq!(f.row(2).slice(ndarray::s![9..12]).to_vec(), vec![0.0, 0.0, 1.0]);
        assert_eq!(f.row(3).slice(ndarray::s![9..12]).to_vec(), vec![0.0, 0.0, -1.0]);
        assert_eq!(f.row(0).slice(ndarray::s![14..18]).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            node_features(&pos, &vec![Vector3::zeros(); 6], &topo, 4, &cfg),
            Err(Error::InvalidId { .. })
        ));
    }

    #[test]
    fn cable_edge_layout() {
        let (topo, mut inputs) = resting_inputs(1.0);
        inputs.positions[0] = Vector3::zeros();
        inputs.positions[2] = Vector3::new(1.0, 0.0, 0.0);
        let cfg = GraphConfig::default();
        let (_, cable, _, canonical) = edge_features(&inputs, &topo, &cfg).unwrap();
        // cable 0 joins nodes 0 and 2
        let row = cable.features.row(canonical[0]);
        assert_eq!(row.slice(ndarray::s![0..4]).to_vec(), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(cable.src[canonical[0]], 0);
        assert_eq!(cable.features.ncols(), 6 + 12);
    }

    #[test]
    fn non_actuated_cable_has_zero_controls() {
        let (mut topo, mut inputs) = resting_inputs(1.0);
        topo.cables[3].actuated = false;
        inputs.controls_window = vec![vec![0.7; 8]; 12];
        let (_, cable, map, _) = edge_features(&inputs, &topo, &GraphConfig::default()).unwrap();
        for (e, &c) in map.iter().enumerate() {
            let ctrl = cable.features.row(e).slice(ndarray::s![6..]).to_vec();
            if c == 3 {
                assert!(ctrl.iter().all(|&u| u == 0.0));
                assert_eq!(cable.features[[e, 5]], 0.0);
            } else {
                assert!(ctrl.iter().all(|&u| u == 0.7));
            }
        }
    }

    #[test]
    fn contact_rule() {
        let (topo, inputs) = resting_inputs(0.0);
        let cfg = GraphConfig::default();
        let mut pos = inputs.positions.clone();
        for p in &mut pos {
            p.z = 1.0;
        }
        assert!(contact_edges(&pos, &topo, &cfg).is_empty());
        pos[4].z = 0.03;
        let e = contact_edges(&pos, &topo, &cfg);
        assert_eq!(e.src, vec![4, 6]);
        assert_eq!(e.dst, vec![6, 4]);
        pos[4].z = 0.02 + 0.05;
        assert!(contact_edges(&pos, &topo, &cfg).is_empty());
    }

    #[test]
    fn resting_three_bar_counts() {
        let (topo, inputs) = resting_inputs(0.0);
        let g = build_graph_raw(&inputs, &topo, &GraphConfig::default()).unwrap();
        assert_eq!(g.num_nodes(), 7);
        assert_eq!(g.body.len(), 6);
        assert_eq!(g.cable.len(), 18);
        assert_eq!(g.contact.len(), 6);
        assert_eq!(g, build_graph_raw(&inputs, &topo, &GraphConfig::default()).unwrap());
        let (_, floating) = resting_inputs(1.0);
        let f = build_graph_raw(&floating, &topo, &GraphConfig::default()).unwrap();
        assert_eq!(f.contact.len(), 0);
        assert_eq!((f.body.src.clone(), f.cable.src.clone()), (g.body.src.clone(), g.cable.src.clone()));
    }

    #[test]
    fn boundary_controls_are_zero_padded_by_caller() {
        // At trajectory step 0 with h = 6 the window's first six rows are zeros.
        let (topo, mut inputs) = resting_inputs(0.0);
        inputs.controls_window = (0..12)
            .map(|k| if k < 6 { vec![0.0; 9] } else { vec![0.5; 9] })
            .collect();
        let (_, cable, _, _) = edge_features(&inputs, &topo, &GraphConfig::default()).unwrap();
        let ctrl = cable.features.row(0).slice(ndarray::s![6..]).to_vec();
        assert_eq!(&ctrl[..6], &[0.0; 6]);
        assert_eq!(&ctrl[6..], &[0.5; 6]);
    }

    #[test]
    fn horizontal_translation_leaves_features_unchanged() {
        let (topo, inputs) = resting_inputs(0.0);
        let cfg = GraphConfig::default();
        let base = build_graph_raw(&inputs, &topo, &cfg).unwrap();
        let mut moved = inputs.clone();
        for p in &mut moved.positions {
            *p += Vector3::new(3.5, -2.25, 0.0);
        }
        let m = build_graph_raw(&moved, &topo, &cfg).unwrap();
        let close = |a: &Array2<f64>, b: &Array2<f64>| {
            a.shape() == b.shape() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
        };
        for ty in EDGE_TYPES {
            assert_eq!(m.edges(ty).src, base.edges(ty).src);
            assert!(close(&m.edges(ty).features, &base.edges(ty).features));
        }
        for c in 0..cfg.node_width() {
            if DESIGNATED_COLS.contains(&c) {
                continue;
            }
            let (a, b) = (m.node_features.column(c), base.node_features.column(c));
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn normalizer_centres_training_statistics() {
        let (topo, inputs) = resting_inputs(0.0);
        let mut cfg = GraphConfig::default();
        let mut norm = FeatureNormalizer::new(&cfg);
        let mut graphs = Vec::new();
        for k in 0..5 {
            let mut i = inputs.clone();
            for p in &mut i.velocities {
                *p = Vector3::new(k as f64, -(k as f64), 0.5 * k as f64);
            }
            let g = build_graph_raw(&i, &topo, &cfg).unwrap();
            norm.accumulate(&g);
            graphs.push(i);
        }
        cfg.normalizer = Some(norm);
        let mut sum = 0.0;
        for i in &graphs {
            let g = build_graph_from_inputs(i, &topo, &cfg).unwrap();
            sum += g.node_features.column(0).sum();
        }
        assert!(sum.abs() < 1e-9);
    }

    #[test]
    fn batch_offsets() {
        let (topo, inputs) = resting_inputs(0.0);
        let (_, floating) = resting_inputs(1.0);
        let cfg = GraphConfig::default();
        let a = build_graph_raw(&inputs, &topo, &cfg).unwrap();
        let b = build_graph_raw(&floating, &topo, &cfg).unwrap();
        let batch = GraphBatch::new(&[&a, &b]).unwrap();
        assert_eq!(batch.num_nodes(), 14);
        assert_eq!(batch.edges(EdgeType::Contact).len(), 6);
        assert_eq!(batch.edges(EdgeType::Cable).len(), 36);
        assert_eq!(batch.canonical_cable_rows.len(), 18);
        assert_eq!(batch.canonical_cable_rows[9], 18);
        assert_eq!(batch.endcap_rows.len(), 12);
        assert_eq!(batch.edges(EdgeType::Body).src[6], 7);
    }
}
