//! Encode-process-decode graph network with a per-node LSTM and multi-step
//! node-velocity and cable-rest-length decoders.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphgen::{
    GraphBatch, GraphConfig, GraphSnapshot, BODY_EDGE_WIDTH, CONFIG_COLS,
    CONTACT_EDGE_WIDTH, EDGE_TYPES,
};
use crate::net::{Lstm, LstmSpec, Mlp, MlpSpec, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotorMode {
    /// Rest-length deltas come from the cable decoder.
    Learned,
    /// Rest-length deltas come from the motor model applied to the commanded controls.
    Analytical,
    /// Logged rest-length deltas are substituted when the data carries them.
    GroundTruth,
}

/// Named members of the architecture ablation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FGnn,
    FcGnn,
    FcrGnn,
    FcrGnnLearnedMotor,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::FGnn,
        Variant::FcGnn,
        Variant::FcrGnn,
        Variant::FcrGnnLearnedMotor,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::FGnn => "F-GNN",
            Variant::FcGnn => "FC-GNN",
            Variant::FcrGnn => "FCR-GNN",
            Variant::FcrGnnLearnedMotor => "FCR-GNN+learned motor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_width: usize,
    /// Message-passing rounds.
    pub message_passes: usize,
    /// Prediction steps per call.
    pub n: usize,
    pub hidden_width: usize,
    pub num_hidden_layers: usize,
    pub use_config_features: bool,
    pub use_recurrence: bool,
    pub motor_mode: MotorMode,
    /// Graphs teacher-forced through the LSTM, `n` steps apart, before a
    /// prediction from a mid-trajectory state.
    pub warmup_graphs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_width: 128,
            message_passes: 5,
            n: 6,
            hidden_width: 128,
            num_hidden_layers: 2,
            use_config_features: true,
            use_recurrence: true,
            motor_mode: MotorMode::Learned,
            warmup_graphs: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_width == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidParameter("latent and hidden widths must be > 0".into()));
        }
        if self.message_passes < 1 {
            return Err(Error::InvalidParameter("message_passes must be >= 1".into()));
        }
        if self.n < 1 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        if self.num_hidden_layers < 1 {
            return Err(Error::InvalidParameter("num_hidden_layers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (cfg, rec, motor) = match variant {
            Variant::FGnn => (false, false, MotorMode::GroundTruth),
            Variant::FcGnn => (true, false, MotorMode::GroundTruth),
            Variant::FcrGnn => (true, true, MotorMode::GroundTruth),
            Variant::FcrGnnLearnedMotor => (true, true, MotorMode::Learned),
        };
        self.use_config_features = cfg;
        self.use_recurrence = rec;
        self.motor_mode = motor;
        self
    }
}

/// Frozen per-column output multipliers; the decoders predict in units of
/// these scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    /// `3n` entries: step-major, xyz-minor.
    pub velocity: Vec<f64>,
    /// `n` entries.
    pub rest: Vec<f64>,
}

impl OutputScale {
    pub fn ones(n: usize) -> Self {
        Self {
            velocity: vec![1.0; 3 * n],
            rest: vec![1.0; n],
        }
    }
}

/// Per-node LSTM hidden state and memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl RecurrentState {
    pub fn zeros(num_nodes: usize, width: usize) -> Self {
        Self {
            h: Array2::zeros((num_nodes, width)),
            c: Array2::zeros((num_nodes, width)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.h.nrows()
    }

    pub fn stack(states: &[&RecurrentState]) -> Self {
        let hs: Vec<_> = states.iter().map(|s| s.h.view()).collect();
        let cs: Vec<_> = states.iter().map(|s| s.c.view()).collect();
        Self {
            h: ndarray::concatenate(Axis(0), &hs).expect("equal widths"),
            c: ndarray::concatenate(Axis(0), &cs).expect("equal widths"),
        }
    }

    /// Splits a stacked state into consecutive blocks of `sizes` rows.
    pub fn split(&self, sizes: &[usize]) -> Vec<Self> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                Self {
                    h: self.h.slice(ndarray::s![r.clone(), ..]).to_owned(),
                    c: self.c.slice(ndarray::s![r, ..]).to_owned(),
                }
            })
            .collect()
    }
}

/// Per-step deltas for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBlock {
    /// `[endcap][step]` velocity increments (ground excluded).
    pub delta_v: Vec<Vec<[f64; 3]>>,
    /// `[cable][step]` rest-length increments.
    pub delta_rest: Vec<Vec<f64>>,
}

impl PredictionBlock {
    pub fn steps(&self) -> usize {
        self.delta_v
            .first()
            .map(Vec::len)
            .or_else(|| self.delta_rest.first().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.delta_v.iter().flatten().flatten().all(|v| v.is_finite())
            && self.delta_rest.iter().flatten().all(|v| v.is_finite())
    }
}

/// Latent graph after encoding or processing.
#[derive(Debug, Clone, Copy)]
pub struct Latent {
    pub nodes: Var,
    pub edges: [Var; 3],
}

/// Tape handles produced by one forward pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    /// Endcap rows of the batch, `3n` columns.
    pub delta_v: Var,
    /// One row per physical cable, `n` columns.
    pub delta_rest: Var,
}

#[derive(Debug, Clone, PartialEq)]
struct Round {
    messages: [Mlp; 3],
    update: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub graph: GraphConfig,
    pub params: ParamStore,
    pub output_scale: OutputScale,
    node_columns: Vec<usize>,
    node_encoder: Mlp,
    lstm: Option<Lstm>,
    edge_encoders: [Mlp; 3],
    rounds: Vec<Round>,
    node_decoder: Mlp,
    cable_decoder: Mlp,
}

impl Model {
    pub fn new(config: ModelConfig, graph: GraphConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        graph.validate()?;
        if graph.n != config.n {
            return Err(Error::InvalidParameter(format!(
                "graph n = {} differs from model n = {}",
                graph.n, config.n
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (lat, hid, depth) = (config.latent_width, config.hidden_width, config.num_hidden_layers);
        let node_columns: Vec<usize> = (0..graph.node_width())
            .filter(|c| config.use_config_features || !CONFIG_COLS.contains(c))
            .collect();
        let enc = |w| MlpSpec::new(w, hid, lat, depth).with_layer_norm();
        let node_encoder = Mlp::new(&mut params, "enc.node", enc(node_columns.len()), &mut rng)?;
        let lstm = if config.use_recurrence {
            let spec = LstmSpec {
                input_width: lat,
                state_width: lat,
            };
            Some(Lstm::new(&mut params, "enc.lstm", spec, &mut rng)?)
        } else {
            None
        };
        let widths = [BODY_EDGE_WIDTH, graph.cable_width(), CONTACT_EDGE_WIDTH];
        let edge_encoders = [0, 1, 2].map(|k| {
            let name = format!("enc.{}", EDGE_TYPES[k].name());
            Mlp::new(&mut params, &name, enc(widths[k]), &mut rng)
        });
        let [a, b, c] = edge_encoders;
        let edge_encoders = [a?, b?, c?];
        let mut rounds = Vec::with_capacity(config.message_passes);
        for l in 0..config.message_passes {
            let msg = [0, 1, 2].map(|k| {
                let name = format!("mp{l}.{}", EDGE_TYPES[k].name());
                Mlp::new(&mut params, &name, MlpSpec::new(3 * lat, hid, lat, depth), &mut rng)
            });
            let [a, b, c] = msg;
            let update = Mlp::new(
                &mut params,
                &format!("mp{l}.update"),
                MlpSpec::new(4 * lat, hid, lat, depth),
                &mut rng,
            )?;
            rounds.push(Round {
                messages: [a?, b?, c?],
                update,
            });
        }
        let node_decoder = Mlp::new(
            &mut params,
            "dec.node",
            MlpSpec::new(lat, hid, 3 * config.n, depth),
            &mut rng,
        )?;
        let cable_decoder = Mlp::new(
            &mut params,
            "dec.cable",
            MlpSpec::new(lat, hid, config.n, depth),
            &mut rng,
        )?;
        Ok(Self {
            output_scale: OutputScale::ones(config.n),
            config,
            graph,
            params,
            node_columns,
            node_encoder,
            lstm,
            edge_encoders,
            rounds,
            node_decoder,
            cable_decoder,
        })
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn latent_width(&self) -> usize {
        self.config.latent_width
    }

    /// Parameters of the two decoders.
    pub fn decoder_param_ids(&self) -> (Vec<crate::net::ParamId>, Vec<crate::net::ParamId>) {
        (self.node_decoder.param_ids(), self.cable_decoder.param_ids())
    }

    pub fn fresh_state(&self, num_nodes: usize) -> RecurrentState {
        RecurrentState::zeros(num_nodes, self.config.latent_width)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        h: Var,
        c: Var,
    ) -> Result<(Latent, Var, Var)> {
        let rows = batch.num_nodes();
        if tape.shape(h).0 != rows || tape.shape(c).0 != rows {
            return Err(Error::State(format!(
                "recurrent state has {} rows for {rows} nodes",
                tape.shape(h).0
            )));
        }
        let x = tape.constant(batch.node_features.select(Axis(1), &self.node_columns));
        let encoded = self.node_encoder.forward(tape, &self.params, x)?;
        let (nodes, h, c) = match &self.lstm {
            Some(lstm) => {
                let (h2, c2) = lstm.step(tape, &self.params, encoded, h, c)?;
                (h2, h2, c2)
            }
            None => (encoded, h, c),
        };
        let mut edges = [nodes; 3];
        for (k, ty) in EDGE_TYPES.iter().enumerate() {
            let e = tape.constant(batch.edges(*ty).features.clone());
            edges[k] = self.edge_encoders[k].forward(tape, &self.params, e)?;
        }
        Ok((Latent { nodes, edges }, h, c))
    }

    pub fn process(&self, tape: &mut Tape, batch: &GraphBatch, mut latent: Latent) -> Result<Latent> {
        let rows = batch.num_nodes();
        for round in &self.rounds {
            let mut aggregates = Vec::with_capacity(3);
            let mut next_edges = latent.edges;
            for (k, ty) in EDGE_TYPES.iter().enumerate() {
                let set = batch.edges(*ty);
                let src = tape.gather_rows(latent.nodes, &set.src);
                let dst = tape.gather_rows(latent.nodes, &set.dst);
                let input = tape.concat_cols(&[src, dst, latent.edges[k]]);
                let msg = round.messages[k].forward(tape, &self.params, input)?;
                next_edges[k] = msg;
                aggregates.push(tape.scatter_add_rows(msg, &set.dst, rows));
            }
            let input = tape.concat_cols(&[latent.nodes, aggregates[0], aggregates[1], aggregates[2]]);
            latent = Latent {
                nodes: round.update.forward(tape, &self.params, input)?,
                edges: next_edges,
            };
        }
        Ok(latent)
    }

    pub fn decode(&self, tape: &mut Tape, batch: &GraphBatch, latent: Latent) -> Result<Decoded> {
        let endcaps = tape.gather_rows(latent.nodes, &batch.endcap_rows);
        let raw_v = self.node_decoder.forward(tape, &self.params, endcaps)?;
        let delta_v = tape.scale_cols(raw_v, &self.output_scale.velocity);
        let delta_rest = match self.config.motor_mode {
            MotorMode::Learned => {
                let cables = tape.gather_rows(latent.edges[1], &batch.canonical_cable_rows);
                let raw = self.cable_decoder.forward(tape, &self.params, cables)?;
                tape.scale_cols(raw, &self.output_scale.rest)
            }
            MotorMode::Analytical => tape.constant(batch.analytic_rest.clone()),
            MotorMode::GroundTruth => tape.constant(batch.logged_rest.clone()),
        };
        Ok(Decoded { delta_v, delta_rest })
    }

    /// Encode, process and decode one batch, returning the decoded handles and
    /// the next recurrent state handles.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        h: Var,
        c: Var,
    ) -> Result<(Decoded, Var, Var)> {
        let (latent, h, c) = self.encode(tape, batch, h, c)?;
        let latent = self.process(tape, batch, latent)?;
        Ok((self.decode(tape, batch, latent)?, h, c))
    }

    /// Inference over several independent graphs in one batched pass.
    pub fn predict_many(
        &self,
        graphs: &[&GraphSnapshot],
        states: &[&RecurrentState],
    ) -> Result<Vec<(PredictionBlock, RecurrentState)>> {
        if graphs.len() != states.len() {
            return Err(Error::State("one recurrent state per graph required".into()));
        }
        for (g, s) in graphs.iter().zip(states) {
            if s.num_nodes() != g.num_nodes() {
                return Err(Error::State(format!(
                    "recurrent state has {} nodes, graph has {}",
                    s.num_nodes(),
                    g.num_nodes()
                )));
            }
        }
        let batch = GraphBatch::new(graphs)?;
        let stacked = RecurrentState::stack(states);
        let mut tape = Tape::new();
        let h = tape.constant(stacked.h);
        let c = tape.constant(stacked.c);
        let (dec, h, c) = self.forward(&mut tape, &batch, h, c)?;
        let next = RecurrentState {
            h: tape.value(h).clone(),
            c: tape.value(c).clone(),
        };
        let sizes: Vec<_> = graphs.iter().map(|g| g.num_nodes()).collect();
        let next = next.split(&sizes);
        Ok(split_predictions(&tape, dec, graphs, self.config.n)
            .into_iter()
            .zip(next)
            .collect())
    }

    pub fn predict(
        &self,
        graph: &GraphSnapshot,
        state: &RecurrentState,
    ) -> Result<(PredictionBlock, RecurrentState)> {
        Ok(self.predict_many(&[graph], &[state])?.remove(0))
    }
}

/// Unpacks batched decoder outputs into one block per graph.
pub fn split_predictions(
    tape: &Tape,
    dec: Decoded,
    graphs: &[&GraphSnapshot],
    n: usize,
) -> Vec<PredictionBlock> {
    let dv = tape.value(dec.delta_v);
    let dr = tape.value(dec.delta_rest);
    let (mut vrow, mut rrow) = (0, 0);
    graphs
        .iter()
        .map(|g| {
            let endcaps = g.num_nodes() - 1;
            let delta_v = (0..endcaps)
                .map(|i| {
                    let r = dv.row(vrow + i);
                    (0..n).map(|k| [r[3 * k], r[3 * k + 1], r[3 * k + 2]]).collect()
                })
                .collect();
            let delta_rest = (0..g.num_cables())
                .map(|j| dr.row(rrow + j).to_vec())
                .collect();
            vrow += endcaps;
            rrow += g.num_cables();
            PredictionBlock { delta_v, delta_rest }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{build_graph_raw, GraphInputs};
    use crate::topology::{build_three_bar, three_bar_nominal_positions};
    use nalgebra::Vector3;

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            latent_width: 8,
            hidden_width: 8,
            message_passes: 2,
            n: 2,
            num_hidden_layers: 1,
            ..ModelConfig::default()
        }
        .with_variant(variant)
    }

    fn graph_cfg() -> GraphConfig {
        GraphConfig {
            h: 2,
            n: 2,
            ..GraphConfig::default()
        }
    }

    fn inputs(offset: Vector3<f64>) -> GraphInputs {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        GraphInputs {
            positions: three_bar_nominal_positions(1.0)
                .into_iter()
                .map(|p| p + offset + Vector3::new(0.0, 0.0, 0.02))
                .collect(),
            velocities: (0..6).map(|i| Vector3::new(0.1 * i as f64, -0.05, 0.02)).collect(),
            rest_lengths: topo.initial_rest_lengths(),
            controls_window: (0..4).map(|k| vec![0.3 * k as f64 - 0.4; 9]).collect(),
            dataset_id: 0,
        }
    }

    fn graph(offset: Vector3<f64>) -> GraphSnapshot {
        let topo = build_three_bar(1.0, 0.3).unwrap();
        build_graph_raw(&inputs(offset), &topo, &graph_cfg()).unwrap()
    }

    #[test]
    fn output_shapes() {
        let model = Model::new(small(Variant::FcrGnnLearnedMotor), graph_cfg(), 1).unwrap();
        let g = graph(Vector3::zeros());
        let (p, s) = model.predict(&g, &model.fresh_state(7)).unwrap();
        assert_eq!(p.delta_v.len(), 6);
        assert!(p.delta_v.iter().all(|v| v.len() == 2));
        assert_eq!(p.delta_rest.len(), 9);
        assert!(p.delta_rest.iter().all(|v| v.len() == 2));
        assert_eq!(s.h.dim(), (7, 8));
    }

    #[test]
    fn zero_decoders_give_zero_deltas() {
        let mut model = Model::new(small(Variant::FcrGnnLearnedMotor), graph_cfg(), 1).unwrap();
        let (a, b) = model.decoder_param_ids();
        for id in a.into_iter().chain(b) {
            model.params.values_mut(id).fill(0.0);
        }
        let (p, _) = model.predict(&graph(Vector3::zeros()), &model.fresh_state(7)).unwrap();
        assert!(p.delta_v.iter().flatten().flatten().all(|&v| v == 0.0));
        assert!(p.delta_rest.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn analytical_motor_with_zero_controls() {
        let model = Model::new(small(Variant::FcrGnn), graph_cfg(), 1)
            .map(|mut m| {
                m.config.motor_mode = MotorMode::Analytical;
                m
            })
            .unwrap();
        let topo = build_three_bar(1.0, 0.3).unwrap();
        let mut i = inputs(Vector3::zeros());
        i.controls_window = vec![vec![0.0; 9]; 4];
        let g = build_graph_raw(&i, &topo, &graph_cfg()).unwrap();
        let (p, _) = model.predict(&g, &model.fresh_state(7)).unwrap();
        assert!(p.delta_rest.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn recurrence_switch() {
        let g = graph(Vector3::zeros());
        let off = Model::new(small(Variant::FcGnn), graph_cfg(), 3).unwrap();
        let mut noisy = off.fresh_state(7);
        noisy.h.fill(0.7);
        noisy.c.fill(-0.3);
        let (a, _) = off.predict(&g, &off.fresh_state(7)).unwrap();
        let (b, _) = off.predict(&g, &noisy).unwrap();
        assert_eq!(a, b);

        let on = Model::new(small(Variant::FcrGnn), graph_cfg(), 3).unwrap();
        let (_, s1) = on.predict(&g, &on.fresh_state(7)).unwrap();
        let (_, s2) = on.predict(&g, &s1).unwrap();
        assert_ne!(s1.h, s2.h);
    }

    #[test]
    fn state_row_mismatch() {
        let model = Model::new(small(Variant::FcrGnn), graph_cfg(), 1).unwrap();
        assert!(matches!(
            model.predict(&graph(Vector3::zeros()), &model.fresh_state(5)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn horizontal_translation_invariance_without_config_features() {
        let model = Model::new(small(Variant::FGnn), graph_cfg(), 5).unwrap();
        let (a, _) = model.predict(&graph(Vector3::zeros()), &model.fresh_state(7)).unwrap();
        let (b, _) = model
            .predict(&graph(Vector3::new(4.0, -7.5, 0.0)), &model.fresh_state(7))
            .unwrap();
        for (x, y) in a.delta_v.iter().flatten().zip(b.delta_v.iter().flatten()) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn edge_order_permutation_is_harmless() {
        let model = Model::new(small(Variant::FcrGnnLearnedMotor), graph_cfg(), 2).unwrap();
        let g = graph(Vector3::zeros());
        let mut p = g.clone();
        let m = p.body.len();
        let perm: Vec<usize> = (0..m).rev().collect();
        p.body.src = perm.iter().map(|&i| g.body.src[i]).collect();
        p.body.dst = perm.iter().map(|&i| g.body.dst[i]).collect();
        p.body.features = g.body.features.select(Axis(0), &perm);
        let (a, _) = model.predict(&g, &model.fresh_state(7)).unwrap();
        let (b, _) = model.predict(&p, &model.fresh_state(7)).unwrap();
        for (x, y) in a.delta_v.iter().flatten().zip(b.delta_v.iter().flatten()) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_equals_individual() {
        let model = Model::new(small(Variant::FcrGnnLearnedMotor), graph_cfg(), 4).unwrap();
        let g1 = graph(Vector3::zeros());
        let g2 = graph(Vector3::new(0.0, 0.0, 0.5));
        let s = model.fresh_state(7);
        let both = model.predict_many(&[&g1, &g2], &[&s, &s]).unwrap();
        let (a, _) = model.predict(&g1, &s).unwrap();
        let (b, _) = model.predict(&g2, &s).unwrap();
        let close = |x: &PredictionBlock, y: &PredictionBlock| {
            x.delta_v
                .iter()
                .flatten()
                .zip(y.delta_v.iter().flatten())
                .all(|(p, q)| (0..3).all(|k| (p[k] - q[k]).abs() < 1e-12))
        };
        assert!(close(&both[0].0, &a));
        assert!(close(&both[1].0, &b));
    }
}
