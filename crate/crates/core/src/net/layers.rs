use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_width: usize,
    pub hidden_width: usize,
    pub out_width: usize,
    pub num_hidden_layers: usize,
    pub activation: Activation,
    pub layer_norm_output: bool,
}

impl MlpSpec {
    pub fn new(in_width: usize, hidden_width: usize, out_width: usize, hidden_layers: usize) -> Self {
        Self {
            in_width,
            hidden_width,
            out_width,
            num_hidden_layers: hidden_layers,
            activation: Activation::Relu,
            layer_norm_output: false,
        }
    }

    pub fn with_layer_norm(mut self) -> Self {
        self.layer_norm_output = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.in_width == 0 || self.hidden_width == 0 || self.out_width == 0 {
            return Err(Error::InvalidParameter("MLP widths must be > 0".into()));
        }
        if self.num_hidden_layers < 1 {
            return Err(Error::InvalidParameter("MLP needs at least one hidden layer".into()));
        }
        Ok(())
    }
}

/// Affine + activation hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
    norm: Option<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut widths = vec![spec.in_width];
        widths.extend(std::iter::repeat_n(spec.hidden_width, spec.num_hidden_layers));
        widths.push(spec.out_width);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add(format!("{name}.w{i}"), w[0], w[1], Init::Xavier, rng);
                let bias = store.add(format!("{name}.b{i}"), 1, w[1], Init::Constant(0.0), rng);
                (weight, bias)
            })
            .collect();
        let norm = spec.layer_norm_output.then(|| {
            (
                store.add(format!("{name}.ln_gain"), 1, spec.out_width, Init::Constant(1.0), rng),
                store.add(format!("{name}.ln_bias"), 1, spec.out_width, Init::Constant(0.0), rng),
            )
        });
        Ok(Self { spec, layers, norm })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        if let Some((g, b)) = self.norm {
            ids.extend([g, b]);
        }
        ids
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.shape(x).1;
        if width != self.spec.in_width {
            return Err(Error::Shape(format!(
                "MLP expects width {}, got {width}",
                self.spec.in_width
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let z = tape.matmul(h, wv);
            h = tape.add_row(z, bv);
            if i < last {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        if let Some((g, b)) = self.norm {
            let gv = tape.param(store, g);
            let bv = tape.param(store, b);
            h = tape.layer_norm(h, gv, bv);
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input_width: usize,
    pub state_width: usize,
}

/// Standard LSTM cell with gates packed as `[i, f, g, o]` along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub spec: LstmSpec,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, spec: LstmSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.input_width == 0 || spec.state_width == 0 {
            return Err(Error::InvalidParameter("LSTM widths must be > 0".into()));
        }
        let s = spec.state_width;
        Ok(Self {
            spec,
            w_x: store.add(format!("{name}.w_x"), spec.input_width, 4 * s, Init::Xavier, rng),
            w_h: store.add(format!("{name}.w_h"), s, 4 * s, Init::Xavier, rng),
            bias: store.add(format!("{name}.b"), 1, 4 * s, Init::Constant(0.0), rng),
        })
    }

    /// One step for a batch of rows; returns `(H', C')`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let s = self.spec.state_width;
        let (rows, xw) = tape.shape(x);
        if xw != self.spec.input_width {
            return Err(Error::Shape(format!(
                "LSTM expects input width {}, got {xw}",
                self.spec.input_width
            )));
        }
        if tape.shape(h) != (rows, s) || tape.shape(c) != (rows, s) {
            return Err(Error::Shape(format!(
                "LSTM state must be {rows}x{s}, got {:?} and {:?}",
                tape.shape(h),
                tape.shape(c)
            )));
        }
        let wx = tape.param(store, self.w_x);
        let wh = tape.param(store, self.w_h);
        let b = tape.param(store, self.bias);
        let zx = tape.matmul(x, wx);
        let zh = tape.matmul(h, wh);
        let z = tape.add(zx, zh);
        let z = tape.add_row(z, b);
        let zi = tape.slice_cols(z, 0, s);
        let zf = tape.slice_cols(z, s, 2 * s);
        let zg = tape.slice_cols(z, 2 * s, 3 * s);
        let zo = tape.slice_cols(z, 3 * s, 4 * s);
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc);
        Ok((h_next, c_next))
    }
}
