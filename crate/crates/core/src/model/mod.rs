//! Utterance-embedding network: stacked LSTM layers over log-mel frames, a
//! linear projection of the final top-layer hidden state, and L2
//! normalisation. Also carries the two loss-head scalars (`w_scale`,
//! `b_shift`) so the whole trainable state lives in one [`ModelParams`].
//!
//! Packed gate order in `W`, `U` and `b` is `[i, f, g, o]`.

mod checkpoint;
mod quant;

pub use checkpoint::{
    read_checkpoint, read_quantized_checkpoint, write_checkpoint, write_quantized_checkpoint,
    CheckpointError,
};
pub use quant::{dequantize, quantize_int8, QuantizedModel, QuantizedTensor};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Var};
use crate::exec::Exec;
use crate::frontend::FeatureMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite weight in tensor {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    /// Fixed (not learned, not per-utterance) input affine: `(x - input_offset) * input_scale`.
    pub input_offset: f32,
    pub input_scale: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 40,
            num_layers: 3,
            hidden_dim: 384,
            embedding_dim: 128,
            input_offset: DEFAULT_INPUT_OFFSET,
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }
}

pub const DEFAULT_INPUT_OFFSET: f32 = 0.0;
pub const DEFAULT_INPUT_SCALE: f32 = 0.1;

impl ModelConfig {
    /// Small stack used for desk-scale toy runs.
    pub fn toy() -> Self {
        Self {
            hidden_dim: 32,
            embedding_dim: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_layers == 0 || self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(ModelError::InvalidConfig(format!("all dimensions must be positive: {self:?}")));
        }
        if !(self.input_scale.is_finite() && self.input_offset.is_finite()) {
            return Err(ModelError::InvalidConfig("input transform must be finite".into()));
        }
        Ok(())
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// `Σ_layers 4h(in + h + 1) + (h·e + e)`. Loss-head scalars are not counted.
pub fn count_params(config: &ModelConfig) -> usize {
    let h = config.hidden_dim;
    let lstm: usize = (0..config.num_layers)
        .map(|l| 4 * h * (config.layer_input_dim(l) + h + 1))
        .sum();
    lstm + h * config.embedding_dim + config.embedding_dim
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    /// `4h × in`
    pub w: Array2<T>,
    /// `4h × h`
    pub u: Array2<T>,
    /// `1 × 4h`
    pub b: Array2<T>,
}

impl<T: Real> LstmLayer<T> {
    pub fn hidden_dim(&self) -> usize {
        self.u.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layers: Vec<LstmLayer<T>>,
    /// `e × h`
    pub proj_w: Array2<T>,
    /// `1 × e`
    pub proj_b: Array2<T>,
    /// `1 × 1`, kept positive by [`ModelParams::clamp_loss_scale`].
    pub w_scale: Array2<T>,
    /// `1 × 1`
    pub b_shift: Array2<T>,
}

pub const INIT_W_SCALE: f64 = 10.0;
pub const INIT_B_SHIFT: f64 = -5.0;
pub const MIN_W_SCALE: f64 = 1e-3;

fn xavier<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64(rng.random_range(-limit..limit)).unwrap())
}

pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let layers = (0..config.num_layers)
        .map(|l| {
            let w = xavier(&mut rng, 4 * h, config.layer_input_dim(l));
            let u = xavier(&mut rng, 4 * h, h);
            let mut b = Array2::zeros((1, 4 * h));
            b.slice_mut(s![.., h..2 * h]).fill(T::one());
            LstmLayer { w, u, b }
        })
        .collect();
    let proj_w = xavier(&mut rng, config.embedding_dim, h);
    Ok(ModelParams {
        config: *config,
        layers,
        proj_w,
        proj_b: Array2::zeros((1, config.embedding_dim)),
        w_scale: Array2::from_elem((1, 1), T::from_f64(INIT_W_SCALE).unwrap()),
        b_shift: Array2::from_elem((1, 1), T::from_f64(INIT_B_SHIFT).unwrap()),
    })
}

impl<T: Real> ModelParams<T> {
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.layers.len() {
            names.extend([format!("lstm.{l}.w"), format!("lstm.{l}.u"), format!("lstm.{l}.b")]);
        }
        names.extend(["proj.w", "proj.b", "loss.w_scale", "loss.b_shift"].map(String::from));
        names
    }

    /// All trainable tensors in a fixed order (matches [`Self::tensor_names`]).
    pub fn tensors(&self) -> Vec<&Array2<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([&l.w, &l.u, &l.b]);
        }
        out.extend([&self.proj_w, &self.proj_b, &self.w_scale, &self.b_shift]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        out.extend([
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.w_scale,
            &mut self.b_shift,
        ]);
        out
    }

    /// Rebuilds params from tensors in [`Self::tensor_names`] order, checking shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Array2<T>>) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if tensors.len() != expected.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (t, want)) in tensors.iter().zip(&expected).enumerate() {
            if t.dim() != *want {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {i}: expected {want:?}, got {:?}",
                    t.dim()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().unwrap();
        let layers = (0..config.num_layers)
            .map(|_| LstmLayer {
                w: next(),
                u: next(),
                b: next(),
            })
            .collect();
        Ok(Self {
            config,
            layers,
            proj_w: next(),
            proj_b: next(),
            w_scale: next(),
            b_shift: next(),
        })
    }

    pub fn w_scale(&self) -> T {
        self.w_scale[[0, 0]]
    }

    pub fn b_shift(&self) -> T {
        self.b_shift[[0, 0]]
    }

    /// Keeps `w_scale` strictly positive after an optimizer step.
    pub fn clamp_loss_scale(&mut self) {
        let min = T::from_f64(MIN_W_SCALE).unwrap();
        if !(self.w_scale[[0, 0]] >= min) {
            self.w_scale[[0, 0]] = min;
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let c = |a: &Array2<T>| a.mapv(|x| U::from_f64(x.to_f64().unwrap()).unwrap());
        ModelParams {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w: c(&l.w),
                    u: c(&l.u),
                    b: c(&l.b),
                })
                .collect(),
            proj_w: c(&self.proj_w),
            proj_b: c(&self.proj_b),
            w_scale: c(&self.w_scale),
            b_shift: c(&self.b_shift),
        }
    }

    /// Places every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                w: tape.param(l.w.clone()),
                u: tape.param(l.u.clone()),
                b: tape.param(l.b.clone()),
            })
            .collect();
        BoundParams {
            layers,
            proj_w: tape.param(self.proj_w.clone()),
            proj_b: tape.param(self.proj_b.clone()),
            w_scale: tape.param(self.w_scale.clone()),
            b_shift: tape.param(self.b_shift.clone()),
        }
    }
}

fn expected_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
    let h = config.hidden_dim;
    let mut out = Vec::new();
    for l in 0..config.num_layers {
        out.extend([(4 * h, config.layer_input_dim(l)), (4 * h, h), (1, 4 * h)]);
    }
    out.extend([(config.embedding_dim, h), (1, config.embedding_dim), (1, 1), (1, 1)]);
    out
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Tape handles for every tensor of a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub layers: Vec<BoundLayer>,
    pub proj_w: Var,
    pub proj_b: Var,
    pub w_scale: Var,
    pub b_shift: Var,
}

impl BoundParams {
    /// Handles in the same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([l.w, l.u, l.b]);
        }
        out.extend([self.proj_w, self.proj_b, self.w_scale, self.b_shift]);
        out
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One LSTM step over a batch of rows: `x` is `n × in`, `h`/`c` are `n × hidden`.
pub fn lstm_cell<T: Real>(
    x: ArrayView2<T>,
    h_prev: ArrayView2<T>,
    c_prev: ArrayView2<T>,
    layer: &LstmLayer<T>,
) -> Result<(Array2<T>, Array2<T>)> {
    let hd = layer.hidden_dim();
    let n = x.nrows();
    if x.ncols() != layer.w.ncols() || h_prev.dim() != (n, hd) || c_prev.dim() != (n, hd) {
        return Err(ModelError::ShapeMismatch(format!(
            "lstm_cell: x {:?}, h {:?}, c {:?} for layer with W {:?}",
            x.dim(),
            h_prev.dim(),
            c_prev.dim(),
            layer.w.dim()
        )));
    }
    let mut gates = x.dot(&layer.w.t()) + h_prev.dot(&layer.u.t());
    gates += &layer.b;
    let i = gates.slice(s![.., 0..hd]).mapv(sigmoid);
    let f = gates.slice(s![.., hd..2 * hd]).mapv(sigmoid);
    let g = gates.slice(s![.., 2 * hd..3 * hd]).mapv(T::tanh);
    let o = gates.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
    let c = &f * &c_prev + &i * &g;
    let h = &o * &c.mapv(T::tanh);
    Ok((h, c))
}

fn input_rows<T: Real>(config: &ModelConfig, feats: &[&FeatureMatrix], t: usize) -> (Array2<T>, Vec<bool>) {
    let mut x = Array2::zeros((feats.len(), config.input_dim));
    let mut active = vec![false; feats.len()];
    let (off, sc) = (config.input_offset, config.input_scale);
    for (r, f) in feats.iter().enumerate() {
        if t < f.num_frames() {
            active[r] = true;
            Zip::from(x.row_mut(r))
                .and(f.frames().row(t))
                .for_each(|dst, &v| *dst = T::from_f32((v - off) * sc).unwrap());
        }
    }
    (x, active)
}

fn check_inputs(config: &ModelConfig, feats: &[&FeatureMatrix]) -> Result<usize> {
    if feats.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    for f in feats {
        if f.num_frames() == 0 {
            return Err(ModelError::EmptyInput);
        }
        if f.dim() != config.input_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "features have {} columns, model expects {}",
                f.dim(),
                config.input_dim
            )));
        }
    }
    Ok(feats.iter().map(|f| f.num_frames()).max().unwrap())
}

/// Embeds a batch of utterances of possibly different lengths. Each row's
/// state freezes after its last frame, so the result equals embedding each
/// utterance on its own.
pub fn embed_batch<T: Real>(feats: &[&FeatureMatrix], params: &ModelParams<T>) -> Result<Array2<T>> {
    let cfg = &params.config;
    let max_t = check_inputs(cfg, feats)?;
    let n = feats.len();
    let hd = cfg.hidden_dim;
    let mut hs: Vec<Array2<T>> = vec![Array2::zeros((n, hd)); cfg.num_layers];
    let mut cs = hs.clone();
    for t in 0..max_t {
        let (x, active) = input_rows::<T>(cfg, feats, t);
        let mut input = x;
        for (l, layer) in params.layers.iter().enumerate() {
            let (h_new, c_new) = lstm_cell(input.view(), hs[l].view(), cs[l].view(), layer)?;
            for (r, &a) in active.iter().enumerate() {
                if a {
                    hs[l].row_mut(r).assign(&h_new.row(r));
                    cs[l].row_mut(r).assign(&c_new.row(r));
                }
            }
            input = hs[l].clone();
        }
    }
    let top = &hs[cfg.num_layers - 1];
    let mut e = top.dot(&params.proj_w.t()) + &params.proj_b;
    for (r, mut row) in e.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > T::from_f64(1e-12).unwrap()) {
            return Err(ModelError::Autodiff(AutodiffError::ZeroNorm {
                op: "embed_batch",
                row: r,
            }));
        }
        row.mapv_inplace(|v| v / norm);
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Autodiff(AutodiffError::NonFinite { op: "embed_batch" }));
    }
    Ok(e)
}

/// Unit-norm embedding of one utterance.
pub fn embed_utterance<T: Real>(features: &FeatureMatrix, params: &ModelParams<T>) -> Result<Array1<T>> {
    Ok(embed_batch(&[features], params)?.row(0).to_owned())
}

/// Embeds many utterances, `chunk` at a time, in input order.
pub fn embed_all<T: Real>(
    feats: &[&FeatureMatrix],
    params: &ModelParams<T>,
    chunk: usize,
    exec: Exec,
) -> Result<Array2<T>> {
    if feats.is_empty() {
        return Ok(Array2::zeros((0, params.config.embedding_dim)));
    }
    let chunks: Vec<&[&FeatureMatrix]> = feats.chunks(chunk.max(1)).collect();
    let parts = exec.map(&chunks, |c| embed_batch(c, params));
    let parts: Vec<Array2<T>> = parts.into_iter().collect::<Result<_>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
}

/// Same computation as [`embed_batch`], recorded on a tape. Returns the
/// `n × e` embedding node.
pub fn embed_batch_on_tape<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    config: &ModelConfig,
    feats: &[&FeatureMatrix],
) -> Result<Var> {
    let max_t = check_inputs(config, feats)?;
    let n = feats.len();
    let hd = config.hidden_dim;
    let mut hs: Vec<Option<Var>> = vec![None; config.num_layers];
    let mut cs: Vec<Option<Var>> = vec![None; config.num_layers];

    for t in 0..max_t {
        let (x, active) = input_rows::<T>(config, feats, t);
        let all_active = active.iter().all(|&a| a);
        let mask = (!all_active).then(|| {
            let m = Array2::from_shape_fn((n, hd), |(r, _)| if active[r] { T::one() } else { T::zero() });
            tape.constant(m)
        });
        let mut input = tape.constant(x);
        for (l, layer) in bound.layers.iter().enumerate() {
            let mut gates = tape.matmul_t(input, layer.w)?;
            if let Some(h) = hs[l] {
                let rec = tape.matmul_t(h, layer.u)?;
                gates = tape.add(gates, rec)?;
            }
            gates = tape.add_row(gates, layer.b)?;
            let i = tape.slice_cols(gates, 0, hd)?;
            let f = tape.slice_cols(gates, hd, hd)?;
            let g = tape.slice_cols(gates, 2 * hd, hd)?;
            let o = tape.slice_cols(gates, 3 * hd, hd)?;
            let i = tape.sigmoid(i)?;
            let g = tape.tanh(g)?;
            let o = tape.sigmoid(o)?;
            let mut c_new = tape.mul(i, g)?;
            if let Some(c) = cs[l] {
                let f = tape.sigmoid(f)?;
                let keep = tape.mul(f, c)?;
                c_new = tape.add(keep, c_new)?;
            }
            let tc = tape.tanh(c_new)?;
            let h_new = tape.mul(o, tc)?;
            let (h_next, c_next) = match (mask, hs[l], cs[l]) {
                (Some(m), Some(h), Some(c)) => (masked_update(tape, m, h, h_new)?, masked_update(tape, m, c, c_new)?),
                (Some(m), _, _) => (tape.mul(m, h_new)?, tape.mul(m, c_new)?),
                (None, _, _) => (h_new, c_new),
            };
            hs[l] = Some(h_next);
            cs[l] = Some(c_next);
            input = h_next;
        }
    }
    let top = hs[config.num_layers - 1].expect("at least one frame");
    let p = tape.matmul_t(top, bound.proj_w)?;
    let p = tape.add_row(p, bound.proj_b)?;
    Ok(tape.l2_normalize_rows(p)?)
}

/// `prev + mask ⊙ (new - prev)`
fn masked_update<T: Real>(tape: &mut Tape<T>, mask: Var, prev: Var, new: Var) -> Result<Var> {
    let d = tape.sub(new, prev)?;
    let d = tape.mul(mask, d)?;
    Ok(tape.add(prev, d)?)
}
