use ndarray::Array2;

use super::{ModelConfig, ModelError, ModelParams, Result};

/// Symmetric per-tensor int8: `value ≈ scale · q`, zero point 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub name: String,
    pub shape: (usize, usize),
    pub scale: f32,
    pub values: Vec<i8>,
}

impl QuantizedTensor {
    pub fn quantize(name: &str, w: &Array2<f32>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(name.to_string()));
        }
        let max_abs = w.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        // All-zero tensors get scale 1 so the scale is never zero.
        let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
        let s = scale as f64;
        let values = w
            .iter()
            .map(|&v| (v as f64 / s).round_ties_even().clamp(-127.0, 127.0) as i8)
            .collect();
        Ok(Self {
            name: name.to_string(),
            shape: w.dim(),
            scale,
            values,
        })
    }

    pub fn dequantize(&self) -> Array2<f32> {
        let data = self.values.iter().map(|&q| self.scale * q as f32).collect();
        Array2::from_shape_vec(self.shape, data).expect("shape matches value count")
    }

    /// Largest `|w - scale·q|` against the original tensor, in f64.
    pub fn max_error(&self, original: &Array2<f32>) -> f64 {
        original
            .iter()
            .zip(&self.values)
            .map(|(&w, &q)| (w as f64 - self.scale as f64 * q as f64).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub tensors: Vec<QuantizedTensor>,
}

impl QuantizedModel {
    /// Payload bytes: one byte per weight plus one f32 scale per tensor.
    pub fn payload_bytes(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len() + 4).sum()
    }
}

pub fn quantize_int8(params: &ModelParams<f32>) -> Result<QuantizedModel> {
    let tensors = params
        .tensor_names()
        .iter()
        .zip(params.tensors())
        .map(|(name, t)| QuantizedTensor::quantize(name, t))
        .collect::<Result<_>>()?;
    Ok(QuantizedModel {
        config: params.config,
        tensors,
    })
}

pub fn dequantize(model: &QuantizedModel) -> Result<ModelParams<f32>> {
    ModelParams::from_tensors(model.config, model.tensors.iter().map(|t| t.dequantize()).collect())
}
