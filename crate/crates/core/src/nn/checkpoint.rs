//! `PITAMLP1` checkpoints: magic, `u32` layer count, then per layer
//! `u32 out | u32 in | u8 activation | out*in f32 weights | out f32 biases`,
//! and finally the `u64` optimizer step counter. Little-endian throughout.

use ndarray::{Array1, Array2};

use super::{Activation, Dense, MlpModel, LEAKY_SLOPE};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PITAMLP1";

fn tag(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Sigmoid => 1,
        Activation::Softmax => 2,
        // the slope is not stored; tag 3 always means the hidden-layer slope
        Activation::LeakyRelu(_) => 3,
    }
}

fn activation(tag: u8) -> Option<Activation> {
    Some(match tag {
        0 => Activation::Identity,
        1 => Activation::Sigmoid,
        2 => Activation::Softmax,
        3 => Activation::LeakyRelu(LEAKY_SLOPE),
        _ => return None,
    })
}

pub fn write_checkpoint(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * model.num_params() + 9 * model.layers.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
        out.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
        out.push(tag(l.activation));
        for w in l.weights.iter() {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
        for b in l.bias.iter() {
            out.extend_from_slice(&(*b as f32).to_le_bytes());
        }
    }
    out.extend_from_slice(&model.steps.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("layer size overflow".into()))?;
        let raw = self.take(bytes)?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(vals)
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, expected PITAMLP1".into()));
    }
    let count = r.u32()?;
    if count == 0 {
        return Err(Error::Format("checkpoint has no layers".into()));
    }
    let mut layers = Vec::new();
    for k in 0..count {
        let outputs = r.u32()?;
        let inputs = r.u32()?;
        if outputs == 0 || inputs == 0 {
            return Err(Error::Format(format!("layer {k} has a zero dimension")));
        }
        let act = activation(r.take(1)?[0])
            .ok_or_else(|| Error::Format(format!("layer {k} has an unknown activation tag")))?;
        let weights = r.floats(
            outputs
                .checked_mul(inputs)
                .ok_or_else(|| Error::Format("layer size overflow".into()))?,
        )?;
        let bias = r.floats(outputs)?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((outputs, inputs), weights)
                .map_err(|e| Error::Format(e.to_string()))?,
            bias: Array1::from(bias),
            activation: act,
        });
    }
    let steps = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let mut model = MlpModel::from_layers(layers).map_err(|e| Error::Format(e.to_string()))?;
    model.steps = steps;
    Ok(model)
}
