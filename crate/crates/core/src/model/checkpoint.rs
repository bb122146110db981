//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "SPED"  u32 version  u32 layer_count
//! layer_count x (u32 rows, u32 cols)
//! every weight matrix, row-major f32, in layer order
//! every bias vector, f32, in layer order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, ClassifierModel, Layer, Network};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"SPED";
pub const VERSION: u32 = 1;

pub fn encode(model: &ClassifierModel) -> Vec<u8> {
    let layers = model.layers();
    let mut out = Vec::with_capacity(12 + 8 * layers.len() + 4 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.weights.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(l.weights.cols() as u32).to_le_bytes());
    }
    for l in layers {
        for w in l.weights.as_slice() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    for l in layers {
        for b in &l.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint. The activation is not stored in the file and must be supplied.
pub fn decode(bytes: &[u8], activation: Activation) -> Result<ClassifierModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported"
        )));
    }
    let count = cur.u32()? as usize;
    if count < 2 || count > 1024 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        dims.push((rows, cols));
    }
    let expected: usize = dims.iter().map(|(r, c)| r * c + c).sum::<usize>() * 4;
    if bytes.len() - cur.pos != expected {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, header implies {expected}",
            bytes.len() - cur.pos
        )));
    }
    let mut weights = Vec::with_capacity(count);
    for &(rows, cols) in &dims {
        let data = (0..rows * cols)
            .map(|_| cur.f32())
            .collect::<Result<Vec<_>>>()?;
        weights.push(Matrix::from_vec(rows, cols, data)?);
    }
    let mut layers = Vec::with_capacity(count);
    for (w, &(_, cols)) in weights.into_iter().zip(&dims) {
        let bias = (0..cols).map(|_| cur.f32()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer { weights: w, bias });
    }
    let model = Network::from_layers(layers, activation)
        .map_err(|e| Error::Format(format!("inconsistent layer shapes: {e}")))?;
    if !model.all_finite() {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    Ok(model)
}

pub fn save(model: &ClassifierModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load(path: &Path, activation: Activation) -> Result<ClassifierModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes, activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    #[test]
    fn header_layout_is_exact() {
        let m = init_model(&ModelConfig::new(16)).unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"SPED");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        let dims: Vec<u32> = bytes[12..36]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![16, 64, 64, 32, 32, 4]);
        let first_weight = f32::from_le_bytes(bytes[36..40].try_into().unwrap());
        assert_eq!(first_weight, m.layers()[0].weights.get(0, 0));
        assert_eq!(bytes.len(), 36 + 4 * m.num_params());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = init_model(&ModelConfig {
            seed: 77,
            ..ModelConfig::new(5)
        })
        .unwrap();
        let back = decode(&encode(&m), Activation::Relu).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn corrupt_headers_are_format_errors() {
        let m = init_model(&ModelConfig::new(5)).unwrap();
        let mut bytes = encode(&m);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, Activation::Relu), Err(Error::Format(_))));
        let bytes = encode(&m);
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1], Activation::Relu),
            Err(Error::Format(_))
        ));
    }
}
