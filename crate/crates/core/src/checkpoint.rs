//! Binary checkpoint: encoder parameters, center bank and momentum state.
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! magic "CTCLCKPT" | version | epochs_completed
//! n_dims | layer_dims[n_dims]
//! per layer: weight (out×in, row-major) | bias (out) | slopes (out, hidden layers only)
//! k | d | centers (k×d, row-major)
//! momentum, same layout as the parameters
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::centers::CenterBank;
use crate::encoder::{EncoderParams, Layer, MomentumState};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTCLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub centers: CenterBank,
    pub momentum: MomentumState,
    pub epochs_completed: u32,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_reals<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_layers(out: &mut Vec<u8>, layers: &[Layer]) {
    for l in layers {
        put_reals(out, l.weight.iter());
        put_reals(out, l.bias.iter());
        if let Some(s) = &l.slopes {
            put_reals(out, s.iter());
        }
    }
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
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn layers(&mut self, dims: &[usize]) -> Result<Vec<Layer>> {
        let last = dims.len() - 2;
        dims.windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (inp, out) = (w[0], w[1]);
                let weight = Array2::from_shape_vec((out, inp), self.reals(out * inp)?)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let bias = Array1::from(self.reals(out)?);
                let slopes = if l < last {
                    Some(Array1::from(self.reals(out)?))
                } else {
                    None
                };
                Ok(Layer {
                    weight,
                    bias,
                    slopes,
                })
            })
            .collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.epochs_completed);
        let dims = self.params.layer_dims();
        put_u32(&mut out, dims.len() as u32);
        for d in &dims {
            put_u32(&mut out, *d as u32);
        }
        put_layers(&mut out, self.params.layers());
        put_u32(&mut out, self.centers.num_classes() as u32);
        put_u32(&mut out, self.centers.dim() as u32);
        put_reals(&mut out, self.centers.view().iter());
        put_layers(&mut out, &self.momentum.layers);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let epochs_completed = r.u32()?;
        let n_dims = r.u32()? as usize;
        if !(3..=64).contains(&n_dims) {
            return Err(Error::Checkpoint(format!(
                "implausible layer count {n_dims}"
            )));
        }
        let dims = (0..n_dims)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let params = EncoderParams::from_layers(r.layers(&dims)?)?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        if d != params.embed_dim() || k != params.num_classes() {
            return Err(Error::Checkpoint(format!(
                "center bank {k}x{d} does not match encoder ({} classes, embed {})",
                params.num_classes(),
                params.embed_dim()
            )));
        }
        let centers = Array2::from_shape_vec((k, d), r.reals(k * d)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let centers = CenterBank::from_array(centers)?;
        let momentum = MomentumState {
            layers: r.layers(&dims)?,
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            params,
            centers,
            momentum,
            epochs_completed,
        })
    }

    /// Writes via a temporary file and rename so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
