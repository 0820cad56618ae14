// SPDX-License-Identifier: Apache-2.0

//! Binary checkpoints: model parameters, optimizer velocity, and the step
//! counter. All values little-endian; floats are stored bit-exact.
//!
//! Layout: `MSCK`, `u32` version, `u64` seed, `u64` step, `u32` input /
//! hidden / output dims, `f64` lr and momentum, then every parameter block
//! of the model followed by every block of the velocity, each as `u64`
//! length plus `f64` values.

use std::path::Path;

use super::{Model, OptState};
use crate::error::{MscError, Result};
use crate::objective::ReconHeads;
use crate::toytrain::EncoderParams;

const MAGIC: &[u8; 4] = b"MSCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    /// Number of completed steps.
    pub step: u64,
    pub model: Model,
    pub opt: OptState,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let e = &self.model.encoder;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for d in [e.input_dim(), e.hidden_dim(), e.output_dim()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.opt.lr.to_le_bytes());
        out.extend_from_slice(&self.opt.momentum.to_le_bytes());
        for m in [&self.model, &self.opt.velocity] {
            for (_, block) in m.blocks() {
                out.extend_from_slice(&(block.len() as u64).to_le_bytes());
                for v in block {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(MscError::parse(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(MscError::parse(4, format!("unsupported checkpoint version {version}")));
        }
        let seed = r.u64()?;
        let step = r.u64()?;
        let (c_in, hidden, out) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let lr = r.f64()?;
        let momentum = r.f64()?;
        let template = Model {
            encoder: EncoderParams::zeros(c_in, hidden, out),
            heads: ReconHeads::zeros(out),
        };
        let mut model = template.clone();
        let mut velocity = template;
        for m in [&mut model, &mut velocity] {
            for (name, block) in m.blocks_mut() {
                let at = r.pos as u64;
                let len = r.u64()?;
                if len != block.len() as u64 {
                    return Err(MscError::parse(at, format!("block {name}: expected {} values, found {len}", block.len())));
                }
                for v in block.iter_mut() {
                    *v = r.f64()?;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(MscError::parse(r.pos as u64, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            seed,
            step,
            model,
            opt: OptState { velocity, lr, momentum },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| MscError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| MscError::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(MscError::parse(self.pos as u64, "unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(3);
        let model = Model::init(6, 5, &mut rng);
        let mut opt = OptState::new(&model, 0.05, 0.9);
        opt.velocity = Model::init(6, 5, &mut rng);
        let ck = Checkpoint { seed: 11, step: 42, model, opt };
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut rng = Rng::new(3);
        let model = Model::init(4, 3, &mut rng);
        let ck = Checkpoint { seed: 1, step: 0, opt: OptState::new(&model, 0.1, 0.0), model };
        let bytes = ck.encode();
        match Checkpoint::decode(&bytes[..bytes.len() - 3]) {
            Err(MscError::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 8),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Checkpoint::decode(b"NOPE").is_err());
    }
}
