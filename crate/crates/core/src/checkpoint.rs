//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic  b"MFCK"
//! u32    format version (1)
//! u8     dimension (2 or 3)
//! u8     hidden activation tag (1 = tanh)
//! u32    number of layer sizes L
//! u64*L  layer sizes
//! u64    number of parameters P
//! f64*P  parameters, layer order, row-major weights then biases
//! f64*2  log(a1^2), log(a2^2)
//! f64*3  stencil steps h1, h2, h3
//! ```

use std::path::Path;

use crate::error::{MeshError, Result};
use crate::network::Network;
use crate::stencil::StencilConfig;
use crate::trainer::{TrainedModel, UncertaintyParams};

const MAGIC: &[u8; 4] = b"MFCK";
const VERSION: u32 = 1;
const TANH: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: Network,
    pub uncertainty: UncertaintyParams,
    pub stencil: StencilConfig,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel) -> Self {
        Checkpoint { net: model.net.clone(), uncertainty: model.uncertainty, stencil: model.stencil }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.net.layer_sizes();
        let mut b = Vec::with_capacity(32 + 8 * (sizes.len() + self.net.num_params() + 5));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(self.net.dim().n() as u8);
        b.push(TANH);
        b.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            b.extend_from_slice(&(s as u64).to_le_bytes());
        }
        b.extend_from_slice(&(self.net.num_params() as u64).to_le_bytes());
        let floats = self
            .net
            .params()
            .iter()
            .chain(&self.uncertainty.log_a_sq)
            .chain(&self.stencil.h);
        for v in floats {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(r.err("not a meshforge checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(&format!("unsupported checkpoint version {version}")));
        }
        let dim = r.take(1)?[0] as usize;
        if r.take(1)?[0] != TANH {
            return Err(r.err("unknown activation tag"));
        }
        let n_sizes = r.u32()? as usize;
        let sizes = (0..n_sizes).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n_params = r.u64()? as usize;
        if n_params > bytes.len() / 8 {
            return Err(r.err("parameter count exceeds file size"));
        }
        let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let log_a_sq = [r.f64()?, r.f64()?];
        let h = [r.f64()?, r.f64()?, r.f64()?];
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        let net = Network::from_parts(sizes, params).map_err(|e| r.err(&e.to_string()))?;
        if net.dim().n() != dim {
            return Err(r.err("dimension field disagrees with layer sizes"));
        }
        let stencil = StencilConfig { h };
        stencil.validate().map_err(|e| r.err(&e.to_string()))?;
        Ok(Checkpoint { net, uncertainty: UncertaintyParams { log_a_sq }, stencil })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| MeshError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| MeshError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> MeshError {
        MeshError::parse(self.origin, format!("{msg} (byte {})", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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
