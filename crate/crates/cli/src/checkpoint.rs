//! Binary checkpoints of the unperturbed discriminator and generator weights.
//!
//! Layout: the six bytes `BCGAN1`, then for the discriminator and then the
//! generator: a `u64` layer count, `(out_dim, in_dim)` as two `u64` per
//! layer, then every layer's weight matrix (row-major, `out × in`) followed
//! by its bias, as `f64`. All integers and reals are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use bcgan::nn::{Layer, ParamSet};
use bcgan::Matrix;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 6] = b"BCGAN1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub theta: ParamSet,
    pub omega: ParamSet,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for net in [&self.theta, &self.omega] {
            out.extend_from_slice(&(net.num_layers() as u64).to_le_bytes());
            for layer in net.layers() {
                out.extend_from_slice(&(layer.out_dim() as u64).to_le_bytes());
                out.extend_from_slice(&(layer.in_dim() as u64).to_le_bytes());
            }
            for block in net.blocks() {
                for v in block {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CliError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let theta = r.network("discriminator")?;
        let omega = r.network("generator")?;
        if r.pos != bytes.len() {
            return Err(CliError::Checkpoint(format!(
                "{} trailing bytes after the generator",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { theta, omega })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)
            .map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CliError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("eight bytes"));
        usize::try_from(v).map_err(|_| CliError::Checkpoint(format!("size {v} does not fit in memory")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CliError::Checkpoint(format!("layer of {rows}x{cols} is too large")))?;
        let data = self
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data)?)
    }

    fn network(&mut self, what: &str) -> Result<ParamSet> {
        let count = self.u64()?;
        if count == 0 {
            return Err(CliError::Checkpoint(format!("{what} has no layers")));
        }
        let dims = (0..count)
            .map(|_| Ok((self.u64()?, self.u64()?)))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(count);
        for (out_dim, in_dim) in dims {
            let w = self.matrix(out_dim, in_dim)?;
            let b = self.matrix(out_dim, 1)?;
            layers.push(Layer { w, b });
        }
        ParamSet::new(layers).map_err(|e| CliError::Checkpoint(format!("{what}: {e}")))
    }
}
