//! Binary checkpoint container.
//!
//! Layout, all little-endian: magic `SCV1`; `d`, `n_h`, `K` as u32; `W1`,
//! `b1`, `W2`, `b2` as row-major f64; then the HMM as `K` and `l_min` (u32),
//! the `K x K` log-transition matrix, `K` mean lengths and `K` log priors
//! (f64). The HMM variant is a training setting and is not stored.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::hmm::{HmmParams, HmmVariant};
use crate::nnet::NetworkParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCV1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetworkParams,
    pub hmm: HmmParams,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.hmm.validate()?;
        if self.net.num_classes() != self.hmm.num_classes() {
            return Err(Error::Checkpoint(format!(
                "network has {} classes, HMM {}",
                self.net.num_classes(),
                self.hmm.num_classes()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let net = &self.net;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for n in [net.input_dim(), net.hidden_dim(), net.num_classes()] {
            out.extend_from_slice(&to_u32(n)?.to_le_bytes());
        }
        let floats = |out: &mut Vec<u8>, values: &mut dyn Iterator<Item = f64>| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        floats(&mut out, &mut net.w1.iter().copied());
        floats(&mut out, &mut net.b1.iter().copied());
        floats(&mut out, &mut net.w2.iter().copied());
        floats(&mut out, &mut net.b2.iter().copied());
        let hmm = &self.hmm;
        out.extend_from_slice(&to_u32(hmm.num_classes())?.to_le_bytes());
        out.extend_from_slice(&to_u32(hmm.min_length)?.to_le_bytes());
        floats(&mut out, &mut hmm.log_transitions.iter().copied());
        floats(&mut out, &mut hmm.lengths.iter().copied());
        floats(&mut out, &mut hmm.log_priors.iter().copied());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected SCV1".into()));
        }
        let d = r.u32()? as usize;
        let nh = r.u32()? as usize;
        let k = r.u32()? as usize;
        let w1 = Array2::from_shape_vec((nh, d), r.f64s(nh * d)?).expect("shape matches length");
        let b1 = Array1::from(r.f64s(nh)?);
        let w2 = Array2::from_shape_vec((k, nh), r.f64s(k * nh)?).expect("shape matches length");
        let b2 = Array1::from(r.f64s(k)?);
        let hk = r.u32()? as usize;
        if hk != k {
            return Err(Error::Checkpoint(format!(
                "network has {k} classes, HMM section {hk}"
            )));
        }
        let min_length = r.u32()? as usize;
        let log_transitions =
            Array2::from_shape_vec((k, k), r.f64s(k * k)?).expect("shape matches length");
        let lengths = r.f64s(k)?;
        let log_priors = r.f64s(k)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let ckpt = Checkpoint {
            net: NetworkParams { w1, b1, w2, b2 },
            hmm: HmmParams {
                log_transitions,
                lengths,
                log_priors,
                min_length,
                variant: HmmVariant::default(),
            },
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let name = path.file_name().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "checkpoint path {} has no file name",
                path.display()
            ))
        })?;
        let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: format!("cannot read checkpoint: {e}"),
        })?;
        Self::from_bytes(&bytes)
    }
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("dimension {n} exceeds u32")))
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
                Error::Checkpoint(format!("truncated at byte {}, wanted {n} more", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
