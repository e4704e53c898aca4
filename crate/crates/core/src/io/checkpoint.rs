//! Binary checkpoints.
//!
//! ```text
//! "FGCK" | version u32 | round u64 | config digest [32]
//! | generator spec | discriminator spec | generator blob | discriminator blob
//! spec = hash u64 | layer count u32 | sizes u32.. | hidden code u8 | output code u8
//! ```
//! Integers are little-endian; blobs use the [`ParamVector`] layout.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{serialize_config, IoError};
use crate::gan::{GanModel, ModelParams};
use crate::mlp::{HiddenActivation, MlpError, MlpSpec, OutputActivation, ParamVector};
use crate::sim::SimConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: u64,
    pub config_digest: [u8; 32],
    pub model: GanModel,
}

/// SHA-256 of the canonical TOML rendering of `config`.
pub fn config_digest(config: &SimConfig) -> [u8; 32] {
    Sha256::digest(serialize_config(config).as_bytes()).into()
}

fn write_spec(spec: &MlpSpec, out: &mut Vec<u8>) {
    out.extend_from_slice(&spec.spec_hash().to_le_bytes());
    out.extend_from_slice(&(spec.layer_sizes().len() as u32).to_le_bytes());
    for &s in spec.layer_sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.push(spec.hidden_activation().code());
    out.push(spec.output_activation().code());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        let m = &self.model;
        write_spec(m.generator_spec(), &mut out);
        write_spec(m.discriminator_spec(), &mut out);
        m.params()
            .generator
            .write_bytes(m.generator_spec(), &mut out);
        m.params()
            .discriminator
            .write_bytes(m.discriminator_spec(), &mut out);
        out
    }

    /// Decodes a checkpoint. With `expected` given, both spec hashes must
    /// match that model's.
    pub fn from_bytes(
        path: &Path,
        bytes: &[u8],
        expected: Option<&GanModel>,
    ) -> Result<Self, IoError> {
        let mut r = Reader {
            path,
            bytes,
            pos: 0,
        };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.err("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let round = r.u64()?;
        let config_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let generator_spec = r.spec("generator", expected.map(|m| m.generator_spec()))?;
        let discriminator_spec =
            r.spec("discriminator", expected.map(|m| m.discriminator_spec()))?;
        let generator = r.blob(&generator_spec)?;
        let discriminator = r.blob(&discriminator_spec)?;
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = GanModel::new(
            generator_spec,
            discriminator_spec,
            ModelParams {
                generator,
                discriminator,
            },
        )?;
        Ok(Self {
            round,
            config_digest,
            model,
        })
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: String) -> IoError {
        IoError::Checkpoint {
            path: self.path.to_owned(),
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn spec(
        &mut self,
        network: &'static str,
        expected: Option<&MlpSpec>,
    ) -> Result<MlpSpec, IoError> {
        let found = self.u64()?;
        if let Some(spec) = expected {
            if spec.spec_hash() != found {
                return Err(IoError::SpecMismatch {
                    path: self.path.to_owned(),
                    network,
                    expected: spec.spec_hash(),
                    found,
                });
            }
        }
        let n = self.u32()? as usize;
        if n > 1024 {
            return Err(self.err(format!("{network}: implausible layer count {n}")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            sizes.push(self.u32()? as usize);
        }
        let codes = self.take(2)?;
        let hidden = HiddenActivation::from_code(codes[0])
            .ok_or_else(|| self.err(format!("{network}: unknown hidden activation")))?;
        let output = OutputActivation::from_code(codes[1])
            .ok_or_else(|| self.err(format!("{network}: unknown output activation")))?;
        let spec = MlpSpec::new(sizes, hidden, output)?;
        if spec.spec_hash() != found {
            return Err(self.err(format!("{network}: spec block does not match its hash")));
        }
        Ok(spec)
    }

    fn blob(&mut self, spec: &MlpSpec) -> Result<ParamVector, IoError> {
        match ParamVector::read_bytes(spec, &self.bytes[self.pos..]) {
            Ok((p, used)) => {
                self.pos += used;
                Ok(p)
            }
            Err(MlpError::Decode(m)) => Err(self.err(m)),
            Err(e) => Err(e.into()),
        }
    }
}

/// Writes atomically: a sibling temporary file is renamed into place.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::file(path, e))?;
    tmp.write_all(&checkpoint.to_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| IoError::file(path, e))?;
    tmp.persist(path)
        .map_err(|e| IoError::file(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<&GanModel>) -> Result<Checkpoint, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::file(path, e))?;
    Checkpoint::from_bytes(path, &bytes, expected)
}
