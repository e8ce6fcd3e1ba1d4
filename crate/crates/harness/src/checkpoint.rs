//! Versioned binary model checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic            8 bytes  "LHUCCKPT"
//! version          u32      currently 1
//! hidden act.      u8       0 sigmoid, 1 linear
//! output kind      u8       0 softmax classifier, 1 linear regressor
//! reparam kind     u8       0 identity, 1 exp, 2 sigmoid2, 3 relu
//! n_sizes          u32
//! sizes            u32 x n_sizes         input, hidden..., output
//! per layer l      f64 x (sizes[l+1] * sizes[l])   W, row-major
//!                  f64 x sizes[l+1]                b
//! has_bank         u8       0 or 1
//! if has_bank:
//!   n_clusters     u32
//!   per cluster (ascending id):
//!     id           u32
//!     r            f64 x (sum of hidden widths), layer by layer
//! config hash      u64
//! seed             u64
//! epoch            u64
//! checksum         u64      CRC-64/ECMA-182 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use lhuc::model::Layer;
use lhuc::tensor::Activation;
use lhuc::{
    ClusterId, LhucError, LhucTransform, Matrix, NetworkParams, OutputKind, ReparamKind,
    TransformBank, Vector,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"LHUCCKPT";
pub const VERSION: u32 = 1;

pub(crate) const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_ECMA_182);

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated ({len} bytes)")]
    Truncated { len: usize },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("checkpoint holds an invalid model: {0}")]
    Model(#[from] LhucError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Where a checkpoint came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// CRC-64 of the resolved experiment config.
    pub config_hash: u64,
    pub seed: u64,
    /// Training epochs run.
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams<f64>,
    pub kind: ReparamKind,
    pub bank: Option<TransformBank<f64>>,
    pub provenance: Provenance,
}

fn kind_code(k: ReparamKind) -> u8 {
    match k {
        ReparamKind::Identity => 0,
        ReparamKind::Exp => 1,
        ReparamKind::Sigmoid2 => 2,
        ReparamKind::Relu => 3,
    }
}

fn kind_from(c: u8) -> Result<ReparamKind> {
    Ok(match c {
        0 => ReparamKind::Identity,
        1 => ReparamKind::Exp,
        2 => ReparamKind::Sigmoid2,
        3 => ReparamKind::Relu,
        _ => return Err(CheckpointError::Malformed(format!("unknown reparam code {c}"))),
    })
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("{what} {n} exceeds u32")))
}

/// Serialises a checkpoint to bytes.
pub fn encode(c: &Checkpoint) -> Result<Vec<u8>> {
    c.params.validate()?;
    if let Some(bank) = &c.bank {
        if bank.kind != c.kind {
            return Err(CheckpointError::Malformed(format!(
                "bank kind {} differs from checkpoint kind {}",
                bank.kind.name(),
                c.kind.name()
            )));
        }
        bank.check_compatible(&c.params)?;
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match c.params.hidden_activation {
        Activation::Sigmoid => 0,
        Activation::Linear => 1,
    });
    out.push(match c.params.output_kind {
        OutputKind::SoftmaxClassifier => 0,
        OutputKind::LinearRegressor => 1,
    });
    out.push(kind_code(c.kind));
    let sizes = c.params.sizes();
    out.extend_from_slice(&u32_of(sizes.len(), "layer count")?.to_le_bytes());
    for &s in &sizes {
        out.extend_from_slice(&u32_of(s, "layer size")?.to_le_bytes());
    }
    let put = |out: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for l in &c.params.layers {
        put(&mut out, l.w.as_slice());
        put(&mut out, l.b.as_slice());
    }
    match &c.bank {
        None => out.push(0),
        Some(bank) => {
            out.push(1);
            out.extend_from_slice(&u32_of(bank.len(), "cluster count")?.to_le_bytes());
            for (id, t) in &bank.map {
                out.extend_from_slice(&id.0.to_le_bytes());
                for v in &t.r {
                    put(&mut out, v.as_slice());
                }
            }
        }
    }
    for x in [c.provenance.config_hash, c.provenance.seed, c.provenance.epoch] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let sum = CRC64.checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("payload ends early at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("tensor too large".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

const HEADER_LEN: usize = 12;

/// Parses checkpoint bytes. Magic and version are checked first, then the
/// checksum, and only then the payload.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated { len: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated { len: bytes.len() });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    if bytes.len() < HEADER_LEN + 8 {
        return Err(CheckpointError::Truncated { len: bytes.len() });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = CRC64.checksum(payload);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader { buf: payload, pos: HEADER_LEN };
    let hidden_activation = match r.u8()? {
        0 => Activation::Sigmoid,
        1 => Activation::Linear,
        c => return Err(CheckpointError::Malformed(format!("unknown activation code {c}"))),
    };
    let output_kind = match r.u8()? {
        0 => OutputKind::SoftmaxClassifier,
        1 => OutputKind::LinearRegressor,
        c => return Err(CheckpointError::Malformed(format!("unknown output code {c}"))),
    };
    let kind = kind_from(r.u8()?)?;
    let n_sizes = r.u32()? as usize;
    let sizes = (0..n_sizes).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    if sizes.len() < 3 {
        return Err(CheckpointError::Malformed(format!("topology {sizes:?} has no hidden layer")));
    }
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for p in sizes.windows(2) {
        let w = Matrix::from_vec(p[1], p[0], r.f64s(p[0] * p[1])?)?;
        let b = Vector::new(r.f64s(p[1])?);
        layers.push(Layer { w, b });
    }
    let params = NetworkParams { layers, hidden_activation, output_kind };
    params.validate()?;
    let widths = params.hidden_widths();
    let bank = match r.u8()? {
        0 => None,
        1 => {
            let n = r.u32()?;
            let mut map = BTreeMap::new();
            for _ in 0..n {
                let id = ClusterId(r.u32()?);
                let rs = widths
                    .iter()
                    .map(|&w| r.f64s(w).map(Vector::new))
                    .collect::<Result<Vec<_>>>()?;
                if map.insert(id, LhucTransform { kind, r: rs }).is_some() {
                    return Err(CheckpointError::Malformed(format!("cluster {id} stored twice")));
                }
            }
            Some(TransformBank { kind, map })
        }
        c => return Err(CheckpointError::Malformed(format!("bad bank flag {c}"))),
    };
    let provenance = Provenance {
        config_hash: r.u64()?,
        seed: r.u64()?,
        epoch: r.u64()?,
    };
    if r.pos != payload.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} unexpected trailing bytes",
            payload.len() - r.pos
        )));
    }
    Ok(Checkpoint { params, kind, bank, provenance })
}

/// Writes via a temporary sibling file and a rename, so readers never see
/// a partial checkpoint.
pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    let bytes = encode(c)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let params = NetworkParams::new(
            vec![
                Layer {
                    w: Matrix::from_vec(2, 1, vec![0.5, -1.25]).unwrap(),
                    b: Vector::new(vec![0.0, -0.0]),
                },
                Layer {
                    w: Matrix::from_vec(1, 2, vec![1e-300, 3.0]).unwrap(),
                    b: Vector::new(vec![f64::MIN_POSITIVE]),
                },
            ],
            OutputKind::LinearRegressor,
        )
        .unwrap();
        Checkpoint {
            params,
            kind: ReparamKind::Exp,
            bank: None,
            provenance: Provenance { config_hash: 7, seed: 1, epoch: 3 },
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&tiny()).unwrap();
        assert_eq!(&bytes[..8], b"LHUCCKPT");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[13], 1); // linear regressor
        // 12 header + 3 codes + 4 + 3*4 sizes + (2+2+2+1)*8 tensors + 1 + 24 + 8
        assert_eq!(bytes.len(), 12 + 3 + 4 + 12 + 7 * 8 + 1 + 24 + 8);
    }

    #[test]
    fn negative_zero_survives() {
        let c = decode(&encode(&tiny()).unwrap()).unwrap();
        assert_eq!(c.params.layers[0].b.as_slice()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn mismatched_bank_kind_is_rejected() {
        let mut c = tiny();
        c.bank = Some(TransformBank::with_clusters(ReparamKind::Relu, &[2], [ClusterId(0)]));
        assert!(matches!(encode(&c), Err(CheckpointError::Malformed(_))));
    }

    #[test]
    fn short_inputs() {
        assert!(matches!(decode(b"LHU"), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(decode(b"NOTACKPTxxxxxxxxxxxx"), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(b"LHUCCKPT\x01\x00\x00\x00"), Err(CheckpointError::Truncated { .. })));
    }
}
