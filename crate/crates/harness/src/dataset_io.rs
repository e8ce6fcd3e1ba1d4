//! On-disk datasets: a fixed-width binary format and a CSV text path.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic          8 bytes "LHUCDATA"
//! version        u32     1
//! frames         u64
//! dim            u32
//! target kind    u8      0 class labels, 1 real-valued targets
//! target width   u32     number of classes, or target columns
//! has env        u8
//! max speaker    u32     id cardinalities (largest id present, 0 if none)
//! max segment    u32
//! max env        u32
//! records        per frame: dim x f64 features, then either a u32 label
//!                or width x f64 targets, then u32 speaker, u32 segment
//!                and (if has env) u32 environment
//! checksum       u64     CRC-64/ECMA-182 of every preceding byte
//! ```
//!
//! CSV rows are `features..., label, speaker, segment, environment`; lines
//! starting with `#` are ignored.

use std::fs;
use std::path::Path;

use lhuc::{Dataset64, FrameDataset, Matrix, Targets};

use crate::checkpoint::CRC64;
use crate::error::{io_err, HarnessError, Result};

pub const DATA_MAGIC: &[u8; 8] = b"LHUCDATA";
pub const DATA_VERSION: u32 = 1;

fn fmt_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(msg.into())
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| fmt_err(format!("{n} does not fit in u32")))
}

pub fn encode_dataset(d: &Dataset64) -> Result<Vec<u8>> {
    d.validate()?;
    let (kind, width) = match &d.targets {
        Targets::Classes { n_classes, .. } => (0u8, *n_classes),
        Targets::Values(m) => (1u8, m.cols()),
    };
    let max_of = |v: &[u32]| v.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(48 + d.len() * (d.dim() + width + 3) * 8);
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.len() as u64).to_le_bytes());
    out.extend_from_slice(&u32_of(d.dim())?.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&u32_of(width)?.to_le_bytes());
    out.push(d.environments.is_some() as u8);
    out.extend_from_slice(&max_of(&d.speakers).to_le_bytes());
    out.extend_from_slice(&max_of(&d.segments).to_le_bytes());
    out.extend_from_slice(&d.environments.as_deref().map_or(0, max_of).to_le_bytes());
    for t in 0..d.len() {
        for x in d.features.row(t) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        match &d.targets {
            Targets::Classes { labels, .. } => out.extend_from_slice(&u32_of(labels[t])?.to_le_bytes()),
            Targets::Values(m) => {
                for y in m.row(t) {
                    out.extend_from_slice(&y.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&d.speakers[t].to_le_bytes());
        out.extend_from_slice(&d.segments[t].to_le_bytes());
        if let Some(e) = &d.environments {
            out.extend_from_slice(&e[t].to_le_bytes());
        }
    }
    let sum = CRC64.checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset64> {
    if bytes.len() < 8 || &bytes[..8] != DATA_MAGIC {
        return Err(fmt_err("not a dataset file (bad magic)"));
    }
    if bytes.len() < 20 {
        return Err(fmt_err("truncated header"));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let mut c = Cursor { buf: payload, pos: 8 };
    let version = c.u32()?;
    if version != DATA_VERSION {
        return Err(fmt_err(format!("format version {version}, expected {DATA_VERSION}")));
    }
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = CRC64.checksum(payload);
    if stored != computed {
        return Err(fmt_err(format!("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")));
    }
    let n = usize::try_from(c.u64()?).map_err(|_| fmt_err("frame count overflows"))?;
    let dim = c.u32()? as usize;
    let kind = c.u8()?;
    let width = c.u32()? as usize;
    let has_env = match c.u8()? {
        0 => false,
        1 => true,
        f => return Err(fmt_err(format!("bad environment flag {f}"))),
    };
    let _cardinalities = (c.u32()?, c.u32()?, c.u32()?);
    let record = dim * 8 + if kind == 0 { 4 } else { width * 8 } + 8 + if has_env { 4 } else { 0 };
    if payload.len() - c.pos != n.saturating_mul(record) {
        return Err(fmt_err(format!(
            "{} record bytes for {n} frames of {record} bytes",
            payload.len() - c.pos
        )));
    }
    let mut feats = Vec::with_capacity(n * dim);
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let (mut spk, mut seg, mut env) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::new());
    for _ in 0..n {
        for _ in 0..dim {
            feats.push(c.f64()?);
        }
        match kind {
            0 => labels.push(c.u32()? as usize),
            1 => {
                for _ in 0..width {
                    values.push(c.f64()?);
                }
            }
            k => return Err(fmt_err(format!("unknown target kind {k}"))),
        }
        spk.push(c.u32()?);
        seg.push(c.u32()?);
        if has_env {
            env.push(c.u32()?);
        }
    }
    let targets = if kind == 0 {
        Targets::Classes { labels, n_classes: width }
    } else {
        Targets::Values(Matrix::from_vec(n, width, values)?)
    };
    Ok(FrameDataset::new(
        Matrix::from_vec(n, dim, feats)?,
        targets,
        spk,
        seg,
        has_env.then_some(env),
    )?)
}

pub fn write_dataset(path: &Path, d: &Dataset64) -> Result<()> {
    let bytes = encode_dataset(d)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<Dataset64> {
    decode_dataset(&fs::read(path).map_err(io_err(path))?)
}

/// Parses CSV rows of `features..., label, speaker, segment, environment`.
/// The class count is `n_classes` if given, else one more than the largest
/// label.
pub fn import_csv(text: &str, n_classes: Option<usize>) -> Result<Dataset64> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut feats = Vec::new();
    let (mut labels, mut spk, mut seg, mut env) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dim = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt_err(format!("csv: {e}")))?;
        if rec.len() < 5 {
            return Err(fmt_err(format!("row {}: need at least one feature plus 4 id columns", line + 1)));
        }
        let d = rec.len() - 4;
        if *dim.get_or_insert(d) != d {
            return Err(fmt_err(format!("row {}: {d} features, expected {}", line + 1, dim.unwrap())));
        }
        for f in rec.iter().take(d) {
            feats.push(
                f.parse::<f64>()
                    .map_err(|e| fmt_err(format!("row {}: feature {f:?}: {e}", line + 1)))?,
            );
        }
        let int = |i: usize| -> Result<u32> {
            rec[i]
                .parse::<u32>()
                .map_err(|e| fmt_err(format!("row {}: column {}: {:?}: {e}", line + 1, i + 1, &rec[i])))
        };
        labels.push(int(d)? as usize);
        spk.push(int(d + 1)?);
        seg.push(int(d + 2)?);
        env.push(int(d + 3)?);
    }
    let n = labels.len();
    let dim = dim.ok_or_else(|| fmt_err("csv has no rows"))?;
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Ok(FrameDataset::new(
        Matrix::from_vec(n, dim, feats)?,
        Targets::Classes { labels, n_classes },
        spk,
        seg,
        Some(env),
    )?)
}

/// Renders a dataset as CSV. Class datasets follow the import layout;
/// regression datasets put the target columns where the label would be.
/// A missing environment is written as 0.
pub fn export_csv(d: &Dataset64) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for t in 0..d.len() {
        let mut row: Vec<String> = d.features.row(t).iter().map(|x| x.to_string()).collect();
        match &d.targets {
            Targets::Classes { labels, .. } => row.push(labels[t].to_string()),
            Targets::Values(m) => row.extend(m.row(t).iter().map(|y| y.to_string())),
        }
        row.push(d.speakers[t].to_string());
        row.push(d.segments[t].to_string());
        row.push(d.environments.as_ref().map_or(0, |e| e[t]).to_string());
        w.write_record(&row).map_err(|e| fmt_err(format!("csv: {e}")))?;
    }
    String::from_utf8(w.into_inner().map_err(|e| fmt_err(format!("csv: {e}")))?)
        .map_err(|e| fmt_err(format!("csv: {e}")))
}
