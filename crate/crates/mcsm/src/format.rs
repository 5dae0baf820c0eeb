//! Binary feature matrices (`MCSF`) and semantic-space checkpoints (`MCSC`).
//!
//! Both formats are little-endian throughout and start with a four-byte
//! magic followed by a `u32` version.

use std::fs;
use std::path::{Path, PathBuf};

use mcsm_core::data::FeatureSequence;
use mcsm_core::space::{SemanticSpaceModel, SimilarityMatrix, SpaceKind, SpaceTag};
use mcsm_core::{ParamStore, Tensor};

pub const FEATURE_MAGIC: [u8; 4] = *b"MCSF";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MCSC";
pub const VERSION: u32 = 1;

/// Prefix of the tensors that carry conv pool widths in a checkpoint.
const POOL_PREFIX: &str = "meta.conv.";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("extent overflow: {0}")]
    Overflow(String),
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] mcsm_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

/// A dense row-major `f32` matrix, the payload of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        match rows.checked_mul(cols) {
            Some(n) if n == data.len() => Ok(Self { rows, cols, data }),
            _ => Err(FormatError::Overflow(format!("{rows}x{cols} with {} values", data.len()))),
        }
    }

    pub fn from_sequence(seq: &FeatureSequence) -> Self {
        Self {
            rows: seq.rows(),
            cols: seq.dim(),
            data: seq.data().to_vec(),
        }
    }

    /// Every row is treated as valid; padding is the loader's job.
    pub fn into_sequence(self) -> Result<FeatureSequence> {
        Ok(FeatureSequence::from_rows(self.rows, self.cols, self.data)?)
    }

    /// Scores are narrowed to `f32`, the only precision the format stores.
    pub fn from_similarity(s: &SimilarityMatrix) -> Self {
        Self {
            rows: s.rows(),
            cols: s.cols(),
            data: s.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn into_similarity(self, tag: SpaceTag) -> Result<SimilarityMatrix> {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Ok(SimilarityMatrix::new(self.rows, self.cols, data, tag)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            FormatError::Truncated(format!("{what} needs {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| FormatError::Overflow(format!("{what}: {count} values")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found });
        }
        match self.u32("version")? {
            VERSION => Ok(()),
            v => Err(FormatError::Version(v)),
        }
    }

    fn finish(self) -> Result<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| FormatError::Overflow(format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * m.data.len());
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(m.rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&u32_of(m.cols, "cols")?.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader::new(bytes);
    r.header(FEATURE_MAGIC)?;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| FormatError::Overflow(format!("{rows}x{cols}")))?;
    let data = r.f32s(count, "feature payload")?;
    r.finish()?;
    FeatureMatrix::new(rows, cols, data)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    decode_features(&read_file(path)?)
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    write_file(path, &encode_features(m)?)
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| FormatError::Overflow(format!("tensor name of {} bytes", name.len())))?;
    let rank = u8::try_from(t.rank()).map_err(|_| FormatError::Overflow(format!("{name}: rank {}", t.rank())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(rank);
    for &e in t.shape() {
        out.extend_from_slice(&u32_of(e, "extent")?.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serializes a model: header, the parameter tensors in insertion order, then
/// one `meta.conv.{l}.pool` tensor per conv layer holding its pool width.
pub fn encode_checkpoint(model: &SemanticSpaceModel<f32>) -> Result<Vec<u8>> {
    let store = model.store();
    let pools = model.conv_pools();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.kind().code());
    for d in model.config().header_dims() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(store.len() + pools.len(), "tensor count")?.to_le_bytes());
    for id in store.ids_in_insertion_order() {
        push_tensor(&mut out, store.name(id), store.value(id))?;
    }
    for (l, &p) in pools.iter().enumerate() {
        push_tensor(&mut out, &format!("{POOL_PREFIX}{l}.pool"), &Tensor::vector(vec![p as f32])?)?;
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SemanticSpaceModel<f32>> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC)?;
    let code = r.u8("space kind")?;
    let kind = SpaceKind::from_code(code).ok_or_else(|| FormatError::Malformed(format!("space kind byte {code}")))?;
    let mut dims = [0u32; 6];
    for d in &mut dims {
        *d = r.u32("dimension header")?;
    }
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    let mut pools = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| FormatError::Overflow(format!("{name}: shape {shape:?}")))?;
        let data = r.f32s(numel, &name)?;
        if let Some(rest) = name.strip_prefix(POOL_PREFIX) {
            let expected = format!("{}.pool", pools.len());
            if rest != expected || data.len() != 1 || !(data[0] >= 1.0 && data[0].fract() == 0.0) {
                return Err(FormatError::Malformed(format!("unexpected pool entry {name} = {data:?}")));
            }
            pools.push(data[0] as usize);
        } else {
            store.insert(&name, Tensor::new(shape, data)?)?;
        }
    }
    r.finish()?;
    Ok(SemanticSpaceModel::from_store(kind, dims, &pools, store)?)
}

pub fn save_checkpoint(path: &Path, model: &SemanticSpaceModel<f32>) -> Result<()> {
    write_file(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<SemanticSpaceModel<f32>> {
    decode_checkpoint(&read_file(path)?)
}
