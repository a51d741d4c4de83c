//! Binary checkpoint format:
//!
//! ```text
//! "HEDON1" | u32 version | u32 json_len | json {config, schema}
//!          | (u32 count | count × f32)*   -- one block per parameter tensor
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Model, ModelConfig};
use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"HEDON1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub params: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    schema: FeatureSchema,
}

impl ModelCheckpoint {
    pub fn from_model(model: &Model, schema: &FeatureSchema) -> Self {
        ModelCheckpoint {
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            schema: schema.clone(),
            params: model.params().into_iter().cloned().collect(),
        }
    }

    pub fn into_model(self) -> Result<(Model, FeatureSchema)> {
        let mut model = build_model(&self.config, 0)?;
        model.set_params(self.params)?;
        Ok((model, self.schema))
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &ModelCheckpoint) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: ckpt.config.clone(),
        schema: ckpt.schema.clone(),
    })?;
    let mut buf = Vec::with_capacity(
        16 + header.len() + ckpt.params.iter().map(|p| 4 + 4 * p.len()).sum::<usize>(),
    );
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&ckpt.version.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for p in &ckpt.params {
        buf.extend_from_slice(&(p.len() as u32).to_le_bytes());
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelCheckpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let json_len = cur.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(cur.take(json_len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    // The architecture determines how many arrays follow and their shapes.
    let template = build_model(&header.config, 0)?;
    let mut params = Vec::new();
    for (i, p) in template.params().iter().enumerate() {
        let count = cur.u32("array length")? as usize;
        if count != p.len() {
            return Err(Error::Checkpoint(format!(
                "parameter {i}: stored {count} values, architecture needs {}",
                p.len()
            )));
        }
        let raw = cur.take(count * 4, "parameter data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(p.shape().to_vec(), data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - cur.pos
        )));
    }
    Ok(ModelCheckpoint {
        version,
        config: header.config,
        schema: header.schema,
        params,
    })
}

pub fn save_checkpoint(path: &Path, model: &Model, schema: &FeatureSchema) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), &ModelCheckpoint::from_model(model, schema))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, FeatureSchema)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))?.into_model()
}
