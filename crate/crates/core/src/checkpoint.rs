//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! b"SDTL" | u32 version | u32 count
//! count × ( u32 name_len | name bytes (UTF-8) | u32 rank | rank × u32 dim | f32 data )
//! ```
//!
//! The run configuration is stored next to the checkpoint as plain text
//! (`<stem>.config`) so a model can be rebuilt before loading its tensors.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sdtl_tensor::Tensor;

use crate::config::RunConfig;
use crate::error::{Result, SdtlError};
use crate::nn::Module;
use crate::pipeline::SdtlModel;

pub const MAGIC: &[u8; 4] = b"SDTL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SdtlError::Parse {
                path: self.path.to_path_buf(),
                offset: self.pos,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4, "magic")? != MAGIC {
        return Err(SdtlError::Format { path: path.to_path_buf(), msg: "not an SDTL checkpoint".into() });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(SdtlError::Format {
            path: path.to_path_buf(),
            msg: format!("checkpoint version {version}, expected {VERSION}"),
        });
    }
    let count = c.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let at = c.pos;
        let name = String::from_utf8(c.take(len, "name")?.to_vec()).map_err(|_| SdtlError::Parse {
            path: path.to_path_buf(),
            offset: at,
            msg: "tensor name is not UTF-8".into(),
        })?;
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank).map(|_| c.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4, "tensor data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push(NamedTensor { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(SdtlError::Parse {
            path: path.to_path_buf(),
            offset: c.pos,
            msg: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    Ok(out)
}

pub fn config_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("config")
}

pub fn collect(model: &SdtlModel<f32>) -> Vec<NamedTensor> {
    model
        .named_params("")
        .into_iter()
        .map(|(name, t)| NamedTensor { name, shape: t.shape().to_vec(), data: t.to_vec() })
        .collect()
}

/// Write the tensors and the config sidecar.
pub fn save(model: &SdtlModel<f32>, path: &Path) -> Result<()> {
    let bytes = encode(&collect(model));
    let mut f = std::fs::File::create(path).map_err(|e| SdtlError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| SdtlError::io(path, e))?;
    let cfg = config_path(path);
    std::fs::write(&cfg, model.cfg.to_text()).map_err(|e| SdtlError::io(&cfg, e))
}

pub fn read(path: &Path) -> Result<Vec<NamedTensor>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SdtlError::io(path, e))?;
    decode(&bytes, path)
}

/// Copy stored values into a model with exactly the same parameter set.
pub fn load_into(model: &SdtlModel<f32>, tensors: &[NamedTensor], path: &Path) -> Result<()> {
    let params = model.named_params("");
    let fail = |msg: String| SdtlError::Format { path: path.to_path_buf(), msg };
    if params.len() != tensors.len() {
        return Err(fail(format!("checkpoint has {} tensors, model expects {}", tensors.len(), params.len())));
    }
    for ((name, p), stored) in params.iter().zip(tensors) {
        if *name != stored.name || p.shape() != stored.shape.as_slice() {
            return Err(fail(format!(
                "tensor mismatch: model {name} {:?}, checkpoint {} {:?}",
                p.shape(),
                stored.name,
                stored.shape
            )));
        }
        p.set_data(stored.data.clone())?;
    }
    Ok(())
}

/// Rebuild a model from a checkpoint and its config sidecar.
pub fn load(path: &Path) -> Result<SdtlModel<f32>> {
    let cfg = RunConfig::load(&config_path(path))?;
    // Initial values are overwritten; any seed works.
    let mut rng = crate::rng::stream(cfg.seed, crate::rng::Stream::Init);
    let model = SdtlModel::new(&cfg, &mut rng)?;
    load_into(&model, &read(path)?, path)?;
    Ok(model)
}

/// `Tensor` view of a stored entry.
pub fn to_tensor(t: &NamedTensor) -> Result<Tensor<f32>> {
    Ok(Tensor::from_vec(t.data.clone(), &t.shape)?)
}
