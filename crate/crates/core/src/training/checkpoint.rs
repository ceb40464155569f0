//! Single-file checkpoint archive: a JSON header (config, stage, epoch,
//! seed) followed by named raw little-endian f32 tensors with declared
//! shapes.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore, Stage};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"DCK1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub stage: Stage,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor32 {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Self-describing serialized parameter set shared between the stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: IndexMap<String, Tensor32>,
}

impl Checkpoint {
    pub fn from_store(
        store: &ParamStore,
        config: &ModelConfig,
        stage: Stage,
        epoch: usize,
        seed: u64,
    ) -> Self {
        let tensors = store
            .tensors
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    Tensor32 {
                        shape: t.shape().to_vec(),
                        data: t.iter().map(|&v| v as f32).collect(),
                    },
                )
            })
            .collect();
        Self {
            header: CheckpointHeader {
                version: VERSION,
                config: config.clone(),
                stage,
                epoch,
                seed,
            },
            tensors,
        }
    }

    /// Materialize a parameter store for the checkpoint's own stage.
    /// Every expected parameter must be present with the right shape and no
    /// extras may remain; violations name the offending tensor.
    pub fn to_store(&self) -> Result<ParamStore> {
        let template = ParamStore::init(&self.header.config, self.header.stage, 0);
        let mut tensors = IndexMap::new();
        for (name, expected) in &template.tensors {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            if t.shape != expected.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape,
                    expected.shape()
                )));
            }
            tensors.insert(name.clone(), tensor_to_f64(t));
        }
        for name in self.tensors.keys() {
            if !template.tensors.contains_key(name) {
                return Err(Error::Checkpoint(format!("unexpected tensor '{name}'")));
            }
        }
        Ok(ParamStore { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        let header = serde_json::to_vec(&self.header).expect("header serialization");
        buf.write_u32::<LittleEndian>(header.len() as u32).unwrap();
        buf.extend_from_slice(&header);
        buf.write_u32::<LittleEndian>(self.tensors.len() as u32).unwrap();
        for (name, t) in &self.tensors {
            buf.write_u16::<LittleEndian>(name.len() as u16).unwrap();
            buf.extend_from_slice(name.as_bytes());
            buf.write_u8(t.shape.len() as u8).unwrap();
            for &dim in &t.shape {
                buf.write_u64::<LittleEndian>(dim as u64).unwrap();
            }
            for &v in &t.data {
                buf.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::Cursor::new(&bytes);
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt checkpoint: {what}"));

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let header_len = r
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt("truncated header length"))? as usize;
        let mut header_buf = vec![0u8; header_len];
        r.read_exact(&mut header_buf).map_err(|_| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&header_buf)
            .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        let count = r
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt("truncated tensor count"))?;
        let mut tensors = IndexMap::new();
        for _ in 0..count {
            let name_len = r
                .read_u16::<LittleEndian>()
                .map_err(|_| corrupt("truncated tensor name length"))? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf).map_err(|_| corrupt("truncated tensor name"))?;
            let name = String::from_utf8(name_buf).map_err(|_| corrupt("non-utf8 tensor name"))?;
            let ndim = r.read_u8().map_err(|_| corrupt("truncated rank"))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(
                    r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated shape"))? as usize,
                );
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(
                    r.read_f32::<LittleEndian>()
                        .map_err(|_| corrupt(&format!("truncated data for '{name}'")))?,
                );
            }
            tensors.insert(name, Tensor32 { shape, data });
        }
        Ok(Self { header, tensors })
    }
}

fn tensor_to_f64(t: &Tensor32) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&t.shape), t.data.iter().map(|&v| v as f64).collect())
        .expect("tensor shape")
}

/// Build the caption-stage parameter store: captioner tensors freshly
/// initialized from `seed`, vision tensors taken from `init`. Missing or
/// mismatched vision tensors in `init` name the offender.
pub fn caption_store_from(
    init: &Checkpoint,
    config: &ModelConfig,
    seed: u64,
) -> Result<ParamStore> {
    let mut store = ParamStore::init(config, Stage::Caption, seed);
    let names: Vec<String> = store
        .tensors
        .keys()
        .filter(|k| k.starts_with("vision."))
        .cloned()
        .collect();
    for name in names {
        let t = init
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("init checkpoint missing tensor '{name}'")))?;
        let expected = store.tensors[&name].shape().to_vec();
        if t.shape != expected {
            return Err(Error::Checkpoint(format!(
                "init tensor '{name}' has shape {:?}, expected {:?}",
                t.shape, expected
            )));
        }
        store.tensors.insert(name, tensor_to_f64(t));
    }
    Ok(store)
}
