//! `SAIW` container layout (all integers little-endian):
//!
//! | bytes                  | content                                   |
//! |------------------------|-------------------------------------------|
//! | `0..4`                 | magic `b"SAIW"`                           |
//! | `4..8`                 | format version, `u32`                     |
//! | `8..16`                | header length `L`, `u64`                  |
//! | `16..16+L`             | UTF-8 JSON header, space padded           |
//! | `16+L..`               | payload                                   |
//!
//! The header is padded so the payload starts on a 64-byte boundary. Each
//! tensor's `byte_offset` is relative to the payload start and is itself a
//! multiple of 64; gaps are zero bytes. Tensors are stored row-major as raw
//! little-endian `f32` or `f64`.
//!
//! Tensor names are `pos_embed` (`N × D`) and `layer{L}.head{H}.q` /
//! `layer{L}.head{H}.k` (`D × d`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attention_init::{AttentionInit, InitConfig, InitMethod, ModelInit, PosEncoding};
use crate::conv_matrix::ImpulseOffset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SAIW";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGNMENT: usize = 64;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// Tolerance for re-checking `‖Q‖_F = γ` after a round trip.
    fn norm_tolerance(self) -> f64 {
        match self {
            DType::F32 => 1e-4,
            DType::F64 => 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub layer: usize,
    pub head: usize,
    pub target_offset: Option<ImpulseOffset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: InitConfig,
    pub seed: u64,
    pub method: InitMethod,
    pub library_version: String,
    pub heads: Vec<HeadMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tensors: BTreeMap<String, TensorEntry>,
    pub metadata: Metadata,
}

fn head_name(layer: usize, head: usize, which: char) -> String {
    format!("layer{layer}.head{head}.{which}")
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGNMENT) * ALIGNMENT
}

fn push_tensor(payload: &mut Vec<u8>, m: &DMatrix<f64>, dtype: DType) -> TensorEntry {
    payload.resize(align(payload.len()), 0);
    let start = payload.len();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            match dtype {
                DType::F32 => payload.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes()),
                DType::F64 => payload.extend_from_slice(&m[(r, c)].to_le_bytes()),
            }
        }
    }
    TensorEntry {
        dtype,
        shape: vec![m.nrows(), m.ncols()],
        byte_offset: start as u64,
        byte_len: (payload.len() - start) as u64,
    }
}

/// Serializes `init`; equal inputs give identical bytes.
pub fn encode_container(init: &ModelInit, dtype: DType) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = BTreeMap::new();
    tensors.insert("pos_embed".to_string(), push_tensor(&mut payload, &init.pos.data, dtype));
    for a in &init.attention {
        tensors.insert(head_name(a.layer, a.head, 'q'), push_tensor(&mut payload, &a.q, dtype));
        tensors.insert(head_name(a.layer, a.head, 'k'), push_tensor(&mut payload, &a.k, dtype));
    }
    let header = Header {
        tensors,
        metadata: Metadata {
            config: init.config.clone(),
            seed: init.seed,
            method: init.method,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            heads: init
                .attention
                .iter()
                .map(|a| HeadMeta {
                    layer: a.layer,
                    head: a.head,
                    target_offset: a.target_offset,
                })
                .collect(),
        },
    };
    let mut json = serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header encoding: {e}")))?;
    json.resize(align(PREAMBLE + json.len()) - PREAMBLE, b' ');

    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write_container(init: &ModelInit, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(init, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<ModelInit> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}

/// Splits a container into its parsed header and payload bytes, checking
/// the preamble and the tensor table layout but not the tensor set.
pub fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Format(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(PREAMBLE))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Corruption(format!("header length {header_len} runs past end of file")))?;
    let text = std::str::from_utf8(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Format(format!("header JSON: {e}")))?;
    let payload = &bytes[header_end..];

    let mut spans: Vec<(&String, &TensorEntry)> = header.tensors.iter().collect();
    spans.sort_by_key(|(_, t)| t.byte_offset);
    let mut end = 0u64;
    for (name, t) in &spans {
        let expected = t.shape.iter().product::<usize>() * t.dtype.size();
        if t.byte_len != expected as u64 {
            return Err(Error::Format(format!(
                "{name}: byte_len {} does not match shape {:?}",
                t.byte_len, t.shape
            )));
        }
        if t.byte_offset < end {
            return Err(Error::Format(format!("{name}: overlaps the previous tensor")));
        }
        end = t
            .byte_offset
            .checked_add(t.byte_len)
            .ok_or_else(|| Error::Format(format!("{name}: offset overflow")))?;
    }
    if end > payload.len() as u64 {
        return Err(Error::Corruption(format!(
            "payload holds {} bytes, tensor table needs {end}",
            payload.len()
        )));
    }
    Ok((header, payload))
}

fn load_tensor(payload: &[u8], t: &TensorEntry) -> DMatrix<f64> {
    let (rows, cols) = (t.shape[0], t.shape[1]);
    let bytes = &payload[t.byte_offset as usize..(t.byte_offset + t.byte_len) as usize];
    let size = t.dtype.size();
    DMatrix::from_fn(rows, cols, |r, c| {
        let at = (r * cols + c) * size;
        match t.dtype {
            DType::F32 => f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as f64,
            DType::F64 => f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")),
        }
    })
}

/// Parses and validates a container. Nothing is returned unless every check
/// passes.
pub fn decode_container(bytes: &[u8]) -> Result<ModelInit> {
    let (header, payload) = parse_header(bytes)?;
    let meta = &header.metadata;
    let cfg = &meta.config;

    let mut expected: Vec<(String, [usize; 2])> = vec![("pos_embed".into(), [cfg.tokens(), cfg.dim])];
    for layer in 0..cfg.layers {
        for head in 0..cfg.heads {
            for which in ['q', 'k'] {
                expected.push((head_name(layer, head, which), [cfg.dim, cfg.d_head]));
            }
        }
    }
    let mut bad: Vec<String> = expected
        .iter()
        .filter(|(name, shape)| header.tensors.get(name).is_none_or(|t| t.shape != shape))
        .map(|(name, _)| name.clone())
        .collect();
    bad.extend(
        header
            .tensors
            .keys()
            .filter(|k| !expected.iter().any(|(name, _)| name == *k))
            .cloned(),
    );
    let heads_ok = meta.heads.len() == cfg.layers * cfg.heads
        && meta
            .heads
            .iter()
            .enumerate()
            .all(|(i, h)| h.layer == i / cfg.heads && h.head == i % cfg.heads);
    if !heads_ok {
        bad.push("metadata.heads".into());
    }
    if !bad.is_empty() {
        return Err(Error::Validation { tensors: bad });
    }

    let pos = PosEncoding {
        data: load_tensor(payload, &header.tensors["pos_embed"]),
        std: cfg.pos_std,
        seed: meta.seed,
    };
    let mut attention = Vec::with_capacity(meta.heads.len());
    let mut norm_violations = Vec::new();
    for h in &meta.heads {
        let qe = &header.tensors[&head_name(h.layer, h.head, 'q')];
        let ke = &header.tensors[&head_name(h.layer, h.head, 'k')];
        let init = AttentionInit {
            q: load_tensor(payload, qe),
            k: load_tensor(payload, ke),
            target_offset: h.target_offset,
            layer: h.layer,
            head: h.head,
        };
        if meta.method == InitMethod::Impulse {
            for (which, m, e) in [('q', &init.q, qe), ('k', &init.k, ke)] {
                if (m.norm() - cfg.gamma).abs() > e.dtype.norm_tolerance() {
                    norm_violations.push(head_name(h.layer, h.head, which));
                }
            }
        }
        attention.push(init);
    }
    if !norm_violations.is_empty() {
        return Err(Error::Validation {
            tensors: norm_violations,
        });
    }

    Ok(ModelInit {
        config: cfg.clone(),
        seed: meta.seed,
        method: meta.method,
        pos,
        attention,
    })
}
