//! Binary checkpoint files: `XOPG`, a little-endian `u32` format version, a
//! `u32` metadata length, the metadata JSON, then `f64` little-endian blobs
//! in directory order.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CheckpointErrorKind, Error, Result};
use crate::layers::{
    DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet, Parameterized,
};
use crate::numerics::{Adam, AdamConfig, AdamState, Tensor};

pub const MAGIC: &[u8; 4] = b"XOPG";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

/// A network whose architecture is fully described by a serializable config.
pub trait Network: Parameterized + Clone + Sized {
    type Config: Serialize + DeserializeOwned + Clone + PartialEq;
    const KIND: &'static str;

    fn config(&self) -> &Self::Config;
    fn config_digest(config: &Self::Config) -> String;
    /// Builds a network with the config's shapes; values are overwritten on load.
    fn skeleton(config: &Self::Config) -> Result<Self>;
}

impl Network for GeneratorNet {
    type Config = GeneratorConfig;
    const KIND: &'static str = "generator";

    fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn config_digest(config: &GeneratorConfig) -> String {
        config.digest()
    }

    fn skeleton(config: &GeneratorConfig) -> Result<Self> {
        GeneratorNet::build(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
    }
}

impl Network for DiscriminatorNet {
    type Config = DiscriminatorConfig;
    const KIND: &'static str = "discriminator";

    fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    fn config_digest(config: &DiscriminatorConfig) -> String {
        config.digest()
    }

    fn skeleton(config: &DiscriminatorConfig) -> Result<Self> {
        DiscriminatorNet::build(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
    }
}

/// A network with its optimizer state and training position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<N> {
    pub net: N,
    pub adam: Adam,
    pub iteration: u64,
    pub seed: u64,
}

impl<N: Network> Checkpoint<N> {
    /// Fresh optimizer state for `net`.
    pub fn new(net: N, adam: AdamConfig, seed: u64) -> Self {
        let shapes = net.param_shapes();
        let adam = Adam::new(shapes.iter().map(Vec::as_slice), adam);
        Self {
            net,
            adam,
            iteration: 0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata<C> {
    kind: String,
    config_digest: String,
    config: C,
    iteration: u64,
    seed: u64,
    adam: AdamConfig,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

fn ckpt_err(kind: CheckpointErrorKind, path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        kind,
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn named_tensors<N: Network>(ckpt: &Checkpoint<N>) -> Vec<(String, &Tensor)> {
    let params = ckpt.net.params();
    let mut out = Vec::with_capacity(params.len() * 3);
    for ((name, _), s) in params.iter().zip(&ckpt.adam.states) {
        out.push((format!("adam.m/{name}"), &s.m));
        out.push((format!("adam.v/{name}"), &s.v));
    }
    let mut all = params;
    all.extend(out);
    all
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<N: Network>(ckpt: &Checkpoint<N>) -> Result<Vec<u8>> {
    let step = ckpt.adam.states.first().map_or(0, |s| s.t);
    if ckpt.adam.states.iter().any(|s| s.t != step) {
        return Err(Error::config("optimizer states disagree on the step count"));
    }
    if ckpt.adam.states.len() != ckpt.net.params().len() {
        return Err(Error::dim(
            "optimizer state count does not match parameters",
        ));
    }
    let adam_cfg = ckpt
        .adam
        .states
        .first()
        .map_or_else(AdamConfig::default, |s| s.config);
    let tensors = named_tensors(ckpt);
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let meta = Metadata {
        kind: N::KIND.to_string(),
        config_digest: N::config_digest(ckpt.net.config()),
        config: ckpt.net.config().clone(),
        iteration: ckpt.iteration,
        seed: ckpt.seed,
        adam: adam_cfg,
        adam_step: step,
        tensors: entries,
    };
    let json = serde_json::to_vec(&meta)?;
    let json_len =
        u32::try_from(json.len()).map_err(|_| Error::config("checkpoint metadata too large"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a checkpoint; `path` only labels errors. With `expected`, the
/// stored architecture must match it.
pub fn decode_checkpoint<N: Network>(
    bytes: &[u8],
    path: &Path,
    expected: Option<&N::Config>,
) -> Result<Checkpoint<N>> {
    use CheckpointErrorKind::*;
    let magic_len = bytes.len().min(MAGIC.len());
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(ckpt_err(BadMagic, path, "file does not start with XOPG"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ckpt_err(
            Truncation,
            path,
            format!("{} byte header is incomplete", bytes.len()),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(ckpt_err(
            VersionMismatch,
            path,
            format!("format version {version}, this build reads {FORMAT_VERSION}"),
        ));
    }
    let json_end = HEADER_LEN + word(8) as usize;
    if bytes.len() < json_end {
        return Err(ckpt_err(Truncation, path, "metadata ends past end of file"));
    }
    let meta: Metadata<serde_json::Value> = serde_json::from_slice(&bytes[HEADER_LEN..json_end])
        .map_err(|e| ckpt_err(Corrupt, path, format!("metadata: {e}")))?;
    if meta.kind != N::KIND {
        return Err(ckpt_err(
            DigestMismatch,
            path,
            format!("expected a {} checkpoint, found {}", N::KIND, meta.kind),
        ));
    }
    let config: N::Config = serde_json::from_value(meta.config)
        .map_err(|e| ckpt_err(Corrupt, path, format!("config: {e}")))?;
    if N::config_digest(&config) != meta.config_digest {
        return Err(ckpt_err(
            Corrupt,
            path,
            "stored config does not hash to stored digest",
        ));
    }
    if let Some(exp) = expected {
        let want = N::config_digest(exp);
        if want != meta.config_digest {
            return Err(ckpt_err(
                DigestMismatch,
                path,
                format!("expected architecture {want}, found {}", meta.config_digest),
            ));
        }
    }
    let mut net =
        N::skeleton(&config).map_err(|e| ckpt_err(Corrupt, path, format!("config: {e}")))?;
    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    let expected_names: Vec<String> = names
        .iter()
        .cloned()
        .chain(
            names
                .iter()
                .flat_map(|n| [format!("adam.m/{n}"), format!("adam.v/{n}")]),
        )
        .collect();
    let stored: Vec<&str> = meta.tensors.iter().map(|e| e.name.as_str()).collect();
    if stored != expected_names {
        return Err(ckpt_err(
            Corrupt,
            path,
            "tensor directory does not match the architecture",
        ));
    }
    let body = &bytes[json_end..];
    let body_len: u64 = meta
        .tensors
        .iter()
        .map(|e| 8 * e.shape.iter().product::<usize>() as u64)
        .sum();
    if (body.len() as u64) < body_len {
        return Err(ckpt_err(
            Truncation,
            path,
            format!("tensor data has {} of {body_len} bytes", body.len()),
        ));
    }
    if body.len() as u64 > body_len {
        return Err(ckpt_err(Corrupt, path, "trailing bytes after tensor data"));
    }
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    let mut expected_offset = 0u64;
    for e in &meta.tensors {
        if e.offset != expected_offset {
            return Err(ckpt_err(
                Corrupt,
                path,
                format!("tensor {} has offset {}", e.name, e.offset),
            ));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let data: Vec<f64> = body[start..start + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        expected_offset += 8 * n as u64;
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|err| ckpt_err(Corrupt, path, format!("tensor {}: {err}", e.name)))?;
        tensors.push(t);
    }
    let n_params = names.len();
    let mut rest = tensors.split_off(n_params);
    for (slot, t) in net.params_mut().into_iter().zip(tensors) {
        if slot.shape() != t.shape() {
            return Err(ckpt_err(
                Corrupt,
                path,
                "tensor shape does not match the architecture",
            ));
        }
        *slot = t;
    }
    let mut states = Vec::with_capacity(n_params);
    let shapes = net.param_shapes();
    let mut moments = rest.drain(..);
    for shape in &shapes {
        let (m, v) = (
            moments.next().expect("counted"),
            moments.next().expect("counted"),
        );
        if m.shape() != shape.as_slice() || v.shape() != shape.as_slice() {
            return Err(ckpt_err(Corrupt, path, "optimizer moment shape mismatch"));
        }
        states.push(AdamState {
            m,
            v,
            t: meta.adam_step,
            config: meta.adam,
        });
    }
    Ok(Checkpoint {
        net,
        adam: Adam { states },
        iteration: meta.iteration,
        seed: meta.seed,
    })
}

/// Writes via a temporary sibling file and rename, so readers never observe
/// a partial checkpoint.
pub fn save_checkpoint<N: Network>(ckpt: &Checkpoint<N>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<N: Network>(
    path: impl AsRef<Path>,
    expected: Option<&N::Config>,
) -> Result<Checkpoint<N>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path, expected)
}
