//! `.sscxr` model archives.
//!
//! Layout: the 8-byte magic `SSCXRCK\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the UTF-8 JSON header, then
//! every array as raw little-endian `f32` values in header order. The header
//! carries configs, provenance and an array table with a SHA-256 per array.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cls::ClsHeadConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, ParamStore};
use crate::pretrain::DecoderConfig;
use crate::scalar::{lit, Scalar};
use crate::seg::SegDecoderConfig;
use crate::vit::{EncoderConfig, ENCODER_PREFIX};

pub const MAGIC: &[u8; 8] = b"SSCXRCK\0";
pub const FORMAT_VERSION: u32 = 1;
const OPTIM_FIRST: &str = "optim.m/";
const OPTIM_SECOND: &str = "optim.v/";

/// The task-specific part of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadConfig {
    Reconstruction(DecoderConfig),
    Classification(ClsHeadConfig),
    Segmentation(SegDecoderConfig),
}

impl HeadConfig {
    pub fn task_name(&self) -> &'static str {
        match self {
            HeadConfig::Reconstruction(_) => "pretrain",
            HeadConfig::Classification(_) => "cls",
            HeadConfig::Segmentation(_) => "seg",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub epochs_completed: usize,
    pub steps_completed: usize,
    /// Pre-update loss of every optimization step so far.
    pub loss_history: Vec<f64>,
    pub config_hash: String,
    /// Serialized training settings, kept so a run can be resumed or audited.
    #[serde(default)]
    pub training: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: AdamWConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub head: Option<HeadConfig>,
    pub provenance: Provenance,
    pub optimizer: Option<OptimizerHeader>,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    head: Option<HeadConfig>,
    provenance: Provenance,
    optimizer: Option<OptimizerHeader>,
    arrays: Vec<ArrayEntry>,
}

/// Options for [`load_checkpoint`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Drop everything except encoder weights.
    pub encoder_only: bool,
    /// Reject the file unless its recorded config hash equals this one.
    pub expected_config_hash: Option<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn array_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// SHA-256 over the canonical JSON of the architecture configs.
pub fn config_hash(encoder: &EncoderConfig, head: Option<&HeadConfig>) -> String {
    let doc = serde_json::to_string(&(encoder, head)).expect("configs serialize");
    hex(&Sha256::digest(doc.as_bytes()))
}

impl Checkpoint {
    /// Captures every parameter in `store` as f32.
    pub fn from_store<T: Scalar>(
        encoder: &EncoderConfig,
        head: Option<HeadConfig>,
        store: &ParamStore<T>,
        mut provenance: Provenance,
    ) -> Self {
        provenance.config_hash = config_hash(encoder, head.as_ref());
        let arrays = store
            .iter()
            .map(|p| NamedArray {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.value.iter().map(|v| v.to_f32_lossy()).collect(),
            })
            .collect();
        Checkpoint {
            encoder: encoder.clone(),
            head,
            provenance,
            optimizer: None,
            arrays,
        }
    }

    /// Adds the optimizer moments so training can resume exactly.
    pub fn with_optimizer<T: Scalar>(mut self, optimizer: &AdamW<T>, store: &ParamStore<T>) -> Self {
        for (prefix, moments) in [(OPTIM_FIRST, &optimizer.first), (OPTIM_SECOND, &optimizer.second)] {
            for (p, m) in store.iter().zip(moments) {
                self.arrays.push(NamedArray {
                    name: format!("{prefix}{}", p.name),
                    shape: p.shape.clone(),
                    data: m.iter().map(|v| v.to_f32_lossy()).collect(),
                });
            }
        }
        self.optimizer = Some(OptimizerHeader {
            config: optimizer.config,
            step: optimizer.step,
        });
        self
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Names of model weight arrays (optimizer moments excluded).
    pub fn weight_names(&self) -> impl Iterator<Item = &str> {
        self.arrays
            .iter()
            .map(|a| a.name.as_str())
            .filter(|n| !n.starts_with(OPTIM_FIRST) && !n.starts_with(OPTIM_SECOND))
    }

    /// Keeps only encoder weights; heads, decoder and optimizer state go.
    pub fn into_encoder_only(mut self) -> Self {
        self.arrays.retain(|a| a.name.starts_with(ENCODER_PREFIX));
        self.head = None;
        self.optimizer = None;
        self
    }

    /// Copies arrays into every store parameter whose name starts with
    /// `prefix`. Missing or mis-shaped arrays are errors.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for p in store.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            let a = self.array(&p.name).ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint has no array `{}`", p.name)))?;
            if a.shape != p.shape {
                return Err(Error::CheckpointMismatch(format!("array `{}` has shape {:?}, model expects {:?}", p.name, a.shape, p.shape)));
            }
            for (v, &s) in p.value.iter_mut().zip(&a.data) {
                *v = lit(s as f64);
            }
            copied += 1;
        }
        Ok(copied)
    }

    /// Rebuilds the optimizer saved by [`Checkpoint::with_optimizer`].
    pub fn restore_optimizer<T: Scalar>(&self, store: &ParamStore<T>) -> Result<AdamW<T>> {
        let header = self.optimizer.as_ref().ok_or_else(|| Error::CheckpointMismatch("checkpoint carries no optimizer state".into()))?;
        let mut opt = AdamW::new(header.config, store);
        opt.step = header.step;
        for (prefix, moments) in [(OPTIM_FIRST, &mut opt.first), (OPTIM_SECOND, &mut opt.second)] {
            for (p, m) in store.iter().zip(moments.iter_mut()) {
                let name = format!("{prefix}{}", p.name);
                let a = self.array(&name).ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint has no array `{name}`")))?;
                if a.data.len() != m.len() {
                    return Err(Error::CheckpointMismatch(format!("array `{name}` has the wrong length")));
                }
                for (v, &s) in m.iter_mut().zip(&a.data) {
                    *v = lit(s as f64);
                }
            }
        }
        Ok(opt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            let bytes = array_bytes(&a.data);
            entries.push(ArrayEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset: payload.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            });
            payload.extend_from_slice(&bytes);
        }
        let header = Header {
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            provenance: self.provenance.clone(),
            optimizer: self.optimizer.clone(),
            arrays: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path, options: &LoadOptions) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("not an .sscxr checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(fail(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(fail("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| fail(format!("malformed header: {e}")))?;
        header.encoder.validate()?;
        if let Some(expected) = &options.expected_config_hash {
            let stored = config_hash(&header.encoder, header.head.as_ref());
            if &header.provenance.config_hash != expected || &stored != expected {
                return Err(fail(format!(
                    "config hash {} does not match expected {expected}",
                    header.provenance.config_hash
                )));
            }
        }
        let payload = &body[header_len..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let keep = !options.encoder_only || e.name.starts_with(ENCODER_PREFIX);
            let array_fail = |message: &str| Error::CheckpointArray {
                path: path.to_path_buf(),
                array: e.name.clone(),
                message: message.to_string(),
            };
            let len = e.shape.iter().product::<usize>();
            let start = e.offset as usize;
            let end = start
                .checked_add(len * 4)
                .ok_or_else(|| array_fail("offset overflow"))?;
            if end > payload.len() {
                return Err(array_fail("data is truncated"));
            }
            let raw = &payload[start..end];
            if hex(&Sha256::digest(raw)) != e.sha256 {
                return Err(array_fail("checksum mismatch"));
            }
            if !keep {
                continue;
            }
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data: raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            });
        }
        let ck = Checkpoint {
            encoder: header.encoder,
            head: header.head,
            provenance: header.provenance,
            optimizer: header.optimizer,
            arrays,
        };
        Ok(if options.encoder_only { ck.into_encoder_only() } else { ck })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, options: &LoadOptions) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn sample() -> (Checkpoint, ParamStore<f32>) {
        let mut store = ParamStore::<f32>::new();
        store.register("encoder.a", &[2, 3], Init::TruncNormal(0.5), true, 3);
        store.register("decoder.b", &[4], Init::TruncNormal(0.5), true, 3);
        let opt = AdamW::new(AdamWConfig::new(1e-3, 0.0), &store);
        let ck = Checkpoint::from_store(
            &EncoderConfig::tiny(),
            Some(HeadConfig::Reconstruction(DecoderConfig::default())),
            &store,
            Provenance {
                seed: 9,
                loss_history: vec![0.5, 0.25],
                ..Default::default()
            },
        )
        .with_optimizer(&opt, &store);
        (ck, store)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (ck, _) = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x"), &LoadOptions::default()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn encoder_only_drops_other_arrays() {
        let (ck, _) = sample();
        let opts = LoadOptions {
            encoder_only: true,
            ..Default::default()
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("x"), &opts).unwrap();
        assert_eq!(back.weight_names().collect::<Vec<_>>(), vec!["encoder.a"]);
        assert!(back.head.is_none());
    }

    #[test]
    fn flipped_byte_names_the_array() {
        let (ck, _) = sample();
        let mut bytes = ck.to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        match Checkpoint::from_bytes(&bytes, Path::new("x"), &LoadOptions::default()) {
            Err(Error::CheckpointArray { array, .. }) => assert_eq!(array, "optim.v/decoder.b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_and_hash_mismatch_are_rejected() {
        let (ck, _) = sample();
        let mut bytes = ck.to_bytes();
        bytes[8] = 7;
        assert!(Checkpoint::from_bytes(&bytes, Path::new("x"), &LoadOptions::default()).is_err());
        let opts = LoadOptions {
            expected_config_hash: Some("00".into()),
            ..Default::default()
        };
        assert!(Checkpoint::from_bytes(&ck.to_bytes(), Path::new("x"), &opts).is_err());
        let opts = LoadOptions {
            expected_config_hash: Some(ck.provenance.config_hash.clone()),
            ..Default::default()
        };
        assert!(Checkpoint::from_bytes(&ck.to_bytes(), Path::new("x"), &opts).is_ok());
    }

    #[test]
    fn optimizer_state_restores() {
        let (ck, store) = sample();
        let opt = ck.restore_optimizer(&store).unwrap();
        assert_eq!(opt.step, 0);
        assert_eq!(opt.first.len(), 2);
    }
}
