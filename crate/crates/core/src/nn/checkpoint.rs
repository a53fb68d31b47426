//! Checkpoint files: `VXMCKPT\n`, a little-endian `u32` header length, a
//! TOML header, then every tensor listed in the header as little-endian
//! `f32` values in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::encoder::{Encoder, Params};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::losses::{ClassificationHead, LossConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"VXMCKPT\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Completed training iterations.
    pub iteration: u64,
    pub seed: u64,
    /// Seed of the run this one was warm-started from, if any.
    pub warm_start_seed: Option<u64>,
    pub classes: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to evaluate or resume a run. Parameters are stored in
/// single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Params<f32>,
    pub head: ClassificationHead<f32>,
    /// Optimizer velocity: encoder tensors first, then head tensors.
    pub velocity: Vec<Tensor<f32>>,
}

impl Checkpoint {
    fn entries(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        for (n, t) in self.head.param_names().into_iter().zip(self.head.tensors()) {
            out.push((n.to_string(), t));
        }
        for (i, t) in self.velocity.iter().enumerate() {
            out.push((format!("velocity.{i}"), t));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries = self.entries();
        let mut header = self.header.clone();
        header.format_version = CHECKPOINT_VERSION;
        header.tensors = entries
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let text = toml::to_string(&header)
            .map_err(|e| Error::Checkpoint(format!("serializing header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, t) in entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let text = std::str::from_utf8(text)
            .map_err(|e| Error::Checkpoint(format!("header is not utf-8: {e}")))?;
        let header: CheckpointHeader =
            toml::from_str(text).map_err(|e| Error::Checkpoint(format!("parsing header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }

        let mut pos = 12 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let body = bytes
                .get(pos..pos + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor {}", entry.name)))?;
            let data = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
            pos += 4 * n;
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }

        let encoder = Encoder::new(header.encoder.clone())?;
        let n_enc = encoder.param_names().len();
        let n_head = if header.loss.uses_bias() { 2 } else { 1 };
        if tensors.len() < n_enc + n_head {
            return Err(Error::Checkpoint("missing parameter tensors".into()));
        }
        let mut iter = tensors.into_iter();
        let (names, enc_tensors): (Vec<String>, Vec<Tensor<f32>>) =
            iter.by_ref().take(n_enc).unzip();
        let params = Params::new(names, enc_tensors)?;
        encoder.check_params(&params)?;
        let (_, weight) = iter.next().unwrap();
        let bias = if n_head == 2 { Some(iter.next().unwrap().1) } else { None };
        let head = ClassificationHead::new(weight, bias)?;
        if head.classes() != header.classes || head.dim() != header.encoder.embedding_dim {
            return Err(Error::Checkpoint("head shape disagrees with header".into()));
        }
        let velocity: Vec<Tensor<f32>> = iter.map(|(_, t)| t).collect();
        if !velocity.is_empty() && velocity.len() != n_enc + n_head {
            return Err(Error::Checkpoint(format!(
                "{} velocity buffers for {} parameters",
                velocity.len(),
                n_enc + n_head
            )));
        }
        Ok(Self {
            header,
            params,
            head,
            velocity,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Loads and checks that the stored configuration matches.
    pub fn load_matching(
        path: impl AsRef<Path>,
        encoder: &EncoderConfig,
        loss: &LossConfig,
    ) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.header.encoder != encoder {
            return Err(Error::ConfigMismatch(
                "checkpoint encoder config differs from the run config".into(),
            ));
        }
        if &ckpt.header.loss != loss {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint was trained with {} but the run uses {}",
                ckpt.header.loss.name(),
                loss.name()
            )));
        }
        Ok(ckpt)
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::new(self.header.encoder.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, InitScheme};
    use crate::rng;

    fn sample() -> Checkpoint {
        let cfg = EncoderConfig::desk(4, (12, 9), &[2, 3], Some(0.5)).unwrap();
        let enc = Encoder::new(cfg.clone()).unwrap();
        let mut r = rng::stream(1, &[]);
        let params = init_params::<f32, _>(&enc, InitScheme::He, &mut r);
        let head = ClassificationHead::<f32>::xavier(3, 4, true, &mut r).unwrap();
        let velocity = params
            .tensors()
            .iter()
            .chain(head.tensors())
            .map(|t| {
                let mut v = t.clone();
                v.data_mut().iter_mut().for_each(|x| *x *= 0.5);
                v
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                iteration: 17,
                seed: 42,
                warm_start_seed: None,
                classes: 3,
                lr: 0.01,
                momentum: 0.93,
                weight_decay: 0.0005,
                encoder: cfg,
                loss: LossConfig::Softmax,
                tensors: vec![],
            },
            params,
            head,
            velocity,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.head, ckpt.head);
        assert_eq!(back.velocity, ckpt.velocity);
        assert_eq!(back.header.iteration, 17);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn mismatched_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let ckpt = sample();
        ckpt.save(&p).unwrap();
        let other = EncoderConfig::desk(8, (12, 9), &[2, 3], Some(0.5)).unwrap();
        assert!(matches!(
            Checkpoint::load_matching(&p, &other, &LossConfig::Softmax),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(matches!(
            Checkpoint::load_matching(&p, &ckpt.header.encoder, &LossConfig::am_softmax()),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(Checkpoint::load_matching(&p, &ckpt.header.encoder, &LossConfig::Softmax).is_ok());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
    }
}
