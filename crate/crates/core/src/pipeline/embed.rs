//! Embedding extraction over a set of utterances and the on-disk store: a
//! feature-style matrix file plus an `.ids` sidecar with one id per line.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::Utterances;
use crate::audio::AugmentPolicy;
use crate::error::{Error, Result};
use crate::eval::extract_embedding;
use crate::features::{read_matrix, write_matrix, Stft};
use crate::nn::{Encoder, Params};
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    dim: usize,
    /// Row-major, one row per id. Values are stored in single precision.
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} ids of dimension {dim}",
                values.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate embedding id {id}")));
            }
        }
        // round through f32 so in-memory and on-disk stores agree exactly
        let values = values.into_iter().map(|v| v as f32 as f64).collect();
        Ok(Self {
            ids,
            dim,
            values,
            index,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.index
            .get(id)
            .map(|&i| self.row(i))
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn ids_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".ids");
        PathBuf::from(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_matrix(path, self.ids.len(), self.dim, &self.values)?;
        let ids_path = Self::ids_path(path);
        let mut text = String::new();
        for id in &self.ids {
            text.push_str(id);
            text.push('\n');
        }
        fs::write(&ids_path, text).map_err(|e| Error::io(&ids_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (rows, cols, values) = read_matrix(path)?;
        let ids_path = Self::ids_path(path);
        let text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let ids: Vec<String> = text.lines().map(str::to_string).collect();
        if ids.len() != rows {
            return Err(Error::Parse(format!(
                "{} ids for {rows} embedding rows",
                ids.len()
            )));
        }
        Self::new(ids, cols, values.into_iter().map(f64::from).collect())
    }
}

/// Multi-crop embeddings for every utterance. The crops of utterance `i` come
/// from a stream derived from `(seed, i)`, so results do not depend on
/// processing order.
pub fn embed_utterances(
    encoder: &Encoder,
    params: &Params<f32>,
    stft: &Stft,
    utts: &Utterances,
    n_crops: usize,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<EmbeddingStore> {
    let d = encoder.embedding_dim();
    let mut values = Vec::with_capacity(utts.len() * d);
    for (i, w) in utts.waveforms.iter().enumerate() {
        let mut r = rng::stream(seed, &[domain::EMBED, i as u64]);
        values.extend(extract_embedding(encoder, params, stft, w, n_crops, policy, &mut r)?);
    }
    EmbeddingStore::new(utts.ids.clone(), d, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let store = EmbeddingStore::new(
            vec!["a.wav".into(), "b/c.wav".into()],
            3,
            vec![0.1, -2.0, 3.5, 1.0 / 3.0, 0.0, 7.25],
        )
        .unwrap();
        store.save(&path).unwrap();
        let back = EmbeddingStore::load(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.get("b/c.wav").unwrap()[2], 7.25);
        assert!(matches!(back.get("nope"), Err(Error::UnknownId(_))));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let r = EmbeddingStore::new(vec!["a".into(), "a".into()], 1, vec![1.0, 2.0]);
        assert!(r.is_err());
    }
}
