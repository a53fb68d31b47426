//! Closed-set identification: rank training speakers by the head's
//! margin-free class scores.

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::topk_accuracy;
use crate::losses::{ClassificationHead, LossConfig};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentReport {
    pub n: usize,
    pub top1: f64,
    /// Absent when there are fewer than five classes.
    pub top5: Option<f64>,
}

pub fn class_score_rows(
    loss: &LossConfig,
    head: &ClassificationHead<f32>,
    embeddings: &[&[f64]],
) -> Result<Vec<Vec<f64>>> {
    let d = head.dim();
    let mut data = Vec::with_capacity(embeddings.len() * d);
    for e in embeddings {
        if e.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "embedding of dimension {} for a head of dimension {d}",
                e.len()
            )));
        }
        data.extend(e.iter().map(|&v| v as f32));
    }
    let x = Tensor::new(vec![embeddings.len(), d], data)?;
    loss.class_scores(&x, head)
}

/// Top-1/Top-5 over the store rows named by `ids`, with `labels` aligned to `ids`.
pub fn evaluate_ident(
    loss: &LossConfig,
    head: &ClassificationHead<f32>,
    store: &EmbeddingStore,
    ids: &[String],
    labels: &[usize],
) -> Result<IdentReport> {
    if ids.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} ids but {} labels", ids.len(), labels.len())));
    }
    if ids.is_empty() {
        return Err(Error::InvalidArgument("no utterances to identify".into()));
    }
    let rows: Vec<&[f64]> = ids.iter().map(|id| store.get(id)).collect::<Result<_>>()?;
    let scores = class_score_rows(loss, head, &rows)?;
    let top5 = if head.classes() >= 5 {
        Some(topk_accuracy(&scores, labels, 5)?)
    } else {
        None
    };
    Ok(IdentReport {
        n: ids.len(),
        top1: topk_accuracy(&scores, labels, 1)?,
        top5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(weight: Vec<f64>, classes: usize, dim: usize) -> ClassificationHead<f32> {
        ClassificationHead::new(Tensor::from_f64(vec![classes, dim], &weight).unwrap(), None).unwrap()
    }

    fn biased(weight: Vec<f64>, classes: usize, dim: usize) -> ClassificationHead<f32> {
        let w = Tensor::from_f64(vec![classes, dim], &weight).unwrap();
        ClassificationHead::new(w, Some(Tensor::zeros(vec![classes]))).unwrap()
    }

    #[test]
    fn one_hot_embeddings_identify_perfectly() {
        let h = biased(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let store = EmbeddingStore::new(vec!["a".into(), "b".into()], 2, vec![3.0, 0.0, 0.0, 2.0]).unwrap();
        let r = evaluate_ident(&LossConfig::Softmax, &h, &store, &store.ids().to_vec(), &[0, 1]).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.top5, None);
    }

    #[test]
    fn ranked_first_third_sixth_of_ten() {
        // class j scores x·e_j = x_j, so the embedding itself is the score row
        let mut w = vec![0.0; 100];
        for j in 0..10 {
            w[j * 10 + j] = 1.0;
        }
        let h = biased(w, 10, 10);
        let row = |true_class: usize, rank: usize| {
            let mut v: Vec<f64> = (0..10).map(|j| 10.0 - j as f64).collect();
            // place the true class at the requested rank by swapping values
            v.swap(true_class, rank);
            v
        };
        let rows = [row(4, 0), row(4, 2), row(4, 5)];
        let values: Vec<f64> = rows.concat();
        let ids: Vec<String> = (0..3).map(|i| format!("u{i}")).collect();
        let store = EmbeddingStore::new(ids.clone(), 10, values).unwrap();
        let r = evaluate_ident(&LossConfig::Softmax, &h, &store, &ids, &[4, 4, 4]).unwrap();
        assert!((r.top1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.top5.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn k_equal_to_classes_is_perfect() {
        let h = head(vec![0.3, -1.0, 2.0, 0.5, 0.1, 0.2, -0.4, 0.9, 1.1, -0.7], 5, 2);
        let store = EmbeddingStore::new(vec!["a".into(), "b".into()], 2, vec![0.1, 0.2, -1.0, 0.3]).unwrap();
        let r = evaluate_ident(&LossConfig::am_softmax(), &h, &store, &store.ids().to_vec(), &[3, 0]).unwrap();
        assert_eq!(r.top5, Some(1.0));
    }
}
