//! Identification and verification metrics, and multi-crop embedding
//! extraction.
//!
//! Verification operating points follow one tie convention throughout: a
//! trial is accepted when its score is greater than or equal to the
//! threshold.

use rand::Rng;

use crate::audio::{sample_training_crop, AugmentPolicy, Waveform};
use crate::error::{Error, Result};
use crate::features::Stft;
use crate::nn::{Encoder, Params, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialPair {
    pub label: TrialLabel,
    pub enroll_id: String,
    pub test_id: String,
}

/// Scored verification trials.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub target: Vec<f64>,
    pub nontarget: Vec<f64>,
}

impl ScoreSet {
    pub fn new(target: Vec<f64>, nontarget: Vec<f64>) -> Self {
        Self { target, nontarget }
    }

    pub fn from_labeled(scores: &[(f64, TrialLabel)]) -> Self {
        let mut set = Self::default();
        for &(s, label) in scores {
            match label {
                TrialLabel::Target => set.target.push(s),
                TrialLabel::Nontarget => set.nontarget.push(s),
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.target.len() + self.nontarget.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        if self.target.is_empty() || self.nontarget.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "need target and nontarget trials, got {} and {}",
                self.target.len(),
                self.nontarget.len()
            )));
        }
        if self.target.iter().chain(&self.nontarget).any(|s| s.is_nan()) {
            return Err(Error::NonFinite("trial scores".into()));
        }
        Ok(())
    }
}

/// Detection cost weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            c_miss: 1.0,
            c_fa: 1.0,
            p_target: 0.01,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::InvalidArgument("detection costs must be positive".into()));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::InvalidArgument("target prior must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// `C_miss·P_miss·P_tar + C_fa·P_fa·(1 − P_tar)`.
    pub fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        self.c_miss * p_miss * self.p_target + self.c_fa * p_fa * (1.0 - self.p_target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Fraction of target trials scored below the threshold.
    pub p_miss: f64,
    /// Fraction of nontarget trials scored at or above the threshold.
    pub p_fa: f64,
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine scoring".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Operating points at `−∞`, every midpoint between adjacent distinct
/// scores, and `+∞`, in increasing threshold order.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score set".into()));
    }
    if scores.target.iter().chain(&scores.nontarget).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("trial scores".into()));
    }
    let mut all: Vec<(f64, bool)> = scores
        .target
        .iter()
        .map(|&s| (s, true))
        .chain(scores.nontarget.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nt = scores.target.len() as f64;
    let nn = scores.nontarget.len() as f64;
    // With no targets (or no nontargets) the corresponding rate is defined as 0.
    let rate = |count: usize, total: f64| if total > 0.0 { count as f64 / total } else { 0.0 };

    let mut points = Vec::with_capacity(all.len() + 1);
    let (mut missed, mut rejected_nontarget) = (0usize, 0usize);
    points.push(OperatingPoint {
        threshold: f64::NEG_INFINITY,
        p_miss: 0.0,
        p_fa: rate(scores.nontarget.len(), nn),
    });
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                missed += 1;
            } else {
                rejected_nontarget += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() {
            value + (all[i].0 - value) / 2.0
        } else {
            f64::INFINITY
        };
        points.push(OperatingPoint {
            threshold,
            p_miss: rate(missed, nt),
            p_fa: rate(scores.nontarget.len() - rejected_nontarget, nn),
        });
    }
    Ok(points)
}

/// Equal error rate, linearly interpolated where `P_miss − P_fa` changes
/// sign, and the threshold where it happens.
pub fn eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    scores.check()?;
    let points = det_points(scores)?;
    let diff = |p: &OperatingPoint| p.p_miss - p.p_fa;
    let i = points
        .iter()
        .position(|p| diff(p) >= 0.0)
        .expect("last point has p_miss = 1, p_fa = 0");
    let hi = points[i];
    if diff(&hi) == 0.0 || i == 0 {
        return Ok((hi.p_miss, hi.threshold));
    }
    let lo = points[i - 1];
    let a = -diff(&lo) / (diff(&hi) - diff(&lo));
    let rate = lo.p_miss + a * (hi.p_miss - lo.p_miss);
    let threshold = if lo.threshold.is_finite() && hi.threshold.is_finite() {
        lo.threshold + a * (hi.threshold - lo.threshold)
    } else {
        hi.threshold
    };
    Ok((rate, threshold))
}

/// Minimum detection cost over all operating points, and its threshold.
pub fn min_dcf(scores: &ScoreSet, params: &DcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    scores.check()?;
    let points = det_points(scores)?;
    let best = points
        .iter()
        .map(|p| (params.cost(p.p_miss, p.p_fa), p.threshold))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least two points");
    Ok(best)
}

/// Fraction of rows whose true label is among the `k` highest scores; equal
/// scores rank the lower class index first.
pub fn topk_accuracy(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to rank".into()));
    }
    let mut hits = 0usize;
    for (row, &y) in rows.iter().zip(labels) {
        let classes = row.len();
        if k == 0 || k > classes {
            return Err(Error::InvalidArgument(format!("k = {k} with {classes} classes")));
        }
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let sy = row[y];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > sy || (s == sy && j < y))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

/// Averages the eval-mode embeddings of `n_crops` crops drawn with `policy`.
pub fn extract_embedding<T: Scalar, R: Rng + ?Sized>(
    encoder: &Encoder,
    params: &Params<T>,
    stft: &Stft,
    w: &Waveform,
    n_crops: usize,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_crops == 0 {
        return Err(Error::InvalidArgument("n_crops must be >= 1".into()));
    }
    let (frames, bins) = encoder.config().input_shape;
    let mut batch = Vec::with_capacity(n_crops * frames * bins);
    for _ in 0..n_crops {
        let crop = sample_training_crop(w, policy, rng)?;
        let spec = stft.normalized(&crop)?;
        if spec.frames() != frames || spec.bins() != bins {
            return Err(Error::ShapeMismatch(format!(
                "crop yields {}x{} features, encoder expects {frames}x{bins}",
                spec.frames(),
                spec.bins()
            )));
        }
        batch.extend(spec.values().iter().map(|&v| T::of(v)));
    }
    let batch = Tensor::new(vec![n_crops, frames, bins], batch)?;
    let out = encoder.embed(params, &batch)?;
    let d = encoder.embedding_dim();
    let mut mean = vec![0.0; d];
    for i in 0..n_crops {
        for (m, v) in mean.iter_mut().zip(out.row(i)) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_crops as f64);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct O(n²) evaluation: every candidate threshold counts misses and
    /// false alarms by scanning all trials.
    fn brute_points(s: &ScoreSet) -> Vec<(f64, f64, f64)> {
        let mut values: Vec<f64> = s.target.iter().chain(&s.nontarget).copied().collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut thresholds = vec![f64::NEG_INFINITY];
        thresholds.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        thresholds.push(f64::INFINITY);
        thresholds
            .into_iter()
            .map(|t| {
                let miss = s.target.iter().filter(|&&v| v < t).count() as f64 / s.target.len() as f64;
                let fa = s.nontarget.iter().filter(|&&v| v >= t).count() as f64
                    / s.nontarget.len() as f64;
                (t, miss, fa)
            })
            .collect()
    }

    /// EER as the crossing of the polyline through the brute-force points
    /// with the diagonal `P_miss = P_fa`.
    fn brute_eer(s: &ScoreSet) -> f64 {
        let pts = brute_points(s);
        for w in pts.windows(2) {
            let (_, m0, f0) = w[0];
            let (_, m1, f1) = w[1];
            let (d0, d1) = (m0 - f0, m1 - f1);
            if d0 < 0.0 && d1 >= 0.0 {
                let a = d0 / (d0 - d1);
                return m0 + a * (m1 - m0);
            }
        }
        pts[0].1
    }

    fn brute_min_dcf(s: &ScoreSet, p: &DcfParams) -> f64 {
        brute_points(s)
            .into_iter()
            .map(|(_, m, f)| p.cost(m, f))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine_score(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn eer_examples() {
        let separated = ScoreSet::new(vec![0.9, 0.8], vec![0.1, 0.2]);
        assert_eq!(eer(&separated).unwrap().0, 0.0);
        let same = ScoreSet::new(vec![0.5; 7], vec![0.5; 9]);
        assert_eq!(eer(&same).unwrap().0, 0.5);
        let s = ScoreSet::new(vec![0.9, 0.8, 0.4], vec![0.7, 0.3, 0.2]);
        let (rate, t) = eer(&s).unwrap();
        assert!((rate - 1.0 / 3.0).abs() < 1e-15);
        assert!(t > 0.4 && t <= 0.7, "threshold {t}");
        assert!(eer(&ScoreSet::new(vec![0.3], vec![])).is_err());
    }

    #[test]
    fn dcf_examples() {
        let p = DcfParams::default();
        assert_eq!(p.cost(1.0, 0.0), 0.01);
        assert_eq!(p.cost(0.0, 1.0), 0.99);
        let separated = ScoreSet::new(vec![0.9, 0.8], vec![0.1, 0.2]);
        assert_eq!(min_dcf(&separated, &p).unwrap().0, 0.0);
        let reversed = ScoreSet::new(vec![0.1], vec![0.9]);
        assert_eq!(min_dcf(&reversed, &p).unwrap().0, 0.01);
    }

    #[test]
    fn det_point_examples() {
        let pts = det_points(&ScoreSet::new(vec![1.0], vec![0.0])).unwrap();
        assert!(pts.iter().any(|p| p.p_miss == 0.0 && p.p_fa == 0.0));
        let first = pts.first().unwrap();
        let last = pts.last().unwrap();
        assert_eq!((first.p_miss, first.p_fa), (0.0, 1.0));
        assert_eq!((last.p_miss, last.p_fa), (1.0, 0.0));
        assert_eq!(first.threshold, f64::NEG_INFINITY);
        assert_eq!(last.threshold, f64::INFINITY);
    }

    #[test]
    fn ties_count_as_accept() {
        let pts = det_points(&ScoreSet::new(vec![0.5, 0.7], vec![0.5])).unwrap();
        // thresholds: -inf, 0.6, +inf; at 0.6 the 0.5 nontarget is rejected
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1].threshold, 0.6);
        assert_eq!((pts[1].p_miss, pts[1].p_fa), (0.5, 0.0));
    }

    #[test]
    fn random_trials_match_brute_force() {
        let mut r = rng::stream(31, &[]);
        let p = DcfParams::default();
        for round in 0..5 {
            let mut s = ScoreSet::default();
            for _ in 0..1000 {
                // integer grid forces plenty of exact ties
                let target = r.random_bool(0.3);
                let v = (r.random_range(-1.0..1.0f64) * 50.0).round() + if target { 15.0 } else { 0.0 };
                if target {
                    s.target.push(v);
                } else {
                    s.nontarget.push(v);
                }
            }
            let (e, _) = eer(&s).unwrap();
            assert!((e - brute_eer(&s)).abs() <= 1e-9, "round {round}");
            let (d, _) = min_dcf(&s, &p).unwrap();
            assert_eq!(d, brute_min_dcf(&s, &p));
            assert!(d <= 0.01);
            let pts = det_points(&s).unwrap();
            for w in pts.windows(2) {
                assert!(w[1].p_miss >= w[0].p_miss);
                assert!(w[1].p_fa <= w[0].p_fa);
                assert!(w[1].threshold > w[0].threshold);
            }
        }
    }

    #[test]
    fn topk_examples() {
        let rows = vec![vec![0.1, 0.9, 0.3], vec![0.5, 0.2, 0.1]];
        assert_eq!(topk_accuracy(&rows, &[0, 2], 3).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&rows, &[1, 0], 1).unwrap(), 1.0);
        assert!(topk_accuracy(&rows, &[1, 0], 4).is_err());

        // true labels ranked 1st, 3rd and 6th of 10
        let mk = |rank: usize| -> (Vec<f64>, usize) {
            let row: Vec<f64> = (0..10).map(|j| 10.0 - j as f64).collect();
            (row, rank - 1)
        };
        let (rows, labels): (Vec<_>, Vec<_>) = [1, 3, 6].into_iter().map(mk).unzip();
        assert!((topk_accuracy(&rows, &labels, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((topk_accuracy(&rows, &labels, 5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn topk_ties_favor_lower_index() {
        let rows = vec![vec![1.0, 1.0, 1.0]];
        assert_eq!(topk_accuracy(&rows, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&rows, &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&rows, &[2], 2).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn eer_invariant_under_monotone_transform(
            t in proptest::collection::vec(-3.0f64..3.0, 1..40),
            n in proptest::collection::vec(-3.0f64..3.0, 1..40),
        ) {
            let base = ScoreSet::new(t.clone(), n.clone());
            let f = |v: f64| (v * 0.7).exp() * 3.0 - 1.0;
            let mapped = ScoreSet::new(t.iter().map(|&v| f(v)).collect(), n.iter().map(|&v| f(v)).collect());
            let (a, _) = eer(&base).unwrap();
            let (b, _) = eer(&mapped).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn topk_monotone_in_k(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 6), 1..20),
            seed in any::<u64>(),
        ) {
            let mut r = rng::stream(seed, &[]);
            let labels: Vec<usize> = rows.iter().map(|_| r.random_range(0..6)).collect();
            let mut prev = 0.0;
            for k in 1..=6 {
                let acc = topk_accuracy(&rows, &labels, k).unwrap();
                prop_assert!(acc >= prev);
                prev = acc;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}
