//! Classification heads and their losses.
//!
//! All four variants are a cross-entropy over per-class logits `z`; they
//! differ in how `z` is formed from the embedding `x` and the class weights:
//!
//! * softmax: `z_j = W_j·x + c_j`
//! * angular softmax: `z_j = ‖x‖cos θ_j`, except the true class which uses
//!   `‖x‖(λ cos θ_y + ψ(θ_y)) / (λ + 1)` with the piecewise `ψ`
//! * additive margin: `z_j = s·cos θ_j`, true class `s·(cos θ_y − m)`
//! * logistic margin: `z_j = W_j·x/‖x‖ + c_j`, true class shifted by `−α`
//!
//! Losses are averaged over the batch. Everything is evaluated in `f64`
//! regardless of the tensor element type.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Per-class weight vectors (`C × d`) and optional biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> ClassificationHead<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "head weight must be C x d, got {:?}",
                weight.shape()
            )));
        }
        if weight.shape()[0] < 2 {
            return Err(Error::InvalidArgument("a head needs at least 2 classes".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[0]] {
                return Err(Error::ShapeMismatch(format!(
                    "bias shape {:?} for {} classes",
                    b.shape(),
                    weight.shape()[0]
                )));
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(classes: usize, dim: usize, with_bias: bool) -> Result<Self> {
        Self::new(
            Tensor::zeros(vec![classes, dim]),
            with_bias.then(|| Tensor::zeros(vec![classes])),
        )
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(
        classes: usize,
        dim: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = crate::nn::encoder_xavier::<T, R>(dim, classes, classes * dim, rng);
        Self::new(
            Tensor::new(vec![classes, dim], w)?,
            with_bias.then(|| Tensor::zeros(vec![classes])),
        )
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        if self.bias.is_some() {
            vec!["head.weight", "head.bias"]
        } else {
            vec!["head.weight"]
        }
    }

    pub fn cast<U: Scalar>(&self) -> ClassificationHead<U> {
        ClassificationHead {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Tensor::cast),
        }
    }

    fn weight_row(&self, j: usize) -> Vec<f64> {
        self.weight.row(j).iter().map(|v| v.f64()).collect()
    }

    fn bias_f64(&self) -> Option<Vec<f64>> {
        self.bias.as_ref().map(Tensor::to_f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    Softmax,
    #[serde(rename = "a_softmax")]
    ASoftmax {
        m: u32,
        lambda_base: f64,
        lambda_min: f64,
        gamma: f64,
    },
    #[serde(rename = "am_softmax")]
    AMSoftmax { s: f64, m: f64 },
    LogisticMargin { alpha: f64 },
}

impl LossConfig {
    pub fn a_softmax() -> Self {
        LossConfig::ASoftmax {
            m: 4,
            lambda_base: 1000.0,
            lambda_min: 5.0,
            gamma: 0.015,
        }
    }

    pub fn am_softmax() -> Self {
        LossConfig::AMSoftmax { s: 50.0, m: 0.4 }
    }

    pub fn logistic_margin() -> Self {
        LossConfig::LogisticMargin { alpha: 25.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossConfig::Softmax => "softmax",
            LossConfig::ASoftmax { .. } => "a-softmax",
            LossConfig::AMSoftmax { .. } => "am-softmax",
            LossConfig::LogisticMargin { .. } => "logistic-margin",
        }
    }

    /// Parses a loss name with default hyperparameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "softmax" => Ok(LossConfig::Softmax),
            "a-softmax" | "asoftmax" => Ok(Self::a_softmax()),
            "am-softmax" | "amsoftmax" => Ok(Self::am_softmax()),
            "logistic-margin" | "logistic" | "lm" => Ok(Self::logistic_margin()),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }

    pub fn uses_bias(&self) -> bool {
        matches!(self, LossConfig::Softmax | LossConfig::LogisticMargin { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossConfig::Softmax => Ok(()),
            LossConfig::ASoftmax {
                m,
                lambda_base,
                lambda_min,
                gamma,
            } => {
                if m < 1 {
                    return Err(Error::Config("a-softmax margin m must be >= 1".into()));
                }
                if lambda_base < 0.0 || lambda_min < 0.0 || gamma < 0.0 {
                    return Err(Error::Config("a-softmax lambda parameters must be >= 0".into()));
                }
                Ok(())
            }
            LossConfig::AMSoftmax { s, m } => {
                if !(s > 0.0) {
                    return Err(Error::Config("am-softmax scale s must be > 0".into()));
                }
                if !(m >= 0.0) {
                    return Err(Error::Config("am-softmax margin m must be >= 0".into()));
                }
                Ok(())
            }
            LossConfig::LogisticMargin { alpha } => {
                if !(alpha >= 0.0) {
                    return Err(Error::Config("logistic margin alpha must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Forward and analytic backward for one batch. `iter` drives the
    /// angular-softmax λ annealing and is ignored by the other variants.
    pub fn compute<T: Scalar>(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        head: &ClassificationHead<T>,
        iter: u64,
    ) -> Result<LossOutput<T>> {
        match *self {
            LossConfig::Softmax => softmax_ce(x, labels, head),
            LossConfig::ASoftmax { .. } => asoftmax(x, labels, head, self, iter),
            LossConfig::AMSoftmax { s, m } => amsoftmax(x, labels, head, s, m),
            LossConfig::LogisticMargin { alpha } => logistic_margin(x, labels, head, alpha),
        }
    }

    /// Margin-free class scores used for identification ranking.
    pub fn class_scores<T: Scalar>(
        &self,
        x: &Tensor<T>,
        head: &ClassificationHead<T>,
    ) -> Result<Vec<Vec<f64>>> {
        let (b, _) = check_inputs(x, None, head, self.uses_bias())?;
        let c = head.classes();
        let bias = head.bias_f64();
        let rows: Vec<Vec<f64>> = (0..c).map(|j| head.weight_row(j)).collect();
        let wnorm: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let xi: Vec<f64> = x.row(i).iter().map(|v| v.f64()).collect();
            let xn = norm(&xi);
            let scores = (0..c)
                .map(|j| {
                    let dot = dot(&rows[j], &xi);
                    let bj = bias.as_ref().map_or(0.0, |b| b[j]);
                    match self {
                        LossConfig::Softmax => dot + bj,
                        LossConfig::ASoftmax { .. } => safe_div(dot, wnorm[j]),
                        LossConfig::AMSoftmax { .. } => safe_div(dot, wnorm[j] * xn),
                        LossConfig::LogisticMargin { .. } => safe_div(dot, xn) + bj,
                    }
                })
                .collect();
            out.push(scores);
        }
        Ok(out)
    }
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    /// Mean of the per-example losses.
    pub loss: f64,
    /// Softmax probability of the true class, per example.
    pub prob_true: Vec<f64>,
    pub grad_embedding: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Option<Tensor<T>>,
}

impl<T: Scalar> LossOutput<T> {
    pub fn grad_tensors(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.grad_weight)
            .chain(self.grad_bias.as_ref())
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_inputs<T: Scalar>(
    x: &Tensor<T>,
    labels: Option<&[usize]>,
    head: &ClassificationHead<T>,
    needs_bias: bool,
) -> Result<(usize, usize)> {
    if x.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "embeddings must be B x d, got {:?}",
            x.shape()
        )));
    }
    let (b, d) = (x.shape()[0], x.shape()[1]);
    if d != head.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dim {d} but head expects {}",
            head.dim()
        )));
    }
    if needs_bias != head.bias.is_some() {
        return Err(Error::ConfigMismatch(if needs_bias {
            "loss expects per-class biases".into()
        } else {
            "loss does not use per-class biases".into()
        }));
    }
    if let Some(labels) = labels {
        if labels.len() != b {
            return Err(Error::ShapeMismatch(format!("{} labels for {b} examples", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= head.classes()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: head.classes(),
            });
        }
    }
    Ok((b, d))
}

/// `p - onehot(y)` for the logits, along with `-log p_y` and `p_y`.
fn ce_from_logits(z: &[f64], y: usize) -> (f64, f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let mut g: Vec<f64> = z.iter().map(|&v| (v - lse).exp()).collect();
    let p_y = g[y];
    // when the true class dominates, lse - z_y cancels; use log1p of the rest
    let others: f64 = g.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, p)| p).sum();
    let loss = if z[y] == max {
        z.iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &v)| (v - z[y]).exp())
            .sum::<f64>()
            .ln_1p()
    } else {
        lse - z[y]
    };
    g[y] = -others;
    (loss, p_y, g)
}

struct Accum {
    loss: f64,
    prob_true: Vec<f64>,
    gx: Vec<f64>,
    gw: Vec<f64>,
    gb: Option<Vec<f64>>,
}

impl Accum {
    fn new(b: usize, c: usize, d: usize, bias: bool) -> Self {
        Self {
            loss: 0.0,
            prob_true: Vec::with_capacity(b),
            gx: vec![0.0; b * d],
            gw: vec![0.0; c * d],
            gb: bias.then(|| vec![0.0; c]),
        }
    }

    fn finish<T: Scalar>(self, b: usize, c: usize, d: usize) -> Result<LossOutput<T>> {
        let inv = 1.0 / b as f64;
        let scale = |v: Vec<f64>| v.into_iter().map(|g| g * inv).collect::<Vec<_>>();
        let loss = self.loss * inv;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(LossOutput {
            loss,
            prob_true: self.prob_true,
            grad_embedding: Tensor::from_f64(vec![b, d], &scale(self.gx))?,
            grad_weight: Tensor::from_f64(vec![c, d], &scale(self.gw))?,
            grad_bias: match self.gb {
                Some(gb) => Some(Tensor::from_f64(vec![c], &scale(gb))?),
                None => None,
            },
        })
    }
}

/// Cross-entropy over `W·x + c`.
pub fn softmax_ce<T: Scalar>(
    x: &Tensor<T>,
    labels: &[usize],
    head: &ClassificationHead<T>,
) -> Result<LossOutput<T>> {
    let with_bias = head.bias.is_some();
    let (b, d) = check_inputs(x, Some(labels), head, with_bias)?;
    let c = head.classes();
    let w: Vec<Vec<f64>> = (0..c).map(|j| head.weight_row(j)).collect();
    let bias = head.bias_f64();
    let mut acc = Accum::new(b, c, d, with_bias);
    for i in 0..b {
        let xi: Vec<f64> = x.row(i).iter().map(|v| v.f64()).collect();
        let z: Vec<f64> = (0..c)
            .map(|j| dot(&w[j], &xi) + bias.as_ref().map_or(0.0, |bb| bb[j]))
            .collect();
        let (l, p, g) = ce_from_logits(&z, labels[i]);
        acc.loss += l;
        acc.prob_true.push(p);
        let gx = &mut acc.gx[i * d..(i + 1) * d];
        for j in 0..c {
            for k in 0..d {
                gx[k] += g[j] * w[j][k];
                acc.gw[j * d + k] += g[j] * xi[k];
            }
            if let Some(gb) = acc.gb.as_mut() {
                gb[j] += g[j];
            }
        }
    }
    acc.finish(b, c, d)
}

/// Annealed weight of the plain cosine term.
pub fn asoftmax_lambda(lambda_base: f64, lambda_min: f64, gamma: f64, iter: u64) -> f64 {
    lambda_min.max(lambda_base / (1.0 + gamma * iter as f64))
}

/// Chebyshev polynomials `T_m(c) = cos(mθ)` and `U_{m-1}(c) = sin(mθ)/sin θ`.
fn chebyshev(m: u32, c: f64) -> (f64, f64) {
    // T_0 = 1, T_1 = c; U_0 = 1, U_1 = 2c
    let (mut t_prev, mut t) = (1.0, c);
    let (mut u_prev, mut u) = (0.0, 1.0);
    for _ in 1..m {
        let t_next = 2.0 * c * t - t_prev;
        let u_next = 2.0 * c * u - u_prev;
        t_prev = t;
        t = t_next;
        u_prev = u;
        u = u_next;
    }
    (t, u)
}

/// Branch index `k` with `θ ∈ [kπ/m, (k+1)π/m]`; an exact interior boundary
/// resolves to the branch on its left.
fn psi_branch(m: u32, theta: f64) -> u32 {
    let pos = theta * m as f64 / std::f64::consts::PI;
    let mut k = pos.floor();
    if k >= 1.0 && k == pos {
        k -= 1.0;
    }
    (k.max(0.0) as u32).min(m - 1)
}

/// `ψ(θ) = (−1)^k cos(mθ) − 2k`.
pub fn psi(m: u32, theta: f64) -> f64 {
    let k = psi_branch(m, theta);
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * (m as f64 * theta).cos() - 2.0 * k as f64
}

/// `ψ` as a function of `c = cos θ` and its derivative `dψ/dc`.
fn psi_of_cos(m: u32, c: f64) -> (f64, f64) {
    let c = c.clamp(-1.0, 1.0);
    let k = psi_branch(m, c.acos());
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let (t, u) = chebyshev(m, c);
    (sign * t - 2.0 * k as f64, sign * m as f64 * u)
}

fn normalized_rows<T: Scalar>(head: &ClassificationHead<T>, what: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let c = head.classes();
    let mut rows = Vec::with_capacity(c);
    let mut norms = Vec::with_capacity(c);
    for j in 0..c {
        let r = head.weight_row(j);
        let n = norm(&r);
        if n == 0.0 {
            return Err(Error::ZeroNorm(format!("{what} weight row {j}")));
        }
        rows.push(r.iter().map(|v| v / n).collect());
        norms.push(n);
    }
    Ok((rows, norms))
}

fn unit_embedding<T: Scalar>(x: &Tensor<T>, i: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let xi: Vec<f64> = x.row(i).iter().map(|v| v.f64()).collect();
    let n = norm(&xi);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm(format!("embedding {i}")));
    }
    let unit = xi.iter().map(|v| v / n).collect();
    Ok((xi, unit, n))
}

pub fn asoftmax<T: Scalar>(
    x: &Tensor<T>,
    labels: &[usize],
    head: &ClassificationHead<T>,
    cfg: &LossConfig,
    iter: u64,
) -> Result<LossOutput<T>> {
    let LossConfig::ASoftmax {
        m,
        lambda_base,
        lambda_min,
        gamma,
    } = *cfg
    else {
        return Err(Error::Config("asoftmax called with a different loss config".into()));
    };
    cfg.validate()?;
    let (b, d) = check_inputs(x, Some(labels), head, false)?;
    let c = head.classes();
    let (w_hat, w_norm) = normalized_rows(head, "a-softmax")?;
    let lambda = asoftmax_lambda(lambda_base, lambda_min, gamma, iter);
    let mut acc = Accum::new(b, c, d, false);
    for i in 0..b {
        let (_, xu, xn) = unit_embedding(x, i)?;
        let y = labels[i];
        let cos: Vec<f64> = w_hat.iter().map(|w| dot(w, &xu).clamp(-1.0, 1.0)).collect();
        let (psi_y, dpsi_y) = psi_of_cos(m, cos[y]);
        let phi = (lambda * cos[y] + psi_y) / (lambda + 1.0);
        let dphi = (lambda + dpsi_y) / (lambda + 1.0);
        let z: Vec<f64> = (0..c)
            .map(|j| if j == y { xn * phi } else { xn * cos[j] })
            .collect();
        let (l, p, g) = ce_from_logits(&z, y);
        acc.loss += l;
        acc.prob_true.push(p);
        let gx = &mut acc.gx[i * d..(i + 1) * d];
        for j in 0..c {
            let gj = g[j];
            if j == y {
                // f = ‖x‖ φ(cos θ_y)
                for k in 0..d {
                    gx[k] += gj * (phi * xu[k] + dphi * (w_hat[j][k] - cos[j] * xu[k]));
                    acc.gw[j * d + k] +=
                        gj * xn * dphi * (xu[k] - cos[j] * w_hat[j][k]) / w_norm[j];
                }
            } else {
                // z_j = Ŵ_j · x
                for k in 0..d {
                    gx[k] += gj * w_hat[j][k];
                    acc.gw[j * d + k] += gj * xn * (xu[k] - cos[j] * w_hat[j][k]) / w_norm[j];
                }
            }
        }
    }
    acc.finish(b, c, d)
}

pub fn amsoftmax<T: Scalar>(
    x: &Tensor<T>,
    labels: &[usize],
    head: &ClassificationHead<T>,
    s: f64,
    m: f64,
) -> Result<LossOutput<T>> {
    LossConfig::AMSoftmax { s, m }.validate()?;
    let (b, d) = check_inputs(x, Some(labels), head, false)?;
    let c = head.classes();
    let (w_hat, w_norm) = normalized_rows(head, "am-softmax")?;
    let mut acc = Accum::new(b, c, d, false);
    for i in 0..b {
        let (_, xu, xn) = unit_embedding(x, i)?;
        let y = labels[i];
        let cos: Vec<f64> = w_hat.iter().map(|w| dot(w, &xu)).collect();
        let z: Vec<f64> = (0..c)
            .map(|j| if j == y { s * (cos[j] - m) } else { s * cos[j] })
            .collect();
        let (l, p, g) = ce_from_logits(&z, y);
        acc.loss += l;
        acc.prob_true.push(p);
        let gx = &mut acc.gx[i * d..(i + 1) * d];
        for j in 0..c {
            let gc = s * g[j];
            for k in 0..d {
                gx[k] += gc * (w_hat[j][k] - cos[j] * xu[k]) / xn;
                acc.gw[j * d + k] += gc * (xu[k] - cos[j] * w_hat[j][k]) / w_norm[j];
            }
        }
    }
    acc.finish(b, c, d)
}

pub fn logistic_margin<T: Scalar>(
    x: &Tensor<T>,
    labels: &[usize],
    head: &ClassificationHead<T>,
    alpha: f64,
) -> Result<LossOutput<T>> {
    LossConfig::LogisticMargin { alpha }.validate()?;
    let (b, d) = check_inputs(x, Some(labels), head, true)?;
    let c = head.classes();
    let w: Vec<Vec<f64>> = (0..c).map(|j| head.weight_row(j)).collect();
    let bias = head.bias_f64().expect("checked above");
    let mut acc = Accum::new(b, c, d, true);
    for i in 0..b {
        let (_, xu, xn) = unit_embedding(x, i)?;
        let y = labels[i];
        let z: Vec<f64> = (0..c)
            .map(|j| dot(&w[j], &xu) + bias[j] - if j == y { alpha } else { 0.0 })
            .collect();
        let (l, p, g) = ce_from_logits(&z, y);
        acc.loss += l;
        acc.prob_true.push(p);
        let mut u = vec![0.0; d];
        for j in 0..c {
            for k in 0..d {
                u[k] += g[j] * w[j][k];
                acc.gw[j * d + k] += g[j] * xu[k];
            }
            acc.gb.as_mut().unwrap()[j] += g[j];
        }
        let ux = dot(&u, &xu);
        let gx = &mut acc.gx[i * d..(i + 1) * d];
        for k in 0..d {
            gx[k] += (u[k] - ux * xu[k]) / xn;
        }
    }
    acc.finish(b, c, d)
}

/// Loss instance for finite-difference checks.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub x: Tensor<f64>,
    pub labels: Vec<usize>,
    pub head: ClassificationHead<f64>,
}

impl GradCheckInstance {
    /// Random instance with standard-normal-ish entries.
    pub fn random<R: Rng + ?Sized>(
        batch: usize,
        classes: usize,
        dim: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let x = Tensor::from_f64(vec![batch, dim], &draw(batch * dim))?;
        let w = Tensor::from_f64(vec![classes, dim], &draw(classes * dim))?;
        let bias = if with_bias {
            Some(Tensor::from_f64(vec![classes], &draw(classes))?)
        } else {
            None
        };
        let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        Ok(Self {
            x,
            labels,
            head: ClassificationHead::new(w, bias)?,
        })
    }
}

/// Denominator floor for relative errors; partials smaller than this are
/// compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative discrepancy between analytic partials and central
/// differences `(f(p+h) − f(p−h)) / 2h`, over the embedding and every head
/// parameter.
pub fn grad_check<F>(loss: F, instance: &GradCheckInstance, h: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>, &[usize], &ClassificationHead<f64>) -> Result<LossOutput<f64>>,
{
    let analytic = loss(&instance.x, &instance.labels, &instance.head)?;
    let mut worst: f64 = 0.0;
    let mut compare = |a: f64, n: f64| {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(err);
    };

    let eval = |x: &Tensor<f64>, head: &ClassificationHead<f64>| -> Result<f64> {
        Ok(loss(x, &instance.labels, head)?.loss)
    };

    for idx in 0..instance.x.len() {
        let mut plus = instance.x.clone();
        let mut minus = instance.x.clone();
        plus.data_mut()[idx] += h;
        minus.data_mut()[idx] -= h;
        let n = (eval(&plus, &instance.head)? - eval(&minus, &instance.head)?) / (2.0 * h);
        compare(analytic.grad_embedding.data()[idx], n);
    }
    for idx in 0..instance.head.weight.len() {
        let mut plus = instance.head.clone();
        let mut minus = instance.head.clone();
        plus.weight.data_mut()[idx] += h;
        minus.weight.data_mut()[idx] -= h;
        let n = (eval(&instance.x, &plus)? - eval(&instance.x, &minus)?) / (2.0 * h);
        compare(analytic.grad_weight.data()[idx], n);
    }
    if let (Some(bias), Some(gb)) = (&instance.head.bias, &analytic.grad_bias) {
        for idx in 0..bias.len() {
            let mut plus = instance.head.clone();
            let mut minus = instance.head.clone();
            plus.bias.as_mut().unwrap().data_mut()[idx] += h;
            minus.bias.as_mut().unwrap().data_mut()[idx] -= h;
            let n = (eval(&instance.x, &plus)? - eval(&instance.x, &minus)?) / (2.0 * h);
            compare(gb.data()[idx], n);
        }
    }
    Ok(worst)
}
