use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::{shape_propagate, ActShape, EncoderConfig, LayerConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// He-normal convolutions, Xavier-uniform dense layers.
    He,
    /// Xavier-uniform everywhere.
    Xavier,
}

static NEXT_PARAMS_ID: AtomicU64 = AtomicU64::new(1);

/// Named parameter tensors in a fixed order.
///
/// Every mutable access bumps a generation counter, so a forward cache taken
/// before an update is detected as stale by [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    id: u64,
    generation: u64,
}

impl<T: Scalar> PartialEq for Params<T> {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

impl<T: Scalar> Params<T> {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )));
        }
        Ok(Self {
            names,
            tensors,
            id: NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self::new(self.names.clone(), tensors).expect("matching lengths")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        self.generation += 1;
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params::new(self.names.clone(), self.tensors.iter().map(Tensor::cast).collect())
            .expect("matching lengths")
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Adds `other` elementwise; used to reduce per-example gradients.
    pub fn accumulate(&mut self, other: &Params<T>) {
        for (a, b) in self.tensors_mut().iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    input: ActShape,
    output: ActShape,
    w: usize,
    b: usize,
}

impl ConvSpec {
    fn pad(&self) -> isize {
        (self.k as isize - 1) / 2
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv(ConvSpec),
    Residual {
        convs: Vec<ConvSpec>,
        proj: Option<ConvSpec>,
    },
    Relu,
    Pool {
        input: ActShape,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        w: usize,
        b: usize,
    },
    Dropout {
        p: f64,
    },
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Conv { input: Vec<T> },
    Residual {
        input: Vec<T>,
        /// pre-activation output of every conv
        pre: Vec<Vec<T>>,
        sum: Vec<T>,
    },
    Relu { output: Vec<T> },
    Pool,
    Dense { input: Vec<T> },
    Dropout { mask: Option<Vec<T>> },
}

/// Activations saved by [`Encoder::forward`] for the matching backward call.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    params_id: u64,
    generation: u64,
    n_ops: usize,
    examples: Vec<Vec<LayerCache<T>>>,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }
}

/// Executable layer plan compiled from an [`EncoderConfig`].
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    shapes: Vec<ActShape>,
    ops: Vec<Op>,
    param_names: Vec<String>,
    param_shapes: Vec<Vec<usize>>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let shapes = shape_propagate(&config)?;
        let mut names = Vec::new();
        let mut pshapes: Vec<Vec<usize>> = Vec::new();
        let mut add = |name: String, shape: Vec<usize>| {
            names.push(name);
            pshapes.push(shape);
            pshapes.len() - 1
        };
        let mut conv = |prefix: &str, in_s: ActShape, out_c: usize, k: usize, stride: usize| {
            let out_s = ActShape::new(
                out_c,
                in_s.height.div_ceil(stride),
                in_s.width.div_ceil(stride),
            );
            let w = add(format!("{prefix}.weight"), vec![out_c, in_s.channels, k, k]);
            let b = add(format!("{prefix}.bias"), vec![out_c]);
            ConvSpec {
                in_c: in_s.channels,
                out_c,
                k,
                stride,
                input: in_s,
                output: out_s,
                w,
                b,
            }
        };
        let mut ops = Vec::with_capacity(config.layers.len());
        let mut dense_params = Vec::new();
        for (i, layer) in config.layers.iter().enumerate() {
            let input = shapes[i];
            let op = match *layer {
                LayerConfig::Conv3x3 {
                    out_channels,
                    stride,
                } => Op::Conv(conv(&format!("conv{i}"), input, out_channels, 3, stride)),
                LayerConfig::ResidualBlock { channels, n_convs } => {
                    let mut convs = Vec::with_capacity(n_convs);
                    let mut s = input;
                    for j in 0..n_convs {
                        let c = conv(&format!("res{i}.conv{j}"), s, channels, 3, 1);
                        s = c.output;
                        convs.push(c);
                    }
                    let proj = (input.channels != channels)
                        .then(|| conv(&format!("res{i}.proj"), input, channels, 1, 1));
                    Op::Residual { convs, proj }
                }
                LayerConfig::Relu => Op::Relu,
                LayerConfig::TemporalAvgPool { .. } => Op::Pool { input },
                LayerConfig::Dense { out_dim } => {
                    dense_params.push((i, input.numel(), out_dim));
                    Op::Dense {
                        in_dim: input.numel(),
                        out_dim,
                        w: usize::MAX,
                        b: usize::MAX,
                    }
                }
                LayerConfig::Dropout { p } => Op::Dropout { p },
            };
            ops.push(op);
        }
        // dense parameters registered after the convs borrow ends
        drop(conv);
        for (i, in_dim, out_dim) in dense_params {
            let w = add(format!("dense{i}.weight"), vec![out_dim, in_dim]);
            let b = add(format!("dense{i}.bias"), vec![out_dim]);
            if let Op::Dense { w: ow, b: ob, .. } = &mut ops[i] {
                *ow = w;
                *ob = b;
            }
        }
        Ok(Self {
            config,
            shapes,
            ops,
            param_names: names,
            param_shapes: pshapes,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn shapes(&self) -> &[ActShape] {
        &self.shapes
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn param_shapes(&self) -> &[Vec<usize>] {
        &self.param_shapes
    }

    pub fn zero_params<T: Scalar>(&self) -> Params<T> {
        let tensors = self
            .param_shapes
            .iter()
            .map(|s| Tensor::zeros(s.clone()))
            .collect();
        Params::new(self.param_names.clone(), tensors).expect("matching lengths")
    }

    pub fn check_params<T: Scalar>(&self, params: &Params<T>) -> Result<()> {
        if params.names() != self.param_names.as_slice() {
            return Err(Error::ConfigMismatch(
                "parameter names do not match the encoder layout".into(),
            ));
        }
        for ((name, t), shape) in params.iter().zip(&self.param_shapes) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn input_len(&self) -> usize {
        self.shapes[0].numel()
    }

    /// Runs a `(B, frames, bins)` or `(B, 1, frames, bins)` batch through the
    /// network, returning `(B, embedding_dim)` embeddings. Dropout masks are
    /// drawn from `rng` in train mode; eval mode never touches it.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &Params<T>,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_params(params)?;
        let (t, f) = self.config.input_shape;
        let shape = batch.shape();
        let ok = match shape.len() {
            3 => shape[1] == t && shape[2] == f,
            4 => shape[1] == 1 && shape[2] == t && shape[3] == f,
            _ => false,
        };
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "batch shape {shape:?} does not match encoder input {t}x{f}"
            )));
        }
        let b = shape[0];
        let d = self.embedding_dim();
        let mut out = Vec::with_capacity(b * d);
        let mut examples = Vec::with_capacity(b);
        for i in 0..b {
            let x = batch.row(i);
            debug_assert_eq!(x.len(), self.input_len());
            let (y, cache) = self.forward_one(params, x, mode, rng)?;
            out.extend_from_slice(&y);
            examples.push(cache);
        }
        let emb = Tensor::new(vec![b, d], out)?;
        if !emb.all_finite() {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok((
            emb,
            ForwardCache {
                params_id: params.id,
                generation: params.generation,
                n_ops: self.ops.len(),
                examples,
            },
        ))
    }

    /// Eval-mode forward without keeping a cache.
    pub fn embed<T: Scalar>(&self, params: &Params<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut unused = crate::rng::stream(0, &[]);
        Ok(self.forward(params, batch, Mode::Eval, &mut unused)?.0)
    }

    fn forward_one<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &Params<T>,
        x: &[T],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<T>, Vec<LayerCache<T>>)> {
        let p = params.tensors();
        let mut act = x.to_vec();
        let mut caches = Vec::with_capacity(self.ops.len());
        for (li, op) in self.ops.iter().enumerate() {
            let (next, cache) = match op {
                Op::Conv(c) => {
                    let y = conv_forward(c, p[c.w].data(), p[c.b].data(), &act);
                    (y, LayerCache::Conv { input: act })
                }
                Op::Residual { convs, proj } => {
                    let mut pre = Vec::with_capacity(convs.len());
                    let mut h = conv_forward(&convs[0], p[convs[0].w].data(), p[convs[0].b].data(), &act);
                    for c in &convs[1..] {
                        let r = relu(&h);
                        let next = conv_forward(c, p[c.w].data(), p[c.b].data(), &r);
                        pre.push(std::mem::replace(&mut h, next));
                    }
                    let shortcut = match proj {
                        Some(c) => conv_forward(c, p[c.w].data(), p[c.b].data(), &act),
                        None => act.clone(),
                    };
                    let sum: Vec<T> = h.iter().zip(&shortcut).map(|(&a, &b)| a + b).collect();
                    pre.push(h);
                    (
                        relu(&sum),
                        LayerCache::Residual {
                            input: act,
                            pre,
                            sum,
                        },
                    )
                }
                Op::Relu => {
                    let y = relu(&act);
                    (y.clone(), LayerCache::Relu { output: y })
                }
                Op::Pool { input } => (pool_forward(input, &act), LayerCache::Pool),
                Op::Dense {
                    in_dim,
                    out_dim,
                    w,
                    b,
                } => {
                    let y = dense_forward(*in_dim, *out_dim, p[*w].data(), p[*b].data(), &act);
                    (y, LayerCache::Dense { input: act })
                }
                Op::Dropout { p: rate } => match mode {
                    Mode::Eval => (act, LayerCache::Dropout { mask: None }),
                    Mode::Train => {
                        let keep = 1.0 - rate;
                        let scale = T::of(1.0 / keep);
                        let mask: Vec<T> = (0..act.len())
                            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                            .collect();
                        let y = act.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                        (y, LayerCache::Dropout { mask: Some(mask) })
                    }
                },
            };
            if cfg!(debug_assertions) && next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {li}")));
            }
            act = next;
            caches.push(cache);
        }
        Ok((act, caches))
    }

    /// Gradients of every parameter given `dL/d(embedding)`, summed over the batch.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &ForwardCache<T>,
        grad_embeddings: &Tensor<T>,
    ) -> Result<Params<T>> {
        self.check_params(params)?;
        if cache.params_id != params.id || cache.generation != params.generation {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if cache.n_ops != self.ops.len() {
            return Err(Error::StaleCache("cache belongs to a different encoder".into()));
        }
        let b = cache.examples.len();
        let d = self.embedding_dim();
        if grad_embeddings.shape() != [b, d] {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape {:?}, expected [{b}, {d}]",
                grad_embeddings.shape()
            )));
        }
        let mut grads = self.zero_params::<T>();
        for (i, ex) in cache.examples.iter().enumerate() {
            self.backward_one(params, ex, grad_embeddings.row(i), &mut grads, false)?;
        }
        Ok(grads)
    }

    /// Backward for a single example, accumulating into `grads`.
    /// Returns the gradient with respect to the input.
    fn backward_one<T: Scalar>(
        &self,
        params: &Params<T>,
        caches: &[LayerCache<T>],
        grad_out: &[T],
        grads: &mut Params<T>,
        need_input: bool,
    ) -> Result<Vec<T>> {
        let p = params.tensors();
        let g_all = &mut grads.tensors;
        let mut g = grad_out.to_vec();
        for (idx, (op, cache)) in self.ops.iter().zip(caches).enumerate().rev() {
            g = match (op, cache) {
                (Op::Conv(c), LayerCache::Conv { input }) => {
                    let want = need_input || idx > 0;
                    conv_backward(c, p[c.w].data(), input, &g, g_all, want).unwrap_or_default()
                }
                (Op::Residual { convs, proj }, LayerCache::Residual { input, pre, sum }) => {
                    let gs: Vec<T> = g
                        .iter()
                        .zip(sum)
                        .map(|(&gv, &s)| if s > T::zero() { gv } else { T::zero() })
                        .collect();
                    let mut gx = match proj {
                        Some(c) => conv_backward(c, p[c.w].data(), input, &gs, g_all, true).unwrap(),
                        None => gs.clone(),
                    };
                    let mut gh = gs;
                    for j in (0..convs.len()).rev() {
                        let c = &convs[j];
                        if j == 0 {
                            let gin = conv_backward(c, p[c.w].data(), input, &gh, g_all, true).unwrap();
                            gx.iter_mut().zip(&gin).for_each(|(a, &b)| *a += b);
                        } else {
                            let r = relu(&pre[j - 1]);
                            let gr = conv_backward(c, p[c.w].data(), &r, &gh, g_all, true).unwrap();
                            gh = gr
                                .iter()
                                .zip(&pre[j - 1])
                                .map(|(&gv, &h)| if h > T::zero() { gv } else { T::zero() })
                                .collect();
                        }
                    }
                    gx
                }
                (Op::Relu, LayerCache::Relu { output }) => g
                    .iter()
                    .zip(output)
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect(),
                (Op::Pool { input }, LayerCache::Pool) => pool_backward(input, &g),
                (
                    Op::Dense {
                        in_dim,
                        out_dim,
                        w,
                        b,
                    },
                    LayerCache::Dense { input },
                ) => dense_backward(*in_dim, *out_dim, p[*w].data(), input, &g, g_all, *w, *b),
                (Op::Dropout { .. }, LayerCache::Dropout { mask }) => match mask {
                    Some(m) => g.iter().zip(m).map(|(&a, &b)| a * b).collect(),
                    None => g,
                },
                _ => return Err(Error::StaleCache("cache layout does not match encoder".into())),
            };
        }
        Ok(g)
    }

    /// Gradient of `sum(grad_out · embedding)` with respect to the input of
    /// one example; exposed for input-sensitivity checks.
    pub fn input_gradient<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &ForwardCache<T>,
        example: usize,
        grad_out: &[T],
    ) -> Result<Vec<T>> {
        if cache.params_id != params.id || cache.generation != params.generation {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        let mut scratch = self.zero_params::<T>();
        let ex = cache
            .examples
            .get(example)
            .ok_or_else(|| Error::InvalidArgument(format!("no example {example} in cache")))?;
        self.backward_one(params, ex, grad_out, &mut scratch, true)
    }
}

fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Output indices `[lo, hi)` whose tap `out * stride + offset` lands inside
/// an input axis of length `in_len`.
fn valid_range(offset: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if offset < 0 {
        ((-offset) as usize).div_ceil(stride)
    } else {
        0
    };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Dot product with eight independent partial sums so the loop vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Patch matrix: row `(i·k + ky)·k + kx` holds, for every output position,
/// the input value under that tap (zero in the padding).
fn im2col<T: Scalar>(c: &ConvSpec, input: &[T]) -> Vec<T> {
    let (ih, iw) = c.input.spatial();
    let (oh, ow) = c.output.spatial();
    let (k, s, pad) = (c.k, c.stride, c.pad());
    let positions = oh * ow;
    let mut col = vec![T::zero(); c.in_c * k * k * positions];
    for i in 0..c.in_c {
        let plane = &input[i * ih * iw..(i + 1) * ih * iw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = valid_range(dy, s, ih, oh);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (xlo, xhi) = valid_range(dx, s, iw, ow);
                let row = &mut col[((i * k + ky) * k + kx) * positions..][..positions];
                for oy in ylo..yhi {
                    let iy = ((oy * s) as isize + dy) as usize;
                    let src = &plane[iy * iw..(iy + 1) * iw];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for ox in xlo..xhi {
                        dst[ox] = src[((ox * s) as isize + dx) as usize];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a patch-matrix gradient back onto the input layout.
fn col2im<T: Scalar>(c: &ConvSpec, col: &[T]) -> Vec<T> {
    let (ih, iw) = c.input.spatial();
    let (oh, ow) = c.output.spatial();
    let (k, s, pad) = (c.k, c.stride, c.pad());
    let positions = oh * ow;
    let mut out = vec![T::zero(); c.in_c * ih * iw];
    for i in 0..c.in_c {
        let plane = &mut out[i * ih * iw..(i + 1) * ih * iw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = valid_range(dy, s, ih, oh);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (xlo, xhi) = valid_range(dx, s, iw, ow);
                let row = &col[((i * k + ky) * k + kx) * positions..][..positions];
                for oy in ylo..yhi {
                    let iy = ((oy * s) as isize + dy) as usize;
                    let src = &row[oy * ow..(oy + 1) * ow];
                    let dst = &mut plane[iy * iw..(iy + 1) * iw];
                    for ox in xlo..xhi {
                        dst[((ox * s) as isize + dx) as usize] += src[ox];
                    }
                }
            }
        }
    }
    out
}

fn conv_forward<T: Scalar>(c: &ConvSpec, w: &[T], b: &[T], input: &[T]) -> Vec<T> {
    let positions = c.output.height * c.output.width;
    let taps = c.in_c * c.k * c.k;
    let col = im2col(c, input);
    let mut out = vec![T::zero(); c.out_c * positions];
    for o in 0..c.out_c {
        let out_plane = &mut out[o * positions..(o + 1) * positions];
        out_plane.fill(b[o]);
        for t in 0..taps {
            axpy(w[o * taps + t], &col[t * positions..(t + 1) * positions], out_plane);
        }
    }
    out
}

/// Accumulates weight and bias gradients into `grads` and returns the input
/// gradient when `want_input` is set.
fn conv_backward<T: Scalar>(
    c: &ConvSpec,
    w: &[T],
    input: &[T],
    gout: &[T],
    grads: &mut [Tensor<T>],
    want_input: bool,
) -> Option<Vec<T>> {
    let positions = c.output.height * c.output.width;
    let taps = c.in_c * c.k * c.k;
    {
        let gb = grads[c.b].data_mut();
        for o in 0..c.out_c {
            gb[o] += gout[o * positions..(o + 1) * positions].iter().copied().sum::<T>();
        }
    }
    let col = im2col(c, input);
    let gw = grads[c.w].data_mut();
    for o in 0..c.out_c {
        let g_plane = &gout[o * positions..(o + 1) * positions];
        for t in 0..taps {
            gw[o * taps + t] += dot(g_plane, &col[t * positions..(t + 1) * positions]);
        }
    }
    if !want_input {
        return None;
    }
    let mut gcol = vec![T::zero(); taps * positions];
    for o in 0..c.out_c {
        let g_plane = &gout[o * positions..(o + 1) * positions];
        for t in 0..taps {
            axpy(w[o * taps + t], g_plane, &mut gcol[t * positions..(t + 1) * positions]);
        }
    }
    Some(col2im(c, &gcol))
}

fn pool_forward<T: Scalar>(input: &ActShape, x: &[T]) -> Vec<T> {
    let (c, h, w) = (input.channels, input.height, input.width);
    let inv = T::of(1.0 / h as f64);
    let mut out = vec![T::zero(); c * w];
    for ch in 0..c {
        let dst = &mut out[ch * w..(ch + 1) * w];
        for row in 0..h {
            let src = &x[(ch * h + row) * w..(ch * h + row + 1) * w];
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

fn pool_backward<T: Scalar>(input: &ActShape, g: &[T]) -> Vec<T> {
    let (c, h, w) = (input.channels, input.height, input.width);
    let inv = T::of(1.0 / h as f64);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for row in 0..h {
            let dst = &mut out[(ch * h + row) * w..(ch * h + row + 1) * w];
            dst.iter_mut()
                .zip(&g[ch * w..(ch + 1) * w])
                .for_each(|(d, &gv)| *d = gv * inv);
        }
    }
    out
}

fn dense_forward<T: Scalar>(in_dim: usize, out_dim: usize, w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    (0..out_dim)
        .map(|o| {
            b[o] + w[o * in_dim..(o + 1) * in_dim]
                .iter()
                .zip(x)
                .map(|(&a, &v)| a * v)
                .sum::<T>()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Scalar>(
    in_dim: usize,
    out_dim: usize,
    w: &[T],
    x: &[T],
    g: &[T],
    grads: &mut [Tensor<T>],
    wi: usize,
    bi: usize,
) -> Vec<T> {
    {
        let gb = grads[bi].data_mut();
        for o in 0..out_dim {
            gb[o] += g[o];
        }
    }
    let gw = grads[wi].data_mut();
    let mut gx = vec![T::zero(); in_dim];
    for o in 0..out_dim {
        let go = g[o];
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
        for j in 0..in_dim {
            grow[j] += go * x[j];
            gx[j] += go * row[j];
        }
    }
    gx
}

/// Draws fresh parameters: biases zero, weights per `scheme`.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    encoder: &Encoder,
    scheme: InitScheme,
    rng: &mut R,
) -> Params<T> {
    let mut params = encoder.zero_params::<T>();
    for (name, t) in params
        .names
        .iter()
        .zip(params.tensors.iter_mut())
    {
        if name.ends_with(".bias") {
            continue;
        }
        let shape = t.shape().to_vec();
        let receptive: usize = shape[2..].iter().product();
        let fan_in = shape[1] * receptive;
        let fan_out = shape[0] * receptive;
        let is_conv = shape.len() == 4;
        if is_conv && scheme == InitScheme::He {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = T::of(normal.sample(rng)));
        } else {
            let values = xavier_uniform::<T, R>(fan_in, fan_out, t.len(), rng);
            t.data_mut().copy_from_slice(&values);
        }
    }
    params
}

/// `n` draws from U(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    n: usize,
    rng: &mut R,
) -> Vec<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    (0..n).map(|_| T::of(dist.sample(rng))).collect()
}
