//! Seeded inputs shared by the benchmarks.

use rand::Rng;
use voxmargin::nn::{init_params, Encoder, InitScheme, Params};
use voxmargin::{rng, ClassificationHead, EncoderConfig, Tensor, Waveform};

pub fn noise_waveform(len: usize, seed: u64) -> Waveform {
    let mut r = rng::stream(seed, &[]);
    let samples = (0..len).map(|_| r.random_range(-0.5f32..0.5)).collect();
    Waveform::new(samples, 16000).expect("non-empty")
}

pub fn uniform_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
    let mut r = rng::stream(seed, &[1]);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches data")
}

/// The desk encoder on 0.5 s crops with freshly initialized parameters.
pub fn desk_encoder(seed: u64) -> (Encoder, Params<f32>) {
    let cfg = EncoderConfig::desk(32, (48, 257), &[8, 16, 16, 32], None).expect("valid config");
    let enc = Encoder::new(cfg).expect("valid encoder");
    let params = init_params(&enc, InitScheme::He, &mut rng::stream(seed, &[2]));
    (enc, params)
}

pub fn loss_inputs(batch: usize, classes: usize, dim: usize, bias: bool, seed: u64) -> (Tensor<f64>, Vec<usize>, ClassificationHead<f64>) {
    let mut r = rng::stream(seed, &[3]);
    let x = Tensor::from_f64(vec![batch, dim], &(0..batch * dim).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>())
        .expect("shape matches data");
    let labels = (0..batch).map(|_| r.random_range(0..classes)).collect();
    let head = ClassificationHead::xavier(classes, dim, bias, &mut r).expect("valid head");
    (x, labels, head)
}

/// Scores for `n` trials, a tenth of them targets shifted upward.
pub fn trial_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, &[4]);
    let n_target = n / 10;
    let target = (0..n_target).map(|_| r.random_range(-0.5..1.0)).collect();
    let nontarget = (n_target..n).map(|_| r.random_range(-1.0..0.5)).collect();
    (target, nontarget)
}
