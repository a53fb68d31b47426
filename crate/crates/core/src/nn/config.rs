use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerConfig {
    /// 3×3 convolution, padding 1.
    Conv3x3 { out_channels: usize, stride: usize },
    /// Stride-1 3×3 convs with ReLU between them and an identity shortcut
    /// (1×1 projection when the input channel count differs).
    ResidualBlock { channels: usize, n_convs: usize },
    Relu,
    /// Averages `rows` temporal rows into one.
    TemporalAvgPool { rows: usize },
    Dense { out_dim: usize },
    Dropout { p: f64 },
}

/// Channels × height × width of one activation. Height is the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ActShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_vector(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

impl fmt::Display for ActShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_vector() {
            write!(f, "{}", self.channels)
        } else {
            write!(f, "{}x{}x{}", self.channels, self.height, self.width)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    /// (frames, bins) of the input spectrogram.
    pub input_shape: (usize, usize),
    pub layers: Vec<LayerConfig>,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Output shape after each layer, preceded by the input shape.
pub fn shape_propagate(config: &EncoderConfig) -> Result<Vec<ActShape>> {
    let (t, f) = config.input_shape;
    if t == 0 || f == 0 {
        return Err(Error::ShapeMismatch(format!("empty input shape {t}x{f}")));
    }
    let mut shapes = vec![ActShape::new(1, t, f)];
    for (i, layer) in config.layers.iter().enumerate() {
        let s = *shapes.last().unwrap();
        let next = match *layer {
            LayerConfig::Conv3x3 {
                out_channels,
                stride,
            } => {
                if out_channels == 0 {
                    return Err(Error::Config(format!("layer {i}: zero output channels")));
                }
                if stride != 1 && stride != 2 {
                    return Err(Error::Config(format!("layer {i}: stride {stride} not in {{1, 2}}")));
                }
                ActShape::new(out_channels, ceil_div(s.height, stride), ceil_div(s.width, stride))
            }
            LayerConfig::ResidualBlock { channels, n_convs } => {
                if channels == 0 {
                    return Err(Error::Config(format!("layer {i}: zero channels")));
                }
                if !(2..=3).contains(&n_convs) {
                    return Err(Error::Config(format!("layer {i}: n_convs {n_convs} not in {{2, 3}}")));
                }
                ActShape::new(channels, s.height, s.width)
            }
            LayerConfig::Relu => s,
            LayerConfig::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config(format!("layer {i}: dropout p {p} not in [0, 1)")));
                }
                s
            }
            LayerConfig::TemporalAvgPool { rows } => {
                if rows != s.height {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: temporal pool over {rows} rows but input has {} (shape {s})",
                        s.height
                    )));
                }
                ActShape::new(s.channels, 1, s.width)
            }
            LayerConfig::Dense { out_dim } => {
                if out_dim == 0 {
                    return Err(Error::Config(format!("layer {i}: zero dense width")));
                }
                ActShape::new(out_dim, 1, 1)
            }
        };
        shapes.push(next);
    }
    Ok(shapes)
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let shapes = shape_propagate(self)?;
        let last = shapes.last().unwrap();
        if !last.is_vector() || last.channels != self.embedding_dim {
            return Err(Error::Config(format!(
                "encoder ends in {last}, expected a {}-dim embedding",
                self.embedding_dim
            )));
        }
        Ok(())
    }

    pub fn output_shapes(&self) -> Result<Vec<ActShape>> {
        shape_propagate(self)
    }

    /// The 20-conv residual network: four stages, each a stride-2 conv
    /// followed by residual units of two convs (1, 2, 4, 1 units), then
    /// temporal pooling and the embedding layer.
    pub fn resnet20(embedding_dim: usize, input_shape: (usize, usize)) -> Result<Self> {
        let mut layers = Vec::new();
        for (width, units) in [(64, 1), (128, 2), (256, 4), (512, 1)] {
            layers.push(LayerConfig::Conv3x3 {
                out_channels: width,
                stride: 2,
            });
            layers.push(LayerConfig::Relu);
            for _ in 0..units {
                layers.push(LayerConfig::ResidualBlock {
                    channels: width,
                    n_convs: 2,
                });
            }
        }
        Self::with_head(layers, embedding_dim, input_shape, None)
    }

    /// Reduced stride-2 conv stack (default widths 8/16/32/64) for desk-scale training.
    pub fn desk(
        embedding_dim: usize,
        input_shape: (usize, usize),
        widths: &[usize],
        dropout: Option<f64>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for &w in widths {
            layers.push(LayerConfig::Conv3x3 {
                out_channels: w,
                stride: 2,
            });
            layers.push(LayerConfig::Relu);
        }
        Self::with_head(layers, embedding_dim, input_shape, dropout)
    }

    /// Appends temporal pooling over whatever height the body produces,
    /// optional dropout, and the embedding layer.
    fn with_head(
        mut layers: Vec<LayerConfig>,
        embedding_dim: usize,
        input_shape: (usize, usize),
        dropout: Option<f64>,
    ) -> Result<Self> {
        let body = Self {
            embedding_dim,
            input_shape,
            layers: layers.clone(),
        };
        let rows = shape_propagate(&body)?.last().unwrap().height;
        layers.push(LayerConfig::TemporalAvgPool { rows });
        if let Some(p) = dropout {
            layers.push(LayerConfig::Dropout { p });
        }
        layers.push(LayerConfig::Dense {
            out_dim: embedding_dim,
        });
        let config = Self {
            embedding_dim,
            input_shape,
            layers,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerConfig::Dropout { p } if *p > 0.0))
    }
}
