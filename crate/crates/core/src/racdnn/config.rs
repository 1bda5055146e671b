use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::nn::{conv_output_size, unpool, BatchNorm, Conv2d, ParamStore, Session};
use crate::tensor::Var;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Unpool {
        factor: usize,
    },
    BatchNorm,
    Relu,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            padding,
            bias,
        }
    }
}

/// An ordered stack of layers whose parameters are stored under
/// `{prefix}.{index}.*`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

pub type EncoderConfig = StackConfig;
pub type DecoderConfig = StackConfig;

impl StackConfig {
    /// Output `(channels, side)` for a square input of side `size`.
    pub fn output_shape(&self, size: usize) -> Result<(usize, usize)> {
        let (mut c, mut s) = (self.in_channels, size);
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    s = conv_output_size(s, kernel, stride, padding)
                        .map_err(|e| Error::InvalidSpec(format!("layer {i}: {e}")))?;
                    c = out_channels;
                }
                LayerSpec::Unpool { factor } => {
                    if factor == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: unpool factor 0")));
                    }
                    s *= factor;
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => {}
            }
            if c == 0 {
                return Err(Error::InvalidSpec(format!("layer {i}: zero channels")));
            }
        }
        Ok((c, s))
    }

    fn channels_before(&self, index: usize) -> usize {
        self.layers[..index]
            .iter()
            .rev()
            .find_map(|l| match *l {
                LayerSpec::Conv { out_channels, .. } => Some(out_channels),
                _ => None,
            })
            .unwrap_or(self.in_channels)
    }

    fn conv_layer(&self, prefix: &str, index: usize) -> Option<Conv2d> {
        match self.layers[index] {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => Some(Conv2d {
                name: format!("{prefix}.{index}"),
                in_channels: self.channels_before(index),
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            }),
            _ => None,
        }
    }

    pub fn init(&self, prefix: &str, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { .. } => self.conv_layer(prefix, i).expect("conv").init(store, rng)?,
                LayerSpec::BatchNorm => BatchNorm::new(format!("{prefix}.{i}"), self.channels_before(i)).init(store)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn forward(&self, prefix: &str, s: &mut Session, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                LayerSpec::Conv { .. } => self.conv_layer(prefix, i).expect("conv").forward(s, x)?,
                LayerSpec::Unpool { factor } => unpool(&mut s.graph, x, *factor)?,
                LayerSpec::BatchNorm => {
                    BatchNorm::new(format!("{prefix}.{i}"), self.channels_before(i)).forward(s, x)?
                }
                LayerSpec::Relu => s.graph.relu(x)?,
            };
        }
        Ok(x)
    }

    /// Name of the last convolution, i.e. the layer producing the raw output.
    pub fn last_conv(&self, prefix: &str) -> Option<String> {
        let i = self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv { .. }))?;
        Some(format!("{prefix}.{i}"))
    }
}

/// Full architecture: the encoder/decoder pair shared by the initial network
/// and the refinement network, plus the recurrent and localization sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub input_size: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Dimension of the fully-connected recurrent state.
    pub hidden: usize,
    pub loc_hidden: usize,
    /// Kernel of the convolutional recurrent connections (same padding).
    pub recurrent_kernel: usize,
}

fn encoder(channels: &[usize]) -> EncoderConfig {
    let mut layers = Vec::new();
    for &c in channels {
        layers.extend([
            LayerSpec::conv(c, 3, 2, 1, false),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
        ]);
    }
    StackConfig { in_channels: 3, layers }
}

/// Each stage: unpool ×2, k×k conv, 1×1 conv, each followed by batch norm and
/// ReLU. A final 1×1 conv produces the single-channel raw map.
fn decoder(in_channels: usize, channels: &[usize], kernel: usize) -> DecoderConfig {
    let mut layers = Vec::new();
    for &c in channels {
        layers.extend([
            LayerSpec::Unpool { factor: 2 },
            LayerSpec::conv(c, kernel, 1, kernel / 2, false),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::conv(c, 1, 1, 0, false),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
        ]);
    }
    layers.push(LayerSpec::conv(1, 1, 1, 0, true));
    StackConfig { in_channels, layers }
}

impl Preset {
    /// 224×224 input, 7×7×256 code, 56×56 map, 512-d recurrent vector.
    pub fn paper() -> Self {
        Preset {
            name: "paper".into(),
            input_size: 224,
            encoder: encoder(&[32, 64, 128, 256, 256]),
            decoder: decoder(256, &[128, 64, 32], 5),
            hidden: 512,
            loc_hidden: 256,
            recurrent_kernel: 3,
        }
    }

    /// 64×64 input, 4×4×32 code, 32×32 map.
    pub fn toy() -> Self {
        Preset {
            name: "toy".into(),
            input_size: 64,
            encoder: encoder(&[8, 16, 32, 32]),
            decoder: decoder(32, &[16, 8, 4], 3),
            hidden: 64,
            loc_hidden: 32,
            recurrent_kernel: 3,
        }
    }

    /// 16×16 input, 4×4×4 code, 8×8 map; small enough for finite differences.
    pub fn tiny() -> Self {
        Preset {
            name: "tiny".into(),
            input_size: 16,
            encoder: encoder(&[4, 4]),
            decoder: decoder(4, &[3], 3),
            hidden: 6,
            loc_hidden: 5,
            recurrent_kernel: 3,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(Error::InvalidSpec(format!(
                "unknown preset {name:?} (expected paper, toy or tiny)"
            ))),
        }
    }

    /// `(channels, side)` of the encoder code.
    pub fn code_shape(&self) -> Result<(usize, usize)> {
        self.encoder.output_shape(self.input_size)
    }

    pub fn map_size(&self) -> Result<usize> {
        let (c, s) = self.code_shape()?;
        let (out_c, out_s) = self.decoder.output_shape(s)?;
        if out_c != 1 {
            return Err(Error::InvalidSpec(format!(
                "decoder emits {out_c} channels, expected 1"
            )));
        }
        if c != self.decoder.in_channels {
            return Err(Error::InvalidSpec(format!(
                "encoder emits {c} channels, decoder expects {}",
                self.decoder.in_channels
            )));
        }
        Ok(out_s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.in_channels != 3 {
            return Err(Error::InvalidSpec("encoder input must have 3 channels".into()));
        }
        let m = self.map_size()?;
        if m < 8 {
            return Err(Error::InvalidSpec(format!("map size {m} is below 8")));
        }
        if self.hidden == 0 || self.loc_hidden == 0 || self.recurrent_kernel.is_multiple_of(2) {
            return Err(Error::InvalidSpec(
                "recurrent sizes must be positive, kernel odd".into(),
            ));
        }
        Ok(())
    }
}
