//! Modality feature extractors: a three-layer dense network for vector inputs
//! and a three-layer CNN for the stacked image slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::rng::XRng;
use crate::tensor::{Graph, Tensor, Var};

/// Whether a forward pass is training (dropout active, drawing from the given
/// stream) or evaluating.
pub enum Phase<'a> {
    Eval,
    Train(&'a mut XRng),
}

impl Phase<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseBackbone {
    layers: Vec<Dense>,
    dropout: [f64; 3],
    input_width: usize,
    output_width: usize,
}

impl DenseBackbone {
    /// `widths` = `[input, hidden1, hidden2, output]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: [usize; 4],
        dropout: [f64; 3],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::Config(format!("{name}: zero layer width in {widths:?}")));
        }
        if let Some(r) = dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Parameter(format!("{name}: dropout rate {r} outside [0, 1)")));
        }
        let layers = (0..3)
            .map(|i| {
                let (fi, fo) = (widths[i], widths[i + 1]);
                Dense {
                    w: store.add(format!("{name}.l{i}.w"), glorot_uniform(rng, &[fi, fo], fi, fo)),
                    b: store.add(format!("{name}.l{i}.b"), Tensor::zeros(&[fo])),
                }
            })
            .collect();
        Ok(Self {
            layers,
            dropout,
            input_width: widths[0],
            output_width: widths[3],
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// `(linear → ReLU → dropout) × 3` on a `[batch×f]` input.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var, phase: &mut Phase<'_>) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.input_width {
            return Err(Error::dim(
                "dense_forward",
                format!("expected [batch x {}], got {s:?}", self.input_width),
            ));
        }
        let mut h = x;
        for (layer, &rate) in self.layers.iter().zip(&self.dropout) {
            h = g.linear(h, params[layer.w.index()], params[layer.b.index()])?;
            h = g.relu(h)?;
            h = match phase {
                Phase::Train(rng) => g.dropout(h, rate, true, &mut **rng)?,
                Phase::Eval => h,
            };
        }
        Ok(h)
    }
}

/// Geometry of the convolutional backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub image_size: usize,
    pub channels: [usize; 3],
    pub kernel: usize,
    pub strides: [usize; 3],
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            image_size: 72,
            channels: [8, 16, 32],
            kernel: 3,
            strides: [3, 2, 2],
        }
    }
}

impl ConvSpec {
    /// Spatial size after each of the three layers.
    pub fn spatial_sizes(&self) -> Result<[usize; 3]> {
        let mut size = self.image_size;
        let mut out = [0; 3];
        for (i, &s) in self.strides.iter().enumerate() {
            if s == 0 || self.kernel > size {
                return Err(Error::Config(format!(
                    "conv layer {i}: kernel {} does not fit {size}x{size} input (stride {s})",
                    self.kernel
                )));
            }
            size = (size - self.kernel) / s + 1;
            out[i] = size;
        }
        Ok(out)
    }

    pub fn flat_width(&self) -> Result<usize> {
        let s = self.spatial_sizes()?[2];
        Ok(self.channels[2] * s * s)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvLayer {
    kernels: ParamId,
    bias: ParamId,
    stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBackbone {
    spec: ConvSpec,
    convs: Vec<ConvLayer>,
    head: Dense,
    flat_width: usize,
    output_width: usize,
}

impl ConvBackbone {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        output_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let flat_width = spec.flat_width()?;
        let k = spec.kernel;
        let mut c_in = spec.in_channels;
        let mut convs = Vec::with_capacity(3);
        for (i, (&c_out, &stride)) in spec.channels.iter().zip(&spec.strides).enumerate() {
            let kernels = glorot_uniform(rng, &[c_out, c_in, k, k], c_in * k * k, c_out * k * k);
            convs.push(ConvLayer {
                kernels: store.add(format!("{name}.conv{i}.k"), kernels),
                bias: store.add(format!("{name}.conv{i}.b"), Tensor::zeros(&[c_out])),
                stride,
            });
            c_in = c_out;
        }
        let head = Dense {
            w: store.add(
                format!("{name}.head.w"),
                glorot_uniform(rng, &[flat_width, output_width], flat_width, output_width),
            ),
            b: store.add(format!("{name}.head.b"), Tensor::zeros(&[output_width])),
        };
        Ok(Self {
            spec,
            convs,
            head,
            flat_width,
            output_width,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// `(conv → ReLU) × 3 → flatten → linear` on `[batch×C×H×W]`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let want = [self.spec.in_channels, self.spec.image_size, self.spec.image_size];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::dim(
                "conv_forward",
                format!("expected [batch x {want:?}], got {s:?}"),
            ));
        }
        let batch = s[0];
        let mut h = x;
        for layer in &self.convs {
            h = g.conv2d(h, params[layer.kernels.index()], layer.stride)?;
            h = g.add_channel_bias(h, params[layer.bias.index()])?;
            h = g.relu(h)?;
        }
        let flat = g.reshape(h, &[batch, self.flat_width])?;
        g.linear(flat, params[self.head.w.index()], params[self.head.b.index()])
    }
}
