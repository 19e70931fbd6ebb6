use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::horner;

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Polynomial { coefficients: Vec<f64> },
}

impl Activation {
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            // Subgradient convention: derivative at exactly 0 is 0.
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Polynomial { coefficients } => horner(coefficients, z),
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Polynomial { coefficients } => {
                let mut acc = 0.0;
                for (k, &c) in coefficients.iter().enumerate().skip(1).rev() {
                    acc = acc * z + c * k as f64;
                }
                acc
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SquareLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// 3x3 kernel, stride 2, zero padding 1: `H -> (H - 1) / 2 + 1`.
    Conv3x3Stride2 {
        in_ch: usize,
        out_ch: usize,
        #[serde(default)]
        bias: bool,
    },
    /// Fully connected; a multi-dimensional input is flattened first.
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default)]
        bias: bool,
    },
    /// Normalization with no learned shift or scale.
    BatchNorm {
        channels: usize,
        #[serde(default)]
        affine: bool,
    },
    Activation { activation: Activation },
}

/// Role of a stored array within a snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn suffix(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "weight" => ParamRole::Weight,
            "bias" => ParamRole::Bias,
            "running_mean" => ParamRole::RunningMean,
            "running_var" => ParamRole::RunningVar,
            _ => return None,
        })
    }

    pub fn trainable(self) -> bool {
        matches!(self, ParamRole::Weight | ParamRole::Bias)
    }
}

/// One array slot in the parameter layout of a spec.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamSlot {
    pub fn name(&self) -> String {
        param_name(self.layer, self.role)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn param_name(layer: usize, role: ParamRole) -> String {
    format!("{layer}.{}", role.suffix())
}

/// Splits `"3.weight"` into `(3, Weight)`.
pub fn parse_param_name(name: &str) -> Option<(usize, ParamRole)> {
    let (idx, suffix) = name.split_once('.')?;
    Some((idx.parse().ok()?, ParamRole::from_suffix(suffix)?))
}

/// Layer-by-layer architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[C, H, W]` for image input, `[F]` for vectors.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub loss: LossKind,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_eps() -> f64 {
    DEFAULT_BN_EPS
}

fn default_bn_momentum() -> f64 {
    DEFAULT_BN_MOMENTUM
}

pub fn conv_out(h: usize) -> usize {
    (h - 1) / 2 + 1
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, loss: LossKind) -> Self {
        NetworkSpec {
            input_shape,
            layers,
            loss,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// Stack of `Conv3x3Stride2 -> BatchNorm -> activation` blocks followed by
    /// a dense classifier with bias on the flattened features.
    pub fn conv_stack(
        input_shape: [usize; 3],
        widths: &[usize],
        classes: usize,
        activation: Activation,
    ) -> Self {
        let mut layers = Vec::new();
        let (mut ch, mut h, mut w) = (input_shape[0], input_shape[1], input_shape[2]);
        for &width in widths {
            layers.push(Layer::Conv3x3Stride2 {
                in_ch: ch,
                out_ch: width,
                bias: false,
            });
            layers.push(Layer::BatchNorm {
                channels: width,
                affine: false,
            });
            layers.push(Layer::Activation {
                activation: activation.clone(),
            });
            ch = width;
            h = conv_out(h);
            w = conv_out(w);
        }
        layers.push(Layer::Dense {
            inputs: ch * h * w,
            outputs: classes,
            bias: true,
        });
        NetworkSpec::new(input_shape.to_vec(), layers, LossKind::CrossEntropy)
    }

    /// Documented desk-scale default for 32x32 RGB input: widths 16/32/32/64
    /// and a dense head, 35,258 trainable parameters.
    pub fn desk_default(activation: Activation) -> Self {
        Self::conv_stack([3, 32, 32], &[16, 32, 32, 64], 10, activation)
    }

    /// Replaces every activation layer with `activation`.
    pub fn with_activation(&self, activation: &Activation) -> Self {
        let mut spec = self.clone();
        for layer in &mut spec.layers {
            if let Layer::Activation { activation: a } = layer {
                *a = activation.clone();
            }
        }
        spec
    }

    /// Validates layer composition and returns the per-sample output shape
    /// of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "input shape {:?} must have positive dimensions",
                self.input_shape
            )));
        }
        if !(self.bn_eps >= 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidSpec(
                "bn_eps must be >= 0 and bn_momentum in [0, 1]".into(),
            ));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv3x3Stride2 { in_ch, out_ch, .. } => {
                    if shape.len() != 3 || shape[0] != *in_ch {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            detail: format!("conv expects [{in_ch}, H, W], got {shape:?}"),
                        });
                    }
                    if *out_ch == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: zero channels")));
                    }
                    vec![*out_ch, conv_out(shape[1]), conv_out(shape[2])]
                }
                Layer::Dense {
                    inputs, outputs, ..
                } => {
                    let flat: usize = shape.iter().product();
                    if flat != *inputs {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            detail: format!("dense expects {inputs} inputs, got {shape:?}"),
                        });
                    }
                    if *outputs == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: zero outputs")));
                    }
                    vec![*outputs]
                }
                Layer::BatchNorm { channels, affine } => {
                    if *affine {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: batch norm shift/scale parameters are not supported"
                        )));
                    }
                    if shape[0] != *channels {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            detail: format!("batch norm over {channels} channels, got {shape:?}"),
                        });
                    }
                    shape
                }
                Layer::Activation { activation } => {
                    if let Activation::Polynomial { coefficients } = activation {
                        if coefficients.is_empty() {
                            return Err(Error::InvalidSpec(format!(
                                "layer {i}: empty polynomial coefficient list"
                            )));
                        }
                    }
                    shape
                }
            };
            shapes.push(shape.clone());
        }
        if shape.len() != 1 {
            return Err(Error::InvalidSpec(format!(
                "network output must be a vector, got {shape:?}"
            )));
        }
        Ok(shapes)
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.layer_shapes()?.last().map(|s| s[0]).unwrap_or(0))
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::BatchNorm { .. }))
    }

    /// Every stored array, in snapshot order.
    pub fn param_layout(&self) -> Result<Vec<ParamSlot>> {
        self.layer_shapes()?;
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Conv3x3Stride2 { in_ch, out_ch, bias } => {
                    let fan_in = in_ch * 9;
                    slots.push(ParamSlot {
                        layer: i,
                        role: ParamRole::Weight,
                        shape: vec![out_ch, in_ch, 3, 3],
                        fan_in,
                    });
                    if bias {
                        slots.push(ParamSlot {
                            layer: i,
                            role: ParamRole::Bias,
                            shape: vec![out_ch],
                            fan_in,
                        });
                    }
                }
                Layer::Dense {
                    inputs,
                    outputs,
                    bias,
                } => {
                    slots.push(ParamSlot {
                        layer: i,
                        role: ParamRole::Weight,
                        shape: vec![outputs, inputs],
                        fan_in: inputs,
                    });
                    if bias {
                        slots.push(ParamSlot {
                            layer: i,
                            role: ParamRole::Bias,
                            shape: vec![outputs],
                            fan_in: inputs,
                        });
                    }
                }
                Layer::BatchNorm { channels, .. } => {
                    for role in [ParamRole::RunningMean, ParamRole::RunningVar] {
                        slots.push(ParamSlot {
                            layer: i,
                            role,
                            shape: vec![channels],
                            fan_in: 0,
                        });
                    }
                }
                Layer::Activation { .. } => {}
            }
        }
        Ok(slots)
    }

    /// Number of trainable parameters. Batch norm contributes nothing.
    pub fn count_parameters(&self) -> Result<usize> {
        Ok(self
            .param_layout()?
            .iter()
            .filter(|s| s.role.trainable())
            .map(ParamSlot::len)
            .sum())
    }

    /// Indices into `layers` of the weight-bearing (conv/dense) layers.
    pub fn weight_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv3x3Stride2 { .. } | Layer::Dense { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Scales every conv width by `multiplier`, keeping input and class count.
    pub fn widen(&self, multiplier: usize) -> Result<Self> {
        let mut spec = self.clone();
        let last = spec.layers.len().saturating_sub(1);
        let mut prev_out = self.input_shape[0];
        let mut shape = self.input_shape.clone();
        for (i, layer) in spec.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv3x3Stride2 { in_ch, out_ch, .. } => {
                    *in_ch = prev_out;
                    *out_ch *= multiplier;
                    prev_out = *out_ch;
                    shape = vec![*out_ch, conv_out(shape[1]), conv_out(shape[2])];
                }
                Layer::Dense {
                    inputs, outputs, ..
                } => {
                    *inputs = shape.iter().product();
                    if i != last {
                        *outputs *= multiplier;
                    }
                    prev_out = *outputs;
                    shape = vec![*outputs];
                }
                Layer::BatchNorm { channels, .. } => *channels = prev_out,
                Layer::Activation { .. } => {}
            }
        }
        spec.layer_shapes()?;
        Ok(spec)
    }
}
