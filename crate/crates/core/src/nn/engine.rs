//! Layer-wise forward pass with cached intermediates and the matching
//! reverse-mode pass.

use crate::error::{Error, Result};
use crate::nn::gemm;
use crate::nn::loss::{loss_and_output_grad, Targets};
use crate::nn::snapshot::{GradientSet, ParamArray, WeightSnapshot};
use crate::nn::spec::{param_name, Activation, Layer, NetworkSpec, ParamRole};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics observed by a batch-norm layer in train mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Cache {
    Conv {
        cols: Vec<f64>,
        in_shape: [usize; 3],
        out_hw: (usize, usize),
    },
    Dense {
        input: Vec<f64>,
    },
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        spatial: usize,
        train: bool,
    },
    Act {
        input: Vec<f64>,
    },
}

/// Result of a forward pass, keeping what the backward pass needs.
pub struct ForwardTrace {
    pub output: Tensor,
    pub batch_stats: Vec<BatchStats>,
    caches: Vec<Cache>,
    batch: usize,
}

impl ForwardTrace {
    /// Inputs seen by every activation layer, keyed by layer index.
    pub fn activation_inputs(&self) -> Vec<(usize, &[f64])> {
        self.caches
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match c {
                Cache::Act { input } => Some((i, input.as_slice())),
                _ => None,
            })
            .collect()
    }
}

fn check_batch(spec: &NetworkSpec, batch: &Tensor, mode: Mode) -> Result<()> {
    if batch.shape().len() != spec.input_shape.len() + 1 || batch.shape()[1..] != spec.input_shape[..]
    {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: format!(
                "batch shape {:?} does not match input shape {:?}",
                batch.shape(),
                spec.input_shape
            ),
        });
    }
    if mode == Mode::Train && spec.has_batch_norm() && batch.batch() < 2 {
        return Err(Error::Precondition(
            "train-mode batch norm needs a batch of at least 2".into(),
        ));
    }
    Ok(())
}

fn im2col(x: &[f64], n: usize, [c, h, w]: [usize; 3], ho: usize, wo: usize) -> Vec<f64> {
    let p = ho * wo;
    let np = n * p;
    let mut cols = vec![0.0; c * 9 * np];
    for s in 0..n {
        let xs = &x[s * c * h * w..(s + 1) * c * h * w];
        for ch in 0..c {
            for kh in 0..3 {
                for kw in 0..3 {
                    let row = (ch * 9 + kh * 3 + kw) * np + s * p;
                    for oh in 0..ho {
                        let ih = (oh * 2 + kh) as isize - 1;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let ih = ih as usize;
                        for ow in 0..wo {
                            let iw = (ow * 2 + kw) as isize - 1;
                            if iw >= 0 && (iw as usize) < w {
                                cols[row + oh * wo + ow] = xs[ch * h * w + ih * w + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], n: usize, [c, h, w]: [usize; 3], ho: usize, wo: usize) -> Vec<f64> {
    let p = ho * wo;
    let np = n * p;
    let mut dx = vec![0.0; n * c * h * w];
    for s in 0..n {
        let dxs = &mut dx[s * c * h * w..(s + 1) * c * h * w];
        for ch in 0..c {
            for kh in 0..3 {
                for kw in 0..3 {
                    let row = (ch * 9 + kh * 3 + kw) * np + s * p;
                    for oh in 0..ho {
                        let ih = (oh * 2 + kh) as isize - 1;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let ih = ih as usize;
                        for ow in 0..wo {
                            let iw = (ow * 2 + kw) as isize - 1;
                            if iw >= 0 && (iw as usize) < w {
                                dxs[ch * h * w + ih * w + iw as usize] += dcols[row + oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn param(weights: &WeightSnapshot, layer: usize, role: ParamRole) -> Result<&[f64]> {
    weights.array(layer, role).ok_or_else(|| Error::SnapshotMismatch {
        name: param_name(layer, role),
        detail: "missing from snapshot".into(),
    })
}

/// Runs the network and keeps every intermediate needed for `backward`.
pub fn forward_trace(
    spec: &NetworkSpec,
    weights: &WeightSnapshot,
    batch: &Tensor,
    mode: Mode,
) -> Result<ForwardTrace> {
    let shapes = spec.layer_shapes()?;
    weights.check_against(spec)?;
    check_batch(spec, batch, mode)?;
    let n = batch.batch();
    let mut x = batch.data().to_vec();
    let mut shape = spec.input_shape.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    let mut batch_stats = Vec::new();

    for (i, layer) in spec.layers.iter().enumerate() {
        let out_shape = &shapes[i];
        match layer {
            Layer::Conv3x3Stride2 {
                in_ch,
                out_ch,
                bias,
            } => {
                let in_shape = [*in_ch, shape[1], shape[2]];
                let (ho, wo) = (out_shape[1], out_shape[2]);
                let p = ho * wo;
                let k = in_ch * 9;
                let cols = im2col(&x, n, in_shape, ho, wo);
                let w = param(weights, i, ParamRole::Weight)?;
                let mut y = vec![0.0; out_ch * n * p];
                gemm::mul(w, &cols, &mut y, *out_ch, k, n * p);
                let b = if *bias {
                    Some(param(weights, i, ParamRole::Bias)?)
                } else {
                    None
                };
                let mut out = vec![0.0; n * out_ch * p];
                for o in 0..*out_ch {
                    let bo = b.map_or(0.0, |b| b[o]);
                    for s in 0..n {
                        let src = &y[o * n * p + s * p..o * n * p + (s + 1) * p];
                        let dst = &mut out[s * out_ch * p + o * p..s * out_ch * p + (o + 1) * p];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d = v + bo;
                        }
                    }
                }
                caches.push(Cache::Conv {
                    cols,
                    in_shape,
                    out_hw: (ho, wo),
                });
                x = out;
            }
            Layer::Dense {
                inputs,
                outputs,
                bias,
            } => {
                let w = param(weights, i, ParamRole::Weight)?;
                let mut y = vec![0.0; n * outputs];
                gemm::mul_bt(&x, w, &mut y, n, *inputs, *outputs);
                if *bias {
                    let b = param(weights, i, ParamRole::Bias)?;
                    for row in y.chunks_mut(*outputs) {
                        for (v, bo) in row.iter_mut().zip(b) {
                            *v += bo;
                        }
                    }
                }
                caches.push(Cache::Dense { input: x });
                x = y;
            }
            Layer::BatchNorm { channels, .. } => {
                let c = *channels;
                let spatial: usize = shape[1..].iter().product();
                let (mean, var) = match mode {
                    Mode::Train => {
                        let m = (n * spatial) as f64;
                        let mut mean = vec![0.0; c];
                        let mut var = vec![0.0; c];
                        for ch in 0..c {
                            let mut sum = 0.0;
                            for s in 0..n {
                                let base = s * c * spatial + ch * spatial;
                                sum += x[base..base + spatial].iter().sum::<f64>();
                            }
                            let mu = sum / m;
                            let mut sq = 0.0;
                            for s in 0..n {
                                let base = s * c * spatial + ch * spatial;
                                sq += x[base..base + spatial]
                                    .iter()
                                    .map(|v| (v - mu) * (v - mu))
                                    .sum::<f64>();
                            }
                            mean[ch] = mu;
                            var[ch] = sq / m;
                        }
                        batch_stats.push(BatchStats {
                            layer: i,
                            mean: mean.clone(),
                            var: var.clone(),
                        });
                        (mean, var)
                    }
                    Mode::Eval => (
                        param(weights, i, ParamRole::RunningMean)?.to_vec(),
                        param(weights, i, ParamRole::RunningVar)?.to_vec(),
                    ),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + spec.bn_eps).sqrt()).collect();
                for s in 0..n {
                    for ch in 0..c {
                        let base = s * c * spatial + ch * spatial;
                        for v in &mut x[base..base + spatial] {
                            *v = (*v - mean[ch]) * inv_std[ch];
                        }
                    }
                }
                caches.push(Cache::Norm {
                    xhat: x.clone(),
                    inv_std,
                    spatial,
                    train: mode == Mode::Train,
                });
            }
            Layer::Activation { activation } => {
                let input = x.clone();
                match activation {
                    Activation::Relu => x.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 }),
                    act => x.iter_mut().for_each(|v| *v = act.apply(*v)),
                }
                caches.push(Cache::Act { input });
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { layer: i });
        }
        shape = out_shape.clone();
    }

    let mut out_shape = vec![n];
    out_shape.extend_from_slice(&shape);
    Ok(ForwardTrace {
        output: Tensor::new(out_shape, x)?,
        batch_stats,
        caches,
        batch: n,
    })
}

/// Network output for a batch.
pub fn forward(
    spec: &NetworkSpec,
    weights: &WeightSnapshot,
    batch: &Tensor,
    mode: Mode,
) -> Result<Tensor> {
    Ok(forward_trace(spec, weights, batch, mode)?.output)
}

/// Reverse-mode pass from the derivative of a scalar with respect to the
/// network output.
pub fn backward(
    spec: &NetworkSpec,
    weights: &WeightSnapshot,
    trace: &ForwardTrace,
    output_grad: Vec<f64>,
) -> Result<GradientSet> {
    let n = trace.batch;
    let mut dy = output_grad;
    let mut grads: Vec<ParamArray> = Vec::new();

    for (i, layer) in spec.layers.iter().enumerate().rev() {
        match (layer, &trace.caches[i]) {
            (
                Layer::Conv3x3Stride2 {
                    in_ch,
                    out_ch,
                    bias,
                },
                Cache::Conv {
                    cols,
                    in_shape,
                    out_hw,
                },
            ) => {
                let p = out_hw.0 * out_hw.1;
                let k = in_ch * 9;
                let np = n * p;
                let mut dmat = vec![0.0; out_ch * np];
                for s in 0..n {
                    for o in 0..*out_ch {
                        let src = &dy[s * out_ch * p + o * p..s * out_ch * p + (o + 1) * p];
                        dmat[o * np + s * p..o * np + (s + 1) * p].copy_from_slice(src);
                    }
                }
                if *bias {
                    let db: Vec<f64> = dmat.chunks(np).map(|r| r.iter().sum()).collect();
                    grads.push(ParamArray {
                        name: param_name(i, ParamRole::Bias),
                        shape: vec![*out_ch],
                        data: db,
                    });
                }
                let mut dw = vec![0.0; out_ch * k];
                gemm::mul_bt(&dmat, cols, &mut dw, *out_ch, np, k);
                grads.push(ParamArray {
                    name: param_name(i, ParamRole::Weight),
                    shape: vec![*out_ch, *in_ch, 3, 3],
                    data: dw,
                });
                if i > 0 {
                    let w = param(weights, i, ParamRole::Weight)?;
                    let mut dcols = vec![0.0; k * np];
                    gemm::mul_at(w, &dmat, &mut dcols, k, *out_ch, np);
                    dy = col2im(&dcols, n, *in_shape, out_hw.0, out_hw.1);
                }
            }
            (
                Layer::Dense {
                    inputs,
                    outputs,
                    bias,
                },
                Cache::Dense { input },
            ) => {
                if *bias {
                    let mut db = vec![0.0; *outputs];
                    for row in dy.chunks(*outputs) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    grads.push(ParamArray {
                        name: param_name(i, ParamRole::Bias),
                        shape: vec![*outputs],
                        data: db,
                    });
                }
                let mut dw = vec![0.0; outputs * inputs];
                gemm::mul_at(&dy, input, &mut dw, *outputs, n, *inputs);
                grads.push(ParamArray {
                    name: param_name(i, ParamRole::Weight),
                    shape: vec![*outputs, *inputs],
                    data: dw,
                });
                if i > 0 {
                    let w = param(weights, i, ParamRole::Weight)?;
                    let mut dx = vec![0.0; n * inputs];
                    gemm::mul(&dy, w, &mut dx, n, *outputs, *inputs);
                    dy = dx;
                }
            }
            (
                Layer::BatchNorm { channels, .. },
                Cache::Norm {
                    xhat,
                    inv_std,
                    spatial,
                    train,
                },
            ) => {
                let c = *channels;
                let sp = *spatial;
                if *train {
                    let m = (n * sp) as f64;
                    for ch in 0..c {
                        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                        for s in 0..n {
                            let base = s * c * sp + ch * sp;
                            for j in base..base + sp {
                                sum_dy += dy[j];
                                sum_dy_xhat += dy[j] * xhat[j];
                            }
                        }
                        let scale = inv_std[ch] / m;
                        for s in 0..n {
                            let base = s * c * sp + ch * sp;
                            for j in base..base + sp {
                                dy[j] = scale * (m * dy[j] - sum_dy - xhat[j] * sum_dy_xhat);
                            }
                        }
                    }
                } else {
                    for s in 0..n {
                        for ch in 0..c {
                            let base = s * c * sp + ch * sp;
                            for v in &mut dy[base..base + sp] {
                                *v *= inv_std[ch];
                            }
                        }
                    }
                }
            }
            (Layer::Activation { activation }, Cache::Act { input }) => {
                for (d, z) in dy.iter_mut().zip(input) {
                    *d *= activation.derivative(*z);
                }
            }
            _ => unreachable!("cache kind always matches its layer"),
        }
    }
    grads.reverse();
    // Bias is pushed before weight while walking backwards, so after the
    // reversal each layer lists weight then bias, matching the layout.
    Ok(GradientSet { arrays: grads })
}

/// Loss and its gradient in one train-mode pass, together with the batch
/// statistics the pass observed.
pub struct LossGrad {
    pub loss: f64,
    pub grads: GradientSet,
    pub batch_stats: Vec<BatchStats>,
}

pub fn loss_and_gradients(
    spec: &NetworkSpec,
    weights: &WeightSnapshot,
    batch: &Tensor,
    targets: &Targets,
) -> Result<LossGrad> {
    let trace = forward_trace(spec, weights, batch, Mode::Train)?;
    let (loss, dout) = loss_and_output_grad(&trace.output, targets, spec.loss)?;
    let grads = backward(spec, weights, &trace, dout)?;
    Ok(LossGrad {
        loss,
        grads,
        batch_stats: trace.batch_stats,
    })
}

/// Exact derivatives of the mean loss over `batch` with respect to every
/// trainable parameter (train mode).
pub fn gradients(
    spec: &NetworkSpec,
    weights: &WeightSnapshot,
    batch: &Tensor,
    targets: &Targets,
) -> Result<GradientSet> {
    Ok(loss_and_gradients(spec, weights, batch, targets)?.grads)
}

/// Exponential moving average update of the running statistics.
pub fn update_running_stats(weights: &mut WeightSnapshot, stats: &[BatchStats], momentum: f64) {
    for st in stats {
        for (role, values) in [(ParamRole::RunningMean, &st.mean), (ParamRole::RunningVar, &st.var)] {
            if let Some(arr) = weights.get_mut(&param_name(st.layer, role)) {
                for (r, v) in arr.data.iter_mut().zip(values) {
                    *r = (1.0 - momentum) * *r + momentum * v;
                }
            }
        }
    }
}

/// Replaces the running statistics by statistics of one full pass over
/// `data` in train mode.
pub fn recalibrate_batch_norm(
    spec: &NetworkSpec,
    weights: &mut WeightSnapshot,
    data: &Tensor,
) -> Result<()> {
    if !spec.has_batch_norm() {
        return Ok(());
    }
    let trace = forward_trace(spec, weights, data, Mode::Train)?;
    update_running_stats(weights, &trace.batch_stats, 1.0);
    Ok(())
}
