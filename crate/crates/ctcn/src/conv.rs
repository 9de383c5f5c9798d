//! The three temporal convolution operators compared in this crate: standard
//! temporal convolution, group temporal convolution, and concept-wise
//! temporal convolution (CTC), plus the CTC residual block.
//!
//! All operators use "same" zero padding temporally: for odd kernel width
//! `w`, the input is padded by `(w-1)/2` on each side and output index `j`
//! reads the window centered at `j * stride`. Output length is
//! `ceil(t / stride)`.

use crate::error::{CtcnError, Result};
use crate::tensor::Tensor;

/// A `concepts x snippets` feature map.
#[derive(Clone)]
pub struct FeatureSequence {
    pub values: Tensor,
}

impl FeatureSequence {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(CtcnError::InvalidShape(format!(
                "feature sequence must be rank 2, got {:?}",
                values.shape()
            )));
        }
        Ok(FeatureSequence { values })
    }

    pub fn concepts(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn snippets(&self) -> usize {
        self.values.shape()[1]
    }

    /// Embed as a potential map with k = 1.
    pub fn into_potential_map(self) -> PotentialMap {
        let shape = self.values.shape();
        let values = self
            .values
            .reshape(vec![1, shape[0], shape[1]])
            .expect("rank-2 to rank-3 reshape");
        PotentialMap { values }
    }
}

/// A `potentials x concepts x snippets` feature map.
#[derive(Clone)]
pub struct PotentialMap {
    pub values: Tensor,
}

impl PotentialMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(CtcnError::InvalidShape(format!(
                "potential map must be rank 3, got {:?}",
                values.shape()
            )));
        }
        Ok(PotentialMap { values })
    }

    pub fn potentials(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn concepts(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn snippets(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Filters of a CTC layer: shared across all concepts, so the parameter
/// count `k_out * k_in * w + k_out` is independent of the concept count.
#[derive(Clone)]
pub struct CtcFilterBank {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl CtcFilterBank {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 3 {
            return Err(CtcnError::InvalidShape(format!(
                "CTC weights must be rank 3 [k_out, k_in, w], got {ws:?}"
            )));
        }
        if ws[2] % 2 == 0 {
            return Err(CtcnError::InvalidArgument(format!(
                "kernel width must be odd, got {}",
                ws[2]
            )));
        }
        if bias.numel() != ws[0] {
            return Err(CtcnError::ShapeMismatch(ws, bias.shape()));
        }
        Ok(CtcFilterBank { weights, bias })
    }

    pub fn out_potentials(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_potentials(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }
}

fn out_len(t: usize, stride: usize) -> usize {
    (t + stride - 1) / stride
}

fn check_conv_args(width: usize, stride: usize) -> Result<()> {
    if width % 2 == 0 {
        return Err(CtcnError::InvalidArgument(format!(
            "kernel width must be odd, got {width}"
        )));
    }
    if stride == 0 {
        return Err(CtcnError::InvalidArgument("stride must be >= 1".into()));
    }
    Ok(())
}

/// Standard temporal convolution: every output channel reads all input
/// concepts. `weights` is `[c_out, c_in, w]`, `x` is `[c_in, t]`.
pub fn standard_temporal_conv(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weights.shape();
    if xs.len() != 2 || ws.len() != 3 {
        return Err(CtcnError::ShapeMismatch(xs, ws));
    }
    let (c_in, t) = (xs[0], xs[1]);
    let (c_out, w_cin, kw) = (ws[0], ws[1], ws[2]);
    if w_cin != c_in || bias.numel() != c_out {
        return Err(CtcnError::ShapeMismatch(xs, ws));
    }
    check_conv_args(kw, stride)?;
    let pad = (kw - 1) / 2;
    let t_out = out_len(t, stride);

    let xd = x.data();
    let wd = weights.data();
    let bd = bias.data();
    let mut out = vec![0.0; c_out * t_out];
    for co in 0..c_out {
        for j in 0..t_out {
            let mut acc = bd[co];
            for ci in 0..c_in {
                for d in 0..kw {
                    let pos = (j * stride + d) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < t {
                        acc += wd[(co * c_in + ci) * kw + d] * xd[ci * t + pos as usize];
                    }
                }
            }
            out[co * t_out + j] = acc;
        }
    }
    let back = move |g: &[f64]| {
        let mut gx = vec![0.0; c_in * t];
        let mut gw = vec![0.0; c_out * c_in * kw];
        let mut gb = vec![0.0; c_out];
        for co in 0..c_out {
            for j in 0..t_out {
                let gi = g[co * t_out + j];
                gb[co] += gi;
                for ci in 0..c_in {
                    for d in 0..kw {
                        let pos = (j * stride + d) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < t {
                            let pos = pos as usize;
                            gw[(co * c_in + ci) * kw + d] += gi * xd[ci * t + pos];
                            gx[ci * t + pos] += gi * wd[(co * c_in + ci) * kw + d];
                        }
                    }
                }
            }
        }
        vec![gx, gw, gb]
    };
    Ok(Tensor::from_op(
        vec![c_out, t_out],
        out,
        vec![x.clone(), weights.clone(), bias.clone()],
        Box::new(back),
    ))
}

/// Group temporal convolution: input channels are split into `groups` equal
/// parts, each convolved with its own unshared filters. Group `i` of the
/// output reads only input channels of group `i`; output has
/// `k * groups` channels where each group weight tensor is `[k, c/g, w]`.
pub fn group_temporal_conv(
    x: &Tensor,
    per_group_weights: &[Tensor],
    per_group_bias: &[Tensor],
    stride: usize,
) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(CtcnError::InvalidShape(format!(
            "group conv input must be rank 2, got {xs:?}"
        )));
    }
    let groups = per_group_weights.len();
    if groups == 0 || per_group_bias.len() != groups {
        return Err(CtcnError::InvalidArgument(
            "one weight and one bias tensor per group required".into(),
        ));
    }
    let c = xs[0];
    if c % groups != 0 {
        return Err(CtcnError::InvalidArgument(format!(
            "groups {groups} does not divide concept count {c}"
        )));
    }
    let per = c / groups;
    let mut parts = Vec::with_capacity(groups);
    for (gi, (w, b)) in per_group_weights.iter().zip(per_group_bias).enumerate() {
        let slice = x.slice0(gi * per, (gi + 1) * per)?;
        parts.push(standard_temporal_conv(&slice, w, b, stride)?);
    }
    Tensor::concat0(&parts)
}

/// Concept-wise temporal convolution: the kernel spans one concept and `w`
/// snippets, so output concept `i` depends only on input concept `i`, and
/// the filter bank is shared by all concepts. `x` is `[k_in, c, t]`.
pub fn ctc_conv(x: &Tensor, bank: &CtcFilterBank, stride_t: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(CtcnError::InvalidShape(format!(
            "ctc_conv input must be rank 3, got {xs:?}"
        )));
    }
    let (k_in, c, t) = (xs[0], xs[1], xs[2]);
    if bank.in_potentials() != k_in {
        return Err(CtcnError::InvalidArgument(format!(
            "potential-count mismatch: input has {k_in}, bank expects {}",
            bank.in_potentials()
        )));
    }
    let k_out = bank.out_potentials();
    let kw = bank.width();
    check_conv_args(kw, stride_t)?;
    let pad = (kw - 1) / 2;
    let t_out = out_len(t, stride_t);

    let xd = x.data();
    let wd = bank.weights.data();
    let bd = bank.bias.data();
    let mut out = vec![0.0; k_out * c * t_out];
    for ko in 0..k_out {
        for ci in 0..c {
            for j in 0..t_out {
                let mut acc = bd[ko];
                for ki in 0..k_in {
                    for d in 0..kw {
                        let pos = (j * stride_t + d) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < t {
                            acc += wd[(ko * k_in + ki) * kw + d]
                                * xd[(ki * c + ci) * t + pos as usize];
                        }
                    }
                }
                out[(ko * c + ci) * t_out + j] = acc;
            }
        }
    }
    let back = move |g: &[f64]| {
        let mut gx = vec![0.0; k_in * c * t];
        let mut gw = vec![0.0; k_out * k_in * kw];
        let mut gb = vec![0.0; k_out];
        for ko in 0..k_out {
            for ci in 0..c {
                for j in 0..t_out {
                    let gi = g[(ko * c + ci) * t_out + j];
                    gb[ko] += gi;
                    for ki in 0..k_in {
                        for d in 0..kw {
                            let pos = (j * stride_t + d) as isize - pad as isize;
                            if pos >= 0 && (pos as usize) < t {
                                let pos = pos as usize;
                                gw[(ko * k_in + ki) * kw + d] += gi * xd[(ki * c + ci) * t + pos];
                                gx[(ki * c + ci) * t + pos] += gi * wd[(ko * k_in + ki) * kw + d];
                            }
                        }
                    }
                }
            }
        }
        vec![gx, gw, gb]
    };
    Ok(Tensor::from_op(
        vec![k_out, c, t_out],
        out,
        vec![x.clone(), bank.weights.clone(), bank.bias.clone()],
        Box::new(back),
    ))
}

/// Residual block of two CTC convolutions:
/// `relu(conv2(relu(conv1(x))) + shortcut(x))`. The shortcut is the identity
/// when shapes match, otherwise the `downsample` bank (required in that
/// case, applied with the block stride).
pub fn ctc_residual_block(
    x: &Tensor,
    bank1: &CtcFilterBank,
    bank2: &CtcFilterBank,
    downsample: Option<&CtcFilterBank>,
    stride_t: usize,
) -> Result<Tensor> {
    let y = ctc_conv(x, bank1, stride_t)?.relu();
    let y = ctc_conv(&y, bank2, 1)?;
    let shortcut = match downsample {
        Some(bank) => ctc_conv(x, bank, stride_t)?,
        None => {
            if x.shape() != y.shape() {
                return Err(CtcnError::InvalidArgument(format!(
                    "residual shortcut shape {:?} incompatible with branch {:?} and no downsample given",
                    x.shape(),
                    y.shape()
                )));
            }
            x.clone()
        }
    };
    if shortcut.shape() != y.shape() {
        return Err(CtcnError::ShapeMismatch(shortcut.shape(), y.shape()));
    }
    Ok(y.add(&shortcut)?.relu())
}
