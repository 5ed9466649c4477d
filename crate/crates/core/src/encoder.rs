//! Four-stage strided convolutional encoder.
//!
//! Each stage is a `k×k` convolution with stride `s` (`k = max(3, 2s - 1)`,
//! padding `(k - 1) / 2`, so spatial dims shrink exactly by `s`) followed by
//! SiLU. Stages are small stand-ins for the four blocks of a modern
//! hierarchical backbone; what matters downstream is the multi-scale
//! `H^i×W^i×C^i` contract that the neural maps attach to.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::grid::{Grid, ViewId};
use crate::scalar::{axpy, dot, silu, silu_grad, Scalar};

pub const NUM_STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum WeightSharing {
    Shared,
    Separate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EncoderConfig {
    pub stage_channels: [usize; NUM_STAGES],
    pub stage_strides: [usize; NUM_STAGES],
    /// `(height, width)` of ground panoramas.
    pub ground_input_hw: (usize, usize),
    /// `(height, width)` of satellite images.
    pub satellite_input_hw: (usize, usize),
    pub weight_sharing: WeightSharing,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            stage_channels: [16, 32, 64, 128],
            stage_strides: [2, 2, 2, 2],
            ground_input_hw: (32, 128),
            satellite_input_hw: (64, 64),
            weight_sharing: WeightSharing::Separate,
        }
    }
}

impl EncoderConfig {
    pub fn embedding_dim(&self) -> usize {
        self.stage_channels[NUM_STAGES - 1]
    }

    pub fn input_hw(&self, view: ViewId) -> (usize, usize) {
        match view {
            ViewId::Ground => self.ground_input_hw,
            ViewId::Satellite => self.satellite_input_hw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &s) in self.stage_strides.iter().enumerate() {
            if s < 1 {
                return Err(Error::config(format!("stage {} stride must be >= 1", i + 1)));
            }
        }
        if self.stage_channels[0] == 0 {
            return Err(Error::config("stage 1 must have at least one channel"));
        }
        for i in 1..NUM_STAGES {
            if self.stage_channels[i] <= self.stage_channels[i - 1] {
                return Err(Error::config(format!(
                    "stage_channels must be strictly increasing (stage {} has {} <= {})",
                    i + 1,
                    self.stage_channels[i],
                    self.stage_channels[i - 1]
                )));
            }
        }
        for view in ViewId::BOTH {
            let (mut h, mut w) = self.input_hw(view);
            if h == 0 || w == 0 {
                return Err(Error::config(format!("{view} input must be non-empty")));
            }
            for (i, &s) in self.stage_strides.iter().enumerate() {
                if h % s != 0 || w % s != 0 {
                    return Err(Error::config(format!(
                        "{view} input {:?} not divisible by the stride product at stage {}",
                        self.input_hw(view),
                        i + 1
                    )));
                }
                h /= s;
                w /= s;
            }
        }
        Ok(())
    }

    /// Output shape `(h, w, c)` of 1-based `stage` for `view`.
    pub fn stage_shape(&self, view: ViewId, stage: usize) -> (usize, usize, usize) {
        let (mut h, mut w) = self.input_hw(view);
        for s in &self.stage_strides[..stage] {
            h /= s;
            w /= s;
        }
        (h, w, self.stage_channels[stage - 1])
    }

    /// Input shape `(h, w, c)` of 1-based `stage` for `view`.
    pub fn stage_input_shape(&self, view: ViewId, stage: usize) -> (usize, usize, usize) {
        if stage == 1 {
            let (h, w) = self.input_hw(view);
            (h, w, 3)
        } else {
            self.stage_shape(view, stage - 1)
        }
    }
}

pub fn kernel_size(stride: usize) -> usize {
    (2 * stride).saturating_sub(1).max(3)
}

/// Convolution weights `[cout][k][k][cin]` and biases of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<T> {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> StageParams<T> {
    pub fn zeros(cin: usize, cout: usize, stride: usize) -> Self {
        let k = kernel_size(stride);
        StageParams {
            cin,
            cout,
            stride,
            weight: vec![T::zero(); cout * k * k * cin],
            bias: vec![T::zero(); cout],
        }
    }

    /// He-uniform weights, zero bias.
    pub fn init<R: Rng>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(cin, cout, stride);
        let bound = num_traits::Float::sqrt(6.0 / p.patch_len() as f64);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for w in &mut p.weight {
            *w = T::cast(dist.sample(rng));
        }
        p
    }

    pub fn kernel(&self) -> usize {
        kernel_size(self.stride)
    }

    pub fn patch_len(&self) -> usize {
        let k = self.kernel();
        k * k * self.cin
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cin, self.cout, self.stride)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel();
        [self.cout, k, k, self.cin]
    }
}

/// Four stages of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams<T> {
    pub stages: Vec<StageParams<T>>,
}

impl<T: Scalar> BranchParams<T> {
    pub fn init<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Self {
        let mut cin = 3;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for i in 0..NUM_STAGES {
            let cout = config.stage_channels[i];
            stages.push(StageParams::init(cin, cout, config.stage_strides[i], rng));
            cin = cout;
        }
        BranchParams { stages }
    }

    pub fn zeros_like(&self) -> Self {
        BranchParams {
            stages: self.stages.iter().map(StageParams::zeros_like).collect(),
        }
    }
}

/// Border handling of the stage convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Wraps around horizontally (360° panoramas), zero vertically.
    WrapWidth,
}

impl Padding {
    pub fn for_view(view: ViewId) -> Self {
        match view {
            ViewId::Ground => Padding::WrapWidth,
            ViewId::Satellite => Padding::Zero,
        }
    }

    /// Source column for padded column `ix`, if any.
    #[inline]
    fn column(self, ix: isize, w: usize) -> Option<usize> {
        match self {
            _ if ix >= 0 && (ix as usize) < w => Some(ix as usize),
            Padding::Zero => None,
            Padding::WrapWidth => Some(ix.rem_euclid(w as isize) as usize),
        }
    }
}

/// Saved tensors of one stage forward pass needed by its backward pass.
#[derive(Debug, Clone)]
pub struct StageCache<T> {
    pub pre_activation: Grid<T>,
}

fn fill_patch<T: Scalar>(
    input: &Grid<T>,
    oy: usize,
    ox: usize,
    stride: usize,
    k: usize,
    padding: Padding,
    patch: &mut [T],
) {
    let (h, w, cin) = input.shape();
    let pad = (k - 1) / 2;
    for ky in 0..k {
        let iy = (oy * stride + ky) as isize - pad as isize;
        for kx in 0..k {
            let ix = (ox * stride + kx) as isize - pad as isize;
            let dst = &mut patch[(ky * k + kx) * cin..(ky * k + kx + 1) * cin];
            match padding.column(ix, w) {
                Some(x) if iy >= 0 && (iy as usize) < h => dst.copy_from_slice(input.pixel(iy as usize, x)),
                _ => dst.fill(T::zero()),
            }
        }
    }
}

/// One encoder stage on a grid whose shape has already been validated.
pub fn stage_forward<T: Scalar>(
    input: &Grid<T>,
    params: &StageParams<T>,
    padding: Padding,
) -> Result<(Grid<T>, StageCache<T>)> {
    let (h, w, cin) = input.shape();
    let s = params.stride;
    if cin != params.cin || h % s != 0 || w % s != 0 {
        return Err(Error::config(format!(
            "stage input {h}x{w}x{cin} incompatible with stride {s} / {} input channels",
            params.cin
        )));
    }
    let (oh, ow, cout) = (h / s, w / s, params.cout);
    let k = params.kernel();
    let plen = params.patch_len();
    let mut patch = vec![T::zero(); plen];
    let mut pre = Grid::zeros(oh, ow, cout);
    let mut out = Grid::zeros(oh, ow, cout);
    {
        let pre_data = pre.as_mut_slice();
        let out_data = out.as_mut_slice();
        for oy in 0..oh {
            for ox in 0..ow {
                fill_patch(input, oy, ox, s, k, padding, &mut patch);
                let base = (oy * ow + ox) * cout;
                for co in 0..cout {
                    let z = params.bias[co] + dot(&params.weight[co * plen..(co + 1) * plen], &patch);
                    pre_data[base + co] = z;
                    out_data[base + co] = silu(z);
                }
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::numeric("non-finite activation in encoder stage"));
    }
    Ok((out, StageCache { pre_activation: pre }))
}

/// Backward pass of [`stage_forward`]. Accumulates parameter gradients into
/// `grads` and returns the input gradient when `want_input_grad` is set.
pub fn stage_backward<T: Scalar>(
    input: &Grid<T>,
    cache: &StageCache<T>,
    d_out: &Grid<T>,
    params: &StageParams<T>,
    padding: Padding,
    grads: &mut StageParams<T>,
    want_input_grad: bool,
) -> Option<Grid<T>> {
    let (h, w, cin) = input.shape();
    let s = params.stride;
    let (oh, ow, cout) = cache.pre_activation.shape();
    let k = params.kernel();
    let pad = (k - 1) / 2;
    let plen = params.patch_len();
    let mut patch = vec![T::zero(); plen];
    let mut d_patch = vec![T::zero(); plen];
    let mut dz = vec![T::zero(); cout];
    let mut d_in = want_input_grad.then(|| Grid::zeros(h, w, cin));
    let pre = cache.pre_activation.as_slice();
    let dout = d_out.as_slice();
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * cout;
            let mut any = false;
            for co in 0..cout {
                dz[co] = dout[base + co] * silu_grad(pre[base + co]);
                any |= dz[co] != T::zero();
            }
            if !any {
                continue;
            }
            fill_patch(input, oy, ox, s, k, padding, &mut patch);
            d_patch.fill(T::zero());
            for co in 0..cout {
                let g = dz[co];
                if g == T::zero() {
                    continue;
                }
                grads.bias[co] = grads.bias[co] + g;
                axpy(g, &patch, &mut grads.weight[co * plen..(co + 1) * plen]);
                if d_in.is_some() {
                    axpy(g, &params.weight[co * plen..(co + 1) * plen], &mut d_patch);
                }
            }
            if let Some(d_in) = d_in.as_mut() {
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - pad as isize;
                        let Some(ix) = padding.column(ix, w) else {
                            continue;
                        };
                        let dst = d_in.index(iy as usize, ix, 0);
                        let src = &d_patch[(ky * k + kx) * cin..(ky * k + kx + 1) * cin];
                        let data = d_in.as_mut_slice();
                        for (a, b) in data[dst..dst + cin].iter_mut().zip(src) {
                            *a = *a + *b;
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// Runs 1-based `stage` of `view` after checking the input against the
/// configured stage input shape.
pub fn encode_stage<T: Scalar>(
    config: &EncoderConfig,
    view: ViewId,
    stage: usize,
    input: &Grid<T>,
    params: &StageParams<T>,
) -> Result<(Grid<T>, StageCache<T>)> {
    if !(1..=NUM_STAGES).contains(&stage) {
        return Err(Error::config(format!("stage {stage} out of range 1..=4")));
    }
    let expected = config.stage_input_shape(view, stage);
    if input.shape() != expected {
        return Err(Error::config(format!(
            "stage {stage} ({view}): input shape {:?} does not match expected {:?}",
            input.shape(),
            expected
        )));
    }
    let out_c = config.stage_channels[stage - 1];
    if params.cin != expected.2 || params.cout != out_c || params.stride != config.stage_strides[stage - 1] {
        return Err(Error::config(format!(
            "stage {stage} ({view}): parameters {}->{} stride {} do not match configuration",
            params.cin, params.cout, params.stride
        )));
    }
    stage_forward(input, params, Padding::for_view(view))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn satellite_stage_one_halves_resolution() {
        let cfg = EncoderConfig::default();
        let mut rng = seed::rng(0, 1);
        let branch = BranchParams::<f32>::init(&cfg, &mut rng);
        let img = Grid::<f32>::filled(64, 64, 3, 0.5);
        let (out, _) = encode_stage(&cfg, ViewId::Satellite, 1, &img, &branch.stages[0]).unwrap();
        assert_eq!(out.shape(), (32, 32, 16));
    }

    #[test]
    fn ground_chain_reaches_two_by_eight() {
        let cfg = EncoderConfig::default();
        let mut rng = seed::rng(0, 1);
        let branch = BranchParams::<f32>::init(&cfg, &mut rng);
        let mut x = Grid::<f32>::filled(32, 128, 3, 0.25);
        for (i, p) in branch.stages.iter().enumerate() {
            x = encode_stage(&cfg, ViewId::Ground, i + 1, &x, p).unwrap().0;
        }
        assert_eq!(x.shape(), (2, 8, 128));
    }

    #[test]
    fn zero_weight_stage_outputs_exact_zero() {
        let p = StageParams::<f64>::zeros(3, 4, 2);
        let img = Grid::from_fn(8, 8, 3, |y, x, c| (y * 7 + x * 3 + c) as f64 * 0.1);
        let (out, _) = stage_forward(&img, &p, Padding::Zero).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_shape_names_stage() {
        let cfg = EncoderConfig::default();
        let p = StageParams::<f32>::zeros(16, 32, 2);
        let bad = Grid::<f32>::zeros(10, 10, 16);
        let err = encode_stage(&cfg, ViewId::Ground, 2, &bad, &p).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("stage 2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_activation_is_numeric_error() {
        let mut p = StageParams::<f32>::zeros(3, 2, 2);
        p.bias[0] = f32::NAN;
        let img = Grid::<f32>::zeros(4, 4, 3);
        assert!(matches!(stage_forward(&img, &p, Padding::Zero), Err(Error::Numeric(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EncoderConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.stage_channels = [16, 16, 64, 128];
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::default();
        cfg.ground_input_hw = (30, 128);
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::default();
        cfg.stage_strides = [2, 0, 2, 2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kernel_size_keeps_exact_division() {
        for s in 1..6 {
            let k = kernel_size(s);
            let pad = (k - 1) / 2;
            for n in 1..8 {
                let input = n * s;
                assert_eq!((input + 2 * pad - k) / s + 1, n, "stride {s}");
            }
        }
    }
}
