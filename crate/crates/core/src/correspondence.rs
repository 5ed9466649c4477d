//! View neural maps, the ground-to-satellite map converter (NEC), the
//! per-channel spatial normalization of maps, and map-guided feature
//! recalibration (GFR).
//!
//! Normalization acts on each channel independently: the `H·W` slice is
//! divided by its ℓ2 norm (skipped when the norm is below `1e-12`) and then
//! passed through a softmax over the `H·W` positions, so every channel of a
//! normalized map is a spatial distribution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::encoder::{EncoderConfig, NUM_STAGES};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Grid, ViewId};
use crate::scalar::{axpy, dot, silu, silu_grad, Scalar};
use crate::seed;

/// Half-width of the uniform initializer of ground maps.
pub const MAP_INIT_BOUND: f64 = 0.01;
/// Center of the initializer when a preset multiplies features by the raw map.
pub const RAW_MAP_INIT_CENTER: f64 = 1.0;
/// Channel slices with a smaller ℓ2 norm are not rescaled.
pub const NORM_EPS: f64 = 1e-12;

/// Learnable `H×W×C` map attached to one (view, level) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewNeuralMap<T> {
    pub level: usize,
    pub view: ViewId,
    pub grid: Grid<T>,
}

/// Per-channel spatial distribution derived from a neural map; every channel sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMap<T>(pub Grid<T>);

impl<T> NormalizedMap<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.0
    }
}

fn check_level(level: usize) -> Result<()> {
    if (1..=NUM_STAGES).contains(&level) {
        Ok(())
    } else {
        Err(Error::config(format!("level {level} out of range 1..=4")))
    }
}

/// Draws a map i.i.d. from `U[-0.01, 0.01]`; the stream depends only on `(seed, view, level)`.
pub fn init_neural_map<T: Scalar>(
    config: &EncoderConfig,
    level: usize,
    view: ViewId,
    shape: (usize, usize, usize),
    seed: u64,
) -> Result<ViewNeuralMap<T>> {
    check_level(level)?;
    let expected = config.stage_shape(view, level);
    if shape != expected {
        return Err(Error::config(format!(
            "{view} map at level {level}: requested shape {shape:?}, encoder produces {expected:?}"
        )));
    }
    let tag = match view {
        ViewId::Ground => seed::tag::GROUND_MAP,
        ViewId::Satellite => seed::tag::SATELLITE_MAP,
    };
    let mut rng = seed::rng(seed, tag + level as u64);
    let dist = Uniform::new_inclusive(-MAP_INIT_BOUND, MAP_INIT_BOUND).expect("finite bound");
    let grid = Grid::from_fn(shape.0, shape.1, shape.2, |_, _, _| T::cast(dist.sample(&mut rng)));
    Ok(ViewNeuralMap { level, view, grid })
}

/// Hidden nonlinearity of the converter MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NecActivation {
    Silu,
    Identity,
}

impl NecActivation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            NecActivation::Silu => silu(x),
            NecActivation::Identity => x,
        }
    }
    #[inline]
    fn grad<T: Scalar>(self, x: T) -> T {
        match self {
            NecActivation::Silu => silu_grad(x),
            NecActivation::Identity => T::one(),
        }
    }
}

/// Two-layer perceptron from the flattened ground spatial grid of one level
/// to the flattened satellite spatial grid, shared across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct NecLayer<T> {
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub hidden: usize,
    /// `hidden × in`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `out × hidden`, row-major.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub activation: NecActivation,
}

impl<T: Scalar> NecLayer<T> {
    pub fn zeros(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        let (n_in, n_out) = (in_hw.0 * in_hw.1, out_hw.0 * out_hw.1);
        let hidden = n_in.max(n_out);
        NecLayer {
            in_hw,
            out_hw,
            hidden,
            w1: vec![T::zero(); hidden * n_in],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); n_out * hidden],
            b2: vec![T::zero(); n_out],
            activation: NecActivation::Silu,
        }
    }

    pub fn init<R: Rng>(in_hw: (usize, usize), out_hw: (usize, usize), rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_hw, out_hw);
        let n_in = layer.in_dim();
        let b1 = num_traits::Float::sqrt(6.0 / n_in as f64);
        let b2 = num_traits::Float::sqrt(6.0 / layer.hidden as f64);
        let d1 = Uniform::new_inclusive(-b1, b1).expect("finite bound");
        let d2 = Uniform::new_inclusive(-b2, b2).expect("finite bound");
        for w in &mut layer.w1 {
            *w = T::cast(d1.sample(rng));
        }
        for w in &mut layer.w2 {
            *w = T::cast(d2.sample(rng));
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.in_hw.0 * self.in_hw.1
    }
    pub fn out_dim(&self) -> usize {
        self.out_hw.0 * self.out_hw.1
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.in_hw, self.out_hw);
        z.activation = self.activation;
        z
    }
}

/// One converter per encoder level.
#[derive(Debug, Clone, PartialEq)]
pub struct NecParams<T> {
    pub levels: Vec<NecLayer<T>>,
}

impl<T: Scalar> NecParams<T> {
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let levels = (1..=NUM_STAGES)
            .map(|level| {
                let (gh, gw, _) = config.stage_shape(ViewId::Ground, level);
                let (sh, sw, _) = config.stage_shape(ViewId::Satellite, level);
                let mut rng = seed::rng(seed, seed::tag::NEC + level as u64);
                NecLayer::init((gh, gw), (sh, sw), &mut rng)
            })
            .collect();
        NecParams { levels }
    }

    pub fn zeros_like(&self) -> Self {
        NecParams {
            levels: self.levels.iter().map(NecLayer::zeros_like).collect(),
        }
    }

    pub fn level(&self, level: usize) -> Result<&NecLayer<T>> {
        check_level(level)?;
        self.levels
            .get(level - 1)
            .ok_or_else(|| Error::config(format!("no converter parameters for level {level}")))
    }
}

/// Hidden pre- and post-activations of a converter pass, per channel.
#[derive(Debug, Clone)]
pub struct NecCache<T> {
    pre: Vec<T>,
    hidden: Vec<T>,
}

/// Maps a ground neural map into satellite space.
pub fn nec_forward<T: Scalar>(map_g: &ViewNeuralMap<T>, params: &NecParams<T>) -> Result<ViewNeuralMap<T>> {
    nec_forward_cached(map_g, params).map(|(m, _)| m)
}

pub fn nec_forward_cached<T: Scalar>(
    map_g: &ViewNeuralMap<T>,
    params: &NecParams<T>,
) -> Result<(ViewNeuralMap<T>, NecCache<T>)> {
    if map_g.view != ViewId::Ground {
        return Err(Error::config("converter input must be a ground-view map"));
    }
    let layer = params.level(map_g.level)?;
    let (h, w, c) = map_g.grid.shape();
    if (h, w) != layer.in_hw {
        return Err(Error::config(format!(
            "level {}: ground map {h}x{w} does not match converter input {:?}",
            map_g.level, layer.in_hw
        )));
    }
    let (n_in, n_hid, n_out) = (layer.in_dim(), layer.hidden, layer.out_dim());
    let mut pre = vec![T::zero(); c * n_hid];
    let mut hidden = vec![T::zero(); c * n_hid];
    let mut out = Grid::zeros(layer.out_hw.0, layer.out_hw.1, c);
    for ch in 0..c {
        let x = map_g.grid.channel(ch);
        let a = &mut pre[ch * n_hid..(ch + 1) * n_hid];
        let hv = &mut hidden[ch * n_hid..(ch + 1) * n_hid];
        for j in 0..n_hid {
            a[j] = layer.b1[j] + dot(&layer.w1[j * n_in..(j + 1) * n_in], &x);
            hv[j] = layer.activation.apply(a[j]);
        }
        let data = out.as_mut_slice();
        for o in 0..n_out {
            data[o * c + ch] = layer.b2[o] + dot(&layer.w2[o * n_hid..(o + 1) * n_hid], hv);
        }
    }
    if !out.is_finite() {
        return Err(Error::numeric(format!(
            "converter output at level {} is not finite",
            map_g.level
        )));
    }
    Ok((
        ViewNeuralMap {
            level: map_g.level,
            view: ViewId::Satellite,
            grid: out,
        },
        NecCache { pre, hidden },
    ))
}

/// Backward pass of [`nec_forward_cached`]: accumulates into `grads` and
/// returns the gradient with respect to the ground map.
pub fn nec_backward<T: Scalar>(
    map_g: &ViewNeuralMap<T>,
    cache: &NecCache<T>,
    d_out: &Grid<T>,
    layer: &NecLayer<T>,
    grads: &mut NecLayer<T>,
) -> Grid<T> {
    let (h, w, c) = map_g.grid.shape();
    let (n_in, n_hid, n_out) = (layer.in_dim(), layer.hidden, layer.out_dim());
    let mut d_in = Grid::zeros(h, w, c);
    let mut dh = vec![T::zero(); n_hid];
    let mut dx = vec![T::zero(); n_in];
    for ch in 0..c {
        let x = map_g.grid.channel(ch);
        let a = &cache.pre[ch * n_hid..(ch + 1) * n_hid];
        let hv = &cache.hidden[ch * n_hid..(ch + 1) * n_hid];
        let dy = d_out.channel(ch);
        dh.fill(T::zero());
        for o in 0..n_out {
            let g = dy[o];
            if g == T::zero() {
                continue;
            }
            grads.b2[o] = grads.b2[o] + g;
            axpy(g, hv, &mut grads.w2[o * n_hid..(o + 1) * n_hid]);
            axpy(g, &layer.w2[o * n_hid..(o + 1) * n_hid], &mut dh);
        }
        dx.fill(T::zero());
        for j in 0..n_hid {
            let g = dh[j] * layer.activation.grad(a[j]);
            if g == T::zero() {
                continue;
            }
            grads.b1[j] = grads.b1[j] + g;
            axpy(g, &x, &mut grads.w1[j * n_in..(j + 1) * n_in]);
            axpy(g, &layer.w1[j * n_in..(j + 1) * n_in], &mut dx);
        }
        let data = d_in.as_mut_slice();
        for (i, v) in dx.iter().enumerate() {
            data[i * c + ch] = *v;
        }
    }
    d_in
}

/// Per-channel softmax over spatial positions, optionally after dividing
/// each channel slice by its ℓ2 norm.
pub fn spatial_softmax<T: Scalar>(input: &Grid<T>, l2: bool) -> Grid<T> {
    let (h, w, c) = input.shape();
    let n = h * w;
    let src = input.as_slice();
    let mut out = Grid::zeros(h, w, c);
    let dst = out.as_mut_slice();
    let eps = T::cast(NORM_EPS);
    for ch in 0..c {
        let scale = if l2 {
            let norm = (0..n).map(|i| src[i * c + ch] * src[i * c + ch]).sum::<T>().sqrt();
            if norm < eps {
                T::one()
            } else {
                T::one() / norm
            }
        } else {
            T::one()
        };
        let mut max = T::neg_infinity();
        for i in 0..n {
            max = max.max(src[i * c + ch] * scale);
        }
        let mut total = T::zero();
        for i in 0..n {
            let e = (src[i * c + ch] * scale - max).exp();
            dst[i * c + ch] = e;
            total = total + e;
        }
        for i in 0..n {
            dst[i * c + ch] = dst[i * c + ch] / total;
        }
    }
    out
}

/// Gradient of [`spatial_softmax`] with respect to its input, given the
/// forward output `probs`.
pub fn spatial_softmax_backward<T: Scalar>(input: &Grid<T>, probs: &Grid<T>, d_out: &Grid<T>, l2: bool) -> Grid<T> {
    let (h, w, c) = input.shape();
    let n = h * w;
    let x = input.as_slice();
    let p = probs.as_slice();
    let g = d_out.as_slice();
    let mut d_in = Grid::zeros(h, w, c);
    let dx = d_in.as_mut_slice();
    let eps = T::cast(NORM_EPS);
    let mut dz = vec![T::zero(); n];
    for ch in 0..c {
        let inner: T = (0..n).map(|i| p[i * c + ch] * g[i * c + ch]).sum();
        for i in 0..n {
            dz[i] = p[i * c + ch] * (g[i * c + ch] - inner);
        }
        let norm = if l2 {
            (0..n).map(|i| x[i * c + ch] * x[i * c + ch]).sum::<T>().sqrt()
        } else {
            T::zero()
        };
        if l2 && norm >= eps {
            // d(x/|x|) = (dz - u (u·dz)) / |x| with u = x/|x|
            let u_dot: T = (0..n).map(|i| x[i * c + ch] * dz[i]).sum::<T>() / norm;
            for i in 0..n {
                let u = x[i * c + ch] / norm;
                dx[i * c + ch] = (dz[i] - u * u_dot) / norm;
            }
        } else {
            for i in 0..n {
                dx[i * c + ch] = dz[i];
            }
        }
    }
    d_in
}

/// ℓ2-then-softmax normalization of a neural map, per channel.
pub fn normalize_map<T: Scalar>(map: &ViewNeuralMap<T>) -> Result<NormalizedMap<T>> {
    if !map.grid.is_finite() {
        return Err(Error::numeric(format!(
            "{} map at level {} has non-finite entries",
            map.view, map.level
        )));
    }
    Ok(NormalizedMap(spatial_softmax(&map.grid, true)))
}

/// `f ⊙ normalize_map(map) + f`.
pub fn gfr<T: Scalar>(f: &FeatureGrid<T>, map: &ViewNeuralMap<T>) -> Result<FeatureGrid<T>> {
    if f.grid.shape() != map.grid.shape() || f.level != map.level || f.view != map.view {
        return Err(Error::config(format!(
            "recalibration at level {} ({}): features {:?} vs {} map level {} {:?}",
            f.level,
            f.view,
            f.grid.shape(),
            map.view,
            map.level,
            map.grid.shape()
        )));
    }
    let weight = normalize_map(map)?;
    Ok(FeatureGrid {
        level: f.level,
        view: f.view,
        grid: weighted_residual(&f.grid, weight.grid()),
    })
}

/// `f ⊙ w + f`
pub fn weighted_residual<T: Scalar>(f: &Grid<T>, w: &Grid<T>) -> Grid<T> {
    let mut out = f.clone();
    for (o, wv) in out.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *o = *o * *wv + *o;
    }
    out
}

/// `f ⊙ w`
pub fn weighted<T: Scalar>(f: &Grid<T>, w: &Grid<T>) -> Grid<T> {
    let mut out = f.clone();
    for (o, wv) in out.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *o = *o * *wv;
    }
    out
}

/// Gradients of `f ⊙ w (+ f)` with respect to `f` and `w`.
pub fn weighted_backward<T: Scalar>(f: &Grid<T>, w: &Grid<T>, d_out: &Grid<T>, residual: bool) -> (Grid<T>, Grid<T>) {
    let mut d_f = d_out.clone();
    let mut d_w = d_out.clone();
    let one = if residual { T::one() } else { T::zero() };
    for ((df, dw), (fv, wv)) in d_f
        .as_mut_slice()
        .iter_mut()
        .zip(d_w.as_mut_slice())
        .zip(f.as_slice().iter().zip(w.as_slice()))
    {
        let g = *df;
        *df = g * (*wv + one);
        *dw = g * *fv;
    }
    (d_f, d_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(level: usize, view: ViewId, grid: Grid<f64>) -> ViewNeuralMap<f64> {
        ViewNeuralMap { level, view, grid }
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let cfg = EncoderConfig::default();
        let shape = cfg.stage_shape(ViewId::Ground, 1);
        assert_eq!(shape, (16, 64, 16));
        let a = init_neural_map::<f32>(&cfg, 1, ViewId::Ground, shape, 0).unwrap();
        let b = init_neural_map::<f32>(&cfg, 1, ViewId::Ground, shape, 0).unwrap();
        let c = init_neural_map::<f32>(&cfg, 1, ViewId::Ground, shape, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.grid, c.grid);
        assert_eq!(a.grid.shape(), (16, 64, 16));
        assert!(a.grid.as_slice().iter().all(|v| v.abs() <= 0.01));
    }

    #[test]
    fn init_rejects_wrong_shape() {
        let cfg = EncoderConfig::default();
        assert!(matches!(
            init_neural_map::<f32>(&cfg, 1, ViewId::Ground, (16, 32, 16), 0),
            Err(Error::Config(_))
        ));
        assert!(init_neural_map::<f32>(&cfg, 5, ViewId::Ground, (1, 4, 128), 0).is_err());
    }

    #[test]
    fn zero_converter_outputs_zero() {
        let layer = NecLayer::<f64>::zeros((2, 4), (3, 3));
        let params = NecParams {
            levels: vec![layer.clone(), layer.clone(), layer.clone(), layer],
        };
        let g = map(
            2,
            ViewId::Ground,
            Grid::from_fn(2, 4, 3, |y, x, c| (y + x + c) as f64 - 2.5),
        );
        let s = nec_forward(&g, &params).unwrap();
        assert_eq!(s.grid.shape(), (3, 3, 3));
        assert_eq!(s.view, ViewId::Satellite);
        assert!(s.grid.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_level_one_converter_shape() {
        let cfg = EncoderConfig::default();
        let params = NecParams::<f32>::init(&cfg, 0);
        let g = init_neural_map::<f32>(&cfg, 1, ViewId::Ground, (16, 64, 16), 0).unwrap();
        let s = nec_forward(&g, &params).unwrap();
        assert_eq!(s.grid.shape(), (32, 32, 16));
    }

    #[test]
    fn identity_converter_is_matrix_product() {
        // ground map 1x2x1 = [a, b]; w1 = I, w2 = [[1, 2], [3, 4]], b2 = [0.5, -1]
        let mut layer = NecLayer::<f64>::zeros((1, 2), (1, 2));
        layer.activation = NecActivation::Identity;
        layer.w1 = vec![1.0, 0.0, 0.0, 1.0];
        layer.w2 = vec![1.0, 2.0, 3.0, 4.0];
        layer.b2 = vec![0.5, -1.0];
        let params = NecParams {
            levels: vec![layer.clone(), layer.clone(), layer.clone(), layer],
        };
        let g = map(1, ViewId::Ground, Grid::from_vec(1, 2, 1, vec![0.3, -0.7]).unwrap());
        let s = nec_forward(&g, &params).unwrap();
        // [1 2; 3 4] [0.3, -0.7] + [0.5, -1] = [-1.1 + 0.5, -1.9 - 1]
        assert!((s.grid.as_slice()[0] - (-0.6)).abs() < 1e-12);
        assert!((s.grid.as_slice()[1] - (-2.9)).abs() < 1e-12);
    }

    #[test]
    fn converter_rejects_missing_level_and_satellite_input() {
        let params = NecParams::<f64> {
            levels: vec![NecLayer::zeros((1, 2), (1, 2))],
        };
        let g = map(3, ViewId::Ground, Grid::zeros(1, 2, 1));
        assert!(matches!(nec_forward(&g, &params), Err(Error::Config(_))));
        let s = map(1, ViewId::Satellite, Grid::zeros(1, 2, 1));
        assert!(matches!(nec_forward(&s, &params), Err(Error::Config(_))));
    }

    #[test]
    fn constant_slice_normalizes_to_uniform() {
        for v in [0.0, 1.0, -3.5, 1e-20] {
            let m = map(1, ViewId::Ground, Grid::filled(2, 2, 1, v));
            let n = normalize_map(&m).unwrap();
            for &p in n.grid().as_slice() {
                assert!((p - 0.25).abs() < 1e-15, "v = {v}: {p}");
            }
        }
    }

    #[test]
    fn one_to_four_slice_matches_reference() {
        // softmax([1,2,3,4] / sqrt(30)), evaluated with mpmath at 30 digits
        let expected = [
            0.186_207_912_351_586_13,
            0.223_505_951_784_548_56,
            0.268_274_907_613_996_61,
            0.322_011_228_249_868_70,
        ];
        let m = map(
            1,
            ViewId::Ground,
            Grid::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let n = normalize_map(&m).unwrap();
        for (p, e) in n.grid().as_slice().iter().zip(expected) {
            assert!((p - e).abs() < 1e-15, "{p} vs {e}");
        }
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let m = map(1, ViewId::Ground, Grid::from_vec(1, 2, 1, vec![1.0, f64::NAN]).unwrap());
        assert!(matches!(normalize_map(&m), Err(Error::Numeric(_))));
    }

    #[test]
    fn gfr_uniform_map_scales_by_five_quarters() {
        let f = FeatureGrid {
            level: 1,
            view: ViewId::Ground,
            grid: Grid::from_fn(2, 2, 3, |y, x, c| (y * 2 + x) as f64 * 0.7 - c as f64),
        };
        let m = map(1, ViewId::Ground, Grid::filled(2, 2, 3, 0.3));
        let out = gfr(&f, &m).unwrap();
        for (o, i) in out.grid.as_slice().iter().zip(f.grid.as_slice()) {
            assert_eq!(*o, 1.25 * i);
        }
    }

    #[test]
    fn gfr_zero_features_stay_zero() {
        let f = FeatureGrid {
            level: 2,
            view: ViewId::Satellite,
            grid: Grid::<f64>::zeros(3, 3, 2),
        };
        let m = map(
            2,
            ViewId::Satellite,
            Grid::from_fn(3, 3, 2, |y, x, c| (y * x + c) as f64),
        );
        assert!(gfr(&f, &m).unwrap().grid.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gfr_shape_mismatch_names_level_and_view() {
        let f = FeatureGrid {
            level: 3,
            view: ViewId::Satellite,
            grid: Grid::<f64>::zeros(2, 2, 2),
        };
        let m = map(3, ViewId::Satellite, Grid::zeros(2, 3, 2));
        match gfr(&f, &m) {
            Err(Error::Config(msg)) => assert!(msg.contains("level 3") && msg.contains("satellite"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
