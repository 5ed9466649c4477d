//! Two-branch model: encoder stages interleaved with map-guided
//! recalibration, pooled into a unit-norm embedding.
//!
//! At every level `i` the stage output `f^i` is recalibrated into `f'^i`
//! and `f'^i` is what feeds stage `i + 1`. The embedding is the ℓ2-normalized
//! global average of `f'^4`. Images are shifted by `-0.5` before stage 1,
//! and ground-branch convolutions wrap around horizontally since panoramas
//! are periodic in azimuth.
//!
//! Forward passes record a [`ViewTrace`]; [`Model::backward_view`] consumes it.
//! Map-derived weights are computed once per parameter state in a
//! [`MapState`] and shared by every sample of a batch, so their gradients are
//! accumulated per sample and pushed through the normalization and the
//! converter once, in [`Model::backward_maps`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::correspondence::{
    nec_backward, nec_forward_cached, spatial_softmax, spatial_softmax_backward, weighted, weighted_backward,
    weighted_residual, NecCache, NecParams, ViewNeuralMap,
};
use crate::encoder::{
    stage_backward, stage_forward, BranchParams, EncoderConfig, Padding, StageCache, WeightSharing, NUM_STAGES,
};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Grid, ImageTensor, ViewId};
use crate::preset::{AblationPreset, ResidualSource};
use crate::scalar::Scalar;
use crate::seed;

/// Subtracted from every pixel before the first stage.
pub const INPUT_SHIFT: f64 = 0.5;

/// Pooled norms below this are rejected as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub preset: AblationPreset,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()
    }
}

/// Unit-ℓ2-norm image descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T>(pub Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn norm(&self) -> T {
        self.0.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }
}

/// Refined grids of levels 1..=4.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    pub grids: Vec<FeatureGrid<T>>,
}

/// Channel-wise global average pool followed by ℓ2 normalization.
pub fn pool_and_normalize<T: Scalar>(grid: &Grid<T>) -> Result<Embedding<T>> {
    pool_and_normalize_parts(grid).map(|(e, _)| e)
}

fn pool_and_normalize_parts<T: Scalar>(grid: &Grid<T>) -> Result<(Embedding<T>, T)> {
    if !grid.is_finite() {
        return Err(Error::numeric("cannot pool a non-finite grid"));
    }
    let (h, w, c) = grid.shape();
    let mut pooled = vec![T::zero(); c];
    for px in grid.as_slice().chunks_exact(c) {
        for (p, v) in pooled.iter_mut().zip(px) {
            *p = *p + *v;
        }
    }
    let inv = T::one() / T::cast((h * w) as f64);
    for p in &mut pooled {
        *p = *p * inv;
    }
    let norm = pooled.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if !(norm.widen() >= DEGENERATE_NORM) {
        return Err(Error::DegenerateEmbedding { norm: norm.widen() });
    }
    for p in &mut pooled {
        *p = *p / norm;
    }
    Ok((Embedding(pooled), norm))
}

/// Gradient of [`pool_and_normalize`] with respect to its input grid.
fn pool_and_normalize_backward<T: Scalar>(
    shape: (usize, usize, usize),
    embedding: &Embedding<T>,
    pooled_norm: T,
    d_embedding: &[T],
) -> Grid<T> {
    let (h, w, c) = shape;
    let e = embedding.as_slice();
    let proj: T = e.iter().zip(d_embedding).map(|(a, b)| *a * *b).sum();
    let scale = T::one() / (pooled_norm * T::cast((h * w) as f64));
    let d_pool: Vec<T> = e
        .iter()
        .zip(d_embedding)
        .map(|(ev, dv)| (*dv - *ev * proj) * scale)
        .collect();
    let mut out = Grid::zeros(h, w, c);
    for px in out.as_mut_slice().chunks_exact_mut(c) {
        px.copy_from_slice(&d_pool);
    }
    out
}

/// All learnable tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub ground: BranchParams<T>,
    /// `None` when branches share weights.
    pub satellite: Option<BranchParams<T>>,
    /// Ground-view neural maps, levels 1..=4.
    pub ground_maps: Vec<Grid<T>>,
    /// Free satellite maps; only present when the converter is disabled.
    pub satellite_maps: Option<Vec<Grid<T>>>,
    /// Present when the converter is enabled.
    pub nec: Option<NecParams<T>>,
}

/// Name, shape and data of one parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug)]
pub struct TensorMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

macro_rules! visit_params {
    ($self:ident, $f:ident, [$($mut_:tt)?], $iter:ident, $as_opt:ident, $slice:ident) => {{
        let branches: [(&str, Option<& $($mut_)? BranchParams<T>>); 2] = match $self.satellite.as_ref() {
            Some(_) => [("ground", Some(& $($mut_)? $self.ground)), ("satellite", $self.satellite.$as_opt())],
            None => [("shared", Some(& $($mut_)? $self.ground)), ("satellite", None)],
        };
        for (label, branch) in branches {
            let Some(branch) = branch else { continue };
            for (i, stage) in branch.stages.$iter().enumerate() {
                let shape = stage.weight_shape().to_vec();
                let cout = stage.cout;
                $f(format!("encoder.{label}.stage{}.weight", i + 1), shape, & $($mut_)? stage.weight[..]);
                $f(format!("encoder.{label}.stage{}.bias", i + 1), vec![cout], & $($mut_)? stage.bias[..]);
            }
        }
        for (i, g) in $self.ground_maps.$iter().enumerate() {
            let (h, w, c) = g.shape();
            $f(format!("maps.ground.level{}", i + 1), vec![h, w, c], g.$slice());
        }
        if let Some(maps) = $self.satellite_maps.$as_opt() {
            for (i, g) in maps.$iter().enumerate() {
                let (h, w, c) = g.shape();
                $f(format!("maps.satellite.level{}", i + 1), vec![h, w, c], g.$slice());
            }
        }
        if let Some(nec) = $self.nec.$as_opt() {
            for (i, l) in nec.levels.$iter().enumerate() {
                let (n_in, n_hid, n_out) = (l.in_dim(), l.hidden, l.out_dim());
                $f(format!("nec.level{}.w1", i + 1), vec![n_hid, n_in], & $($mut_)? l.w1[..]);
                $f(format!("nec.level{}.b1", i + 1), vec![n_hid], & $($mut_)? l.b1[..]);
                $f(format!("nec.level{}.w2", i + 1), vec![n_out, n_hid], & $($mut_)? l.w2[..]);
                $f(format!("nec.level{}.b2", i + 1), vec![n_out], & $($mut_)? l.b2[..]);
            }
        }
    }};
}

impl<T: Scalar> Params<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder;
        let ground = BranchParams::init(enc, &mut seed::rng(seed, seed::tag::ENCODER_GROUND));
        let satellite = match enc.weight_sharing {
            WeightSharing::Separate => Some(BranchParams::init(
                enc,
                &mut seed::rng(seed, seed::tag::ENCODER_SATELLITE),
            )),
            WeightSharing::Shared => None,
        };
        let mut ground_maps = Vec::with_capacity(NUM_STAGES);
        for level in 1..=NUM_STAGES {
            let shape = enc.stage_shape(ViewId::Ground, level);
            let m = crate::correspondence::init_neural_map(enc, level, ViewId::Ground, shape, seed)?;
            ground_maps.push(m.grid);
        }
        let center = T::cast(crate::correspondence::RAW_MAP_INIT_CENTER);
        let raw = config.preset.multiplies_raw_map();
        if raw {
            ground_maps.iter_mut().for_each(|m| *m = m.map(|v| v + center));
        }
        let (satellite_maps, nec) = if config.preset.use_nec {
            let mut nec = NecParams::init(enc, seed);
            if raw {
                nec.levels
                    .iter_mut()
                    .for_each(|l| l.b2.iter_mut().for_each(|b| *b = center));
            }
            (None, Some(nec))
        } else {
            let mut maps = Vec::with_capacity(NUM_STAGES);
            for level in 1..=NUM_STAGES {
                let shape = enc.stage_shape(ViewId::Satellite, level);
                let m = crate::correspondence::init_neural_map(enc, level, ViewId::Satellite, shape, seed)?;
                maps.push(if raw { m.grid.map(|v| v + center) } else { m.grid });
            }
            (Some(maps), None)
        };
        Ok(Params {
            ground,
            satellite,
            ground_maps,
            satellite_maps,
            nec,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            ground: self.ground.zeros_like(),
            satellite: self.satellite.as_ref().map(BranchParams::zeros_like),
            ground_maps: self.ground_maps.iter().map(Grid::zeros_like).collect(),
            satellite_maps: self
                .satellite_maps
                .as_ref()
                .map(|m| m.iter().map(Grid::zeros_like).collect()),
            nec: self.nec.as_ref().map(NecParams::zeros_like),
        }
    }

    /// Every tensor in a fixed order with a stable name.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name, shape, data| out.push(TensorRef { name, shape, data });
        visit_params!(self, push, [], iter, as_ref, as_slice);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name, shape, data| out.push(TensorMut { name, shape, data });
        visit_params!(self, push, [mut], iter_mut, as_mut, as_mut_slice);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn branch(&self, view: ViewId) -> &BranchParams<T> {
        match (view, &self.satellite) {
            (ViewId::Satellite, Some(s)) => s,
            _ => &self.ground,
        }
    }

    pub fn branch_mut(&mut self, view: ViewId) -> &mut BranchParams<T> {
        match (view, &mut self.satellite) {
            (ViewId::Satellite, Some(s)) => s,
            _ => &mut self.ground,
        }
    }

    /// Elementwise `self += other`; both must have the same layout.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x = *x + *y;
            }
        }
    }
}

/// Neural maps and recalibration weights for the current parameter state.
#[derive(Debug, Clone)]
pub struct MapState<T> {
    preset: AblationPreset,
    /// Raw maps per view, levels 1..=4. Satellite maps are converter outputs
    /// unless the converter is disabled. Empty when no map is used.
    raw: [Vec<Grid<T>>; 2],
    /// Recalibration weight per view and level when it is map-derived.
    weights: [Vec<Option<Grid<T>>>; 2],
    nec_caches: Vec<NecCache<T>>,
}

impl<T: Scalar> MapState<T> {
    /// Weight applied to level `level` features of `view`, if map-derived.
    pub fn weight(&self, view: ViewId, level: usize) -> Option<&Grid<T>> {
        self.weights[view as usize].get(level - 1)?.as_ref()
    }

    /// The raw neural map of `view` at `level`.
    pub fn raw_map(&self, view: ViewId, level: usize) -> Option<&Grid<T>> {
        self.raw[view as usize].get(level - 1)
    }
}

/// Gradients with respect to the map-derived recalibration weights.
#[derive(Debug, Clone)]
pub struct WeightGrads<T> {
    grads: [Vec<Option<Grid<T>>>; 2],
}

impl<T: Scalar> WeightGrads<T> {
    pub fn zeros(maps: &MapState<T>) -> Self {
        let mk = |v: usize| {
            maps.weights[v]
                .iter()
                .map(|w| w.as_ref().map(Grid::zeros_like))
                .collect()
        };
        WeightGrads { grads: [mk(0), mk(1)] }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for v in 0..2 {
            for (a, b) in self.grads[v].iter_mut().zip(&other.grads[v]) {
                if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                    a.add_assign(b);
                }
            }
        }
    }

    fn slot(&mut self, view: ViewId, level: usize) -> Option<&mut Grid<T>> {
        self.grads[view as usize].get_mut(level - 1)?.as_mut()
    }
}

/// Saved activations of one level.
#[derive(Debug, Clone)]
struct LevelTrace<T> {
    input: Grid<T>,
    cache: StageCache<T>,
    features: Grid<T>,
    /// Feature-derived weight (feature-map residual source only).
    feature_weight: Option<Grid<T>>,
}

/// Record of one forward pass of one image.
#[derive(Debug, Clone)]
pub struct ViewTrace<T> {
    pub view: ViewId,
    levels: Vec<LevelTrace<T>>,
    refined: Vec<Grid<T>>,
    pooled_norm: T,
    pub embedding: Embedding<T>,
}

impl<T: Scalar> ViewTrace<T> {
    pub fn pyramid(&self) -> FeaturePyramid<T> {
        FeaturePyramid {
            grids: self
                .refined
                .iter()
                .enumerate()
                .map(|(i, g)| FeatureGrid {
                    level: i + 1,
                    view: self.view,
                    grid: g.clone(),
                })
                .collect(),
        }
    }

    /// Raw stage outputs `f^i` before recalibration.
    pub fn stage_outputs(&self) -> Vec<&Grid<T>> {
        self.levels.iter().map(|l| &l.features).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Params::init(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Checks that `params` has the layout `config` implies.
    pub fn from_parts(config: ModelConfig, params: Params<T>) -> Result<Self> {
        let reference = Params::<T>::init(&config, 0)?;
        let expected: Vec<_> = reference.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        let actual: Vec<_> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if expected != actual {
            return Err(Error::config("parameter layout does not match the model configuration"));
        }
        Ok(Model { config, params })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.encoder.embedding_dim()
    }

    /// Computes satellite maps (through the converter when enabled) and the
    /// recalibration weights of every level.
    pub fn prepare_maps(&self) -> Result<MapState<T>> {
        let preset = self.config.preset;
        let p = &self.params;
        if p.ground_maps.len() != NUM_STAGES {
            return Err(Error::config(format!(
                "expected {NUM_STAGES} ground maps, found {}",
                p.ground_maps.len()
            )));
        }
        let mut state = MapState {
            preset,
            raw: [Vec::new(), Vec::new()],
            weights: [vec![None; NUM_STAGES], vec![None; NUM_STAGES]],
            nec_caches: Vec::new(),
        };
        if !preset.uses_neural_maps() {
            return Ok(state);
        }
        for (level, g) in p.ground_maps.iter().enumerate() {
            let level = level + 1;
            let expected = self.config.encoder.stage_shape(ViewId::Ground, level);
            if g.shape() != expected {
                return Err(Error::config(format!(
                    "ground map level {level}: shape {:?} != feature shape {expected:?}",
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::numeric(format!("ground map level {level} is not finite")));
            }
            state.raw[0].push(g.clone());
            let sat = match (&p.nec, &p.satellite_maps) {
                (Some(nec), _) => {
                    let gm = ViewNeuralMap {
                        level,
                        view: ViewId::Ground,
                        grid: g.clone(),
                    };
                    let (s, cache) = nec_forward_cached(&gm, nec)?;
                    state.nec_caches.push(cache);
                    s.grid
                }
                (None, Some(maps)) => maps
                    .get(level - 1)
                    .cloned()
                    .ok_or_else(|| Error::config(format!("missing satellite map for level {level}")))?,
                (None, None) => {
                    return Err(Error::config(
                        "satellite maps need either the converter or free satellite parameters",
                    ))
                }
            };
            let expected = self.config.encoder.stage_shape(ViewId::Satellite, level);
            if sat.shape() != expected {
                return Err(Error::config(format!(
                    "satellite map level {level}: shape {:?} != feature shape {expected:?}",
                    sat.shape()
                )));
            }
            state.raw[1].push(sat);
        }
        for v in 0..2 {
            for level in 0..NUM_STAGES {
                let raw = &state.raw[v][level];
                state.weights[v][level] = Some(match preset.gfr_residual_source {
                    None if preset.use_norm => spatial_softmax(raw, true),
                    None => raw.clone(),
                    Some(_) => spatial_softmax(raw, preset.use_norm),
                });
            }
        }
        Ok(state)
    }

    /// Recalibrates stage output `f` of `view` at `level`.
    fn refine(
        &self,
        maps: &MapState<T>,
        view: ViewId,
        level: usize,
        f: &Grid<T>,
    ) -> Result<(Grid<T>, Option<Grid<T>>)> {
        let preset = self.config.preset;
        if !preset.use_gfr {
            return Ok((f.clone(), None));
        }
        if preset.gfr_residual_source == Some(ResidualSource::FeatureMap) {
            let w = spatial_softmax(f, preset.use_norm);
            return Ok((weighted_residual(f, &w), Some(w)));
        }
        let w = maps
            .weight(view, level)
            .ok_or_else(|| Error::config(format!("missing {view} neural map for level {level}")))?;
        if w.shape() != f.shape() {
            return Err(Error::config(format!(
                "level {level} ({view}): map shape {:?} != feature shape {:?}",
                w.shape(),
                f.shape()
            )));
        }
        let out = if preset.gfr_residual_source.is_some() {
            weighted_residual(f, w)
        } else {
            weighted(f, w)
        };
        Ok((out, None))
    }

    /// Full forward pass of one image through `view`'s branch.
    pub fn forward_traced(&self, image: &Grid<T>, view: ViewId, maps: &MapState<T>) -> Result<ViewTrace<T>> {
        let (h, w) = self.config.encoder.input_hw(view);
        if image.shape() != (h, w, 3) {
            return Err(Error::config(format!(
                "{view} image {:?} does not match configured {h}x{w}x3",
                image.shape()
            )));
        }
        let branch = self.params.branch(view);
        let mut levels = Vec::with_capacity(NUM_STAGES);
        let mut refined = Vec::with_capacity(NUM_STAGES);
        let shift = T::cast(INPUT_SHIFT);
        let mut x = image.map(|v| v - shift);
        for (i, stage) in branch.stages.iter().enumerate() {
            let (features, cache) = stage_forward(&x, stage, Padding::for_view(view))?;
            let (r, feature_weight) = self.refine(maps, view, i + 1, &features)?;
            if !r.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite refined features at level {} ({view})",
                    i + 1
                )));
            }
            levels.push(LevelTrace {
                input: x,
                cache,
                features,
                feature_weight,
            });
            x = r.clone();
            refined.push(r);
        }
        let (embedding, pooled_norm) = pool_and_normalize_parts(&x)?;
        Ok(ViewTrace {
            view,
            levels,
            refined,
            pooled_norm,
            embedding,
        })
    }

    /// Refined pyramid and embedding of one image.
    pub fn forward_view(
        &self,
        image: &ImageTensor,
        view: ViewId,
        maps: &MapState<T>,
    ) -> Result<(FeaturePyramid<T>, Embedding<T>)> {
        let trace = self.forward_traced(&image.grid().convert(), view, maps)?;
        Ok((trace.pyramid(), trace.embedding))
    }

    pub fn embed(&self, image: &ImageTensor, view: ViewId, maps: &MapState<T>) -> Result<Embedding<T>> {
        Ok(self.forward_traced(&image.grid().convert(), view, maps)?.embedding)
    }

    /// Backpropagates `d_embedding` through one recorded pass. Branch
    /// gradients are added to `branch_grads`, gradients of the map-derived
    /// weights to `weight_grads`.
    pub fn backward_view(
        &self,
        trace: &ViewTrace<T>,
        maps: &MapState<T>,
        d_embedding: &[T],
        branch_grads: &mut BranchParams<T>,
        weight_grads: &mut WeightGrads<T>,
    ) {
        let preset = self.config.preset;
        let branch = self.params.branch(trace.view);
        let last = &trace.refined[NUM_STAGES - 1];
        let mut d_refined = pool_and_normalize_backward(last.shape(), &trace.embedding, trace.pooled_norm, d_embedding);
        for i in (0..NUM_STAGES).rev() {
            let lt = &trace.levels[i];
            let level = i + 1;
            let d_features = if !preset.use_gfr {
                d_refined
            } else if let Some(w) = lt.feature_weight.as_ref() {
                let (mut d_f, d_w) = weighted_backward(&lt.features, w, &d_refined, true);
                d_f.add_assign(&spatial_softmax_backward(&lt.features, w, &d_w, preset.use_norm));
                d_f
            } else {
                let w = maps.weight(trace.view, level).expect("weight checked in forward");
                let residual = preset.gfr_residual_source.is_some();
                let (d_f, d_w) = weighted_backward(&lt.features, w, &d_refined, residual);
                if let Some(slot) = weight_grads.slot(trace.view, level) {
                    slot.add_assign(&d_w);
                }
                d_f
            };
            let d_input = stage_backward(
                &lt.input,
                &lt.cache,
                &d_features,
                &branch.stages[i],
                Padding::for_view(trace.view),
                &mut branch_grads.stages[i],
                i > 0,
            );
            match d_input {
                Some(d) => d_refined = d,
                None => break,
            }
        }
    }

    /// Pushes accumulated weight gradients through the map normalization and
    /// the converter into the ground maps, converter and free satellite maps.
    pub fn backward_maps(&self, maps: &MapState<T>, weight_grads: &WeightGrads<T>, grads: &mut Params<T>) {
        let preset = maps.preset;
        if !preset.uses_neural_maps() {
            return;
        }
        for level in 1..=NUM_STAGES {
            let mut d_raw: [Option<Grid<T>>; 2] = [None, None];
            for view in ViewId::BOTH {
                let v = view as usize;
                let (Some(dw), Some(w)) = (
                    weight_grads.grads[v].get(level - 1).and_then(Option::as_ref),
                    maps.weight(view, level),
                ) else {
                    continue;
                };
                let raw = &maps.raw[v][level - 1];
                d_raw[v] = Some(match preset.gfr_residual_source {
                    None if !preset.use_norm => dw.clone(),
                    None => spatial_softmax_backward(raw, w, dw, true),
                    Some(_) => spatial_softmax_backward(raw, w, dw, preset.use_norm),
                });
            }
            if let Some(d) = d_raw[0].take() {
                grads.ground_maps[level - 1].add_assign(&d);
            }
            if let Some(d_sat) = d_raw[1].take() {
                match (&self.params.nec, grads.nec.as_mut(), grads.satellite_maps.as_mut()) {
                    (Some(nec), Some(nec_grads), _) => {
                        let gm = ViewNeuralMap {
                            level,
                            view: ViewId::Ground,
                            grid: maps.raw[0][level - 1].clone(),
                        };
                        let d_ground = nec_backward(
                            &gm,
                            &maps.nec_caches[level - 1],
                            &d_sat,
                            &nec.levels[level - 1],
                            &mut nec_grads.levels[level - 1],
                        );
                        grads.ground_maps[level - 1].add_assign(&d_ground);
                    }
                    (_, _, Some(sat_grads)) => sat_grads[level - 1].add_assign(&d_sat),
                    _ => {}
                }
            }
        }
    }

    /// Satellite map of `level` as the model currently produces it.
    pub fn satellite_map(&self, level: usize) -> Result<ViewNeuralMap<T>> {
        if !(1..=NUM_STAGES).contains(&level) {
            return Err(Error::config(format!("level {level} out of range 1..=4")));
        }
        let grid = match (&self.params.nec, &self.params.satellite_maps) {
            (Some(nec), _) => {
                let gm = ViewNeuralMap {
                    level,
                    view: ViewId::Ground,
                    grid: self.params.ground_maps[level - 1].clone(),
                };
                crate::correspondence::nec_forward(&gm, nec)?.grid
            }
            (None, Some(maps)) => maps[level - 1].clone(),
            (None, None) => return Err(Error::config("model has no satellite maps")),
        };
        Ok(ViewNeuralMap {
            level,
            view: ViewId::Satellite,
            grid,
        })
    }

    pub fn ground_map(&self, level: usize) -> Result<ViewNeuralMap<T>> {
        let grid = self
            .params
            .ground_maps
            .get(level.wrapping_sub(1))
            .ok_or_else(|| Error::config(format!("level {level} out of range 1..=4")))?
            .clone();
        Ok(ViewNeuralMap {
            level,
            view: ViewId::Ground,
            grid,
        })
    }
}
