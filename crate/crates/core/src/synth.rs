//! Deterministic synthetic cross-view pairs.
//!
//! A scene is a flat world with cylindrical landmarks (six color classes) and
//! straight roads. The satellite image is an orthographic north-up raster of
//! the scene; the ground image is a 360° panorama ray cast from a camera
//! standing 2 m above the ground. Panorama column `c` looks along bearing
//! `θ = 2π·c/W`, measured clockwise from north, so a landmark due north lands
//! in column 0 and one due east in column `W/4`. Ground pixels below the
//! horizon sample the same ground texture the satellite raster shows.
//!
//! Every scene, record and augmentation is a pure function of
//! `(dataset seed, split, index)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Grid, ImageTensor};
use crate::seed;

/// Roof/wall colors of the landmark classes.
pub const PALETTE: [[f32; 3]; 12] = [
    [0.90, 0.12, 0.10],
    [0.12, 0.25, 0.90],
    [0.95, 0.88, 0.12],
    [0.72, 0.15, 0.78],
    [0.08, 0.78, 0.82],
    [0.98, 0.55, 0.08],
    [0.98, 0.98, 0.98],
    [0.05, 0.05, 0.05],
    [0.55, 0.30, 0.10],
    [0.98, 0.60, 0.75],
    [0.50, 0.92, 0.20],
    [0.10, 0.45, 0.40],
];
pub const GRASS: [f32; 3] = [0.32, 0.45, 0.26];
pub const ROAD: [f32; 3] = [0.50, 0.50, 0.52];
pub const SKY: [f32; 3] = [0.70, 0.82, 0.96];
/// Camera height above ground, meters.
pub const CAMERA_HEIGHT: f64 = 2.0;
/// Half of the panorama's vertical field of view, radians (45°).
pub const HALF_VFOV: f64 = core::f64::consts::FRAC_PI_4;

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    /// Meters east of the world origin.
    pub x: f64,
    /// Meters north of the world origin.
    pub y: f64,
    pub radius: f64,
    pub height: f64,
    /// Index into [`PALETTE`].
    pub class: u8,
}

/// Straight road segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Side length in meters of the square a satellite image covers.
    pub extent: f64,
    pub landmarks: Vec<Landmark>,
    pub roads: Vec<Road>,
    pub camera: (f64, f64),
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl SceneSpec {
    /// Checks the scene invariants: at least one landmark, all landmarks and
    /// the camera inside the world.
    pub fn validate(&self) -> Result<()> {
        if self.landmarks.is_empty() {
            return Err(Error::config("scene has no landmarks"));
        }
        let half = self.extent / 2.0;
        let inside = |x: f64, y: f64| x.abs() <= half && y.abs() <= half;
        if !inside(self.camera.0, self.camera.1) {
            return Err(Error::config("camera lies outside the world"));
        }
        if self.landmarks.iter().any(|l| !inside(l.x, l.y)) {
            return Err(Error::config("landmark lies outside the world"));
        }
        Ok(())
    }

    /// Rotates the whole scene clockwise about the camera by `quarter_turns × 90°`,
    /// after mirroring east↔west about the camera when `flip` is set.
    pub fn transformed(&self, aug: Augmentation) -> SceneSpec {
        let (cx, cy) = self.camera;
        let tf = |x: f64, y: f64| {
            let (dx, dy) = aug.apply_vector(x - cx, y - cy);
            (cx + dx, cy + dy)
        };
        let mut out = self.clone();
        for l in &mut out.landmarks {
            (l.x, l.y) = tf(l.x, l.y);
        }
        for r in &mut out.roads {
            r.from = tf(r.from.0, r.from.1);
            r.to = tf(r.to.0, r.to.1);
        }
        out
    }

    /// Clockwise bearing from the camera to `(x, y)` in `[0, 2π)`.
    pub fn bearing(&self, x: f64, y: f64) -> f64 {
        let b = Float::atan2(x - self.camera.0, y - self.camera.1);
        if b < 0.0 {
            b + 2.0 * core::f64::consts::PI
        } else {
            b
        }
    }

    /// Ground-plane color at a world point, as seen from above.
    pub fn ground_color(&self, x: f64, y: f64) -> [f32; 3] {
        for l in &self.landmarks {
            let (dx, dy) = (x - l.x, y - l.y);
            if dx * dx + dy * dy <= l.radius * l.radius {
                return PALETTE[l.class as usize];
            }
        }
        for r in &self.roads {
            if segment_distance((x, y), r.from, r.to) <= r.width / 2.0 {
                return ROAD;
            }
        }
        GRASS
    }

    /// Nearest landmark hit along bearing `theta` from the camera: `(distance, index)`.
    pub fn cast(&self, theta: f64) -> Option<(f64, usize)> {
        let (dx, dy) = (Float::sin(theta), Float::cos(theta));
        let (cx, cy) = self.camera;
        let mut best: Option<(f64, usize)> = None;
        for (i, l) in self.landmarks.iter().enumerate() {
            let (ox, oy) = (l.x - cx, l.y - cy);
            let along = ox * dx + oy * dy;
            let perp2 = ox * ox + oy * oy - along * along;
            let r2 = l.radius * l.radius;
            if perp2 > r2 {
                continue;
            }
            let t = along - Float::sqrt(r2 - perp2);
            if t <= 0.0 {
                continue;
            }
            if best.is_none_or(|(d, _)| t < d) {
                best = Some((t, i));
            }
        }
        best
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * abx - p.0, a.1 + t * aby - p.1);
    Float::sqrt(qx * qx + qy * qy)
}

/// Ranges the scene generator samples from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SceneParams {
    pub extent: f64,
    pub min_landmarks: usize,
    pub max_landmarks: usize,
    /// Landmark distance from the camera, meters.
    pub landmark_distance: (f64, f64),
    pub landmark_radius: (f64, f64),
    pub landmark_height: (f64, f64),
    pub max_roads: usize,
    pub road_width: (f64, f64),
    pub noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            extent: 100.0,
            min_landmarks: 3,
            max_landmarks: 6,
            landmark_distance: (12.0, 38.0),
            landmark_radius: (5.0, 10.0),
            landmark_height: (8.0, 20.0),
            max_roads: 2,
            road_width: (4.0, 8.0),
            noise: 0.02,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Scene `index` of the dataset with seed `dataset_seed`, default parameters.
pub fn generate_scene(dataset_seed: u64, index: u64) -> SceneSpec {
    generate_scene_with(&SceneParams::default(), dataset_seed, index)
}

pub fn generate_scene_with(params: &SceneParams, dataset_seed: u64, index: u64) -> SceneSpec {
    let scene_seed = seed::derive(seed::derive(dataset_seed, seed::tag::SCENE), index);
    let mut rng = seed::rng(scene_seed, seed::tag::SCENE);
    let half = params.extent / 2.0;
    let count = rng.random_range(params.min_landmarks.max(1)..=params.max_landmarks.max(params.min_landmarks.max(1)));
    let mut landmarks: Vec<Landmark> = Vec::with_capacity(count);
    let mut attempts = 0;
    while landmarks.len() < count && attempts < 200 {
        attempts += 1;
        let radius = uniform(&mut rng, params.landmark_radius);
        let dist = uniform(&mut rng, params.landmark_distance).max(radius + 1.0);
        let angle = rng.random_range(0.0..2.0 * core::f64::consts::PI);
        let (x, y) = (dist * Float::sin(angle), dist * Float::cos(angle));
        if x.abs() + radius > half || y.abs() + radius > half {
            continue;
        }
        let clear = landmarks.iter().all(|o| {
            let (dx, dy) = (o.x - x, o.y - y);
            Float::sqrt(dx * dx + dy * dy) > o.radius + radius + 2.0
        });
        if !clear {
            continue;
        }
        landmarks.push(Landmark {
            x,
            y,
            radius,
            height: uniform(&mut rng, params.landmark_height),
            class: rng.random_range(0..PALETTE.len() as u8),
        });
    }
    let n_roads = rng.random_range(0..=params.max_roads);
    let roads = (0..n_roads)
        .map(|_| {
            let angle = rng.random_range(0.0..core::f64::consts::PI);
            let offset = rng.random_range(-0.25 * half..0.25 * half);
            let (ux, uy) = (Float::cos(angle), Float::sin(angle));
            // line through the point at `offset` along the normal, spanning the world
            let (px, py) = (-uy * offset, ux * offset);
            let reach = params.extent * 1.5;
            Road {
                from: (px - ux * reach, py - uy * reach),
                to: (px + ux * reach, py + uy * reach),
                width: uniform(&mut rng, params.road_width),
            }
        })
        .collect();
    SceneSpec {
        seed: scene_seed,
        extent: params.extent,
        landmarks,
        roads,
        camera: (0.0, 0.0),
        noise: params.noise,
    }
}

/// `(height, width)` of both rendered views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RenderSizes {
    pub ground: (usize, usize),
    pub satellite: (usize, usize),
}

impl Default for RenderSizes {
    fn default() -> Self {
        RenderSizes {
            ground: (32, 128),
            satellite: (64, 64),
        }
    }
}

/// One ground/satellite pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub ground: ImageTensor,
    pub satellite: ImageTensor,
    /// Camera position relative to the satellite image center, pixels
    /// `(right, down)`.
    pub offset_px: (f64, f64),
    pub semi_positive_ids: Vec<String>,
}

fn add_noise(grid: &mut Grid<f32>, sigma: f64, seed_value: u64, stream: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = seed::rng(seed_value, seed::tag::NOISE ^ (stream << 8));
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in grid.as_mut_slice() {
        *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
}

/// Orthographic north-up raster of `scene` centered on `center`.
pub fn render_satellite(scene: &SceneSpec, size: (usize, usize), center: (f64, f64)) -> Grid<f32> {
    let (h, w) = size;
    let px_w = scene.extent / w as f64;
    let px_h = scene.extent / h as f64;
    let half = scene.extent / 2.0;
    let mut g = Grid::zeros(h, w, 3);
    for r in 0..h {
        let y = center.1 + (half - (r as f64 + 0.5) * px_h);
        for c in 0..w {
            let x = center.0 + (-half + (c as f64 + 0.5) * px_w);
            let color = scene.ground_color(x, y);
            for (ch, v) in color.iter().enumerate() {
                g.set(r, c, ch, *v);
            }
        }
    }
    g
}

/// Elevation angle of the center of panorama row `r`.
pub fn row_elevation(r: usize, height: usize) -> f64 {
    let half = height as f64 / 2.0;
    (half - (r as f64 + 0.5)) / half * HALF_VFOV
}

/// 360° panorama seen from the camera.
pub fn render_ground(scene: &SceneSpec, size: (usize, usize)) -> Grid<f32> {
    let (h, w) = size;
    let mut g = Grid::zeros(h, w, 3);
    let elevations: Vec<f64> = (0..h).map(|r| row_elevation(r, h)).collect();
    for c in 0..w {
        let theta = 2.0 * core::f64::consts::PI * c as f64 / w as f64;
        let (dx, dy) = (Float::sin(theta), Float::cos(theta));
        let hit = scene.cast(theta);
        for (r, &el) in elevations.iter().enumerate() {
            let ground_dist = if el < 0.0 {
                Some(CAMERA_HEIGHT / Float::tan(-el))
            } else {
                None
            };
            let wall = hit.and_then(|(d, i)| {
                let l = &scene.landmarks[i];
                let z = CAMERA_HEIGHT + d * Float::tan(el);
                let before_ground = ground_dist.is_none_or(|gd| d < gd);
                (before_ground && z <= l.height).then_some(l.class)
            });
            let color = match (wall, ground_dist) {
                (Some(class), _) => PALETTE[class as usize],
                (None, Some(gd)) => scene.ground_color(scene.camera.0 + gd * dx, scene.camera.1 + gd * dy),
                (None, None) => SKY,
            };
            for (ch, v) in color.iter().enumerate() {
                g.set(r, c, ch, *v);
            }
        }
    }
    g
}

/// Renders the pair with the satellite image centered on the camera shifted
/// by `center_offset` meters (east, north).
pub fn render_pair_at(
    scene: &SceneSpec,
    sizes: RenderSizes,
    id: String,
    center_offset: (f64, f64),
) -> Result<PairRecord> {
    scene.validate()?;
    let (gh, gw) = sizes.ground;
    let (sh, sw) = sizes.satellite;
    if gh == 0 || gw == 0 || sh == 0 || sw == 0 {
        return Err(Error::config("render sizes must be non-empty"));
    }
    let visible = (0..gw).any(|c| scene.cast(2.0 * core::f64::consts::PI * c as f64 / gw as f64).is_some());
    if !visible {
        return Err(Error::DegenerateScene(format!(
            "scene {:#x} shows no landmark",
            scene.seed
        )));
    }
    let mut ground = render_ground(scene, sizes.ground);
    let center = (scene.camera.0 + center_offset.0, scene.camera.1 + center_offset.1);
    let mut satellite = render_satellite(scene, sizes.satellite, center);
    add_noise(&mut ground, scene.noise, scene.seed, 0);
    let stream = 1 + ((center_offset.0.to_bits() ^ center_offset.1.to_bits().rotate_left(17)) & 0xffff);
    add_noise(&mut satellite, scene.noise, scene.seed, stream);
    let offset_px = (
        -center_offset.0 * sw as f64 / scene.extent,
        center_offset.1 * sh as f64 / scene.extent,
    );
    Ok(PairRecord {
        id,
        ground: ImageTensor::new(ground)?,
        satellite: ImageTensor::new(satellite)?,
        offset_px,
        semi_positive_ids: Vec::new(),
    })
}

/// Center-aligned pair of `scene`.
pub fn render_pair(scene: &SceneSpec, sizes: RenderSizes) -> Result<PairRecord> {
    render_pair_at(scene, sizes, format!("{:016x}", scene.seed), (0.0, 0.0))
}

/// Satellite rotation/flip with the matching panorama shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augmentation {
    /// Clockwise 90° turns, 0..=3.
    pub quarter_turns: u8,
    /// East↔west mirror, applied before the rotation.
    pub flip: bool,
}

impl Augmentation {
    pub fn random(seed_value: u64) -> Self {
        let mut rng = seed::rng(seed_value, seed::tag::AUGMENT);
        Augmentation {
            quarter_turns: rng.random_range(0..4u8),
            flip: rng.random_bool(0.5),
        }
    }

    /// Transforms a world-frame vector `(east, north)`.
    pub fn apply_vector(&self, mut x: f64, y: f64) -> (f64, f64) {
        if self.flip {
            x = -x;
        }
        let (mut x, mut y) = (x, y);
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (y, -x);
        }
        (x, y)
    }

    pub fn apply(&self, rec: &PairRecord) -> Result<PairRecord> {
        let sat = rec.satellite.grid();
        let (sh, sw) = (sat.height(), sat.width());
        let turns = self.quarter_turns % 4;
        if turns % 2 == 1 && sh != sw {
            return Err(Error::config(format!(
                "cannot rotate a non-square {sh}x{sw} satellite image by 90°"
            )));
        }
        let gw = rec.ground.width();
        if turns != 0 && gw % 4 != 0 {
            return Err(Error::config(format!("panorama width {gw} is not divisible by 4")));
        }
        let mut s = sat.clone();
        let mut g = rec.ground.grid().clone();
        if self.flip {
            s = Grid::from_fn(sh, sw, 3, |r, c, ch| sat.get(r, sw - 1 - c, ch));
            let src = g.clone();
            g = Grid::from_fn(src.height(), gw, 3, |r, c, ch| src.get(r, (gw - c) % gw, ch));
        }
        for _ in 0..turns {
            let src = s.clone();
            let h = src.height();
            s = Grid::from_fn(src.width(), h, 3, |r, c, ch| src.get(h - 1 - c, r, ch));
        }
        if turns != 0 {
            let shift = turns as usize * gw / 4;
            let src = g.clone();
            g = Grid::from_fn(src.height(), gw, 3, |r, c, ch| src.get(r, (c + gw - shift) % gw, ch));
        }
        // offset_px is (right, down) = (east, -north)
        let (ox, oy) = self.apply_vector(rec.offset_px.0, -rec.offset_px.1);
        Ok(PairRecord {
            id: rec.id.clone(),
            ground: ImageTensor::new(g)?,
            satellite: ImageTensor::new(s)?,
            offset_px: (ox, -oy),
            semi_positive_ids: rec.semi_positive_ids.clone(),
        })
    }
}

/// Random synchronized augmentation of a center-aligned pair.
pub fn augment_pair(rec: &PairRecord, seed_value: u64) -> Result<PairRecord> {
    if rec.offset_px != (0.0, 0.0) {
        return Err(Error::config("augmentation expects a center-aligned record"));
    }
    Augmentation::random(seed_value).apply(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PairMode {
    #[default]
    CenterAligned,
    /// One positive crop (camera within the central region) and three
    /// semi-positive crops (camera inside, but off-center) per scene.
    Offset,
}

/// Extra satellite reference that contains the query location off-center.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiPositive {
    pub id: String,
    pub satellite: ImageTensor,
}

/// Lazily generated dataset; record `i` depends only on `(seed, split, mode, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub split: Split,
    pub mode: PairMode,
    pub len: usize,
    pub sizes: RenderSizes,
    pub scene: SceneParams,
}

/// Per-axis bound (fraction of the extent) of the positive crop offset.
const POSITIVE_OFFSET: f64 = 0.1;
/// Semi-positive crop offset (fraction of the extent) along each axis.
const SEMI_OFFSET: f64 = 0.35;

impl SyntheticDataset {
    pub fn new(seed: u64, split: Split, mode: PairMode, len: usize) -> Self {
        SyntheticDataset {
            seed,
            split,
            mode,
            len,
            sizes: RenderSizes::default(),
            scene: SceneParams::default(),
        }
    }

    pub fn pair_id(&self, index: usize) -> String {
        format!("{}-{index:06}", self.split.as_str())
    }

    /// Scene index in the shared index space: splits never share scenes.
    fn scene_index(&self, index: usize, attempt: u64) -> u64 {
        let split_bit = match self.split {
            Split::Train => 0u64,
            Split::Eval => 1u64 << 62,
        };
        split_bit | (attempt << 40) | index as u64
    }

    pub fn scene(&self, index: usize) -> Result<SceneSpec> {
        self.resolve(index).map(|(s, _)| s)
    }

    /// First scene for `index` that is not degenerate.
    fn resolve(&self, index: usize) -> Result<(SceneSpec, PairRecord)> {
        if index >= self.len {
            return Err(Error::parameter(format!(
                "index {index} out of range ({} records)",
                self.len
            )));
        }
        let mut last = None;
        for attempt in 0..16 {
            let scene = generate_scene_with(&self.scene, self.seed, self.scene_index(index, attempt));
            let offset = self.positive_offset(&scene);
            match render_pair_at(&scene, self.sizes, self.pair_id(index), offset) {
                Ok(mut rec) => {
                    if self.mode == PairMode::Offset {
                        rec.semi_positive_ids = (1..=3).map(|k| format!("{}-s{k}", rec.id)).collect();
                    }
                    return Ok((scene, rec));
                }
                Err(e @ Error::DegenerateScene(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::DegenerateScene("no scene".into())))
    }

    fn positive_offset(&self, scene: &SceneSpec) -> (f64, f64) {
        match self.mode {
            PairMode::CenterAligned => (0.0, 0.0),
            PairMode::Offset => {
                let mut rng = seed::rng(scene.seed, seed::tag::AUGMENT + 1);
                let b = POSITIVE_OFFSET * scene.extent;
                (rng.random_range(-b..b), rng.random_range(-b..b))
            }
        }
    }

    pub fn record(&self, index: usize) -> Result<PairRecord> {
        self.resolve(index).map(|(_, r)| r)
    }

    /// The three semi-positive crops of an offset-mode record.
    pub fn semi_positives(&self, index: usize) -> Result<Vec<SemiPositive>> {
        if self.mode != PairMode::Offset {
            return Ok(Vec::new());
        }
        let (scene, rec) = self.resolve(index)?;
        let mut rng = seed::rng(scene.seed, seed::tag::AUGMENT + 2);
        let first = rng.random_range(0..4usize);
        let d = SEMI_OFFSET * scene.extent;
        let corners = [(d, d), (d, -d), (-d, -d), (-d, d)];
        let mut out = Vec::with_capacity(3);
        for k in 0..3 {
            let offset = corners[(first + k) % 4];
            let r = render_pair_at(&scene, self.sizes, rec.semi_positive_ids[k].clone(), offset)?;
            out.push(SemiPositive {
                id: r.id,
                satellite: r.satellite,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(mut scene: SceneSpec) -> SceneSpec {
        scene.noise = 0.0;
        scene
    }

    #[test]
    fn scenes_are_deterministic_and_index_dependent() {
        assert_eq!(generate_scene(0, 7), generate_scene(0, 7));
        assert_ne!(generate_scene(0, 7).landmarks, generate_scene(0, 8).landmarks);
    }

    #[test]
    fn hundred_scenes_are_distinct() {
        let scenes: Vec<_> = (0..100).map(|k| generate_scene(0, k)).collect();
        for i in 0..scenes.len() {
            for j in i + 1..scenes.len() {
                assert_ne!(scenes[i].landmarks, scenes[j].landmarks, "{i} vs {j}");
            }
        }
    }

    #[test]
    fn scenes_satisfy_invariants() {
        for k in 0..200 {
            generate_scene(3, k).validate().unwrap();
        }
    }

    #[test]
    fn landmark_due_north_lands_in_column_zero() {
        let scene = SceneSpec {
            seed: 1,
            extent: 100.0,
            landmarks: vec![Landmark {
                x: 0.0,
                y: 20.0,
                radius: 3.0,
                height: 10.0,
                class: 2,
            }],
            roads: vec![],
            camera: (0.0, 0.0),
            noise: 0.0,
        };
        let g = render_ground(&scene, (32, 128));
        assert_eq!(g.pixel(15, 0), &PALETTE[2]);
        assert_eq!(g.pixel(15, 64), &SKY);
        assert_eq!(g.pixel(31, 64), &GRASS);
    }

    #[test]
    fn same_spec_renders_identically_without_noise() {
        let scene = clean(generate_scene(5, 3));
        let a = render_pair(&scene, RenderSizes::default()).unwrap();
        let b = render_pair(&scene, RenderSizes::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_scene_is_signaled() {
        let scene = SceneSpec {
            seed: 9,
            extent: 100.0,
            landmarks: vec![Landmark {
                x: 0.0,
                y: 0.0,
                radius: 3.0,
                height: 10.0,
                class: 0,
            }],
            roads: vec![],
            camera: (0.0, 0.0),
            noise: 0.0,
        };
        // camera inside the only landmark: every ray starts inside it
        assert!(matches!(
            render_pair(&scene, RenderSizes::default()),
            Err(Error::DegenerateScene(_))
        ));
    }

    #[test]
    fn identity_augmentation() {
        let rec = render_pair(&clean(generate_scene(0, 1)), RenderSizes::default()).unwrap();
        assert_eq!(Augmentation::default().apply(&rec).unwrap(), rec);
    }

    #[test]
    fn half_turn_shifts_panorama_by_half() {
        let rec = render_pair(&clean(generate_scene(0, 2)), RenderSizes::default()).unwrap();
        let aug = Augmentation {
            quarter_turns: 2,
            flip: false,
        }
        .apply(&rec)
        .unwrap();
        let (g, a) = (rec.ground.grid(), aug.ground.grid());
        for r in 0..32 {
            for c in 0..128 {
                assert_eq!(a.pixel(r, (c + 64) % 128), g.pixel(r, c));
            }
        }
        let (s, t) = (rec.satellite.grid(), aug.satellite.grid());
        assert_eq!(t.pixel(0, 0), s.pixel(63, 63));
    }

    #[test]
    fn non_square_rotation_fails() {
        let sizes = RenderSizes {
            ground: (32, 128),
            satellite: (64, 32),
        };
        let rec = render_pair(&clean(generate_scene(0, 2)), sizes).unwrap();
        assert!(Augmentation {
            quarter_turns: 1,
            flip: false
        }
        .apply(&rec)
        .is_err());
        assert!(Augmentation {
            quarter_turns: 2,
            flip: true
        }
        .apply(&rec)
        .is_ok());
    }

    #[test]
    fn splits_have_disjoint_ids_and_scenes() {
        let tr = SyntheticDataset::new(0, Split::Train, PairMode::CenterAligned, 4);
        let ev = SyntheticDataset::new(0, Split::Eval, PairMode::CenterAligned, 4);
        for i in 0..4 {
            assert_ne!(tr.pair_id(i), ev.pair_id(i));
            assert_ne!(tr.scene(i).unwrap(), ev.scene(i).unwrap());
        }
    }

    #[test]
    fn offset_mode_has_three_semi_positives() {
        let ds = SyntheticDataset::new(0, Split::Eval, PairMode::Offset, 2);
        let rec = ds.record(1).unwrap();
        assert_eq!(rec.semi_positive_ids.len(), 3);
        assert_ne!(rec.offset_px, (0.0, 0.0));
        let semis = ds.semi_positives(1).unwrap();
        assert_eq!(semis.len(), 3);
        for (s, id) in semis.iter().zip(&rec.semi_positive_ids) {
            assert_eq!(&s.id, id);
            assert_ne!(s.satellite, rec.satellite);
        }
    }
}
