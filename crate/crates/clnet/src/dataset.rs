//! In-memory pair datasets: synthetic generation and directory manifests.
//!
//! A manifest is a CSV file with the header
//! `pair_id,ground_path,satellite_path,semi_positive_ids`. Paths are relative
//! to the dataset root; `semi_positive_ids` is a `;`-separated list.
//! A semi-positive id that is not itself a pair id names the image
//! `<id>.png` next to the row's satellite image.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clnet_core::synth::{PairMode, RenderSizes, SceneParams, Split, SyntheticDataset};
use clnet_core::{ImageTensor, ViewId};
use image::{ImageBuffer, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["pair_id", "ground_path", "satellite_path", "semi_positive_ids"];

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub ground: ImageTensor,
    pub satellite: ImageTensor,
    pub semi_positive_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairDataset {
    pub pairs: Vec<Pair>,
    /// Satellite images that are semi-positives of some query but not a
    /// pair's positive.
    pub extra_references: Vec<(String, ImageTensor)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    pair_id: String,
    ground_path: String,
    satellite_path: String,
    #[serde(default)]
    semi_positive_ids: String,
}

impl PairDataset {
    /// Renders every record of a synthetic split.
    pub fn synthetic(
        seed: u64,
        split: Split,
        mode: PairMode,
        len: usize,
        sizes: RenderSizes,
        scene: SceneParams,
    ) -> Result<Self> {
        let mut gen = SyntheticDataset::new(seed, split, mode, len);
        gen.sizes = sizes;
        gen.scene = scene;
        let rendered: Vec<Result<(Pair, Vec<(String, ImageTensor)>)>> = (0..len)
            .into_par_iter()
            .map(|i| {
                let rec = gen.record(i)?;
                let semis = gen
                    .semi_positives(i)?
                    .into_iter()
                    .map(|s| (s.id, s.satellite))
                    .collect();
                Ok((
                    Pair {
                        id: rec.id,
                        ground: rec.ground,
                        satellite: rec.satellite,
                        semi_positive_ids: rec.semi_positive_ids,
                    },
                    semis,
                ))
            })
            .collect();
        let mut out = PairDataset::default();
        for r in rendered {
            let (pair, semis) = r?;
            out.pairs.push(pair);
            out.extra_references.extend(semis);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Query id → its positive reference id.
    pub fn ground_truth(&self) -> BTreeMap<String, String> {
        self.pairs.iter().map(|p| (p.id.clone(), p.id.clone())).collect()
    }

    /// Query id → positive ∪ semi-positives.
    pub fn relevant_sets(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.pairs
            .iter()
            .map(|p| {
                let mut set: BTreeSet<String> = p.semi_positive_ids.iter().cloned().collect();
                set.insert(p.id.clone());
                (p.id.clone(), set)
            })
            .collect()
    }

    pub fn has_semi_positives(&self) -> bool {
        self.pairs.iter().any(|p| !p.semi_positive_ids.is_empty())
    }

    /// Reference database: every pair's satellite image, then the extras.
    pub fn references(&self) -> Vec<(&str, &ImageTensor)> {
        self.pairs
            .iter()
            .map(|p| (p.id.as_str(), &p.satellite))
            .chain(self.extra_references.iter().map(|(id, img)| (id.as_str(), img)))
            .collect()
    }

    pub fn queries(&self) -> Vec<(&str, &ImageTensor)> {
        self.pairs.iter().map(|p| (p.id.as_str(), &p.ground)).collect()
    }

    /// Checks every image against the configured sizes.
    pub fn check_sizes(&self, sizes: RenderSizes) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |what: &str, id: &str, img: &ImageTensor, hw: (usize, usize)| {
            if (img.height(), img.width()) != hw {
                problems.push(format!(
                    "{what} image of `{id}` is {}x{}, expected {}x{}",
                    img.height(),
                    img.width(),
                    hw.0,
                    hw.1
                ));
            }
        };
        for p in &self.pairs {
            check(ViewId::Ground.as_str(), &p.id, &p.ground, sizes.ground);
            check(ViewId::Satellite.as_str(), &p.id, &p.satellite, sizes.satellite);
        }
        for (id, img) in &self.extra_references {
            check(ViewId::Satellite.as_str(), id, img, sizes.satellite);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Dataset(problems))
        }
    }

    /// Loads a manifest; every problem found is reported at once.
    pub fn load_directory(root: &Path, manifest: &Path) -> Result<Self> {
        let manifest_path = root.join(manifest);
        let mut reader = csv::Reader::from_path(&manifest_path).map_err(|e| csv_error(&manifest_path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(&manifest_path, e))?.clone();
        if headers.iter().take(3).ne(MANIFEST_HEADER.iter().take(3).copied()) {
            return Err(Error::Dataset(vec![format!(
                "{}: header must start with {}",
                manifest_path.display(),
                MANIFEST_HEADER.join(",")
            )]));
        }
        let mut problems = Vec::new();
        let mut rows = Vec::new();
        for (line, row) in reader.deserialize::<ManifestRow>().enumerate() {
            match row {
                Ok(r) => rows.push(r),
                Err(e) => problems.push(format!("row {}: {e}", line + 1)),
            }
        }
        let mut seen = BTreeSet::new();
        for r in &rows {
            if r.pair_id.is_empty() {
                problems.push("empty pair id".to_string());
            } else if !seen.insert(r.pair_id.clone()) {
                problems.push(format!("duplicate pair id `{}`", r.pair_id));
            }
        }
        let mut out = PairDataset::default();
        let mut extra_seen = BTreeSet::new();
        for r in &rows {
            let ground = load_image(&root.join(&r.ground_path));
            let sat_path = root.join(&r.satellite_path);
            let satellite = load_image(&sat_path);
            let semi_positive_ids: Vec<String> = r
                .semi_positive_ids
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            for sid in &semi_positive_ids {
                if seen.contains(sid) || !extra_seen.insert(sid.clone()) {
                    continue;
                }
                let dir = sat_path.parent().unwrap_or(root);
                match load_image(&dir.join(format!("{sid}.png"))) {
                    Ok(img) => out.extra_references.push((sid.clone(), img)),
                    Err(e) => problems.push(format!("semi-positive `{sid}` of `{}`: {e}", r.pair_id)),
                }
            }
            match (ground, satellite) {
                (Ok(ground), Ok(satellite)) => out.pairs.push(Pair {
                    id: r.pair_id.clone(),
                    ground,
                    satellite,
                    semi_positive_ids,
                }),
                (g, s) => {
                    for e in [g.err(), s.err()].into_iter().flatten() {
                        problems.push(format!("pair `{}`: {e}", r.pair_id));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(Error::Dataset(problems))
        }
    }

    /// Writes PNGs under `ground/` and `satellite/` plus `manifest.csv`.
    pub fn write_directory(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["ground", "satellite"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir.join(sub), e))?;
        }
        let manifest = dir.join("manifest.csv");
        let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_error(&manifest, e))?;
        for p in &self.pairs {
            let ground_path = format!("ground/{}.png", p.id);
            let satellite_path = format!("satellite/{}.png", p.id);
            save_png(&p.ground, &dir.join(&ground_path))?;
            save_png(&p.satellite, &dir.join(&satellite_path))?;
            w.serialize(ManifestRow {
                pair_id: p.id.clone(),
                ground_path,
                satellite_path,
                semi_positive_ids: p.semi_positive_ids.join(";"),
            })
            .map_err(|e| csv_error(&manifest, e))?;
        }
        for (id, img) in &self.extra_references {
            save_png(img, &dir.join(format!("satellite/{id}.png")))?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }
}

/// Ground truth and relevant sets from a manifest, without decoding images.
/// The flag reports whether any row lists semi-positives.
pub fn manifest_relevance(path: &Path) -> Result<(BTreeMap<String, String>, BTreeMap<String, BTreeSet<String>>, bool)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut truth = BTreeMap::new();
    let mut relevant = BTreeMap::new();
    let mut any_semi = false;
    for row in reader.deserialize::<ManifestRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        if truth.contains_key(&r.pair_id) {
            return Err(Error::Dataset(vec![format!("duplicate pair id `{}`", r.pair_id)]));
        }
        let mut set: BTreeSet<String> = r
            .semi_positive_ids
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        any_semi |= !set.is_empty();
        set.insert(r.pair_id.clone());
        truth.insert(r.pair_id.clone(), r.pair_id.clone());
        relevant.insert(r.pair_id, set);
    }
    Ok((truth, relevant, any_semi))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Dataset(vec![format!("{}: {e}", path.display())])
}

/// Decodes any supported raster into `[0, 1]` RGB.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    if !path.is_file() {
        return Err(Error::Validation(format!("missing file {}", path.display())));
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Ok(ImageTensor::from_vec(h as usize, w as usize, rgb.into_raw())?)
}

/// 8-bit PNG of an `[0, 1]` image.
pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let bytes: Vec<u8> = img
        .grid()
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_offset_dataset_lists_semi_positives() {
        let ds = PairDataset::synthetic(
            0,
            Split::Eval,
            PairMode::Offset,
            3,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.extra_references.len(), 9);
        assert_eq!(ds.references().len(), 12);
        let rel = ds.relevant_sets();
        assert_eq!(rel["eval-000001"].len(), 4);
    }

    #[test]
    fn directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = PairDataset::synthetic(
            1,
            Split::Train,
            PairMode::Offset,
            2,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        let manifest = ds.write_directory(dir.path()).unwrap();
        let back = PairDataset::load_directory(dir.path(), Path::new("manifest.csv")).unwrap();
        assert!(manifest.is_file());
        assert_eq!(back.len(), 2);
        assert_eq!(back.extra_references.len(), 6);
        for (a, b) in ds.pairs.iter().zip(&back.pairs) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.semi_positive_ids, b.semi_positive_ids);
            for (x, y) in a.ground.grid().as_slice().iter().zip(b.ground.grid().as_slice()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn load_errors_are_itemized() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("m.csv"),
            "pair_id,ground_path,satellite_path,semi_positive_ids\na,g/a.png,s/a.png,\na,g/b.png,s/b.png,x\n",
        )
        .unwrap();
        let Err(Error::Dataset(problems)) = PairDataset::load_directory(dir.path(), Path::new("m.csv")) else {
            panic!("expected a dataset error");
        };
        assert!(problems.iter().any(|p| p.contains("duplicate pair id `a`")));
        assert!(problems.iter().any(|p| p.contains("missing file")));
        assert!(problems.iter().any(|p| p.contains("semi-positive `x`")));
    }
}
