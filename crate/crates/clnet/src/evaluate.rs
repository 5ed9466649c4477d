//! Corpus embedding and the metrics report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use clnet_core::retrieval::{
    average_precision, hit_rate, rank_references, recall_at_k, EmbeddingMatrix, RetrievalResult, TopK,
};
use clnet_core::{ImageTensor, Model, ViewId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PairDataset;
use crate::error::{Error, Result};

/// Embeds `images` in order; row ids are the given ids.
pub fn embed_corpus(model: &Model<f32>, images: &[(&str, &ImageTensor)], view: ViewId) -> Result<EmbeddingMatrix<f32>> {
    let hw = model.config.encoder.input_hw(view);
    let mut problems = Vec::new();
    for (i, (id, img)) in images.iter().enumerate() {
        if (img.height(), img.width()) != hw {
            problems.push(format!(
                "image {i} (`{id}`) is {}x{}, the {view} view expects {}x{}",
                img.height(),
                img.width(),
                hw.0,
                hw.1
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(problems));
    }
    let maps = model.prepare_maps()?;
    let rows: Vec<Result<Vec<f32>>> = images
        .par_iter()
        .map(|(_, img)| Ok(model.embed(img, view, &maps)?.0))
        .collect();
    let mut data = Vec::with_capacity(images.len() * model.embedding_dim());
    for r in rows {
        data.extend(r?);
    }
    let ids = images.iter().map(|(id, _)| id.to_string()).collect();
    Ok(EmbeddingMatrix::new(ids, model.embedding_dim(), data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub recall_at_1_percent: f64,
    pub hit_rate: Option<f64>,
    pub average_precision: Option<f64>,
    pub num_queries: usize,
    pub num_references: usize,
    pub config_hash: Option<String>,
    pub timestamp: String,
}

impl MetricsReport {
    /// `relevant` adds hit rate and AP.
    pub fn compute(
        result: &RetrievalResult,
        truth: &BTreeMap<String, String>,
        relevant: Option<&BTreeMap<String, BTreeSet<String>>>,
        config_hash: Option<String>,
    ) -> Result<Self> {
        Ok(MetricsReport {
            recall_at_1: recall_at_k(result, truth, TopK::Count(1))?,
            recall_at_5: recall_at_k(result, truth, TopK::Count(5))?,
            recall_at_10: recall_at_k(result, truth, TopK::Count(10))?,
            recall_at_1_percent: recall_at_k(result, truth, TopK::OnePercent)?,
            hit_rate: relevant.map(|r| hit_rate(result, r)).transpose()?,
            average_precision: relevant.map(|r| average_precision(result, r)).transpose()?,
            num_queries: result.query_ids.len(),
            num_references: result.reference_ids.len(),
            config_hash,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Embeds both views of `data` and scores retrieval; hit rate and AP are
/// reported when the dataset carries semi-positives.
pub fn evaluate_dataset(model: &Model<f32>, data: &PairDataset, config_hash: Option<String>) -> Result<MetricsReport> {
    let queries = embed_corpus(model, &data.queries(), ViewId::Ground)?;
    let references = embed_corpus(model, &data.references(), ViewId::Satellite)?;
    let result = rank_references(&queries, &references)?;
    let relevant = data.relevant_sets();
    let relevant = data.has_semi_positives().then_some(&relevant);
    MetricsReport::compute(&result, &data.ground_truth(), relevant, config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clnet_core::synth::{PairMode, RenderSizes, SceneParams, Split};
    use clnet_core::ModelConfig;

    fn model() -> Model<f32> {
        Model::init(ModelConfig::default(), 0).unwrap()
    }

    #[test]
    fn single_image_gives_unit_row() {
        let ds = PairDataset::synthetic(
            0,
            Split::Eval,
            PairMode::CenterAligned,
            1,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        let m = embed_corpus(&model(), &ds.queries(), ViewId::Ground).unwrap();
        assert_eq!(m.len(), 1);
        let n: f32 = m.row(0).iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn batch_matches_one_at_a_time() {
        let ds = PairDataset::synthetic(
            0,
            Split::Eval,
            PairMode::CenterAligned,
            8,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        let model = model();
        let all = embed_corpus(&model, &ds.references(), ViewId::Satellite).unwrap();
        for (i, r) in ds.references().into_iter().enumerate() {
            let one = embed_corpus(&model, &[r], ViewId::Satellite).unwrap();
            for (a, b) in one.row(0).iter().zip(all.row(i)) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn duplicate_images_give_identical_rows() {
        let ds = PairDataset::synthetic(
            0,
            Split::Eval,
            PairMode::CenterAligned,
            1,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        let img = &ds.pairs[0].ground;
        let m = embed_corpus(&model(), &[("a", img), ("b", img)], ViewId::Ground).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn size_mismatch_names_the_index() {
        let ds = PairDataset::synthetic(
            0,
            Split::Eval,
            PairMode::CenterAligned,
            2,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        let imgs = [("a", &ds.pairs[0].ground), ("b", &ds.pairs[1].satellite)];
        let err = embed_corpus(&model(), &imgs, ViewId::Ground).unwrap_err().to_string();
        assert!(err.contains("image 1 (`b`)"), "{err}");
    }

    #[test]
    fn offset_report_has_hit_rate() {
        let ds = PairDataset::synthetic(
            0,
            Split::Eval,
            PairMode::Offset,
            4,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        let r = evaluate_dataset(&model(), &ds, None).unwrap();
        assert_eq!(r.num_references, 16);
        assert!(r.hit_rate.unwrap() >= r.recall_at_1);
        assert!(r.recall_at_1 <= r.recall_at_5 && r.recall_at_5 <= r.recall_at_10);
    }
}
