//! Training driver: epoch shuffling, augmentation, schedule, loss history.

use std::io::Write as _;
use std::path::Path;

use clnet_core::optim::AdamWConfig;
use clnet_core::schedule::WarmupCosine;
use clnet_core::seed::{self, derive};
use clnet_core::synth::{augment_pair, PairRecord};
use clnet_core::train::{BatchExecutor, TrainState};
use clnet_core::{Grid, Model};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::PairDataset;
use crate::error::{Error, Result};

/// Runs per-sample work on a dedicated rayon pool.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` uses every core.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Validation(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(RayonExecutor { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl BatchExecutor for RayonExecutor {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f32,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossRecord>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainOutcome {
    pub fn model(&self) -> Result<Model<f32>> {
        self.checkpoint.model()
    }
}

/// Seed of the augmentation applied to pair `index` in `epoch`.
pub fn augmentation_seed(run_seed: u64, epoch: usize, index: usize) -> u64 {
    derive(
        derive(run_seed, seed::tag::AUGMENT),
        ((epoch as u64) << 32) | index as u64,
    )
}

/// Trains from scratch; `on_epoch` sees the model after every epoch.
pub fn train(
    config: &RunConfig,
    data: &PairDataset,
    mut on_epoch: impl FnMut(&EpochSummary, &Model<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let t = &config.train;
    if data.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    if data.len() < t.batch_size {
        return Err(Error::Validation(format!(
            "dataset has {} pairs, fewer than the batch size {}",
            data.len(),
            t.batch_size
        )));
    }
    data.check_sizes(config.render_sizes())?;
    let exec = RayonExecutor::new(t.threads)?;
    let steps_per_epoch = t.steps_per_epoch(data.len());
    let total = steps_per_epoch * t.epochs;
    let schedule = WarmupCosine::new(t.base_lr, t.warmup_for(total), total)?;
    let model = Model::<f32>::init(config.model_config(), config.seed)?;
    let adamw = AdamWConfig {
        weight_decay: t.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = TrainState::new(model, t.tau, t.learnable_tau, adamw)?;
    let mut shuffle = seed::rng(config.seed, seed::tag::SHUFFLE);

    let mut history = Vec::with_capacity(total);
    let mut epochs = Vec::with_capacity(t.epochs);
    let mut step = 0usize;
    for epoch in 0..t.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle);
        let mut sum = 0.0f64;
        for batch in order.chunks_exact(t.batch_size) {
            let pairs: Vec<(Grid<f32>, Grid<f32>)> = exec
                .map(batch.len(), |k| {
                    let i = batch[k];
                    let p = &data.pairs[i];
                    if !t.augment {
                        return Ok((p.ground.grid().clone(), p.satellite.grid().clone()));
                    }
                    let rec = PairRecord {
                        id: p.id.clone(),
                        ground: p.ground.clone(),
                        satellite: p.satellite.clone(),
                        offset_px: (0.0, 0.0),
                        semi_positive_ids: Vec::new(),
                    };
                    let a = augment_pair(&rec, augmentation_seed(config.seed, epoch, i))?;
                    Ok((a.ground.into_grid(), a.satellite.into_grid()))
                })
                .into_iter()
                .collect::<Result<_>>()?;
            let ground: Vec<&Grid<f32>> = pairs.iter().map(|p| &p.0).collect();
            let satellite: Vec<&Grid<f32>> = pairs.iter().map(|p| &p.1).collect();
            let lr = schedule.lr(step)?;
            let loss = match state.step(&ground, &satellite, t.direction, lr, &exec) {
                Ok(l) => l,
                Err(clnet_core::Error::Numeric(_)) => return Err(Error::Divergence { step, loss: f64::NAN }),
                Err(e) => return Err(e.into()),
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    loss: loss as f64,
                });
            }
            history.push(LossRecord { step, loss, lr });
            sum += loss as f64;
            step += 1;
        }
        let summary = EpochSummary {
            epoch,
            mean_loss: sum / steps_per_epoch as f64,
            step,
        };
        on_epoch(&summary, &state.model)?;
        epochs.push(summary);
    }
    let checkpoint = Checkpoint::new(config.clone(), step as u64, &state.model, state.log_tau);
    Ok(TrainOutcome {
        checkpoint,
        history,
        epochs,
    })
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    s
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(loss_csv(history).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use clnet_core::synth::{PairMode, RenderSizes, SceneParams, Split};

    fn tiny(epochs: usize) -> (RunConfig, PairDataset) {
        let mut cfg = RunConfig::default();
        cfg.train.epochs = epochs;
        cfg.train.batch_size = 4;
        cfg.train.base_lr = 0.002;
        cfg.train.threads = 1;
        cfg.data = DataConfig::Synthetic {
            seed: 0,
            train_pairs: 8,
            eval_pairs: 4,
            mode: PairMode::CenterAligned,
            scene: SceneParams::default(),
        };
        let data = PairDataset::synthetic(
            0,
            Split::Train,
            PairMode::CenterAligned,
            8,
            RenderSizes::default(),
            SceneParams::default(),
        )
        .unwrap();
        (cfg, data)
    }

    #[test]
    fn loss_decreases_over_fifty_steps() {
        let (mut cfg, data) = tiny(25);
        cfg.train.augment = false;
        let out = train(&cfg, &data, |_, _| Ok(())).unwrap();
        assert_eq!(out.history.len(), 50);
        let head: f32 = out.history[..10].iter().map(|r| r.loss).sum();
        let tail: f32 = out.history[40..].iter().map(|r| r.loss).sum();
        assert!(tail < head, "{head} -> {tail}");
        assert_eq!(out.checkpoint.step, 50);
    }

    #[test]
    fn thread_count_does_not_change_losses() {
        let (mut cfg, data) = tiny(2);
        let a = train(&cfg, &data, |_, _| Ok(())).unwrap();
        cfg.train.threads = 3;
        let b = train(&cfg, &data, |_, _| Ok(())).unwrap();
        assert_eq!(loss_csv(&a.history), loss_csv(&b.history));
    }

    #[test]
    fn dataset_smaller_than_batch() {
        let (mut cfg, data) = tiny(1);
        cfg.train.batch_size = 16;
        cfg.data = DataConfig::Directory {
            train_manifest: "unused.csv".into(),
            eval_manifest: None,
        };
        let err = train(&cfg, &data, |_, _| Ok(())).unwrap_err().to_string();
        assert!(err.contains("fewer than the batch size"), "{err}");
    }

    #[test]
    fn divergence_reports_the_step() {
        let (mut cfg, data) = tiny(1);
        cfg.train.base_lr = 1e30;
        cfg.train.warmup_steps = Some(0);
        cfg.train.augment = false;
        match train(&cfg, &data, |_, _| Ok(())) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            Err(Error::Core(clnet_core::Error::DegenerateEmbedding { .. })) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
