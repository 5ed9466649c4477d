//! One optimization step over a batch of ground/satellite pairs.
//!
//! Per-sample forward and backward passes go through a [`BatchExecutor`],
//! which may run them in parallel. Per-sample gradients are always reduced
//! in index order, so the result is bitwise independent of the executor.

use alloc::vec::Vec;

use crate::encoder::BranchParams;
use crate::error::{Error, Result};
use crate::grid::{Grid, ViewId};
use crate::model::{Embedding, Model, Params, ViewTrace, WeightGrads};
use crate::objective::{info_nce_with_grad, similarity_matrix, Direction};
use crate::optim::{AdamW, AdamWConfig, Slot};
use crate::scalar::Scalar;

/// Runs `f(0..n)` and returns the results in index order.
pub trait BatchExecutor {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub direction: Direction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            direction: Direction::Symmetric,
        }
    }
}

/// Loss and gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients<T> {
    pub loss: T,
    pub grads: Params<T>,
    /// `∂L/∂log τ`
    pub d_log_tau: T,
}

/// Forward, InfoNCE and backward over `ground[i] ↔ satellite[i]` pairs.
pub fn batch_gradients<T: Scalar, E: BatchExecutor>(
    model: &Model<T>,
    ground: &[&Grid<T>],
    satellite: &[&Grid<T>],
    tau: T,
    direction: Direction,
    exec: &E,
) -> Result<BatchGradients<T>> {
    let b = ground.len();
    if b != satellite.len() {
        return Err(Error::parameter("ground and satellite batches differ in size"));
    }
    if b < 2 {
        return Err(Error::parameter("a contrastive batch needs at least 2 pairs"));
    }
    let maps = model.prepare_maps()?;
    let traces: Vec<Result<ViewTrace<T>>> = exec.map(2 * b, |k| {
        if k < b {
            model.forward_traced(ground[k], ViewId::Ground, &maps)
        } else {
            model.forward_traced(satellite[k - b], ViewId::Satellite, &maps)
        }
    });
    let traces: Vec<ViewTrace<T>> = traces.into_iter().collect::<Result<_>>()?;
    let eg: Vec<Embedding<T>> = traces[..b].iter().map(|t| t.embedding.clone()).collect();
    let es: Vec<Embedding<T>> = traces[b..].iter().map(|t| t.embedding.clone()).collect();
    let sim = similarity_matrix(&eg, &es)?;
    let lg = info_nce_with_grad(&sim, tau, direction)?;
    let dim = model.embedding_dim();

    // dE_g = dM · E_s, dE_s = dMᵀ · E_g
    let d_emb = |k: usize| -> Vec<T> {
        let mut d = alloc::vec![T::zero(); dim];
        if k < b {
            for j in 0..b {
                let g = lg.d_sim.get(k, j);
                for (dv, sv) in d.iter_mut().zip(es[j].as_slice()) {
                    *dv = *dv + g * *sv;
                }
            }
        } else {
            let s = k - b;
            for i in 0..b {
                let g = lg.d_sim.get(i, s);
                for (dv, gv) in d.iter_mut().zip(eg[i].as_slice()) {
                    *dv = *dv + g * *gv;
                }
            }
        }
        d
    };

    let template = WeightGrads::zeros(&maps);
    let per_sample: Vec<(BranchParams<T>, WeightGrads<T>)> = exec.map(2 * b, |k| {
        let trace = &traces[k];
        let mut bg = model.params.branch(trace.view).zeros_like();
        let mut wg = template.clone();
        model.backward_view(trace, &maps, &d_emb(k), &mut bg, &mut wg);
        (bg, wg)
    });

    let mut grads = model.params.zeros_like();
    let mut weight_grads = template;
    for (k, (bg, wg)) in per_sample.iter().enumerate() {
        let view = if k < b { ViewId::Ground } else { ViewId::Satellite };
        let target = grads.branch_mut(view);
        for (ts, ss) in target.stages.iter_mut().zip(&bg.stages) {
            for (a, x) in ts.weight.iter_mut().zip(&ss.weight) {
                *a = *a + *x;
            }
            for (a, x) in ts.bias.iter_mut().zip(&ss.bias) {
                *a = *a + *x;
            }
        }
        weight_grads.add_assign(wg);
    }
    model.backward_maps(&maps, &weight_grads, &mut grads);
    Ok(BatchGradients {
        loss: lg.loss,
        grads,
        d_log_tau: lg.d_tau * tau,
    })
}

/// Model parameters plus optimizer state (and optionally a learnable log-temperature).
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub log_tau: T,
    pub learnable_tau: bool,
    optimizer: AdamW<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: Model<T>, tau: f64, learnable_tau: bool, adamw: AdamWConfig) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::parameter("temperature must be positive"));
        }
        let mut sizes: Vec<usize> = model.params.tensors().iter().map(|t| t.data.len()).collect();
        if learnable_tau {
            sizes.push(1);
        }
        Ok(TrainState {
            model,
            log_tau: T::cast(num_traits::Float::ln(tau)),
            learnable_tau,
            optimizer: AdamW::new(adamw, &sizes),
        })
    }

    pub fn tau(&self) -> T {
        self.log_tau.exp()
    }

    /// One AdamW step on one batch; returns the batch loss.
    pub fn step<E: BatchExecutor>(
        &mut self,
        ground: &[&Grid<T>],
        satellite: &[&Grid<T>],
        direction: Direction,
        lr: f64,
        exec: &E,
    ) -> Result<T> {
        let bg = batch_gradients(&self.model, ground, satellite, self.tau(), direction, exec)?;
        let d_log_tau = [bg.d_log_tau];
        let mut log_tau = [self.log_tau];
        {
            let grads = bg.grads.tensors();
            let mut slots: Vec<Slot<'_, T>> = self
                .model
                .params
                .tensors_mut()
                .into_iter()
                .zip(grads.iter())
                .map(|(p, g)| Slot {
                    param: p.data,
                    grad: g.data,
                    decay: true,
                })
                .collect();
            if self.learnable_tau {
                slots.push(Slot {
                    param: &mut log_tau,
                    grad: &d_log_tau,
                    decay: false,
                });
            }
            self.optimizer.step(&mut slots, lr);
        }
        self.log_tau = log_tau[0];
        Ok(bg.loss)
    }
}
