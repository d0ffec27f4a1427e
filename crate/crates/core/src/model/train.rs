//! Two-stream self-supervised training loop.

use rand::seq::SliceRandom;

use super::{backward, ema_update, forward, lr_at, sgd_step, tau_at, NetSpec, OptimState, ParamSet, Stage};
use crate::augment::{sample_clip_pair, spatial_augment};
use crate::config::ExperimentConfig;
use crate::error::{invalid, Error, Result};
use crate::objectives::{byol_loss, infonce_loss, vicreg_loss, LossReport, Objective};
use crate::rng::{stream, Domain};
use crate::schedule::{batch_pair, ViewPairSpec};
use crate::video::{diff_order, truncate_frames, ClipBatch, VideoTensor};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub pair: ViewPairSpec,
    pub lr: f64,
    pub tau: f64,
    pub loss: f64,
    pub terms: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: NetSpec,
    pub params: ParamSet,
    pub target: Option<ParamSet>,
    pub log: Vec<StepLog>,
}

/// Builds the two encoder inputs for one batch: sample a clip pair per
/// video, augment each clip, differentiate to the scheduled orders, and
/// truncate every view to `clip.frames` frames.
pub fn build_views(
    videos: &[VideoTensor],
    items: &[usize],
    cfg: &ExperimentConfig,
    pair: ViewPairSpec,
    epoch: usize,
    batch: usize,
) -> Result<(ClipBatch, ClipBatch)> {
    let mut a = Vec::with_capacity(items.len());
    let mut b = Vec::with_capacity(items.len());
    for (slot, &vi) in items.iter().enumerate() {
        let key = [epoch as u64, batch as u64, slot as u64];
        let mut rng = stream(cfg.seed, Domain::ClipSample, &key);
        let (ca, cb) = sample_clip_pair(&videos[vi], cfg.clip.sampled_frames(), cfg.clip.stride, &mut rng)?;
        for (view, (clip, order, out)) in [(ca, pair.order_a(), &mut a), (cb, pair.order_b(), &mut b)].into_iter().enumerate() {
            let mut rng = stream(cfg.seed, Domain::Augment, &[key[0], key[1], key[2], view as u64]);
            let (aug, _) = spatial_augment(&clip, &cfg.augment, &mut rng)?;
            out.push(truncate_frames(&diff_order(&aug, order)?, cfg.clip.frames)?);
        }
    }
    Ok((ClipBatch::new(a)?, ClipBatch::new(b)?))
}

/// Loss for one batch of view pairs and its gradient w.r.t. the online
/// parameters. BYOL compares the online prediction of the first view with
/// the target projection of the second; the target receives no gradient.
pub fn loss_and_grads(
    cfg: &ExperimentConfig,
    spec: &NetSpec,
    online: &ParamSet,
    target: Option<&ParamSet>,
    xa: &ClipBatch,
    xb: &ClipBatch,
) -> Result<(LossReport, ParamSet)> {
    match cfg.objective {
        Objective::Simclr | Objective::Vicreg => {
            let (za, ta) = forward(online, spec, xa, Stage::Projection)?;
            let (zb, tb) = forward(online, spec, xb, Stage::Projection)?;
            let report = if cfg.objective == Objective::Simclr {
                infonce_loss(&za, &zb, cfg.loss.temperature)?
            } else {
                vicreg_loss(&za, &zb, &cfg.loss.vicreg())?
            };
            let mut grads = backward(online, &ta, &report.grad_a)?;
            let gb = backward(online, &tb, &report.grad_b)?;
            for (g, h) in grads.values_mut().iter_mut().zip(gb.values()) {
                *g += h;
            }
            Ok((report, grads))
        }
        Objective::Byol => {
            let target = target.ok_or_else(|| Error::Invalid("BYOL needs a target network".into()))?;
            let (za, ta) = forward(online, spec, xa, Stage::Prediction)?;
            let (zb, _) = forward(target, spec, xb, Stage::Projection)?;
            let report = byol_loss(&za, &zb)?;
            let grads = backward(online, &ta, &report.grad_a)?;
            Ok((report, grads))
        }
    }
}

/// Stateful trainer; `train` drives it over every epoch and batch.
pub struct Trainer<'a> {
    videos: &'a [VideoTensor],
    cfg: &'a ExperimentConfig,
    spec: NetSpec,
    params: ParamSet,
    target: Option<ParamSet>,
    optim: OptimState,
    batch_size: usize,
    batches_per_epoch: usize,
    order: Vec<usize>,
    order_epoch: Option<usize>,
    ema_enabled: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(videos: &'a [VideoTensor], cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let first = videos.first().ok_or_else(|| Error::Invalid("training set is empty".into()))?;
        if videos.len() < 2 {
            return invalid("need at least two training videos");
        }
        let spec = cfg.net.spec_for(cfg.objective, first.channels(), cfg.augment.out_height, cfg.augment.out_width);
        let params = ParamSet::init(&spec, cfg.seed);
        let target = (cfg.objective == Objective::Byol).then(|| params.clone());
        let batch_size = cfg.train.batch_size.min(videos.len());
        let batches_per_epoch = videos.len() / batch_size;
        let optim = OptimState::new(&params, cfg.train.epochs * batches_per_epoch);
        Ok(Self {
            videos,
            cfg,
            spec,
            params,
            target,
            optim,
            batch_size,
            batches_per_epoch,
            order: Vec::new(),
            order_epoch: None,
            ema_enabled: true,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn target(&self) -> Option<&ParamSet> {
        self.target.as_ref()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.optim.total_steps
    }

    pub fn set_ema_enabled(&mut self, enabled: bool) {
        self.ema_enabled = enabled;
    }

    fn items(&mut self, epoch: usize, batch: usize) -> &[usize] {
        if self.order_epoch != Some(epoch) {
            let mut order: Vec<usize> = (0..self.videos.len()).collect();
            order.shuffle(&mut stream(self.cfg.seed, Domain::Shuffle, &[epoch as u64]));
            self.order = order;
            self.order_epoch = Some(epoch);
        }
        &self.order[batch * self.batch_size..(batch + 1) * self.batch_size]
    }

    /// Runs one optimization step.
    pub fn step(&mut self, epoch: usize, batch: usize) -> Result<StepLog> {
        let cfg = self.cfg;
        let step = self.optim.step;
        let total = self.optim.total_steps.max(1);
        let pair = batch_pair(cfg.schedule, epoch, batch, cfg.seed, cfg.train.freeze_random_diff);
        let items = self.items(epoch, batch).to_vec();
        let (xa, xb) = build_views(self.videos, &items, cfg, pair, epoch, batch)?;

        let (report, grads) = loss_and_grads(cfg, &self.spec, &self.params, self.target.as_ref(), &xa, &xb)?;
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let warmup = cfg.warmup_epochs() * self.batches_per_epoch;
        let lr = lr_at(step, total, cfg.optim.effective_lr(), warmup);
        let tau = tau_at(step, total, cfg.optim.tau_base);
        sgd_step(&mut self.params, &grads, &mut self.optim, lr, &cfg.optim)?;
        if self.ema_enabled {
            if let Some(target) = self.target.as_mut() {
                ema_update(&self.params, target, tau)?;
            }
        }
        Ok(StepLog { step, epoch, batch, pair, lr, tau, loss: report.total, terms: report.terms })
    }

    pub fn finish(self, log: Vec<StepLog>) -> TrainOutcome {
        TrainOutcome { spec: self.spec, params: self.params, target: self.target, log }
    }
}

/// Full training run over `videos`; deterministic given `cfg.seed`.
pub fn train(videos: &[VideoTensor], cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(videos, cfg)?;
    let mut log = Vec::with_capacity(trainer.total_steps());
    for epoch in 0..cfg.train.epochs {
        for batch in 0..trainer.batches_per_epoch() {
            log.push(trainer.step(epoch, batch)?);
        }
    }
    Ok(trainer.finish(log))
}
