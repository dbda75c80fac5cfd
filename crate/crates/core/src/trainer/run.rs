use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augview::{generate_views, ViewSet};
use crate::diffcore::Tensor;
use crate::distill::{step_loss, DistillState, StepLoss};
use crate::error::{Error, Result};
use crate::pointcore::PointCloud;
use crate::sched::{AdamW, ScheduleSet, ScheduleValues};
use crate::trainer::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
use crate::trainer::config::TrainConfig;
use crate::trainer::metrics::{read_metrics, write_metrics, StepMetrics};

const METRICS_FILE: &str = "metrics.ndjson";
const FINAL_CHECKPOINT: &str = "final.sck";

/// Result of a finished (or stopped) run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Records of every step run by this call, before `log_every` thinning.
    pub metrics: Vec<StepMetrics>,
    pub final_checkpoint_path: Option<PathBuf>,
}

/// Owns the run state; [`Trainer::step`] is the only mutator.
pub struct Trainer {
    cfg: TrainConfig,
    scenes: Arc<[PointCloud]>,
    schedules: ScheduleSet,
    state: DistillState,
    optimizer: AdamW,
    hash: String,
    out_dir: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
    logged: Vec<StepMetrics>,
}

fn stream(seed: u64, stream: u64, word: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word as u128 * 2);
    rng.next_u64()
}

impl Trainer {
    /// Fresh run over `scenes`. With `out_dir`, checkpoints and the metrics
    /// log are written there.
    pub fn new(
        cfg: TrainConfig,
        scenes: Arc<[PointCloud]>,
        out_dir: Option<PathBuf>,
    ) -> Result<Trainer> {
        cfg.validate()?;
        let state = DistillState::init(&cfg.encoder, &cfg.head, cfg.seed)?;
        let optimizer = AdamW::new(&state.student, cfg.optimizer);
        Trainer::assemble(cfg, scenes, state, optimizer, out_dir)
    }

    /// Continues from `ck`; the trajectory-relevant config must hash equal.
    pub fn from_checkpoint(
        ck: Checkpoint,
        cfg: TrainConfig,
        scenes: Arc<[PointCloud]>,
        out_dir: Option<PathBuf>,
    ) -> Result<Trainer> {
        cfg.validate()?;
        let hash = cfg.hash(scenes.len());
        if hash != ck.config_hash {
            return Err(Error::Config(format!(
                "checkpoint was written by a different configuration or dataset (hash {} vs {})",
                ck.config_hash, hash
            )));
        }
        if ck.rng
            != (RngState {
                seed: cfg.seed,
                step: ck.state.step,
            })
        {
            return Err(Error::Config(
                "checkpoint RNG position does not match its step".into(),
            ));
        }
        let mut t = Trainer::assemble(cfg, scenes, ck.state, ck.optimizer, out_dir)?;
        if let Some(dir) = &t.out_dir {
            let path = dir.join(METRICS_FILE);
            if path.exists() {
                let step = t.state.step;
                t.logged = read_metrics(&path)?
                    .into_iter()
                    .filter(|m| m.step < step)
                    .collect();
            }
        }
        Ok(t)
    }

    fn assemble(
        cfg: TrainConfig,
        scenes: Arc<[PointCloud]>,
        state: DistillState,
        optimizer: AdamW,
        out_dir: Option<PathBuf>,
    ) -> Result<Trainer> {
        if scenes.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        for (ramp, epochs) in cfg.schedules.clamped_ramps(cfg.total_epochs) {
            log::warn!(
                "{epochs}-epoch {ramp} does not fit a {}-epoch run; using half the run",
                cfg.total_epochs
            );
        }
        Ok(Trainer {
            schedules: cfg.schedules.build(cfg.total_epochs)?,
            hash: cfg.hash(scenes.len()),
            cfg,
            scenes,
            state,
            optimizer,
            out_dir,
            last_checkpoint: None,
            logged: Vec::new(),
        })
    }

    pub fn state(&self) -> &DistillState {
        &self.state
    }

    pub fn step_index(&self) -> u64 {
        self.state.step
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg.total_steps(self.scenes.len())
    }

    /// Step at which this run stops.
    pub fn stop_step(&self) -> u64 {
        let total = self.total_steps();
        self.cfg.max_steps.map_or(total, |m| m.min(total))
    }

    /// Scheduled values at `step`; the final step sits at the end of every
    /// schedule.
    pub fn schedule_at(&self, step: u64) -> Result<ScheduleValues> {
        let last = self.cfg.schedule_horizon(self.scenes.len());
        self.schedules.values_at(step.min(last), last)
    }

    /// Scene indices of the batch at `step`: an epoch-seeded permutation cut
    /// into consecutive slices, the last possibly short.
    pub fn batch_at(&self, step: u64) -> Vec<usize> {
        let n = self.scenes.len();
        let spe = self.cfg.steps_per_epoch(n);
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x0bad_5eed);
        rng.set_stream(epoch);
        perm.shuffle(&mut rng);
        let lo = pos * self.cfg.batch_size;
        perm[lo..(lo + self.cfg.batch_size).min(n)].to_vec()
    }

    /// View set for batch slot `slot` at `step`.
    pub fn views_at(&self, step: u64, slot: usize) -> Result<ViewSet> {
        let batch = self.batch_at(step);
        let scene = batch.get(slot).ok_or_else(|| {
            Error::invalid(format!("batch at step {step} has {} slots", batch.len()))
        })?;
        let v = self.schedule_at(step)?;
        let seed = stream(self.cfg.seed, step, slot as u64);
        generate_views(
            &self.scenes[*scene],
            &self.cfg.views,
            &self.cfg.masking.params(&v),
            seed,
        )
    }

    /// Runs one optimization step and returns its metrics.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.state.step;
        let v = self.schedule_at(step)?;
        let slots = self.batch_at(step).len();
        let state = &self.state;
        let this = &*self;
        let results: Vec<Result<StepLoss>> = (0..slots)
            .into_par_iter()
            .map(|slot| {
                let views = this.views_at(step, slot)?;
                step_loss(state, &views, v.tpt)
            })
            .collect();
        let mut losses = Vec::with_capacity(slots);
        for r in results {
            match r {
                Ok(l) => losses.push(l),
                Err(Error::Numeric(msg)) => {
                    let last = self
                        .last_checkpoint
                        .as_ref()
                        .map_or_else(|| "none written".to_string(), |p| p.display().to_string());
                    return Err(Error::Numeric(format!(
                        "step {step}: {msg}; last good checkpoint: {last}"
                    )));
                }
                Err(e) => return Err(e),
            }
        }

        let inv = 1.0 / slots as f64;
        let grads = mean_grads(&losses, self.state.student.len(), inv);
        let n_pairs = losses[0].pair_losses.len();
        let metrics = StepMetrics {
            step,
            loss: losses.iter().map(|l| l.loss).sum::<f64>() * inv,
            pair_losses: (0..n_pairs)
                .map(|p| losses.iter().map(|l| l.pair_losses[p]).sum::<f64>() * inv)
                .collect(),
            pair_matches: (0..n_pairs)
                .map(|p| losses.iter().map(|l| l.pair_matches[p]).sum())
                .collect(),
            koleo: losses.iter().map(|l| l.koleo).sum::<f64>() * inv,
            lr: v.lr,
            wd: v.wd,
            tpt: v.tpt,
            m: v.m,
            mask_ratio: v.mask_ratio,
            mask_size: v.mask_size,
        };

        self.optimizer.update(
            &mut self.state.student,
            &grads,
            v.lr,
            v.wd,
            self.cfg.encoder.n_stages(),
            self.schedules.layer_lr_decay,
        )?;
        self.state.ema_update(v.m)?;
        self.state.step += 1;

        let done = self.state.step;
        if metrics.step.is_multiple_of(self.cfg.log_every) || done == self.stop_step() {
            self.logged.push(metrics.clone());
        }
        if self.cfg.checkpoint_every > 0
            && done.is_multiple_of(self.cfg.checkpoint_every)
            && done < self.stop_step()
        {
            self.write_checkpoint(&format!("step_{done:06}.sck"))?;
        }
        log::debug!(
            "step {step} loss {:.6} koleo {:.6}",
            metrics.loss,
            metrics.koleo
        );
        Ok(metrics)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            config_hash: self.hash.clone(),
            n_scenes: self.scenes.len(),
            rng: RngState {
                seed: self.cfg.seed,
                step: self.state.step,
            },
            state: self.state.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    fn write_checkpoint(&mut self, file: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = self.out_dir.clone() else {
            return Ok(None);
        };
        let path = dir.join(file);
        save_checkpoint(&self.checkpoint(), &path)?;
        write_metrics(&dir.join(METRICS_FILE), &self.logged)?;
        self.last_checkpoint = Some(path.clone());
        Ok(Some(path))
    }

    /// Steps until the stop step, then writes the final checkpoint.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let stop = self.stop_step();
        let mut metrics = Vec::with_capacity(stop.saturating_sub(self.state.step) as usize);
        while self.state.step < stop {
            let m = self.step()?;
            if m.step % self.cfg.log_every == 0 {
                log::info!("step {}/{stop} loss {:.5}", m.step + 1, m.loss);
            }
            metrics.push(m);
        }
        let final_checkpoint_path = self.write_checkpoint(FINAL_CHECKPOINT)?;
        Ok(TrainOutcome {
            checkpoint: self.checkpoint(),
            metrics,
            final_checkpoint_path,
        })
    }
}

/// Fixed-order sum of per-scene gradients, scaled by `inv`.
fn mean_grads(losses: &[StepLoss], n: usize, inv: f64) -> Vec<Option<Tensor>> {
    let mut acc: Vec<Option<Tensor>> = vec![None; n];
    for l in losses {
        for (a, g) in acc.iter_mut().zip(&l.grads) {
            match (a.as_mut(), g) {
                (Some(a), Some(g)) => a.add_assign(g),
                (None, Some(g)) => *a = Some(g.clone()),
                _ => {}
            }
        }
    }
    for g in acc.iter_mut().flatten() {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    acc
}

/// Trains from scratch over `scenes`.
pub fn train(
    cfg: &TrainConfig,
    scenes: Arc<[PointCloud]>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone(), scenes, out_dir.map(Path::to_path_buf))?.run()
}

/// Continues the run stored at `checkpoint` under `cfg`.
pub fn resume(
    checkpoint: &Path,
    cfg: &TrainConfig,
    scenes: Arc<[PointCloud]>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let ck = load_checkpoint(checkpoint)?;
    Trainer::from_checkpoint(ck, cfg.clone(), scenes, out_dir.map(Path::to_path_buf))?.run()
}
