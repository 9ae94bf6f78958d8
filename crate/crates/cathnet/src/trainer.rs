//! The training loop.

use std::fs;
use std::path::{Path, PathBuf};

use cathnet_core::losses::{bce_iou_seg_loss, combine_losses, focal_center_loss, size_l1_loss, LossError};
use cathnet_core::metrics::EvalReport;
use cathnet_core::model::{ModelError, Network, ParamGroup, ParamStore};
use cathnet_core::optim::AdamW;
use cathnet_core::pipeline::{sample_measures, Batch, BatchError, Predictions};
use cathnet_core::prioritizer::{
    compute_sample_kpis, masked_task_loss, record_difficulty_curves, Prioritizer, Strategy, Task,
};
use cathnet_core::rng::{derive_seed, stream_rng, Stream};
use cathnet_core::synth::{augment, SampleRecord};
use cathnet_core::tensor::ShapeError;
use cathnet_core::{Tape, Tensor, Var};
use rand::seq::SliceRandom;

use crate::checkpoint::{Checkpoint, CheckpointError, LoopState};
use crate::config::RunConfig;
use crate::dataset::{generate_records, read_split, DatasetError, Split};
use crate::evaluate::{evaluate_model, EvalError};
use crate::report::{self, CurveCsv, TrainLog};

/// Consecutive non-finite iterations tolerated before giving up.
pub const MAX_NONFINITE_STREAK: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("training diverged: {0} consecutive non-finite losses")]
    Diverged(u32),
    #[error("checkpoint was written by config {found}, current config is {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("the training split is empty")]
    EmptyTrainSet,
    #[error("{0}")]
    Artifact(String),
}

/// Train/val/test records.
#[derive(Debug, Clone, Default)]
pub struct DataSplits {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl DataSplits {
    pub fn load(cfg: &RunConfig) -> Result<Self, TrainError> {
        match &cfg.data.path {
            Some(dir) => Ok(Self {
                train: read_split(dir, Split::Train)?,
                val: read_split(dir, Split::Val)?,
                test: read_split(dir, Split::Test)?,
            }),
            None => {
                let (d, g) = (&cfg.data, &cfg.data.generator);
                let gen = |start, n| generate_records(cfg.seed, start, n, g).map_err(DatasetError::from);
                Ok(Self { train: gen(0, d.train)?, val: gen(d.train, d.val)?, test: gen(d.train + d.val, d.test)? })
            }
        }
    }
}

/// What happened in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub iteration: u64,
    /// `None` when the iteration was skipped for a non-finite loss.
    pub total: Option<f64>,
    pub detection: Option<f64>,
    pub segmentation: Option<f64>,
    pub weights: [f64; 2],
    pub batch_kpi: [Option<f64>; 2],
    pub selected: [usize; 2],
}

/// Indices of the training samples for `iteration`: consecutive slices of
/// a fresh permutation per epoch.
pub fn batch_indices(seed: u64, iteration: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut cache: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|j| {
            let pos = iteration * batch as u64 + j;
            let epoch = pos / n as u64;
            if cache.as_ref().is_none_or(|c| c.0 != epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut stream_rng(seed, Stream::Batch, epoch));
                cache = Some((epoch, perm));
            }
            cache.as_ref().unwrap().1[(pos % n as u64) as usize]
        })
        .collect()
}

fn epoch_of(iteration: u64, n: usize, batch: usize) -> u64 {
    iteration * batch as u64 / n as u64
}

pub struct Trainer {
    pub config: RunConfig,
    pub config_hash: String,
    pub network: Network,
    pub params: ParamStore,
    pub optimizer: AdamW,
    pub prioritizer: Prioritizer,
    /// Completed iterations.
    pub iteration: u64,
    pub loop_state: LoopState,
    pub data: DataSplits,
}

impl Trainer {
    pub fn new(config: RunConfig, data: DataSplits) -> Result<Self, TrainError> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(TrainError::EmptyTrainSet);
        }
        let init_seed = derive_seed(config.seed, Stream::Init, 0);
        let (network, params) = Network::new(config.model.clone(), init_seed)?;
        let optimizer = AdamW::new(config.optim.adamw(), &params.tensors());
        Ok(Self {
            config_hash: config.hash(),
            prioritizer: Prioritizer::new(config.prioritization),
            config,
            network,
            params,
            optimizer,
            iteration: 0,
            loop_state: LoopState::default(),
            data,
        })
    }

    /// Continue from a checkpoint taken under the same config.
    pub fn resume(config: RunConfig, data: DataSplits, ckpt: Checkpoint) -> Result<Self, TrainError> {
        let mut t = Self::new(config, data)?;
        if ckpt.config_hash != t.config_hash {
            return Err(TrainError::ConfigMismatch { expected: t.config_hash, found: ckpt.config_hash });
        }
        t.params.set_tensors(ckpt.params.tensors());
        t.optimizer = ckpt.optimizer;
        t.prioritizer = ckpt.prioritizer;
        t.iteration = ckpt.iteration;
        t.loop_state = ckpt.loop_state;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            iteration: self.iteration,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            prioritizer: self.prioritizer.clone(),
            loop_state: self.loop_state.clone(),
        }
    }

    fn trainable(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Shared => true,
            ParamGroup::Detection => self.config.tasks.has(Task::Detection),
            ParamGroup::Segmentation => self.config.tasks.has(Task::Segmentation),
        }
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<StepLog, TrainError> {
        let cfg = &self.config;
        let n = self.data.train.len();
        let b = cfg.optim.batch_size;
        let it = self.iteration;
        if cfg.prioritization.strategy == Strategy::FixedFraction
            && it > 0
            && epoch_of(it, n, b) != epoch_of(it - 1, n, b)
        {
            self.prioritizer.state.rank_epoch(cfg.prioritization.retention_rho);
        }

        let ids = batch_indices(cfg.seed, it, n, b);
        let records: Vec<SampleRecord> = ids
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let s = derive_seed(cfg.seed, Stream::Augment, it * b as u64 + j as u64);
                augment(&self.data.train[i], s, &cfg.data.augment)
            })
            .collect();
        let refs: Vec<&SampleRecord> = records.iter().collect();
        let batch = Batch::new(&refs, &ids)?;

        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, |g| self.trainable(g));
        let image = tape.constant(batch.images.clone());
        let out = self.network.forward(&mut tape, &vars, image)?;

        let tasks = cfg.tasks;
        let mut focal_values = None;
        let det = if tasks.has(Task::Detection) {
            let focal =
                focal_center_loss(&mut tape, out.center_logits, &batch.heatmap, &batch.center_mask, &cfg.losses)?;
            let (size, _) = size_l1_loss(&mut tape, out.size_pred, &batch.size, &batch.center_mask)?;
            focal_values = Some(tape.value(focal).data().to_vec());
            let size = tape.scale(size, cfg.losses.lambda_size);
            Some(tape.add(focal, size)?)
        } else {
            None
        };
        let seg = if tasks.has(Task::Segmentation) {
            Some(bce_iou_seg_loss(&mut tape, out.seg_logits, &batch.masks)?)
        } else {
            None
        };

        let pred = Predictions::from_output(&tape, &out);
        let measures = sample_measures(&batch, &pred, focal_values.as_deref(), &cfg.eval.decode)?;
        let diag = batch.diagonal();
        let kpis: Vec<[Option<f64>; 2]> = measures
            .iter()
            .map(|m| {
                let mut k = compute_sample_kpis(m, &cfg.prioritization, diag);
                for t in Task::ALL {
                    if !tasks.has(t) {
                        k[t.index()] = None;
                    }
                }
                k
            })
            .collect();
        let decision = self.prioritizer.step(&ids, &kpis, tasks.active());

        let mut log = StepLog {
            iteration: it + 1,
            total: None,
            detection: None,
            segmentation: None,
            weights: decision.weights,
            batch_kpi: decision.batch_kpi,
            selected: [0, 1].map(|t| decision.delta[t].iter().filter(|&&d| d > 0.0).count()),
        };
        let mut masked = |l: Option<Var>, task: Task| -> Result<Option<(Var, f64)>, TrainError> {
            l.map(|l| {
                let m = masked_task_loss(&mut tape, l, &decision.delta[task.index()])?;
                Ok((m, decision.weights[task.index()]))
            })
            .transpose()
        };
        let det_term = masked(det, Task::Detection)?;
        let seg_term = masked(seg, Task::Segmentation)?;
        log.detection = det_term.map(|(v, _)| tape.value(v).item());
        log.segmentation = seg_term.map(|(v, _)| tape.value(v).item());

        self.iteration += 1;
        let total = match combine_losses(&mut tape, det_term, seg_term) {
            Ok(v) if tape.value(v).all_finite() => v,
            Ok(_) | Err(LossError::NonFinite(_)) => {
                self.loop_state.nonfinite_streak += 1;
                self.loop_state.skipped_total += 1;
                log::warn!(
                    "iteration {}: non-finite loss, step skipped ({} in a row, {} total)",
                    it + 1,
                    self.loop_state.nonfinite_streak,
                    self.loop_state.skipped_total
                );
                if self.loop_state.nonfinite_streak >= MAX_NONFINITE_STREAK {
                    return Err(TrainError::Diverged(self.loop_state.nonfinite_streak));
                }
                return Ok(log);
            }
            Err(e) => return Err(e.into()),
        };
        self.loop_state.nonfinite_streak = 0;
        log.total = Some(tape.value(total).item());
        tape.backward(total)?;

        let active: Vec<bool> = self.params.iter().map(|p| self.trainable(p.group)).collect();
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(self.params.iter())
            .zip(&active)
            .map(|((&v, p), &a)| if a { tape.grad_tensor(v) } else { Tensor::zeros(p.tensor.shape()) })
            .collect();
        let mut tensors = self.params.tensors();
        self.optimizer.step(&mut tensors, &grads, &active);
        self.params.set_tensors(tensors);
        Ok(log)
    }

    pub fn evaluate(&self, records: &[SampleRecord]) -> Result<EvalReport, EvalError> {
        evaluate_model(&self.network, &self.params, records, &self.config.eval.decode, self.config.optim.batch_size)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<StepLog>,
    pub report: EvalReport,
    pub best_val: Option<f64>,
    pub output_dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.into(), source }
}

/// Full run: train, validate periodically, keep the best checkpoint, write
/// the artifacts, and report on the test split.
pub fn train(config: RunConfig, resume: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let data = DataSplits::load(&config)?;
    train_with_data(config, data, resume)
}

pub fn train_with_data(config: RunConfig, data: DataSplits, resume: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    fs::write(out.join("config.toml"), config.to_toml()).map_err(io_err(&out))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, data, Checkpoint::load(path)?)?,
        None => Trainer::new(config, data)?,
    };
    let start = trainer.iteration;
    let cfg = trainer.config.clone();
    let art = |e: report::ArtifactError| TrainError::Artifact(e.to_string());
    let mut curves = CurveCsv::open(&out.join("difficulty_curves.csv"), start).map_err(art)?;
    let mut train_log = TrainLog::open(&out.join("train_log.csv"), start).map_err(art)?;
    let tracked: Vec<usize> = (0..cfg.curves.tracked.min(trainer.data.train.len())).collect();
    let best_path = out.join("best.ckpt");
    let mut logs = Vec::new();

    while trainer.iteration < cfg.optim.iterations {
        let log = trainer.step()?;
        train_log.append(&log).map_err(art)?;
        let it = trainer.iteration;
        if cfg.curves.every > 0 && it % cfg.curves.every == 0 {
            record_difficulty_curves(&trainer.prioritizer.state, &tracked, cfg.tasks.active(), &mut curves);
        }
        if cfg.eval.validate_every > 0 && it % cfg.eval.validate_every == 0 && !trainer.data.val.is_empty() {
            let r = trainer.evaluate(&trainer.data.val)?;
            log::info!(
                "iteration {it}: val AP {:.2}, mean J {:.2}, mean KPI {:.2}",
                100.0 * r.ap,
                100.0 * r.mean_j,
                100.0 * r.mean_kpi
            );
            if trainer.loop_state.best_score.is_none_or(|b| r.mean_kpi > b) {
                trainer.loop_state.best_score = Some(r.mean_kpi);
                trainer.checkpoint().save(&best_path)?;
            }
        }
        if cfg.eval.checkpoint_every > 0 && it % cfg.eval.checkpoint_every == 0 {
            trainer.checkpoint().save(&out.join("last.ckpt"))?;
        }
        if it % 50 == 0 {
            log::info!("iteration {it}: loss {:?}, weights {:?}", log.total, log.weights);
        }
        logs.push(log);
    }
    curves.flush().map_err(art)?;
    train_log.flush().map_err(art)?;
    trainer.checkpoint().save(&out.join("last.ckpt"))?;

    // report on the test split with the best validated parameters
    let final_params = trainer.params.clone();
    if trainer.loop_state.best_score.is_some() && best_path.exists() {
        trainer.params = Checkpoint::load(&best_path)?.params;
    }
    let eval_set = if trainer.data.test.is_empty() { &trainer.data.val } else { &trainer.data.test };
    let report = trainer.evaluate(eval_set)?;
    trainer.params = final_params;
    report::write_report(&out, &report, "test", trainer.iteration).map_err(art)?;
    Ok(TrainOutcome { logs, report, best_val: trainer.loop_state.best_score, output_dir: out })
}
