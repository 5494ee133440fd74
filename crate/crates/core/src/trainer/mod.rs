//! Fold training: class-weighted cross-entropy, Adam at a constant rate,
//! patience-based early stopping and best-epoch checkpoints.

mod adam;
mod early_stop;

pub use adam::{Adam, ConstantLr, LrSchedule};
pub use early_stop::{EarlyStopper, StopDecision, StopMetric, MIN_DELTA};

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Partition, SplitAssignment};
use crate::metrics::{self, ConfusionMatrix, MetricsError, PredictionContext, PredictionSet, DEFAULT_TAU};
use crate::models::{init_seed, ArchId, ArchSpec, ModelCheckpoint, ModelError, ModelGraph};
use crate::nn::{weighted_cross_entropy, HasParams, Mode};
use crate::store::EcgRecord;

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_auroc,val_f1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train and validation sets share {0}")]
    PatientLeak(String),
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("record {0} has no binary label")]
    NonBinaryLabel(String),
    #[error("record {record_id} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        record_id: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("training set lacks class {0}; cannot derive class weights")]
    MissingClass(u8),
    #[error("record {0} is not assigned to any fold")]
    NotInFold(String),
    #[error("training configs differ across rates: {0}")]
    NonUniform(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Hyperparameters shared by every rate of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub early_stop_metric: StopMetric,
    /// `(w_norm, w_afib)`; derived from each fold's training set when absent.
    pub class_weights: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            early_stop_metric: StopMetric::ValF1,
            class_weights: None,
            seed: 42,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad("class weights must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ArchId,
    pub fs_hz: u32,
    #[serde(flatten)]
    pub hyper: Hyperparams,
}

impl TrainConfig {
    pub fn new(arch: ArchId, fs_hz: u32, hyper: Hyperparams) -> Self {
        TrainConfig { arch, fs_hz, hyper }
    }
}

/// Refuses configs of one architecture that differ in anything but `fs_hz`.
pub fn ensure_uniform(configs: &[TrainConfig]) -> Result<(), TrainError> {
    let mut seen: BTreeMap<ArchId, &TrainConfig> = BTreeMap::new();
    for c in configs {
        match seen.get(&c.arch) {
            Some(first) if first.hyper != c.hyper => {
                return Err(TrainError::NonUniform(format!(
                    "{} at {} Hz vs {} Hz",
                    c.arch, first.fs_hz, c.fs_hz
                )))
            }
            Some(_) => {}
            None => {
                seen.insert(c.arch, c);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// NaN when the validation set holds a single class.
    pub val_auroc: f64,
    pub val_f1: f64,
}

pub fn epochs_to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(EPOCH_CSV_HEADER);
    out.push('\n');
    for l in logs {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            l.epoch, l.train_loss, l.val_loss, l.val_auroc, l.val_f1
        );
    }
    out
}

/// A prepared recording ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub record_id: String,
    pub patient_id: String,
    pub label: u8,
    /// `[leads, T]`
    pub signal: Array2<f32>,
}

impl Sample {
    pub fn from_record(record: &EcgRecord) -> Result<Self, TrainError> {
        let label = record
            .label
            .class_index()
            .ok_or_else(|| TrainError::NonBinaryLabel(record.record_id.clone()))?;
        Ok(Sample {
            record_id: record.record_id.clone(),
            patient_id: record.patient_id.clone(),
            label,
            signal: record.leads.clone(),
        })
    }
}

fn stack(samples: &[&Sample]) -> Array3<f64> {
    let (c, t) = samples[0].signal.dim();
    let mut x = Array3::zeros((samples.len(), c, t));
    for (mut dst, s) in x.outer_iter_mut().zip(samples) {
        dst.zip_mut_with(&s.signal, |d, &v| *d = v as f64);
    }
    x
}

fn check_shapes<'a>(sets: impl IntoIterator<Item = &'a Sample>) -> Result<(), TrainError> {
    let mut expected = None;
    for s in sets {
        let dim = s.signal.dim();
        match expected {
            None => expected = Some(dim),
            Some(e) if e != dim => {
                return Err(TrainError::ShapeMismatch {
                    record_id: s.record_id.clone(),
                    expected: e,
                    actual: dim,
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Fails if any patient or record appears on both sides.
pub fn check_disjoint(train: &[Sample], val: &[Sample]) -> Result<(), TrainError> {
    let patients: HashSet<&str> = train.iter().map(|s| s.patient_id.as_str()).collect();
    let records: HashSet<&str> = train.iter().map(|s| s.record_id.as_str()).collect();
    for s in val {
        if patients.contains(s.patient_id.as_str()) {
            return Err(TrainError::PatientLeak(format!("patient {}", s.patient_id)));
        }
        if records.contains(s.record_id.as_str()) {
            return Err(TrainError::PatientLeak(format!("record {}", s.record_id)));
        }
    }
    Ok(())
}

/// Inverse-frequency weights `n / (2 n_c)`.
pub fn auto_class_weights(samples: &[Sample]) -> Result<[f64; 2], TrainError> {
    let n1 = samples.iter().filter(|s| s.label == 1).count();
    let n0 = samples.len() - n1;
    if n0 == 0 {
        return Err(TrainError::MissingClass(0));
    }
    if n1 == 0 {
        return Err(TrainError::MissingClass(1));
    }
    let n = samples.len() as f64;
    Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
}

/// Eval-mode logits for `samples`, in order.
pub fn predict(graph: &mut ModelGraph, samples: &[Sample], batch_size: usize) -> Result<Vec<[f64; 2]>, ModelError> {
    let mut out = Vec::with_capacity(samples.len());
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let logits = graph.forward(&stack(chunk), Mode::Eval)?;
        out.extend(logits.rows().into_iter().map(|r| [r[0], r[1]]));
    }
    Ok(out)
}

/// One pass over `train` in a shuffled order; returns the sample-weighted
/// mean batch loss.
fn run_epoch(
    graph: &mut ModelGraph,
    opt: &mut Adam,
    train: &[Sample],
    weights: &[f64; 2],
    batch_size: usize,
    shuffle_rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64, TrainError> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(shuffle_rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
        let targets: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
        graph.zero_grad();
        let logits = match graph.forward(&stack(&batch), Mode::Train) {
            Err(ModelError::NonFiniteActivation(_)) => return Err(TrainError::DivergedLoss { epoch }),
            other => other?,
        };
        let (loss, dlogits) = weighted_cross_entropy(&logits, &targets, weights);
        if !loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        graph.backward(&dlogits);
        opt.step(&mut graph.params_mut());
        total += loss * batch.len() as f64;
    }
    Ok(total / train.len() as f64)
}

struct ValScores {
    loss: f64,
    auroc: f64,
    f1: f64,
}

fn score(logits: &[[f64; 2]], samples: &[Sample], weights: &[f64; 2]) -> Result<ValScores, TrainError> {
    let z = Array2::from_shape_fn((logits.len(), 2), |(i, j)| logits[i][j]);
    let targets: Vec<usize> = samples.iter().map(|s| s.label as usize).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let (loss, _) = weighted_cross_entropy(&z, &targets, weights);
    let p1 = logits
        .iter()
        .map(|z| metrics::softmax_prob(z[0], z[1]))
        .collect::<Result<Vec<_>, _>>()?;
    let auroc = match metrics::auroc(&p1, &labels) {
        Ok(a) => a,
        Err(MetricsError::SingleClass) => f64::NAN,
        Err(e) => return Err(e.into()),
    };
    let cm = ConfusionMatrix::from_predictions(&p1, &labels, DEFAULT_TAU);
    let f1 = metrics::classification_metrics(&cm)?.f1;
    Ok(ValScores { loss, auroc, f1 })
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub checkpoint: ModelCheckpoint,
    pub epochs: Vec<EpochLog>,
    /// Validation predictions from the best checkpoint.
    pub validation: PredictionSet,
    pub stopped_early: bool,
}

/// Trains one fold and returns the best epoch's checkpoint, the full epoch
/// log and the checkpoint's validation predictions.
pub fn train_fold(
    config: &TrainConfig,
    fold: usize,
    train: &[Sample],
    val: &[Sample],
) -> Result<FoldResult, TrainError> {
    config.hyper.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    check_disjoint(train, val)?;
    check_shapes(train.iter().chain(val))?;
    let h = &config.hyper;
    let weights = match h.class_weights {
        Some(w) => w,
        None => auto_class_weights(train)?,
    };

    let seed = init_seed(h.seed, config.arch, config.fs_hz, fold);
    let mut graph = ModelGraph::build(ArchSpec::standard(config.arch), seed);
    graph.reseed_dropout(seed.wrapping_add(1));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut opt = Adam::new(h.learning_rate);
    let schedule = ConstantLr;
    let mut stopper = EarlyStopper::new(h.early_stop_metric, h.patience);
    let mut best: Option<ModelCheckpoint> = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=h.max_epochs {
        opt.lr = schedule.lr(h.learning_rate, epoch);
        let train_loss = run_epoch(&mut graph, &mut opt, train, &weights, h.batch_size, &mut shuffle_rng, epoch)?;
        let logits = predict(&mut graph, val, h.batch_size)?;
        let s = score(&logits, val, &weights)?;
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss: s.loss,
            val_auroc: s.auroc,
            val_f1: s.f1,
        };
        log::info!(
            "{}/{}hz fold{fold} epoch {epoch}: train_loss {:.4} val_loss {:.4} val_auroc {:.4} val_f1 {:.4}",
            config.arch,
            config.fs_hz,
            train_loss,
            s.loss,
            s.auroc,
            s.f1
        );
        epochs.push(log);
        let monitored = match h.early_stop_metric {
            StopMetric::ValF1 => s.f1,
            StopMetric::ValLoss => s.loss,
        };
        match stopper.observe(epoch, monitored) {
            StopDecision::Improved => {
                let mut ck = ModelCheckpoint::capture(&graph, config.fs_hz, fold);
                ck.best_epoch = epoch;
                ck.best_val_f1 = s.f1;
                best = Some(ck);
            }
            StopDecision::Stop => {
                stopped_early = epoch < h.max_epochs;
                break;
            }
            StopDecision::Continue => {}
        }
    }

    let checkpoint = best.ok_or(TrainError::DivergedLoss { epoch: 1 })?;
    let mut best_graph = checkpoint.to_graph()?;
    let logits = predict(&mut best_graph, val, h.batch_size)?;
    let validation = PredictionSet::from_logits(
        PredictionContext::Fold {
            arch: config.arch,
            fs_hz: config.fs_hz,
            fold,
        },
        val.iter().map(|s| s.record_id.clone()).collect(),
        logits,
        val.iter().map(|s| s.label).collect(),
    )?;
    Ok(FoldResult {
        fold,
        checkpoint,
        epochs,
        validation,
        stopped_early,
    })
}

/// Splits `pool` into (train, validation) for `fold`.
pub fn fold_sets(pool: &[Sample], split: &SplitAssignment, fold: usize) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for s in pool {
        match split.get(&s.patient_id) {
            Some(Partition::Fold(i)) if i == fold => val.push(s.clone()),
            Some(Partition::Fold(_)) => train.push(s.clone()),
            _ => return Err(TrainError::NotInFold(s.record_id.clone())),
        }
    }
    Ok((train, val))
}

/// Runs [`train_fold`] for every fold of `split`, validating on fold `i`
/// and training on the rest.
pub fn cross_validate(config: &TrainConfig, pool: &[Sample], split: &SplitAssignment) -> Result<Vec<FoldResult>, TrainError> {
    (0..split.k)
        .map(|fold| {
            let (train, val) = fold_sets(pool, split, fold)?;
            train_fold(config, fold, &train, &val)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub epochs: usize,
    pub train_accuracy: f64,
}

/// Trains on `samples` alone until eval-mode training accuracy reaches
/// `target` or `max_epochs` pass. Used as a memorisation sanity check.
pub fn fit_until_accuracy(
    arch: ArchId,
    hyper: &Hyperparams,
    samples: &[Sample],
    target: f64,
) -> Result<FitReport, TrainError> {
    hyper.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    check_shapes(samples)?;
    let weights = hyper.class_weights.map_or_else(|| auto_class_weights(samples), Ok)?;
    let seed = init_seed(hyper.seed, arch, samples[0].signal.ncols() as u32, 0);
    let mut graph = ModelGraph::build(ArchSpec::standard(arch), seed);
    graph.reseed_dropout(seed.wrapping_add(1));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut opt = Adam::new(hyper.learning_rate);
    let mut accuracy = 0.0;
    for epoch in 1..=hyper.max_epochs {
        run_epoch(&mut graph, &mut opt, samples, &weights, hyper.batch_size, &mut shuffle_rng, epoch)?;
        let logits = predict(&mut graph, samples, hyper.batch_size)?;
        let correct = logits
            .iter()
            .zip(samples)
            .filter(|(z, s)| metrics::decide(metrics::softmax_prob(z[0], z[1]).unwrap_or(0.5), DEFAULT_TAU) == s.label)
            .count();
        accuracy = correct as f64 / samples.len() as f64;
        log::debug!("{arch} fit epoch {epoch}: train accuracy {accuracy:.4}");
        if accuracy >= target {
            return Ok(FitReport {
                epochs: epoch,
                train_accuracy: accuracy,
            });
        }
    }
    Ok(FitReport {
        epochs: hyper.max_epochs,
        train_accuracy: accuracy,
    })
}
