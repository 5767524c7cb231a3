//! Losses, the mini-batch training loop, and the seeded repetition harness.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Tape, Tensor, Var};
use crate::blocks::{Ctx, Mode};
use crate::dataset::{build_temper_vocabulary, CurveSplit, DatasetError, SNCurve, Vocabulary};
use crate::evaluation::{aggregate, predict_eval_set, EvalError, EvalSet, RunReport, SeedOutcome};
use crate::features::{encode_records, fit_standardizer, EncodedSet, FeatureError, LogBase, Standardizer};
use crate::model::{DeepOFormer, Injection, ModelBatch, ModelDims, ModelError, TrainedModel, Variant};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training config error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("non-finite value at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ml2re,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Added to `y²` in the relative-error denominator.
    pub epsilon: f64,
}

pub const ML2RE_EPSILON: f64 = 1e-30;

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Ml2re,
            epsilon: ML2RE_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn mse() -> Self {
        Self {
            kind: LossKind::Mse,
            ..Self::default()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        if variant.uses_mse() {
            Self::mse()
        } else {
            Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.epsilon > 0.0) {
            return Err(TrainError::Config(format!("loss epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Per-record weights `1 / (y² + ε)` for ML2RE, 1 for MSE.
    fn weights(&self, targets: &[f64]) -> Vec<f64> {
        match self.kind {
            LossKind::Ml2re => targets.iter().map(|y| 1.0 / (y * y + self.epsilon)).collect(),
            LossKind::Mse => vec![1.0; targets.len()],
        }
    }

    pub fn evaluate(&self, targets: &[f64], predictions: &[f64]) -> Result<f64, TrainError> {
        match self.kind {
            LossKind::Ml2re => ml2re_loss(targets, predictions, self.epsilon),
            LossKind::Mse => mse_loss(targets, predictions),
        }
    }

    /// Loss node for a `[n]` prediction against fixed targets.
    pub fn on_tape(&self, tape: &mut Tape, predictions: Var, targets: &[f64]) -> Result<Var, TrainError> {
        if tape.shape(predictions) != [targets.len()] || targets.is_empty() {
            return Err(TrainError::Argument(format!(
                "predictions {:?} vs {} targets",
                tape.shape(predictions),
                targets.len()
            )));
        }
        let y = tape.constant(Tensor::vector(targets.to_vec()));
        let diff = tape.sub(predictions, y)?;
        let sq = tape.mul(diff, diff)?;
        let weighted = match self.kind {
            LossKind::Mse => sq,
            LossKind::Ml2re => {
                let w = tape.constant(Tensor::vector(self.weights(targets)));
                tape.mul(sq, w)?
            }
        };
        Ok(tape.mean_all(weighted)?)
    }
}

fn check_pair(targets: &[f64], predictions: &[f64]) -> Result<(), TrainError> {
    if targets.len() != predictions.len() || targets.is_empty() {
        return Err(TrainError::Argument(format!(
            "{} targets vs {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    Ok(())
}

/// Mean of `(y − ŷ)² / (y² + ε)`.
pub fn ml2re_loss(targets: &[f64], predictions: &[f64], epsilon: f64) -> Result<f64, TrainError> {
    check_pair(targets, predictions)?;
    let total: f64 = targets
        .iter()
        .zip(predictions)
        .map(|(y, p)| (y - p) * (y - p) / (y * y + epsilon))
        .sum();
    Ok(total / targets.len() as f64)
}

pub fn mse_loss(targets: &[f64], predictions: &[f64]) -> Result<f64, TrainError> {
    check_pair(targets, predictions)?;
    Ok(targets.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the shuffle and dropout stream.
    pub seed: u64,
    pub shuffle: bool,
    /// Progress is logged every this many epochs.
    pub log_every: usize,
    /// Stop after this many epochs without a new best training loss.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 3000,
            seed: 0,
            shuffle: true,
            log_every: 100,
            early_stopping_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.log_every == 0 {
            return Err(TrainError::Config("batch_size, epochs and log_every must be >= 1".into()));
        }
        if self.early_stopping_patience == Some(0) {
            return Err(TrainError::Config("early_stopping_patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean training loss over all records, one entry per completed epoch.
    pub loss_trace: Vec<f64>,
    pub steps: u64,
    pub stopped_early: bool,
}

/// Mini-batch Adam on `data` with dropout active. The shuffle/dropout
/// stream is seeded from `cfg.seed` on a stream separate from model
/// initialization.
pub fn train(model: &mut DeepOFormer, data: &EncodedSet, loss: &LossConfig, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(TrainError::Argument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, model.params.tensors());
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let non_finite = |detail: String| TrainError::NonFinite { epoch, batch: b, detail };
            let batch = ModelBatch::from_inputs(chunk.iter().map(|&i| &data.inputs[i]));
            let targets: Vec<f64> = chunk.iter().map(|&i| data.targets[i]).collect();

            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, true);
            let value = {
                let mut ctx = Ctx::new(&mut tape, &vars, Mode::Train).with_rng(&mut rng);
                let out = model.forward(&mut ctx, &batch, &Injection::default()).map_err(|e| match e {
                    ModelError::Autodiff(a) => non_finite(a.to_string()),
                    other => TrainError::Model(other),
                })?;
                loss.on_tape(ctx.tape, out.prediction, &targets).map_err(|e| non_finite(e.to_string()))?
            };
            let batch_loss = tape.value(value).data()[0];
            let grads = tape.backward(value).map_err(|e| non_finite(e.to_string()))?;
            let grads: Vec<Vec<f64>> = vars
                .iter()
                .zip(model.params.tensors())
                .map(|(v, t)| grads.get_or_zeros(*v, t.numel()))
                .collect();
            adam.step(model.params.tensors_mut(), &grads)?;
            total += batch_loss * chunk.len() as f64;
        }
        let epoch_loss = total / n as f64;
        trace.push(epoch_loss);
        if (epoch + 1) % cfg.log_every == 0 {
            debug!("epoch {} loss {epoch_loss:.6e}", epoch + 1);
        }
        if let Some(patience) = cfg.early_stopping_patience {
            if epoch_loss < best {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    info!("early stop at epoch {} (no improvement for {patience} epochs)", epoch + 1);
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        loss_trace: trace,
        steps: adam.step_count(),
        stopped_early,
    })
}

/// `epoch,loss` rows every `log_every` epochs and at the final epoch.
pub fn loss_csv(trace: &[f64], log_every: usize) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let epoch = i + 1;
        if epoch % log_every.max(1) == 0 || epoch == trace.len() {
            out.push_str(&format!("{epoch},{l}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepetitionConfig {
    pub n_repetitions: usize,
    /// Repetition `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    /// Repetitions trained concurrently.
    pub workers: usize,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            n_repetitions: 10,
            base_seed: 0,
            workers: 1,
        }
    }
}

impl RepetitionConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_repetitions == 0 || self.workers == 0 {
            return Err(TrainError::Config("n_repetitions and workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_repetitions as u64).map(|i| self.base_seed + i).collect()
    }
}

/// Training inputs shared by every repetition: vocabulary and standardizer
/// fitted on the training curves, the encoded training set, and the test
/// evaluation set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocabulary: Vocabulary,
    pub standardizer: Standardizer,
    pub log_base: LogBase,
    pub train: EncodedSet,
    pub eval: EvalSet,
}

pub fn prepare(curves: &[SNCurve], split: &CurveSplit, log_base: LogBase, dense_points: usize) -> Result<PreparedData, TrainError> {
    split.validate_against(curves)?;
    let train_curves: Vec<SNCurve> = split.train_curves(curves).into_iter().cloned().collect();
    if train_curves.is_empty() {
        return Err(TrainError::Argument("split has no training curves".into()));
    }
    let vocabulary = build_temper_vocabulary(&train_curves);
    let records: Vec<_> = train_curves.iter().flat_map(|c| c.records.iter()).collect();
    let standardizer = fit_standardizer(records.iter().copied(), log_base)?;
    let train = encode_records(records.iter().copied(), &vocabulary, &standardizer, log_base)?;
    let eval = EvalSet::new(&split.test_curves(curves), dense_points);
    Ok(PreparedData {
        vocabulary,
        standardizer,
        log_base,
        train,
        eval,
    })
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub variant: Variant,
    pub dims: ModelDims,
    pub loss: LossConfig,
    /// `seed` is replaced per repetition.
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct RepetitionRun {
    pub seed: u64,
    pub model: Option<TrainedModel>,
    pub loss_trace: Vec<f64>,
    pub outcome: SeedOutcome,
}

#[derive(Debug, Clone)]
pub struct HarnessOutput {
    pub runs: Vec<RepetitionRun>,
    pub report: RunReport,
}

/// Trains and evaluates one model.
pub fn run_one(data: &PreparedData, exp: &Experiment, seed: u64) -> RepetitionRun {
    let attempt = || -> Result<(TrainedModel, Vec<f64>), TrainError> {
        let mut model = DeepOFormer::build(exp.variant, &exp.dims, &[data.vocabulary.size()], seed)?;
        let cfg = TrainConfig { seed, ..exp.train.clone() };
        let outcome = train(&mut model, &data.train, &exp.loss, &cfg)?;
        let trained = TrainedModel {
            model,
            vocabulary: data.vocabulary.clone(),
            standardizer: data.standardizer.clone(),
            log_base: data.log_base,
        };
        Ok((trained, outcome.loss_trace))
    };
    match attempt() {
        Ok((model, loss_trace)) => {
            let result = predict_eval_set(&model, &data.eval).map_err(|e| e.to_string());
            RepetitionRun {
                seed,
                model: Some(model),
                loss_trace,
                outcome: SeedOutcome { seed, result },
            }
        }
        Err(e) => {
            warn!("repetition with seed {seed} failed: {e}");
            RepetitionRun {
                seed,
                model: None,
                loss_trace: Vec::new(),
                outcome: SeedOutcome {
                    seed,
                    result: Err(e.to_string()),
                },
            }
        }
    }
}

/// One independently initialized and trained model per seed, evaluated on
/// the fixed test curves and aggregated in seed order.
pub fn run_repetitions(data: &PreparedData, exp: &Experiment, rep: &RepetitionConfig, config_echo: &str) -> Result<HarnessOutput, TrainError> {
    rep.validate()?;
    exp.train.validate()?;
    exp.loss.validate()?;
    exp.dims.validate()?;
    let seeds = rep.seeds();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RepetitionRun>>> = Mutex::new(vec![None; seeds.len()]);
    std::thread::scope(|s| {
        for _ in 0..rep.workers.min(seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                info!("{}: repetition {}/{} (seed {seed})", exp.variant, i + 1, seeds.len());
                let run = run_one(data, exp, seed);
                slots.lock().expect("repetition slot lock")[i] = Some(run);
            });
        }
    });
    let runs: Vec<RepetitionRun> = slots
        .into_inner()
        .expect("repetition slot lock")
        .into_iter()
        .map(|r| r.expect("every repetition reports"))
        .collect();
    let outcomes: Vec<SeedOutcome> = runs.iter().map(|r| r.outcome.clone()).collect();
    let report = aggregate(exp.variant.as_str(), config_echo, &data.eval, &outcomes)?;
    Ok(HarnessOutput { runs, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::blocks::AttentionConfig;
    use crate::dataset::FatigueRecord;
    use proptest::prelude::*;

    #[test]
    fn loss_examples() {
        assert_eq!(ml2re_loss(&[2.0], &[1.0], ML2RE_EPSILON).unwrap(), 0.25);
        assert_eq!(ml2re_loss(&[2.0, 4.0], &[1.0, 5.0], ML2RE_EPSILON).unwrap(), 0.15625);
        assert_eq!(ml2re_loss(&[3.0, 5.0], &[3.0, 5.0], ML2RE_EPSILON).unwrap(), 0.0);
        assert_eq!(mse_loss(&[2.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[2.0, 7.0], &[2.0, 7.0]).unwrap(), 0.0);
        // At y = 1 the relative weight is 1/(1 + ε), which rounds to 1.
        assert_eq!(ml2re_loss(&[1.0, 1.0], &[0.5, 3.0], ML2RE_EPSILON).unwrap(), mse_loss(&[1.0, 1.0], &[0.5, 3.0]).unwrap());
        assert!(ml2re_loss(&[1.0], &[1.0, 2.0], 1e-30).is_err());
        assert!(mse_loss(&[], &[]).is_err());
    }

    fn tape_loss(cfg: &LossConfig, targets: &[f64], preds: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(preds.to_vec()));
        let l = cfg.on_tape(&mut tape, p, targets).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn tape_losses_match_plain_versions() {
        let y = [4.2, 5.5, 7.1, 9.0];
        let p = [4.0, 6.0, 7.0, 8.5];
        for cfg in [LossConfig::default(), LossConfig::mse()] {
            let a = tape_loss(&cfg, &y, &p);
            let b = cfg.evaluate(&y, &p).unwrap();
            assert!((a - b).abs() < 1e-15, "{cfg:?}");
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let y = vec![4.2, 5.5, 7.1, 9.0, 6.3];
        for cfg in [LossConfig::default(), LossConfig::mse()] {
            let targets = y.clone();
            let report = grad_check(
                move |tape: &mut Tape, vars: &[Var]| {
                    cfg.on_tape(tape, vars[0], &targets).map_err(|e| AutodiffError::Invariant(e.to_string()))
                },
                &[Tensor::vector(vec![4.0, 6.0, 7.0, 8.5, 6.1])],
                1e-6,
            );
            assert!(report.passed(), "{cfg:?}: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn ml2re_nonnegative_and_zero_iff_equal(
            y in prop::collection::vec(4.0..10.0f64, 1..20),
            d in prop::collection::vec(-2.0..2.0f64, 20),
        ) {
            let p: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + b).collect();
            let l = ml2re_loss(&y, &p, ML2RE_EPSILON).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, p == y);
            prop_assert_eq!(ml2re_loss(&y, &y, ML2RE_EPSILON).unwrap(), 0.0);
        }
    }

    #[test]
    fn configs_validate() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: f64::NAN, ..TrainConfig::default() }.validate().is_err());
        assert!(LossConfig { epsilon: 0.0, ..LossConfig::default() }.validate().is_err());
        assert!(RepetitionConfig { n_repetitions: 0, ..RepetitionConfig::default() }.validate().is_err());
        assert_eq!(RepetitionConfig { base_seed: 5, n_repetitions: 3, workers: 1 }.seeds(), vec![5, 6, 7]);
        assert_eq!(LossConfig::for_variant(Variant::MseLoss).kind, LossKind::Mse);
        assert_eq!(LossConfig::for_variant(Variant::NoDomainFeatures).kind, LossKind::Ml2re);
    }

    fn small_dims(dropout: f64) -> ModelDims {
        ModelDims {
            attention: AttentionConfig {
                n_heads: 2,
                head_dim: 4,
                model_dim: 8,
                attention_dropout: dropout,
                ffn_dropout: dropout,
            },
            p: 4,
            hidden_width: 8,
            ..ModelDims::default()
        }
    }

    fn toy_curves() -> Vec<SNCurve> {
        let temper = ["T6", "T4", "T73"];
        (0..6u32)
            .map(|c| {
                let uts = 400.0 + 30.0 * c as f64;
                let fs = 120.0 + 5.0 * c as f64;
                let records = (0..4)
                    .map(|i| {
                        let sigma_a = fs * (1.2 + 0.25 * i as f64);
                        FatigueRecord {
                            curve_id: c,
                            uts,
                            tys: 0.8 * uts,
                            fatigue_strength: fs,
                            temper: temper[c as usize % 3].into(),
                            stress_ratio_r: -1.0,
                            sigma_a,
                            log_n: 14.0 - 3.0 * sigma_a.log10(),
                        }
                    })
                    .collect();
                SNCurve { curve_id: c, records }
            })
            .collect()
    }

    fn toy_data() -> PreparedData {
        let curves = toy_curves();
        let split = crate::dataset::split_explicit(&curves, &[4, 5]).unwrap();
        prepare(&curves, &split, LogBase::Ten, 5).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 3,
            log_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data();
        let run = || {
            let mut m = DeepOFormer::build(Variant::Full, &small_dims(0.1), &[data.vocabulary.size()], 1).unwrap();
            let out = train(&mut m, &data.train, &LossConfig::default(), &cfg(15)).unwrap();
            (out.loss_trace, m.params.tensors().to_vec())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.len(), 15);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = toy_data();
        let mut m = DeepOFormer::build(Variant::Full, &small_dims(0.0), &[data.vocabulary.size()], 1).unwrap();
        let before = m.params.tensors().to_vec();
        let c = TrainConfig {
            lr: 0.0,
            shuffle: false,
            ..cfg(5)
        };
        let out = train(&mut m, &data.train, &LossConfig::default(), &c).unwrap();
        assert_eq!(m.params.tensors(), before.as_slice());
        assert!(out.loss_trace.iter().all(|l| *l == out.loss_trace[0]));
        // 16 records at batch 8, partial batches kept.
        assert_eq!(out.steps, 5 * 2);
        let odd = data.train.select(&(0..13).collect::<Vec<_>>());
        let out = train(&mut m, &odd, &LossConfig::default(), &c).unwrap();
        assert_eq!(out.steps, 5 * 2);
    }

    #[test]
    fn training_reduces_loss() {
        let data = toy_data();
        let mut m = DeepOFormer::build(Variant::Full, &small_dims(0.0), &[data.vocabulary.size()], 2).unwrap();
        let c = TrainConfig { lr: 0.01, ..cfg(60) };
        let out = train(&mut m, &data.train, &LossConfig::default(), &c).unwrap();
        assert!(out.loss_trace.iter().all(|l| l.is_finite()));
        assert!(out.loss_trace.last().unwrap() < &(0.2 * out.loss_trace[0]));
    }

    #[test]
    fn early_stopping_halts_on_plateau() {
        let data = toy_data();
        let mut m = DeepOFormer::build(Variant::Full, &small_dims(0.0), &[data.vocabulary.size()], 1).unwrap();
        let c = TrainConfig {
            lr: 0.0,
            shuffle: false,
            early_stopping_patience: Some(3),
            ..cfg(50)
        };
        let out = train(&mut m, &data.train, &LossConfig::default(), &c).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.loss_trace.len(), 4);
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let data = toy_data();
        let mut m = DeepOFormer::build(Variant::Full, &small_dims(0.0), &[data.vocabulary.size()], 1).unwrap();
        let c = TrainConfig { lr: 1e300, ..cfg(5) };
        match train(&mut m, &data.train, &LossConfig::default(), &c) {
            Err(TrainError::NonFinite { epoch, batch, .. }) => assert!(epoch <= 1 && batch < 2),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn eval_metrics_do_not_depend_on_batching() {
        let data = toy_data();
        let m = DeepOFormer::build(Variant::Full, &small_dims(0.2), &[data.vocabulary.size()], 4).unwrap();
        let all = m.predict(&ModelBatch::from_inputs(&data.train.inputs)).unwrap();
        let mut piecewise = Vec::new();
        for chunk in data.train.inputs.chunks(3) {
            piecewise.extend(m.predict(&ModelBatch::from_inputs(chunk)).unwrap());
        }
        for (a, b) in all.iter().zip(&piecewise) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vocabulary_and_standardizer_come_from_training_curves() {
        let data = toy_data();
        assert_eq!(data.train.len(), 16);
        assert_eq!(data.eval.records.len(), 8);
        // Curves 4 and 5 hold T73 and T6; T73 also appears in curve 2.
        assert_eq!(data.vocabulary.size(), 4);
        let uts: Vec<f64> = (0..4).map(|c| 400.0 + 30.0 * c as f64).collect();
        assert!((data.standardizer.branch.mean[0] - uts.iter().sum::<f64>() / 4.0).abs() < 1e-9);
    }

    #[test]
    fn repetitions_are_seeded_and_reproducible() {
        let data = toy_data();
        let exp = Experiment {
            variant: Variant::Full,
            dims: small_dims(0.1),
            loss: LossConfig::default(),
            train: cfg(5),
        };
        let rep = RepetitionConfig {
            n_repetitions: 3,
            base_seed: 10,
            workers: 2,
        };
        let a = run_repetitions(&data, &exp, &rep, "").unwrap();
        let b = run_repetitions(&data, &exp, &RepetitionConfig { workers: 1, ..rep.clone() }, "").unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![10, 11, 12]);
        assert_eq!(a.report.seeds.len(), 3);
        assert!(a.report.std.mae > 0.0);

        let one = run_repetitions(&data, &exp, &RepetitionConfig { n_repetitions: 1, ..rep }, "").unwrap();
        assert_eq!(one.report.std, crate::evaluation::MetricSet::default());
    }

    #[test]
    fn loss_log_rows() {
        let csv = loss_csv(&[3.0, 2.0, 1.5, 1.0, 0.5], 2);
        assert_eq!(csv, "epoch,loss\n2,2\n4,1\n5,0.5\n");
    }
}
