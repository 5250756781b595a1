//! Training loop: batch sampling, technique loss, Adam, per-epoch
//! validation with threshold calibration, and best-epoch selection.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::classifier::optim::AdamConfig;
use crate::classifier::{self, Arch, BlockSpec, ClassifierError, LrSchedule, Model, OptimizerState};
use crate::dataset::{self, DatasetError, EpochPlan, LabeledExample};
use crate::features::{FeatureError, LogMelExtractor};
use crate::metrics::ConfusionMatrix;
use crate::rng;
use crate::techniques::{self, LossParts, TechniqueConfig, TechniqueError, ValItem};
use crate::tensor::Matrix;
use crate::{NOISE_LABEL, NUM_LABELS};

const TAG_MODEL: u64 = 0x6d6f_646c;
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step}: {parts:?}")]
    NonFiniteLoss { epoch: usize, step: usize, parts: LossParts },
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error("feature sets disagree in shape")]
    ShapeMismatch,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Technique(#[from] TechniqueError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Log-Mel features of a set of examples, `[example][mel][frame]`, with
/// 14-way labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(n_mels: usize, n_frames: usize) -> Self {
        FeatureSet { n_mels, n_frames, values: Vec::new(), labels: Vec::new() }
    }

    pub fn from_clips<'c>(
        clips: impl IntoIterator<Item = (&'c AudioClip, usize)>,
        extractor: &LogMelExtractor,
        n_frames: usize,
    ) -> Result<Self, FeatureError> {
        let mut set = FeatureSet::new(extractor.config().n_mels, n_frames);
        for (clip, label) in clips {
            let lm = extractor.log_mel(clip)?;
            if lm.shape() != (set.n_mels, set.n_frames) {
                return Err(FeatureError::ShapeMismatch { expected: (set.n_mels, set.n_frames), got: lm.shape() });
            }
            set.values.extend_from_slice(&lm.values);
            set.labels.push(label);
        }
        Ok(set)
    }

    pub fn from_examples(examples: &[LabeledExample], extractor: &LogMelExtractor) -> Result<Self, FeatureError> {
        let n_frames = match examples.first() {
            Some(e) => extractor
                .config()
                .n_frames(e.clip.len())
                .ok_or(FeatureError::TooShort { len: e.clip.len(), n_fft: extractor.config().n_fft })?,
            None => 0,
        };
        Self::from_clips(examples.iter().map(|e| (&e.clip, e.label.index())), extractor, n_frames)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_len(&self) -> usize {
        self.n_mels * self.n_frames
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.values[i * self.example_len()..(i + 1) * self.example_len()]
    }

    fn gather_into(&self, idx: &[usize], out: &mut Vec<f64>) {
        for &i in idx {
            out.extend_from_slice(self.example(i));
        }
    }

    fn same_shape(&self, other: &FeatureSet) -> bool {
        self.n_mels == other.n_mels && self.n_frames == other.n_frames
    }
}

/// Noise-only training data: fixed features, or raw clips re-augmented
/// every epoch.
#[derive(Clone)]
pub enum NoiseData<'a> {
    Features(FeatureSet),
    Clips { clips: Vec<AudioClip>, extractor: &'a LogMelExtractor },
}

#[derive(Clone)]
pub struct TrainingData<'a> {
    pub machine: FeatureSet,
    pub noise: NoiseData<'a>,
    pub validation: FeatureSet,
}

impl<'a> TrainingData<'a> {
    /// Features for the train and validation splits. Noise-only training
    /// clips are kept as audio for per-epoch augmentation.
    pub fn from_splits(
        train: &[LabeledExample],
        validation: &[LabeledExample],
        extractor: &'a LogMelExtractor,
    ) -> Result<Self, FeatureError> {
        let (noise, machine): (Vec<LabeledExample>, Vec<LabeledExample>) =
            train.iter().cloned().partition(|e| e.label.is_noise());
        Ok(TrainingData {
            machine: FeatureSet::from_examples(&machine, extractor)?,
            noise: NoiseData::Clips { clips: noise.into_iter().map(|e| e.clip).collect(), extractor },
            validation: FeatureSet::from_examples(validation, extractor)?,
        })
    }

    fn noise_len(&self) -> usize {
        match &self.noise {
            NoiseData::Features(f) => f.len(),
            NoiseData::Clips { clips, .. } => clips.len(),
        }
    }

    fn noise_features(&self, seed: u64, epoch: usize) -> Result<FeatureSet, TrainError> {
        match &self.noise {
            NoiseData::Features(f) => Ok(f.clone()),
            NoiseData::Clips { clips, extractor } => {
                let mut augmented = Vec::with_capacity(clips.len());
                for (i, clip) in clips.iter().enumerate() {
                    let (shift, gain) = dataset::augment_draw(seed, epoch, i, clip.duration_s());
                    augmented.push(dataset::augment_noise(clip, shift, gain)?);
                }
                Ok(FeatureSet::from_clips(
                    augmented.iter().map(|c| (c, NOISE_LABEL)),
                    extractor,
                    self.machine.n_frames,
                )?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub technique: TechniqueConfig,
    pub epochs: usize,
    /// Machine examples per step for exposure techniques.
    pub batch_machine: usize,
    /// Noise-only examples per step for exposure techniques. Techniques
    /// without exposure use machine-only batches of the combined size.
    pub batch_noise: usize,
    pub schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub spectral: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(technique: TechniqueConfig, seed: u64) -> Self {
        TrainConfig {
            technique,
            epochs: 100,
            batch_machine: 8,
            batch_noise: 8,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            blocks: Arch::desk(32, 61, 13).blocks,
            spectral: Arch::desk(32, 61, 13).spectral,
            seed,
        }
    }

    pub fn batch_sizes(&self) -> (usize, usize) {
        if self.technique.kind.uses_exposure() {
            (self.batch_machine, self.batch_noise)
        } else {
            (self.batch_machine + self.batch_noise, 0)
        }
    }

    pub fn arch(&self, n_mels: usize, n_frames: usize) -> Arch {
        Arch {
            blocks: self.blocks.clone(),
            spectral: self.spectral,
            ..Arch::new(n_mels, n_frames, &[], self.technique.kind.n_outputs())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's steps.
    pub loss: f64,
    pub val_f1: f64,
    /// Threshold calibrated after this epoch; `None` for AC.
    pub eta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model from the best validation epoch.
    pub model: Model,
    pub optimizer: OptimizerState,
    pub threshold: Option<f64>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn logits_of(model: &Model, set: &FeatureSet) -> Result<Matrix, ClassifierError> {
    let mut out = Matrix::zeros(0, model.arch().n_outputs);
    let n = set.example_len();
    for (i, chunk) in set.values.chunks(EVAL_CHUNK * n.max(1)).enumerate() {
        let rows = chunk.len() / n;
        let _ = i;
        out = out.vstack(&model.forward_eval(chunk, rows)?);
    }
    Ok(out)
}

/// Validation macro F1 and, for score-based kinds, the calibrated threshold.
fn validate(model: &Model, cfg: &TechniqueConfig, set: &FeatureSet) -> Result<(f64, Option<f64>), TrainError> {
    let logits = logits_of(model, set)?;
    if cfg.kind.is_score_based() {
        let mut items = Vec::with_capacity(set.len());
        for (row, &truth) in logits.iter_rows().zip(&set.labels) {
            let score = techniques::noise_score(cfg.kind, row, cfg.temperature)?;
            items.push(ValItem { score, truth, argmax: techniques::argmax(row) });
        }
        let cal = techniques::calibrate_threshold(&items)?;
        Ok((cal.macro_f1, Some(cal.threshold)))
    } else {
        let report = report_from_logits(&logits, cfg, None, &set.labels)?;
        Ok((report.macro_f1, None))
    }
}

/// Trains one model and returns the parameters, optimizer state and
/// threshold of the epoch with the best validation macro F1 (earliest on
/// ties).
pub fn train(cfg: &TrainConfig, data: &TrainingData<'_>) -> Result<TrainOutcome, TrainError> {
    let m = &data.machine;
    if m.is_empty() {
        return Err(TrainError::Empty("machine training"));
    }
    if data.validation.is_empty() {
        return Err(TrainError::Empty("validation"));
    }
    if !m.same_shape(&data.validation) {
        return Err(TrainError::ShapeMismatch);
    }
    let kind = cfg.technique.kind;
    let (b_m, b_n) = cfg.batch_sizes();
    let n_noise = if kind.uses_exposure() { data.noise_len() } else { 0 };
    if kind.uses_exposure() && n_noise == 0 && b_n > 0 {
        return Err(TrainError::Empty("noise training"));
    }
    let arch = cfg.arch(m.n_mels, m.n_frames);
    let mut model = Model::new(&arch, rng::derive(cfg.seed, &[TAG_MODEL]))?;
    let mut opt = OptimizerState::new(&model.params, cfg.adam.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model, OptimizerState, Option<f64>)> = None;
    let mut x = Vec::new();
    let mut targets = Vec::new();

    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.lr_at_epoch(epoch)?;
        let noise = if n_noise > 0 { Some(data.noise_features(cfg.seed, epoch)?) } else { None };
        if let Some(nf) = &noise {
            if !nf.same_shape(m) {
                return Err(TrainError::ShapeMismatch);
            }
        }
        let plan = EpochPlan::new(m.len(), n_noise, b_m, b_n, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        for step in 0..plan.steps() {
            let (mi, ni) = plan.batch(step);
            x.clear();
            m.gather_into(&mi, &mut x);
            if let Some(nf) = &noise {
                nf.gather_into(&ni, &mut x);
            }
            targets.clear();
            targets.extend(mi.iter().map(|&i| m.labels[i]));
            let (logits, cache) = model.forward_train(&x, mi.len() + ni.len())?;
            let (lm, ln) = logits.split_rows(mi.len());
            let loss = techniques::technique_loss(&cfg.technique, &lm, &targets, &ln)?;
            if !loss.parts.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step, parts: loss.parts });
            }
            loss_sum += loss.parts.total;
            let grads = model.backward(&cache, &loss.grad_machine.vstack(&loss.grad_noise))?;
            classifier::adam_step(&mut model.params, &grads, &mut opt, lr)?;
        }
        let (val_f1, eta) = validate(&model, &cfg.technique, &data.validation)?;
        history.push(EpochRecord { epoch, loss: loss_sum / plan.steps().max(1) as f64, val_f1, eta });
        if best.as_ref().is_none_or(|b| val_f1 > b.0) {
            best = Some((val_f1, epoch, model.clone(), opt.clone(), eta));
        }
    }
    let (_, best_epoch, model, optimizer, threshold) = best.ok_or(TrainError::Empty("epoch"))?;
    Ok(TrainOutcome { model, optimizer, threshold, best_epoch, history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub noise_f1: f64,
    /// 14-way predictions in input order.
    pub predictions: Vec<usize>,
}

fn report_from_logits(
    logits: &Matrix,
    cfg: &TechniqueConfig,
    threshold: Option<f64>,
    labels: &[usize],
) -> Result<EvalReport, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::Empty("evaluation"));
    }
    let mut cm = ConfusionMatrix::new(NUM_LABELS);
    let mut predictions = Vec::with_capacity(labels.len());
    for (row, &truth) in logits.iter_rows().zip(labels) {
        let d = techniques::decide(cfg.kind, row, threshold, cfg.temperature)?;
        let p = d.outcome.label_index();
        cm.add(truth, p);
        predictions.push(p);
    }
    let per_class_f1 = cm.per_class_f1();
    Ok(EvalReport {
        macro_f1: cm.macro_f1(),
        noise_f1: per_class_f1[NOISE_LABEL],
        per_class_f1,
        confusion: cm,
        predictions,
    })
}

/// Eval-mode decisions on `set` and the resulting 14-class scores.
pub fn evaluate(
    model: &Model,
    technique: &TechniqueConfig,
    threshold: Option<f64>,
    set: &FeatureSet,
) -> Result<EvalReport, TrainError> {
    if set.is_empty() {
        return Err(TrainError::Empty("evaluation"));
    }
    if set.example_len() != model.arch().input_len() {
        return Err(TrainError::ShapeMismatch);
    }
    report_from_logits(&logits_of(model, set)?, technique, threshold, &set.labels)
}

/// Labels of a batch of machine sounds and noise, for tests and tools.
pub fn label_counts(set: &FeatureSet) -> [usize; NUM_LABELS] {
    let mut c = [0; NUM_LABELS];
    for &l in &set.labels {
        c[l] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::techniques::TechniqueKind;
    use alloc::vec;
    use rand::Rng as _;

    const MELS: usize = 4;
    const FRAMES: usize = 4;

    /// Class `c` lights up mel bin `c % 4` with magnitude depending on
    /// `c / 4`; noise is flat. Linearly separable in the mel profile.
    fn toy(per_class: usize, classes: &[usize], seed: u64) -> FeatureSet {
        let mut r = rng::seeded(seed);
        let mut set = FeatureSet::new(MELS, FRAMES);
        for &c in classes {
            for _ in 0..per_class {
                for m in 0..MELS {
                    for _ in 0..FRAMES {
                        let base = if c == NOISE_LABEL {
                            0.0
                        } else if m == c % MELS {
                            1.0 + (c / MELS) as f64
                        } else {
                            -1.0
                        };
                        set.values.push(base + r.random_range(-0.1..0.1));
                    }
                }
                set.labels.push(c);
            }
        }
        set
    }

    fn config(kind: TechniqueKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_machine: 2,
            batch_noise: 2,
            schedule: LrSchedule::scaled(1e-2, 1e-3, epochs),
            blocks: vec![BlockSpec { channels: 4, pool: [1, 1] }],
            spectral: Some(8),
            ..TrainConfig::new(TechniqueConfig::new(kind), 5)
        }
    }

    fn data(machine_classes: &[usize], per_class: usize) -> TrainingData<'static> {
        let mut validation = toy(1, machine_classes, 2);
        let v_noise = toy(2, &[NOISE_LABEL], 3);
        validation.values.extend(v_noise.values);
        validation.labels.extend(v_noise.labels);
        TrainingData {
            machine: toy(per_class, machine_classes, 1),
            noise: NoiseData::Features(toy(per_class, &[NOISE_LABEL], 4)),
            validation,
        }
    }

    #[test]
    fn two_epoch_bookkeeping() {
        let d = data(&[0, 1], 2);
        let out = train(&config(TechniqueKind::NoiseExposure, 2), &d).unwrap();
        assert_eq!(out.history.len(), 2);
        let best = out.history.iter().map(|h| h.val_f1).fold(f64::NEG_INFINITY, f64::max);
        let first = out.history.iter().find(|h| h.val_f1 == best).unwrap();
        assert_eq!(out.best_epoch, first.epoch);
        assert_eq!(out.threshold, first.eta);
        // the returned threshold reproduces the recorded validation score
        let report =
            evaluate(&out.model, &config(TechniqueKind::NoiseExposure, 2).technique, out.threshold, &d.validation)
                .unwrap();
        assert_eq!(report.macro_f1, best);
    }

    #[test]
    fn deterministic() {
        let d = data(&[0, 1, 2, 3, 5], 4);
        for kind in TechniqueKind::ALL {
            let a = train(&config(kind, 3), &d).unwrap();
            let b = train(&config(kind, 3), &d).unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(a.model, b.model);
        }
    }

    #[test]
    fn ne_loss_decreases() {
        let d = data(&[0, 1, 2, 3, 4, 5, 6, 7], 4);
        let out = train(&config(TechniqueKind::NoiseExposure, 10), &d).unwrap();
        assert!(out.history[9].loss < out.history[0].loss, "{:?}", out.history);
    }

    #[test]
    fn learns_separable_toy() {
        let classes: Vec<usize> = (0..13).collect();
        let d = data(&classes, 8);
        for kind in [TechniqueKind::NoiseExposure, TechniqueKind::AdditionalClass] {
            let cfg = TrainConfig { batch_machine: 8, batch_noise: 8, ..config(kind, 60) };
            let out = train(&cfg, &d).unwrap();
            assert!(out.history[out.best_epoch - 1].val_f1 > 0.8, "{kind}: {:?}", out.history.last());
        }
    }

    #[test]
    fn sm_uses_machine_only_batches() {
        let cfg = config(TechniqueKind::Softmax, 1);
        assert_eq!(cfg.batch_sizes(), (4, 0));
        assert_eq!(config(TechniqueKind::EnergyBounded, 1).batch_sizes(), (2, 2));
    }

    #[test]
    fn empty_sets_rejected() {
        let mut d = data(&[0, 1], 2);
        d.validation = FeatureSet::new(MELS, FRAMES);
        assert_eq!(train(&config(TechniqueKind::Softmax, 1), &d).unwrap_err(), TrainError::Empty("validation"));
        let model = Model::new(&config(TechniqueKind::Softmax, 1).arch(MELS, FRAMES), 0).unwrap();
        let cfg = TechniqueConfig::new(TechniqueKind::Softmax);
        assert_eq!(
            evaluate(&model, &cfg, Some(0.5), &FeatureSet::new(MELS, FRAMES)),
            Err(TrainError::Empty("evaluation"))
        );
    }

    #[test]
    fn evaluation_ignores_order() {
        let d = data(&[0, 1, 2], 3);
        let out = train(&config(TechniqueKind::FreeEnergy, 3), &d).unwrap();
        let tc = TechniqueConfig::new(TechniqueKind::FreeEnergy);
        let a = evaluate(&out.model, &tc, out.threshold, &d.validation).unwrap();
        let mut rev = FeatureSet::new(MELS, FRAMES);
        for i in (0..d.validation.len()).rev() {
            rev.values.extend_from_slice(d.validation.example(i));
            rev.labels.push(d.validation.labels[i]);
        }
        let b = evaluate(&out.model, &tc, out.threshold, &rev).unwrap();
        assert_eq!(a.confusion, b.confusion);
        assert_eq!(a.macro_f1, b.macro_f1);
    }
}
