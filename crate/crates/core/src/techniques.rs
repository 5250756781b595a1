//! The five noise-handling techniques: training losses (with their logit
//! gradients), noise scores, the inference decision rule, and validation
//! threshold calibration.
//!
//! | kind | training loss                         | noise score        | exposure data |
//! |------|---------------------------------------|--------------------|---------------|
//! | SM   | CCE                                   | `1 - max softmax`  | no            |
//! | NE   | CCE + alpha * H(uniform, f(noise))    | `1 - max softmax`  | yes           |
//! | FE   | CCE                                   | free energy `E(x)` | no            |
//! | EB   | CCE + beta * squared-hinge energy reg | free energy `E(x)` | yes           |
//! | AC   | CCE over K+1 classes, noise = class K | argmax rule        | yes           |
//!
//! Sign convention: every noise score is oriented so that larger means
//! more noise-like. For FE/EB the score is the free energy
//! `E(x) = -T * logsumexp(g / T)`, i.e. the negated energy score.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ConfusionMatrix;
use crate::synth::MachineCondition;
use crate::tensor::Matrix;
use crate::{NOISE_LABEL, NUM_CONDITIONS, NUM_LABELS};

/// Probabilities are clamped here before taking the log in CCE.
pub const CCE_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TechniqueError {
    #[error("non-finite logit")]
    NonFinite,
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("empty machine batch")]
    EmptyMachineBatch,
    #[error("expected {expected} outputs, got {got}")]
    WrongOutputDim { expected: usize, got: usize },
    #[error("{targets} targets for {rows} machine rows")]
    TargetCount { targets: usize, rows: usize },
    #[error("target class {0} out of range")]
    TargetOutOfRange(usize),
    #[error("AC uses argmax rule; it has no noise score")]
    NoScoreForAc,
    #[error("score-based decision needs a calibrated threshold")]
    MissingThreshold,
    #[error("validation set must contain both noise and machine items")]
    DegenerateValidation,
    #[error("validation item has invalid label or score")]
    InvalidItem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TechniqueKind {
    #[serde(rename = "SM")]
    Softmax,
    #[serde(rename = "NE")]
    NoiseExposure,
    #[serde(rename = "FE")]
    FreeEnergy,
    #[serde(rename = "EB")]
    EnergyBounded,
    #[serde(rename = "AC")]
    AdditionalClass,
}

impl TechniqueKind {
    pub const ALL: [TechniqueKind; 5] = [
        TechniqueKind::Softmax,
        TechniqueKind::NoiseExposure,
        TechniqueKind::FreeEnergy,
        TechniqueKind::EnergyBounded,
        TechniqueKind::AdditionalClass,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TechniqueKind::Softmax => "SM",
            TechniqueKind::NoiseExposure => "NE",
            TechniqueKind::FreeEnergy => "FE",
            TechniqueKind::EnergyBounded => "EB",
            TechniqueKind::AdditionalClass => "AC",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TechniqueKind::Softmax => "Softmax score",
            TechniqueKind::NoiseExposure => "Noise exposure",
            TechniqueKind::FreeEnergy => "Energy score",
            TechniqueKind::EnergyBounded => "Energy-bounded learning",
            TechniqueKind::AdditionalClass => "Additional class with noise data",
        }
    }

    /// Whether training consumes noise-only batches.
    pub fn uses_exposure(self) -> bool {
        matches!(self, TechniqueKind::NoiseExposure | TechniqueKind::EnergyBounded | TechniqueKind::AdditionalClass)
    }

    pub fn n_outputs(self) -> usize {
        if self == TechniqueKind::AdditionalClass {
            NUM_CONDITIONS + 1
        } else {
            NUM_CONDITIONS
        }
    }

    pub fn is_score_based(self) -> bool {
        self != TechniqueKind::AdditionalClass
    }
}

impl fmt::Display for TechniqueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl core::str::FromStr for TechniqueKind {
    type Err = crate::synth::SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| crate::synth::SynthError::UnknownName(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueConfig {
    pub kind: TechniqueKind,
    /// NE weight of the noise exposure term.
    pub alpha: f64,
    /// EB weight of the energy regularizer.
    pub beta: f64,
    pub temperature: f64,
    /// EB margin for machine sounds (`m_M`).
    pub margin_machine: f64,
    /// EB margin for noise-only data (`m_N`).
    pub margin_noise: f64,
    /// Noise score threshold, set by validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl TechniqueConfig {
    pub fn new(kind: TechniqueKind) -> Self {
        TechniqueConfig {
            kind,
            alpha: 0.5,
            beta: 0.1,
            temperature: 1.0,
            margin_machine: -25.0,
            margin_noise: -7.0,
            threshold: None,
        }
    }
}

fn check_finite(x: &[f64]) -> Result<(), TechniqueError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TechniqueError::NonFinite)
    }
}

fn check_temperature(t: f64) -> Result<(), TechniqueError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(TechniqueError::BadTemperature(t))
    }
}

/// `log(sum(exp(x)))` with max subtraction.
pub fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_unchecked(logits: &[f64], t: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|g| ((g - max) / t).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `exp(g_k / T) / sum_j exp(g_j / T)`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>, TechniqueError> {
    check_finite(logits)?;
    check_temperature(temperature)?;
    Ok(softmax_unchecked(logits, temperature))
}

/// Maximum predicted probability.
pub fn softmax_score(probs: &[f64]) -> f64 {
    probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Energy score `-E(x) = T * logsumexp(g / T)`; high for in-distribution.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64, TechniqueError> {
    check_finite(logits)?;
    check_temperature(temperature)?;
    let scaled: Vec<f64> = logits.iter().map(|g| g / temperature).collect();
    Ok(temperature * logsumexp(&scaled))
}

/// Free energy `E(x) = -T * logsumexp(g / T)`.
pub fn free_energy(logits: &[f64], temperature: f64) -> Result<f64, TechniqueError> {
    energy_score(logits, temperature).map(|e| -e)
}

/// `-sum_k target_k * ln(max(prob_k, floor))`.
pub fn cce_loss(probs: &[f64], target: &[f64]) -> f64 {
    -probs.iter().zip(target).filter(|(_, &t)| t != 0.0).map(|(&p, &t)| t * p.max(CCE_PROB_FLOOR).ln()).sum::<f64>()
}

/// CCE of `softmax(logits)` against `target`, with its logit gradient.
/// Computed through log-softmax; clamped terms carry no gradient.
fn cce_with_grad(logits: &[f64], target: &[f64], grad: &mut [f64], weight: f64) -> f64 {
    let lse = logsumexp(logits);
    let floor = CCE_PROB_FLOOR.ln();
    let mut value = 0.0;
    let mut active_mass = 0.0;
    for (k, (&g, &t)) in logits.iter().zip(target).enumerate() {
        if t == 0.0 {
            continue;
        }
        let logp = g - lse;
        if logp > floor {
            value -= t * logp;
            active_mass += t;
            grad[k] -= weight * t;
        } else {
            value -= t * floor;
        }
    }
    if active_mass != 0.0 {
        for (gr, &g) in grad.iter_mut().zip(logits) {
            *gr += weight * active_mass * (g - lse).exp();
        }
    }
    value
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Loss components for reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Mean CCE of machine sounds.
    pub classification: f64,
    /// Unweighted noise term: exposure CCE (NE), noise-class CCE (AC) or
    /// the energy regularizer (EB).
    pub noise_term: f64,
    pub total: f64,
}

/// A technique loss and its gradient with respect to both logit batches.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub parts: LossParts,
    pub grad_machine: Matrix,
    pub grad_noise: Matrix,
}

fn check_batch(machine: &Matrix, targets: &[usize], noise: &Matrix, outputs: usize) -> Result<(), TechniqueError> {
    if machine.rows == 0 {
        return Err(TechniqueError::EmptyMachineBatch);
    }
    if machine.cols != outputs {
        return Err(TechniqueError::WrongOutputDim { expected: outputs, got: machine.cols });
    }
    if noise.rows > 0 && noise.cols != outputs {
        return Err(TechniqueError::WrongOutputDim { expected: outputs, got: noise.cols });
    }
    if targets.len() != machine.rows {
        return Err(TechniqueError::TargetCount { targets: targets.len(), rows: machine.rows });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= NUM_CONDITIONS) {
        return Err(TechniqueError::TargetOutOfRange(t));
    }
    check_finite(&machine.data)?;
    check_finite(&noise.data)
}

/// Mean CCE over a batch with per-row targets, accumulating `weight / rows`
/// times the gradient into `grad`.
fn mean_cce(logits: &Matrix, target_of: impl Fn(usize) -> Vec<f64>, grad: &mut Matrix, weight: f64) -> f64 {
    if logits.rows == 0 {
        return 0.0;
    }
    let w = weight / logits.rows as f64;
    let mut sum = 0.0;
    for i in 0..logits.rows {
        sum += cce_with_grad(logits.row(i), &target_of(i), grad.row_mut(i), w);
    }
    sum / logits.rows as f64
}

fn classification(machine: &Matrix, targets: &[usize], grad: &mut Matrix) -> f64 {
    let k = machine.cols;
    mean_cce(machine, |i| one_hot(targets[i], k), grad, 1.0)
}

/// Squared-hinge energy regularizer with its gradients; empty batches
/// contribute 0.
#[allow(clippy::too_many_arguments)]
fn energy_reg_with_grad(
    machine: &Matrix,
    noise: &Matrix,
    m_machine: f64,
    m_noise: f64,
    t: f64,
    grad_machine: &mut Matrix,
    grad_noise: &mut Matrix,
    weight: f64,
) -> f64 {
    let term = |logits: &Matrix, grad: &mut Matrix, sign: f64, margin: f64| -> f64 {
        if logits.rows == 0 {
            return 0.0;
        }
        let n = logits.rows as f64;
        let mut sum = 0.0;
        for i in 0..logits.rows {
            let g = logits.row(i);
            let scaled: Vec<f64> = g.iter().map(|v| v / t).collect();
            let energy = -t * logsumexp(&scaled);
            // machine: max(0, E - m_M); noise: max(0, m_N - E)
            let h = (sign * (energy - margin)).max(0.0);
            sum += h * h;
            if h > 0.0 {
                // dE/dg = -softmax(g / T)
                let p = softmax_unchecked(g, t);
                for (gr, pk) in grad.row_mut(i).iter_mut().zip(p) {
                    *gr += weight * 2.0 * h * sign * (-pk) / n;
                }
            }
        }
        sum / n
    };
    term(machine, grad_machine, 1.0, m_machine) + term(noise, grad_noise, -1.0, m_noise)
}

/// Loss and gradients for the configured technique. `noise` may be empty
/// (and must be, in effect, for SM/FE which ignore it).
pub fn technique_loss(
    cfg: &TechniqueConfig,
    machine: &Matrix,
    targets: &[usize],
    noise: &Matrix,
) -> Result<BatchLoss, TechniqueError> {
    let outputs = cfg.kind.n_outputs();
    check_batch(machine, targets, noise, outputs)?;
    let mut gm = Matrix::zeros(machine.rows, machine.cols);
    let mut gn = Matrix::zeros(noise.rows, noise.cols);
    let cls = classification(machine, targets, &mut gm);
    let (noise_term, weight) = match cfg.kind {
        TechniqueKind::Softmax | TechniqueKind::FreeEnergy => (0.0, 0.0),
        TechniqueKind::NoiseExposure => {
            let u = uniform(outputs);
            (mean_cce(noise, |_| u.clone(), &mut gn, cfg.alpha), cfg.alpha)
        }
        TechniqueKind::AdditionalClass => (mean_cce(noise, |_| one_hot(NOISE_LABEL, outputs), &mut gn, 1.0), 1.0),
        TechniqueKind::EnergyBounded => {
            check_temperature(cfg.temperature)?;
            let reg = energy_reg_with_grad(
                machine,
                noise,
                cfg.margin_machine,
                cfg.margin_noise,
                cfg.temperature,
                &mut gm,
                &mut gn,
                cfg.beta,
            );
            (reg, cfg.beta)
        }
    };
    let total = if weight == 0.0 { cls } else { cls + weight * noise_term };
    Ok(BatchLoss { parts: LossParts { classification: cls, noise_term, total }, grad_machine: gm, grad_noise: gn })
}

/// Noise exposure objective: mean CCE on machine sounds plus `alpha` times
/// the mean CCE of noise-only predictions against the uniform distribution.
pub fn ne_loss(machine: &Matrix, targets: &[usize], noise: &Matrix, alpha: f64) -> Result<f64, TechniqueError> {
    let cfg = TechniqueConfig { alpha, ..TechniqueConfig::new(TechniqueKind::NoiseExposure) };
    technique_loss(&cfg, machine, targets, noise).map(|l| l.parts.total)
}

/// Mean over machine rows of `max(0, E - m_M)^2` plus mean over noise rows of
/// `max(0, m_N - E)^2`.
pub fn energy_reg_loss(
    machine: &Matrix,
    noise: &Matrix,
    m_machine: f64,
    m_noise: f64,
    temperature: f64,
) -> Result<f64, TechniqueError> {
    check_temperature(temperature)?;
    check_finite(&machine.data)?;
    check_finite(&noise.data)?;
    let mut gm = Matrix::zeros(machine.rows, machine.cols);
    let mut gn = Matrix::zeros(noise.rows, noise.cols);
    Ok(energy_reg_with_grad(machine, noise, m_machine, m_noise, temperature, &mut gm, &mut gn, 1.0))
}

/// Mean machine CCE plus `beta` times the energy regularizer.
pub fn eb_total_loss(
    machine: &Matrix,
    targets: &[usize],
    noise: &Matrix,
    beta: f64,
    m_machine: f64,
    m_noise: f64,
    temperature: f64,
) -> Result<f64, TechniqueError> {
    let cfg = TechniqueConfig {
        beta,
        margin_machine: m_machine,
        margin_noise: m_noise,
        temperature,
        ..TechniqueConfig::new(TechniqueKind::EnergyBounded)
    };
    technique_loss(&cfg, machine, targets, noise).map(|l| l.parts.total)
}

/// Additional-class objective over K+1 outputs: mean machine CCE plus mean
/// CCE of noise-only rows against the extra class.
pub fn ac_loss(machine: &Matrix, targets: &[usize], noise: &Matrix) -> Result<f64, TechniqueError> {
    technique_loss(&TechniqueConfig::new(TechniqueKind::AdditionalClass), machine, targets, noise)
        .map(|l| l.parts.total)
}

/// Noise score, larger meaning more noise-like: `1 - max softmax` for SM/NE,
/// free energy `E(x)` for FE/EB.
pub fn noise_score(kind: TechniqueKind, logits: &[f64], temperature: f64) -> Result<f64, TechniqueError> {
    match kind {
        TechniqueKind::Softmax | TechniqueKind::NoiseExposure => {
            Ok(1.0 - softmax_score(&softmax(logits, temperature)?))
        }
        TechniqueKind::FreeEnergy | TechniqueKind::EnergyBounded => free_energy(logits, temperature),
        TechniqueKind::AdditionalClass => Err(TechniqueError::NoScoreForAc),
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Noise,
    Condition(MachineCondition),
}

impl Outcome {
    /// 14-way label index.
    pub fn label_index(self) -> usize {
        match self {
            Outcome::Noise => NOISE_LABEL,
            Outcome::Condition(c) => c.index(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub outcome: Outcome,
    /// `None` for AC.
    pub noise_score: Option<f64>,
}

/// Score-based kinds: noise iff score > threshold, otherwise the argmax
/// condition. AC: argmax over K+1 outputs, noise iff it is the extra class.
pub fn decide(
    kind: TechniqueKind,
    logits: &[f64],
    threshold: Option<f64>,
    temperature: f64,
) -> Result<Decision, TechniqueError> {
    if logits.len() != kind.n_outputs() {
        return Err(TechniqueError::WrongOutputDim { expected: kind.n_outputs(), got: logits.len() });
    }
    check_finite(logits)?;
    if kind == TechniqueKind::AdditionalClass {
        let k = argmax(logits);
        let outcome = if k == NOISE_LABEL {
            Outcome::Noise
        } else {
            Outcome::Condition(MachineCondition::from_index(k).expect("k < 13"))
        };
        return Ok(Decision { outcome, noise_score: None });
    }
    let eta = threshold.ok_or(TechniqueError::MissingThreshold)?;
    let score = noise_score(kind, logits, temperature)?;
    let outcome = if score > eta {
        Outcome::Noise
    } else {
        Outcome::Condition(MachineCondition::from_index(argmax(logits)).expect("13 outputs"))
    };
    Ok(Decision { outcome, noise_score: Some(score) })
}

/// One validation item for threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValItem {
    pub score: f64,
    /// 14-way truth label.
    pub truth: usize,
    /// Argmax condition (0..13) used when the item is not flagged as noise.
    pub argmax: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub macro_f1: f64,
}

/// Threshold maximizing 14-class macro F1 when items scoring above it are
/// labeled noise. Candidates are the midpoints between consecutive distinct
/// scores plus -inf and +inf; ties go to the smallest threshold.
pub fn calibrate_threshold(items: &[ValItem]) -> Result<Calibration, TechniqueError> {
    if items.iter().any(|it| !it.score.is_finite() || it.truth >= NUM_LABELS || it.argmax >= NUM_CONDITIONS) {
        return Err(TechniqueError::InvalidItem);
    }
    let has_noise = items.iter().any(|it| it.truth == NOISE_LABEL);
    let has_machine = items.iter().any(|it| it.truth != NOISE_LABEL);
    if !(has_noise && has_machine) {
        return Err(TechniqueError::DegenerateValidation);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].score.total_cmp(&items[b].score));

    // start at -inf: everything is called noise
    let mut cm = ConfusionMatrix::from_pairs(NUM_LABELS, items.iter().map(|it| (it.truth, NOISE_LABEL)));
    let mut best = Calibration { threshold: f64::NEG_INFINITY, macro_f1: cm.macro_f1() };
    let mut i = 0;
    while i < order.len() {
        let score = items[order[i]].score;
        // raising the threshold past `score` flips this group to its argmax
        let mut j = i;
        while j < order.len() && items[order[j]].score == score {
            let it = items[order[j]];
            cm = {
                let mut counts: Vec<u64> = (0..NUM_LABELS).flat_map(|t| cm.row(t).to_vec()).collect();
                counts[it.truth * NUM_LABELS + NOISE_LABEL] -= 1;
                counts[it.truth * NUM_LABELS + it.argmax] += 1;
                ConfusionMatrix::from_counts(NUM_LABELS, counts)
            };
            j += 1;
        }
        let threshold = if j < order.len() {
            let next = items[order[j]].score;
            let mid = score + (next - score) / 2.0;
            if mid >= next {
                score
            } else {
                mid
            }
        } else {
            f64::INFINITY
        };
        let f1 = cm.macro_f1();
        if f1 > best.macro_f1 {
            best = Calibration { threshold, macro_f1: f1 };
        }
        i = j;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const LN13: f64 = 2.564_949_357_461_536_7;

    #[test]
    fn softmax_cases() {
        let p = softmax(&[0.7; 13], 1.0).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 13.0).abs() < 1e-15));
        let p = softmax(&[1000.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        // high-precision values of exp(k)/(e + e^2 + e^3)
        let p = softmax(&[1.0, 2.0, 3.0], 1.0).unwrap();
        let oracle = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_9];
        for (a, b) in p.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(softmax(&[f64::NAN], 1.0), Err(TechniqueError::NonFinite));
        assert_eq!(softmax(&[1.0], 0.0), Err(TechniqueError::BadTemperature(0.0)));
    }

    #[test]
    fn softmax_score_cases() {
        assert_abs_diff_eq!(softmax_score(&[1.0 / 13.0; 13]), 1.0 / 13.0);
        assert_eq!(softmax_score(&[0.0, 1.0, 0.0]), 1.0);
        assert_eq!(softmax_score(&[0.5, 0.3, 0.2]), 0.5);
    }

    #[test]
    fn energy_cases() {
        assert_abs_diff_eq!(energy_score(&[0.0; 13], 1.0).unwrap(), LN13, epsilon = 1e-12);
        for t in [0.5, 1.0, 3.0] {
            assert_abs_diff_eq!(energy_score(&[4.2], t).unwrap(), 4.2, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(free_energy(&[0.0; 13], 1.0).unwrap(), -LN13, epsilon = 1e-12);
    }

    #[test]
    fn cce_cases() {
        let onehot = one_hot(4, 13);
        assert_eq!(cce_loss(&onehot, &onehot), 0.0);
        assert_abs_diff_eq!(cce_loss(&uniform(13), &onehot), LN13, epsilon = 1e-12);
        assert_abs_diff_eq!(cce_loss(&uniform(13), &uniform(13)), LN13, epsilon = 1e-12);
        // floor guards log 0
        assert_abs_diff_eq!(cce_loss(&one_hot(0, 3), &one_hot(1, 3)), -CCE_PROB_FLOOR.ln(), epsilon = 1e-9);
    }

    fn confident(classes: &[usize], k: usize) -> Matrix {
        let rows: Vec<Vec<f64>> = classes
            .iter()
            .map(|&c| {
                let mut r = vec![0.0; k];
                r[c] = 200.0;
                r
            })
            .collect();
        Matrix::from_rows(&rows)
    }

    #[test]
    fn ne_cases() {
        let machine = confident(&[1, 5, 7], 13);
        let targets = [1, 5, 7];
        let noise = Matrix::zeros(4, 13);
        assert_abs_diff_eq!(ne_loss(&machine, &targets, &noise, 0.5).unwrap(), 0.5 * LN13, epsilon = 1e-12);
        let empty = Matrix::zeros(0, 13);
        let soft = Matrix::from_rows(&[vec![0.3; 13], (0..13).map(|i| i as f64 * 0.1).collect()]);
        let plain = ne_loss(&soft, &[0, 2], &empty, 0.9).unwrap();
        let sm = technique_loss(&TechniqueConfig::new(TechniqueKind::Softmax), &soft, &[0, 2], &empty).unwrap();
        assert_eq!(plain, sm.parts.total);
        let with_alpha0 = ne_loss(&soft, &[0, 2], &noise, 0.0).unwrap();
        assert_eq!(with_alpha0.to_bits(), sm.parts.total.to_bits());
        assert_eq!(ne_loss(&empty, &[], &noise, 0.5), Err(TechniqueError::EmptyMachineBatch));
    }

    #[test]
    fn energy_reg_cases() {
        // E = -logsumexp; a single large logit gives E ~ -g
        let machine = Matrix::from_rows(&[vec![30.0, -50.0]]);
        let noise = Matrix::from_rows(&[vec![2.0, 1.0]]);
        assert_eq!(energy_reg_loss(&machine, &noise, -25.0, -7.0, 1.0).unwrap(), 0.0);
        // E = m_M + 2 for a K=1 row with logit -(m_M + 2)
        let machine = Matrix::from_rows(&[vec![23.0]]);
        let none = Matrix::zeros(0, 1);
        assert_abs_diff_eq!(energy_reg_loss(&machine, &none, -25.0, -7.0, 1.0).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn eb_cases() {
        let machine = Matrix::from_rows(&[(0..13).map(|i| i as f64 * 0.2).collect::<Vec<_>>()]);
        let noise = Matrix::from_rows(&[vec![0.0; 13]]);
        let plain =
            technique_loss(&TechniqueConfig::new(TechniqueKind::Softmax), &machine, &[3], &noise).unwrap().parts.total;
        assert_eq!(eb_total_loss(&machine, &[3], &noise, 0.0, -25.0, -7.0, 1.0).unwrap(), plain);
        // margins satisfied when E(machine) <= m_M and E(noise) >= m_N
        assert_abs_diff_eq!(eb_total_loss(&machine, &[3], &noise, 0.1, 0.0, -10.0, 1.0).unwrap(), plain);
        let reg = energy_reg_loss(&machine, &noise, -25.0, -7.0, 1.0).unwrap();
        let total = eb_total_loss(&machine, &[3], &noise, 0.1, -25.0, -7.0, 1.0).unwrap();
        assert_abs_diff_eq!(total, plain + 0.1 * reg, epsilon = 1e-12);
    }

    #[test]
    fn ac_cases() {
        let machine = confident(&[2], 14);
        let noise = confident(&[13, 13], 14);
        assert_abs_diff_eq!(ac_loss(&machine, &[2], &noise).unwrap(), 0.0, epsilon = 1e-12);
        let noise = Matrix::zeros(3, 14);
        assert_abs_diff_eq!(ac_loss(&machine, &[2], &noise).unwrap(), 14f64.ln(), epsilon = 1e-12);
        assert_eq!(
            ac_loss(&Matrix::zeros(1, 13), &[0], &Matrix::zeros(0, 13)),
            Err(TechniqueError::WrongOutputDim { expected: 14, got: 13 })
        );
    }

    #[test]
    fn score_cases() {
        let k = TechniqueKind::Softmax;
        assert_abs_diff_eq!(noise_score(k, &[0.0; 13], 1.0).unwrap(), 12.0 / 13.0, epsilon = 1e-12);
        assert_abs_diff_eq!(noise_score(k, &confident(&[3], 13).data, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(noise_score(TechniqueKind::FreeEnergy, &[0.0; 13], 1.0).unwrap(), -LN13, epsilon = 1e-12);
        assert_eq!(noise_score(TechniqueKind::AdditionalClass, &[0.0; 14], 1.0), Err(TechniqueError::NoScoreForAc));
    }

    #[test]
    fn decide_cases() {
        let d = decide(TechniqueKind::Softmax, &[0.0; 13], Some(0.5), 1.0).unwrap();
        assert_eq!(d.outcome, Outcome::Noise);
        let d = decide(TechniqueKind::Softmax, &confident(&[3], 13).data, Some(0.5), 1.0).unwrap();
        assert_eq!(d.outcome.label_index(), 3);
        let d = decide(TechniqueKind::AdditionalClass, &confident(&[13], 14).data, Some(-1e9), 1.0).unwrap();
        assert_eq!(d.outcome, Outcome::Noise);
        assert_eq!(d.noise_score, None);
        assert_eq!(decide(TechniqueKind::NoiseExposure, &[0.0; 13], None, 1.0), Err(TechniqueError::MissingThreshold));
        // strict comparison: a score equal to the threshold stays a machine decision
        let d = decide(TechniqueKind::Softmax, &[0.0; 13], Some(12.0 / 13.0), 1.0).unwrap();
        let s = d.noise_score.unwrap();
        let d2 = decide(TechniqueKind::Softmax, &[0.0; 13], Some(s), 1.0).unwrap();
        assert_eq!(d2.outcome.label_index(), 0);
    }

    #[test]
    fn calibration_example() {
        let items = [
            ValItem { score: 0.8, truth: NOISE_LABEL, argmax: 0 },
            ValItem { score: 0.9, truth: NOISE_LABEL, argmax: 1 },
            ValItem { score: 0.1, truth: 0, argmax: 0 },
            ValItem { score: 0.2, truth: 5, argmax: 5 },
        ];
        let c = calibrate_threshold(&items).unwrap();
        assert_eq!(c.threshold, 0.5);
        // classes never seen score 0, so macro F1 over 14 is 3/14
        assert_abs_diff_eq!(c.macro_f1, 3.0 / 14.0, epsilon = 1e-15);
    }

    #[test]
    fn calibration_all_equal_scores() {
        let items = [
            ValItem { score: 0.4, truth: NOISE_LABEL, argmax: 0 },
            ValItem { score: 0.4, truth: 2, argmax: 2 },
            ValItem { score: 0.4, truth: 2, argmax: 2 },
        ];
        let c = calibrate_threshold(&items).unwrap();
        assert_eq!(c.threshold, f64::INFINITY);
        let items = [
            ValItem { score: 0.4, truth: NOISE_LABEL, argmax: 0 },
            ValItem { score: 0.4, truth: NOISE_LABEL, argmax: 0 },
            ValItem { score: 0.4, truth: 2, argmax: 3 },
        ];
        assert_eq!(calibrate_threshold(&items).unwrap().threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn calibration_errors() {
        let only_noise = [ValItem { score: 0.1, truth: NOISE_LABEL, argmax: 0 }];
        assert_eq!(calibrate_threshold(&only_noise), Err(TechniqueError::DegenerateValidation));
        assert_eq!(calibrate_threshold(&[]), Err(TechniqueError::DegenerateValidation));
        let bad = [ValItem { score: f64::NAN, truth: 0, argmax: 0 }];
        assert_eq!(calibrate_threshold(&bad), Err(TechniqueError::InvalidItem));
    }
}
