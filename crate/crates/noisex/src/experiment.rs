//! Experiment runner: one training run per (train environment, technique,
//! seed), evaluated on the test split of every assigned test environment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use noisex_core::dataset::{build_split, BuildParams, ClipSource, LabeledExample, Split, SplitSpec, SynthSource};
use noisex_core::features::LogMelExtractor;
use noisex_core::synth::SynthConfig;
use noisex_core::trainer::{self, FeatureSet, TrainOutcome, TrainingData};
use noisex_core::{NoiseEnvironment, TechniqueKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Assignment, ExperimentSpec};
use crate::error::{Error, Result};
use crate::manifest::ManifestSource;

pub const WORKERS_ENV: &str = "NOISEX_WORKERS";

/// Where clean recordings and noises come from.
pub enum DataSource {
    Synth(Box<SynthConfig>),
    Manifest(ManifestSource),
}

impl DataSource {
    pub fn for_spec(spec: &ExperimentSpec) -> Result<Self> {
        match &spec.manifest {
            Some(p) => Ok(DataSource::Manifest(ManifestSource::load(p)?)),
            None => Ok(DataSource::Synth(Box::new(spec.synth_config()?))),
        }
    }

    fn with_source<T>(&self, spec: &ExperimentSpec, seed: u64, f: impl FnOnce(&dyn ClipSource) -> T) -> T {
        match self {
            DataSource::Synth(config) => {
                f(&SynthSource { config, duration_s: spec.duration_s, sample_rate: spec.sample_rate, seed })
            }
            DataSource::Manifest(m) => f(m),
        }
    }

    /// One split for `seed`. Train and validation use `env_train`, test uses
    /// `env_test`.
    pub fn split(
        &self,
        spec: &ExperimentSpec,
        split: Split,
        env_train: NoiseEnvironment,
        env_test: NoiseEnvironment,
        seed: u64,
    ) -> Result<Vec<LabeledExample>> {
        let counts = SplitSpec::for_machine(spec.machine).scaled(spec.scale)?;
        let params = BuildParams {
            machine: spec.machine,
            env_train,
            env_test,
            snr_range_db: (spec.snr_db[0], spec.snr_db[1]),
            seed,
            keep_components: false,
        };
        Ok(self.with_source(spec, seed, |src| build_split(&counts, &params, split, src))?)
    }
}

/// Worker count from `NOISEX_WORKERS`, else the available parallelism.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub train: NoiseEnvironment,
    pub test: NoiseEnvironment,
    pub technique: TechniqueKind,
    pub seed: u64,
    pub macro_f1: f64,
    pub noise_f1: f64,
    pub best_epoch: usize,
    pub eta: Option<f64>,
}

impl RunResult {
    pub fn assignment(&self) -> Assignment {
        Assignment { train: self.train, test: self.test }
    }
}

/// Per-seed results plus the axes they are expected to cover.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub assignments: Vec<Assignment>,
    pub techniques: Vec<TechniqueKind>,
    pub seeds: Vec<u64>,
    pub rows: Vec<RunResult>,
}

fn push_unique<T: PartialEq + Copy>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

impl ResultTable {
    /// Axes taken from the rows in order of first appearance.
    pub fn from_rows(rows: Vec<RunResult>) -> Self {
        let mut t = ResultTable { assignments: Vec::new(), techniques: Vec::new(), seeds: Vec::new(), rows };
        for r in &t.rows {
            push_unique(&mut t.assignments, r.assignment());
            push_unique(&mut t.techniques, r.technique);
            push_unique(&mut t.seeds, r.seed);
        }
        t
    }

    pub fn expected_len(&self) -> usize {
        self.assignments.len() * self.techniques.len() * self.seeds.len()
    }

    pub fn get(&self, a: Assignment, technique: TechniqueKind, seed: u64) -> Option<&RunResult> {
        self.rows.iter().find(|r| r.assignment() == a && r.technique == technique && r.seed == seed)
    }

    /// Every (assignment, technique, seed) present exactly once.
    pub fn check_complete(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for r in &self.rows {
            if seen.insert((r.assignment(), r.technique, r.seed), ()).is_some() {
                return Err(Error::IncompleteTable(format!(
                    "duplicate entry {} {} seed {}",
                    r.assignment(),
                    r.technique,
                    r.seed
                )));
            }
        }
        for &a in &self.assignments {
            for &t in &self.techniques {
                for &s in &self.seeds {
                    if !seen.contains_key(&(a, t, s)) {
                        return Err(Error::IncompleteTable(format!("missing {a} {t} seed {s}")));
                    }
                }
            }
        }
        if self.rows.len() != self.expected_len() {
            return Err(Error::IncompleteTable("entries outside the table axes".into()));
        }
        Ok(())
    }

    /// Mean of `metric` over the seeds of one cell.
    pub fn mean(&self, a: Assignment, technique: TechniqueKind, metric: impl Fn(&RunResult) -> f64) -> Option<f64> {
        let vals: Vec<f64> =
            self.seeds.iter().map(|&s| self.get(a, technique, s).map(&metric)).collect::<Option<_>>()?;
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<Result<Vec<RunResult>, _>>();
        Ok(Self::from_rows(rows.map_err(|e| Error::format(path, e.to_string()))?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// Builds the train and validation features for one environment and seed.
pub fn training_features<'a>(
    spec: &ExperimentSpec,
    source: &DataSource,
    extractor: &'a LogMelExtractor,
    env: NoiseEnvironment,
    seed: u64,
) -> Result<TrainingData<'a>> {
    let train = source.split(spec, Split::Train, env, env, seed)?;
    let validation = source.split(spec, Split::Validation, env, env, seed)?;
    Ok(TrainingData::from_splits(&train, &validation, extractor)?)
}

pub fn test_features(
    spec: &ExperimentSpec,
    source: &DataSource,
    extractor: &LogMelExtractor,
    env: NoiseEnvironment,
    seed: u64,
) -> Result<FeatureSet> {
    // The test split does not depend on the training environment.
    let test = source.split(spec, Split::Test, env, env, seed)?;
    Ok(FeatureSet::from_examples(&test, extractor)?)
}

pub fn train_one(
    spec: &ExperimentSpec,
    data: &TrainingData<'_>,
    technique: TechniqueKind,
    seed: u64,
) -> Result<TrainOutcome> {
    let cfg = spec.training.train_config(spec.technique.config(technique), seed);
    Ok(trainer::train(&cfg, data)?)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    run_experiment_with(spec, workers_from_env()?, &|_| {})
}

/// Runs every cell on `workers` threads. `progress` sees each result as it
/// completes; the returned table is in spec order regardless.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    workers: usize,
    progress: &(dyn Fn(&RunResult) + Sync),
) -> Result<ResultTable> {
    spec.validate()?;
    let source = DataSource::for_spec(spec)?;
    let extractor = LogMelExtractor::new(&spec.features, spec.sample_rate)?;
    let assignments = spec.resolved_assignments();
    let mut train_envs = Vec::new();
    let mut test_envs = Vec::new();
    for a in &assignments {
        push_unique(&mut train_envs, a.train);
        push_unique(&mut test_envs, a.test);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| {
        let test_keys: Vec<(u64, NoiseEnvironment)> =
            spec.seeds.iter().flat_map(|&s| test_envs.iter().map(move |&e| (s, e))).collect();
        let tests: Vec<FeatureSet> = test_keys
            .par_iter()
            .map(|&(seed, env)| test_features(spec, &source, &extractor, env, seed))
            .collect::<Result<_>>()?;
        let tests: BTreeMap<(u64, NoiseEnvironment), FeatureSet> = test_keys.into_iter().zip(tests).collect();

        let jobs: Vec<(NoiseEnvironment, u64)> =
            train_envs.iter().flat_map(|&e| spec.seeds.iter().map(move |&s| (e, s))).collect();
        let per_job: Vec<Vec<RunResult>> = jobs
            .par_iter()
            .map(|&(env, seed)| {
                let data = training_features(spec, &source, &extractor, env, seed)?;
                spec.techniques
                    .par_iter()
                    .map(|&technique| {
                        let out = train_one(spec, &data, technique, seed)?;
                        let mut results = Vec::new();
                        for a in assignments.iter().filter(|a| a.train == env) {
                            let cfg = spec.technique.config(technique);
                            let report = trainer::evaluate(&out.model, &cfg, out.threshold, &tests[&(seed, a.test)])?;
                            let r = RunResult {
                                train: env,
                                test: a.test,
                                technique,
                                seed,
                                macro_f1: report.macro_f1,
                                noise_f1: report.noise_f1,
                                best_epoch: out.best_epoch,
                                eta: out.threshold,
                            };
                            progress(&r);
                            results.push(r);
                        }
                        Ok(results)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(|v| v.concat())
            })
            .collect::<Result<_>>()?;

        let mut by_key: BTreeMap<(Assignment, TechniqueKind, u64), RunResult> = BTreeMap::new();
        for r in per_job.into_iter().flatten() {
            by_key.insert((r.assignment(), r.technique, r.seed), r);
        }
        let mut rows = Vec::with_capacity(by_key.len());
        for &a in &assignments {
            for &t in &spec.techniques {
                for &s in &spec.seeds {
                    rows.extend(by_key.remove(&(a, t, s)));
                }
            }
        }
        let table = ResultTable { assignments, techniques: spec.techniques.clone(), seeds: spec.seeds.clone(), rows };
        table.check_complete()?;
        Ok(table)
    })
}

/// One-line summary of a finished run, for progress output.
pub fn describe(r: &RunResult) -> String {
    let mut s = format!(
        "{} {} seed {}: macro F1 {:.4}, noise F1 {:.4}",
        r.assignment(),
        r.technique,
        r.seed,
        r.macro_f1,
        r.noise_f1
    );
    if let Some(eta) = r.eta {
        let _ = write!(s, ", eta {eta:.4}");
    }
    s
}
