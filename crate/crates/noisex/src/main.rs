use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use noisex::checkpoint::Checkpoint;
use noisex::config::{load_synth, ExperimentSpec, Protocol};
use noisex::error::{Error, Result};
use noisex::experiment::{self, DataSource, ResultTable};
use noisex::manifest::{self, SplitRecord};
use noisex::report::{self, Format, Metric};
use noisex::{featcache, history, wavio};
use noisex_core::dataset::{self, Split};
use noisex_core::features::LogMelExtractor;
use noisex_core::synth::{self, SynthConfig};
use noisex_core::trainer::{self, FeatureSet};
use noisex_core::{rng, Label, Machine, MachineCondition, NoiseEnvironment, TechniqueKind, NUM_LABELS};

#[derive(Parser)]
#[command(name = "noisex", version, about = "Noise-robust machine fault classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of machine sounds and noises.
    Synth(SynthArgs),
    /// Mix a machine sound with a noise at a given SNR.
    Mix(MixArgs),
    /// Build train, validation and test splits and write them to disk.
    Dataset(DatasetArgs),
    /// Train a single model and save the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test split.
    Eval(EvalArgs),
    /// Run a full experiment protocol and write its result tables.
    Experiment(ExperimentArgs),
    /// Render a results file as a comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator constants (TOML); built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to one machine.
    #[arg(long)]
    machine: Option<Machine>,
    #[arg(long, default_value_t = 4)]
    per_condition: usize,
    #[arg(long, default_value_t = 8)]
    per_env: usize,
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    signal: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Experiment settings shared by the single-run commands.
#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML); desk defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Machine, when no config is given.
    #[arg(long, default_value = "car")]
    machine: Machine,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        match &self.config {
            Some(p) => ExperimentSpec::load(p),
            None => Ok(ExperimentSpec::new(Protocol::SameEnv, self.machine)),
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Noise environment of the train and validation splits.
    #[arg(long)]
    env: NoiseEnvironment,
    /// Noise environment of the test split; defaults to `--env`.
    #[arg(long)]
    test_env: Option<NoiseEnvironment>,
    #[arg(long)]
    out: PathBuf,
    /// Also write log-Mel features per split.
    #[arg(long)]
    features: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    technique: TechniqueKind,
    #[arg(long)]
    env: NoiseEnvironment,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Noise environment of the test split.
    #[arg(long)]
    env: NoiseEnvironment,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.csv and the report tables.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: Format,
    #[arg(long, default_value = "macro_f1")]
    metric: Metric,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth_corpus(a: &SynthArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => load_synth(p)?,
        None => SynthConfig::default(),
    };
    let machines = a.machine.map_or(Machine::ALL.to_vec(), |m| vec![m]);
    let mut sources = String::from("path,machine,label,env\n");
    for m in machines {
        for c in MachineCondition::all() {
            for i in 0..a.per_condition {
                let seed = rng::derive(a.seed, &[0, m as u64, c.index() as u64, i as u64]);
                let clip = synth::gen_machine_sound(&config, m, c, a.duration, a.sample_rate, seed)?;
                let rel = format!("{}/{c}/{i:04}.wav", m.name());
                wavio::write_wav(&clip, a.out.join(&rel))?;
                sources += &format!("{rel},{},{c},\n", m.name());
            }
        }
    }
    for env in NoiseEnvironment::ALL {
        for i in 0..a.per_env {
            let seed = rng::derive(a.seed, &[1, env as u64, i as u64]);
            let clip = synth::gen_noise(&config, env, a.duration, a.sample_rate, seed)?;
            let rel = format!("noise/{env}/{i:04}.wav");
            wavio::write_wav(&clip, a.out.join(&rel))?;
            sources += &format!("{rel},,noise,{env}\n");
        }
    }
    write_text(&a.out.join("sources.csv"), &sources)
}

fn mix(a: &MixArgs) -> Result<()> {
    let signal = wavio::read_wav(&a.signal)?;
    let noise = wavio::read_wav(&a.noise)?;
    let m = dataset::mix_at_snr(&signal, &noise, a.snr)?;
    wavio::write_wav(&m.clip, &a.out)?;
    println!("noise gain {:.6}, peak scale {:.6}", m.noise_gain, m.peak_scale);
    Ok(())
}

fn build_dataset(a: &DatasetArgs) -> Result<()> {
    let spec = a.run.spec()?;
    let source = DataSource::for_spec(&spec)?;
    let test_env = a.test_env.unwrap_or(a.env);
    let extractor = LogMelExtractor::new(&spec.features, spec.sample_rate)?;
    let mut records = Vec::new();
    for split in Split::ALL {
        let examples = source.split(&spec, split, a.env, test_env, a.run.seed)?;
        for (i, ex) in examples.iter().enumerate() {
            let rel = format!("{}/{i:05}_{}.wav", split.name(), ex.label);
            wavio::write_wav(&ex.clip, a.out.join(&rel))?;
            records.push(SplitRecord {
                path: rel,
                label: ex.label.to_string(),
                env: ex.env.to_string(),
                snr_db: ex.snr_db,
                split,
            });
        }
        if a.features {
            let set = FeatureSet::from_examples(&examples, &extractor)?;
            featcache::save(&set, a.out.join(format!("{}.nxft", split.name())))?;
        }
        eprintln!("{}: {} clips", split.name(), examples.len());
    }
    manifest::write_split_manifest(a.out.join("manifest.csv"), &records)
}

fn train(a: &TrainArgs) -> Result<()> {
    let spec = a.run.spec()?;
    let source = DataSource::for_spec(&spec)?;
    let extractor = LogMelExtractor::new(&spec.features, spec.sample_rate)?;
    let data = experiment::training_features(&spec, &source, &extractor, a.env, a.run.seed)?;
    let out = experiment::train_one(&spec, &data, a.technique, a.run.seed)?;
    let mut technique = spec.technique.config(a.technique);
    technique.threshold = out.threshold;
    let ckpt = Checkpoint {
        model: out.model,
        optimizer: out.optimizer,
        technique,
        epoch: out.best_epoch,
        features: spec.features.clone(),
        sample_rate: spec.sample_rate,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ckpt.save(&a.out)?;
    if let Some(h) = &a.history {
        history::write(h, &out.history)?;
    }
    let best = &out.history[out.best_epoch - 1];
    println!("best epoch {} validation macro F1 {:.4}", best.epoch, best.val_f1);
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut spec = a.run.spec()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    spec.features = ckpt.features.clone();
    spec.sample_rate = ckpt.sample_rate;
    let source = DataSource::for_spec(&spec)?;
    let extractor = LogMelExtractor::new(&spec.features, spec.sample_rate)?;
    let test = experiment::test_features(&spec, &source, &extractor, a.env, a.run.seed)?;
    let r = trainer::evaluate(&ckpt.model, &ckpt.technique, ckpt.threshold(), &test)?;
    println!("technique {}", ckpt.technique.kind);
    match ckpt.threshold() {
        Some(eta) => println!("threshold {eta}"),
        None => println!("threshold none"),
    }
    println!("macro_f1 {:.6}", r.macro_f1);
    println!("noise_f1 {:.6}", r.noise_f1);
    println!("class,f1");
    for (i, f1) in r.per_class_f1.iter().enumerate() {
        println!("{},{f1:.6}", Label::from_index(i).expect("label index"));
    }
    println!("confusion (rows truth, columns prediction)");
    for i in 0..NUM_LABELS {
        let row: Vec<String> = r.confusion.row(i).iter().map(u64::to_string).collect();
        println!("{}", row.join(","));
    }
    Ok(())
}

fn run_experiment(a: &ExperimentArgs) -> Result<()> {
    let spec = ExperimentSpec::load(&a.config)?;
    let workers = experiment::workers_from_env()?;
    let quiet = a.quiet;
    let table = experiment::run_experiment_with(&spec, workers, &|r| {
        if !quiet {
            eprintln!("{}", experiment::describe(r));
        }
    })?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    table.save(a.out.join("results.csv"))?;
    for metric in [Metric::MacroF1, Metric::NoiseF1] {
        for (format, ext) in [(Format::Markdown, "md"), (Format::Csv, "csv")] {
            let text = report::emit_table(&table, format, metric)?;
            write_text(&a.out.join(format!("{}.{ext}", metric.name())), &text)?;
        }
    }
    print!("{}", report::emit_table(&table, Format::Markdown, Metric::MacroF1)?);
    Ok(())
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let table = ResultTable::load(&a.results)?;
    let text = report::emit_table(&table, a.format, a.metric)?;
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth_corpus(a),
        Command::Mix(a) => mix(a),
        Command::Dataset(a) => build_dataset(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => run_experiment(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
