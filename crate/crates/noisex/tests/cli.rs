use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn noisex(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisex")).args(args).current_dir(dir).env("NOISEX_WORKERS", "1").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = "protocol = \"same-env\"\nmachine = \"car\"\n\
    assignments = [{ train = \"N1\", test = \"N1\" }]\ntechniques = [\"NE\"]\nseeds = [0]\n\
    scale = 0.02\nduration_s = 0.5\n\
    [features]\nn_fft = 256\nhop = 128\nn_mels = 16\nfmin = 0.0\nfmax = 4000.0\nlog_floor = 1e-10\n\
    [training]\nepochs = 2\nspectral = 4\nblocks = [{ channels = 3, pool = [2, 2] }]\n";

#[test]
fn dataset_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(&noisex(
        &["dataset", "--config", "tiny.toml", "--env", "N2", "--test-env", "N3", "--out", "ds", "--features"],
        d,
    ));
    let manifest = fs::read_to_string(d.join("ds/manifest.csv")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("path,label,env,snr_db,split"));
    let rows: Vec<&str> = lines.collect();
    // 4 normal + 12 faults + 16 noise in each split at this scale
    assert_eq!(rows.len(), 3 * 32);
    assert!(rows.iter().all(|r| d.join("ds").join(r.split(',').next().unwrap()).exists()));
    assert!(rows.iter().any(|r| r.ends_with(",noise,N3,,test")));
    assert!(d.join("ds/validation.nxft").exists());

    let out = ok(&noisex(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--technique",
            "SM",
            "--env",
            "N1",
            "--out",
            "m/sm.nxck",
            "--history",
            "h.csv",
        ],
        d,
    ));
    assert!(out.starts_with("best epoch"), "{out}");
    let history = fs::read_to_string(d.join("h.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,loss,val_f1,eta\n"));

    let out = ok(&noisex(&["eval", "--config", "tiny.toml", "--checkpoint", "m/sm.nxck", "--env", "N4"], d));
    assert!(out.starts_with("technique SM\nthreshold "), "{out}");
    assert!(out.contains("\nmacro_f1 "));
    assert_eq!(out.lines().filter(|l| l.split(',').count() == 14).count(), 14);
}

#[test]
fn experiment_from_generated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&noisex(
        &[
            "synth",
            "--out",
            "corpus",
            "--machine",
            "car",
            "--per-condition",
            "12",
            "--per-env",
            "96",
            "--duration",
            "0.5",
        ],
        d,
    ));
    assert!(d.join("corpus/car/b-middle/0011.wav").exists());
    assert!(d.join("corpus/noise/N4/0095.wav").exists());
    let sources = fs::read_to_string(d.join("corpus/sources.csv")).unwrap();
    assert_eq!(sources.lines().count(), 1 + 13 * 12 + 4 * 96);

    let spec = TINY.replace("duration_s = 0.5\n", "duration_s = 0.5\nmanifest = \"corpus/sources.csv\"\n");
    fs::write(d.join("real.toml"), spec).unwrap();
    let table = ok(&noisex(&["experiment", "--quiet", "--config", "real.toml", "--out", "res"], d));
    assert!(table.starts_with("| train | test | NE |\n|---|---|---:|\n| N1 | N1 | **"), "{table}");
    let csv = ok(&noisex(&["report", "--results", "res/results.csv", "--format", "csv", "--metric", "noise_f1"], d));
    assert!(csv.starts_with("train,test,NE,best\nN1,N1,"), "{csv}");
    assert_eq!(fs::read_to_string(d.join("res/noise_f1.csv")).unwrap(), csv);
}

#[test]
fn mix_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&noisex(
        &["synth", "--out", "c", "--machine", "train", "--per-condition", "1", "--per-env", "1", "--duration", "0.25"],
        d,
    ));
    let out = ok(&noisex(
        &[
            "mix",
            "--signal",
            "c/train/normal/0000.wav",
            "--noise",
            "c/noise/N2/0000.wav",
            "--snr",
            "-6",
            "--out",
            "mix.wav",
        ],
        d,
    ));
    assert!(out.starts_with("noise gain "), "{out}");
    assert_eq!(fs::metadata(d.join("mix.wav")).unwrap().len(), 44 + 2 * 2000);
}

#[test]
fn failures_exit_with_category_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| noisex(args, d).status.code().unwrap();
    assert_eq!(code(&["report", "--results", "missing.csv"]), 3);
    fs::write(d.join("bad.wav"), b"RIFX nonsense").unwrap();
    assert_eq!(code(&["mix", "--signal", "bad.wav", "--noise", "bad.wav", "--snr", "0", "--out", "o.wav"]), 4);
    fs::write(
        d.join("bad.toml"),
        "protocol = \"unseen-env\"\nmachine = \"car\"\nassignments = [{ train = \"N1\", test = \"N1\" }]\n",
    )
    .unwrap();
    assert_eq!(code(&["experiment", "--config", "bad.toml", "--out", "o"]), 5);
    fs::write(
        d.join("partial.csv"),
        "train,test,technique,seed,macro_f1,noise_f1,best_epoch,eta\nN1,N1,SM,0,0.5,0.5,1,\nN1,N1,NE,1,0.5,0.5,1,\n",
    )
    .unwrap();
    assert_eq!(code(&["report", "--results", "partial.csv"]), 5);
    ok(&noisex(
        &["synth", "--out", "few", "--machine", "car", "--per-condition", "1", "--per-env", "1", "--duration", "0.5"],
        d,
    ));
    fs::write(
        d.join("few.toml"),
        TINY.replace("duration_s = 0.5\n", "duration_s = 0.5\nmanifest = \"few/sources.csv\"\n"),
    )
    .unwrap();
    let out = noisex(&["experiment", "--config", "few.toml", "--out", "o"], d);
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs at least"));
    assert_eq!(code(&["train", "--technique", "XX", "--env", "N1", "--out", "x"]), 2);
}
