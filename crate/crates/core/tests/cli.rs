use std::path::Path;
use std::process::{Command, Output};

use pnf::cli::RunManifest;
use pnf::data::load_dataset;
use pnf::metrics::{read_predictions, EvalReport, Task};

fn pnf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnf"))
        .args(args)
        .current_dir(cwd)
        .env("PNF_RUNS_DIR", cwd.join("runs_root"))
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(s.trim_end().lines().count(), 1, "diagnostic should be one line: {s:?}");
    s
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_manifest_and_subjects() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pnf(&["synth", "--subjects", "50", "--cores-per-subject", "2", "--seed", "7", "--out", "data"], tmp.path());
    ok(&out);
    let data = tmp.path().join("data");
    let ds = load_dataset(&data).unwrap();
    assert_eq!(ds.subjects.len(), 50);
    assert_eq!(ds.cores.len(), 100);
    assert!(data.join("ground_truth").is_dir());
    let m = RunManifest::load(data.join("run_manifest.json")).unwrap();
    assert_eq!(m.invocation.name(), "synth");
    assert_eq!(m.seed, Some(7));
    assert!(m.wall_clock_secs.is_some());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pnf(&["synth", "--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    stderr_line(&out);
    let out = pnf(&["train", "--dataset", "missing"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("missing"));
    let out = pnf(&["synth", "--subjects", "3", "--prevalence", "1.5", "--out", "d"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    stderr_line(&out);
    std::fs::write(tmp.path().join("bad.json"), "{\"train\": {\"epochs\": \"many\"}}").unwrap();
    ok(&pnf(&["synth", "--subjects", "4", "--cores-per-subject", "2", "--out", "d"], tmp.path()));
    let out = pnf(&["crossval", "--dataset", "d", "--config", "bad.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    stderr_line(&out);
}

#[test]
fn pipeline_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("smoke.toml"),
        "[synth]\nn_subjects = 12\ncores_per_subject = 4\n\n[train]\nepochs = 2\nlearning_rate = 0.001\n",
    )
    .unwrap();
    ok(&pnf(&["synth", "--config", "smoke.toml", "--seed", "1", "--out", "data"], dir));
    let ds = load_dataset(dir.join("data")).unwrap();
    assert_eq!(ds.subjects.len(), 12);

    // no --out: goes to the run root from the environment
    ok(&pnf(&["crossval", "--config", "smoke.toml", "--dataset", "data", "--folds", "3", "--workers", "2", "--name", "cv"], dir));
    let cv = dir.join("runs_root/cv");
    let m = RunManifest::load(cv.join("run_manifest.json")).unwrap();
    match &m.invocation {
        pnf::cli::Invocation::Crossval { config, folds, .. } => {
            assert_eq!(config.epochs, 2);
            assert_eq!(config.learning_rate, 1e-3);
            assert_eq!(*folds, 3);
        }
        other => panic!("{other:?}"),
    }
    for f in 0..3 {
        for file in ["checkpoint.pnf", "epoch_log.csv", "config.json"] {
            assert!(cv.join(format!("fold{f}")).join(file).is_file());
        }
    }
    let oof = read_predictions(cv.join("oof_predictions.csv")).unwrap();
    assert_eq!(oof.len(), ds.cores.len());

    let oof_path = cv.join("oof_predictions.csv");
    ok(&pnf(
        &["calibrate", "--predictions", oof_path.to_str().unwrap(), "--reference", "data", "--dataset", "data", "--out", "bins.json"],
        dir,
    ));
    assert!(dir.join("bins.json.manifest.json").is_file());
    let bins: pnf::riskscore::RiskBins = serde_json::from_str(&std::fs::read_to_string(dir.join("bins.json")).unwrap()).unwrap();
    bins.validate().unwrap();
    assert_eq!(bins.provenance.n_model_scores, ds.cores.len());
    assert_eq!(bins.provenance.operating_specificity, Some(0.7));

    let ckpt = cv.join("fold0/checkpoint.pnf");
    let out = pnf(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "data", "--out", "ev"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("--bins"));
    assert!(!dir.join("ev").exists());

    ok(&pnf(
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "data", "--bins", "bins.json", "--out", "ev", "--figures", "2"],
        dir,
    ));
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.join("ev/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report.n_cores, ds.cores.len());
    assert_eq!(report.n_subjects, 12);
    assert_eq!(report.patients.len(), 12);
    let cspca = report.task(Task::CspcaVsRest).unwrap();
    assert_eq!(cspca.n, ds.cores.len());
    assert!(report.task(Task::PcaVsRest).unwrap().auroc.is_some());
    for p in &report.patients {
        let best = report.cores.iter().filter(|c| c.subject_id == p.subject_id).filter_map(|c| c.model_score).max();
        assert_eq!(p.model_score, best);
    }
    let figs: Vec<_> = std::fs::read_dir(dir.join("ev/figures")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(figs.iter().filter(|f| f.to_string_lossy().starts_with("overlay_")).count(), 2);
    assert!(dir.join("ev/figures/checkerboard.csv").is_file());
}

#[test]
fn replay_reproduces_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&pnf(&["synth", "--subjects", "6", "--cores-per-subject", "2", "--seed", "4", "--out", "data"], dir));
    ok(&pnf(&["replay", "data/run_manifest.json", "--out", "data2"], dir));
    assert_eq!(files_under(&dir.join("data")), files_under(&dir.join("data2")));

    ok(&pnf(&["train", "--dataset", "data", "--folds", "3", "--fold", "2", "--epochs", "2", "--out", "t1"], dir));
    ok(&pnf(&["replay", "t1/run_manifest.json", "--out", "t2"], dir));
    let a = files_under(&dir.join("t1"));
    assert!(a.iter().any(|(n, _)| n.ends_with("checkpoint.pnf")));
    assert_eq!(a, files_under(&dir.join("t2")));
}
