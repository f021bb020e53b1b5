use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use setrans::data::pgm::decode_pgm;
use setrans::matrix::Matrix;
use setrans::objectives::{macro_acc, macro_auprc, roc_auc, EvalReport, TieMode};
use setrans_cli::output::parse_matrix_csv;
use setrans_cli::{run_from, Outcome};

const TINY_MODEL: &str = r#"{"channels": [4, 8], "reduction": 2, "heads": 2, "ffn": 8}"#;

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn run(args: &[&str]) -> Outcome {
    let mut full = vec!["setrans"];
    full.extend_from_slice(args);
    run_from(full).unwrap_or_else(|e| panic!("{args:?}: {e:#}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("tiny.json"), TINY_MODEL).unwrap();
        Fixture { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn synth(&self, task: &str, out: &str) -> PathBuf {
        run(&["synth", "--task", task, "--seed", "7", "--duration", "1", "--out", s(&self.p(out))]);
        self.p(out).join("manifest.jsonl")
    }

    fn train(&self, task: &str, manifest: &Path, out: &str, extra: &[&str]) -> Outcome {
        let cfg = self.p("tiny.json");
        let mut args = vec![
            "train",
            "--task",
            task,
            "--manifest",
            s(manifest),
            "--config",
            s(&cfg),
            "--epochs",
            "1",
            "--batch-size",
            "8",
            "--mode",
            "f64",
            "--out",
        ];
        let out = self.p(out);
        args.push(s(&out));
        args.extend_from_slice(extra);
        run(&args)
    }
}

#[test]
fn synth_is_reproducible_and_summarized() {
    let f = Fixture::new();
    let Outcome::Synth(a) = run(&["synth", "--task", "asc", "--seed", "7", "--duration", "0.5", "--out", s(&f.p("a"))])
    else {
        panic!("synth outcome")
    };
    run(&["synth", "--task", "asc", "--seed", "7", "--duration", "0.5", "--out", s(&f.p("b"))]);
    let (ta, tb) = (tree(&f.p("a")), tree(&f.p("b")));
    assert_eq!(ta.len(), 61);
    assert_eq!(ta, tb);
    let lines = fs::read_to_string(f.p("a/manifest.jsonl")).unwrap().lines().count();
    let summarized: usize = a
        .summary
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(summarized, lines);
    assert!(a.summary.starts_with(&format!("{lines} clips")));
    // Rerunning into the same directory rewrites identical bytes.
    run(&["synth", "--task", "asc", "--seed", "7", "--duration", "0.5", "--out", s(&f.p("a"))]);
    assert_eq!(tree(&f.p("a")), tb);
}

#[test]
fn binary_reports_failures_with_a_nonzero_exit() {
    let f = Fixture::new();
    fs::write(f.p("file"), "not a directory").unwrap();
    let bin = env!("CARGO_BIN_EXE_setrans");
    let out = Command::new(bin)
        .args(["synth", "--task", "ust", "--duration", "0.1", "--out"])
        .arg(f.p("file/inside"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let missing = Command::new(bin)
        .args(["train", "--task", "asc", "--manifest"])
        .arg(f.p("missing.jsonl"))
        .arg("--out")
        .arg(f.p("run"))
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.jsonl"));
    assert!(!f.p("run").exists());
    let leftovers: Vec<_> = fs::read_dir(&f.root).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 2, "{leftovers:?}");

    let ok = Command::new(bin)
        .args(["synth", "--task", "ust", "--duration", "0.1", "--out"])
        .arg(f.p("ust"))
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("80 clips"));
}

#[test]
fn failed_training_leaves_no_partial_outputs() {
    let f = Fixture::new();
    let manifest = f.synth("asc", "asc");
    fs::write(f.p("bad.json"), r#"{"heads": 3}"#).unwrap();
    let err = run_from([
        "setrans",
        "train",
        "--task",
        "asc",
        "--manifest",
        s(&manifest),
        "--config",
        s(&f.p("bad.json")),
        "--out",
        s(&f.p("run")),
    ])
    .unwrap_err();
    assert!(format!("{err:#}").contains("heads"), "{err:#}");
    assert!(!f.p("run").exists());
    let wrong_task = run_from(["setrans", "train", "--task", "ust", "--manifest", s(&manifest), "--out", s(&f.p("run"))]);
    assert!(wrong_task.is_err());
    assert!(!f.p("run").exists());
}

#[test]
fn augmentation_flag_only_changes_augmentation_draws() {
    let f = Fixture::new();
    let manifest = f.synth("ust", "ust");
    let Outcome::Train(none) = f.train("ust", &manifest, "none", &["--augment", "none"]) else { panic!() };
    let Outcome::Train(fmix) = f.train("ust", &manifest, "fmix", &["--augment", "fmix"]) else { panic!() };
    assert_eq!(none.log.epochs[0], fmix.log.epochs[0]);
    assert_ne!(none.log.epochs[1].loss, fmix.log.epochs[1].loss);
    let row0 = |dir: &str| fs::read_to_string(f.p(dir).join("log.csv")).unwrap().lines().nth(1).unwrap().to_string();
    assert_eq!(row0("none"), row0("fmix"));
}

#[test]
fn scene_evaluation_artifacts_agree_with_the_metrics() {
    let f = Fixture::new();
    let manifest = f.synth("asc", "asc");
    f.train("asc", &manifest, "run", &[]);
    let ckpt = f.p("run/model.setc");
    let Outcome::Eval(EvalReport::Asc(report)) = run(&[
        "eval", "--task", "asc", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&f.p("ev")),
    ]) else {
        panic!("scene report")
    };
    let confusion = csv_rows(&f.p("ev/confusion.csv"));
    for (k, row) in confusion.iter().enumerate() {
        let total: usize = row[1..].iter().map(|v| v.parse::<usize>().unwrap()).sum();
        assert_eq!(total, 6, "class {k}");
    }
    let preds = csv_rows(&f.p("ev/predictions.csv"));
    let truth: Vec<usize> = preds.iter().map(|r| r[1].parse().unwrap()).collect();
    let pred: Vec<usize> = preds.iter().map(|r| r[2].parse().unwrap()).collect();
    let expected = macro_acc(&pred, &truth, 3).unwrap();
    assert_eq!(expected, report.macro_acc);
    let reported = fs::read_to_string(f.p("ev/report.csv")).unwrap();
    assert!(reported.starts_with(&format!("metric,value\nmacro_acc,{expected}\n")));

    let err = run_from([
        "setrans", "eval", "--task", "asd", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&f.p("x")),
    ]);
    assert!(err.is_err());
    assert!(!f.p("x").exists());
}

#[test]
fn tagging_evaluation_artifacts_agree_with_the_metrics() {
    let f = Fixture::new();
    let manifest = f.synth("ust", "ust");
    f.train("ust", &manifest, "run", &[]);
    let Outcome::Eval(EvalReport::Ust(report)) = run(&[
        "eval", "--task", "ust", "--checkpoint", s(&f.p("run/model.setc")), "--manifest", s(&manifest), "--out",
        s(&f.p("ev")), "--mode", "f64",
    ]) else {
        panic!("tagging report")
    };
    let rows = csv_rows(&f.p("ev/scores.csv"));
    let n = report.scores.cols();
    let nums = |r: &Vec<String>, range: std::ops::Range<usize>| -> Vec<f64> { r[range].iter().map(|v| v.parse().unwrap()).collect() };
    let scores = Matrix::from_rows(&rows.iter().map(|r| nums(r, 1..1 + n)).collect::<Vec<_>>()).unwrap();
    let truths = Matrix::from_rows(&rows.iter().map(|r| nums(r, 1 + n..1 + 2 * n)).collect::<Vec<_>>()).unwrap();
    assert_eq!(macro_auprc(&scores, &truths).unwrap().0, report.macro_auprc);
    let curves = csv_rows(&f.p("ev/prcurves.csv"));
    assert!(curves.iter().any(|r| r[0] == "micro"));
    assert!(curves.iter().all(|r| r[2].parse::<f64>().unwrap() <= 1.0));
}

#[test]
fn anomaly_evaluation_writes_corner_to_corner_roc_curves() {
    let f = Fixture::new();
    let manifest = f.synth("asd", "asd");
    fs::write(f.p("asd.json"), r#"{"channels": [4, 8], "reduction": 2, "heads": 2, "ffn": 8, "windows_per_clip": 2}"#)
        .unwrap();
    run(&[
        "train", "--task", "asd", "--manifest", s(&manifest), "--config", s(&f.p("asd.json")), "--epochs", "1",
        "--out", s(&f.p("run")),
    ]);
    let Outcome::Eval(EvalReport::Asd(report)) = run(&[
        "eval", "--task", "asd", "--checkpoint", s(&f.p("run/model.setc")), "--manifest", s(&manifest), "--out",
        s(&f.p("ev")),
    ]) else {
        panic!("anomaly report")
    };
    assert_eq!(report.sections.len(), 6);
    let roc = csv_rows(&f.p("ev/roc.csv"));
    for sec in &report.sections {
        let key = (sec.section.to_string(), sec.domain.to_string());
        let pts: Vec<(f64, f64)> = roc
            .iter()
            .filter(|r| (r[0].clone(), r[1].clone()) == key)
            .map(|r| (r[2].parse().unwrap(), r[3].parse().unwrap()))
            .collect();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        let scores = csv_rows(&f.p("ev/scores.csv"));
        let pick = |flag: &str| -> Vec<f64> {
            scores
                .iter()
                .filter(|r| (r[0].clone(), r[1].clone()) == key && r[2] == flag)
                .map(|r| r[3].parse().unwrap())
                .collect()
        };
        assert_eq!(roc_auc(&pick("1"), &pick("0"), TieMode::Strict).unwrap(), sec.auc);
    }
}

#[test]
fn fmix_demo_masks_are_binary_and_match_lambda() {
    let f = Fixture::new();
    let m = Matrix::new(20, 12, (0..240).map(|i| ((i * 37) % 101) as f64 / 10.0).collect()).unwrap();
    m.save(&f.p("x.txt")).unwrap();
    for seed in ["1", "2", "3"] {
        let out = f.p(&format!("demo{seed}"));
        let Outcome::Augment(a) =
            run(&["augment-demo", "--features", s(&f.p("x.txt")), "--augment", "fmix", "--seed", seed, "--out", s(&out)])
        else {
            panic!("augment outcome")
        };
        let lambda = a.lambda.unwrap();
        assert!(a.header.contains(&format!("lambda = {lambda}")));
        let mask = parse_matrix_csv(&fs::read_to_string(out.join("mask.csv")).unwrap()).unwrap();
        let ones = mask.data().iter().filter(|&&v| v == 1.0).count();
        assert!((ones as f64 / 240.0 - lambda).abs() <= 1.0 / 240.0);
        let (w, h, px) = decode_pgm(&fs::read(out.join("mask.pgm")).unwrap()).unwrap();
        assert_eq!((w, h), (20, 12));
        if ones > 0 && ones < 240 {
            assert!(px.iter().all(|&p| p == 0 || p == 255));
        }
    }
    run(&["augment-demo", "--features", s(&f.p("x.txt")), "--augment", "fmix", "--seed", "1", "--out", s(&f.p("again"))]);
    assert_eq!(tree(&f.p("demo1")), tree(&f.p("again")));
    for method in ["mixup", "specaugment", "none"] {
        let out = f.p(method);
        run(&["augment-demo", "--features", s(&f.p("x.txt")), "--augment", method, "--out", s(&out)]);
        assert!(out.join("original.pgm").exists());
    }
    assert!(!f.p("none/mixed.csv").exists());
}

#[test]
fn inspection_exports_are_consistent() {
    let f = Fixture::new();
    let manifest = f.synth("asc", "asc");
    f.train("asc", &manifest, "run", &[]);
    run(&["extract", "--task", "asc", "--manifest", s(&manifest), "--split", "test", "--out", s(&f.p("feats"))]);
    let index = csv_rows(&f.p("feats/features.csv"));
    assert_eq!(index.len(), 18);
    assert!(index.iter().all(|r| r[2] == "500" && r[3] == "40"));
    let sample = f.p("feats").join(&index[0][1]);
    let wav = f.p("asc").join(&index[0][0]);
    for (name, input) in [("from_features", &sample), ("from_wav", &wav)] {
        let out = f.p(name);
        let Outcome::Inspect(outcome) =
            run(&["inspect", "--checkpoint", s(&f.p("run/model.setc")), "--sample", s(input), "--out", s(&out)])
        else {
            panic!("inspect outcome")
        };
        let attention = csv_rows(&out.join("attention.csv"));
        assert_eq!(attention.len(), 16);
        for row in &attention {
            assert_eq!(row.len(), 18);
            let sum: f64 = row[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let gates = csv_rows(&out.join("se_weights.csv"));
        assert!(gates.iter().all(|r| {
            let w: f64 = r[3].parse().unwrap();
            w > 0.0 && w < 1.0
        }));
        let last: Vec<f64> = gates.iter().filter(|r| r[0] == "1" && r[1] == "1").map(|r| r[3].parse().unwrap()).collect();
        assert_eq!(last.len(), 8);
        let argmax = (0..last.len()).fold(0, |b, i| if last[i] > last[b] { i } else { b });
        assert_eq!(outcome.top_channel, argmax);
        let summary = fs::read_to_string(out.join("inspect.csv")).unwrap();
        assert!(summary.contains(&format!("top_channel,{argmax}\n")));
        let map = parse_matrix_csv(&fs::read_to_string(out.join("top_feature_map.csv")).unwrap()).unwrap();
        assert_eq!(map.shape(), (125, 10));
    }
    assert_eq!(
        fs::read(f.p("from_features/attention.csv")).unwrap(),
        fs::read(f.p("from_wav/attention.csv")).unwrap()
    );
}

#[test]
fn checkpoint_cadence_writes_intermediate_models() {
    let f = Fixture::new();
    let manifest = f.synth("asc", "asc");
    fs::write(
        f.p("cadence.json"),
        r#"{"channels": [4, 8], "reduction": 2, "heads": 2, "ffn": 8, "checkpoint_every": 2, "track_metric": false}"#,
    )
    .unwrap();
    run(&[
        "train", "--task", "asc", "--manifest", s(&manifest), "--config", s(&f.p("cadence.json")), "--epochs", "4",
        "--batch-size", "21", "--out", s(&f.p("run")),
    ]);
    let files: Vec<String> = tree(&f.p("run")).keys().map(|p| p.display().to_string()).collect();
    assert_eq!(
        files,
        ["checkpoints/epoch_0002.setc", "checkpoints/epoch_0004.setc", "config.json", "log.csv", "model.setc"]
    );
    assert_eq!(
        fs::read(f.p("run/checkpoints/epoch_0004.setc")).unwrap(),
        fs::read(f.p("run/model.setc")).unwrap()
    );
    let log = fs::read_to_string(f.p("run/log.csv")).unwrap();
    assert!(log.lines().nth(1).unwrap().ends_with(','));
}
