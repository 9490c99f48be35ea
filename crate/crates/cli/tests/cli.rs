use std::path::Path;
use std::process::{Command, Output};

fn qtune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtune")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qtune(args);
    assert!(
        out.status.success(),
        "qtune {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(dir: &Path, kind: &str, count: &str) {
    ok(&["gen-corpus", "--kind", kind, "--count", count, "--size", "32", "--seed", "4", "--out", p(dir)]);
}

#[test]
fn gen_corpus_writes_images_labels_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("labeled");
    corpus(&dir, "labeled", "8");
    let ppms = std::fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm")).count();
    assert_eq!(ppms, 8);
    let labels = std::fs::read_to_string(dir.join("labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 8);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["command"], "gen-corpus");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 9);
}

#[test]
fn optimize_evaluate_and_export_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "natural", "6");
    let run = tmp.path().join("run");
    let stdout = ok(&[
        "optimize-rd", "--dataset", p(&data), "--size", "32", "--steps", "20", "--lr", "5e-3", "--cr", "100", "--out", p(&run),
    ]);
    assert!(stdout.contains("20 steps"));
    for f in ["tables.txt", "loss_trace.csv", "entropy.ckpt", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let trace = std::fs::read_to_string(run.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);

    let eval = tmp.path().join("eval");
    let tables = run.join("tables.txt");
    ok(&["eval-curve", "--dataset", p(&data), "--size", "32", "--tables", p(&tables), "--qlist", "20,50,80", "--out", p(&eval)]);
    let curve = std::fs::read_to_string(eval.join("curve.csv")).unwrap();
    assert!(curve.starts_with("q,bpp_actual,bpp_estimated,psnr,accuracy"));
    assert_eq!(curve.lines().count(), 4);
    assert!(eval.join("baseline_curve.csv").exists());

    let est = tmp.path().join("est");
    let ckpt = run.join("entropy.ckpt");
    let out = ok(&[
        "estimate-vs-actual", "--dataset", p(&data), "--size", "32", "--tables", p(&tables), "--entropy-ckpt", p(&ckpt),
        "--qlist", "10,30,50,70,90", "--out", p(&est),
    ]);
    assert!(out.starts_with("pearson r = "));
    let r: f64 = std::fs::read_to_string(est.join("pearson.txt")).unwrap().trim().parse().unwrap();
    assert!((-1.0..=1.0).contains(&r));
    assert_eq!(std::fs::read_to_string(est.join("scatter.csv")).unwrap().lines().count(), 31);

    let exp = tmp.path().join("export");
    ok(&["export-tables", "--tables", p(&tables), "--quality", "75", "--out", p(&exp)]);
    let ints = std::fs::read_to_string(exp.join("tables_q75.txt")).unwrap();
    let values: Vec<u32> = ints
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace().map(|v| v.parse::<u32>().unwrap()))
        .collect();
    assert_eq!(values.len(), 128);
    assert!(values.iter().all(|v| (1..=255).contains(v)));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "natural", "4");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        ok(&["optimize-rd", "--dataset", p(&data), "--size", "32", "--steps", "15", "--seed", "3", "--out", p(&out)]);
        outputs.push(std::fs::read(out.join("tables.txt")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn rate_accuracy_and_per_image_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "labeled", "40");
    let labels = data.join("labels.txt");
    let ra = tmp.path().join("ra");
    ok(&["optimize-ra", "--dataset", p(&data), "--labels", p(&labels), "--size", "32", "--steps", "5", "--out", p(&ra)]);
    assert!(ra.join("classifier.ckpt").exists());
    let manifest = std::fs::read_to_string(ra.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"task\": 1.0"));

    let per = tmp.path().join("per");
    ok(&[
        "optimize-per-image", "--dataset", p(&data), "--size", "32", "--steps", "5", "--limit", "2",
        "--tables", p(&ra.join("tables.txt")), "--out", p(&per),
    ]);
    let n = std::fs::read_dir(per.join("per_image")).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tables.txt")).count();
    assert_eq!(n, 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "natural", "3");
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "dataset = data\nsize = 32\nsteps = 4\nrelaxation = soft\nout = from-config\n").unwrap();
    let out = tmp.path().join("flag-out");
    ok(&["optimize-rd", "--config", p(&cfg), "--steps", "2", "--out", p(&out)]);
    let trace = std::fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"relaxation\": \"soft\""));
}

#[test]
fn errors_are_one_line_with_exit_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["optimize-rd".into(), "--dataset".into(), tmp.path().join("missing").display().to_string()],
        vec!["eval-curve".into(), "--qlist".into(), "0,50".into()],
        vec!["optimize-rd".into(), "--cr=-1".into()],
        vec!["export-tables".into(), "--quality".into(), "101".into()],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = qtune(&[&args[..], &["--out", p(&tmp.path().join("o"))]].concat());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn unlabeled_images_are_rejected_for_rate_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "labeled", "4");
    let labels = tmp.path().join("partial.txt");
    std::fs::write(&labels, "img_00000.ppm 0\n").unwrap();
    let out = qtune(&["optimize-ra", "--dataset", p(&data), "--labels", p(&labels), "--size", "32", "--steps", "1", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no label"));
}
