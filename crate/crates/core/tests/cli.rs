use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fusionbench::evalharness::{roc_auc, trapezoid_area};
use fusionbench::report::{audit_run, read_predictions, roc_points_from_svg, Matrix, Reference};
use fusionbench::Error;

const SMALL: &[&str] = &[
    "--n-subjects",
    "80",
    "--n-positive",
    "16",
    "--volume-shape",
    "20,32,32",
    "--ae2d-epochs",
    "2",
    "--mae-pretrain-epochs",
    "2",
    "--mae-finetune-epochs",
    "1",
    "--ssl-subjects",
    "24",
    "--resnet-epochs",
    "1",
    "--daft-epochs-2d",
    "2",
    "--daft-epochs-3d",
    "2",
    "--gbt-rounds",
    "10",
];

fn fb(args: &[&str], out: &Path, extra: &[&str]) -> Output {
    fb_threads(args, out, extra, "1")
}

fn fb_threads(args: &[&str], out: &Path, extra: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusionbench"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env("FUSIONBENCH_THREADS", threads)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn attr<'a>(tag: &'a str, name: &str) -> &'a str {
    let key = format!(" {name}=\"");
    let start = tag.find(&key).unwrap() + key.len();
    &tag[start..start + tag[start..].find('"').unwrap()]
}

#[test]
fn stages_demand_their_prerequisites() {
    let d = tempfile::tempdir().unwrap();
    let o = fb(&["run"], d.path(), SMALL);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("run synth first"), "{}", stderr(&o));

    assert!(fb(&["synth"], d.path(), SMALL).status.success());
    let o = fb(&["run"], d.path(), SMALL);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("latent store") && msg.contains("extract-latents"), "{msg}");

    let o = fb(&["extract-latents"], d.path(), SMALL);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("run train-extractors first"), "{}", stderr(&o));

    let o = fb(&["report"], d.path(), SMALL);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("matrix.json"), "{}", stderr(&o));
}

#[test]
fn bad_invocations_fail_with_a_diagnostic() {
    let d = tempfile::tempdir().unwrap();
    let o = fb(&["all", "--no-such-flag"], d.path(), &[]);
    assert!(!o.status.success());
    assert!(!stderr(&o).is_empty());
    let o = fb(&["frobnicate"], d.path(), &[]);
    assert!(!o.status.success());
    let o = fb(&["synth", "--scenarios", "gbt/nothing"], d.path(), SMALL);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("matches nothing"));
    let o = fb(&["synth", "--config", "/nonexistent/run.toml"], d.path(), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config file"));
    let o = Command::new(env!("CARGO_BIN_EXE_fusionbench"))
        .args(["synth", "--out"])
        .arg(d.path())
        .args(SMALL)
        .env("FUSIONBENCH_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("FUSIONBENCH_THREADS"));
}

#[test]
fn config_file_keys_are_overridden_by_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "seed = 1\nn_subjects = 70\nn_positive = 14\nvolume_shape = [16, 16, 16]\nscenarios = [\"gbt/tabular\"]\nphase = \"pre_op\"\n").unwrap();
    let out = d.path().join("out");
    let o = fb(&["all", "--config", cfg.to_str().unwrap(), "--n-subjects", "60"], &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Matrix::read(&out.join("matrix.json")).unwrap();
    assert_eq!(m.seed, 1);
    assert_eq!(m.n_subjects, 60);
    let ids: Vec<&str> = m.entries.iter().map(|e| e.scenario.as_str()).collect();
    assert_eq!(ids, ["gbt/tabular/pre_op"]);
}

#[test]
fn all_is_deterministic_and_reports_match_the_matrix() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let o = fb(&["all", "--seed", "11"], &a, SMALL);
    assert!(o.status.success(), "{}", stderr(&o));
    // thread count must not change a single byte
    let o = fb_threads(&["all", "--seed", "11"], &b, SMALL, "3");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["matrix.json", "predictions.csv", "audit.json", "report_f1.svg", "report_roc.svg", "summary.md"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = d.path().join("c");
    assert!(fb(&["all", "--seed", "12"], &c, SMALL).status.success());
    assert_ne!(fs::read(a.join("matrix.json")).unwrap(), fs::read(c.join("matrix.json")).unwrap());

    let m = Matrix::read(&a.join("matrix.json")).unwrap();
    assert_eq!(m.entries.len(), 16);
    let svg = fs::read_to_string(a.join("report_f1.svg")).unwrap();
    let rects: Vec<&str> = svg.lines().filter(|l| l.starts_with("<rect")).collect();
    assert_eq!(rects.len(), m.entries.len());
    for r in &rects {
        let e = m.entry(attr(r, "data-scenario")).unwrap();
        assert_eq!(attr(r, "data-f1").parse::<f64>().unwrap(), e.mean_f1);
    }
    // image-only scenarios have a single bar with no dashed twin
    let dashed = rects.iter().filter(|r| r.contains("stroke-dasharray")).count();
    assert_eq!(dashed, m.entries.iter().filter(|e| e.scenario.ends_with("/pre_op")).count());
    let reference = Reference::bundled().unwrap();
    for l in svg.lines().filter(|l| l.contains("class=\"paper-value\"")) {
        let r = reference.scenarios.iter().find(|r| r.scenario_id() == attr(l, "data-scenario")).unwrap();
        assert_eq!(attr(l, "data-f1").parse::<f64>().unwrap(), r.f1);
        assert_eq!(attr(l, "data-auc").parse::<f64>().unwrap(), r.auc);
    }
    assert!(svg.contains("paper (private cohort)"));

    let rows = read_predictions(&a.join("predictions.csv")).unwrap();
    let roc = fs::read_to_string(a.join("report_roc.svg")).unwrap();
    let legends: Vec<&str> = roc.lines().filter(|l| l.contains("class=\"legend\"")).collect();
    let polys: Vec<&str> = roc.lines().filter(|l| l.starts_with("<polyline")).collect();
    assert_eq!(legends.len(), 2);
    for (leg, poly) in legends.iter().zip(&polys) {
        let sc = attr(leg, "data-scenario");
        let auc: f64 = attr(leg, "data-auc").parse().unwrap();
        let mine: Vec<_> = rows.iter().filter(|r| r.scenario_id() == sc).collect();
        let y: Vec<bool> = mine.iter().map(|r| r.positive()).collect();
        let p: Vec<f64> = mine.iter().map(|r| r.probability).collect();
        assert!((auc - roc_auc(&y, &p).unwrap()).abs() < 1e-9);
        assert!((auc - m.entry(sc).unwrap().pooled_auc).abs() < 1e-9);
        assert!((trapezoid_area(&roc_points_from_svg(attr(poly, "points"))) - auc).abs() < 1e-9);
    }
    assert_eq!(fs::read_to_string(a.join("paper_reference.json")).unwrap(), fusionbench::report::REFERENCE_JSON);

    let s = audit_run(&a).unwrap();
    assert_eq!((s.subjects, s.producers, s.scenarios), (80, 10, 16));
    let o = fb(&["audit"], &a, &[]);
    assert!(o.status.success());

    // a training record that includes a validation subject is caught
    let audit = a.join("audit.json");
    let text = fs::read_to_string(&audit).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let fold = &mut v["scenarios"][0]["folds"][0];
    let leaked = fold["val_ids"][0].clone();
    fold["train_ids"].as_array_mut().unwrap().push(leaked);
    fs::write(&audit, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(matches!(audit_run(&a), Err(Error::Leakage(_))));
    let o = fb(&["audit"], &a, &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("leakage"));
}
