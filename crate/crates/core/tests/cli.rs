mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::tiny_run_config;
use spreadcast::data::{read_cube, CONTROL_FILE, SPREAD_FILE};
use spreadcast::pipeline::RESOLVED_CONFIG;

fn spreadcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spreadcast"))
        .args(args)
        .env("SPREADCAST_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = spreadcast(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: &str, exit: i32) {
    let out = spreadcast(args);
    assert_eq!(out.status.code(), Some(exit), "{args:?}");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{code}]: ")), "{err}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_command_surface() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("config.json");
    std::fs::write(
        &config,
        serde_json::to_string_pretty(&{
            let mut c = tiny_run_config(root);
            c.data.years = 2;
            c
        })
        .unwrap(),
    )
    .unwrap();
    let data = root.join("data");

    let part = root.join("part");
    ok(&[
        "synth",
        "--config",
        s(&config),
        "--out",
        s(&part),
        "--from",
        "2015-03-01",
        "--to",
        "2015-03-10",
    ]);
    assert_eq!(std::fs::read_dir(part.join("runs")).unwrap().count(), 10);

    ok(&["synth", "--config", s(&config), "--out", s(&data)]);
    assert!(data.join(RESOLVED_CONFIG).exists());
    let runs = data.join("runs");
    assert_eq!(std::fs::read_dir(&runs).unwrap().count(), 731);

    let split = ok(&["split", "--data", s(&data)]);
    assert_eq!(split.trim(), "train 584 val 73 test 74");
    let test_days: Vec<String> = std::fs::read_to_string(data.join("test.idx"))
        .unwrap()
        .lines()
        .take(5)
        .map(String::from)
        .collect();
    assert_eq!(test_days[0], "2016-10-19");
    let test_idx = root.join("first_test_days.idx");
    std::fs::write(&test_idx, test_days.join("\n")).unwrap();

    let model = root.join("m").join("model.spw");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--out",
        s(&model),
    ]);
    for f in ["model.spw", "model.json", "model_log.csv", RESOLVED_CONFIG] {
        assert!(root.join("m").join(f).exists(), "{f}");
    }
    assert!(root.join("m/model_checkpoints/epoch_002.spw").exists());
    let log = std::fs::read_to_string(root.join("m/model_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 20);

    // predictions for every test day, twice
    let (pa, pb, pm) = (
        root.join("pred_a"),
        root.join("pred_b"),
        root.join("pred_mean"),
    );
    for dir in [&pa, &pb, &pm] {
        std::fs::create_dir_all(dir).unwrap();
    }
    for d in &test_days {
        let control = runs.join(d).join(CONTROL_FILE);
        let name = format!("{d}.esc");
        for dir in [&pa, &pb] {
            ok(&[
                "predict",
                "--model",
                s(&model),
                "--control",
                s(&control),
                "--out",
                s(&dir.join(&name)),
                "--mc-dropout",
                "3",
                "--seed",
                "5",
            ]);
        }
        assert_eq!(
            std::fs::read(pa.join(&name)).unwrap(),
            std::fs::read(pb.join(&name)).unwrap()
        );
        ok(&[
            "postprocess",
            "--models",
            s(&model),
            s(&model),
            "--control",
            s(&control),
            "--out",
            s(&pm.join(&name)),
        ]);
    }
    // two copies of one model average to that model
    let det = root.join("det.esc");
    let control = runs.join(&test_days[0]).join(CONTROL_FILE);
    ok(&[
        "predict",
        "--model",
        s(&model),
        "--control",
        s(&control),
        "--out",
        s(&det),
    ]);
    assert_eq!(
        read_cube(&det).unwrap(),
        read_cube(&pm.join(format!("{}.esc", test_days[0]))).unwrap()
    );

    let (clim, pers) = (root.join("clim"), root.join("pers"));
    for d in &test_days {
        for (kind, dir) in [("climatology", &clim), ("persistence", &pers)] {
            ok(&[
                "baseline",
                "--kind",
                kind,
                "--data",
                s(&data),
                "--date",
                d,
                "--out",
                s(&dir.join(format!("{d}.esc"))),
            ]);
        }
    }
    let first = read_cube(&pers.join(format!("{}.esc", test_days[0]))).unwrap();
    let prev = read_cube(&runs.join("2016-10-18").join(SPREAD_FILE)).unwrap();
    assert_eq!(first.values, prev.values);

    // evaluating the truth against itself
    let copy = root.join("copy");
    std::fs::create_dir_all(&copy).unwrap();
    for d in &test_days {
        std::fs::copy(
            runs.join(d).join(SPREAD_FILE),
            copy.join(format!("{d}.esc")),
        )
        .unwrap();
    }
    let report = root.join("report");
    ok(&[
        "evaluate",
        "--truth",
        s(&data),
        "--pred",
        &format!("same={}", s(&copy)),
        &format!("model={}", s(&pa)),
        &format!("climatology={}", s(&clim)),
        &format!("persistence={}", s(&pers)),
        "--out",
        s(&report),
        "--dates",
        s(&test_idx),
    ]);
    let mut rdr = csv::Reader::from_path(report.join("report.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let (mi, ri) = (
        headers.iter().position(|h| h == "method").unwrap(),
        headers.iter().position(|h| h == "rmse").unwrap(),
    );
    let mut same_rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[mi] == "same" {
            assert_eq!(rec[ri].parse::<f64>().unwrap(), 0.0);
            same_rows += 1;
        }
    }
    assert_eq!(same_rows, 4);
    for f in ["summary.json", "spread_curves.csv", "daily.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }

    // the spread subcommand needs member files
    fails(
        &["spread", "--run", s(&runs.join(&test_days[0]))],
        "E_DATA",
        1,
    );
}

#[test]
fn errors_are_one_line_with_a_code() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    fails(&["predict", "--model"], "E_USAGE", 2);
    fails(&["frobnicate"], "E_USAGE", 2);
    fails(
        &[
            "baseline",
            "--kind",
            "persistence",
            "--data",
            s(&missing),
            "--date",
            "2015-13-01",
            "--out",
            "x",
        ],
        "E_USAGE",
        2,
    );
    fails(
        &[
            "predict",
            "--model",
            s(&missing),
            "--control",
            s(&missing),
            "--out",
            s(&missing),
        ],
        "E_IO",
        1,
    );
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"data": {"grid_h": 8, "colour": 1}}"#).unwrap();
    fails(
        &["synth", "--config", s(&bad), "--out", s(&missing)],
        "E_JSON",
        1,
    );

    let junk = tmp.path().join("junk.esc");
    std::fs::write(&junk, b"not a cube at all").unwrap();
    let model = tmp.path().join("m.spw");
    std::fs::write(&model, b"x").unwrap();
    std::fs::write(tmp.path().join("m.json"), "{}").unwrap();
    let out = spreadcast(&[
        "predict",
        "--model",
        s(&model),
        "--control",
        s(&junk),
        "--out",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(ok(&["--help"]).contains("evaluate"));
}
