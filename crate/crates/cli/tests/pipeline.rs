//! Small end-to-end runs of the binary: a full-pipeline smoke test and a
//! cross-check that `eval` agrees with the in-process teachers.

use drivesim_core::scenario::{load_manifest, load_scenario};
use drivesim_core::teachers::{ep_reference, score_row, teach_scenario, TeacherConfig};
use drivesim_core::vocab::load_vocabulary;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_drivesim");

fn run(args: &[&str], dir: &Path) -> String {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "`drivesim {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_smoke() {
    let dir = std::env::temp_dir().join("drivesim-pipeline-smoke");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    run(
        &["gen", "--count", "50", "--seed", "3", "--out", "scen"],
        &dir,
    );
    run(
        &[
            "vocab",
            "--samples",
            "800",
            "--k",
            "64",
            "--iters",
            "10",
            "--seed",
            "4",
            "--out",
            "vocab.json",
        ],
        &dir,
    );
    run(
        &[
            "teach",
            "--scenarios",
            "scen/manifest.json",
            "--vocab",
            "vocab.json",
            "--out",
            "scores",
        ],
        &dir,
    );
    run(
        &[
            "train",
            "--scenarios",
            "scen/manifest.json",
            "--scores",
            "scores",
            "--vocab",
            "vocab.json",
            "--epochs",
            "4",
            "--seed",
            "6",
            "--out",
            "model.json",
        ],
        &dir,
    );
    run(
        &[
            "calibrate",
            "--model",
            "model.json",
            "--scenarios",
            "scen/manifest.json",
            "--vocab",
            "vocab.json",
            "--out",
            "weights.json",
        ],
        &dir,
    );
    run(
        &[
            "benchmark",
            "--model",
            "model.json",
            "--weights",
            "weights.json",
            "--scenarios",
            "scen/manifest.json",
            "--vocab",
            "vocab.json",
            "--out",
            "bench",
            "--compare",
            "imitation-only",
        ],
        &dir,
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bench.json")).unwrap()).unwrap();
    assert_eq!(report["scenario_count"], 50);
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for r in runs {
        assert_eq!(r["rows"].as_array().unwrap().len(), 50);
        for (_, v) in r["aggregates"].as_object().unwrap() {
            let v = v.as_f64().unwrap();
            assert!((0.0..=100.0).contains(&v), "aggregate {v} out of range");
        }
    }

    // determinism: the same benchmark again is byte-identical
    run(
        &[
            "benchmark",
            "--model",
            "model.json",
            "--weights",
            "weights.json",
            "--scenarios",
            "scen/manifest.json",
            "--vocab",
            "vocab.json",
            "--out",
            "bench2",
            "--compare",
            "imitation-only",
        ],
        &dir,
    );
    assert_eq!(
        std::fs::read(dir.join("bench.json")).unwrap(),
        std::fs::read(dir.join("bench2.json")).unwrap()
    );
}

#[test]
fn eval_matches_in_process_teachers() {
    let dir = std::env::temp_dir().join("drivesim-eval-consistency");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    run(
        &["gen", "--count", "3", "--seed", "8", "--out", "scen"],
        &dir,
    );
    run(
        &[
            "vocab",
            "--samples",
            "300",
            "--k",
            "16",
            "--iters",
            "8",
            "--seed",
            "9",
            "--out",
            "vocab.json",
        ],
        &dir,
    );

    let cfg = TeacherConfig::default();
    let vocab = load_vocabulary(&dir.join("vocab.json")).unwrap();
    let entries = load_manifest(&dir.join("scen/manifest.json")).unwrap();
    for entry in &entries {
        let scenario = load_scenario(&dir.join("scen").join(&entry.curr)).unwrap();
        // evaluate the scenario's own human trajectory
        std::fs::write(
            dir.join("human.json"),
            serde_json::to_string(&scenario.human).unwrap(),
        )
        .unwrap();
        let stdout = run(
            &[
                "eval",
                "--scenario",
                &format!("scen/{}", entry.curr),
                "--trajectory",
                "human.json",
                "--vocab",
                "vocab.json",
            ],
            &dir,
        );
        let printed: serde_json::Value = serde_json::from_str(&stdout).unwrap();

        // reference: the human appended to the vocabulary, scored like teach
        let mut extended = vocab.clone();
        extended.trajectories.push(scenario.human.clone());
        extended.k += 1;
        let matrix = teach_scenario(&scenario, &extended, &cfg);
        let expected = matrix.subscores(extended.k - 1);

        let got = &printed["subscores"];
        for (name, want) in [
            ("nc", expected.nc),
            ("dac", expected.dac),
            ("ep", expected.ep),
            ("ttc", expected.ttc),
            ("c", expected.c),
            ("tl", expected.tl),
            ("ddc", expected.ddc),
            ("lk", expected.lk),
        ] {
            let v = got[name].as_f64().unwrap();
            assert!(
                (v - want).abs() < 1e-6,
                "{}: eval printed {v}, teachers computed {want} ({name})",
                scenario.id
            );
        }

        // the reference used by eval is the same extended-vocabulary maximum
        let reference = ep_reference(&scenario, &extended, &cfg);
        let row = score_row(&scenario.human, &scenario, reference, &cfg);
        assert!((row[2] - got["ep"].as_f64().unwrap()).abs() < 1e-6);
    }
}
