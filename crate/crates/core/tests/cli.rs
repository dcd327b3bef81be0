//! End-to-end checks of the `coldscatter` binary: exit codes, error
//! reporting, output-directory precedence and reproducible output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coldscatter"));
    cmd.env_remove("COLDSCATTER_OUT_DIR");
    cmd
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    names
}

const PROTOCOL: &str = "scenario = \"protocol-utils\"\n[sweep]\nvalues = [0.5, 2]\n";

const SMALL_CBS: &str = r#"
scenario = "cbs-cone"
[cloud]
b0 = 3
r0 = "10 lambdabar"
[detection]
channels = ["hel_par", "lin_perp"]
[sweep]
values = ["0 rad", "0.02 rad"]
[mc]
trajectories = 600
seed = 4
"#;

#[test]
fn shipped_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = bin().arg("validate").arg(&path).output().unwrap();
            assert!(out.status.success(), "{}: {}", path.display(), stderr(&out));
            n += 1;
        }
    }
    assert_eq!(n, 8, "one sample per scenario");
}

#[test]
fn validate_prints_a_canonical_form_that_validates_again() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "a.toml", SMALL_CBS);
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let canonical = write(tmp.path(), "b.toml", &String::from_utf8(out.stdout.clone()).unwrap());
    let again = bin().arg("validate").arg(&canonical).output().unwrap();
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(again.stdout, out.stdout);
    // Same hash reported both times.
    assert_eq!(stderr(&again), stderr(&out));
}

#[test]
fn every_config_problem_is_reported_at_once() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        r#"
scenario = "cbs-cone"
[cloud]
radius_mm = 3
n0 = "5 mm"
[detection]
channels = ["hel_para"]
[mc]
trajectories = 0
"#,
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("cloud.radius_mm") && err.contains("`r0`"), "{err}");
    assert!(err.contains("cloud.n0") && err.contains("lambdabar^-3"), "{err}");
    assert!(err.contains("hel_par"), "{err}");
    assert!(err.contains("mc.trajectories"), "{err}");
    assert!(err.contains("(4 problems)"), "{err}");
}

#[test]
fn unknown_scenario_and_syntax_errors_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let typo = write(tmp.path(), "typo.toml", "scenario = \"cbs\"\n");
    let out = bin().arg("run").arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cbs-cone"));

    let broken = write(tmp.path(), "broken.toml", "scenario = \"cbs-cone\"\n[cloud\nb0 = 1\n");
    let out = bin().arg("validate").arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn io_failures_exit_with_three() {
    let tmp = TempDir::new().unwrap();
    let missing = bin().arg("run").arg(tmp.path().join("nope.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(3));

    let cfg = write(tmp.path(), "p.toml", PROTOCOL);
    let blocker = write(tmp.path(), "file", "not a directory");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(blocker.join("sub")).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn numeric_failure_keeps_partial_results() {
    let tmp = TempDir::new().unwrap();
    // Eight cells cannot resolve the threshold mode.
    let cfg = write(
        tmp.path(),
        "d.toml",
        "scenario = \"diffusion-threshold\"\n[diffusion]\nn_cells = 8\n[sweep]\nvalues = [\"300 lambdabar\", \"600 lambdabar\"]\n",
    );
    let out_dir = tmp.path().join("out");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let names = files(&out_dir);
    assert!(names.iter().any(|n| n.ends_with(".INCOMPLETE")), "{names:?}");
    assert!(names.iter().any(|n| n.ends_with(".json")), "{names:?}");
    let json = names.iter().find(|n| n.ends_with(".json")).unwrap();
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join(json)).unwrap()).unwrap();
    assert_eq!(record["incomplete"], true);
    assert!(record["error"].as_str().is_some_and(|e| !e.is_empty()));
}

#[test]
fn output_directory_precedence() {
    let tmp = TempDir::new().unwrap();
    let from_config = tmp.path().join("cfg_dir");
    let from_env = tmp.path().join("env_dir");
    let from_flag = tmp.path().join("flag_dir");
    let text = format!("{PROTOCOL}[output]\ndir = \"{}\"\n", from_config.display());
    let cfg = write(tmp.path(), "p.toml", &text);

    let run = |env: bool, flag: bool| {
        let mut cmd = bin();
        cmd.arg("run").arg(&cfg);
        if env {
            cmd.env("COLDSCATTER_OUT_DIR", &from_env);
        }
        if flag {
            cmd.arg("--out").arg(&from_flag);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    };

    run(false, false);
    assert!(!files(&from_config).is_empty());
    run(true, false);
    assert!(!files(&from_env).is_empty());
    run(true, true);
    assert!(!files(&from_flag).is_empty());
    // Each run wrote only where its winning source pointed.
    assert_eq!(files(&from_config), files(&from_env));
    assert_eq!(files(&from_env), files(&from_flag));
}

#[test]
fn csv_output_is_byte_identical_across_runs_and_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_CBS);
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "1", "3"].iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let out = bin().arg("run").arg(&cfg).args(["--workers", workers, "--out"]).arg(&dir).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let csvs: Vec<(String, Vec<u8>)> = files(&dir)
            .into_iter()
            .filter(|n| n.ends_with(".csv"))
            .map(|n| {
                let bytes = fs::read(dir.join(&n)).unwrap();
                (n, bytes)
            })
            .collect();
        assert!(!csvs.is_empty());
        outputs.push(csvs);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    // The seed flag overrides the file and changes the sample.
    let dir = tmp.path().join("reseeded");
    let out = bin().arg("run").arg(&cfg).args(["--seed", "5", "--out"]).arg(&dir).output().unwrap();
    assert!(out.status.success());
    let first = &outputs[0][0];
    assert_ne!(fs::read(dir.join(&first.0)).unwrap(), first.1);
}

#[test]
fn csv_headers_carry_units() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_CBS);
    let dir = tmp.path().join("out");
    assert!(bin().arg("run").arg(&cfg).arg("--out").arg(&dir).output().unwrap().status.success());
    for name in files(&dir).iter().filter(|n| n.ends_with(".csv")) {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("theta [rad],"), "{name}: {header}");
        assert!(header.ends_with("stat_err,order,channel"), "{name}: {header}");
    }
}
