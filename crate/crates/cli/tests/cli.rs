use std::path::Path;
use std::process::{Command, Output};

use corrfactor::{LatticeConfig, LatticeSpec};

fn corrfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrfactor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn compute_square_mu() {
    let v = json(&corrfactor(&["compute", "--lattice", "square", "--engine", "mu", "--nmax", "12", "--format", "json"]));
    let f = v["estimate"]["f"].as_f64().unwrap();
    assert!((f - 0.494).abs() < 5e-4, "{f}");
    assert_eq!(v["manifest"]["command"], "compute");
    assert_eq!(v["manifest"]["engine"], "mu");
    assert_eq!(v["manifest"]["n_max"][0], 12);
    assert!(v["manifest"]["version"].is_string());
}

#[test]
fn compute_crw_is_reproducible() {
    let args = ["compute", "--lattice", "square", "--engine", "crw", "--nmax", "6", "--walkers", "50000", "--seed", "7", "--format", "json"];
    let a = json(&corrfactor(&args));
    let b = json(&corrfactor(&args));
    assert_eq!(a["estimate"], b["estimate"]);
    assert!(a["estimate"]["stderr_f"].as_f64().unwrap() > 0.0);
    assert_eq!(a["manifest"]["params"]["walkers"], 50000);
}

#[test]
fn table_marks_parity_rows() {
    let o = corrfactor(&["table", "--lattice", "square", "--nmax-upto", "5", "--format", "csv"]);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: {"));
    assert_eq!(lines.next().unwrap(), "n_max,engine,f,captured_mass,stderr");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][2], "0.6");
    assert_eq!(rows[1][2], "");
    assert_eq!(rows[3][2], "");

    let text = stdout(&corrfactor(&["table", "--lattice", "square", "--nmax-upto", "5"]));
    assert!(text.contains("      3  mu            -"), "{text}");
}

#[test]
fn triangular_has_odd_rows() {
    let v = json(&corrfactor(&["table", "--lattice", "triangular", "--nmax-upto", "9", "--format", "json"]));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r["estimate"]["f"].is_number()));
}

#[test]
fn oracle_table_equals_mu() {
    let get = |engine: &str| {
        let v = json(&corrfactor(&["table", "--lattice", "square", "--engine", engine, "--nmax-upto", "8", "--format", "json"]));
        v["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["estimate"]["f"].as_f64())
            .collect::<Vec<_>>()
    };
    let (mu, oracle) = (get("mu"), get("oracle"));
    for (a, b) in mu.iter().zip(&oracle) {
        match (a, b) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-10),
            (None, None) => {}
            _ => panic!("{mu:?} vs {oracle:?}"),
        }
    }
}

#[test]
fn exit_codes() {
    assert_eq!(corrfactor(&["compute", "--lattice", "/no/such.json", "--nmax", "4"]).status.code(), Some(2));
    assert_eq!(corrfactor(&["compute", "--lattice", "square", "--nmax", "1"]).status.code(), Some(2));
    assert_eq!(corrfactor(&["compute", "--lattice", "square", "--engine", "magic", "--nmax", "4"]).status.code(), Some(2));
    let o = corrfactor(&["compute", "--lattice", "square", "--engine", "oracle", "--nmax", "20"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
    assert_eq!(corrfactor(&["compute", "--lattice", "square", "--engine", "anneal", "--nmax", "12"]).status.code(), Some(3));
    assert_eq!(corrfactor(&["lattices", "--emit", "kagome"]).status.code(), Some(2));
}

#[test]
fn failed_run_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.json");
    let o = corrfactor(&["compute", "--lattice", "square", "--engine", "oracle", "--nmax", "20", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn lattices_list_and_emit() {
    let text = stdout(&corrfactor(&["lattices"]));
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().any(|l| l.starts_with("square") && l.ends_with("0.467")));
    assert!(text.lines().any(|l| l.starts_with("fcc") && l.ends_with("0.7815")));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("honeycomb.json");
    stdout(&corrfactor(&["lattices", "--emit", "honeycomb", "--out", p(&path)]));
    let cfg = LatticeConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(cfg.lattice, LatticeSpec::builtin("honeycomb", 2).unwrap());
    // the emitted file works as a lattice argument
    let a = json(&corrfactor(&["compute", "--lattice", p(&path), "--nmax", "10", "--format", "json"]));
    let b = json(&corrfactor(&["compute", "--lattice", "honeycomb", "--nmax", "10", "--format", "json"]));
    assert_eq!(a["estimate"], b["estimate"]);

    let bcc: serde_json::Value = serde_json::from_str(&stdout(&corrfactor(&["lattices", "--emit", "bcc"]))).unwrap();
    assert_eq!(bcc["stencil"][0].as_array().unwrap().len(), 8);
}

#[test]
fn barriers_change_the_answer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.json");
    std::fs::write(&path, r#"{"-x": 0.0, "+x": 0.0, "-y": 0.4, "+y": 0.4}"#).unwrap();
    let biased = json(&corrfactor(&["compute", "--lattice", "square", "--nmax", "8", "--barriers", p(&path), "--temperature", "0.5", "--format", "json"]));
    let plain = json(&corrfactor(&["compute", "--lattice", "square", "--nmax", "8", "--format", "json"]));
    assert_ne!(biased["estimate"]["f"], plain["estimate"]["f"]);
    assert_eq!(biased["manifest"]["model"]["temperature"], 0.5);

    std::fs::write(&path, r#"{"-x": 0.0}"#).unwrap();
    let o = corrfactor(&["compute", "--lattice", "square", "--nmax", "4", "--barriers", p(&path)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn qubo_and_decode() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("sq");
    stdout(&corrfactor(&["qubo", "--lattice", "square", "--nmax", "4", "--out", p(&prefix)]));
    for n in 2..=4 {
        assert!(dir.path().join(format!("sq_N{n}.qubo")).exists());
        assert!(dir.path().join(format!("sq_N{n}.json")).exists());
    }
    let head = std::fs::read_to_string(dir.path().join("sq_N2.qubo")).unwrap();
    assert!(head.lines().nth(1).unwrap().starts_with("p qubo 0 50 "));

    // the five N = 4 trajectories, twice, plus an invalid line
    let sidecar = dir.path().join("sq_N4.json");
    let problem = corrfactor::ising::read_sidecar(&sidecar).unwrap().problem().unwrap();
    let recs = corrfactor::mu::enumerate_trajectories(&problem.lattice, &problem.model, &problem.start, &problem.tracer, 4).unwrap();
    let lines: Vec<String> = recs
        .iter()
        .filter(|r| r.steps() == 4)
        .map(|r| {
            problem
                .config_for(&r.sites)
                .unwrap()
                .iter()
                .map(|b| if *b { '1' } else { '0' })
                .collect()
        })
        .collect();
    assert_eq!(lines.len(), 5);
    let mut body = lines.join("\n") + "\n" + &lines.join("\n") + "\n";
    body.push_str(&"0".repeat(problem.num_vars()));
    body.push('\n');
    let samples = dir.path().join("samples.txt");
    std::fs::write(&samples, body).unwrap();
    let v = json(&corrfactor(&["decode", "--sidecar", p(&sidecar), "--samples", p(&samples), "--format", "json"]));
    let d = &v["decode"];
    assert_eq!(d["samples"], 11);
    assert_eq!(d["valid_samples"], 10);
    assert_eq!(d["unique_trajectories"], 5);
    assert_eq!(d["oracle_trajectories"], 5);
    assert_eq!(d["coverage"], 1.0);
    assert!((d["avg_cos"].as_f64().unwrap() + 3.0 / 64.0).abs() < 1e-12);

    std::fs::write(&samples, "0".repeat(problem.num_vars()) + "\n").unwrap();
    let text = stdout(&corrfactor(&["decode", "--sidecar", p(&sidecar), "--samples", p(&samples)]));
    assert!(text.contains("no valid trajectories"));

    std::fs::write(&samples, format!("{}\n10x\n", lines[0])).unwrap();
    let o = corrfactor(&["decode", "--sidecar", p(&sidecar), "--samples", p(&samples)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}
