use std::fs;
use std::path::Path;
use std::process::Command;

const SMALL: &str = "[domain]\nelements = 40\n[time]\nsteps = 20\n[coupling]\nq12 = 4*x-2\nq21 = -4*x+2\n\
[source]\nf1 = sin(2*pi*x)\nf2 = -sin(2*pi*x)\n[optimizer]\niters = 40\n";

fn run(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_coupled-source"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    out.status.code().expect("exit status")
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (head, rows)
}

fn setup(text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.ini"), text).unwrap();
    dir
}

#[test]
fn zero_source_gives_zero_trajectory() {
    let dir = setup("[domain]\nelements = 12\n[time]\nsteps = 6\n");
    assert_eq!(run(dir.path(), &["forward", "--config", "run.ini", "--out", "o"]), 0);
    let (head, rows) = table(&dir.path().join("o/trajectory.csv"));
    assert_eq!(head, ["t", "node_id", "comp", "value"]);
    assert_eq!(rows.len(), 7 * 2 * 13);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() == 0.0));
    assert!(dir.path().join("o/mesh_nodes.csv").exists() && dir.path().join("o/snapshot.csv").exists());
}

#[test]
fn synth_then_invert_reports_the_error() {
    let dir = setup(SMALL);
    assert_eq!(run(dir.path(), &["synth", "--config", "run.ini", "--out", "o"]), 0);
    let (head, rows) = table(&dir.path().join("o/observations.csv"));
    assert_eq!(head, ["t", "node_id", "comp", "value"]);
    assert!(rows.iter().all(|r| r[2] == "1" || r[2] == "2"));
    assert_eq!(run(dir.path(), &["invert", "--config", "run.ini", "--out", "o"]), 0);
    let (head, rows) = table(&dir.path().join("o/summary.csv"));
    let col = head.iter().position(|h| h == "rel_err").expect("rel_err column");
    let e: f64 = rows[0][col].parse().unwrap();
    assert!(e > 0.0 && e < 1.0);
    let (head, trace) = table(&dir.path().join("o/trace.csv"));
    assert_eq!(head, ["iter", "J", "gradnorm", "rel_err"]);
    assert_eq!(trace.len(), 41);

    // reading the written observations matches inverting the synthetic ones directly
    assert_eq!(run(dir.path(), &["invert", "--config", "run.ini", "--out", "fresh"]), 0);
    assert_eq!(fs::read(dir.path().join("o/trace.csv")).unwrap(), fs::read(dir.path().join("fresh/trace.csv")).unwrap());
}

#[test]
fn outputs_are_byte_identical_for_equal_seeds() {
    let dir = setup(SMALL);
    for o in ["a", "b", "c"] {
        let seed = if o == "c" { "2" } else { "1" };
        assert_eq!(run(dir.path(), &["invert", "--config", "run.ini", "--out", o, "--seed", seed, "--noise-snr", "20"]), 0);
    }
    for f in ["trace.csv", "final_field.csv", "summary.csv"] {
        let read = |o: &str| fs::read(dir.path().join(o).join(f)).unwrap();
        assert_eq!(read("a"), read("b"), "{f}");
    }
    assert_ne!(fs::read(dir.path().join("a/trace.csv")).unwrap(), fs::read(dir.path().join("c/trace.csv")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_penalty_and_flags_the_bands() {
    let dir = setup(SMALL);
    // far too few iterations for the reference bands
    assert_eq!(run(dir.path(), &["sweep-k", "1e2..1e6", "--config", "run.ini", "--out", "o", "--threads", "2"]), 4);
    let (head, rows) = table(&dir.path().join("o/sweep.csv"));
    assert_eq!(head, ["k", "rel_err"]);
    assert_eq!(rows.len(), 5);
    assert!(dir.path().join("o/k_1e4/trace.csv").exists());
    let (_, checks) = table(&dir.path().join("o/sweep_checks.csv"));
    assert_eq!(checks.len(), 7);
}

#[test]
fn spectral_and_control_on_the_desk_instance() {
    let dir = setup("[domain]\nelements = 50\n[coupling]\nq21 = 5\n[source]\nf1 = sin(2*pi*x)\nf2 = -sin(2*pi*x)\n");
    assert_eq!(run(dir.path(), &["spectral", "--config", "run.ini", "--out", "s"]), 0);
    let (head, rows) = table(&dir.path().join("s/mode_report.csv"));
    assert_eq!(head, ["k", "lambda", "I_k", "alpha_k", "a1", "a2", "b"]);
    assert_eq!(rows.len(), 8);
    let (head, _) = table(&dir.path().join("s/reconstruction.csv"));
    assert_eq!(head[..7], ["k", "tau", "combined", "C1", "C2", "C3", "cond"]);
    assert_eq!(run(dir.path(), &["control", "--config", "run.ini", "--out", "c"]), 0);
    let (head, rows) = table(&dir.path().join("c/control_report.csv"));
    let col = head.iter().position(|h| h == "terminal_residual").unwrap();
    let res: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
    assert_eq!(res.len(), 3);
    assert!(res.windows(2).all(|w| w[1] <= w[0]), "{res:?}");
    assert_eq!(table(&dir.path().join("c/control.csv")).0, ["t", "node_id", "u_n"]);
}

#[test]
fn exit_statuses() {
    let dir = setup("[domain]\nbogus = 3\n");
    assert_eq!(run(dir.path(), &["forward", "--config", "run.ini"]), 2);
    assert_eq!(run(dir.path(), &["forward", "--config", "absent.ini"]), 2);
    assert_eq!(run(dir.path(), &["no-such-command"]), 2);
    assert_eq!(run(dir.path(), &["forward", "--threads", "0"]), 2);
    fs::write(dir.path().join("inf.ini"), "[domain]\nelements = 10\n[time]\nsteps = 5\n[source]\nf1 = 1e308*1e308\n").unwrap();
    assert_eq!(run(dir.path(), &["forward", "--config", "inf.ini", "--out", "o"]), 3);
    fs::write(dir.path().join("var.ini"), SMALL).unwrap();
    assert_eq!(run(dir.path(), &["spectral", "--config", "var.ini", "--out", "o"]), 2);
    assert_eq!(run(dir.path(), &["volterra-test", "--out", "v"]), 0);
}
