use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctsa_cli::config::load;
use ctsa_cli::csvio::{read_record, read_table, write_record};
use ctsa_core::TrajectoryRecord;

const SMALL: &str = r#"
experiment = "benes-joint"
seeds = [1, 2]
output_dir = "out"
record_every = 10

[grid]
dt = 0.01
horizon = 1.0

[benes]
mu = 3.0
sigma = 2.0
c = 0.7
tau2 = 2.0
o0 = 4.0

[[init]]
theta = [1.0, 2.0, 0.7]
o = [2.0]

[[schedule]]
name = "decay"
slow = [{ mode = "decay", gamma0 = 1.0, eta = 0.9 }, { mode = "zero" }, { mode = "zero" }]
fast = [{ mode = "decay", gamma0 = 1.0, eta = 0.55 }]
"#;

fn ctsa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsa"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CTSA_OUTPUT_ROOT")
        .output()
        .expect("spawn ctsa")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn record_round_trips_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rec = TrajectoryRecord::new(&["a", "b"]).with_metadata("seed", 7);
    rec.push(0.0, &[0.1 + 0.2, -1e-300]).unwrap();
    rec.push(0.01, &[f64::MAX, 1.0 / 3.0]).unwrap();
    rec.push(1e6, &[-0.0, 123456789.12345679]).unwrap();
    let path = tmp.path().join("r.csv");
    write_record(&path, &rec).unwrap();
    let back = read_record(&path).unwrap();
    assert_eq!(back.columns(), rec.columns());
    for (x, y) in back.rows().iter().flatten().zip(rec.rows().iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert!(back.metadata.contains(&("seed".to_string(), "7".to_string())));
}

#[test]
fn small_run_writes_records_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = ctsa(&["run", cfg.to_str().unwrap(), "--output-root", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("res/out");
    let rec = read_record(&dir.join("decay__init0__seed1.csv")).unwrap();
    assert_eq!(rec.len(), 11);
    assert!(rec.columns().iter().any(|c| c == "o"));
    let (meta, header, _) = read_table(&dir.join("summary.csv")).unwrap();
    assert_eq!(header[0], "kind");
    assert!(meta.iter().any(|(k, _)| k == "config_hash"));
}

#[test]
fn failed_threshold_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[acceptance.final_tolerance]\nmu = 1e-12\n");
    let cfg = write(tmp.path(), "strict.toml", &text);
    let out = ctsa(&["run", cfg.to_str().unwrap(), "--output-root", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn empty_seed_list_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &SMALL.replace("seeds = [1, 2]", "seeds = []"));
    let out = ctsa(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));
}

#[test]
fn missing_config_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ctsa(&["run", "does-not-exist.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn average_command_takes_elementwise_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, v) in [1.0, 3.0].iter().enumerate() {
        let mut rec = TrajectoryRecord::new(&["x"]);
        rec.push(0.0, &[*v]).unwrap();
        rec.push(1.0, &[2.0 * v]).unwrap();
        let p = tmp.path().join(format!("r{i}.csv"));
        write_record(&p, &rec).unwrap();
        paths.push(p);
    }
    let out_path = tmp.path().join("avg.csv");
    let out = ctsa(
        &["average", paths[0].to_str().unwrap(), paths[1].to_str().unwrap(), "--out", out_path.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let avg = read_record(&out_path).unwrap();
    assert_eq!(avg.rows(), &[vec![0.0, 2.0], vec![1.0, 4.0]]);
}

#[test]
fn riccati_command_reports_scalar_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/linear-scalar.toml");
    let out = ctsa(&["riccati", cfg.to_str().unwrap(), "--output-root", "res"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, _, rows) = read_table(&tmp.path().join("res/out/linear-scalar/riccati.csv")).unwrap();
    let truth: f64 = rows.iter().find(|r| r[0] == "truth").unwrap()[2].parse().unwrap();
    assert!((truth - (2f64.sqrt() - 1.0)).abs() < 1e-9, "{truth}");
}
