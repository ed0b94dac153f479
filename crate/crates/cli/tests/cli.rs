use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kinfrac(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinfrac"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn kinetic_run(dir: &Path, out: &str, threads: &str) -> Vec<String> {
    let o = kinfrac(
        dir,
        &["kinetic", "--particles", "20000", "--snapshots", "0.1,0.2", "--cells", "16", "--seed", "5", "--threads", threads, "--out", out],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (0..2)
        .map(|k| fs::read_to_string(dir.join(out).join(format!("kinetic_snapshot_{k:02}.csv"))).expect("snapshot written"))
        .collect()
}

#[test]
fn kinetic_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = kinetic_run(dir.path(), "a", "1");
    let b = kinetic_run(dir.path(), "b", "1");
    let c = kinetic_run(dir.path(), "c", "2");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a[0].starts_with("# tool: kinfrac"));
    assert!(a[0].contains("x_center,rho_hat,stderr"));
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "s = 0.3\n").unwrap();
    let o = kinfrac(dir.path(), &["--config", "bad.toml", "kernels"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(1/2,1)"));

    fs::write(dir.path().join("typo.toml"), "[budget]\nparticle = 10\n").unwrap();
    let o = kinfrac(dir.path(), &["--config", "typo.toml", "kernels"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn density_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    kinetic_run(dir.path(), "k", "1");
    let o = kinfrac(
        dir.path(),
        &["plot", "--kind", "density", "--input", "k/kinetic_snapshot_00.csv", "--output", "k/density.svg"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(dir.path().join("k/density.svg")).unwrap();
    assert!(svg.contains("<svg"));
    assert!(svg.contains("mass = "));

    let o = kinfrac(dir.path(), &["plot", "--kind", "rate", "--input", "k/kinetic_snapshot_00.csv", "--output", "k/x.svg"]);
    assert_eq!(o.status.code(), Some(2));
}
