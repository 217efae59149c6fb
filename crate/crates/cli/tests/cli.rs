use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deeprc(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deeprc"))
        .args(args)
        .env("DEEPRC_OUT", out_dir)
        .output()
        .expect("spawn deeprc")
}

fn shipped_config() -> String {
    format!("{}/../../configs/four_tank.toml", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn validate_accepts_the_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeprc(&["validate", &shipped_config()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("ok: m=2 p=2 n=4 ell=4 nbar=50"), "{stdout}");
}

#[test]
fn validate_reports_the_offending_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[plant]\nbuiltin = \"four_tank\"\n\n[exploration]\nepsilon = 0.5\n").unwrap();
    let out = deeprc(&["validate", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epsilon") && stderr.contains("line 5"), "{stderr}");
}

#[test]
fn unknown_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeprc(&["bench", "four-tank", "--modes", "greedy"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown mode"));
}

#[test]
fn run_writes_versioned_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.toml");
    fs::write(
        &path,
        "modes = [\"passive\"]\n\n[plant]\nbuiltin = \"four_tank\"\n\n[limits]\nmax_iterations = 1\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = deeprc(&["run", path.to_str().unwrap()], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let costs = fs::read_to_string(out_dir.join("costs.csv")).unwrap();
    let mut lines = costs.lines();
    assert_eq!(lines.next(), Some("# deeprc_csv_v1"));
    assert_eq!(lines.next(), Some("mode,j,N,J_real,J_nominal,steps,ms"));
    assert_eq!(lines.filter(|l| l.starts_with("passive,")).count(), 2);
}
