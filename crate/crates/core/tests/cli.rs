use std::path::Path;
use std::process::{Command, Output};

use accel_diffeo::io::{load_flow, load_pgm};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accel-diffeo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn register_identical_images_writes_zero_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = cli(&["gen", "--size", "24", "--square", "8", "--shift", "0", "--out-dir", s(d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (i0, flow, warped, trace) = (d.join("i0.pgm"), d.join("u.dflo"), d.join("w.pgm"), d.join("t.csv"));
    let out = cli(&[
        "register", "--i0", s(&i0), "--i1", s(&i0), "--scheme", "agd", "--alpha", "1",
        "--out-flow", s(&flow), "--out-warped", s(&warped), "--out-trace", s(&trace),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = load_flow(&flow).unwrap();
    assert!(m.ux().iter().chain(m.uy()).all(|&u| u == 0.0));
    assert_eq!(load_pgm(&warped).unwrap(), load_pgm(&i0).unwrap());
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("# "));
    assert!(text.contains("iter,t,potential,kinetic,total,dt,map_increment"));
}

#[test]
fn gen_writes_ground_truth_only_for_translations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cli(&["gen", "--out-dir", s(d)]).status.success());
    let gt = load_flow(d.join("gt.dflo")).unwrap();
    assert_eq!(gt.at(0, 0), (10.0, 0.0));
    assert_eq!(std::fs::metadata(d.join("gt.dflo")).unwrap().len(), 4 + 8 + 50 * 50 * 8);

    let r = d.join("rect");
    let out = cli(&["gen", "--square", "17", "--rect", "20x14", "--shift", "8", "--out-dir", s(&r)]);
    assert!(out.status.success());
    assert!(r.join("i1.pgm").exists() && !r.join("gt.dflo").exists());
}

#[test]
fn check_grad_reports_small_error() {
    let out = cli(&["check-grad", "--alpha", "1", "--seed", "7", "--grid", "32"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let err: f64 = text.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-4, "{text}");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(cli(&["register", "--bogus"]).status.code(), Some(1));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&["info", "/definitely/not/here.pgm"]).status.code(), Some(1));
    assert_eq!(
        cli(&["register", "--i0", "/nope.pgm", "--i1", "/nope.pgm", "--alpha", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(cli(&["gen", "--square", "60"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn experiment_runs_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.txt");
    std::fs::write(
        &spec,
        "# tiny sweep\nkind = alpha_sweep\nsize = 24\nsquare = 8\nshift = 2\nalphas = 1,2\nschemes = gd\nmax_iters = 50\n",
    )
    .unwrap();
    let out_dir = d.join("out");
    let out = cli(&["experiment", "--spec", s(&spec), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.contains("# kind = alpha_sweep"));
    let rows: Vec<&str> = summary.lines().filter(|l| l.starts_with("gd,")).collect();
    assert_eq!(rows.len(), 2);
    assert!(out_dir.join("trace_gd_n24_a1_s0.csv").exists());
    assert!(out_dir.join("warped_gd_n24_a2_s0.pgm").exists());
    assert!(out_dir.join("flow_gd_n24_a2_s0.dflo").exists());

    std::fs::write(&spec, "kind = alpha_sweep\nalphas = x\n").unwrap();
    assert_eq!(cli(&["experiment", "--spec", s(&spec)]).status.code(), Some(1));
}

#[test]
fn info_describes_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cli(&["gen", "--size", "20", "--square", "6", "--shift", "2", "--out-dir", s(d)]).status.success());
    let text = String::from_utf8(cli(&["info", s(&d.join("i0.pgm"))]).stdout).unwrap();
    assert!(text.contains("image 20x20"), "{text}");
    let text = String::from_utf8(cli(&["info", s(&d.join("gt.dflo"))]).stdout).unwrap();
    assert!(text.contains("flow 20x20"), "{text}");
}
