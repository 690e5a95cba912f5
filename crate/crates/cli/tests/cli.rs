use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quasimiura")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn export(dir: &Path, name: &str) {
    let o = run(&["catalog", "--export", name, "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn path(dir: &Path, file: &str) -> String {
    dir.join(file).to_str().unwrap().to_string()
}

#[test]
fn exported_kdv_pencil_checks() {
    let d = tempfile::tempdir().unwrap();
    export(d.path(), "kdv");
    let o = run(&["check", &path(d.path(), "kdv.pencil")]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("PASS compatibility"));
    assert!(s.ends_with("verdict: PASS\n"));
}

#[test]
fn ch_invariant_is_u_over_24() {
    let d = tempfile::tempdir().unwrap();
    export(d.path(), "ch");
    let o = run(&["invariants", &path(d.path(), "ch.pencil")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("central invariant: c1(u) = 1/24*u"));
}

#[test]
fn kdv_transform_residual_starts_at_eps6() {
    let d = tempfile::tempdir().unwrap();
    export(d.path(), "kdv");
    let o = run(&["verify-transform", &path(d.path(), "kdv.pencil"), "--transform", &path(d.path(), "kdv.transform")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("residual first nonzero at ε⁶"));
}

#[test]
fn dropping_a_term_fails_the_verdict() {
    let d = tempfile::tempdir().unwrap();
    export(d.path(), "kdv");
    let t = std::fs::read_to_string(d.path().join("kdv.transform")).unwrap();
    let cut: String = t.lines().filter(|l| !l.starts_with("F[1].eps2")).map(|l| format!("{l}\n")).collect();
    assert_ne!(cut, t);
    std::fs::write(d.path().join("cut.transform"), cut).unwrap();
    let o = run(&["verify-transform", &path(d.path(), "kdv.pencil"), "--transform", &path(d.path(), "cut.transform")]);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.contains("residual first nonzero at ε²"));
    assert!(s.contains("verdict: FAIL"));
}

#[test]
fn file_and_entry_reports_agree() {
    let d = tempfile::tempdir().unwrap();
    export(d.path(), "ch");
    let body = |o: Output| stdout(&o).lines().filter(|l| !l.contains("input:")).map(String::from).collect::<Vec<_>>();
    let file = path(d.path(), "ch.pencil");
    assert_eq!(body(run(&["check", &file])), body(run(&["check", "--entry", "ch"])));
    assert_eq!(body(run(&["invariants", &file])), body(run(&["invariants", "--entry", "ch"])));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let a = run(&["invariants", "--entry", "nls", "--format", "csv"]);
    let b = run(&["invariants", "--entry", "nls", "--format", "csv"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("# quasimiura report v1: invariants\nkind,key,value\n"));
}

#[test]
fn reduce_output_verifies() {
    let d = tempfile::tempdir().unwrap();
    let t = path(d.path(), "kdv2.transform");
    let o = run(&["reduce", "--entry", "kdv", "--order", "2", "--out", &t]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = run(&["verify-transform", "--entry", "kdv", "--transform", &t]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("residual first nonzero at ε⁴"));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let d = tempfile::tempdir().unwrap();
    let f = d.path().join("bad.pencil");
    std::fs::write(&f, "[vars]\nw\n\n[bracket1]\nP[1,1].eps0 = \"d(1\"\n").unwrap();
    let o = run(&["check", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = String::from_utf8_lossy(&o.stderr);
    assert!(e.contains("line 5"), "{e}");
}

#[test]
fn zero_lame_data_is_flat() {
    let o = run(&["lame", "--n", "33", "--gamma12", "0", "--gamma21", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("Lamé residual: 0.000e0 (flat), 0.000e0 (homogeneous)"));
}

#[test]
fn lame_csv_has_grid_header() {
    let o = run(&["lame", "--n", "33", "--format", "csv"]);
    let s = stdout(&o);
    assert!(s.starts_with("# grid u0 = (4, 1.5)"));
    assert!(s.contains("u1,u2,chi1,chi2,g1_11,g1_22,g2_11,g2_22,v1,v2,w1,w2\n"));
    assert_eq!(s.lines().filter(|l| !l.starts_with('#')).count(), 1 + 33 * 33);
}

#[test]
fn hodograph_csv_reports_order() {
    let o = run(&["hodograph", "--grid", "256", "--steps", "400", "--eps", "0.1,0.05", "--format", "csv"]);
    let s = stdout(&o);
    assert!(s.starts_with("top,eps,error,self_convergence\n"), "{s}");
    let p: f64 = s.lines().last().unwrap().split("p = ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(p > 3.5, "{p}");
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn catalog_lists_every_entry() {
    let s = stdout(&run(&["catalog"]));
    for n in ["kdv", "ch", "kdv-ch", "nls", "two-ch", "boussinesq", "ito-variant", "gas"] {
        assert!(s.lines().any(|l| l.starts_with(n)), "{n}");
    }
}

#[test]
fn unknown_entry_is_an_error() {
    let o = run(&["check", "--entry", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown catalog entry"));
}
