use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridic::scenario::{parse_case, read_csv};

fn gridic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridic")).args(args).output().unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn case_arg() -> String {
    data("ieee14_modified.json").to_string_lossy().into_owned()
}

const OVERLOADED: &str = r#"{
  "format": 1, "system_base_mva": 100,
  "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}],
  "branches": [{"id": 1, "from": 1, "to": 2, "r": 0.05, "x": 0.5, "b": 0}],
  "loads": [{"bus": 2, "p_mw": 900, "q_mvar": 400, "kind": "constant_pq"}]
}"#;

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(gridic(&[]).status.code(), Some(1));
    assert_eq!(gridic(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gridic(&["run", "--case", "/nonexistent.json"]).status.code(), Some(1));
    assert_eq!(gridic(&["run", "--case", &case_arg(), "--method", "rk4"]).status.code(), Some(1));
    // Events past the horizon.
    assert_eq!(gridic(&["run", "--case", &case_arg(), "--tstop", "1.5"]).status.code(), Some(1));
    assert_eq!(gridic(&["--help"]).status.code(), Some(0));
}

#[test]
fn schema_error_names_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, OVERLOADED.replace(r#""kind": "pq""#, r#""kind": 7"#)).unwrap();
    let out = gridic(&["powerflow", "--case", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/buses/1/kind"));
}

#[test]
fn diverging_power_flow_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("heavy.json");
    std::fs::write(&p, OVERLOADED).unwrap();
    let out = gridic(&["powerflow", "--case", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = gridic(&["run", "--case", p.to_str().unwrap(), "--tstop", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let probe = "v4=sqrt(V(bus4_re)^2+V(bus4_im)^2)";
    let case = case_arg();
    for (path, extra) in [(&a, None), (&b, Some("--reference"))] {
        let mut args = vec!["run", "--case", &case, "--tstop", "2.2", "--probe", probe];
        args.extend(["--out", path.to_str().unwrap()]);
        args.extend(extra);
        let out = gridic(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let s = read_csv(&a).unwrap();
    assert_eq!(s.len(), 2201);
    assert!(s.channel("v4").is_some() && s.channel("omega_bus1").is_some());

    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    let out = gridic(&["compare", a, b]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("vmag_bus4") || text.contains("v4"));
    assert!(text.trim_end().ends_with("pass"));

    let out = gridic(&["compare", a, b, "--tol", "1e-12"]);
    assert_eq!(out.status.code(), Some(3));
    let out = gridic(&["compare", a, b, "--json", "--tol", "omega=1e-3"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["channels"].as_array().unwrap().len() > 10);
}

#[test]
fn run_to_stdout_is_csv() {
    let out = gridic(&["run", "--case", &case_arg(), "--tstop", "2", "--dt", "0.01", "--method", "be"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("time,vmag_bus1,"));
    assert_eq!(text.lines().count(), 202);
}

#[test]
fn netlist_and_powerflow_outputs() {
    let a = gridic(&["netlist", "--case", &case_arg()]);
    let b = gridic(&["netlist", "--case", &case_arg(), "--seed-voltages"]);
    assert!(a.status.success());
    assert!(String::from_utf8_lossy(&a.stdout).contains("SF1r"));
    assert!(!b.stdout.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pf.csv");
    let out = gridic(&["powerflow", "--case", &case_arg(), "--out", p.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(&p).unwrap();
    assert_eq!(csv.lines().count(), 15);
    assert!(csv.starts_with("bus,vmag,angle_deg,p_mw,q_mvar\n1,1.06,0,"));
}

#[test]
fn cdf_conversion_produces_a_loadable_case() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ieee14.json");
    let out = gridic(&["convert-cdf", data("ieee14cdf.txt").to_str().unwrap(), "--out", p.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = parse_case(&std::fs::read(&p).unwrap()).unwrap();
    assert_eq!(c.network.buses.len(), 14);
    assert_eq!(c.network.branches.len() + c.network.transformers.len(), 20);
}
