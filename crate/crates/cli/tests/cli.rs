use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name).to_string_lossy().into_owned()
}

fn tvr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvr")).args(args).output().expect("run tvr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn compute_csv_for_stack() {
    let o = tvr(&["compute", &fixture("stack.json"), "--format", "csv", "--exclude", "MakerDAO"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(
        lines.next().unwrap(),
        "tvl,tvr,tvl_adjusted,multiplier,plain_non_plf,plain_plf,derivative_non_plf,derivative_plf,excluded"
    );
    assert_eq!(lines.next().unwrap(), "4713,1000,3713,4.713,1000,0,2142,1571,MakerDAO");
}

#[test]
fn compute_text_lists_protocols() {
    let o = tvr(&["compute", &fixture("stack.json"), "--lists", &fixture("lists.json")]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("multiplier"));
    assert!(out.contains("Lido"));
}

#[test]
fn simulate_writes_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let o = tvr(&["simulate", &fixture("depeg.json"), &fixture("scenario_depeg.json"), "-o", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 102);
    assert!(csv.starts_with("d,delta_tvl,delta_tvr,events,seized_usd,depegged,rounds,converged\n"));
    assert!(csv.contains("\n0.51,") && csv.lines().find(|l| l.starts_with("0.51,")).unwrap().contains("DAI:"));
}

#[test]
fn simulate_text_names_the_depeg() {
    let o = tvr(&["simulate", &fixture("depeg.json"), &fixture("scenario_depeg.json"), "--format", "text"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("DAI first depegs at d = 0.51"));
}

#[test]
fn ledger_consolidates_protocols_only() {
    let o = tvr(&["ledger", &fixture("leveraging.tx"), "--mark", "step5", "--consolidate", "--format", "csv"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("Consolidated,assets,Value Locked,,5600"));
    assert!(out.contains("borrower,assets,Receivables,aDAI,2900"));
    let text = stdout(&tvr(&["ledger", &fixture("leveraging.tx"), "--mark", "step5", "--consolidate"]));
    assert!(text.contains("naive TVL 6,500"));
}

#[test]
fn ledger_unknown_mark_is_an_error() {
    let o = tvr(&["ledger", &fixture("wrapping.tx"), "--mark", "step9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step9"));
}

#[test]
fn classify_hex_and_files() {
    let o = tvr(&["classify", "0x34", "6000", "--file", &fixture("wrapper.hex"), "--format", "csv"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("arg1,DerivativeNativeBacked,1,CALLVALUE@0x0"));
    assert!(out.contains("arg2,Undetermined,2,"));
    assert!(out.contains("wrapper.hex,DerivativeTokenBacked"));
}

#[test]
fn classify_rejects_truncated_push() {
    let o = tvr(&["classify", "0x6323b8"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated PUSH4"));
}

#[test]
fn correlate_fixture_and_synthetic() {
    let o = tvr(&["correlate", &fixture("series.csv"), "--ratio", "M=TVL/TVR", "--pair", "M:ETH", "--log-returns"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("x,y,n,rho,p_value,stars\nM,ETH,239,"));
    assert!(out.trim_end().ends_with("***"));

    let a = stdout(&tvr(&["correlate", "--synthetic", "60", "--seed", "9"]));
    let b = stdout(&tvr(&["correlate", "--synthetic", "60", "--seed", "9"]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 10);
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"schema_version": 1, "tokens": [{"id": "ETH", "kind": "plain", "supply": "x"}]}"#)
        .unwrap();
    let o = tvr(&["compute", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tokens[0].supply"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(tvr(&[]).status.code(), Some(2));
    assert_eq!(tvr(&["compute", "--format", "xml", "x.json"]).status.code(), Some(2));
    assert_eq!(tvr(&["correlate", "a.csv", "--synthetic", "5"]).status.code(), Some(2));
    let help = stdout(&tvr(&["--help"]));
    assert!(help.contains("schema_version"));
}
