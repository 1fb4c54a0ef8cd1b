use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn retail() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/retail")
}

fn guard(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fanout-guard")).arg("--data-dir").arg(data).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

const BY_SOURCE: [&str; 5] = ["run", "--metric", "total_revenue", "--group-by", "A.source"];

fn by_source(extra: &[&str]) -> Vec<String> {
    BY_SOURCE.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(extra: &[&str]) -> Output {
    let args = by_source(extra);
    guard(&retail(), &args.iter().map(String::as_str).collect::<Vec<_>>())
}

/// Numbers on a text line, in order.
fn numbers(line: &str) -> Vec<f64> {
    line.split_whitespace().filter_map(|w| w.parse().ok()).collect()
}

fn text_value(text: &str, label: &str) -> Option<f64> {
    text.lines().find(|l| l.starts_with(label)).and_then(|l| numbers(&l[label.len()..]).last().copied())
}

#[test]
fn text_and_json_agree() {
    for weigh in [&[][..], &["--weigh", "V=equal"][..], &["--weigh", "V=order:aid:last"][..]] {
        let t = run(weigh);
        let j = run(&[weigh, &["--output", "json"][..]].concat());
        assert_eq!(t.status.code(), j.status.code());
        let (t, j) = (stdout(&t), json(&j));
        let report = &j["report"];
        assert_eq!(text_value(&t, "base total"), report["base_total"].as_f64());
        assert_eq!(text_value(&t, "query total"), report["query_total"].as_f64());
        assert!(t.contains(&format!("verdict       {}", report["verdict"].as_str().unwrap())));
        for row in report["result"]["rows"].as_array().unwrap() {
            let label = row["key"][0]["text"].as_str().or(row["key"][0].as_str()).unwrap().to_string();
            assert_eq!(text_value(&t, &label), row["value"].as_f64(), "{label}");
        }
    }
}

#[test]
fn json_report_round_trips() {
    let j = json(&run(&["--weigh", "V=equal", "--output", "json"]));
    let report: fanout_core::ConsistencyReport = serde_json::from_value(j["report"].clone()).unwrap();
    assert_eq!(serde_json::to_value(&report).unwrap(), j["report"]);
    assert_eq!(j["weights"][0]["relation"], "V");
    assert_eq!(j["weights"][0]["validation"]["ok"], true);
}

#[test]
fn unweighed_run_cites_v() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("fanout in V(uid)"));
    let j = json(&run(&["--output", "json"]));
    assert_eq!(j["report"]["per_relation_fanout"][0]["relation"], "V");
    assert_eq!(j["report"]["unweighed_targets"][0], "V");
}

#[test]
fn ad_cost_base_is_consistent() {
    let o = guard(&retail(), &["run", "--metric", "total_ad_cost"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(text_value(&stdout(&o), "query total"), Some(1100.0));
}

#[test]
fn bad_inputs_exit_one() {
    for args in [
        vec!["run", "--metric", "nope"],
        vec!["run", "--metric", "total_revenue", "--weigh", "V"],
        vec!["run", "--metric", "total_revenue", "--weigh", "V=equal"],
        vec!["run", "--metric", "total_revenue", "--group-by", "A.nope"],
        vec!["run", "--metric", "total_revenue", "--where", "I.price >"],
    ] {
        let o = guard(&retail(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error["), "{args:?}");
    }
    let o = guard(&retail(), &["--output", "json", "run", "--metric", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(json(&o)["error"]["code"].is_string());
}

#[test]
fn invalid_custom_weights_need_allow_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    std::fs::write(&path, "row_id,weight\n0,0.7\n1,0.7\n2,1\n").unwrap();
    let spec = format!("V=custom:{}", path.display());
    let o = run(&["--weigh", &spec]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--weigh", &spec, "--allow-invalid", "--output", "json"]);
    assert_eq!(o.status.code(), Some(2));
    let v = &json(&o)["weights"][0]["validation"];
    assert_eq!(v["ok"], false);
    assert_eq!(v["violations"][0]["exact"], "7/5");

    std::fs::write(&path, "row_id,weight\n0,0.5\n1,0.5\n2,1\n").unwrap();
    assert_eq!(run(&["--weigh", &spec]).status.code(), Some(0));
}

#[test]
fn data_dir_from_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_fanout-guard"))
        .env("FANOUT_GUARD_DATA", retail())
        .args(["run", "--metric", "total_ad_cost"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn graph_commands() {
    let o = guard(&retail(), &["validate-graph"]);
    assert_eq!((o.status.code(), stdout(&o).trim()), (Some(0), "ok"));

    let o = guard(&retail(), &["--output", "json", "infer-cardinality"]);
    assert_eq!(o.status.code(), Some(0));
    let edges = json(&o)["edges"].as_array().unwrap().clone();
    let hp = edges.iter().find(|e| e["left"] == "H" && e["right"] == "P").unwrap();
    assert_eq!(hp["declared"], Value::Null);
    assert_eq!(hp["observed"], "many_to_one");

    let dir = tempfile::tempdir().unwrap();
    for f in ["A", "H", "I", "P", "U", "V"] {
        std::fs::copy(retail().join(format!("{f}.csv")), dir.path().join(format!("{f}.csv"))).unwrap();
    }
    std::fs::copy(retail().join("semantic.json"), dir.path().join("semantic.json")).unwrap();
    let mut graph: Value = serde_json::from_str(&std::fs::read_to_string(retail().join("graph.json")).unwrap()).unwrap();
    graph["edges"].as_array_mut().unwrap().push(serde_json::json!({ "left": "A", "right": "H", "on": [["aid", "pid"]] }));
    std::fs::write(dir.path().join("graph.json"), graph.to_string()).unwrap();
    let o = guard(dir.path(), &["validate-graph"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle"));
}

#[test]
fn snapshot_restores_in_service() {
    let o = guard(&retail(), &["snapshot", "--graph-id", "retail", "--metric", "total_revenue", "--group-by", "A.source", "--weigh", "V=order:aid:last"]);
    assert_eq!(o.status.code(), Some(0));
    let snap: fanout_service::SessionSnapshot = serde_json::from_slice(&o.stdout).unwrap();
    assert!(snap.decided.contains_key("V"));

    let catalog = fanout_core::Catalog::load(retail(), "graph.json", "semantic.json").unwrap();
    let session = fanout_service::Session::restore(&snap, &catalog, fanout_core::DEFAULT_TOLERANCE).unwrap();
    assert!(session.is_complete());
    let report = session.report.unwrap();
    assert_eq!(report.verdict, fanout_core::Verdict::Consistent);
    assert_eq!(report.result.values_by_label()["Google"], Some(50.0));
}
