use std::fs;
use std::path::Path;

use serde_json::json;
use tabsem_core::harness::{self, EvalMode, PipelineOptions, RUN_LOG};
use tabsem_core::{mock_script, TokenizerHandle};

const TABLE: &str =
    "<table><tr><th>Group</th><th>Count</th></tr><tr><td>Control</td><td>12</td></tr></table>";

fn corpus(dir: &Path, ids: &[&str]) {
    for id in ids {
        fs::write(dir.join(format!("{id}.html")), TABLE).unwrap();
    }
}

fn opts(script: Vec<&str>, out: &Path) -> PipelineOptions {
    let backend = mock_script(script.into_iter().map(String::from).collect()).unwrap();
    PipelineOptions::new(TokenizerHandle::whitespace(), backend, out)
}

const REPLY: &str = r#"{"Control": {"Count": 12}}"#;

#[test]
fn table_without_gt_has_no_scores() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["one"]);
    let out = dir.path().join("out");
    let reports = harness::run_pipeline(
        &harness::load_corpus(dir.path()).unwrap(),
        &opts(vec![REPLY], &out),
    )
    .unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert!(r.error.is_none());
    assert_eq!((r.isc, r.esc), (None, None));
    assert_eq!(r.backend.as_deref(), Some("mock"));
    for suffix in [".enc.html", ".codebook.json", ".raw.json", ".out.json"] {
        assert!(out.join(format!("one{suffix}")).is_file(), "{suffix}");
    }
    let line = fs::read_to_string(out.join(RUN_LOG)).unwrap();
    assert_eq!(line.lines().count(), 1);
    assert!(line.contains("\"isc\":null"));
}

#[test]
fn gt_enables_scores() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["one"]);
    fs::write(
        dir.path().join("one.gt.json"),
        json!({"Control": {"Count": "12"}}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let r = harness::run_pipeline(
        &harness::load_corpus(dir.path()).unwrap(),
        &opts(vec![REPLY], &out),
    )
    .unwrap();
    assert_eq!(r[0].esc, Some(100.0));
    // "Group" is a header the reply dropped
    assert_eq!(r[0].isc, Some(75.0));
}

#[test]
fn exhausted_corrector_still_writes_output() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["one"]);
    let out = dir.path().join("out");
    let mut o = opts(
        vec!["{\"Control\": ", "{\"Control\":", "{\"Control\" 1"],
        &out,
    );
    o.max_iterations = 2;
    let r = harness::run_pipeline(&harness::load_corpus(dir.path()).unwrap(), &o).unwrap();
    let c = r[0].correction.as_ref().unwrap();
    assert!(!c.final_valid);
    assert_eq!(c.iterations_used, 2);
    assert!(r[0].error.is_none());
    assert_eq!(
        fs::read_to_string(out.join("one.out.json")).unwrap(),
        "{\"Control\" 1\n"
    );
}

#[test]
fn one_failure_does_not_stop_the_run() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a", "b"]);
    fs::write(dir.path().join("c.html"), "<p>no table here</p>").unwrap();
    let out = dir.path().join("out");
    let r = harness::run_pipeline(
        &harness::load_corpus(dir.path()).unwrap(),
        &opts(vec![REPLY, REPLY], &out),
    )
    .unwrap();
    assert_eq!(r.len(), 3);
    assert!(r[0].error.is_none() && r[1].error.is_none());
    assert!(r[2]
        .error
        .as_deref()
        .unwrap()
        .contains("no <table> element"));
    assert_eq!(r[2].error_kind, Some(harness::ErrorKind::Input));
    let log = harness::read_run_log(&out.join(RUN_LOG)).unwrap();
    let ids: Vec<&str> = log.iter().map(|r| r.table_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[test]
fn all_failing_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a", "b"]);
    let out = dir.path().join("out");
    // the first table consumes the only reply; make that reply fail too
    let err = harness::run_pipeline(
        &harness::load_corpus(dir.path()).unwrap(),
        &opts(vec!["   "], &out),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert_eq!(harness::read_run_log(&out.join(RUN_LOG)).unwrap().len(), 2);
}

#[test]
fn run_log_is_appended() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a"]);
    let out = dir.path().join("out");
    let entries = harness::load_corpus(dir.path()).unwrap();
    harness::run_pipeline(&entries, &opts(vec![REPLY], &out)).unwrap();
    harness::run_pipeline(&entries, &opts(vec![REPLY], &out)).unwrap();
    assert_eq!(harness::read_run_log(&out.join(RUN_LOG)).unwrap().len(), 2);
}

#[test]
fn llm_evaluation_follows_script() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["one"]);
    fs::write(
        dir.path().join("one.gt.json"),
        json!({"Control": {"Count": "12"}}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let mut o = opts(
        vec![REPLY, "How many in Control?", "ANSWER: 11\nNO_MATCH"],
        &out,
    );
    o.eval_mode = EvalMode::Llm;
    let r = harness::run_pipeline(&harness::load_corpus(dir.path()).unwrap(), &o).unwrap();
    assert_eq!(r[0].esc, Some(0.0));
}

#[test]
fn optimize_writes_artifacts_and_totals() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a", "b"]);
    let out = dir.path().join("enc");
    let recs = harness::run_optimize(
        &harness::load_corpus(dir.path()).unwrap(),
        &TokenizerHandle::whitespace(),
        &out,
    )
    .unwrap();
    assert_eq!(recs.len(), 2);
    assert!(out.join("a.enc.html").is_file() && out.join("b.codebook.json").is_file());
    let text = harness::format_optimize(&recs);
    let a: u64 = recs.iter().map(|r| r.tokens_before).sum();
    assert!(text.contains(&format!("TOTAL\tA={a}\t")), "{text}");
}
