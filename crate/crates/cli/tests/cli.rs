use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use baryprox_cli::output::Table;
use baryprox_cli::{ExperimentConfig, RunSummary};
use tempfile::TempDir;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> PathBuf {
    configs_dir().join(name)
}

fn baryprox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_baryprox"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    baryprox(&args)
}

fn stem(cfg: &Path) -> String {
    cfg.file_stem().unwrap().to_str().unwrap().to_string()
}

fn summary(out: &Path, stem: &str) -> RunSummary {
    let bytes = fs::read(out.join(format!("{stem}.summary.json"))).unwrap();
    serde_json::from_slice(&bytes).expect("summary parses under the schema")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn column(csv_path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(csv_path).unwrap();
    let idx = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == name)
        .expect("column present");
    r.records()
        .map(|rec| rec.unwrap()[idx].parse().unwrap())
        .collect()
}

#[test]
fn same_config_and_seed_give_byte_identical_artifacts() {
    for name in ["symmetric_ppa.toml", "random_ppa.toml", "flow_min_max.toml"] {
        let cfg = config(name);
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        assert!(run(&cfg, a.path(), &["--seed", "42"]).status.success());
        assert!(run(&cfg, b.path(), &["--seed", "42"]).status.success());
        let s = stem(&cfg);
        for file in [format!("{s}.trace.csv"), format!("{s}.summary.json")] {
            let fa = fs::read(a.path().join(&file)).unwrap();
            let fb = fs::read(b.path().join(&file)).unwrap();
            assert_eq!(fa, fb, "{file} differs between runs");
        }
    }
}

#[test]
fn seed_selects_the_random_problem() {
    let cfg = config("random_ppa.toml");
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run(&cfg, a.path(), &["--seed", "1"]);
    run(&cfg, b.path(), &["--seed", "2"]);
    let ta = fs::read(a.path().join("random_ppa.trace.csv")).unwrap();
    let tb = fs::read(b.path().join("random_ppa.trace.csv")).unwrap();
    assert_ne!(ta, tb);
    assert_eq!(summary(a.path(), "random_ppa").seed, 1);
}

#[test]
fn every_summary_round_trips_through_its_schema() {
    let out = TempDir::new().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let cfg = entry.unwrap().path();
        if cfg.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        run(&cfg, out.path(), &[]);
        let s = summary(out.path(), &stem(&cfg));
        let again: RunSummary = serde_json::from_slice(&s.to_json()).unwrap();
        assert_eq!(again, s);

        let original = ExperimentConfig::parse(&fs::read_to_string(&cfg).unwrap()).unwrap();
        assert_eq!(s.config, original);
        let echoed = toml::to_string(&s.config).unwrap();
        assert_eq!(ExperimentConfig::parse(&echoed).unwrap(), original);

        let header = csv::Reader::from_path(out.path().join(&s.trace_file))
            .unwrap()
            .headers()
            .unwrap()
            .iter()
            .map(String::from)
            .collect::<Vec<_>>();
        assert_eq!(header, s.trace_columns);
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn nonpositive_lambda_exits_1_naming_the_key() {
    let dir = TempDir::new().unwrap();
    for bad in ["0.0", "-0.5"] {
        let body = format!("method = \"ppa\"\n\n[problem]\nkind = \"symmetric_quadratic\"\n\n[params]\nlambda = {bad}\n");
        let cfg = write_config(dir.path(), "bad.toml", &body);
        let o = run(&cfg, dir.path(), &[]);
        assert_eq!(o.status.code(), Some(1));
        let err = stderr(&o);
        assert!(err.contains("params.lambda"), "{err}");
        assert!(err.contains("line 7"), "{err}");
        assert!(!dir.path().join("bad.summary.json").exists());
    }
}

#[test]
fn malformed_and_unknown_keys_report_their_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.toml",
        "method = \"ppa\"\n[problem]\nkind = \"symmetric_quadratic\"\n[params]\nlamda = 0.5\n",
    );
    let o = run(&cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));

    let cfg = write_config(
        dir.path(),
        "syntax.toml",
        "method = \"ppa\"\n[problem\nkind = 1\n",
    );
    let o = run(&cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn initial_state_dimension_mismatch_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "dims.toml",
        "method = \"prox_eval\"\n[problem]\nkind = \"symmetric_quadratic\"\n[initial]\nx = [1.0, 2.0]\n",
    );
    let o = run(&cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("initial.x"), "{}", stderr(&o));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn ppa_config_converges_with_equalized_losses() {
    let out = TempDir::new().unwrap();
    let o = run(&config("symmetric_ppa.toml"), out.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(out.path(), "symmetric_ppa");
    assert_eq!(s.status, "converged");
    assert!(s.scalars["loss_spread"] <= 1e-5);
    assert!(s.final_x[0].abs() <= 1e-5);
    assert!((s.final_q[0] - 0.5).abs() <= 1e-5);
    let spread = column(&out.path().join("symmetric_ppa.trace.csv"), "loss_spread");
    assert!(spread.len() > 2);
    assert!(*spread.last().unwrap() <= 1e-5);
}

#[test]
fn missing_fixed_point_exits_2_with_artifacts() {
    let out = TempDir::new().unwrap();
    let o = run(&config("constant_ppa.toml"), out.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let s = summary(out.path(), "constant_ppa");
    assert_eq!(s.status, "max_iter");
    assert_eq!(s.labels["no_fixed_point_suspected"], "true");
    assert!(s.final_q[1] > 1.0 - 1e-9);
    assert!(out.path().join("constant_ppa.trace.csv").exists());
}

#[test]
fn inner_failure_exits_2_with_partial_artifacts() {
    let dir = TempDir::new().unwrap();
    let body = fs::read_to_string(config("prox_eval.toml"))
        .unwrap()
        .replace("lambda = 0.8", "lambda = 0.8\ninner_max_iter = 1");
    let cfg = write_config(dir.path(), "starved.toml", &body);
    let o = run(&cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let s = summary(dir.path(), "starved");
    assert_eq!(s.status, "inner_failure");
    assert!(s.message.unwrap().contains("did not converge"));
    assert_eq!(s.final_x.len(), 2);
    assert_eq!(
        column(&dir.path().join("starved.trace.csv"), "k"),
        vec![0.0, 1.0]
    );
}

#[test]
fn min_min_flow_objective_column_is_nonincreasing() {
    let out = TempDir::new().unwrap();
    let o = run(&config("flow_min_min.toml"), out.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let trace = out.path().join("flow_min_min.trace.csv");
    let f = column(&trace, "F");
    assert!(f.len() > 10);
    for w in f.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    let t = column(&trace, "t");
    assert_eq!(t.last().copied(), Some(20.0));
    let s = summary(out.path(), "flow_min_min");
    assert_eq!(s.labels["rate_agreement"], "true");
}

#[test]
fn json_trace_format_parses_as_a_table() {
    let out = TempDir::new().unwrap();
    let o = run(&config("landscape.toml"), out.path(), &["--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let t: Table =
        serde_json::from_slice(&fs::read(out.path().join("landscape.trace.json")).unwrap())
            .unwrap();
    assert_eq!(t.rows.len(), 1);
    let s = summary(out.path(), "landscape");
    assert_eq!(s.trace_file, "landscape.trace.json");
    assert_eq!(t.columns, s.trace_columns);
    assert_eq!(s.labels["classification"], "saddle");
}

#[test]
fn checks_scope_runs_only_that_module() {
    let o = baryprox(&["checks", "objectives"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let props: Vec<&str> = text.lines().filter(|l| l.starts_with('[')).collect();
    assert!(!props.is_empty());
    assert!(
        props.iter().all(|l| l.starts_with("[PASS] objectives::")),
        "{text}"
    );

    let o = baryprox(&["checks", "simplex_geometry"]);
    let text = stdout(&o);
    let props: Vec<&str> = text.lines().filter(|l| l.starts_with('[')).collect();
    assert!(!props.is_empty());
    assert!(
        props.iter().all(|l| l.contains("] simplex_geometry::")),
        "{text}"
    );
    let all_pass = props.iter().all(|l| l.starts_with("[PASS]"));
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 2 }));
}

#[test]
fn unknown_check_scope_exits_1() {
    let o = baryprox(&["checks", "geometry"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown check scope"));
}

#[test]
fn checks_method_in_config_writes_a_report_table() {
    let out = TempDir::new().unwrap();
    let o = run(&config("checks_objectives.toml"), out.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(out.path(), "checks_objectives");
    assert_eq!(s.status, "passed");
    let rows = csv::Reader::from_path(out.path().join("checks_objectives.trace.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows as f64, s.scalars["properties"]);
}

#[test]
fn checks_subcommand_writes_artifacts_when_asked() {
    let out = TempDir::new().unwrap();
    let o = baryprox(&[
        "checks",
        "prox_core",
        "--out-dir",
        out.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let s = summary(out.path(), "checks_prox_core");
    assert_eq!(s.status, "passed");
    assert!(s.config.problem.is_none());
    let t: Table =
        serde_json::from_slice(&fs::read(out.path().join("checks_prox_core.trace.json")).unwrap())
            .unwrap();
    assert!(t
        .rows
        .iter()
        .all(|r| r[0] == baryprox_cli::output::Cell::Text("prox_core".into())));
}
