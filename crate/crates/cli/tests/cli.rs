use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

fn spill(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spill"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = spill(dir, args);
    assert!(
        out.status.success(),
        "spill {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
}

fn identity(n: usize, off: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { off }).collect()).collect()
}

/// Simulates an `n`-asset VAR(1) with `b` on the diagonal, `c` off it and
/// equicorrelated shocks, returning the price and metadata paths.
fn simulated(dir: &Path, n: usize, t: usize, b: f64, c: f64, rho: f64) -> (PathBuf, PathBuf) {
    let lag: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { b } else { c }).collect()).collect();
    write_json(
        &dir.join("dgp.json"),
        &json!({"n": n, "p": 1, "B": [lag], "sigma": identity(n, rho), "T": t, "seed": 3}),
    );
    ok(
        dir,
        &["simulate", "--spec", "dgp.json", "--out", "prices.csv", "--metadata-out", "meta.json", "--no-timestamp"],
    );
    (dir.join("prices.csv"), dir.join("meta.json"))
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const PANEL: [&str; 4] = ["--input", "prices.csv", "--metadata", "meta.json"];

fn with_panel<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(&PANEL);
    v.extend_from_slice(rest);
    v
}

#[test]
fn fit_writes_one_artifact_set_per_quantile() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 3, 400, 0.3, 0.05, 0.3);
    ok(dir.path(), &with_panel("fit", &["--out", "out", "--emit", "csv,json"]));
    let count = |prefix: &str| {
        std::fs::read_dir(dir.path().join("out"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix))
            .count()
    };
    assert_eq!(count("fevd_tau"), 3);
    assert_eq!(count("indices_tau"), 3);
    assert_eq!(count("network_tau"), 3);
    let fevd = read_json(&dir.path().join("out/fevd_tau0.5.json"));
    for row in fevd["normalized"].as_array().unwrap() {
        let s: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-10);
    }
    assert_eq!(fevd["config"]["lags"], 1);
}

#[test]
fn missing_input_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = spill(dir.path(), &["fit", "--input", "nowhere.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
}

#[test]
fn out_of_range_quantile_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 2, 200, 0.2, 0.0, 0.0);
    let out = spill(dir.path(), &with_panel("fit", &["--quantiles", "0.5,1.5", "--out", "o"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("config validation"), "{}", stderr(&out));
    assert!(stderr(&out).contains("1.5"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 2, 200, 0.2, 0.0, 0.0);
    write_json(&dir.path().join("run.json"), &json!({"input": "prices.csv", "lagz": 2}));
    let out = spill(dir.path(), &["fit", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 2, 200, 0.2, 0.0, 0.0);
    let sub = dir.path().join("cfg");
    std::fs::create_dir(&sub).unwrap();
    write_json(
        &sub.join("run.json"),
        &json!({"input": "../prices.csv", "metadata": "../meta.json", "out": "res", "lags": 2, "quantiles": [0.5]}),
    );
    ok(dir.path(), &["fit", "--config", "cfg/run.json", "--horizon", "4", "--no-timestamp"]);
    let fevd = read_json(&sub.join("res/fevd_tau0.5.json"));
    assert_eq!(fevd["config"]["lags"], 2);
    assert_eq!(fevd["config"]["horizon"], 4);
    assert!(fevd.get("generated_at").is_none());
}

#[test]
fn rolling_window_count_matches_plan() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 2, 100, 0.2, 0.05, 0.3);
    ok(dir.path(), &with_panel("rolling", &["--window", "50", "--step", "10", "--out", "r"]));
    let lines = data_lines(&dir.path().join("r/rolling.csv"));
    assert_eq!(lines[0], "anchor_date,tau,total,from_S1,from_S2,to_S1,to_S2,net_S1,net_S2,flags");
    for tau in ["0.05", "0.5", "0.95"] {
        let n = lines[1..].iter().filter(|l| l.split(',').nth(1) == Some(tau)).count();
        assert_eq!(n, 6, "tau {tau}");
    }
    let plot = read_json(&dir.path().join("r/rolling_plot.json"));
    assert_eq!(plot["anchor_dates"].as_array().unwrap().len(), 6);
}

#[test]
fn window_longer_than_sample_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 2, 100, 0.2, 0.05, 0.3);
    let out = spill(dir.path(), &with_panel("rolling", &["--window", "150", "--out", "r"]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn reruns_without_timestamp_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 3, 300, 0.3, 0.05, 0.3);
    for out in ["a", "b"] {
        ok(dir.path(), &with_panel("fit", &["--out", out, "--no-timestamp"]));
    }
    for name in ["indices_tau0.05.csv", "relative.csv", "pairwise_deltas.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        let a = String::from_utf8(a).unwrap().replace("\"out\":\"a\"", "");
        let b = String::from_utf8(b).unwrap().replace("\"out\":\"b\"", "");
        assert_eq!(a, b, "{name}");
    }
}

/// Prices whose second half of first differences repeats the first half.
fn duplicated_halves(dir: &Path, half: usize) {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let ids = ["A", "B", "C", "D"];
    let first: Vec<[f64; 4]> = (0..half)
        .map(|_| {
            let common: f64 = rng.random_range(-1.0..1.0);
            std::array::from_fn(|_| common + rng.random_range(-1.0..1.0))
        })
        .collect();
    let diffs: Vec<[f64; 4]> = first.iter().chain(first.iter()).copied().collect();
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut level = [0.0; 4];
    let mut csv = format!("timestamp,{}\n{start},1,1,1,1\n", ids.join(","));
    for (t, d) in diffs.iter().enumerate() {
        for j in 0..4 {
            level[j] += d[j];
        }
        let row: Vec<String> = level.iter().map(|l| (1.0 + l / 1e4).to_string()).collect();
        csv.push_str(&format!("{},{}\n", start + Duration::days(t as i64 + 1), row.join(",")));
    }
    std::fs::write(dir.join("prices.csv"), csv).unwrap();
    let meta: serde_json::Map<String, Value> =
        ids.iter().map(|id| (id.to_string(), json!({"category": "FiatBacked"}))).collect();
    write_json(&dir.join("meta.json"), &Value::Object(meta));
    let day = |k: usize| (start + Duration::days(k as i64)).to_string();
    write_json(
        &dir.join("event.json"),
        &json!({"name": "dup", "affected": "A", "event_time": day(half + 1),
                "calm": [day(1), day(half)], "crisis": [day(half + 1), day(2 * half)]}),
    );
}

#[test]
fn identical_windows_give_zero_event_delta() {
    let dir = tempfile::tempdir().unwrap();
    duplicated_halves(dir.path(), 150);
    ok(dir.path(), &with_panel("event", &["--event", "event.json", "--out", "e", "--emit", "csv,json"]));
    let lines = data_lines(&dir.path().join("e/event_spillover.csv"));
    assert!(lines[1].ends_with(",+0.0"), "{}", lines[1]);
    let js = read_json(&dir.path().join("e/event_spillover.json"));
    assert!(js["delta"].as_f64().unwrap().abs() < 1e-9);
    let fr = data_lines(&dir.path().join("e/fr_table.csv"));
    assert_eq!(fr.len(), 4);
    for row in &fr[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        let (calm, crisis): (f64, f64) = (cells[2].parse().unwrap(), cells[3].parse().unwrap());
        assert!((calm - crisis).abs() < 1e-9);
        assert_eq!(cells[8], "false");
    }
}

#[test]
fn too_few_donors_reports_synth_error_but_keeps_fr_output() {
    let dir = tempfile::tempdir().unwrap();
    duplicated_halves(dir.path(), 150);
    let mut ev = read_json(&dir.path().join("event.json"));
    ev["donors"] = json!(["B"]);
    write_json(&dir.path().join("event.json"), &ev);
    ok(dir.path(), &with_panel("event", &["--event", "event.json", "--out", "e", "--emit", "csv,json"]));
    let synth = read_json(&dir.path().join("e/synth_control.json"));
    assert_eq!(synth["error"]["kind"], "DonorPool");
    assert!(dir.path().join("e/fr_table.csv").exists());
    assert!(dir.path().join("e/event_spillover.csv").exists());
}

#[test]
fn correlation_regime_switch_raises_event_spillover() {
    let dir = tempfile::tempdir().unwrap();
    let zero = vec![vec![0.0; 3]; 3];
    write_json(
        &dir.path().join("dgp.json"),
        &json!({"n": 3, "p": 1, "B": [zero], "sigma": identity(3, 0.0), "T": 800, "seed": 21,
                "regime_switch": {"switch_time": 400, "B": [zero], "sigma": identity(3, 0.8)}}),
    );
    ok(
        dir.path(),
        &["simulate", "--spec", "dgp.json", "--out", "prices.csv", "--metadata-out", "meta.json"],
    );
    // diff row r is stamped 2020-01-01 + (r + 1) days; the switch lands on 2021-02-05
    write_json(
        &dir.path().join("event.json"),
        &json!({"affected": "S1", "event_time": "2021-02-05",
                "calm": ["2020-03-01", "2021-02-01"], "crisis": ["2021-02-05", "2022-03-01"]}),
    );
    ok(dir.path(), &with_panel("event", &["--event", "event.json", "--out", "e", "--emit", "json"]));
    let js = read_json(&dir.path().join("e/event_spillover.json"));
    let (pre, during) = (js["pre_total"].as_f64().unwrap(), js["during_total"].as_f64().unwrap());
    assert!(during > pre + 20.0, "pre {pre} during {during}");
}

#[test]
fn single_row_robustness_matches_fit_total() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 3, 400, 0.3, 0.05, 0.3);
    ok(dir.path(), &with_panel("fit", &["--out", "f", "--quantiles", "0.1,0.5,0.9", "--emit", "csv"]));
    write_json(&dir.path().join("run.json"), &json!({"quantiles": [0.1, 0.5, 0.9]}));
    ok(
        dir.path(),
        &with_panel(
            "robustness",
            &["--config", "run.json", "--out", "r", "--lags", "1", "--horizons", "10", "--quantile-sets", "0.1/0.5/0.9"],
        ),
    );
    let rows = data_lines(&dir.path().join("r/robustness.csv"));
    assert_eq!(rows.len(), 4);
    for row in &rows[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], "baseline");
        assert_eq!(cells[1], "\"p = 1");
        let cells: Vec<&str> = [&cells[..1], &cells[3..]].concat();
        let fit = data_lines(&dir.path().join(format!("f/indices_tau{}.csv", cells[3])));
        let total = fit.last().unwrap().split(',').nth(2).unwrap().to_string();
        assert_eq!(cells[4], total);
    }
    let txt = std::fs::read_to_string(dir.path().join("r/robustness.txt")).unwrap();
    assert!(txt.contains("p = 1, H = 10 (baseline)"));
    assert!(!txt.contains("Panel"));
}

#[test]
fn robustness_total_grows_with_horizon_on_persistent_panel() {
    let dir = tempfile::tempdir().unwrap();
    let lag = vec![vec![0.5, 0.3, 0.0], vec![0.0, 0.5, 0.3], vec![0.3, 0.0, 0.5]];
    write_json(
        &dir.path().join("dgp.json"),
        &json!({"n": 3, "p": 1, "B": [lag], "sigma": identity(3, 0.0), "T": 1500, "seed": 4}),
    );
    ok(dir.path(), &["simulate", "--spec", "dgp.json", "--out", "prices.csv", "--metadata-out", "meta.json"]);
    ok(
        dir.path(),
        &with_panel("robustness", &["--out", "r", "--lags", "1", "--horizons", "1,2,5,10,20", "--quantile-sets", "0.05/0.5/0.95"]),
    );
    let rows = data_lines(&dir.path().join("r/robustness.csv"));
    let median: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').collect::<Vec<_>>())
        .filter(|c| c[0] == "B" && c[4] == "0.5")
        .map(|c| c[5].parse().unwrap())
        .collect();
    assert_eq!(median.len(), 5);
    for w in median.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{median:?}");
    }
    assert!(median[4] > median[0] + 10.0);
}

#[test]
fn empty_robustness_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 2, 200, 0.2, 0.0, 0.0);
    let out = spill(dir.path(), &with_panel("robustness", &["--out", "r", "--horizons", ""]));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 3, 300, 0.3, 0.05, 0.3);
    let first = std::fs::read(dir.path().join("prices.csv")).unwrap();
    ok(dir.path(), &["simulate", "--spec", "dgp.json", "--out", "again.csv", "--no-timestamp"]);
    assert_eq!(first, std::fs::read(dir.path().join("again.csv")).unwrap());
    ok(dir.path(), &["simulate", "--spec", "dgp.json", "--out", "other.csv", "--no-timestamp", "--seed", "99"]);
    assert_ne!(first, std::fs::read(dir.path().join("other.csv")).unwrap());
}

#[test]
fn explosive_dgp_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write_json(
        &dir.path().join("dgp.json"),
        &json!({"n": 2, "p": 1, "B": [[[1.05, 0.0], [0.0, 0.2]]], "sigma": identity(2, 0.0), "T": 100, "seed": 1}),
    );
    let out = spill(dir.path(), &["simulate", "--spec", "dgp.json", "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!dir.path().join("p.csv").exists());
}

#[test]
fn simulated_prices_round_trip_through_fit() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), 3, 2000, 0.0, 0.0, 0.5);
    ok(dir.path(), &with_panel("fit", &["--out", "f", "--quantiles", "0.5", "--emit", "json"]));
    let fevd = read_json(&dir.path().join("f/fevd_tau0.5.json"));
    let m = fevd["normalized"].as_array().unwrap();
    // white noise with equicorrelation 0.5: off-diagonal share 0.25 / 1.5
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            let want = if i == j { 1.0 / 1.5 } else { 0.25 / 1.5 };
            assert!((v.as_f64().unwrap() - want).abs() < 0.04, "({i},{j}) {v}");
        }
    }
}
