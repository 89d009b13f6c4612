use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn v2g(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2g"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .current_dir(fixtures())
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const TWO_FLEET: [&str; 7] = [
    "allocate",
    "--book",
    "two_fleet_book.json",
    "--prices",
    "two_fleet_prices.csv",
    "--demand",
    "two_fleet_demand.csv",
];

#[test]
fn allocate_two_fleet_book() {
    let tmp = tempfile::tempdir().unwrap();
    let out = v2g(&TWO_FLEET, tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let alloc = json(&tmp.path().join("allocation.json"));
    let ids: Vec<u64> = alloc["accepted"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["offer_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, [2, 3, 1]);
    assert_eq!(alloc["residual_demand_kw"][27], 0.0);

    let manifest = json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["command"], "allocate");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    for input in manifest["inputs"].as_array().unwrap() {
        assert_eq!(input["sha256"].as_str().unwrap().len(), 64);
    }
    assert_eq!(manifest["outputs"], serde_json::json!(["allocation.json"]));
}

#[test]
fn allocate_csv_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = TWO_FLEET.to_vec();
    args.extend(["--format", "csv"]);
    assert!(v2g(&args, tmp.path()).status.success());
    let accepted = fs::read_to_string(tmp.path().join("accepted.csv")).unwrap();
    assert!(accepted.starts_with("offer_id,fleet_id,hhp_index"));
    assert_eq!(accepted.lines().count(), 4);
    let residual = fs::read_to_string(tmp.path().join("residual.csv")).unwrap();
    assert_eq!(residual.lines().count(), 49);
    assert!(tmp.path().join("eliminated.csv").exists());
}

#[test]
fn empty_book_leaves_full_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let book = tmp.path().join("book.json");
    fs::write(&book, "[]").unwrap();
    let out = v2g(
        &[
            "allocate",
            "--book",
            book.to_str().unwrap(),
            "--prices",
            "two_fleet_prices.csv",
            "--demand",
            "two_fleet_demand.csv",
        ],
        &tmp.path().join("out"),
    );
    assert!(out.status.success());
    let alloc = json(&tmp.path().join("out/allocation.json"));
    assert!(alloc["accepted"].as_array().unwrap().is_empty());
    assert_eq!(alloc["residual_demand_kw"][27], 35.0);
}

#[test]
fn malformed_offer_names_its_id() {
    let tmp = tempfile::tempdir().unwrap();
    let mut book = json(&fixtures().join("two_fleet_book.json"));
    book[2]["quantity_kw"] = (-4.0).into();
    let path = tmp.path().join("book.json");
    fs::write(&path, book.to_string()).unwrap();
    let out = v2g(
        &[
            "allocate",
            "--book",
            path.to_str().unwrap(),
            "--prices",
            "two_fleet_prices.csv",
            "--demand",
            "two_fleet_demand.csv",
        ],
        &tmp.path().join("out"),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("offer 3"), "{stderr}");
    assert!(!tmp.path().join("out/manifest.json").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = v2g(
        &[
            "allocate",
            "--book",
            "absent.json",
            "--prices",
            "two_fleet_prices.csv",
            "--demand",
            "two_fleet_demand.csv",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_unit_is_rejected_by_the_parser() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = TWO_FLEET.to_vec();
    args.extend(["--unit", "dollars"]);
    assert!(!v2g(&args, tmp.path()).status.success());
}

#[test]
fn simulate_writes_four_series() {
    let tmp = tempfile::tempdir().unwrap();
    let out = v2g(&["simulate", "--config", "sim.toml"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&tmp.path().join("day_report.json"));
    assert_eq!(report["fleet_count"], 6);
    let series = report["series"].as_array().unwrap();
    assert_eq!(series.len(), 48);
    for key in [
        "spot_pence_per_kw",
        "min_bid_pence_per_kw",
        "max_bid_pence_per_kw",
        "avg_payment_pence_per_kw",
    ] {
        assert!(series[0].get(key).is_some(), "{key}");
    }
    assert_eq!(json(&tmp.path().join("manifest.json"))["seed"], 7);
}

#[test]
fn simulate_seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(v2g(
        &["simulate", "--config", "sim.toml", "--seed", "99"],
        tmp.path()
    )
    .status
    .success());
    assert_eq!(json(&tmp.path().join("manifest.json"))["seed"], 99);
}

#[test]
fn penalty_below_bids_is_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fs::read_to_string(fixtures().join("sim.toml"))
        .unwrap()
        .replace("penalty_pence_per_kw = 50", "penalty_pence_per_kw = 2");
    let path = tmp.path().join("sim.toml");
    fs::write(&path, config).unwrap();
    let out = v2g(
        &["simulate", "--config", path.to_str().unwrap()],
        &tmp.path().join("out"),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("penalty"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sim.toml");
    fs::write(&path, "fleet_size = 3\n").unwrap();
    let out = v2g(
        &["simulate", "--config", path.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_compares_fleet_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = v2g(
        &["sweep", "--config", "sim.toml", "--runs", "5"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("6 fleets") && stdout.contains("8 fleets"));
    assert!(stdout.contains("total platform profit"));
    let report = json(&tmp.path().join("sweep_report.json"));
    assert_eq!(report["points"].as_array().unwrap().len(), 2);
    assert_eq!(report["seeds"].as_array().unwrap().len(), 5);
}

#[test]
fn balance_two_fleet_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let out = v2g(
        &[
            "balance",
            "--config",
            "two_fleet_balance.json",
            "--format",
            "csv",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let curve = fs::read_to_string(tmp.path().join("shortfall_curve.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(curve.as_bytes());
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    let p35 = rows.iter().find(|(y, _)| *y == 35.0).unwrap().1;
    assert!((p35 - 0.00432).abs() < 1e-12);
    assert!(rows.iter().all(|(y, _)| *y > 0.0));
    let payments = fs::read_to_string(tmp.path().join("payments.csv")).unwrap();
    assert_eq!(payments.lines().count(), 5);
}

#[test]
fn report_reads_every_output_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: [(&[&str], &str); 3] = [
        (&TWO_FLEET, "allocation.json"),
        (&["simulate", "--config", "sim.toml"], "day_report.json"),
        (
            &["balance", "--config", "two_fleet_balance.json"],
            "balance.json",
        ),
    ];
    for (i, (args, file)) in runs.iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        assert!(v2g(args, &dir).status.success());
        let input = dir.join(file);
        let out = v2g(
            &[
                "report",
                "--input",
                input.to_str().unwrap(),
                "--format",
                "csv",
            ],
            &dir.join("report"),
        );
        assert!(
            out.status.success(),
            "{file}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let summary = fs::read_to_string(dir.join("report/summary.csv")).unwrap();
        assert!(summary.starts_with("metric,value"));
    }
}

#[test]
fn report_rejects_foreign_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = v2g(&["report", "--input", "two_fleet_book.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
