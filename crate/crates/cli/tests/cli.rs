use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dq_core::{deserialize_report, MetricId, Score};

fn dq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dq"))
        .args(args)
        .output()
        .expect("dq runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    /// Generates a dataset and returns (data, schema) paths.
    fn generated(&self, spec: &str) -> (PathBuf, PathBuf) {
        let spec_path = self.write("spec.json", spec);
        let data = self.path("data.ndjson");
        let schema = self.path("schema.json");
        let out = dq(&[
            "generate",
            "--spec",
            path_str(&spec_path),
            "--out",
            path_str(&data),
            "--schema-out",
            path_str(&schema),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        (data, schema)
    }
}

#[test]
fn clean_dataset_scores_one() {
    let f = Fixture::new();
    let (data, schema) =
        f.generated(r#"{"sensor_count":2,"packets_per_sensor":100,"interval_seconds":60}"#);
    let report = f.path("report.json");
    let out = dq(&[
        "assess",
        "--data",
        path_str(&data),
        "--schema",
        path_str(&schema),
        "--out",
        path_str(&report),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = deserialize_report(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r.aggregate_score, 1.0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(
        table.contains("Timeliness") && table.contains("aggregate"),
        "{table}"
    );

    let truth: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.path("data.ndjson.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["total_packets"], 200);
}

#[test]
fn report_to_stdout() {
    let f = Fixture::new();
    let (data, schema) = f.generated(r#"{"packets_per_sensor":50,"duplicate_rate":0.1}"#);
    let out = dq(&[
        "assess",
        "--data",
        path_str(&data),
        "--schema",
        path_str(&schema),
        "--out",
        "-",
    ]);
    assert!(out.status.success());
    let r = deserialize_report(&out.stdout).unwrap();
    assert_eq!(r.score(MetricId::M3), Some(Score::Value(0.9)));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Uniqueness"));
}

#[test]
fn mostly_malformed_dataset_is_rejected() {
    let f = Fixture::new();
    let data = f.write(
        "bad.ndjson",
        "{\"sensor_id\":\"a\",\"timestamp\":0}\nnot json\n{\"timestamp\":5}\n{\"sensor_id\":\"a\"}\n",
    );
    let schema = f.write("schema.json", "{}");
    let out = dq(&[
        "assess",
        "--data",
        path_str(&data),
        "--schema",
        path_str(&schema),
        "--out",
        path_str(&f.path("r.json")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!f.path("r.json").exists());
}

#[test]
fn missing_inputs_exit_one() {
    let f = Fixture::new();
    let schema = f.write("schema.json", "{}");
    let out = dq(&[
        "assess",
        "--data",
        "/nonexistent/data.ndjson",
        "--schema",
        path_str(&schema),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.ndjson"));

    let spec = f.write("spec.json", r#"{"outlier_rate":0.9}"#);
    let out = dq(&[
        "generate",
        "--spec",
        path_str(&spec),
        "--out",
        path_str(&f.path("x.ndjson")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn csv_input_and_flag_overrides() {
    let f = Fixture::new();
    let data = f.write(
        "d.csv",
        "sensor_id,timestamp,pm25\na,0,1\na,60000,2\na,120000,3\na,180000,4\na,270000,5\n",
    );
    let schema = f.write(
        "schema.json",
        r#"{"properties":{"pm25":{"type":"number"}},"required":["pm25"]}"#,
    );
    let config = f.write("config.json", r#"{"quantization_seconds":1000}"#);
    // The flag wins over the config file.
    let out = dq(&[
        "assess",
        "--data",
        path_str(&data),
        "--schema",
        path_str(&schema),
        "--config",
        path_str(&config),
        "--quantization",
        "1",
        "--out",
        "-",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = deserialize_report(&out.stdout).unwrap();
    assert_eq!(r.score(MetricId::M1), Some(Score::Value(0.75)));
}

#[test]
fn histogram_partitions_iats() {
    let f = Fixture::new();
    let (data, _) = f.generated(
        r#"{"sensor_count":3,"packets_per_sensor":200,"jitter_fraction":0.2,"outlier_rate":0.05,"seed":4}"#,
    );
    let config = f.write("config.json", "{}");
    let out = dq(&[
        "histogram",
        "--data",
        path_str(&data),
        "--config",
        path_str(&config),
        "--bin-width",
        "30",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sensor_id,bin,count"));
    let mut per_sensor = std::collections::BTreeMap::<String, (usize, f64, usize)>::new();
    for l in lines {
        let parts: Vec<&str> = l.split(',').collect();
        let (bin, count): (f64, usize) = (parts[1].parse().unwrap(), parts[2].parse().unwrap());
        let e = per_sensor.entry(parts[0].to_string()).or_default();
        e.0 += count;
        if count > e.2 {
            e.1 = bin;
            e.2 = count;
        }
    }
    assert_eq!(per_sensor.len(), 3);
    for (total, peak, _) in per_sensor.values() {
        assert_eq!(*total, 199);
        assert_eq!(*peak, 60.0);
    }
}

#[test]
fn keygen_and_code_hash() {
    let f = Fixture::new();
    let out = dq(&["keygen", "--out", path_str(&f.path("owner"))]);
    assert!(out.status.success());
    let public = std::fs::read_to_string(f.path("owner.pub")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), public);
    assert_eq!(
        std::fs::read_to_string(f.path("owner.key")).unwrap().len(),
        64
    );

    let a = dq(&["code-hash"]);
    let b = dq(&["code-hash", "--binary", env!("CARGO_BIN_EXE_dq")]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().trim().len(), 64);
}
