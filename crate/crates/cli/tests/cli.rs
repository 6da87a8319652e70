use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_benchroute"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawning benchroute")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth_store(dir: &Path) -> PathBuf {
    let store = dir.join("store");
    stdout(&run(bin()
        .args(["synth", "--tasks", "3", "--samples", "60", "--models", "3", "--seed", "2", "--out"])
        .arg(&store)));
    store
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const MODELS: &str = "{\"model_id\":\"a\",\"n_params_b\":7.0,\"display_name\":\"A\"}\n{\"model_id\":\"b\",\"n_params_b\":70.0,\"display_name\":\"B\"}\n";

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(run(bin().arg("validate")).status.code(), Some(2));
    assert_eq!(run(bin().arg("no-such-command")).status.code(), Some(2));
    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
}

#[test]
fn validate_raw_files() {
    let tmp = tempfile::tempdir().unwrap();
    let models = write(tmp.path(), "models.jsonl", MODELS);
    let good = write(
        tmp.path(),
        "good.jsonl",
        "{\"task_id\":\"t1\",\"sample_id\":\"1\",\"embedding\":[1,0],\"labels\":{\"a\":1,\"b\":0}}\n\
         {\"task_id\":\"t2\",\"sample_id\":\"1\",\"embedding\":[0,2],\"labels\":{\"a\":0,\"b\":1}}\n",
    );
    let out = stdout(&run(bin().arg("validate").arg("--samples").arg(&good).arg("--models").arg(&models)));
    assert!(out.starts_with("ok "), "{out}");

    let bad = write(
        tmp.path(),
        "bad.jsonl",
        "{\"task_id\":\"t1\",\"sample_id\":\"1\",\"embedding\":[1,0],\"labels\":{\"a\":1,\"b\":0}}\n\
         {\"task_id\":\"t1\",\"sample_id\":\"2\",\"embedding\":[1,0,3],\"labels\":{\"a\":1,\"b\":0}}\n",
    );
    let out = run(bin().arg("validate").arg("--samples").arg(&bad).arg("--models").arg(&models));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") || err.contains(":2"), "{err}");
}

#[test]
fn ingest_then_validate_store() {
    let tmp = tempfile::tempdir().unwrap();
    let models = write(tmp.path(), "models.jsonl", MODELS);
    let samples = write(
        tmp.path(),
        "samples.jsonl",
        "{\"task_id\":\"t1\",\"sample_id\":\"1\",\"embedding\":[1,0],\"raw_metrics\":{\"a\":0.9,\"b\":0.2}}\n\
         {\"task_id\":\"t2\",\"sample_id\":\"1\",\"embedding\":[0,1],\"raw_metrics\":{\"a\":0.1,\"b\":0.8}}\n",
    );
    let store = tmp.path().join("store");
    stdout(&run(bin()
        .arg("ingest")
        .arg("--samples")
        .arg(&samples)
        .arg("--models")
        .arg(&models)
        .args(["--binarize", "--threshold", "t1=0.5", "--threshold", "t2=0.5", "--out"])
        .arg(&store)));
    let out = stdout(&run(bin().arg("validate").arg("--store").arg(&store)));
    assert!(out.starts_with("ok "), "{out}");
}

#[test]
fn route_outputs_json() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth_store(tmp.path());
    let dim = BenchDim::of(&store);
    let input = write(tmp.path(), "in.jsonl", &format!("{}\n{{\"embedding\":{}}}\n", dim.vector(0.3), dim.vector(-0.2)));

    let v: Value = serde_json::from_str(&stdout(&run(bin().arg("route").arg("--store").arg(&store).arg("--input").arg(&input)))).unwrap();
    assert!(v["chosen_model"].is_string());
    assert_eq!(v["scores"]["score_kind"], "s3");
    assert!(v["u"].as_f64().unwrap() >= 0.0);
    assert!(v["selection"]["m_star"].is_string());

    let v: Value = serde_json::from_str(&stdout(&run(bin()
        .arg("route")
        .arg("--store")
        .arg(&store)
        .arg("--input")
        .arg(&input)
        .arg("--per-instance")))).unwrap();
    assert_eq!(v["decisions"].as_array().unwrap().len(), 2);

    let wrong = write(tmp.path(), "wrong.jsonl", "[1.0, 2.0]\n");
    let out = run(bin().arg("route").arg("--store").arg(&store).arg("--input").arg(&wrong));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn evaluate_writes_report_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth_store(tmp.path());
    let summary = tmp.path().join("summary.csv");
    let csv = stdout(&run(bin()
        .args(["evaluate", "--pair-repeats", "1", "--store"])
        .arg(&store)
        .arg("--summary-csv")
        .arg(&summary)));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "task_id,selector,chosen_model,accuracy,ratio_to_best,pearson,spearman,is_bma,n_params,rank"
    );
    assert!(lines.count() >= 3);
    let summary = std::fs::read_to_string(summary).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("oracle,")));
}

struct BenchDim(usize);

impl BenchDim {
    fn of(store: &Path) -> Self {
        let manifest: Value = serde_json::from_str(&std::fs::read_to_string(store.join("store.json")).unwrap()).unwrap();
        BenchDim(manifest["dimension"].as_u64().unwrap() as usize)
    }

    fn vector(&self, shift: f64) -> String {
        let v: Vec<f64> = (0..self.0).map(|i| (i as f64 * 0.7 + shift).sin()).collect();
        serde_json::to_string(&v).unwrap()
    }
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(store: &Path) -> Self {
        let mut child = bin()
            .arg("serve")
            .arg("--store")
            .arg(store)
            .args(["--bind", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
        Server { child, addr }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn http_endpoints_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth_store(tmp.path());
    let dim = BenchDim::of(&store);
    let server = Server::start(&store);
    let client = reqwest::blocking::Client::new();

    let health: Value = client.get(server.url("/v1/healthz")).send().unwrap().json().unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["tasks"], 3);
    assert_eq!(health["smoother"], true);

    let models: Value = client.get(server.url("/v1/models")).send().unwrap().json().unwrap();
    assert_eq!(models.as_array().unwrap().len(), 3);

    let post = |body: String| {
        client
            .post(server.url("/v1/route"))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .unwrap()
    };

    let ok = post(format!("{{\"inputs\":[{}],\"score\":\"s2\"}}", dim.vector(0.1)));
    assert_eq!(ok.status().as_u16(), 200);
    let v: Value = ok.json().unwrap();
    assert_eq!(v["scores"]["score_kind"], "s2");

    let resp = post("{\"inputs\":[[1.0]]}".into());
    assert_eq!(resp.status().as_u16(), 400);
    assert_eq!(resp.json::<Value>().unwrap()["error"], "dimension_mismatch");

    let resp = post("{\"inputs\":[]}".into());
    assert_eq!(resp.status().as_u16(), 422);

    let resp = post("{\"inputs\": oops".into());
    assert_eq!(resp.status().as_u16(), 400);
    assert_eq!(resp.json::<Value>().unwrap()["error"], "invalid_request");

    let resp = post(format!("{{\"inputs\":[{}],\"extra\":1}}", dim.vector(0.0)));
    assert_eq!(resp.status().as_u16(), 400);

    let resp = post(format!("{{\"inputs\":[{}],\"candidates\":{{\"model_ids\":[\"nope\"]}}}}", dim.vector(0.0)));
    assert_eq!(resp.status().as_u16(), 400);
}

#[test]
fn serve_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.toml", "[router]\nunknown = 1\n");
    let out = run(bin().arg("serve").arg("--config").arg(&cfg));
    assert_eq!(out.status.code(), Some(1));
    let out = run(bin().arg("serve").arg("--store").arg(tmp.path().join("missing")));
    assert_eq!(out.status.code(), Some(1));
}
