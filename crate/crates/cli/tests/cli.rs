use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use serde_json::Value;

fn topo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = topo(args);
    assert!(
        out.status.success(),
        "topo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> String {
    let out = topo(args);
    assert!(!out.status.success(), "topo {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_rejects_zero_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.topo");
    let err = fail(&["generate", "--family", "mbb", "--count", "0", "--out", s(&out)]);
    assert!(err.contains("count"), "{err}");
    assert!(!out.exists());
    let err = fail(&[
        "generate",
        "--family",
        "bridge",
        "--grid",
        "7,7,7",
        "--count",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(err.contains("preset"), "{err}");
}

#[test]
fn pipeline_stages_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mbb.topo");
    let models = dir.path().join("models");
    let pred = dir.path().join("pred.json");
    let msg = ok(&[
        "generate",
        "--family",
        "mbb",
        "--grid",
        "30,10",
        "--count",
        "12",
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    assert!(msg.contains("wrote 12 mbb samples"), "{msg}");
    assert!(dir.path().join("mbb.toml").is_file());

    let epochs = ["--ae-epochs", "3", "--fc-epochs", "3"];
    let mut args = vec![
        "train",
        "--dataset",
        s(&data),
        "--field",
        "density",
        "--out",
        s(&models),
    ];
    args.extend(epochs);
    ok(&args);
    let mut args = vec!["train", "--dataset", s(&data), "--field", "vm", "--out", s(&models)];
    args.extend(epochs);
    ok(&args);
    for f in [
        "family.toml",
        "density.ae.topn",
        "density.fc.topn",
        "vm.ae.topn",
        "vm.fc.topn",
    ] {
        assert!(models.join(f).is_file(), "{f}");
    }

    let msg = ok(&[
        "predict",
        "--models",
        s(&models),
        "--params",
        "30,20,0",
        "--fields",
        "density,combined_vm",
        "--out",
        s(&pred),
    ]);
    assert!(msg.contains("density [30, 10] latency"), "{msg}");
    let body: Value = serde_json::from_slice(&std::fs::read(&pred).unwrap()).unwrap();
    assert_eq!(body["fields"][0]["values"].as_array().unwrap().len(), 300);
    assert_eq!(body["fields"][1]["field"], "combined_vm");

    let err = fail(&[
        "predict",
        "--models",
        s(&models),
        "--params",
        "30,25,0",
        "--out",
        s(&pred),
    ]);
    assert!(err.contains("y_F"), "{err}");
    let msg = ok(&[
        "predict",
        "--models",
        s(&models),
        "--params",
        "30,25,0",
        "--explore",
        "--out",
        s(&pred),
    ]);
    assert!(msg.contains("warning: y_F"), "{msg}");

    let table = ok(&["evaluate", "--models", s(&models), "--testset", s(&data)]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["metric", "density", "vm"]);
    assert!(table.lines().nth(1).unwrap().starts_with("BA"));
    let lines = ok(&[
        "evaluate",
        "--models",
        s(&models),
        "--testset",
        s(&data),
        "--format",
        "lines",
    ]);
    assert!(lines.starts_with("density ba "), "{lines}");
    assert!(lines.ends_with("all samples 12\n"));

    let study = ok(&[
        "study",
        "--kind",
        "datasize",
        "--dataset",
        s(&data),
        "--holdout",
        "2",
        "--sizes",
        "5,10",
        "--ae-epochs",
        "2",
        "--fc-epochs",
        "2",
    ]);
    assert!(study.contains("size=5 density ba"), "{study}");
    assert!(study.contains("size=10 density rmse"), "{study}");
}

#[test]
fn geometry_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.topo");
    let b = dir.path().join("b.topo");
    let models = dir.path().join("m");
    ok(&[
        "generate",
        "--family",
        "mbb",
        "--grid",
        "20,10",
        "--count",
        "4",
        "--out",
        s(&a),
    ]);
    ok(&[
        "generate",
        "--family",
        "mbb",
        "--grid",
        "30,10",
        "--count",
        "4",
        "--out",
        s(&b),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&a),
        "--field",
        "density",
        "--out",
        s(&models),
        "--ae-epochs",
        "1",
        "--fc-epochs",
        "1",
    ]);
    let err = fail(&["evaluate", "--models", s(&models), "--testset", s(&b)]);
    assert!(err.contains("geometry"), "{err}");
    let err = fail(&[
        "train",
        "--dataset",
        s(&a),
        "--config",
        s(&dir.path().join("b.toml")),
        "--out",
        s(&models),
    ]);
    assert!(err.contains("refusing"), "{err}");
}

#[test]
fn serve_honors_port_variable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.topo");
    let models = dir.path().join("m");
    ok(&[
        "generate",
        "--family",
        "mbb",
        "--grid",
        "20,10",
        "--count",
        "4",
        "--out",
        s(&data),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&data),
        "--field",
        "density",
        "--out",
        s(&models),
        "--ae-epochs",
        "1",
        "--fc-epochs",
        "1",
    ]);
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_topo"))
        .args(["serve", "--models", s(&models)])
        .env("TOPO_PORT", port.to_string())
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let meta: Option<Value> = rt.block_on(async {
        for _ in 0..100 {
            if let Ok(r) = reqwest::get(format!("http://127.0.0.1:{port}/meta")).await {
                return Some(r.json().await.unwrap());
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        None
    });
    child.kill().unwrap();
    child.wait().unwrap();
    let meta = meta.expect("server answered /meta");
    assert_eq!(meta["grid"], serde_json::json!([20, 10]));
}
