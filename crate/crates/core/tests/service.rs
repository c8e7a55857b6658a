//! The HTTP API end to end, in process and against the real binary.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use alwaysvalid::expserve::{serve_on, Service, ServiceOptions};
use serde_json::{json, Value};

struct Response {
    status: u16,
    body: String,
}

impl Response {
    fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.body))
    }
}

fn dechunk(body: &str) -> String {
    let mut out = String::new();
    let mut rest = body;
    while let Some((size, tail)) = rest.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            break;
        }
        out.push_str(&tail[..n]);
        rest = &tail[n + 2..];
    }
    out
}

fn request(addr: SocketAddr, method: &str, path: &str, content_type: &str, body: &str) -> Response {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let chunked = head.to_ascii_lowercase().contains("transfer-encoding: chunked");
    Response { status, body: if chunked { dechunk(body) } else { body.to_string() } }
}

fn get(addr: SocketAddr, path: &str) -> Response {
    request(addr, "GET", path, "application/json", "")
}

fn post(addr: SocketAddr, path: &str, body: Value) -> Response {
    request(addr, "POST", path, "application/json", &body.to_string())
}

fn post_csv(addr: SocketAddr, path: &str, body: &str) -> Response {
    request(addr, "POST", path, "text/csv", body)
}

fn in_process<F: FnOnce(SocketAddr)>(dir: &Path, f: F) {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut opts = ServiceOptions::new(dir);
    opts.sync = false;
    let svc = Arc::new(Service::open(opts).unwrap());
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(serve_on(listener, svc, async {
        let _ = rx.await;
    }));
    f(addr);
    tx.send(()).unwrap();
    rt.block_on(server).unwrap().unwrap();
}

#[test]
fn api_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    in_process(dir.path(), |addr| {
        let created =
            post(addr, "/experiments", json!({"id": "a", "model": {"kind": "bernoulli_two_stream"}, "tau_sq": 0.01}));
        assert_eq!(created.status, 201, "{}", created.body);
        assert_eq!(created.json()["p_value"], 1.0);
        assert_eq!(
            post(addr, "/experiments", json!({"id": "a", "model": {"kind": "bernoulli_two_stream"}})).status,
            409
        );
        assert_eq!(
            post(addr, "/experiments", json!({"id": "b", "model": {"kind": "bernoulli_two_stream"}, "levels": []}))
                .status,
            400
        );

        let mut csv = String::from("timestamp,variation,value\n");
        for i in 0..400 {
            csv.push_str(&format!("t{i},control,{}\nt{i},treatment,{}\n", (i % 10 == 0) as u8, (i % 3 == 0) as u8));
        }
        let snap = post_csv(addr, "/experiments/a/observations", &csv);
        assert_eq!(snap.status, 200, "{}", snap.body);
        let snap = snap.json();
        assert_eq!((snap["m"].as_u64(), snap["n"].as_u64()), (Some(400), Some(400)));
        let p = snap["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(get(addr, "/experiments/a/snapshot").json(), snap);

        let bad = post_csv(addr, "/experiments/a/observations", "timestamp,variation,value\nt,control,1\nt,nobody,1\n");
        assert_eq!(bad.status, 400);
        assert!(bad.body.contains("line 3"), "{}", bad.body);
        let bad = post(addr, "/experiments/a/observations", json!([{"variation": "control", "value": 0.5}]));
        assert_eq!(bad.status, 400);

        let wrapped = post(
            addr,
            "/experiments/a/observations",
            json!({"observations": [{"variation": "treatment", "value": 1}]}),
        );
        assert_eq!(wrapped.status, 200);
        let bare = post(addr, "/experiments/a/observations", json!([{"variation": "control", "value": 0}]));
        assert_eq!(bare.json()["as_of"], 4);

        let history = get(addr, "/experiments/a/history?after=2").json();
        let seqs: Vec<u64> = history["points"].as_array().unwrap().iter().map(|p| p["seq"].as_u64().unwrap()).collect();
        assert_eq!(seqs, vec![3, 4]);
        assert_eq!(history["cursor"], 4);
        assert_eq!(get(addr, "/experiments/a/history").json()["points"].as_array().unwrap().len(), 4);

        let ov = get(addr, "/overview?alpha=0.05&procedure=bonferroni&fcr=true").json();
        assert_eq!(ov["m"], 1);
        assert_eq!(ov["rows"][0]["q_value"], ov["rows"][0]["p_value"]);
        assert!(!ov["warning"].as_str().unwrap().is_empty());
        assert_eq!(get(addr, "/overview?procedure=nonsense").status, 400);

        let stop = post(addr, "/experiments/a/stop", json!({"alpha": 0.05, "actor": "tester", "reason": "done"}));
        assert_eq!(stop.status, 201, "{}", stop.body);
        let decision = stop.json();
        assert_eq!(decision["rejected"], decision["snapshot"]["p_value"].as_f64().unwrap() <= 0.05);
        assert_eq!(post(addr, "/experiments/a/stop", json!({"alpha": 0.05, "actor": "tester"})).status, 409);
        assert_eq!(post(addr, "/experiments/a/observations", json!([])).status, 409);
        assert_eq!(get(addr, "/experiments/a/snapshot").json()["status"], "stopped");

        assert_eq!(get(addr, "/experiments/nope/snapshot").status, 404);
        assert_eq!(get(addr, "/experiments/nope/history").status, 404);
        assert_eq!(post(addr, "/experiments/nope/stop", json!({"alpha": 0.05, "actor": "x"})).status, 404);
    });
    assert!(dir.path().join("a.snapshot.json").exists());
}

#[test]
fn overview_fixture_four_experiments() {
    let dir = tempfile::tempdir().unwrap();
    in_process(dir.path(), |addr| {
        // Strong, moderate and null effects on unit-variance normal data.
        let effects = [("e1", 0.6), ("e2", 0.45), ("e3", 0.0), ("e4", -0.05)];
        for (id, theta) in effects {
            post(addr, "/experiments", json!({"id": id, "model": {"kind": "normal_known_variance", "sigma_sq": 1.0}}));
            let batch: Vec<Value> = (0..100)
                .map(|i| json!({"variation": "treatment", "value": theta + if i % 2 == 0 { 0.5 } else { -0.5 }}))
                .collect();
            assert_eq!(post(addr, &format!("/experiments/{id}/observations"), Value::Array(batch)).status, 200);
        }
        let ov = get(addr, "/overview?alpha=0.05&procedure=bh_i").json();
        let rejected: Vec<bool> =
            ov["rows"].as_array().unwrap().iter().map(|r| r["rejected"].as_bool().unwrap()).collect();
        assert_eq!(rejected, vec![true, true, false, false]);
        assert_eq!(
            get(addr, "/overview?alpha=0.05&procedure=bh_i").body,
            get(addr, "/overview?alpha=0.05&procedure=bh_i").body
        );
    });
}

fn free_addr() -> SocketAddr {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap()
}

fn spawn_server(addr: SocketAddr, data: &Path) -> Child {
    let child = Command::new(env!("CARGO_BIN_EXE_alwaysvalid"))
        .args(["serve", "--listen", &addr.to_string(), "--data-dir"])
        .arg(data)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    while TcpStream::connect(addr).is_err() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(20));
    }
    child
}

#[test]
fn kill_nine_then_restart_replays_committed_state() {
    let dir = tempfile::tempdir().unwrap();
    let addr = free_addr();
    let mut server = spawn_server(addr, dir.path());
    for id in ["x", "y"] {
        let r = post(
            addr,
            "/experiments",
            json!({"id": id, "model": {"kind": "bernoulli_two_stream"}, "tau_sq": 0.001, "created_at": "2015-06-01T00:00:00Z"}),
        );
        assert_eq!(r.status, 201);
    }
    let mut state = 12345u64;
    let mut coin = |p: f64| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) < p
    };
    for round in 0..30 {
        for (id, pt) in [("x", 0.6), ("y", 0.5)] {
            let batch: Vec<Value> = (0..20)
                .flat_map(|_| {
                    [
                        json!({"variation": "control", "value": coin(0.5) as u8}),
                        json!({"variation": "treatment", "value": coin(pt) as u8}),
                    ]
                })
                .collect();
            assert_eq!(post(addr, &format!("/experiments/{id}/observations"), Value::Array(batch)).status, 200);
        }
        if round == 20 {
            assert_eq!(post(addr, "/experiments/y/stop", json!({"alpha": 0.05, "actor": "ops"})).status, 201);
            break;
        }
    }
    let before: Vec<(String, String)> = ["x", "y"]
        .iter()
        .map(|id| {
            (
                get(addr, &format!("/experiments/{id}/snapshot")).body,
                get(addr, &format!("/experiments/{id}/history")).body,
            )
        })
        .collect();
    let overview = get(addr, "/overview?alpha=0.1&fcr=true").body;

    server.kill().unwrap();
    server.wait().unwrap();

    let mut server = spawn_server(addr, dir.path());
    let after: Vec<(String, String)> = ["x", "y"]
        .iter()
        .map(|id| {
            (
                get(addr, &format!("/experiments/{id}/snapshot")).body,
                get(addr, &format!("/experiments/{id}/history")).body,
            )
        })
        .collect();
    assert_eq!(before, after);
    assert_eq!(overview, get(addr, "/overview?alpha=0.1&fcr=true").body);
    assert_eq!(post(addr, "/experiments/y/observations", json!([])).status, 409);
    assert_eq!(post(addr, "/experiments/x/observations", json!([{"variation": "control", "value": 1}])).status, 200);
    server.kill().unwrap();
    server.wait().unwrap();
}

#[test]
fn bad_config_and_busy_port_exit_nonzero() {
    let status = Command::new(env!("CARGO_BIN_EXE_alwaysvalid"))
        .args(["serve", "--config", "/nonexistent/alwaysvalid.toml"])
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "default_levels = [2.0]\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_alwaysvalid"))
        .args(["serve", "--config"])
        .arg(&cfg)
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_alwaysvalid"))
        .args(["serve", "--listen", &busy.local_addr().unwrap().to_string(), "--data-dir"])
        .arg(dir.path().join("data"))
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
