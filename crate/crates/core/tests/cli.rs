mod common;

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn ringforge(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringforge"))
        .args(args)
        .env("RINGFORGE_CACHE", cache)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn data_dir() -> String {
    common::data_dir().display().to_string()
}

const SMALL: &[&str] = &[
    "--epochs",
    "2",
    "--batch_size",
    "64",
    "--hidden",
    "8",
    "--proj_dim",
    "8",
    "--gin_layers",
    "2",
    "--ccnn_layers",
    "1",
];

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ringforge(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(ringforge(&["train", "MUTAG", "--bogus", "1"], tmp.path()).status.code(), Some(1));
    assert_eq!(ringforge(&[], tmp.path()).status.code(), Some(1));
    assert_eq!(ringforge(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(ringforge(&["train", "--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn train_without_preprocess_reports_missing_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ringforge(&["train", "MUTAG", "--data_dir", &data_dir()], &tmp.path().join("cache"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cache missing"), "{}", stderr(&out));
}

#[test]
fn preprocess_twice_hits_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["preprocess", "MUTAG", "--data_dir", &data_dir(), "--granularities", "6,9,12"];
    let first = ringforge(&args, tmp.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(!stderr(&first).contains("cache hit"));
    let second = ringforge(&args, tmp.path());
    assert_eq!(second.status.code(), Some(0));
    assert!(stderr(&second).contains("cache hit"), "{}", stderr(&second));
    assert!(tmp.path().join("MUTAG").is_dir());
}

#[test]
fn train_embed_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let dd = data_dir();
    assert_eq!(ringforge(&["preprocess", "MUTAG", "--data_dir", &dd], &cache).status.code(), Some(0));

    let cfg_file = tmp.path().join("run.cfg");
    std::fs::write(&cfg_file, "# small run\nepochs = 5\nseed = 3\nbeta = 0.02\n").unwrap();
    let runs = tmp.path().join("runs");
    for (name, extra) in [("full", vec![]), ("single", vec!["--granularities", "6"])] {
        let dir = runs.join(name);
        let mut args = vec!["train", "MUTAG", "--data_dir", &dd, "--config", cfg_file.to_str().unwrap()];
        args.extend_from_slice(SMALL);
        args.extend(extra);
        args.extend(["--run-dir", dir.to_str().unwrap()]);
        let out = ringforge(&args, &cache);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let echoed = std::fs::read_to_string(dir.join("config.txt")).unwrap();
        // flag beats file beats default
        assert!(echoed.contains("epochs = 2"), "{echoed}");
        assert!(echoed.contains("seed = 3"));
        assert!(echoed.contains("beta = 0.02"));
        assert!(echoed.contains(&format!("cache_dir = {}", cache.display())));

        let ck = dir.join("checkpoint.bin");
        let out = ringforge(&["embed", "MUTAG", "--checkpoint", ck.to_str().unwrap()], &cache);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let emb = dir.join("embeddings.json");
        assert!(emb.is_file());
        let out = ringforge(&["eval", "MUTAG", "--embeddings", emb.to_str().unwrap(), "--folds", "5"], &cache);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("eval.json")).unwrap()).unwrap();
        assert_eq!(eval["result"]["accuracies"].as_array().unwrap().len(), 5);
        assert_eq!(eval["config"]["folds"], "5");
        let mean = eval["result"]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&mean));
    }

    let semi_out = runs.join("semi.json");
    let emb = runs.join("full/embeddings.json");
    let out = ringforge(
        &[
            "eval",
            "MUTAG",
            "--embeddings",
            emb.to_str().unwrap(),
            "--semi",
            "--fraction",
            "0.2",
            "--folds",
            "3",
            "--out",
            semi_out.to_str().unwrap(),
        ],
        &cache,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let semi: serde_json::Value = serde_json::from_slice(&std::fs::read(&semi_out).unwrap()).unwrap();
    assert_eq!(semi["result"]["label_fraction"], 0.2);

    let out = ringforge(&["report", runs.to_str().unwrap()], &cache);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(runs.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.lines().skip(1).all(|l| l.contains('±')));
    let svg = std::fs::read_to_string(runs.join("loss.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(runs.join("omega.svg").is_file());
}

#[test]
fn report_on_empty_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ringforge(&["report", tmp.path().to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

fn mutag_zip() -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut zip = zip::ZipWriter::new(&mut buf);
        let opts = zip::write::SimpleFileOptions::default();
        for entry in std::fs::read_dir(common::mutag_dir()).unwrap() {
            let path = entry.unwrap().path();
            let name = format!("MUTAG/{}", path.file_name().unwrap().to_str().unwrap());
            zip.start_file(name, opts).unwrap();
            zip.write_all(&std::fs::read(&path).unwrap()).unwrap();
        }
        zip.finish().unwrap();
    }
    buf.into_inner()
}

/// Serves `body` with `status` for every request until the test exits.
fn serve(status: &'static str, body: Vec<u8>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut req = Vec::new();
            let mut byte = [0u8; 1];
            while !req.ends_with(b"\r\n\r\n") && stream.read(&mut byte).unwrap() == 1 {
                req.push(byte[0]);
            }
            let head = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/zip\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(&body).unwrap();
        }
    });
    format!("http://{addr}")
}

#[test]
fn fetch_downloads_and_unpacks() {
    let url = serve("200 OK", mutag_zip());
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let args = ["fetch", "MUTAG", "--base_url", &url, "--data_dir", data.to_str().unwrap()];
    let out = ringforge(&args, tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let a = std::fs::read(data.join("MUTAG/MUTAG_A.txt")).unwrap();
    assert_eq!(a, std::fs::read(common::mutag_dir().join("MUTAG_A.txt")).unwrap());
    let again = ringforge(&args, tmp.path());
    assert!(stderr(&again).contains("already present"));
}

#[test]
fn fetch_failures_are_runtime_errors() {
    let url = serve("404 Not Found", b"nope".to_vec());
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = ringforge(&["fetch", "MUTAG", "--base_url", &url, "--data_dir", data.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("404"), "{}", stderr(&out));
    let out = ringforge(&["fetch", "NOT_A_DATASET", "--base_url", &url], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
