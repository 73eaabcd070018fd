use std::path::Path;
use std::process::{Command, Output};

use fixformer::kernels::{activation_ref, ActivationConfig, ActivationKind};
use fixformer::pipeline::EncoderConfig;
use fixformer::qcore::{q, qten, FixedTensor, RealTensor};

fn fixformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fixformer"))
        .args(args)
        .env("FIXFORMER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn save_real(path: &Path, values: Vec<f64>) {
    let t = RealTensor::new(vec![values.len()], values).unwrap();
    qten::save(path, &qten::Tensor::Real(t)).unwrap();
}

fn load_fixed(path: &Path) -> FixedTensor {
    match qten::load(path).unwrap() {
        qten::Tensor::Fixed(t) => t,
        qten::Tensor::Real(_) => panic!("expected fixed data"),
    }
}

fn repo_file(rel: &str) -> String {
    format!("{}/../../{rel}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn quantize_reports_saturation() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.qten");
    let out = dir.path().join("y.qten");
    let (i, o) = (input.to_str().unwrap(), out.to_str().unwrap());

    save_real(&input, vec![0.0; 16]);
    let r = fixformer(&["quantize", "--input", i, "--format", "S6.9", "--out", o]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stderr(&r).contains("0 saturated"));

    save_real(&input, vec![100.0, 1.0, -3.5]);
    let r = fixformer(&["quantize", "--input", i, "--format", "S6.9", "--out", o]);
    assert!(r.status.success());
    assert!(stderr(&r).contains("1 saturated"), "{}", stderr(&r));
}

#[test]
fn quantize_round_trip_within_half_lsb() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.qten");
    let out = dir.path().join("y.qten");
    let values: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3721).sin() * 50.0).collect();
    save_real(&input, values.clone());
    let r = fixformer(&["quantize", "--input", input.to_str().unwrap(), "--format", "S6.9", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let y = load_fixed(&out);
    assert_eq!(y.format(), q("S6.9"));
    for (a, b) in y.dequantize().values().iter().zip(&values) {
        assert!((a - b).abs() <= q("S6.9").lsb() / 2.0);
    }
}

#[test]
fn sweep_is_reproducible() {
    let args = ["sweep", "--op", "softmax", "--rows", "3"];
    let a = fixformer(&args);
    let b = fixformer(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    // Thread count does not change the output.
    let c = Command::new(env!("CARGO_BIN_EXE_fixformer"))
        .args(args)
        .env("FIXFORMER_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn sweep_rejects_bad_arguments() {
    assert_eq!(fixformer(&["sweep", "--op", "softmax", "--rows", "0"]).status.code(), Some(1));
    assert_eq!(fixformer(&["sweep", "--op", "nosuchop"]).status.code(), Some(1));
    assert_eq!(fixformer(&["sweep", "--op", "gelu", "--formats", "S6.9"]).status.code(), Some(1));
    assert_eq!(fixformer(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fixformer(&["--help"]).status.code(), Some(0));
}

#[test]
fn band_violations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bands = dir.path().join("bands.toml");
    std::fs::write(
        &bands,
        "[[band]]\noperator = \"gelu\"\nin_fmt = \"S6.9\"\nout_fmt = \"S3.4\"\nmean_max = 0.001\n",
    )
    .unwrap();
    let base = ["sweep", "--op", "gelu", "--formats", "S6.9/S3.4", "--rows", "20", "--assert-bands"];
    let r = fixformer(&[&base[..], &[bands.to_str().unwrap()]].concat());
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("band violation"));

    std::fs::write(
        &bands,
        "[[band]]\noperator = \"gelu\"\nin_fmt = \"S6.9\"\nout_fmt = \"S3.4\"\nmean_min = 1.0\n",
    )
    .unwrap();
    let r = fixformer(&[&base[..], &[bands.to_str().unwrap()]].concat());
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
}

#[test]
fn shipped_configs_parse() {
    let cfg = EncoderConfig::load(repo_file("configs/default.toml")).unwrap();
    assert_eq!(cfg, EncoderConfig::default());
    let bands = fixformer::oracle::load_bands(repo_file("configs/bands.toml")).unwrap();
    assert_eq!(bands.len(), 8);
}

#[test]
fn profile_trace_has_every_step() {
    let r = fixformer(&["profile", "--repeats", "1", "--no-timings"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let csv = String::from_utf8(r.stdout).unwrap();
    assert_eq!(csv.lines().count(), 27, "header plus 26 steps");
}

#[test]
fn profile_counts_ignore_repeats() {
    let one = fixformer(&["profile", "--repeats", "1", "--no-timings"]);
    let five = fixformer(&["profile", "--repeats", "5", "--no-timings"]);
    assert_eq!(one.stdout, five.stdout);
}

#[test]
fn profile_config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[encoder]\nchannels = 30\nheads = 4\n").unwrap();
    let r = fixformer(&["profile", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("encoder.heads"), "{}", stderr(&r));

    let r = fixformer(&["profile", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn profile_json_reports_summary() {
    let r = fixformer(&["profile", "--repeats", "1", "--json", "--no-timings"]);
    assert!(r.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(doc["steps"].as_array().unwrap().len(), 26);
    assert_eq!(doc["summary"]["steps"], 26);
    assert!(doc["summary"]["matmul_share"].as_f64().unwrap() > 0.8);
}

#[test]
fn run_op_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.qten");
    let out = dir.path().join("y.qten");
    let golden = dir.path().join("g.qten");
    let values: Vec<f64> = (0..64).map(|i| (i as f64 - 32.0) / 8.0).collect();
    let t = RealTensor::new(vec![4, 16], values.clone()).unwrap();
    qten::save(&input, &qten::Tensor::Real(t)).unwrap();

    let r = fixformer(&[
        "run-op", "--op", "gelu", "--input", input.to_str().unwrap(), "--in-fmt", "S6.9", "--out-fmt", "S5.10", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    let y = load_fixed(&out);
    assert_eq!(y.shape(), &[4, 16]);
    assert_eq!(y.format(), q("S5.10"));

    let cfg = ActivationConfig::new(ActivationKind::Gelu, q("S6.9"), q("S5.10"));
    let g: Vec<f64> = values.iter().map(|&x| activation_ref(x, &cfg)).collect();
    qten::save(&golden, &qten::Tensor::Real(RealTensor::new(vec![4, 16], g).unwrap())).unwrap();
    let r = fixformer(&["compare", "--fixed", out.to_str().unwrap(), "--golden", golden.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let text = String::from_utf8(r.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mean_err_pct,max_err_pct,max_err_index,n_elements"));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[3], "64");
    assert!(fields[0].parse::<f64>().unwrap() < 2.0);

    // Shape mismatch is a usage error.
    qten::save(&golden, &qten::Tensor::Real(RealTensor::new(vec![64], vec![0.0; 64]).unwrap())).unwrap();
    let r = fixformer(&["compare", "--fixed", out.to_str().unwrap(), "--golden", golden.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn run_op_matmul() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.qten");
    let b = dir.path().join("b.qten");
    let out = dir.path().join("y.qten");
    let fa = FixedTensor::with_format(vec![2, 3], q("S0.7"), vec![1, -2, 3, 4, 5, -6]).unwrap();
    let fb = FixedTensor::with_format(vec![3, 2], q("S0.7"), vec![7, 8, 9, 10, 11, 12]).unwrap();
    qten::save(&a, &qten::Tensor::Fixed(fa)).unwrap();
    qten::save(&b, &qten::Tensor::Fixed(fb)).unwrap();
    let r = fixformer(&[
        "run-op", "--op", "matmul", "--input", a.to_str().unwrap(), "--rhs", b.to_str().unwrap(), "--out-fmt", "S15.16",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    let y = load_fixed(&out).dequantize();
    let scale = 2f64.powi(-14);
    let expect = [22.0, 24.0, 7.0, 10.0].map(|v| v * scale);
    for (f, g) in y.values().iter().zip(expect) {
        assert!((f - g).abs() <= 2f64.powi(-17));
    }
}
