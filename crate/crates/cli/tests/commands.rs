use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use basisn::format::{tensors_to_bytes, Tensor, TensorData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn basisn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basisn"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn toy_weights(dir: &Path, seed: u64) -> (PathBuf, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv: Vec<f64> = (0..6 * 2 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fc: Vec<f64> = (0..4 * 30).map(|_| rng.random_range(-0.5..0.5)).collect();
    let tensors = vec![
        Tensor::new("conv", vec![6, 2, 3, 3], TensorData::F64(conv.clone())).unwrap(),
        Tensor::new("fc", vec![4, 30], TensorData::F64(fc.clone())).unwrap(),
    ];
    let path = dir.join("weights.bsnt");
    std::fs::write(&path, tensors_to_bytes(&tensors)).unwrap();
    (path, vec![conv, fc])
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    reader.records().map(Result::unwrap).collect()
}

fn payload(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["payload"].clone()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
    csv_rows(path).iter().map(|r| r[idx].parse().unwrap()).collect()
}

// Per-layer max-abs quantization of the raw weights, computed directly.
fn quantization_error(w: &[f64], bits: u32) -> f64 {
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let top = ((1i64 << (bits - 1)) - 1) as f64;
    let step = scale / top;
    let num: f64 = w
        .iter()
        .map(|&v| {
            let q = (v / step).round().clamp(-top - 1.0, top) * step;
            (q - v).powi(2)
        })
        .sum();
    num.sqrt() / w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(basisn(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(basisn(dir.path(), &["frobnicate"]).status.code(), Some(1));
    let o = basisn(dir.path(), &["schedule"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_file_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.bsnt");
    let o = basisn(dir.path(), &["decompose", "--weights", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.bsnt"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write(&dir.path().join("broken.json"), "{\"seed\": ");
    let o = basisn(dir.path(), &["cost", "--config", &broken]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broken.json"));
    let invalid = write(&dir.path().join("invalid.json"), r#"{"crossbar": {"coeff_bits": 0}}"#);
    assert_eq!(basisn(dir.path(), &["cost", "--config", &invalid]).status.code(), Some(1));
    let missing = dir.path().join("absent.json");
    assert_eq!(
        basisn(dir.path(), &["cost", "--config", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn empty_network_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(&dir.path().join("empty.json"), "[]");
    let o = basisn(dir.path(), &["cost", "--network", &empty]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty.json"), "{}", stderr(&o));
}

#[test]
fn identity_basis_error_is_pure_quantization_error() {
    let dir = tempfile::tempdir().unwrap();
    let (weights, layers) = toy_weights(dir.path(), 1);
    let config = write(&dir.path().join("config.json"), r#"{"basis": "identity", "crossbar": {"cell_bits": null}}"#);
    for bits in [2u32, 4, 8] {
        let b = bits.to_string();
        let o = basisn(
            dir.path(),
            &["decompose", "--config", &config, "--weights", weights.to_str().unwrap(), "--dim", "16", "--coeff-bits", &b],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let errors = column(&dir.path().join("decompose.csv"), "rel_error");
        for (got, w) in errors.iter().zip(&layers) {
            let expected = quantization_error(w, bits);
            assert!((got - expected).abs() <= 1e-12 * expected.max(1e-12), "N={bits}: {got} vs {expected}");
        }
    }
}

#[test]
fn sixteen_bit_decomposition_is_nearly_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (weights, _) = toy_weights(dir.path(), 2);
    let o = basisn(
        dir.path(),
        &["decompose", "--weights", weights.to_str().unwrap(), "--dim", "32", "--coeff-bits", "16", "--cell-bits", "0"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let errors = column(&dir.path().join("decompose.csv"), "rel_error");
    assert_eq!(errors.len(), 2);
    assert!(errors.iter().all(|&e| e <= 1e-3), "{errors:?}");
}

#[test]
fn zero_input_gives_zero_outputs_and_truncation_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let (weights, _) = toy_weights(dir.path(), 3);
    let w = weights.to_str().unwrap();
    assert!(basisn(dir.path(), &["decompose", "--weights", w, "--dim", "8"]).status.success());
    let ckpt = dir.path().join("checkpoint");
    let zeros = vec![
        Tensor::new("conv", vec![18], TensorData::F64(vec![0.0; 18])).unwrap(),
        Tensor::new("fc", vec![30], TensorData::F64(vec![0.0; 30])).unwrap(),
    ];
    let input = dir.path().join("zeros.bsnt");
    std::fs::write(&input, tensors_to_bytes(&zeros)).unwrap();
    let o = basisn(
        dir.path(),
        &["simulate", "--checkpoint", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(), "--dim", "8"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(dir.path().join("outputs.bsnt")).unwrap();
    let outputs = basisn::format::tensors_from_bytes(&bytes).unwrap();
    assert_eq!(outputs.len(), 2);
    for t in &outputs {
        assert!(t.as_f64().unwrap().iter().all(|&v| v == 0.0));
    }

    let codes = ckpt.join("codes.bsnt");
    let full = std::fs::read(&codes).unwrap();
    std::fs::write(&codes, &full[..full.len() - 7]).unwrap();
    let o = basisn(dir.path(), &["simulate", "--checkpoint", ckpt.to_str().unwrap(), "--dim", "8"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}

#[test]
fn baseline_cycles_fall_as_crossbars_grow() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        &dir.path().join("config.json"),
        r#"{"networks": ["densenet121_cifar100"],
            "sweep": {"cost_dims": [256], "num_crossbars": [12, 24, 48, 96, 192, 300, 400, 500]}}"#,
    );
    let o = basisn(dir.path(), &["cost", "--config", &config, "--coeff-bits", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = dir.path().join("cost.csv");
    let available = column(&csv, "crossbars_available");
    assert_eq!(available, vec![12.0, 24.0, 48.0, 96.0, 192.0, 300.0, 400.0, 500.0]);
    for name in ["row_cycles", "block_cycles", "basisn_cycles"] {
        let cycles = column(&csv, name);
        assert!(cycles.windows(2).all(|w| w[1] <= w[0]), "{name}: {cycles:?}");
    }
    let crossings = payload(&dir.path().join("cost.json"))["crossings"].clone();
    assert_eq!(crossings.as_array().unwrap().len(), 1);
}

#[test]
fn accuracy_rises_with_coefficient_bits_on_average() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        &dir.path().join("config.json"),
        r#"{"sweep": {"coeff_bits": [1, 2, 3, 4], "dims": [8, 16], "cell_bits": [null], "seeds": [0, 1, 2, 3, 4]}}"#,
    );
    let o = basisn(dir.path(), &["sweep-accuracy", "--config", &config]);
    assert!(o.status.success(), "{}", stderr(&o));
    let grid = payload(&dir.path().join("accuracy.json"))["grid"].clone();
    for dim in [8, 16] {
        let mut acc: Vec<(u64, f64)> = grid
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["dim"] == dim)
            .map(|r| (r["coeff_bits"].as_u64().unwrap(), r["mean_test_accuracy"].as_f64().unwrap()))
            .collect();
        acc.sort_by_key(|a| a.0);
        assert_eq!(acc.len(), 4);
        assert!(acc.windows(2).all(|w| w[1].1 >= w[0].1), "d={dim}: {acc:?}");
    }
}
