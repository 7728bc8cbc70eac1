use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qwalk_core::matrixgen::ImageSidecar;
use qwalk_core::QramImage;
use tempfile::tempdir;

fn qwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qwalk"))
        .args(args)
        .output()
        .expect("run qwalk")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn gen(dir: &Path, extra: &[&str]) -> ImageSidecar {
    let out = dir.to_str().unwrap();
    let mut args = vec!["gen", "--out", out];
    args.extend_from_slice(extra);
    let o = qwalk(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(dir.join("image.json")).unwrap()).unwrap()
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn gen_is_deterministic() {
    let t = tempdir().unwrap();
    let args = ["--rows", "16", "--bandwidth", "2", "--seed", "9"];
    gen(&t.path().join("a"), &args);
    gen(&t.path().join("b"), &args);
    for f in ["image.bin", "image.json"] {
        assert_eq!(
            fs::read(t.path().join("a").join(f)).unwrap(),
            fs::read(t.path().join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn sidecar_layout() {
    let t = tempdir().unwrap();
    let diag = gen(&t.path().join("d"), &["--rows", "8", "--bandwidth", "0"]);
    assert_eq!(diag.s, 1);
    let band = gen(&t.path().join("b"), &["--rows", "16", "--bandwidth", "3"]);
    assert_eq!((band.rows, band.s, band.n, band.k_w), (16, 8, 5, 8));
    assert_eq!(band.sparsity_offset - band.element_offset, 16 * 8);
    let text = fs::read_to_string(t.path().join("b/image.json")).unwrap();
    for key in ["\"N\"", "\"s\"", "\"k_w\"", "\"n\"", "\"elementOffset\"", "\"sparsityOffset\"", "\"kappa\"", "\"seed\""] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn walk_on_diagonal_matrix() {
    let t = tempdir().unwrap();
    let m = t.path().join("m");
    gen(&m, &["--rows", "8", "--bandwidth", "0", "--seed", "3"]);
    let out = t.path().join("w");
    let o = qwalk(&["walk", "--matrix", m.to_str().unwrap(), "--steps", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("walk.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,max_err,branches"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    assert!(row[1].parse::<f64>().unwrap() <= 1e-12);
    assert!(out.join("timings.csv").exists());
    let r = report(&out, "report.json");
    assert_eq!(r["passed"], true);
    assert_eq!(r["s"], 1);
}

#[test]
fn solve_report_fields() {
    let t = tempdir().unwrap();
    let out = t.path().join("s");
    let o = qwalk(&[
        "solve", "--rows", "16", "--bandwidth", "3", "--steps", "40", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out, "report.json");
    assert_eq!(r["qubitCountFormula"], 82);
    assert_eq!(r["rowSize"], 16);
    assert_eq!(r["iterations"], 40);
    assert!(r["maxTheoryDeviation"].as_f64().unwrap() <= 1e-6);
    assert_eq!(r["fullHorizonWalkSteps"], 2 * r["j0"].as_u64().unwrap() + 1);
    let csv = fs::read_to_string(out.join("solve.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("j,p,f,p_theory,f_theory,branches"));
    assert_eq!(csv.lines().count(), 41);
    let timings = fs::read_to_string(out.join("timings.csv")).unwrap();
    assert_eq!(timings.lines().next(), Some("j,millis"));
}

#[test]
fn solve_without_oracle_leaves_theory_empty() {
    let t = tempdir().unwrap();
    let out = t.path().join("s");
    let o = qwalk(&["solve", "--rows", "8", "--steps", "3", "--oracle", "off", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("solve.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[3], row[4]), ("", ""));
}

#[test]
fn verify_passes_then_fails_on_corrupted_image() {
    let t = tempdir().unwrap();
    let m = t.path().join("m");
    let sc = gen(&m, &["--rows", "8", "--bandwidth", "1"]);
    let out = t.path().join("v");
    let o = qwalk(&["verify", "--matrix", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(report(&out, "verify.json")["passed"], true);

    // Swap the first two column indices of row 2 so its window is unsorted.
    let bin = m.join("image.bin");
    let img = QramImage::load(&bin).unwrap();
    let mut words = img.words().to_vec();
    let at = (sc.sparsity_offset + 2 * sc.s) as usize;
    words.swap(at, at + 1);
    QramImage::new(words, img.address_width(), img.word_width())
        .unwrap()
        .save(&bin)
        .unwrap();
    let o = qwalk(&["verify", "--matrix", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let r = report(&out, "verify.json");
    assert_eq!(r["passed"], false);
    let failed: Vec<&str> = r["suites"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["passed"] == false)
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"qbsImageWindows"), "{failed:?}");
}

#[test]
fn exit_codes() {
    let t = tempdir().unwrap();
    let out = t.path().join("x");
    let out = out.to_str().unwrap();
    // Rows not a power of two.
    assert_eq!(code(&qwalk(&["walk", "--rows", "12", "--out", out])), 2);
    assert_eq!(code(&qwalk(&["solve", "--rows", "8", "--epsilon", "2", "--out", out])), 2);
    // Missing matrix files.
    let missing = t.path().join("nope");
    assert_eq!(code(&qwalk(&["walk", "--matrix", missing.to_str().unwrap(), "--out", out])), 3);
    // Output path is a regular file.
    let file = t.path().join("file");
    fs::write(&file, "x").unwrap();
    assert_eq!(code(&qwalk(&["gen", "--out", file.to_str().unwrap()])), 3);
}

#[test]
fn signed_matrix_walks() {
    let t = tempdir().unwrap();
    let out = t.path().join("w");
    let o = qwalk(&[
        "walk", "--rows", "8", "--bandwidth", "1", "--signed", "--steps", "10", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
