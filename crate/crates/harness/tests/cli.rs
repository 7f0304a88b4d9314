use std::path::Path;
use std::process::{Command, Output};

use probequot::activation::{read_activations, write_activations};
use probequot_core::rng;

fn probequot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probequot"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_names_experiments() {
    let o = probequot(&["list"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["xor", "quotient_transfer", "theta_sweep", "coverage_abstention"] {
        assert!(s.lines().any(|l| l == name), "{name} missing from {s}");
    }
}

#[test]
fn run_writes_artifacts_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = probequot(&[
        "run",
        "softmax_symmetry",
        "--seeds",
        "42,137",
        "--param",
        "transforms=3",
        "--param",
        "points=50",
        "--out",
        out,
        "--check",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("PASS"));
    let files: Vec<_> = walk(dir.path());
    assert!(files.iter().any(|p| p.ends_with(".csv")), "{files:?}");
}

fn walk(p: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(p).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path.display().to_string());
        }
    }
    out
}

#[test]
fn unknown_experiment_exits_with_error() {
    let o = probequot(&["run", "no_such_experiment"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_experiment"));
}

#[test]
fn convert_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.apqt");
    let c = dir.path().join("a.csv");
    let b = dir.path().join("b.apqt");
    let f32_out = dir.path().join("c.apqt");
    let mut g = rng::stream(5, 0);
    let x = rng::normal_matrix(&mut g, 20, 4);
    let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
    write_activations(&a, &x, Some(&labels)).unwrap();
    assert!(probequot(&["convert", a.to_str().unwrap(), c.to_str().unwrap()])
        .status
        .success());
    assert!(probequot(&["convert", c.to_str().unwrap(), b.to_str().unwrap()])
        .status
        .success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = probequot(&[
        "convert",
        c.to_str().unwrap(),
        f32_out.to_str().unwrap(),
        "--dtype",
        "f32",
    ]);
    assert!(o.status.success());
    let back = read_activations(&f32_out).unwrap();
    for (v, w) in back.data.iter().zip(x.iter()) {
        assert_eq!(*v, f64::from(*w as f32));
    }
}

#[test]
fn ingest_transfer_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (src, paired, tgt) = (root.join("src"), root.join("paired"), root.join("tgt"));
    for d in [&src, &paired, &tgt] {
        std::fs::create_dir_all(d).unwrap();
    }
    let mut g = rng::stream(11, 0);
    let (n, d) = (400, 6);
    let h = rng::normal_matrix(&mut g, n, d);
    let mix = rng::normal_matrix(&mut g, d, d);
    let ht = &h * &mix;
    write_activations(paired.join("source.apqt"), &h.rows(0, 200).into_owned(), None).unwrap();
    write_activations(paired.join("target.apqt"), &ht.rows(0, 200).into_owned(), None).unwrap();
    for j in 0..3 {
        let labels: Vec<u8> = (0..n).map(|i| u8::from(h[(i, j)] > 0.0)).collect();
        write_activations(src.join(format!("c{j}.apqt")), &h, Some(&labels)).unwrap();
        let eval: Vec<u8> = labels[200..].to_vec();
        write_activations(
            tgt.join(format!("c{j}.apqt")),
            &ht.rows(200, 200).into_owned(),
            Some(&eval),
        )
        .unwrap();
    }
    let report = root.join("out").join("report.csv");
    let o = probequot(&[
        "ingest-transfer",
        "--source-dir",
        src.to_str().unwrap(),
        "--paired",
        paired.to_str().unwrap(),
        "--target",
        tgt.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--bank",
        "c0,c1",
        "--evaluation-disjoint",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("asserted by caller"));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "concept,isf,deployed,auroc_src,auroc_tgt_quotient,auroc_tgt_fullstate"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows[..2] {
        assert_eq!(r[2], "true");
        assert!(r[4].parse::<f64>().unwrap() > 0.97, "{r:?}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("out").join("report.json")).unwrap()).unwrap();
    assert_eq!(summary["evaluation_disjoint_asserted"], true);
    assert_eq!(summary["k_eff"], 2);

    // Row-count mismatch in the paired files fails with a nonzero exit.
    write_activations(paired.join("target.apqt"), &ht.rows(0, 199).into_owned(), None).unwrap();
    let o = probequot(&[
        "ingest-transfer",
        "--source-dir",
        src.to_str().unwrap(),
        "--paired",
        paired.to_str().unwrap(),
        "--target",
        tgt.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paired"));
}
