use std::path::Path;

use nalgebra::{DMatrix, DVector};
use probequot::activation::{read_activations, write_activations};
use probequot::ingest::{ingest_bank_and_transfer, ingest_from_dirs, ConceptInput, IngestConfig, IngestInputs};
use probequot_core::metrics::auroc;
use probequot_core::rng;
use probequot_core::synthgen::{gen_latent_transfer, LatentTransferParams};

fn as_u8(labels: &[bool]) -> Vec<u8> {
    labels.iter().map(|v| u8::from(*v)).collect()
}

/// Bank primitives, held-out in-span concepts and the out-of-span concept
/// from the shared-latent generator; evaluation rows are the target
/// validation split, disjoint from the paired training rows.
fn latent_inputs(k_nuisance: usize, seed: u64) -> (IngestInputs, Vec<String>) {
    let p = LatentTransferParams {
        k_nuisance,
        ..Default::default()
    };
    let data = gen_latent_transfer(&p, seed).unwrap();
    let mut dirs: Vec<(String, DVector<f64>)> = Vec::new();
    for i in 0..data.primitives.nrows() {
        dirs.push((format!("primitive-{i}"), data.primitives.row(i).transpose()));
    }
    for i in 0..data.heldout_in_span.nrows() {
        dirs.push((format!("heldout-{i}"), data.heldout_in_span.row(i).transpose()));
    }
    dirs.push(("out-of-span".into(), data.out_of_span.clone()));
    let bank = (0..data.primitives.nrows()).map(|i| format!("primitive-{i}")).collect();
    let concepts = dirs
        .into_iter()
        .map(|(name, u)| {
            let (train, val) = data.labels(&u).unwrap();
            ConceptInput {
                name,
                source: data.source_train.clone(),
                source_labels: train,
                target: data.target_val.clone(),
                target_labels: val,
            }
        })
        .collect();
    (
        IngestInputs {
            concepts,
            paired_source: data.source_train.clone(),
            paired_target: data.target_train.clone(),
        },
        bank,
    )
}

fn write_layout(root: &Path, inputs: &IngestInputs) {
    let (s, p, t) = (root.join("source"), root.join("paired"), root.join("target"));
    for d in [&s, &p, &t] {
        std::fs::create_dir_all(d).unwrap();
    }
    write_activations(p.join("source.apqt"), &inputs.paired_source, None).unwrap();
    write_activations(p.join("target.apqt"), &inputs.paired_target, None).unwrap();
    for c in &inputs.concepts {
        write_activations(
            s.join(format!("{}.apqt", c.name)),
            &c.source,
            Some(&as_u8(&c.source_labels)),
        )
        .unwrap();
        write_activations(
            t.join(format!("{}.apqt", c.name)),
            &c.target,
            Some(&as_u8(&c.target_labels)),
        )
        .unwrap();
    }
}

#[test]
fn file_path_matches_in_memory_pipeline() {
    let (mut inputs, bank) = latent_inputs(24, 42);
    let cfg = IngestConfig {
        bank,
        evaluation_disjoint: true,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    write_layout(dir.path(), &inputs);
    let from_files = ingest_from_dirs(
        &dir.path().join("source"),
        &dir.path().join("paired"),
        &dir.path().join("target"),
        &cfg,
    )
    .unwrap();
    // The loader orders concepts by file name.
    inputs.concepts.sort_by(|a, b| a.name.cmp(&b.name));
    let in_memory = ingest_bank_and_transfer(&inputs, &cfg).unwrap();
    assert_eq!(from_files.k_eff, in_memory.k_eff);
    assert!(from_files.evaluation_disjoint);
    for (a, b) in from_files.scores.iter().zip(&in_memory.scores) {
        assert_eq!(a.concept, b.concept);
        assert!((&a.quotient - &b.quotient).amax() <= 1e-10, "{}", a.concept);
        assert!((&a.fullstate - &b.fullstate).amax() <= 1e-10, "{}", a.concept);
    }
    for (a, b) in from_files.report.rows.iter().zip(&in_memory.report.rows) {
        assert!((a.auroc_tgt_quotient - b.auroc_tgt_quotient).abs() <= 1e-10);
        assert!((a.isf - b.isf).abs() <= 1e-10);
    }

    // The end-to-end file path reproduces the qualitative transfer pattern.
    for r in &from_files.report.rows {
        if r.concept == "out-of-span" {
            assert!(r.isf < 0.5, "{r:?}");
            assert!(r.auroc_tgt_quotient < 0.65, "{r:?}");
            assert!(r.auroc_tgt_fullstate > 0.95, "{r:?}");
        } else {
            assert!(r.auroc_tgt_quotient > 0.95, "{r:?}");
        }
    }
}

#[test]
fn self_transfer_matches_in_model() {
    let mut g = rng::stream(7, 0);
    let (n, d) = (1200, 10);
    let x = rng::normal_matrix(&mut g, n, d);
    let noise = rng::normal_matrix(&mut g, n, 3) * 0.5;
    let concepts: Vec<ConceptInput> = (0..3)
        .map(|j| {
            let labels: Vec<bool> = (0..n).map(|i| x[(i, j)] + noise[(i, j)] > 0.0).collect();
            ConceptInput {
                name: format!("c{j}"),
                source: x.clone(),
                source_labels: labels.clone(),
                target: x.clone(),
                target_labels: labels,
            }
        })
        .collect();
    let inputs = IngestInputs {
        concepts,
        paired_source: x.clone(),
        paired_target: x.clone(),
    };
    let out = ingest_bank_and_transfer(&inputs, &IngestConfig::default()).unwrap();
    for (s, c) in out.scores.iter().zip(&inputs.concepts) {
        let in_model = auroc(s.probe.decision_function(&x).unwrap().as_slice(), &c.target_labels).unwrap();
        let row = out.report.rows.iter().find(|r| r.concept == c.name).unwrap();
        assert!(
            (row.auroc_tgt_fullstate - in_model).abs() <= 0.002,
            "{row:?} vs {in_model}"
        );
        assert!(
            (row.auroc_tgt_quotient - in_model).abs() <= 0.002,
            "{row:?} vs {in_model}"
        );
    }
}

#[test]
fn mismatched_paired_rows_fail_before_fitting() {
    let (mut inputs, _) = latent_inputs(0, 1);
    let n = inputs.paired_target.nrows();
    inputs.paired_target = inputs.paired_target.rows(0, n - 1).into_owned();
    let err = ingest_bank_and_transfer(&inputs, &IngestConfig::default()).unwrap_err();
    assert!(err.to_string().contains("paired"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_layout(dir.path(), &inputs);
    let err = ingest_from_dirs(
        &dir.path().join("source"),
        &dir.path().join("paired"),
        &dir.path().join("target"),
        &IngestConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("paired"), "{err}");
}

#[test]
fn missing_target_file_is_reported() {
    let (inputs, _) = latent_inputs(0, 2);
    let dir = tempfile::tempdir().unwrap();
    write_layout(dir.path(), &inputs);
    std::fs::remove_file(dir.path().join("target").join("out-of-span.apqt")).unwrap();
    let err = ingest_from_dirs(
        &dir.path().join("source"),
        &dir.path().join("paired"),
        &dir.path().join("target"),
        &IngestConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("out-of-span"), "{err}");
}

/// An f32 file assembled byte by byte reads back as the exact widening.
#[test]
fn hand_built_f32_file_upcasts_exactly() {
    let values: [f32; 6] = [0.1, -1.5, 3.4028235e38, 1.0e-45, -0.0, 16777217.0];
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"APQT");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&2u64.to_le_bytes());
    bytes.extend_from_slice(&3u64.to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&2u64.to_le_bytes());
    bytes.extend_from_slice(&[1, 0]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.apqt");
    std::fs::write(&path, &bytes).unwrap();
    let f = read_activations(&path).unwrap();
    let want = DMatrix::from_row_slice(2, 3, &values.map(f64::from));
    assert_eq!(f.data.shape(), (2, 3));
    for (a, b) in f.data.iter().zip(want.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(f.binary_labels().unwrap().unwrap(), vec![true, false]);
}

#[test]
fn f64_round_trip_is_bitwise() {
    let mut g = rng::stream(3, 0);
    let x = rng::normal_matrix(&mut g, 100, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.apqt");
    write_activations(&path, &x, None).unwrap();
    let back = read_activations(&path).unwrap();
    assert!(back.labels.is_none());
    assert!(x.iter().zip(back.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_activations(&path)
        .unwrap_err()
        .to_string()
        .to_lowercase()
        .contains("truncat"));
}
