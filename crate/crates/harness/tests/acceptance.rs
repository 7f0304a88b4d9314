//! Acceptance envelopes. Each test runs one experiment at its default
//! configuration and prints one `ACCEPT` line, bypassing output capture so
//! the verdicts appear in the plain `cargo test` log.

use std::io::Write;
use std::sync::Mutex;

use nalgebra::DVector;
use probequot::config::ExperimentConfig;
use probequot::experiments;
use probequot::ingest::{ingest_bank_and_transfer, ingest_from_dirs, ConceptInput, IngestConfig, IngestInputs};
use probequot_core::synthgen::{gen_latent_transfer, LatentTransferParams};

/// Runtime budgets are wall-clock, so experiments never run concurrently.
static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(criterion: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "ACCEPT [{tag}] {criterion}: {detail}");
    let _ = out.flush();
}

fn accept(criterion: &str, experiment: &str) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let rep = experiments::run(&ExperimentConfig::new(experiment)).expect(experiment);
    let detail = rep
        .checks
        .iter()
        .map(|c| format!("{}{}", if c.passed { "" } else { "FAILED " }, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(criterion, rep.all_passed(), &detail);
    assert!(rep.all_passed(), "{criterion}: {detail}");
}

#[test]
fn xor_hierarchy() {
    accept("XOR hierarchy", "xor");
}

#[test]
fn circular_parity_tightness() {
    accept("Circular parity tightness", "circular_parity");
}

#[test]
fn boolean_degree_recovery() {
    accept("Boolean degree recovery", "boolean_degree_recovery");
}

#[test]
fn area_regression() {
    accept("Area regression", "area_regression");
}

#[test]
fn cp_rank_sweep() {
    accept("CP rank sweep", "cp_rank_sweep");
}

#[test]
fn exact_reparameterization() {
    accept("Exact reparameterization", "exact_reparam");
}

#[test]
fn softmax_symmetry() {
    accept("Softmax symmetry", "softmax_symmetry");
}

#[test]
fn robust_alignment() {
    accept("Robust alignment", "robust_alignment_property");
}

#[test]
fn quotient_transfer() {
    accept("Quotient transfer", "quotient_transfer");
}

#[test]
fn theta_sweep() {
    accept("Rotation sweep", "theta_sweep");
}

#[test]
fn redundancy_ablation() {
    accept("Redundancy ablation", "redundancy_ablation");
}

#[test]
fn finite_bank_and_margin_bounds() {
    accept("Finite-bank and margin bounds", "finite_bank_bounds");
}

#[test]
fn silent_failure_rate_arithmetic() {
    accept("Silent-failure-rate arithmetic", "coverage_abstention");
}

/// The file-based ingest pipeline on synthetic latent-model activations
/// agrees with the in-memory pipeline to 1e-10.
#[test]
fn ingest_file_path_equals_in_memory() {
    let mut worst: f64 = 0.0;
    let mut concepts_checked = 0usize;
    for (k, seed) in [(0usize, 42u64), (56, 137)] {
        let data = gen_latent_transfer(
            &LatentTransferParams {
                k_nuisance: k,
                ..Default::default()
            },
            seed,
        )
        .unwrap();
        let mut dirs: Vec<(String, DVector<f64>)> = (0..data.primitives.nrows())
            .map(|i| (format!("bank-{i}"), data.primitives.row(i).transpose()))
            .collect();
        dirs.extend(
            (0..data.heldout_in_span.nrows())
                .map(|i| (format!("heldout-{i}"), data.heldout_in_span.row(i).transpose())),
        );
        dirs.push(("out-of-span".into(), data.out_of_span.clone()));
        let bank: Vec<String> = (0..data.primitives.nrows()).map(|i| format!("bank-{i}")).collect();
        let mut concepts: Vec<ConceptInput> = dirs
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
        concepts.sort_by(|a, b| a.name.cmp(&b.name));
        let inputs = IngestInputs {
            concepts,
            paired_source: data.source_train.clone(),
            paired_target: data.target_train.clone(),
        };
        let cfg = IngestConfig {
            bank,
            seed,
            evaluation_disjoint: true,
            ..Default::default()
        };

        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for sub in ["source", "paired", "target"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        let write = probequot::activation::write_activations;
        write(root.join("paired/source.apqt"), &inputs.paired_source, None).unwrap();
        write(root.join("paired/target.apqt"), &inputs.paired_target, None).unwrap();
        for c in &inputs.concepts {
            let lab = |l: &[bool]| l.iter().map(|v| u8::from(*v)).collect::<Vec<u8>>();
            write(
                root.join(format!("source/{}.apqt", c.name)),
                &c.source,
                Some(&lab(&c.source_labels)),
            )
            .unwrap();
            write(
                root.join(format!("target/{}.apqt", c.name)),
                &c.target,
                Some(&lab(&c.target_labels)),
            )
            .unwrap();
        }

        let mem = ingest_bank_and_transfer(&inputs, &cfg).unwrap();
        let file = ingest_from_dirs(&root.join("source"), &root.join("paired"), &root.join("target"), &cfg).unwrap();
        assert_eq!(mem.scores.len(), file.scores.len());
        for (a, b) in mem.scores.iter().zip(&file.scores) {
            assert_eq!(a.concept, b.concept);
            worst = worst.max((&a.quotient - &b.quotient).amax());
            worst = worst.max((&a.fullstate - &b.fullstate).amax());
            concepts_checked += 1;
        }
    }
    let passed = worst <= 1e-10;
    verdict(
        "Ingest file path equals in-memory pipeline",
        passed,
        &format!("max score difference {worst:.3e} over {concepts_checked} concept runs (≤ 1e-10)"),
    );
    assert!(passed);
}
