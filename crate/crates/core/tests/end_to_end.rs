use swallowsense::dataset::{load_manifest, make_splits, PatientRecord, PatientUnit, SplitConfig};
use swallowsense::model::{Aggregation, ForestConfig};
use swallowsense::pipeline::{evaluate, EvalConfig, EvalReport, SegMode};
use swallowsense::synth::{generate_cohort, write_cohort, Range, Separability, SynthConfig};

fn cohort_on_disk(cfg: &SynthConfig) -> (tempfile::TempDir, Vec<PatientRecord>) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_cohort(&generate_cohort(cfg).unwrap(), dir.path()).unwrap();
    let patients = load_manifest(&manifest).unwrap();
    (dir, patients)
}

fn config(mode: SegMode, n_splits: usize, seed: u64) -> EvalConfig {
    let mut cfg = EvalConfig::default();
    cfg.segmentation.mode = mode;
    cfg.splits = SplitConfig {
        n_splits,
        test_fraction: 0.2,
        seed,
    };
    cfg.forest = ForestConfig {
        n_trees: 40,
        seed,
        ..Default::default()
    };
    cfg
}

#[test]
fn auc_grows_as_classes_separate() {
    let mut aucs = Vec::new();
    // abnormal bursts at 100%, 85% and 60% of the normal amplitude
    for scale in [1.0, 0.85, 0.6] {
        let mut synth = SynthConfig {
            n_patients: 30,
            swallows_per_patient: (6, 8),
            separability: Separability::Overlapping,
            seed: 21,
            ..Default::default()
        };
        let normal = synth.normal.amplitude;
        synth.abnormal.amplitude = Range::new(normal.lo * scale, normal.hi * scale);
        synth.abnormal.frequency_hz = synth.normal.frequency_hz;
        let (_d, patients) = cohort_on_disk(&synth);
        let report = evaluate(&patients, &config(SegMode::Human, 5, 3), None).unwrap();
        aucs.push(report.summary.patient[&Aggregation::Mean].auc_roc.mean);
    }
    assert!(aucs[0] <= aucs[1] && aucs[1] <= aucs[2], "{aucs:?}");
    assert!(aucs[2] - aucs[0] > 0.2, "{aucs:?}");
}

#[test]
fn evaluation_is_deterministic_and_structured() {
    let synth = SynthConfig {
        n_patients: 12,
        swallows_per_patient: (4, 6),
        seed: 8,
        ..Default::default()
    };
    let (_d, patients) = cohort_on_disk(&synth);
    let cfg = config(SegMode::Fixed, 3, 5);
    let a = evaluate(&patients, &cfg, None).unwrap();
    let b = evaluate(&patients, &cfg, None).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let mut serial = cfg.clone();
    serial.forest.parallel = false;
    assert_eq!(
        a.to_json(),
        evaluate(&patients, &serial, None).unwrap().to_json()
    );

    assert_eq!(a.splits.len(), 3);
    assert_eq!(a.summary.patient.len(), 3);
    assert!(a.summary.swallow.is_none());
    assert_eq!(a.feature_columns.len(), 13);
    assert_eq!(EvalReport::from_json(&a.to_json()).unwrap(), a);
    for s in &a.splits {
        let outcome_ids: Vec<&String> = s.test_patients.iter().map(|o| &o.patient_id).collect();
        assert_eq!(
            outcome_ids,
            a.plan.splits[s.index].test.iter().collect::<Vec<_>>()
        );
    }

    let human = evaluate(&patients, &config(SegMode::Human, 2, 5), None).unwrap();
    assert!(human.summary.swallow.is_some());
}

#[test]
#[should_panic(expected = "patient leakage")]
fn leaking_plan_aborts_evaluation() {
    let synth = SynthConfig {
        n_patients: 10,
        swallows_per_patient: (3, 4),
        seed: 2,
        ..Default::default()
    };
    let (_d, patients) = cohort_on_disk(&synth);
    let units: Vec<PatientUnit> = patients
        .iter()
        .map(|p| PatientUnit {
            patient_id: p.patient_id.clone(),
            class: usize::from(p.pas >= 3),
            swallow_count: 1,
        })
        .collect();
    let mut plan = make_splits(
        &units,
        &SplitConfig {
            n_splits: 2,
            test_fraction: 0.2,
            seed: 0,
        },
    )
    .unwrap();
    let leaked = plan.splits[0].test[0].clone();
    plan.splits[0].train.push(leaked);
    let _ = evaluate(&patients, &config(SegMode::Human, 2, 0), Some(plan));
}
