//! Manifest ingestion, PAS label mapping and patient-level splits.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use crate::features::Gender;
use crate::rng::SplitMix64;
use crate::segmentation::SegmentationParams;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("manifest is missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: invalid {field} {value:?}")]
    InvalidField {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("row {row}: PAS {pas} outside 1-8")]
    InvalidPas { row: usize, pas: i64 },
    #[error("patient {patient_id}: inconsistent {field} across rows")]
    InconsistentPatient {
        patient_id: String,
        field: &'static str,
    },
    #[error("row {row}: segmentation overrides need all of top_db, gap_time, min_amplitude, max_amplitude")]
    PartialOverride { row: usize },
    #[error("class {class} has {count} patient(s); at least 2 are needed")]
    ClassTooSmall { class: usize, count: usize },
    #[error("invalid split configuration: {0}")]
    InvalidSplitConfig(String),
    #[error("split plan does not match the cohort: {0}")]
    PlanMismatch(String),
}

/// How PAS scores map onto classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// PAS 1-2 normal (0), 3-8 abnormal (1).
    Abnormality,
    /// PAS 1-2 normal (0), 3-5 penetration (1), 6-8 aspiration (2).
    Severity,
}

impl LabelScheme {
    pub fn n_classes(self) -> usize {
        match self {
            LabelScheme::Abnormality => 2,
            LabelScheme::Severity => 3,
        }
    }

    /// Class index for a PAS score; `None` outside 1-8.
    pub fn label(self, pas: u8) -> Option<usize> {
        match (self, pas) {
            (_, 1..=2) => Some(0),
            (LabelScheme::Abnormality, 3..=8) => Some(1),
            (LabelScheme::Severity, 3..=5) => Some(1),
            (LabelScheme::Severity, 6..=8) => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub wav_path: PathBuf,
    pub params: Option<SegmentationParams>,
    pub annotation_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: f64,
    pub gender: Gender,
    pub pas: u8,
    pub recordings: Vec<Recording>,
}

const REQUIRED: [&str; 5] = ["patient_id", "age", "gender", "pas", "wav_path"];
const OVERRIDES: [&str; 4] = ["top_db", "gap_time", "min_amplitude", "max_amplitude"];

/// Loads a manifest CSV with header
/// `patient_id,age,gender,pas,wav_path[,annotation_path]`, plus optional
/// per-recording segmentation overrides `top_db,gap_time,min_amplitude,max_amplitude`.
///
/// Relative paths resolve against the manifest's directory. Rows sharing a
/// patient id are grouped in first-appearance order.
pub fn load_manifest(path: &Path) -> Result<Vec<PatientRecord>, DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.display().to_string(),
        source,
    };
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    let col: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    for name in REQUIRED {
        if !col.contains_key(name) {
            return Err(DatasetError::MissingColumn(name.into()));
        }
    }

    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    let mut patients: Vec<PatientRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(csv_err)?;
        let get = |name: &str| col.get(name).and_then(|&c| record.get(c)).unwrap_or("");
        let invalid = |field: &'static str, value: &str| DatasetError::InvalidField {
            row,
            field,
            value: value.to_string(),
        };

        let patient_id = get("patient_id").to_string();
        if patient_id.is_empty() {
            return Err(invalid("patient_id", ""));
        }
        let age: f64 = get("age")
            .parse()
            .ok()
            .filter(|a: &f64| *a > 0.0 && a.is_finite())
            .ok_or_else(|| invalid("age", get("age")))?;
        let gender: Gender = get("gender")
            .parse()
            .map_err(|_| invalid("gender", get("gender")))?;
        let pas: i64 = get("pas").parse().map_err(|_| invalid("pas", get("pas")))?;
        if !(1..=8).contains(&pas) {
            return Err(DatasetError::InvalidPas { row, pas });
        }
        let wav = get("wav_path");
        if wav.is_empty() {
            return Err(invalid("wav_path", wav));
        }
        let annotation = get("annotation_path");

        let override_cells: Vec<&str> = OVERRIDES.iter().map(|n| get(n)).collect();
        let params = if override_cells.iter().all(|c| c.is_empty()) {
            None
        } else if override_cells.iter().any(|c| c.is_empty()) {
            return Err(DatasetError::PartialOverride { row });
        } else {
            let v = override_cells
                .iter()
                .zip(OVERRIDES)
                .map(|(c, name)| c.parse::<f64>().map_err(|_| invalid(name, c)))
                .collect::<Result<Vec<_>, _>>()?;
            Some(
                SegmentationParams::new(v[0], v[1], v[2], v[3])
                    .map_err(|_| invalid("segmentation override", &override_cells.join(",")))?,
            )
        };

        let recording = Recording {
            wav_path: resolve(wav),
            params,
            annotation_path: (!annotation.is_empty()).then(|| resolve(annotation)),
        };
        match index.get(&patient_id) {
            Some(&p) => {
                let existing = &mut patients[p];
                let field = if existing.age != age {
                    Some("age")
                } else if existing.gender != gender {
                    Some("gender")
                } else if existing.pas as i64 != pas {
                    Some("pas")
                } else {
                    None
                };
                if let Some(field) = field {
                    return Err(DatasetError::InconsistentPatient { patient_id, field });
                }
                existing.recordings.push(recording);
            }
            None => {
                index.insert(patient_id.clone(), patients.len());
                patients.push(PatientRecord {
                    patient_id,
                    age,
                    gender,
                    pas: pas as u8,
                    recordings: vec![recording],
                });
            }
        }
    }
    Ok(patients)
}

/// Total swallow segments across a patient's recordings.
pub fn swallow_count(segments_per_recording: &[usize]) -> usize {
    segments_per_recording.iter().sum()
}

/// What the splitter needs to know about a patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientUnit {
    pub patient_id: String,
    pub class: usize,
    pub swallow_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_splits: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_splits: 5,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_splits: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    /// Patient ids found on both sides of any split, as `(split, id)`.
    pub fn leaked_patients(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for (i, split) in self.splits.iter().enumerate() {
            let train: BTreeSet<&String> = split.train.iter().collect();
            for id in &split.test {
                if train.contains(id) {
                    out.push((i, id.clone()));
                }
            }
        }
        out
    }

    /// Panics if any patient sits on both sides of a split.
    ///
    /// Leakage invalidates every downstream metric, so it is treated as a
    /// broken invariant rather than a recoverable error.
    pub fn assert_no_leakage(&self) {
        let leaked = self.leaked_patients();
        assert!(
            leaked.is_empty(),
            "patient leakage between train and test: {leaked:?}"
        );
    }

    /// Checks that every split covers exactly the cohort's patients once per
    /// side. Leakage is reported separately by [`Self::assert_no_leakage`].
    pub fn check_coverage(&self, patient_ids: &[String]) -> Result<(), DatasetError> {
        let cohort: BTreeSet<&String> = patient_ids.iter().collect();
        for (i, split) in self.splits.iter().enumerate() {
            for id in split.train.iter().chain(&split.test) {
                if !cohort.contains(id) {
                    return Err(DatasetError::PlanMismatch(format!(
                        "split {i} names unknown patient {id:?}"
                    )));
                }
            }
            let seen: BTreeSet<&String> = split.train.iter().chain(&split.test).collect();
            if let Some(missing) = cohort.iter().find(|id| !seen.contains(*id)) {
                return Err(DatasetError::PlanMismatch(format!(
                    "split {i} omits patient {missing:?}"
                )));
            }
            if split.test.is_empty() || split.train.is_empty() {
                return Err(DatasetError::PlanMismatch(format!(
                    "split {i} has an empty side"
                )));
            }
        }
        Ok(())
    }
}

/// Allowed relative deviation of a class's test swallow share from the
/// target test fraction before another allocation is tried.
const SWALLOW_SHARE_TOLERANCE: f64 = 0.10;
const ALLOCATION_ATTEMPTS: usize = 64;

/// Draws `n_splits` independent stratified patient-level train/test splits.
///
/// Within each class, patients are ordered by swallow count (then id) and a
/// seeded shuffle picks `max(1, round(test_fraction * n))` of them for test,
/// keeping at least one for training. Up to 64 shuffles are tried per class,
/// keeping the first whose test share of swallows is within 10% of
/// `test_fraction`, or else the closest one.
pub fn make_splits(units: &[PatientUnit], cfg: &SplitConfig) -> Result<SplitPlan, DatasetError> {
    if cfg.n_splits == 0 {
        return Err(DatasetError::InvalidSplitConfig(
            "n_splits must be >= 1".into(),
        ));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(DatasetError::InvalidSplitConfig(format!(
            "test_fraction must be in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    let mut ids = BTreeSet::new();
    for u in units {
        if !ids.insert(&u.patient_id) {
            return Err(DatasetError::InvalidSplitConfig(format!(
                "duplicate patient id {:?}",
                u.patient_id
            )));
        }
    }

    let mut by_class: BTreeMap<usize, Vec<&PatientUnit>> = BTreeMap::new();
    for u in units {
        by_class.entry(u.class).or_default().push(u);
    }
    for (&class, members) in &by_class {
        if members.len() < 2 {
            return Err(DatasetError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
    }
    for members in by_class.values_mut() {
        members.sort_by(|a, b| {
            a.swallow_count
                .cmp(&b.swallow_count)
                .then_with(|| a.patient_id.cmp(&b.patient_id))
        });
    }

    let mut splits = Vec::with_capacity(cfg.n_splits);
    for s in 0..cfg.n_splits {
        let mut rng = SplitMix64::derive(cfg.seed, s as u64);
        let mut test_ids = BTreeSet::new();
        for members in by_class.values() {
            let n = members.len();
            let n_test = ((cfg.test_fraction * n as f64).round() as usize).clamp(1, n - 1);
            let total: usize = members.iter().map(|m| m.swallow_count).sum();

            let mut best: Option<(f64, Vec<usize>)> = None;
            for _ in 0..ALLOCATION_ATTEMPTS {
                let mut order: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut order);
                order.truncate(n_test);
                let share = if total == 0 {
                    cfg.test_fraction
                } else {
                    order
                        .iter()
                        .map(|&i| members[i].swallow_count)
                        .sum::<usize>() as f64
                        / total as f64
                };
                let deviation = (share / cfg.test_fraction - 1.0).abs();
                if best.as_ref().is_none_or(|(d, _)| deviation < *d) {
                    best = Some((deviation, order));
                }
                if deviation <= SWALLOW_SHARE_TOLERANCE {
                    break;
                }
            }
            let (_, chosen) = best.expect("at least one attempt");
            test_ids.extend(chosen.into_iter().map(|i| members[i].patient_id.clone()));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for u in units {
            if test_ids.contains(&u.patient_id) {
                test.push(u.patient_id.clone());
            } else {
                train.push(u.patient_id.clone());
            }
        }
        splits.push(Split { train, test });
    }
    Ok(SplitPlan {
        n_splits: cfg.n_splits,
        test_fraction: cfg.test_fraction,
        seed: cfg.seed,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn manifest(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::File::create(&path)
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
        (dir, path)
    }

    fn units(per_class: &[usize]) -> Vec<PatientUnit> {
        let mut out = Vec::new();
        for (class, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                out.push(PatientUnit {
                    patient_id: format!("c{class}p{i}"),
                    class,
                    swallow_count: 10 + (i * 3) % 7,
                });
            }
        }
        out
    }

    #[test]
    fn label_mapping_is_total_and_surjective() {
        for scheme in [LabelScheme::Abnormality, LabelScheme::Severity] {
            let labels: BTreeSet<usize> = (1..=8).map(|p| scheme.label(p).unwrap()).collect();
            assert_eq!(labels.len(), scheme.n_classes());
            assert_eq!(scheme.label(0), None);
            assert_eq!(scheme.label(9), None);
        }
        assert_eq!(LabelScheme::Abnormality.label(2), Some(0));
        assert_eq!(LabelScheme::Abnormality.label(3), Some(1));
        assert_eq!(LabelScheme::Severity.label(5), Some(1));
        assert_eq!(LabelScheme::Severity.label(6), Some(2));
    }

    #[test]
    fn rows_group_by_patient() {
        let (_d, p) = manifest(
            "patient_id,age,gender,pas,wav_path,annotation_path\n\
             P1,60,female,2,a.wav,a.json\nP1,60,female,2,b.wav,\nP2,70,male,5,c.wav,\n",
        );
        let recs = load_manifest(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].recordings.len(), 2);
        assert!(recs[0].recordings[0].annotation_path.is_some());
        assert!(recs[0].recordings[1].annotation_path.is_none());
        assert_eq!(
            recs[0].recordings[0].wav_path,
            p.parent().unwrap().join("a.wav")
        );
        assert_eq!(recs[1].gender, Gender::Male);
    }

    #[test]
    fn manifest_errors() {
        let (_d, p) = manifest("patient_id,age,gender,pas,wav_path\nP1,60,f,9,a.wav\n");
        assert!(matches!(
            load_manifest(&p),
            Err(DatasetError::InvalidPas { pas: 9, .. })
        ));
        let (_d, p) =
            manifest("patient_id,age,gender,pas,wav_path\nP1,60,f,2,a.wav\nP1,61,f,2,b.wav\n");
        assert!(matches!(
            load_manifest(&p),
            Err(DatasetError::InconsistentPatient { field: "age", .. })
        ));
        let (_d, p) = manifest("patient_id,age,gender,wav_path\nP1,60,f,a.wav\n");
        assert!(matches!(load_manifest(&p), Err(DatasetError::MissingColumn(c)) if c == "pas"));
        let (_d, p) = manifest("patient_id,age,gender,pas,wav_path\nP1,60,x,2,a.wav\n");
        assert!(matches!(
            load_manifest(&p),
            Err(DatasetError::InvalidField {
                field: "gender",
                ..
            })
        ));
    }

    #[test]
    fn per_recording_overrides() {
        let (_d, p) = manifest(
            "patient_id,age,gender,pas,wav_path,top_db,gap_time,min_amplitude,max_amplitude\n\
             P1,60,f,2,a.wav,30,0.2,0.01,1\nP1,60,f,2,b.wav,,,,\n",
        );
        let recs = load_manifest(&p).unwrap();
        let params = recs[0].recordings[0].params.unwrap();
        assert_eq!(params.top_db, 30.0);
        assert!(recs[0].recordings[1].params.is_none());
        let (_d, p) = manifest(
            "patient_id,age,gender,pas,wav_path,top_db,gap_time,min_amplitude,max_amplitude\n\
             P1,60,f,2,a.wav,30,,0.01,1\n",
        );
        assert!(matches!(
            load_manifest(&p),
            Err(DatasetError::PartialOverride { .. })
        ));
    }

    #[test]
    fn swallow_counts_add_up() {
        assert_eq!(swallow_count(&[3, 4]), 7);
        assert_eq!(swallow_count(&[]), 0);
    }

    #[test]
    fn one_test_patient_per_class_for_ten_patients() {
        let u = units(&[5, 5]);
        let plan = make_splits(
            &u,
            &SplitConfig {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(plan.splits.len(), 5);
        for split in &plan.splits {
            assert_eq!(split.test.len(), 2);
            assert_eq!(
                split.test.iter().filter(|id| id.starts_with("c0")).count(),
                1
            );
            assert_eq!(split.train.len(), 8);
        }
        plan.assert_no_leakage();
    }

    #[test]
    fn splits_are_deterministic() {
        let u = units(&[6, 7, 4]);
        let cfg = SplitConfig {
            n_splits: 5,
            test_fraction: 0.3,
            seed: 11,
        };
        assert_eq!(
            make_splits(&u, &cfg).unwrap(),
            make_splits(&u, &cfg).unwrap()
        );
        let other = make_splits(&u, &SplitConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(make_splits(&u, &cfg).unwrap(), other);
    }

    #[test]
    fn small_class_is_rejected() {
        let u = units(&[5, 1]);
        assert!(matches!(
            make_splits(&u, &SplitConfig::default()),
            Err(DatasetError::ClassTooSmall { class: 1, count: 1 })
        ));
    }

    #[test]
    #[should_panic(expected = "patient leakage")]
    fn corrupted_plan_panics() {
        let mut plan = make_splits(&units(&[4, 4]), &SplitConfig::default()).unwrap();
        let moved = plan.splits[2].test[0].clone();
        plan.splits[2].train.push(moved);
        plan.assert_no_leakage();
    }

    #[test]
    fn coverage_check() {
        let u = units(&[3, 3]);
        let ids: Vec<String> = u.iter().map(|u| u.patient_id.clone()).collect();
        let mut plan = make_splits(&u, &SplitConfig::default()).unwrap();
        plan.check_coverage(&ids).unwrap();
        plan.splits[0].train.pop();
        assert!(plan.check_coverage(&ids).is_err());
    }
}
