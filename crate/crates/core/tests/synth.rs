use std::collections::BTreeMap;
use std::path::Path;

use swallowsense::audio_io::read_wav_file;
use swallowsense::pipeline::score_against;
use swallowsense::segmentation::{detect_segments, SegmentationParams};
use swallowsense::synth::{generate_cohort, write_cohort, SynthConfig};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n_patients: 6,
        swallows_per_patient: (3, 6),
        seed,
        ..Default::default()
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_writes_identical_trees() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    write_cohort(&generate_cohort(&small(11)).unwrap(), a.path()).unwrap();
    write_cohort(&generate_cohort(&small(11)).unwrap(), b.path()).unwrap();
    write_cohort(&generate_cohort(&small(12)).unwrap(), c.path()).unwrap();
    let sa = snapshot(a.path());
    assert!(sa.contains_key("manifest.csv"));
    assert_eq!(sa, snapshot(b.path()));
    assert_ne!(sa, snapshot(c.path()));
}

#[test]
fn written_audio_matches_generated_audio() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate_cohort(&small(3)).unwrap();
    write_cohort(&cohort, dir.path()).unwrap();
    for p in &cohort.patients {
        for r in &p.recordings {
            let back = read_wav_file(&dir.path().join(format!("wav/{}.wav", r.name))).unwrap();
            assert_eq!(back.len(), r.clip.len());
            for (a, b) in r.clip.samples().iter().zip(back.samples()) {
                assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}

#[test]
fn class_amplitudes_are_disjoint_and_bursts_sit_inside_annotations() {
    let cohort = generate_cohort(&SynthConfig::default()).unwrap();
    let (mut normal_min, mut abnormal_max) = (f64::INFINITY, 0.0f64);
    for p in &cohort.patients {
        assert_eq!(p.abnormal, p.pas >= 3);
        for r in &p.recordings {
            let sr = r.clip.sample_rate() as f64;
            let x = r.clip.samples();
            let mut inside = vec![false; x.len()];
            for s in &r.annotation.segments {
                let (a, b) = (
                    (s.start_s * sr) as usize,
                    ((s.end_s * sr) as usize).min(x.len()),
                );
                inside[a..b].iter_mut().for_each(|v| *v = true);
                let avg = x[a..b].iter().map(|v| v.abs()).sum::<f64>() / (b - a) as f64;
                if p.abnormal {
                    abnormal_max = abnormal_max.max(avg);
                } else {
                    normal_min = normal_min.min(avg);
                }
            }
            // outside the annotations only the noise floor remains
            let outside_peak = x
                .iter()
                .zip(&inside)
                .filter(|(_, &i)| !i)
                .map(|(v, _)| v.abs())
                .fold(0.0, f64::max);
            assert!(outside_peak < 0.01, "{} {outside_peak}", r.name);
        }
    }
    assert!(abnormal_max < normal_min, "{abnormal_max} vs {normal_min}");
}

#[test]
fn abnormal_fraction_zero_gives_only_normal_scores() {
    let cohort = generate_cohort(&SynthConfig {
        abnormal_fraction: 0.0,
        ..small(5)
    })
    .unwrap();
    assert!(cohort.patients.iter().all(|p| (1..=2).contains(&p.pas)));
}

#[test]
fn default_cohort_segmentation_recovery() {
    let cohort = generate_cohort(&SynthConfig::default()).unwrap();
    let params = SegmentationParams::default();
    let mut sums = [0.0; 3];
    let mut n = 0.0;
    for p in &cohort.patients {
        for r in &p.recordings {
            let segs = detect_segments(&r.clip, &params).unwrap();
            let s = score_against(&segs, &r.annotation.segments, r.clip.duration_s()).unwrap();
            sums[0] += s.iou;
            sums[1] += s.sensitivity;
            sums[2] += s.specificity;
            n += 1.0;
        }
    }
    let [iou, sens, spec] = sums.map(|v| v / n);
    assert!(
        iou >= 0.8 && sens >= 0.9 && spec >= 0.9,
        "iou {iou} sens {sens} spec {spec}"
    );
}
