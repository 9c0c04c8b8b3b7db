use proptest::prelude::*;
use swallowsense::pipeline::score_against;
use swallowsense::rng::SplitMix64;
use swallowsense::segmentation::{
    detect_segments, grid_search_params, merge_close, non_silent_intervals, peak_amplitude,
    score_segmentation, segments_to_mask, sliding_windows_for_duration, ParamGrid, Segment,
    SegmentationParams,
};
use swallowsense::AudioClip;

const SR: u32 = 16_000;

/// Low noise floor with noise bursts of the given (start_s, end_s, amplitude).
fn clip(duration: f64, bursts: &[(f64, f64, f64)], seed: u64) -> AudioClip {
    let mut rng = SplitMix64::new(seed);
    let n = (duration * SR as f64) as usize;
    let mut x: Vec<f64> = (0..n).map(|_| 1e-4 * rng.uniform(-1.0, 1.0)).collect();
    for &(a, b, amp) in bursts {
        let (a, b) = ((a * SR as f64) as usize, (b * SR as f64) as usize);
        for v in &mut x[a..b] {
            *v = amp * rng.uniform(-1.0, 1.0);
        }
    }
    AudioClip::from_unclamped(x, SR, "synthetic").unwrap()
}

fn seg(a: f64, b: f64) -> Segment {
    Segment::new(a, b).unwrap()
}

#[test]
fn single_burst_is_recovered() {
    let c = clip(3.0, &[(1.0, 1.5, 0.8)], 1);
    let found = detect_segments(&c, &SegmentationParams::default()).unwrap();
    assert_eq!(found.len(), 1);
    let score = score_against(&found, &[seg(1.0, 1.5)], c.duration_s()).unwrap();
    assert!(score.iou >= 0.8, "{score:?}");
    assert!(found[0].start_s <= 1.0 && found[0].end_s >= 1.5);
}

#[test]
fn close_bursts_merge_and_quiet_bursts_are_gated() {
    let c = clip(4.0, &[(1.0, 1.5, 0.5), (1.8, 2.3, 0.5)], 2);
    assert_eq!(
        detect_segments(&c, &SegmentationParams::default())
            .unwrap()
            .len(),
        1
    );

    let c = clip(3.0, &[(1.0, 1.5, 0.05)], 3);
    let gated = SegmentationParams::new(20.0, 0.6, 0.1, 2.0).unwrap();
    assert!(detect_segments(&c, &gated).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn detection_output_is_ordered_and_gated(
        seed in any::<u64>(),
        amps in prop::collection::vec(0.01f64..0.9, 1..4),
        min_amp in 0.0f64..0.5,
        top_db in 5.0f64..60.0,
        gap in 0.0f64..1.0,
    ) {
        let bursts: Vec<(f64, f64, f64)> = amps.iter().enumerate()
            .map(|(i, &a)| (0.5 + i as f64 * 1.2, 0.9 + i as f64 * 1.2, a)).collect();
        let c = clip(1.0 + amps.len() as f64 * 1.2, &bursts, seed);
        let params = SegmentationParams::new(top_db, gap, min_amp, 2.0).unwrap();
        let segs = detect_segments(&c, &params).unwrap();
        for w in segs.windows(2) {
            prop_assert!(w[0].end_s <= w[1].start_s);
        }
        for s in &segs {
            let p = peak_amplitude(&c, s);
            prop_assert!(p >= min_amp && p <= 2.0);
        }
    }

    #[test]
    fn raising_top_db_never_shrinks_detection(seed in any::<u64>(), lo in 1.0f64..60.0, extra in 0.0f64..40.0) {
        let c = clip(3.0, &[(0.4, 0.9, 0.6), (1.6, 2.0, 0.05)], seed);
        let total = |db: f64| non_silent_intervals(&c, db).unwrap().iter().map(|s| s.duration_s()).sum::<f64>();
        prop_assert!(total(lo + extra) >= total(lo) - 1e-12);
    }

    #[test]
    fn merging_is_idempotent(starts in prop::collection::vec(0.0f64..10.0, 0..12), gap in 0.0f64..1.0) {
        let mut s = starts.clone();
        s.sort_by(f64::total_cmp);
        let segs: Vec<Segment> = s.iter().map(|&a| seg(a, a + 0.3)).collect();
        let once = merge_close(&segs, gap);
        prop_assert_eq!(merge_close(&once, gap), once);
    }

    #[test]
    fn sliding_windows_cover_the_clip(duration in 0.05f64..20.0) {
        let w = sliding_windows_for_duration(duration, 1.0, 0.5).unwrap();
        prop_assert_eq!(w[0].start_s, 0.0);
        prop_assert!((w.last().unwrap().end_s - duration).abs() < 1e-9);
        for pair in w.windows(2) {
            prop_assert!(pair[1].start_s <= pair[0].end_s + 1e-12);
        }
        if duration >= 1.5 {
            prop_assert!((w[0].end_s - w[1].start_s - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_symmetry_and_complement(a in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let b: Vec<bool> = a.iter().map(|_| rng.next_f64() < 0.5).collect();
        let ab = score_segmentation(&a, &b).unwrap();
        let ba = score_segmentation(&b, &a).unwrap();
        prop_assert_eq!(ab.iou, ba.iou);
        let na: Vec<bool> = a.iter().map(|v| !v).collect();
        let nb: Vec<bool> = b.iter().map(|v| !v).collect();
        let comp = score_segmentation(&na, &nb).unwrap();
        prop_assert_eq!(ab.sensitivity, comp.specificity);
        prop_assert_eq!(ab.specificity, comp.sensitivity);
    }
}

#[test]
fn sliding_window_examples() {
    let starts = |d: f64| {
        sliding_windows_for_duration(d, 1.0, 0.5)
            .unwrap()
            .iter()
            .map(|s| s.start_s)
            .collect::<Vec<_>>()
    };
    assert_eq!(starts(3.0), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    assert_eq!(starts(3.25), vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.25]);
    assert_eq!(
        sliding_windows_for_duration(0.6, 1.0, 0.5).unwrap(),
        vec![seg(0.0, 0.6)]
    );
    assert!(sliding_windows_for_duration(3.0, 1.0, 1.0).is_err());
}

#[test]
fn mask_and_score_examples() {
    assert!(segments_to_mask(&[], 3.0, 10).unwrap().iter().all(|&v| !v));
    assert!(segments_to_mask(&[seg(0.0, 3.0)], 3.0, 10)
        .unwrap()
        .iter()
        .all(|&v| v));
    let m = segments_to_mask(&[seg(1.0, 2.0)], 3.0, 10).unwrap();
    assert_eq!(m.iter().positions(), (10..20).collect::<Vec<_>>());
    assert!(segments_to_mask(&[seg(1.0, 4.0)], 3.0, 10).is_err());

    let cells = |a: usize, b: usize| (0..20).map(|i| i >= a && i < b).collect::<Vec<_>>();
    let s = score_segmentation(&cells(0, 10), &cells(5, 15)).unwrap();
    assert!((s.iou - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!((s.sensitivity, s.specificity), (0.5, 0.5));
    assert_eq!(
        score_segmentation(&cells(0, 5), &cells(10, 15))
            .unwrap()
            .iou,
        0.0
    );
    let same = score_segmentation(&cells(3, 9), &cells(3, 9)).unwrap();
    assert_eq!(
        (same.iou, same.sensitivity, same.specificity),
        (1.0, 1.0, 1.0)
    );
    assert!(score_segmentation(&cells(0, 1), &[true]).is_err());
}

trait Positions {
    fn positions(self) -> Vec<usize>;
}

impl<'a, I: Iterator<Item = &'a bool>> Positions for I {
    fn positions(self) -> Vec<usize> {
        self.enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| i)
            .collect()
    }
}

#[test]
fn grid_search_finds_the_constructed_optimum() {
    // bursts 0.4 s apart: only gap_time above 0.4 merges them into the truth
    let truth = [seg(1.0, 2.4)];
    let clips: Vec<(AudioClip, Vec<bool>)> = (0..3)
        .map(|i| {
            let c = clip(4.0, &[(1.0, 1.5, 0.6), (1.9, 2.4, 0.6)], 100 + i);
            let mask = segments_to_mask(&truth, c.duration_s(), 100).unwrap();
            (c, mask)
        })
        .collect();
    let grid = ParamGrid {
        top_db: vec![20.0],
        gap_time: vec![0.1, 0.6],
        min_amplitude: vec![0.0],
        max_amplitude: vec![0.5, 2.0],
    };
    let result = grid_search_params(&clips, &grid, 100).unwrap();
    assert_eq!(result.table.len(), 4);
    assert_eq!(
        result.best.params,
        SegmentationParams::new(20.0, 0.6, 0.0, 2.0).unwrap()
    );

    let single = grid_search_params(
        &clips,
        &ParamGrid::single(SegmentationParams::default()),
        100,
    )
    .unwrap();
    assert_eq!(single.table.len(), 1);
    assert_eq!(single.best, single.table[0]);

    let empty = ParamGrid {
        top_db: vec![],
        ..grid
    };
    assert!(grid_search_params(&clips, &empty, 100).is_err());
}
