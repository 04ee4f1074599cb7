use pepr_core::events::*;
use proptest::prelude::*;

fn cfg_with_eps(eps: f64) -> SimulatorConfig {
    SimulatorConfig {
        log_eps: eps,
        ..Default::default()
    }
}

fn frames_1px(values: &[f64]) -> Vec<LuminanceFrame> {
    values
        .iter()
        .map(|v| LuminanceFrame::new(Resolution::new(1, 1), vec![*v]).unwrap())
        .collect()
}

#[test]
fn identical_frames_emit_nothing() {
    let f = LuminanceFrame::filled(Resolution::new(4, 4), 0.3);
    let s = simulate_events(&[f.clone(), f], &[0.0, 1.0], &SimulatorConfig::default()).unwrap();
    assert!(s.is_empty());
}

#[test]
fn log_linear_ramp_crosses_twice() {
    let cfg = SimulatorConfig::default();
    let c = cfg.contrast_threshold;
    let l0 = (0.1f64 + cfg.log_eps).ln();
    let ts: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
    let lum: Vec<f64> = ts.iter().map(|t| (l0 + 2.5 * c * t).exp() - cfg.log_eps).collect();
    let s = simulate_events(&frames_1px(&lum), &ts, &cfg).unwrap();
    let times: Vec<f64> = s.records().iter().map(|r| r.t).collect();
    assert_eq!(times.len(), 2);
    assert!((times[0] - 0.4).abs() < 1e-9 && (times[1] - 0.8).abs() < 1e-9, "{times:?}");
    assert!(s.records().iter().all(|r| r.polarity == Polarity::Positive));
}

#[test]
fn fall_by_exactly_one_threshold() {
    let cfg = SimulatorConfig::default();
    let i0 = 0.5;
    let i1 = ((i0 + cfg.log_eps).ln() - cfg.contrast_threshold).exp() - cfg.log_eps;
    let s = simulate_events(&frames_1px(&[i0, i1]), &[0.0, 1.0], &cfg).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.records()[0].polarity, Polarity::Negative);
    assert!((s.records()[0].t - 1.0).abs() < 1e-9);
}

#[test]
fn rejects_bad_inputs() {
    let f = LuminanceFrame::filled(Resolution::new(2, 2), 0.3);
    let g = LuminanceFrame::filled(Resolution::new(2, 3), 0.3);
    let cfg = SimulatorConfig::default();
    assert!(simulate_events(&[f.clone(), g], &[0.0, 1.0], &cfg).is_err());
    assert!(simulate_events(&[f.clone(), f.clone()], &[1.0, 1.0], &cfg).is_err());
    let bad = SimulatorConfig {
        contrast_threshold: 0.0,
        ..cfg
    };
    assert!(simulate_events(&[f.clone(), f], &[0.0, 1.0], &bad).is_err());
}

#[test]
fn time_surface_examples() {
    let res = Resolution::new(2, 2);
    let empty = EventStream::empty(res, 0.0, 1.0).unwrap();
    let ts = build_time_surface::<f64>(&empty, 1.0, 0.1).unwrap();
    assert!(ts.values.iter().all(|v| *v == 0.0));
    let rec = |t| EventRecord {
        x: 1,
        y: 0,
        t,
        polarity: Polarity::Negative,
    };
    let s = EventStream::new(res, vec![rec(0.4), rec(1.0)], 0.0, 1.0).unwrap();
    assert_eq!(build_time_surface::<f64>(&s, 1.0, 0.1).unwrap().at(0, 1, 1), 1.0);
    let v = build_time_surface::<f64>(&s, 0.5, 0.1).unwrap().at(0, 1, 1);
    assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    assert!(build_time_surface::<f64>(&s, 0.5, 0.0).is_err());
}

#[test]
fn activity_window_is_closed() {
    let res = Resolution::new(2, 2);
    let at = |t, x| EventRecord {
        x,
        y: 1,
        t,
        polarity: Polarity::Positive,
    };
    let s = EventStream::new(res, vec![at(0.1, 0), at(0.2, 0), at(0.3, 0), at(0.3, 1), at(0.5, 0)], 0.0, 1.0).unwrap();
    let a = build_activity_map(&s, 0.1, 0.3).unwrap();
    assert_eq!(a.at(1, 0), 3);
    assert_eq!(a.at(1, 1), 1);
    assert_eq!(a.total(), 4);
    assert!(build_activity_map(&s, 0.5, 0.1).is_err());
}

fn scene() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (1usize..4, 2usize..6).prop_flat_map(|(side, frames)| {
        let n = side * side;
        (
            Just(side),
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), frames),
        )
    })
}

fn build(side: usize, frames: &[Vec<f64>]) -> Vec<LuminanceFrame> {
    frames
        .iter()
        .map(|f| LuminanceFrame::new(Resolution::new(side, side), f.clone()).unwrap())
        .collect()
}

fn stamps(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * 0.01).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn count_invariant_under_intensity_scaling((side, frames) in scene(), k in prop::sample::select(vec![2.0, 10.0])) {
        // log_eps far below every intensity makes thresholding purely log-domain.
        let cfg = cfg_with_eps(1e-6 * 0.01);
        let ts = stamps(frames.len());
        let base = simulate_events(&build(side, &frames), &ts, &cfg).unwrap();
        let scaled: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|v| v * k).collect()).collect();
        let s = simulate_events(&build(side, &scaled), &ts, &cfg).unwrap();
        prop_assert_eq!(base.len(), s.len());
    }

    #[test]
    fn reversed_ramp_flips_polarity(a in 0.01f64..0.5, ratio in 1.5f64..40.0, steps in 2usize..8) {
        let b = (a * ratio).min(1.0);
        let up: Vec<f64> = (0..steps).map(|i| a + (b - a) * i as f64 / (steps - 1) as f64).collect();
        let down: Vec<f64> = up.iter().rev().copied().collect();
        let cfg = SimulatorConfig::default();
        let ts = stamps(steps);
        let su = simulate_events(&frames_1px(&up), &ts, &cfg).unwrap();
        let sd = simulate_events(&frames_1px(&down), &ts, &cfg).unwrap();
        prop_assert_eq!(su.len(), sd.len());
        prop_assert!(su.records().iter().all(|r| r.polarity == Polarity::Positive));
        prop_assert!(sd.records().iter().all(|r| r.polarity == Polarity::Negative));
    }

    #[test]
    fn simulation_is_deterministic((side, frames) in scene()) {
        let ts = stamps(frames.len());
        let cfg = SimulatorConfig::default();
        let a = simulate_events(&build(side, &frames), &ts, &cfg).unwrap();
        let b = simulate_events(&build(side, &frames), &ts, &cfg).unwrap();
        prop_assert_eq!(a.records().len(), b.records().len());
        for (x, y) in a.records().iter().zip(b.records()) {
            prop_assert_eq!(x.t.to_bits(), y.t.to_bits());
            prop_assert_eq!((x.x, x.y, x.polarity), (y.x, y.y, y.polarity));
        }
    }

    #[test]
    fn time_surface_never_grows_without_events((side, frames) in scene(), t1 in 0.0f64..0.1, dt in 0.0f64..0.1) {
        let ts = stamps(frames.len());
        let s = simulate_events(&build(side, &frames), &ts, &SimulatorConfig::default()).unwrap();
        let t_end = s.t_end();
        let t1 = t1.min(t_end);
        let t2 = (t1 + dt).min(t_end);
        // Advance only across a stretch with no new events.
        let quiet = !s.records().iter().any(|r| r.t > t1 && r.t <= t2);
        prop_assume!(quiet);
        let a = build_time_surface::<f64>(&s, t1, 0.02).unwrap();
        let b = build_time_surface::<f64>(&s, t2, 0.02).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(y <= x);
        }
    }

    #[test]
    fn activity_total_matches_window((side, frames) in scene(), t0 in 0.0f64..0.05, len in 0.0f64..0.05) {
        let ts = stamps(frames.len());
        let s = simulate_events(&build(side, &frames), &ts, &SimulatorConfig::default()).unwrap();
        let a = build_activity_map(&s, t0, t0 + len).unwrap();
        let inside = s.records().iter().filter(|r| r.t >= t0 && r.t <= t0 + len).count() as u64;
        prop_assert_eq!(a.total(), inside);
    }

    #[test]
    fn text_and_binary_round_trip((side, frames) in scene()) {
        let ts = stamps(frames.len());
        let s = simulate_events(&build(side, &frames), &ts, &SimulatorConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.bin");
        write_events_binary(&s, &bin).unwrap();
        prop_assert_eq!(read_events_binary(&bin).unwrap(), s.clone());
        let txt = dir.path().join("e.txt");
        write_events_text(&s, &txt).unwrap();
        let back = read_events_text(&txt).unwrap();
        prop_assert_eq!(back.len(), s.len());
        for (x, y) in back.records().iter().zip(s.records()) {
            prop_assert!((x.t - y.t).abs() <= 5e-10);
            prop_assert_eq!((x.x, x.y, x.polarity), (y.x, y.y, y.polarity));
        }
    }
}
