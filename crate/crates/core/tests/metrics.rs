mod common;

use std::collections::BTreeMap;

use common::{brute_force_ap, eleven_points, forty_points, in_corridor, planted_set};
use tradar::metrics::{evaluate, EvalConfig, Interpolation, PredictionRecord, ScoredBox};
use tradar::scene::{normalize_angle, ClassId};
use tradar::Error;

#[test]
fn planted_errors_match_brute_force_sweep() {
    let set = planted_set();
    for (interp, points) in [(Interpolation::Forty, forty_points()), (Interpolation::Eleven, eleven_points())] {
        let cfg = EvalConfig {
            interpolation: interp,
            depth_edges: vec![],
            ..EvalConfig::default()
        };
        let report = evaluate(&set.preds, &set.gts, &cfg).unwrap();
        for (label, keep) in [("EAA", &(|_: &_| true) as &dyn Fn(&_) -> bool), ("DCA", &in_corridor)] {
            let region = report.region(label).unwrap();
            for class in ClassId::ALL {
                let thr = cfg.iou_thresholds.get(class);
                let oracle = brute_force_ap(&set, class, thr, keep, &points);
                let got = region.class(class);
                match oracle {
                    None => assert_eq!(got.ap, None, "{label} {class}"),
                    Some((ap, aos)) => {
                        let (gap, gaos) = (got.ap.unwrap() / 100.0, got.aos.unwrap() / 100.0);
                        assert!((gap - ap).abs() < 1e-9, "{interp:?} {label} {class}: AP {gap} vs {ap}");
                        assert!((gaos - aos).abs() < 1e-9, "{interp:?} {label} {class}: AOS {gaos} vs {aos}");
                    }
                }
            }
        }
    }
}

#[test]
fn planted_set_is_not_trivial() {
    // The oracle comparison only means something if the errors bite.
    let set = planted_set();
    let report = evaluate(&set.preds, &set.gts, &EvalConfig::default()).unwrap();
    for label in ["EAA", "DCA"] {
        let r = report.region(label).unwrap();
        let map = r.map.unwrap();
        assert!(map > 20.0 && map < 95.0, "{label} mAP {map}");
        assert!(r.maos.unwrap() < map);
    }
}

fn perfect(set: &common::PlantedSet, yaw_shift: f64) -> Vec<PredictionRecord> {
    set.gts
        .iter()
        .map(|(id, g)| PredictionRecord {
            sample_id: id.clone(),
            boxes: g
                .iter()
                .map(|b| {
                    let mut b = *b;
                    b.yaw = normalize_angle(b.yaw + yaw_shift);
                    ScoredBox { bbox: b, score: 0.9 }
                })
                .collect(),
        })
        .collect()
}

#[test]
fn perfect_predictions_score_one_hundred() {
    let set = planted_set();
    let report = evaluate(&perfect(&set, 0.0), &set.gts, &EvalConfig::default()).unwrap();
    for label in ["EAA", "DCA"] {
        let r = report.region(label).unwrap();
        assert_eq!(r.map, Some(100.0));
        assert_eq!(r.maos, Some(100.0));
    }
}

#[test]
fn half_turn_keeps_ap_and_zeroes_aos() {
    let set = planted_set();
    let report = evaluate(&perfect(&set, std::f64::consts::PI), &set.gts, &EvalConfig::default()).unwrap();
    for label in ["EAA", "DCA"] {
        let r = report.region(label).unwrap();
        for class in ClassId::ALL {
            let c = r.class(class);
            assert!((c.ap.unwrap() - 100.0).abs() < 1e-9, "{label} {class}");
            assert!(c.aos.unwrap().abs() < 1e-9, "{label} {class}");
        }
    }
}

#[test]
fn unknown_sample_ids_rejected() {
    let set = planted_set();
    let mut preds = set.preds.clone();
    preds.push(PredictionRecord {
        sample_id: "nope".into(),
        boxes: vec![],
    });
    let e = evaluate(&preds, &set.gts, &EvalConfig::default()).unwrap_err();
    assert!(matches!(&e, Error::Validation(m) if m.contains("nope")), "{e}");
    let empty: BTreeMap<String, Vec<_>> = BTreeMap::new();
    assert!(evaluate(&[], &empty, &EvalConfig::default()).is_ok());
}
