use proptest::prelude::*;

use super::*;
use crate::gaze::VideoMeta;

fn naive_lev(a: &[u32], b: &[u32]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = naive_lev(ra, rb) + usize::from(x != y);
            sub.min(naive_lev(ra, b) + 1).min(naive_lev(a, rb) + 1)
        }
    }
}

/// Every monotone path from (0,0) to the far corner, folded with `combine`.
fn all_paths(p: &[[f64; 2]], q: &[[f64; 2]], combine: fn(f64, f64) -> f64, best: &mut f64, i: usize, j: usize, acc: f64) {
    let acc = combine(acc, dist(p[i], q[j]));
    if i + 1 == p.len() && j + 1 == q.len() {
        *best = best.min(acc);
        return;
    }
    if i + 1 < p.len() {
        all_paths(p, q, combine, best, i + 1, j, acc);
    }
    if j + 1 < q.len() {
        all_paths(p, q, combine, best, i, j + 1, acc);
    }
    if i + 1 < p.len() && j + 1 < q.len() {
        all_paths(p, q, combine, best, i + 1, j + 1, acc);
    }
}

fn brute(p: &[[f64; 2]], q: &[[f64; 2]], combine: fn(f64, f64) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    all_paths(p, q, combine, &mut best, 0, 0, 0.0);
    best
}

fn seq(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| [x, y]), len)
}

#[test]
fn quantization_cells() {
    assert_eq!(quantize(&[[0.5, 0.5]], (2, 2)), vec![3]);
    assert_eq!(quantize(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]], (8, 8)), vec![0, 63, 7, 56]);
    let t = GazeTrajectory::from_points(&[[0.3, 0.7]; 30], 0.0, 30.0, "o", "v").unwrap();
    let s = quantize_to_string(&t, (8, 8));
    assert_eq!(s.len(), 30);
    assert!(s.iter().all(|&c| c == s[0]));
}

#[test]
fn levenshtein_examples() {
    let w = |s: &str| s.bytes().map(u32::from).collect::<Vec<_>>();
    assert_eq!(levenshtein(&w("kitten"), &w("sitting")), 3);
    assert_eq!(naive_lev(&w("kitten"), &w("sitting")), 3);
    assert_eq!(levenshtein(&w("abc"), &w("abc")), 0);
    assert_eq!(levenshtein(&w(""), &w("abcd")), 4);
    assert_eq!(levenshtein(&w("abcd"), &w("")), 4);
}

#[test]
fn distance_examples() {
    let a = [[0.0, 0.0]];
    let b = [[3.0, 4.0]];
    assert_eq!(discrete_frechet(&a, &b).unwrap(), 5.0);
    assert_eq!(dtw(&a, &b).unwrap(), 5.0);
    let p = [[0.1, 0.2], [0.4, 0.4], [0.9, 0.3]];
    assert_eq!(discrete_frechet(&p, &p).unwrap(), 0.0);
    assert_eq!(dtw(&p, &p).unwrap(), 0.0);
    assert!(dtw(&[], &p).is_err());
    assert!(discrete_frechet(&p, &[]).is_err());
}

#[test]
fn correlation_examples() {
    let p: Vec<[f64; 2]> = (0..100).map(|i| [(i as f64 * 0.21).sin(), (i as f64 * 0.13).cos()]).collect();
    assert!((max_temporal_correlation(&p, &p, 5).unwrap() - 1.0).abs() < 1e-12);
    // q[i + 10] = p[i]
    let q: Vec<[f64; 2]> = (0..100).map(|i| [((i as f64 - 10.0) * 0.21).sin(), ((i as f64 - 10.0) * 0.13).cos()]).collect();
    assert!((lagged_correlation(&p, &q, 10).unwrap() - 1.0).abs() < 1e-12);
    let best = (-12isize..=12).map(|l| lagged_correlation(&p, &q, l).unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(best, max_temporal_correlation(&p, &q, 12).unwrap());
    assert!((best - 1.0).abs() < 1e-12);
    assert!(max_temporal_correlation(&p, &q, 5).unwrap() < 0.999);
    assert_eq!(max_temporal_correlation(&p, &[[0.4, 0.4]; 100], 3).unwrap(), 0.0);
    assert!(max_temporal_correlation(&p[..1], &q[..1], 3).is_err());
}

fn video(id: &str, gt: &[[f64; 2]], gens: &[[f64; 2]]) -> VideoPaths {
    let meta = VideoMeta::new(id, 1, 1, 30.0, 10).unwrap();
    let traj = |p: [f64; 2], o: String| GazeTrajectory::from_points(&[p, p], 0.0, 30.0, o, id).unwrap();
    VideoPaths {
        meta,
        gt: gt.iter().enumerate().map(|(i, &p)| traj(p, format!("g{i}"))).collect(),
        generated: gens.iter().enumerate().map(|(i, &p)| traj(p, format!("s{i}"))).collect(),
    }
}

#[test]
fn protocol_matches_hand_computation() {
    let cfg = MetricConfig {
        grid: (2, 2),
        max_lag_s: 0.1,
        space: Space::Normalized,
    };
    let v = video("v", &[[0.1, 0.1], [0.9, 0.1]], &[[0.1, 0.5], [0.9, 0.1]]);
    let r = evaluate_protocol(&[v], &cfg).unwrap();
    let far = 0.8f64.hypot(0.4);
    let s = |m: Metric| r.get(m);
    assert_eq!(s(Metric::Levenshtein), MetricScore { mean: 1.5, best: 1.0 });
    assert!((s(Metric::Frechet).best - 0.2).abs() < 1e-12);
    assert!((s(Metric::Frechet).mean - (0.6 + far / 2.0) / 2.0).abs() < 1e-12);
    assert!((s(Metric::Dtw).best - 0.4).abs() < 1e-12);
    assert!((s(Metric::Dtw).mean - (1.2 + far) / 2.0).abs() < 1e-12);
    assert_eq!(s(Metric::Mtc), MetricScore { mean: 0.0, best: 0.0 });
    assert!(r.ordering_holds());

    let csv = r.to_csv();
    assert!(csv.starts_with("video_id,metric,variant,value\nv,levenshtein,mean,1.5\nv,levenshtein,best,1\n"));
    assert!(csv.contains("\nALL,dtw,best,"));
    assert_eq!(csv.lines().count(), 1 + 2 * 8);
}

#[test]
fn protocol_single_sample_and_exact_copy() {
    let pts: Vec<[f64; 2]> = (0..60).map(|i| [0.5 + 0.3 * (i as f64 / 7.0).sin(), 0.5 + 0.2 * (i as f64 / 5.0).cos()]).collect();
    let gt = GazeTrajectory::from_points(&pts, 0.0, 30.0, "g", "v").unwrap();
    let other: Vec<[f64; 2]> = pts.iter().map(|p| [p[1], p[0]]).collect();
    let meta = VideoMeta::new("v", 640, 480, 30.0, 60).unwrap();
    let gen2 = GazeTrajectory::from_points(&other, 0.0, 30.0, "s1", "v").unwrap();
    let single = VideoPaths {
        meta: meta.clone(),
        gt: vec![gt.clone()],
        generated: vec![gen2.clone()],
    };
    let r = evaluate_protocol(&[single], &MetricConfig::default()).unwrap();
    for m in Metric::ALL {
        assert_eq!(r.get(m).best, r.get(m).mean);
    }
    let with_copy = VideoPaths {
        meta,
        gt: vec![gt.clone()],
        generated: vec![gen2, gt],
    };
    let r = evaluate_protocol(&[with_copy], &MetricConfig::default()).unwrap();
    for m in [Metric::Levenshtein, Metric::Frechet, Metric::Dtw] {
        assert_eq!(r.get(m).best, 0.0);
    }
    assert!((r.get(Metric::Mtc).best - 1.0).abs() < 1e-12);
    assert!(r.ordering_holds());
}

#[test]
fn protocol_errors() {
    let cfg = MetricConfig::default();
    assert!(evaluate_protocol(&[], &cfg).is_err());
    let mut v = video("v", &[[0.1, 0.1]], &[[0.2, 0.2]]);
    v.generated.clear();
    assert!(evaluate_protocol(&[v], &cfg).is_err());
    let bad = MetricConfig { grid: (0, 3), ..cfg };
    assert!(evaluate_protocol(&[video("v", &[[0.1, 0.1]], &[[0.2, 0.2]])], &bad).is_err());
}

#[test]
fn mean_of_equal_values_is_not_below_minimum() {
    let v = video("v", &[[0.1, 0.1]], &[[0.2, 0.2]; 10]);
    let r = evaluate_protocol(&[v], &MetricConfig { space: Space::Normalized, ..MetricConfig::default() }).unwrap();
    assert!(r.ordering_holds());
    assert_eq!(r.get(Metric::Dtw).best, r.get(Metric::Dtw).mean);
}

proptest! {
    #[test]
    fn dtw_and_frechet_match_enumeration(p in seq(1..=6), q in seq(1..=6)) {
        let d = dtw(&p, &q).unwrap();
        let f = discrete_frechet(&p, &q).unwrap();
        let bd = brute(&p, &q, |a, b| a + b);
        let bf = brute(&p, &q, f64::max);
        prop_assert!((d - bd).abs() <= 1e-12 * bd.max(1e-300));
        prop_assert_eq!(f, bf);
    }

    #[test]
    fn levenshtein_matches_recursion(a in prop::collection::vec(0u32..4, 0..7), b in prop::collection::vec(0u32..4, 0..7)) {
        prop_assert_eq!(levenshtein(&a, &b), naive_lev(&a, &b));
    }

    #[test]
    fn distances_are_symmetric(p in seq(1..=20), q in seq(1..=20)) {
        prop_assert_eq!(dtw(&p, &q).unwrap(), dtw(&q, &p).unwrap());
        prop_assert_eq!(discrete_frechet(&p, &q).unwrap(), discrete_frechet(&q, &p).unwrap());
        let (a, b) = (quantize(&p, (8, 8)), quantize(&q, (8, 8)));
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
    }

    #[test]
    fn endpoint_bounds(p in seq(1..=20), q in seq(1..=20)) {
        let f = discrete_frechet(&p, &q).unwrap();
        let first = dist(p[0], q[0]);
        let last = dist(p[p.len() - 1], q[q.len() - 1]);
        prop_assert!(f >= first.max(last));
        prop_assert!(dtw(&p, &q).unwrap() >= first);
    }

    #[test]
    fn levenshtein_triangle(a in prop::collection::vec(0u32..5, 0..12), b in prop::collection::vec(0u32..5, 0..12), c in prop::collection::vec(0u32..5, 0..12)) {
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn correlation_is_affine_invariant(p in seq(8..=40), q in seq(8..=40), scale in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let map = |s: &[[f64; 2]]| s.iter().map(|v| [scale * v[0] + shift, scale * v[1] + shift]).collect::<Vec<_>>();
        let a = max_temporal_correlation(&p, &q, 3).unwrap();
        let b = max_temporal_correlation(&map(&p), &map(&q), 3).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&a));
    }
}
