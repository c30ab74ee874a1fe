use super::*;
use crate::fri::{coupled_windows, Edge, Provenance, TrajectoryCloud};
use crate::length_law::{asymptotic_ratio, EPS_4};
use crate::stats::chi2_two_sample;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rustc_hash::FxHashSet;

fn d4() -> Dim {
    Dim::new(4).unwrap()
}

fn o() -> Point {
    Point::origin(d4())
}

fn e(i: usize, v: i32) -> Point {
    Point::axis(d4(), i, v)
}

fn geo(t: f64) -> LengthDistribution {
    LengthDistribution::geometric_mean(t).unwrap()
}

fn tag() -> Provenance {
    Provenance::Window { origin: o() }
}

#[test]
fn cluster_examples() {
    let w = LatticeBox::centered(o(), 2);
    let vertices: PointSet = w.points().collect();
    let g = OccupiedGraph { window: w, vertices: vertices.clone(), edges: FxHashSet::default() };
    let c = build_clusters(&g);
    assert_eq!(c.components().len(), vertices.len());

    let mut edges = FxHashSet::default();
    for p in &vertices {
        for q in p.neighbours() {
            if w.contains(&q) {
                edges.insert(Edge::between(p, &q).unwrap());
            }
        }
    }
    let c = build_clusters(&OccupiedGraph { window: w, vertices: vertices.clone(), edges });
    assert_eq!(c.components().len(), 1);
    assert_eq!(c.cluster_size(&o()), 625);

    let pair = TrajectoryCloud::from_trajectories([
        (Trajectory::from_points(&[o(), e(0, 1)]).unwrap(), tag()),
        (Trajectory::from_points(&[e(1, 2), e(1, 3)]).unwrap(), tag()),
    ]);
    let g = occupied_graph(&pair, &LatticeBox::centered(o(), 4));
    let comps = build_clusters(&g).components();
    assert_eq!(comps.len(), 2);
    assert!(comps.iter().all(|c| c.len() == 2));
}

#[test]
fn clusters_ignore_insertion_order() {
    let (g, c) = window_clusters(0.6, &geo(4.0), &LatticeBox::centered(o(), 6), RngStream::new(1)).unwrap();
    let mut edges: Vec<(Point, Point)> = g.sorted_edges().iter().map(|e| (e.lo, e.hi())).collect();
    let mut rng = RngStream::new(2).into_rng();
    for _ in 0..5 {
        edges.shuffle(&mut rng);
        let mut verts = sorted_points(&g.vertices);
        verts.shuffle(&mut rng);
        let c2 = clusters_from_edges(verts, edges.clone());
        assert_eq!(c.components(), c2.components());
        for p in &g.vertices {
            assert_eq!(c.find(p), c2.find(p));
            assert_eq!(c.find(&c.find(p)), c.find(p));
        }
    }
}

#[test]
fn clusters_match_across_thread_counts() {
    let run = |n| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| {
            window_clusters(0.6, &geo(4.0), &LatticeBox::centered(o(), 6), RngStream::new(3)).unwrap().1.components()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn zero_intensity_never_crosses() {
    let p = crossing_proxy(0.0, &geo(4.0), d4(), 8, 10, RngStream::new(4)).unwrap();
    assert_eq!(p.p, 0.0);
    assert!(crossing_proxy(0.5, &geo(4.0), d4(), 7, 10, RngStream::new(4)).is_err());
    assert!(crossing_proxy(0.5, &geo(4.0), d4(), 8, 0, RngStream::new(4)).is_err());
}

#[test]
fn window_crossing_is_monotone_under_thinning() {
    let rho = geo(3.0);
    let l = 8i64;
    let w = LatticeBox::centered(o(), 12);
    let inside = LatticeBox::centered(o(), l as u32);
    let crosses = |cloud: &TrajectoryCloud| {
        let c = build_clusters(&occupied_graph(cloud, &inside));
        c.cluster_of(&o()).iter().any(|p| p.norm_inf() == l)
    };
    let mut seen = [0usize; 2];
    for r in 0..30 {
        let (small, big) = coupled_windows(0.6, 1.2, &rho, &w, RngStream::new(5).child(r)).unwrap();
        let (a, b) = (crosses(&small), crosses(&big));
        assert!(!a || b, "crossing at u but not at u′");
        seen[0] += a as usize;
        seen[1] += b as usize;
    }
    assert!(seen[0] <= seen[1]);
}

#[test]
fn invasion_levels_give_monotone_proxy() {
    let rho = geo(4.0);
    let levels = crossing_levels(0.8, &rho, d4(), 8, 40, &InvasionConfig::default(), &RngStream::new(6)).unwrap();
    let us = [0.1, 0.2, 0.3, 0.4, 0.6, 0.8];
    let ps: Vec<f64> = us.iter().map(|u| proxy_at(&levels, *u)).collect();
    assert!(ps.windows(2).all(|w| w[0] <= w[1]), "{ps:?}");
    assert!(levels.iter().all(|c| c.level.is_none_or(|x| (0.0..=0.8).contains(&x))));
}

#[test]
fn invasion_and_window_levels_agree_in_law() {
    // Two constructions of the minimax crossing level: rerooted invasion and
    // Kruskal on a window cloud.
    let rho = geo(2.0);
    let l = 8i64;
    let u_max = 1.6;
    let bins = |x: Option<f64>| x.map_or(8, |v| (v / (u_max / 8.0)) as usize);
    let reps = 300;
    let inv = crossing_levels(u_max, &rho, d4(), l, reps, &InvasionConfig::default(), &RngStream::new(7)).unwrap();
    let inv: Vec<usize> = inv.iter().map(|c| bins(c.level)).collect();
    let win: Vec<usize> = (0..reps)
        .map(|r| bins(crossing_level_window(u_max, &rho, d4(), l, 10, RngStream::new(8).child(r as u64)).unwrap()))
        .collect();
    let (_, p) = chi2_two_sample(&inv, &win, 5.0);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
#[ignore = "unattainable: the origin is vacant with probability about 0.14 at this u"]
fn strongly_supercritical_box_is_crossed() {
    let rho = geo(4.0);
    let u = 10.0 * reference_intensity(&rho, d4(), EPS_4).unwrap();
    let p = crossing_proxy(u, &rho, d4(), 32, 1000, RngStream::new(9)).unwrap();
    assert!(p.p > 0.9, "{p:?}");
}

#[test]
fn supercritical_proxy_is_bounded_by_origin_occupancy() {
    // Crossing needs an occupied origin, which has probability
    // 1 − exp(−u·cap^{(ρ)}({0})); at generous u the proxy sits just below it.
    let rho = geo(4.0);
    let u = 10.0 * reference_intensity(&rho, d4(), EPS_4).unwrap();
    let o: PointSet = [Point::origin(d4())].into_iter().collect();
    let c = crate::potential::rho_capacity(&o, &rho, &crate::potential::PotentialConfig::monte_carlo(100_000), RngStream::new(8)).unwrap();
    let occupied = 1.0 - (-u * c.value).exp();
    let p = crossing_proxy(u, &rho, d4(), 32, 1000, RngStream::new(9)).unwrap();
    assert!(p.p <= occupied + 3.0 * p.stderr, "{p:?} vs {occupied}");
    assert!(p.p >= occupied - 0.05, "{p:?} vs {occupied}");
}

#[test]
fn threshold_bisection_is_reproducible_and_bracketed() {
    let rho = geo(4.0);
    let cfg = ThresholdConfig::new(EPS_4);
    let a = estimate_threshold(&rho, d4(), 8, 40, 0.5, &cfg, RngStream::new(10)).unwrap();
    let b = estimate_threshold(&rho, d4(), 8, 40, 0.5, &cfg, RngStream::new(10)).unwrap();
    assert_eq!(a.iterates, b.iterates);
    let t = a.estimate;
    assert!(t.u_lo <= t.u_hat && t.u_hat <= t.u_hi);
    assert!((t.u_hi - t.u_lo) / t.u_hi < 0.05);
    assert!(proxy_at(&a.levels, t.u_hi) >= 0.5 && proxy_at(&a.levels, t.u_lo) < 0.5);
    let mut buf = Vec::new();
    write_iterates(&mut buf, &a.iterates).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), a.iterates.len() + 1);
    assert!(text.starts_with("iterate,phase,u,proxy,u_lo,u_hi,l,replicas"));
}

#[test]
fn threshold_degenerate_and_invalid_inputs() {
    let rho = geo(4.0);
    let cfg = ThresholdConfig::new(EPS_4);
    let t = estimate_threshold(&rho, d4(), 8, 5, 0.0, &cfg, RngStream::new(1)).unwrap().estimate;
    assert_eq!((t.u_lo, t.u_hat), (0.0, 0.0));
    assert!(estimate_threshold(&rho, d4(), 8, 0, 0.5, &cfg, RngStream::new(1)).is_err());
    assert!(estimate_threshold(&rho, d4(), 8, 5, 1.0, &cfg, RngStream::new(1)).is_err());
    let stuck = ThresholdConfig { max_doublings: 0, ..ThresholdConfig::new(1e6) };
    assert!(matches!(estimate_threshold(&rho, d4(), 8, 5, 0.99, &stuck, RngStream::new(1)), Err(Error::Budget(_))));
}

#[test]
fn proxy_is_thread_count_independent() {
    let rho = geo(4.0);
    let run = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| crossing_levels(0.5, &rho, d4(), 8, 12, &InvasionConfig::default(), &RngStream::new(11)).unwrap())
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn reference_intensity_has_unit_ratio(t in 1.5f64..200.0, d in 4usize..=8, eps in 0.05f64..3.0) {
        let rho = geo(t);
        let d = Dim::new(d).unwrap();
        let u = reference_intensity(&rho, d, eps).unwrap();
        prop_assert!((asymptotic_ratio(u, &rho, d, eps) - 1.0).abs() < 1e-12);
    }
}
