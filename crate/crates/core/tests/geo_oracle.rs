//! Solver checks against independent oracles: a brute-force grid over the
//! same sum of squares, rigid-motion equivariance and Monte-Carlo statistics
//! of the error radius.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use uwb_pol::geo::{
    distance, multilaterate, round_trip_ns, twr_distance, Anchor, AnchorSet, Dimension, Position,
    RangeMeasurement, SPEED_OF_LIGHT,
};

const FIG4_ANCHORS: [(f64, f64); 4] = [(2.5, 0.6), (2.5, 1.15), (2.85, 1.15), (2.85, 0.6)];
const FIG5_ANCHORS: [(f64, f64); 4] = [(1.26, 0.518), (1.26, -0.0393), (0.918, -0.0393), (0.918, 0.518)];

fn anchor_set(points: &[(f64, f64)]) -> AnchorSet {
    AnchorSet::new(
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Anchor::new(format!("A{i}"), Position::planar(x, y)))
            .collect(),
    )
    .unwrap()
}

fn noisy_ranges(set: &AnchorSet, target: &Position, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<RangeMeasurement> {
    let normal = Normal::new(0.0, sigma).unwrap();
    set.anchors()
        .iter()
        .map(|a| {
            let d = distance(&a.position, target) + normal.sample(rng);
            RangeMeasurement::new(a.id.clone(), d.max(0.0), sigma.max(1e-3), 0)
        })
        .collect()
}

/// Brute-force argmin of the range SSR on a regular grid. Written against raw
/// coordinates so it shares nothing with the solver.
fn grid_argmin(anchors: &[(f64, f64)], ranges: &[f64], lo: (f64, f64), hi: (f64, f64), step: f64) -> ((f64, f64), f64) {
    let nx = ((hi.0 - lo.0) / step).round() as usize;
    let ny = ((hi.1 - lo.1) / step).round() as usize;
    let mut best = ((lo.0, lo.1), f64::INFINITY);
    for i in 0..=nx {
        let x = lo.0 + i as f64 * step;
        for j in 0..=ny {
            let y = lo.1 + j as f64 * step;
            let mut ssr = 0.0;
            for (k, &(ax, ay)) in anchors.iter().enumerate() {
                let r = ((x - ax).powi(2) + (y - ay).powi(2)).sqrt() - ranges[k];
                ssr += r * r;
            }
            if ssr < best.1 {
                best = ((x, y), ssr);
            }
        }
    }
    best
}

fn ssr_at(anchors: &[(f64, f64)], ranges: &[f64], p: (f64, f64)) -> f64 {
    anchors
        .iter()
        .zip(ranges)
        .map(|(&(ax, ay), d)| (((p.0 - ax).powi(2) + (p.1 - ay).powi(2)).sqrt() - d).powi(2))
        .sum()
}

#[test]
fn fig5_noisy_estimate_matches_grid_oracle() {
    let set = anchor_set(&FIG5_ANCHORS);
    let target = Position::planar(4.2, 12.745);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ranges = noisy_ranges(&set, &target, 0.05, &mut rng);
    let est = multilaterate(&set, &ranges, Dimension::Two, None).unwrap();
    assert!(est.converged);

    let d: Vec<f64> = ranges.iter().map(|r| r.distance).collect();
    let (g, g_ssr) = grid_argmin(&FIG5_ANCHORS, &d, (0.0, 0.0), (8.0, 16.0), 0.01);
    let gap = ((est.position.x - g.0).powi(2) + (est.position.y - g.1).powi(2)).sqrt();
    assert!(gap < 0.02, "solver {:?} vs grid {:?} (gap {gap})", est.position, g);
    assert!(ssr_at(&FIG5_ANCHORS, &d, (est.position.x, est.position.y)) <= g_ssr);
}

/// Random well-spread 2D layout inside a 20 m box: 4 to 6 anchors whose
/// scatter matrix is not too eccentric, and a target anywhere in the box.
fn random_layout(rng: &mut ChaCha8Rng) -> (Vec<(f64, f64)>, (f64, f64)) {
    loop {
        let n = rng.gen_range(4..=6);
        let anchors: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0))).collect();
        let (mx, my) = anchors.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (mx / n as f64, my / n as f64);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for &(x, y) in &anchors {
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
            sxy += (x - mx) * (y - my);
        }
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let (l_min, l_max) = (tr / 2.0 - disc, tr / 2.0 + disc);
        // Needs a spread of at least ~2 m along the thin axis.
        if l_min / n as f64 > 4.0 && l_max / l_min < 10.0 {
            return (anchors, (rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)));
        }
    }
}

#[test]
fn random_scenarios_match_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    for case in 0..20 {
        let (anchors, t) = random_layout(&mut rng);
        let set = anchor_set(&anchors);
        let target = Position::planar(t.0, t.1);
        let ranges = noisy_ranges(&set, &target, 0.05, &mut rng);
        let est = multilaterate(&set, &ranges, Dimension::Two, None).unwrap();
        let d: Vec<f64> = ranges.iter().map(|r| r.distance).collect();
        let (g, g_ssr) = grid_argmin(&anchors, &d, (0.0, 0.0), (20.0, 20.0), 0.01);
        let gap = ((est.position.x - g.0).powi(2) + (est.position.y - g.1).powi(2)).sqrt();
        assert!(gap < 0.02, "case {case}: solver {:?} vs grid {g:?}", est.position);
        assert!(ssr_at(&anchors, &d, (est.position.x, est.position.y)) <= g_ssr + 1e-12);
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_radius(points: &[(f64, f64)], target: Position, sigma: f64, seeds: u64) -> f64 {
    let set = anchor_set(points);
    let radii = (0..seeds)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let ranges = noisy_ranges(&set, &target, sigma, &mut rng);
            multilaterate(&set, &ranges, Dimension::Two, None).unwrap().error_radius
        })
        .collect();
    median(radii)
}

#[test]
fn error_radius_orders_fig4_below_fig5() {
    let fig4 = median_radius(&FIG4_ANCHORS, Position::planar(3.95, 2.705), 0.05, 1000);
    let fig5 = median_radius(&FIG5_ANCHORS, Position::planar(4.2, 12.745), 0.05, 1000);
    assert!(fig4 < fig5, "fig4 {fig4} fig5 {fig5}");
}

#[test]
fn doubling_sigma_doubles_error_radius() {
    let target = Position::planar(3.95, 2.705);
    let base = median_radius(&FIG4_ANCHORS, target, 0.01, 1000);
    let doubled = median_radius(&FIG4_ANCHORS, target, 0.02, 1000);
    let ratio = doubled / base;
    assert!((ratio - 2.0).abs() <= 0.1, "ratio {ratio}");
}

fn layout_strategy() -> impl Strategy<Value = (Vec<(f64, f64)>, (f64, f64))> {
    any::<u64>().prop_map(|seed| random_layout(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_free_round_trip((anchors, t) in layout_strategy()) {
        let set = anchor_set(&anchors);
        let target = Position::planar(t.0, t.1);
        let ranges: Vec<_> = set.anchors().iter()
            .map(|a| RangeMeasurement::new(a.id.clone(), distance(&a.position, &target), 0.05, 0))
            .collect();
        let est = multilaterate(&set, &ranges, Dimension::Two, None).unwrap();
        prop_assert!(distance(&est.position, &target) < 1e-6);
        prop_assert!(est.error_radius < 1e-6);
    }

    #[test]
    fn rigid_motion_equivariance(
        (anchors, t) in layout_strategy(),
        angle in 0.0..std::f64::consts::TAU,
        shift in (-50.0..50.0f64, -50.0..50.0f64),
        seed in any::<u64>(),
    ) {
        let set = anchor_set(&anchors);
        let target = Position::planar(t.0, t.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranges = noisy_ranges(&set, &target, 0.05, &mut rng);
        let est = multilaterate(&set, &ranges, Dimension::Two, None).unwrap();

        let (s, c) = angle.sin_cos();
        let mv = |p: (f64, f64)| (c * p.0 - s * p.1 + shift.0, s * p.0 + c * p.1 + shift.1);
        let moved: Vec<(f64, f64)> = anchors.iter().map(|&p| mv(p)).collect();
        let moved_est = multilaterate(&anchor_set(&moved), &ranges, Dimension::Two, None).unwrap();
        let expect = mv((est.position.x, est.position.y));
        let gap = ((moved_est.position.x - expect.0).powi(2) + (moved_est.position.y - expect.1).powi(2)).sqrt();
        prop_assert!(gap < 1e-6, "gap {}", gap);
        prop_assert!((moved_est.error_radius - est.error_radius).abs() < 1e-6);
    }

    #[test]
    fn twr_inverts_round_trip(d in 0.1..1000.0f64) {
        let reply = 300_000.0;
        let back = twr_distance(reply + round_trip_ns(d, SPEED_OF_LIGHT), reply, SPEED_OF_LIGHT).unwrap();
        prop_assert!((back - d).abs() <= 1e-9 * d);
    }
}
