use contactkit::contact::net_stiffness_diagonal;
use contactkit::reducer::reduce;
use contactkit::scenarios::incline_analytic;
use contactkit::stiffness_qp::bound_stiffness;
use contactkit::{ContactPoint, ContactSet, ReductionConfig, Vector3};
use proptest::prelude::*;

fn contact() -> impl Strategy<Value = ContactPoint> {
    (
        prop::array::uniform3(-0.2f64..0.2),
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..2e-3,
    )
        .prop_filter("normal", |(_, n, _)| Vector3::from(*n).norm() > 0.1)
        .prop_map(|(p, n, d)| ContactPoint::new(Vector3::from(p), Vector3::from(n).normalize(), d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reduce_then_bound(points in prop::collection::vec(contact(), 1..80), k in 1usize..12, factor in 0.5f64..4.0) {
        let set = ContactSet::with_points(points, 1e4, 10.0);
        let reduced = reduce(&set, &ReductionConfig::new(k, 25.0)).unwrap();
        prop_assert_eq!(reduced.len(), set.len().min(k));
        prop_assert_eq!(reduced.stiffness, set.stiffness);

        let k_max = factor * set.stiffness;
        let (out, sol) = bound_stiffness(&reduced, k_max).unwrap();
        let net = net_stiffness_diagonal(&out);
        prop_assert!(net.iter().all(|&v| v <= k_max * (1.0 + 1e-12)), "{:?} > {}", net, k_max);
        prop_assert!(sol.scales.iter().all(|s| (0.0..=1.0).contains(s)));

        let again = ContactSet::from_json_str(&out.to_json_string()).unwrap();
        prop_assert_eq!(again, out);
    }
}

#[test]
fn incline_oracle() {
    // a = g (sin 30° − 0.3 cos 30°) = 9.81 (0.5 − 0.3·0.8660254) = 2.356287 m/s²
    let a = 9.81 * (0.5 - 0.3 * 30f64.to_radians().cos());
    assert!((a - 2.356287).abs() < 1e-6);
    let t: f64 = 0.8;
    let (u, v) = incline_analytic(30f64.to_radians(), 0.3, 9.81, 0.0, t).unwrap();
    assert!((u - 0.5 * a * t * t).abs() < 1e-12);
    assert!((v - a * t).abs() < 1e-12);
    // 0.9 m of travel takes √(2·0.9/a) ≈ 0.874 s
    assert!(((2.0 * 0.9 / a).sqrt() - 0.874).abs() < 1e-3);
}

#[test]
fn six_vertical_contacts_scale_to_one_third() {
    let points = (0..6)
        .map(|i| ContactPoint::new(Vector3::new(i as f64 * 0.01, 0.0, 0.0), Vector3::z(), 1e-3))
        .collect();
    let set = ContactSet::with_points(points, 1e4, 0.0);
    let (out, sol) = bound_stiffness(&set, 2e4).unwrap();
    assert!(out.points.iter().all(|p| (p.scale - 1.0 / 3.0).abs() < 1e-12));
    assert!((sol.objective - 6.0 * 4.0 / 9.0).abs() < 1e-12);
}
