use jumpwave_core::medium::{GraphSpec, Medium, Point};
use proptest::prelude::*;

fn two_layer() -> Medium {
    Medium::layered((0.0, 1.0), (0.0, 1.0), 0.5, 1.0, 4.0).unwrap()
}

fn point() -> impl Strategy<Value = Point> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| [x, y])
}

const SPEC_RES: f64 = 1.0 / 32.0;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distance_is_symmetric(p in point(), q in point()) {
        let m = two_layer();
        let spec = GraphSpec::new(SPEC_RES).with_stencil_radius(3);
        let a = m.distance(&p, &q, &spec).unwrap();
        let b = m.distance(&q, &p, &spec).unwrap();
        prop_assert!((a - b).abs() <= 2.0 * SPEC_RES, "{a} vs {b}");
    }

    #[test]
    fn triangle_inequality(p in point(), q in point(), r in point()) {
        let m = two_layer();
        let spec = GraphSpec::new(SPEC_RES).with_stencil_radius(3);
        let pq = m.distance(&p, &q, &spec).unwrap();
        let qr = m.distance(&q, &r, &spec).unwrap();
        let pr = m.distance(&p, &r, &spec).unwrap();
        prop_assert!(pr <= pq + qr + 4.0 * SPEC_RES);
    }

    #[test]
    fn faster_medium_is_closer(p in point(), q in point()) {
        let m = two_layer();
        let fast = m.scaled(4.0).unwrap();
        let spec = GraphSpec::new(SPEC_RES);
        let slow = m.distance(&p, &q, &spec).unwrap();
        let quick = fast.distance(&p, &q, &spec).unwrap();
        prop_assert!(quick <= slow + 1e-12);
        // uniform scaling by 4 halves travel times exactly
        prop_assert!((quick - 0.5 * slow).abs() <= 1e-12 * slow.max(1.0));
    }

    #[test]
    fn homogeneous_medium_is_euclidean(p in point(), q in point(), c in 0.25..9.0f64) {
        let m = Medium::layered((0.0, 1.0), (0.0, 1.0), 0.5, c, c).unwrap();
        let spec = GraphSpec::new(SPEC_RES).with_stencil_radius(6);
        let d = m.distance(&p, &q, &spec).unwrap();
        let e = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() / c.sqrt();
        prop_assert!((d - e).abs() <= 0.02 * e + 2.0 * SPEC_RES / c.sqrt(), "{d} vs {e}");
    }

    #[test]
    fn path_length_converges_off_interface(y0 in 0.55..0.95f64, y1 in 0.55..0.95f64, x in 0.0..1.0f64) {
        use jumpwave_core::medium::{Branch, Domain, Interface, PiecewiseCoefficient};
        let coefficient = PiecewiseCoefficient {
            minus: Branch::Constant(1.0),
            plus: Branch::Affine { value: 2.0, gradient: [0.5, 1.0] },
            c_min: 0.5,
            c_max: 8.0,
        };
        let m = Medium::new(
            Domain::Rectangle { x: (0.0, 1.0), y: (0.0, 1.0) },
            Interface::horizontal(0.0, 1.0, 0.5),
            coefficient,
        ).unwrap();
        let path = [[0.1, y0], [x, y1], [0.9, 0.9]];
        let a = m.path_length_with(&path, 256).unwrap();
        let b = m.path_length_with(&path, 512).unwrap();
        prop_assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn one_dimensional_reference_values() {
    use jumpwave_core::medium::Region;
    let m = Medium::interval(0.0, 1.0, 0.5, 1.0, 4.0).unwrap();
    let spec = GraphSpec::new(1.0 / 4096.0);
    // 0.5/1 + 0.5/2 from one end to the other
    let d = m.distance(&[0.0, 0.0], &[1.0, 0.0], &spec).unwrap();
    assert!((d - 0.75).abs() < 1e-3);
    let l = m.largest_distance(&Region::Interval(0.0, 0.1), &spec).unwrap();
    assert!((l - 0.65).abs() < 1e-3);
}
