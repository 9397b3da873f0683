use jumpwave_core::spectral::{
    band_localize, band_localize_regularized, gaussian_kernel_quadrature, gaussian_regularize, padding_for, BumpProfile,
    TimeSignal,
};
use proptest::prelude::*;

const DT: f64 = 0.01;

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 64..300)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_matches_kernel_quadrature(s in signal(), lambda in 200.0..4000.0f64) {
        let f = TimeSignal::for_regularization(&s, DT, lambda).unwrap();
        let g = gaussian_regularize(&f, lambda).unwrap();
        let q = gaussian_kernel_quadrature(&s, DT, lambda);
        let scale = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(max_diff(g.window(), &q) <= 1e-8 * scale.max(1.0));
    }

    #[test]
    fn regularizations_compose(s in signal(), l1 in 100.0..2000.0f64, l2 in 100.0..2000.0f64) {
        let joint = 1.0 / (1.0 / l1 + 1.0 / l2);
        let f = TimeSignal::for_regularization(&s, DT, joint).unwrap();
        let twice = gaussian_regularize(&gaussian_regularize(&f, l1).unwrap(), l2).unwrap();
        let once = gaussian_regularize(&f, joint).unwrap();
        prop_assert!(max_diff(&twice.data, &once.data) <= 1e-10);
    }

    #[test]
    fn regularization_is_linear(a in signal(), k in -3.0..3.0f64) {
        let b: Vec<f64> = a.iter().rev().map(|x| x * 0.5 + 0.1).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let lambda = 400.0;
        let reg = |v: &[f64]| gaussian_regularize(&TimeSignal::for_regularization(v, DT, lambda).unwrap(), lambda).unwrap();
        let (ra, rb, rs) = (reg(&a), reg(&b), reg(&sum));
        let combo: Vec<f64> = ra.data.iter().zip(&rb.data).map(|(x, y)| x + k * y).collect();
        prop_assert!(max_diff(&rs.data, &combo) <= 1e-12);
    }

    #[test]
    fn multipliers_do_not_increase_norm(s in signal(), mu in 5.0..200.0f64, lambda in 10.0..1e4f64) {
        let f = TimeSignal::new(&s, DT, 64).unwrap();
        let n = f.norm_l2();
        let profile = BumpProfile::default();
        prop_assert!(band_localize(&f, mu, &profile).unwrap().norm_l2() <= n * (1.0 + 1e-12));
        prop_assert!(band_localize_regularized(&f, mu, lambda, &profile).unwrap().norm_l2() <= n * (1.0 + 1e-12));
    }

    #[test]
    fn regularization_preserves_order(s in signal(), bump in prop::collection::vec(0.0..1.0f64, 300), lambda in 200.0..3000.0f64) {
        let g: Vec<f64> = s.iter().zip(&bump).map(|(x, b)| x + b).collect();
        let pad = padding_for(lambda, DT);
        let lo = gaussian_regularize(&TimeSignal::new(&s, DT, pad).unwrap(), lambda).unwrap();
        let hi = gaussian_regularize(&TimeSignal::new(&g, DT, pad).unwrap(), lambda).unwrap();
        for (a, b) in lo.window().iter().zip(hi.window()) {
            prop_assert!(b >= &(a - 1e-12));
        }
    }
}

fn tone(omega: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (omega * i as f64 * DT).cos()).collect()
}

#[test]
fn band_localize_plateau_and_support() {
    // a periodic tone on the full buffer has one exact frequency bin
    let n = 1024;
    let base = 2.0 * std::f64::consts::PI / (n as f64 * DT);
    let mu = 40.0 * base;
    let profile = BumpProfile::default();
    let inside = TimeSignal::new(&tone(20.0 * base, n), DT, 0).unwrap();
    let kept = band_localize(&inside, mu, &profile).unwrap();
    assert!(max_diff(&kept.data, &inside.data) <= 1e-12);
    let again = band_localize(&kept, mu, &profile).unwrap();
    assert!(max_diff(&again.data, &kept.data) <= 1e-10);
    let outside = TimeSignal::new(&tone(80.0 * base, n), DT, 0).unwrap();
    let killed = band_localize(&outside, mu, &profile).unwrap();
    assert!(killed.data.iter().all(|x| x.abs() <= 1e-12));
}

#[test]
fn regularized_profile_limits() {
    let profile = BumpProfile::default();
    let reg = profile.regularized(1e6).unwrap();
    assert!((reg.eval(0.0) - 1.0).abs() <= 1e-6);
    let in_band = |s: f64| (0.74..=1.01).contains(&s.abs());
    let mut band = [0.0f64; 2];
    for k in 0..=600 {
        let s = -1.5 + 3.0 * k as f64 / 600.0;
        let d = (reg.eval(s) - profile.eval(s)).abs();
        if in_band(s) {
            band[0] = band[0].max(d);
        } else {
            assert!(d <= 1e-6, "m_lambda off by {d:e} at {s}");
        }
    }
    // inside the transition band the gap closes like 1/lambda
    let finer = profile.regularized(1e7).unwrap();
    for k in 0..=600 {
        let s = -1.5 + 3.0 * k as f64 / 600.0;
        if in_band(s) {
            band[1] = band[1].max((finer.eval(s) - profile.eval(s)).abs());
        }
    }
    let rate = band[0] / band[1];
    assert!(rate > 8.0 && rate < 12.0, "band convergence ratio {rate}");
    let soft = profile.regularized(400.0).unwrap();
    for s in [1.1, 2.0, 10.0] {
        assert!(soft.eval(s) <= soft.tail_bound(s) * (1.0 + 1e-9));
    }
}
