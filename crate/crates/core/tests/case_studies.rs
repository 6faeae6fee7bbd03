use crt_hte_core::casestudy::{theta_sweep, Study, Variant};

#[test]
fn thresholds_within_reporting_resolution() {
    let cases = [
        (Study::Recode, Variant::Equal, 0.177),
        (Study::Recode, Variant::Extreme, 0.275),
        (Study::Partner, Variant::Equal, 0.397),
        (Study::Partner, Variant::Extreme, 0.623),
        (Study::Epic, Variant::Equal, 6.13),
        (Study::Epic, Variant::NoDropout, 5.91),
    ];
    for (s, v, published) in cases {
        let t = s.threshold(v).unwrap();
        assert!(
            (t.exact - published).abs() <= t.resolution,
            "{} {v:?}: {}",
            s.name(),
            t.exact
        );
        assert!(t.reported >= t.exact);
    }
}

#[test]
fn dropout_costs_detectable_effect() {
    let drop = Study::Epic.threshold(Variant::Equal).unwrap().exact;
    let none = Study::Epic.threshold(Variant::NoDropout).unwrap().exact;
    assert!(drop > none);
}

#[test]
fn imbalance_costs_power() {
    for s in [Study::Recode, Study::Partner] {
        for d in [0.1, 0.3, 0.5] {
            assert!(s.power(Variant::Extreme, d).unwrap() < s.power(Variant::Equal, d).unwrap());
        }
    }
}

#[test]
fn sweep_power_rises_with_effect() {
    let pts = theta_sweep().unwrap();
    for t in [0.1, 0.25, 0.5] {
        let row: Vec<f64> = pts
            .iter()
            .filter(|p| (p.theta - t).abs() < 1e-9)
            .map(|p| p.power)
            .collect();
        assert_eq!(row.len(), 4);
        assert!(row.windows(2).all(|w| w[0] < w[1]));
    }
}
