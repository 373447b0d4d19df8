//! Digamma, log-gamma and trigamma against 50-digit reference values
//! (tests/data/special_reference.py).

use commtruth::special::{digamma, log_gamma, trigamma};

#[test]
fn matches_reference_grid() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/special_reference.csv");
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let v: Vec<f64> = rec.iter().map(|s| s.parse().unwrap()).collect();
        let x = v[0];
        // absolute below 1 in magnitude, relative above
        let close = |got: f64, want: f64| (got - want).abs() <= 1e-10 * want.abs().max(1.0);
        assert!(close(digamma(x).unwrap(), v[1]), "digamma({x})");
        assert!(close(log_gamma(x).unwrap(), v[2]), "log_gamma({x})");
        assert!(close(trigamma(x).unwrap(), v[3]), "trigamma({x})");
        n += 1;
    }
    assert_eq!(n, 200);
}
