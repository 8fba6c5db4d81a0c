//! Central finite-difference gradient checks.

/// Largest relative discrepancy between `analytic` and the central
/// difference of `f` with step `h`. Entries where both are below `floor`
/// in magnitude are compared absolutely against `floor`.
pub fn max_rel_error<F: FnMut(&[f64]) -> f64>(x: &[f64], analytic: &[f64], h: f64, floor: f64, mut f: F) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}
