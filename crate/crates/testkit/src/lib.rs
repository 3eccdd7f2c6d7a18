//! Reference oracles and randomized property checks for `ces-core`.

use ces_core::{Point, VehicleParams};

pub mod oracles;
pub mod props;

/// Vehicle with the maze mass and gravity; traction force is
/// `traction_ratio · μ m g`.
pub fn vehicle(mu: f64, traction_ratio: f64, r_min: f64) -> VehicleParams {
    let m = 833.0;
    VehicleParams::new(m, mu, 9.81, traction_ratio * mu * m * 9.81, r_min).unwrap()
}

/// Smooth wavy path from x = 0 to x = `length`, flat at both ends.
pub fn wavy(length: f64, amp: f64, waves: f64, phase: f64, n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            let envelope = (std::f64::consts::PI * t).sin().powi(2);
            Point::new(length * t, amp * envelope * (std::f64::consts::TAU * waves * t + phase).sin())
        })
        .collect()
}

/// `n` samples of `f` over `[0, 1]`.
pub fn sample_path(f: impl Fn(f64) -> Point, n: usize) -> Vec<Point> {
    (0..n).map(|k| f(k as f64 / (n - 1) as f64)).collect()
}
