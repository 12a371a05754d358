#![allow(dead_code)]

use keyview::geometry::Pose;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Camera walk: small random steps in position and yaw, mild pitch/roll.
pub fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
    let mut pos = Vector3::zeros();
    let mut yaw: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (0..n)
        .map(|i| {
            pos += Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.05..0.05));
            yaw += rng.random_range(-0.5..0.5);
            let rot = UnitQuaternion::from_euler_angles(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), yaw);
            Pose { frame_id: i, rotation: rot, translation: pos }
        })
        .collect()
}

/// Prints the one-line verdict for an acceptance criterion and fails the
/// test when it does not hold.
pub fn verdict(id: &str, ok: bool, detail: String) {
    println!("{id} {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id} failed: {detail}");
}
