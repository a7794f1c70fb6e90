#![allow(dead_code)]

use hgmt::{HPoint, Rotation};
use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_point<R: Rng>(n: usize, scale: f64, rng: &mut R) -> HPoint {
    let c: Vec<f64> = (0..2 * n + 1).map(|_| rng.random_range(-scale..scale)).collect();
    HPoint::from_coords(&c).unwrap()
}

/// Real form of the unitary factor of a complex Gaussian matrix.
pub fn random_rotation<R: Rng>(n: usize, rng: &mut R) -> Rotation {
    let g = DMatrix::<Complex<f64>>::from_fn(n, n, |_, _| Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let q = g.qr().q();
    let re = q.map(|z| z.re);
    let im = q.map(|z| z.im);
    Rotation::from_unitary(&re, &im).unwrap()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Coordinatewise agreement; the vertical coordinate scales with the square of the norm.
pub fn coords_close(a: &HPoint, b: &HPoint, rel: f64) -> bool {
    let scale = a.norm().max(b.norm()).max(1.0);
    let horizontal = a.horizontal().iter().zip(b.horizontal()).all(|(x, y)| (x - y).abs() <= rel * scale);
    horizontal && (a.vertical() - b.vertical()).abs() <= rel * scale * scale
}
