//! Browser demo: distances in H¹, β₁ profiles and stopping-time regions of small clouds.

use hgmt::beta::{beta1, scale_grid};
use hgmt::cloud::{generate, CloudKind, GenParams, WeightedCloud};
use hgmt::corona::{build_stopping_regions, classify_families, classify_good_cubes};
use hgmt::cubes::build_cube_tree;
use hgmt::{group_mul, koranyi_dist, HPoint};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const RESOLUTION: f64 = 0.02;

#[derive(Serialize)]
struct Product {
    distance: f64,
    product: Vec<f64>,
}

#[derive(Serialize)]
struct Profile {
    points: Vec<Vec<f64>>,
    center: usize,
    scales: Vec<f64>,
    betas: Vec<f64>,
    /// `2·resolution/t`, the sampling bound for a flat cloud.
    bounds: Vec<f64>,
}

#[derive(Serialize)]
struct Regions {
    points: Vec<Vec<f64>>,
    cubes: usize,
    good: usize,
    regions: usize,
    families: Vec<String>,
    /// Region of the smallest member cube holding each point, or -1.
    point_region: Vec<i64>,
}

fn point(c: &[f64]) -> Result<HPoint, String> {
    HPoint::from_coords(c).map_err(|e| e.to_string())
}

fn cloud(kind: &str, amplitude: f64, seed: u64) -> Result<WeightedCloud, String> {
    let kind: CloudKind = kind.parse().map_err(|e: hgmt::Error| e.to_string())?;
    let params = GenParams {
        kind,
        amplitude,
        ..GenParams::plane(1, 1, RESOLUTION, 1.0)
    };
    generate(&params, seed).map_err(|e| e.to_string())
}

fn coords(c: &WeightedCloud) -> Vec<Vec<f64>> {
    c.points().iter().map(|p| p.coords()).collect()
}

/// Korányi distance and group product of two points of H¹ given as `[x, y, t]`.
pub fn product_json(x: &[f64], y: &[f64]) -> Result<String, String> {
    let (a, b) = (point(x)?, point(y)?);
    let distance = koranyi_dist(&a, &b).map_err(|e| e.to_string())?;
    let product = group_mul(&a, &b).map_err(|e| e.to_string())?.coords();
    serde_json::to_string(&Product { distance, product }).map_err(|e| e.to_string())
}

/// β₁ at the cloud point nearest the origin, over a dyadic range of scales.
pub fn profile_json(kind: &str, amplitude: f64, seed: u64) -> Result<String, String> {
    let c = cloud(kind, amplitude, seed)?;
    let origin = HPoint::origin(1);
    let center = (0..c.len())
        .min_by(|&i, &j| {
            let di = koranyi_dist(c.point(i), &origin).unwrap_or(f64::INFINITY);
            let dj = koranyi_dist(c.point(j), &origin).unwrap_or(f64::INFINITY);
            di.total_cmp(&dj)
        })
        .ok_or("empty cloud")?;
    let (scales, _) = scale_grid(0.5, RESOLUTION, 2);
    let mut betas = Vec::with_capacity(scales.len());
    for &t in &scales {
        betas.push(beta1(&c, c.point(center), t).map_err(|e| e.to_string())?);
    }
    let bounds = scales.iter().map(|t| 2.0 * RESOLUTION / t).collect();
    serde_json::to_string(&Profile {
        points: coords(&c),
        center,
        scales,
        betas,
        bounds,
    })
    .map_err(|e| e.to_string())
}

/// Good cubes and stopping-time regions for the given flatness and angle thresholds.
pub fn regions_json(kind: &str, amplitude: f64, eps: f64, delta: f64, seed: u64) -> Result<String, String> {
    let c = cloud(kind, amplitude, seed)?;
    let tree = build_cube_tree(&c, 2.0, seed).map_err(|e| e.to_string())?;
    let good = classify_good_cubes(&tree, &c, eps, 20.0).map_err(|e| e.to_string())?;
    let mut regions = build_stopping_regions(&tree, &good, delta).map_err(|e| e.to_string())?;
    classify_families(&mut regions, &tree, &c).map_err(|e| e.to_string())?;
    let mut region_of = vec![-1i64; tree.len()];
    for r in &regions {
        for &q in &r.members {
            region_of[q] = r.id as i64;
        }
    }
    let point_region = (0..c.len())
        .map(|i| {
            (tree.bottom_level..=tree.top_level)
                .filter_map(|j| tree.owner(j, i))
                .map(|q| region_of[q])
                .find(|&r| r >= 0)
                .unwrap_or(-1)
        })
        .collect();
    serde_json::to_string(&Regions {
        points: coords(&c),
        cubes: tree.len(),
        good: good.cubes.iter().filter(|q| q.is_good).count(),
        regions: regions.len(),
        families: regions.iter().map(|r| r.family.map(|f| format!("{f:?}")).unwrap_or_default()).collect(),
        point_region,
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn product(x: Vec<f64>, y: Vec<f64>) -> Result<String, JsError> {
    product_json(&x, &y).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn beta_profile(kind: &str, amplitude: f64, seed: u32) -> Result<String, JsError> {
    profile_json(kind, amplitude, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stopping_regions(kind: &str, amplitude: f64, eps: f64, delta: f64, seed: u32) -> Result<String, JsError> {
    regions_json(kind, amplitude, eps, delta, seed as u64).map_err(|e| JsError::new(&e))
}
