//! End-to-end acceptance run: one verdict line per criterion, then a single assertion.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{close, coords_close, random_point, random_rotation};
use hgmt::beta::{beta1, carleson_sum_with, scale_grid, wgl_flags, CarlesonOptions};
use hgmt::cloud::{generate, GenParams, WeightedCloud};
use hgmt::corona::{
    audit_regions, build_stopping_regions, classify_families, classify_good_cubes, projection_ratio, GoodCubes, Region,
};
use hgmt::cubes::{audit_cube_axioms, build_cube_tree, default_tau_grid, enlarge, CubeTree};
use hgmt::graphify::{audit_graph, build_graph_model, GraphOptions};
use hgmt::param::{audit_bilipschitz_coverage, build_parametrization, check_embedding, ParamOptions};
use hgmt::{
    apply_rotation, dist_to_plane, group_mul, koranyi_dist, plane_angle, project, HPlane, HPoint, IsotropicFrame,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 0.05;
const DELTA: f64 = 0.1;
const ENLARGEMENT: f64 = 20.0;
const K0: f64 = 10.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Fixture {
    name: &'static str,
    cloud: WeightedCloud,
    tree: CubeTree,
    good: GoodCubes,
    regions: Vec<Region>,
    perturbed: bool,
    /// Plane or perturbed plane: the big-piece criterion applies.
    flat: bool,
    built_in: Duration,
}

fn fixture(name: &'static str, params: GenParams, perturbed: bool, flat: bool) -> Fixture {
    let t = Instant::now();
    let cloud = generate(&params, 0).unwrap();
    let tree = build_cube_tree(&cloud, 2.0, 0).unwrap();
    let good = classify_good_cubes(&tree, &cloud, EPS, ENLARGEMENT).unwrap();
    let regions = build_stopping_regions(&tree, &good, DELTA).unwrap();
    Fixture {
        name,
        cloud,
        tree,
        good,
        regions,
        perturbed,
        flat,
        built_in: t.elapsed(),
    }
}

fn metric_group_suite() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rotations: Vec<Vec<_>> = (1..=3).map(|n| (0..64).map(|_| random_rotation(n, &mut rng)).collect()).collect();
    let mut failures = 0usize;
    let instances = 100_000;
    for i in 0..instances {
        let n = 1 + i % 3;
        let x = random_point(n, 1.0, &mut rng);
        let y = random_point(n, 1.0, &mut rng);
        let z = random_point(n, 1.0, &mut rng);
        let r = &rotations[n - 1][rng.random_range(0..64)];
        let d = |a: &HPoint, b: &HPoint| koranyi_dist(a, b).unwrap();
        let (dxy, dyz, dxz) = (d(&x, &y), d(&y, &z), d(&x, &z));
        let mut ok = d(&x, &x) == 0.0 && dxy > 0.0;
        ok &= close(dxy, d(&y, &x), 1e-9);
        ok &= dxz <= (dxy + dyz) * (1.0 + 1e-9);
        ok &= close(d(&group_mul(&z, &x).unwrap(), &group_mul(&z, &y).unwrap()), dxy, 1e-9);
        let rx = apply_rotation(r, &x).unwrap();
        let ry = apply_rotation(r, &y).unwrap();
        ok &= close(d(&rx, &ry), dxy, 1e-9);
        let lhs = apply_rotation(r, &group_mul(&x, &y).unwrap()).unwrap();
        let rhs = group_mul(&rx, &ry).unwrap();
        ok &= coords_close(&lhs, &rhs, 1e-9);
        if !ok {
            failures += 1;
        }
    }
    let el = t.elapsed();
    verdict(
        failures == 0 && el < Duration::from_secs(10),
        format!("{instances} instances in H1-H3, {failures} failures, {:.2}s", el.as_secs_f64()),
    )
}

fn random_plane<R: Rng>(n: usize, k: usize, rng: &mut R) -> HPlane {
    HPlane::new(random_point(n, 1.0, rng), IsotropicFrame::random(n, k, rng).unwrap()).unwrap()
}

fn projection_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut idem, mut lip, mut base, mut sandwich) = (0, 0, 0, 0);
    let mut worst_sandwich: f64 = 0.0;
    let cases = 10_000;
    for i in 0..cases {
        let n = 1 + i % 3;
        let k = 1 + rng.random_range(0..n);
        let v = random_plane(n, k, &mut rng);
        let x = random_point(n, 2.0, &mut rng);
        let y = random_point(n, 2.0, &mut rng);
        let px = project(&v, &x);
        if !coords_close(&project(&v, &px), &px, 1e-9) {
            idem += 1;
        }
        let py = project(&v, &y);
        if koranyi_dist(&px, &py).unwrap() > koranyi_dist(&x, &y).unwrap() * (1.0 + 1e-9) {
            lip += 1;
        }
        let u: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        if !coords_close(&project(&v.rebased(&u), &x), &px, 1e-9) {
            base += 1;
        }
        let to_p = koranyi_dist(&x, &px).unwrap();
        let to_plane = dist_to_plane(&x, &v).unwrap();
        if to_plane > 0.0 {
            worst_sandwich = worst_sandwich.max(to_p / to_plane);
        }
        if to_p > 3.0 * to_plane * (1.0 + 1e-6) {
            sandwich += 1;
        }
    }
    verdict(
        idem + lip + base + sandwich == 0,
        format!(
            "{cases} cases: idempotence {idem}, 1-Lipschitz {lip}, base dependence {base}, sandwich {sandwich} failures; worst d(x,Px)/dist = {worst_sandwich:.4}"
        ),
    )
}

/// Largest sampled `d(x,y)/d(P_W x, P_W y)` over pairs of `V`: half of the pairs are
/// Gaussian, the rest perturb the best difference found so far with shrinking noise.
fn angle_oracle<R: Rng>(v: &HPlane, w: &HPlane, pairs: usize, rng: &mut R) -> f64 {
    let k = v.k();
    let gauss = |rng: &mut R| -> Vec<f64> { (0..k).map(|_| rng.sample(rand_distr::StandardNormal)).collect() };
    let mut best: f64 = 1.0;
    let mut best_dir = gauss(rng);
    for i in 0..pairs {
        let a = gauss(rng);
        let b: Vec<f64> = if i < pairs / 2 {
            gauss(rng)
        } else {
            let spread = 0.5 * (1.0 - (i - pairs / 2) as f64 / (pairs / 2) as f64) + 1e-4;
            a.iter().zip(&best_dir).map(|(ai, di)| ai + di + spread * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
        };
        let (x, y) = (v.point_at(&a), v.point_at(&b));
        let num = koranyi_dist(&x, &y).unwrap();
        let den = koranyi_dist(&project(w, &x), &project(w, &y)).unwrap();
        if den > 0.0 && num / den > best {
            best = num / den;
            let diff: Vec<f64> = b.iter().zip(&a).map(|(p, q)| p - q).collect();
            let len = diff.iter().map(|t| t * t).sum::<f64>().sqrt();
            best_dir = diff.iter().map(|t| t / len).collect();
        }
    }
    best
}

fn angle_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut largest: f64 = 1.0;
    for i in 0..100 {
        let n = 1 + i % 3;
        let k = 1 + rng.random_range(0..n);
        let v = random_plane(n, k, &mut rng);
        let w = random_plane(n, k, &mut rng);
        let exact = plane_angle(&v, &w).unwrap();
        let sampled = angle_oracle(&v, &w, 10_000, &mut rng);
        largest = largest.max(exact);
        let rel = if exact.is_finite() { (exact - sampled).abs() / exact } else { 0.0 };
        worst = worst.max(rel);
        if rel > 0.01 {
            failures += 1;
        }
    }
    verdict(
        failures == 0,
        format!("100 plane pairs, {failures} outside 1%, worst relative gap {worst:.2e}, largest angle {largest:.2}"),
    )
}

fn cube_suite() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, params) in [
        ("plane", GenParams::plane(2, 2, 0.01, 1.0)),
        ("perturbed", GenParams::perturbed_plane(2, 2, 0.01, 1.0, 0.005)),
    ] {
        let mut ds = Vec::new();
        let mut slowest = Duration::ZERO;
        let mut exact = true;
        for seed in 0..5 {
            let cloud = generate(&params, seed).unwrap();
            let t = Instant::now();
            let tree = build_cube_tree(&cloud, 2.0, seed).unwrap();
            slowest = slowest.max(t.elapsed());
            let a = audit_cube_axioms(&tree, &cloud, &default_tau_grid());
            exact &= a.exact_ok() && cloud.len() >= 10_000;
            ds.push(a.sizes.d_audit);
        }
        let mut sorted = ds.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[2];
        let stable = ds.iter().all(|d| d.is_finite() && (d - median).abs() <= 0.1 * median);
        let ok = exact && stable && slowest < Duration::from_secs(60);
        pass &= ok;
        lines.push(format!(
            "{name}: exact={exact} D_audit={:?} slowest build {:.2}s",
            ds.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            slowest.as_secs_f64()
        ));
    }
    verdict(pass, lines.join("; "))
}

fn beta_suite() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    for params in [GenParams::plane(1, 1, 0.01, 1.0), GenParams::plane(2, 2, 0.05, 1.0)] {
        let cloud = generate(&params, 0).unwrap();
        let res = cloud.resolution();
        let (scales, _) = scale_grid(0.5 * cloud.diameter(), res, 2);
        let mut probes = 0;
        let mut over = 0;
        for j in 0..16 {
            let x = cloud.point(j * cloud.len() / 16);
            for &t in &scales {
                probes += 1;
                if beta1(&cloud, x, t).unwrap() > 2.0 * res / t {
                    over += 1;
                }
            }
        }
        let opts = CarlesonOptions {
            max_centers: Some(64),
            ..CarlesonOptions::default()
        };
        let z = HPoint::origin(params.n);
        let sums: Vec<_> = [0.25, 0.5, 1.0]
            .iter()
            .map(|f| carleson_sum_with(&cloud, &z, f * cloud.diameter(), &opts).unwrap())
            .collect();
        let floor = sums.iter().map(|s| s.floor_estimate).fold(0.0, f64::max);
        let below = sums.iter().all(|s| s.normalized_sum <= s.floor_estimate);
        let spread = sums.iter().map(|s| s.normalized_sum).fold(0.0, f64::max)
            - sums.iter().map(|s| s.normalized_sum).fold(f64::INFINITY, f64::min);
        let ok = over == 0 && below && spread <= floor;
        pass &= ok;
        notes.push(format!(
            "plane k={}: {over}/{probes} probes above 2res/t, sums {:?} floor {floor:.3e}",
            params.k,
            sums.iter().map(|s| format!("{:.2e}", s.normalized_sum)).collect::<Vec<_>>()
        ));
    }

    let (l1, l2) = (0.1, 2.0);
    for params in [GenParams::two_planes(1, 1, 0.01, 1.0, 2.0), GenParams::two_planes(2, 2, 0.02, 1.0, 2.0)] {
        let cloud = generate(&params, 0).unwrap();
        let tree = build_cube_tree(&cloud, 2.0, 0).unwrap();
        let v = params.base_plane().unwrap();
        let w = params.second_plane().unwrap();
        let flags = wgl_flags(&tree, &cloud, l1, l2, tree.roots()[0]).unwrap();
        let mut flagged = 0;
        let mut oracle = 0;
        let mut off_seam = 0;
        for f in &flags {
            let set = enlarge(&tree, &cloud, f.id, l2).unwrap();
            let pts: Vec<&HPoint> = set.iter().map(|&i| cloud.point(i)).collect();
            let diam = pts
                .iter()
                .flat_map(|a| pts.iter().map(move |b| koranyi_dist(a, b).unwrap()))
                .fold(0.0, f64::max);
            let from_v = pts.iter().map(|y| dist_to_plane(y, &v).unwrap()).fold(0.0, f64::max);
            let from_w = pts.iter().map(|y| dist_to_plane(y, &w).unwrap()).fold(0.0, f64::max);
            let straddles = diam > 0.0 && from_v.min(from_w) > l1 * diam;
            if straddles {
                oracle += 1;
            }
            if f.flagged {
                flagged += 1;
                if from_v.min(from_w) == 0.0 {
                    off_seam += 1;
                }
            }
        }
        let count = hgmt::wgl_count(&tree, &cloud, l1, l2, tree.roots()[0]).unwrap();
        let plane = generate(&GenParams::plane(params.n, params.k, params.resolution, 1.0), 0).unwrap();
        let plane_tree = build_cube_tree(&plane, 2.0, 0).unwrap();
        let plane_count = hgmt::wgl_count(&plane_tree, &plane, l1, l2, plane_tree.roots()[0]).unwrap();
        let matched = (flagged as f64 - oracle as f64).abs() <= 0.2 * oracle as f64;
        let ok = count > 0.0 && plane_count == 0.0 && off_seam == 0 && matched;
        pass &= ok;
        notes.push(format!(
            "two_planes k={}: wgl {count:.3} (plane {plane_count}), flagged {flagged} vs seam oracle {oracle}, {off_seam} flagged off the seam",
            params.k
        ));
    }
    verdict(pass, notes.join("; "))
}

fn corona_suite(fixtures: &mut [Fixture]) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for f in fixtures.iter_mut() {
        let families = classify_families(&mut f.regions, &f.tree, &f.cloud);
        let audit = audit_regions(&f.regions, &f.good, &f.tree, &f.cloud, DELTA).unwrap();
        let mut ok = families.is_ok() && audit.violations() == 0;
        let mut ratio: f64 = 1.0;
        if f.perturbed {
            for r in &f.regions {
                let p = projection_ratio(r, &f.tree, &f.cloud, f.tree.d_audit, K0, 2000, 0).unwrap();
                ratio = ratio.max(p.max_ratio);
            }
            ok &= ratio <= 1.0 + 3.0 * DELTA;
        }
        pass &= ok;
        notes.push(format!(
            "{}: {} regions, {} violations{}",
            f.name,
            f.regions.len(),
            audit.violations(),
            if f.perturbed { format!(", projection ratio {ratio:.4}") } else { String::new() }
        ));
    }
    verdict(pass, notes.join("; "))
}

/// Approximation constants from the first trusted run, per perturbed fixture and region.
const FROZEN_APPROXIMATION: &[(&str, usize, f64)] = &[("perturbed_2d", 0, 1.010625e-2), ("perturbed_1d", 0, 8.937598e-3)];

fn graph_suite(fixtures: &[Fixture]) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let opts = GraphOptions::default();
    for f in fixtures.iter().filter(|f| f.perturbed) {
        for r in f.regions.iter().filter(|r| r.members.len() > 1) {
            let model = build_graph_model(r, &f.tree, &f.cloud, &f.good, &opts).unwrap();
            let a = audit_graph(&model, r, &f.tree, &f.cloud, 2000, 0).unwrap();
            let frozen = FROZEN_APPROXIMATION
                .iter()
                .find(|(name, id, _)| *name == f.name && *id == r.id)
                .map(|x| x.2);
            let regress = frozen.is_none_or(|c| (a.approximation_constant - c).abs() <= 1e-5 * c.max(1e-12));
            let ok = a.lipschitz <= 0.5 && a.approximation_constant.is_finite() && regress;
            pass &= ok;
            notes.push(format!(
                "{} region {}: Lip {:.3e}, C {:.6e}{}",
                f.name,
                r.id,
                a.lipschitz,
                a.approximation_constant,
                if frozen.is_some() { "" } else { " (not frozen)" }
            ));
        }
    }
    verdict(pass, notes.join("; "))
}

fn big_piece_suite(fixtures: &[Fixture]) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for f in fixtures.iter().filter(|f| f.flat) {
        let z = HPoint::origin(f.cloud.n());
        for r in [0.25, 0.5] {
            let t = Instant::now();
            let run = || {
                let p = build_parametrization(&f.cloud, &f.tree, &f.good, &f.regions, &z, r, &ParamOptions::default()).unwrap();
                let a = audit_bilipschitz_coverage(&p, &f.cloud, 10_000, 0).unwrap();
                (serde_json::to_string(&p).unwrap(), a, check_embedding(&p, &f.tree, &f.cloud))
            };
            let (json1, a, embedding) = run();
            let total = f.built_in + t.elapsed();
            let (json2, b, _) = run();
            let bit_exact = json1 == json2
                && a.bilip_lower.to_bits() == b.bilip_lower.to_bits()
                && a.bilip_upper.to_bits() == b.bilip_upper.to_bits()
                && a.coverage_ratio.to_bits() == b.coverage_ratio.to_bits();
            let ok = a.coverage_ratio <= 0.5
                && a.bilip_lower > 0.0
                && a.bilip_upper.is_finite()
                && bit_exact
                && embedding.nesting_violations + embedding.separation_violations + embedding.side_law_violations == 0
                && (f.cloud.len() < 10_000 || total < Duration::from_secs(300));
            pass &= ok;
            notes.push(format!(
                "{} r={r}: coverage {:.4}, bilip [{:.4e}, {:.4e}], reproducible={bit_exact}, pipeline {:.1}s",
                f.name,
                a.coverage_ratio,
                a.bilip_lower,
                a.bilip_upper,
                total.as_secs_f64()
            ));
        }
    }
    verdict(pass, notes.join("; "))
}

#[test]
fn acceptance_criteria() {
    let mut out = std::io::stderr().lock();
    let mut report = |i: usize, name: &str, v: &Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {i} [{tag}] {name}: {}", v.detail).unwrap();
        v.pass
    };
    let mut all = true;
    all &= report(1, "metric and group", &metric_group_suite());
    all &= report(2, "projections", &projection_suite());
    all &= report(3, "angle oracle", &angle_suite());
    all &= report(4, "cube axioms", &cube_suite());
    all &= report(5, "beta calibration", &beta_suite());

    let mut fixtures = vec![
        fixture("plane", GenParams::plane(2, 2, 0.01, 1.0), false, true),
        fixture("two_planes", GenParams::two_planes(1, 1, 0.01, 1.0, 2.0), false, false),
        fixture("corner", GenParams::corner_set(1, 1, 0.01, 1.0, 2.0), false, false),
        fixture("perturbed_2d", GenParams::perturbed_plane(2, 2, 0.01, 1.0, 0.005), true, true),
        fixture("perturbed_1d", GenParams::perturbed_plane(1, 1, 1e-4, 1.0, 0.002), true, true),
    ];
    all &= report(6, "corona audit", &corona_suite(&mut fixtures));
    all &= report(7, "graph audits", &graph_suite(&fixtures));
    all &= report(8, "big pieces", &big_piece_suite(&fixtures));
    assert!(all, "some acceptance criteria failed; see the lines above");
}
