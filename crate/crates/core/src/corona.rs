//! Good cubes, stopping-time regions, minimal-cube labels and family classification.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta::{beta1_with, fit_points, FitMode, FitOptions};
use crate::cloud::WeightedCloud;
use crate::cubes::{enlarge, CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::hgroup::{dist, HPoint};
use crate::hplanes::{plane_angle, project, HPlane, IsotropicFrame, PlaneDistance};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodCubeInfo {
    pub id: CubeId,
    /// Best sup-plane of the enlarged cube.
    pub plane: HPlane,
    /// Sup distance of the enlarged cube to `plane`, over `d(Q)`.
    pub flatness: f64,
    pub is_good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodCubes {
    pub eps: f64,
    pub enlargement: f64,
    /// Indexed by cube id.
    pub cubes: Vec<GoodCubeInfo>,
}

impl GoodCubes {
    pub fn is_good(&self, id: CubeId) -> bool {
        self.cubes[id].is_good
    }

    pub fn plane(&self, id: CubeId) -> &HPlane {
        &self.cubes[id].plane
    }

    /// Same fits, different threshold.
    pub fn with_eps(&self, eps: f64) -> GoodCubes {
        let mut out = self.clone();
        out.eps = eps;
        for c in &mut out.cubes {
            c.is_good = c.flatness <= eps * eps;
        }
        out
    }
}

/// Fits a sup-plane to `enlarge(Q, K)` for every cube and marks `Q` good when the
/// enlarged cube lies within `ε²·d(Q)` of it.
pub fn classify_good_cubes(tree: &CubeTree, cloud: &WeightedCloud, eps: f64, enlargement: f64) -> Result<GoodCubes> {
    classify_good_cubes_with(tree, cloud, eps, enlargement, &FitOptions::screening())
}

pub fn classify_good_cubes_with(
    tree: &CubeTree,
    cloud: &WeightedCloud,
    eps: f64,
    enlargement: f64,
    fit: &FitOptions,
) -> Result<GoodCubes> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0,1), got {eps}")));
    }
    if !(enlargement > 1.0) || !enlargement.is_finite() {
        return Err(Error::InvalidArgument(format!("enlargement must exceed 1, got {enlargement}")));
    }
    let k = cloud.k();
    let mut slots: Vec<Option<GoodCubeInfo>> = vec![None; tree.len()];
    for (_, ids) in tree.levels.iter().rev() {
        let done = &slots;
        let infos: Vec<Result<GoodCubeInfo>> = par::map(ids, |&id| {
            let q = tree.cube(id)?;
            let set = enlarge(tree, cloud, id, enlargement)?;
            let pts: Vec<&HPoint> = set.iter().map(|&i| cloud.point(i)).collect();
            let (plane, sup) = if set.len() > k {
                let w: Vec<f64> = set.iter().map(|&i| cloud.weights()[i]).collect();
                // the search only has to settle which side of ε²·d(Q) the cube is on
                let limit = eps * eps * q.diameter;
                let opts = FitOptions {
                    accept_below: Some(0.25 * limit),
                    reject_above: Some(limit),
                    ..*fit
                };
                let f = fit_points(&pts, &w, k, FitMode::Linf, &opts)?;
                (f.plane, f.cost)
            } else {
                // too few points to pin a plane down: inherit the parent's directions
                let frame = match q.parent {
                    Some(p) => done[p]
                        .as_ref()
                        .map(|g| g.plane.frame().clone())
                        .ok_or_else(|| Error::Internal("parent classified after child".into()))?,
                    None => IsotropicFrame::standard(cloud.n(), k)?,
                };
                let plane = HPlane::new(pts[0].clone(), frame)?;
                let mut pd = PlaneDistance::new(&plane);
                let mut sup: f64 = 0.0;
                for p in &pts {
                    sup = sup.max(pd.eval(p)?);
                }
                (plane, sup)
            };
            let flatness = if q.diameter > 0.0 {
                sup / q.diameter
            } else if sup == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            Ok(GoodCubeInfo {
                id,
                plane,
                flatness,
                is_good: flatness <= eps * eps,
            })
        });
        for info in infos {
            let info = info?;
            let id = info.id;
            slots[id] = Some(info);
        }
    }
    let cubes = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::Internal(format!("cube {i} missing from level index"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(GoodCubes {
        eps,
        enlargement,
        cubes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    F1,
    F2,
    F3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMasses {
    pub top: f64,
    pub m1: f64,
    pub m2: f64,
    /// Mass of the top cube outside every minimal cube.
    pub complement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    /// Top-level cube of the forest this region grew in.
    pub root: CubeId,
    pub top: CubeId,
    /// Sorted cube ids.
    pub members: Vec<CubeId>,
    pub reference_plane: HPlane,
    /// Minimal cubes with a child that is not good.
    pub m1: Vec<CubeId>,
    /// The other minimal cubes, including those at the bottom of the tree.
    pub m2: Vec<CubeId>,
    /// Minimal cubes without children (subset of `m2`).
    pub floor: Vec<CubeId>,
    pub family: Option<Family>,
    pub masses: Option<FamilyMasses>,
}

impl Region {
    pub fn contains(&self, id: CubeId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    pub fn minimal(&self) -> impl Iterator<Item = CubeId> + '_ {
        self.m1.iter().chain(&self.m2).copied()
    }
}

fn children_admissible(tree: &CubeTree, good: &GoodCubes, q: CubeId, reference: &HPlane, delta: f64) -> Result<(bool, bool)> {
    let cube = tree.cube(q)?;
    let all_good = cube.children.iter().all(|&c| good.is_good(c));
    if !all_good {
        return Ok((false, false));
    }
    for &c in &cube.children {
        if plane_angle(good.plane(c), reference)? > 1.0 + delta {
            return Ok((true, false));
        }
    }
    Ok((true, true))
}

/// Greedy top-down decomposition of the good cubes under each root into regions.
pub fn build_stopping_regions(tree: &CubeTree, good: &GoodCubes, delta: f64) -> Result<Vec<Region>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    if good.cubes.len() != tree.len() {
        return Err(Error::InvalidArgument("good-cube table does not match the tree".into()));
    }
    let roots = tree.roots().to_vec();
    let per_root: Vec<Result<Vec<Region>>> = par::map(&roots, |&root| {
        let mut order = tree.subtree(root);
        order.sort_unstable();
        let mut assigned = HashSet::new();
        let mut out = Vec::new();
        for &q0 in &order {
            if !good.is_good(q0) || assigned.contains(&q0) {
                continue;
            }
            let reference = good.plane(q0).clone();
            let mut members = vec![q0];
            let (mut m1, mut m2, mut floor) = (Vec::new(), Vec::new(), Vec::new());
            let mut stack = vec![q0];
            while let Some(q) = stack.pop() {
                let cube = tree.cube(q)?;
                if cube.children.is_empty() {
                    m2.push(q);
                    floor.push(q);
                    continue;
                }
                match children_admissible(tree, good, q, &reference, delta)? {
                    (false, _) => m1.push(q),
                    (true, false) => m2.push(q),
                    (true, true) => {
                        for &c in &cube.children {
                            members.push(c);
                            stack.push(c);
                        }
                    }
                }
            }
            members.sort_unstable();
            m1.sort_unstable();
            m2.sort_unstable();
            floor.sort_unstable();
            assigned.extend(members.iter().copied());
            out.push(Region {
                id: 0,
                root,
                top: q0,
                members,
                reference_plane: reference,
                m1,
                m2,
                floor,
                family: None,
                masses: None,
            });
        }
        Ok(out)
    });
    let mut regions = Vec::new();
    for r in per_root {
        regions.extend(r?);
    }
    for (i, r) in regions.iter_mut().enumerate() {
        r.id = i;
    }
    Ok(regions)
}

/// Tags each region with the first family whose mass condition it meets.
pub fn classify_families(regions: &mut [Region], tree: &CubeTree, cloud: &WeightedCloud) -> Result<()> {
    for r in regions.iter_mut() {
        let top = tree.mass(cloud, r.top);
        let m1: f64 = r.m1.iter().map(|&q| tree.mass(cloud, q)).sum();
        let m2: f64 = r.m2.iter().map(|&q| tree.mass(cloud, q)).sum();
        let complement = (top - m1 - m2).max(0.0);
        let slack = 1e-12 * top;
        let family = if m1 >= top / 4.0 - slack {
            Family::F1
        } else if complement >= top / 4.0 - slack {
            Family::F2
        } else if m2 >= top / 2.0 - slack {
            Family::F3
        } else {
            return Err(Error::Internal(format!(
                "region {} fits no family: m1={m1} m2={m2} rest={complement} of {top}",
                r.id
            )));
        };
        r.family = Some(family);
        r.masses = Some(FamilyMasses { top, m1, m2, complement });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingRatio {
    pub root: CubeId,
    /// Mass of the non-good cubes below the root, over the root's mass.
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionAudit {
    /// Cubes in more than one region.
    pub disjointness: usize,
    /// Regions whose top is missing or does not contain every member.
    pub top: usize,
    /// Members with a non-member on the chain up to the top.
    pub convexity: usize,
    /// Members whose plane is too far from the reference plane.
    pub angle: usize,
    /// Non-minimal members whose children should all have been admitted but were not.
    pub admission: usize,
    /// Minimal cubes not matching the stopping condition, in either direction.
    pub minimality: usize,
    /// Recorded m1/m2/floor labels that disagree with the members.
    pub labels: usize,
    /// Good cubes left outside every region.
    pub uncovered: usize,
    pub max_angle: f64,
    pub packing: Vec<PackingRatio>,
}

impl RegionAudit {
    pub fn violations(&self) -> usize {
        self.disjointness + self.top + self.convexity + self.angle + self.admission + self.minimality + self.labels + self.uncovered
    }
}

/// Re-checks the region conditions from scratch.
pub fn audit_regions(
    regions: &[Region],
    good: &GoodCubes,
    tree: &CubeTree,
    cloud: &WeightedCloud,
    delta: f64,
) -> Result<RegionAudit> {
    let mut a = RegionAudit::default();
    let mut owner: Vec<Option<usize>> = vec![None; tree.len()];
    for (ri, r) in regions.iter().enumerate() {
        for &q in &r.members {
            tree.cube(q)?;
            match owner[q] {
                Some(_) => a.disjointness += 1,
                None => owner[q] = Some(ri),
            }
        }
    }
    for r in regions {
        if !r.contains(r.top) || r.members.iter().any(|&q| !tree.is_ancestor_or_self(r.top, q)) {
            a.top += 1;
        }
        let mut has_lower = HashSet::new();
        for &q in &r.members {
            let mut cur = tree.cube(q)?.parent;
            while let Some(p) = cur {
                if !has_lower.insert(p) {
                    break;
                }
                cur = tree.cube(p)?.parent;
            }
        }
        let mut computed_min: Vec<CubeId> = r.members.iter().copied().filter(|q| !has_lower.contains(q)).collect();
        for &q in &r.members {
            if tree.is_ancestor_or_self(r.top, q) {
                let mut cur = q;
                while cur != r.top {
                    match tree.cube(cur)?.parent {
                        Some(p) => {
                            if !r.contains(p) {
                                a.convexity += 1;
                                break;
                            }
                            cur = p;
                        }
                        None => break,
                    }
                }
            }
            let ang = plane_angle(good.plane(q), &r.reference_plane)?;
            a.max_angle = a.max_angle.max(ang);
            if ang > 1.0 + delta {
                a.angle += 1;
            }
            let cube = tree.cube(q)?;
            let (all_good, all_close) = children_admissible(tree, good, q, &r.reference_plane, delta)?;
            let stops = !all_good || !all_close;
            let is_min = !cube.children.iter().any(|c| r.contains(*c));
            if all_good && all_close && !cube.children.iter().all(|c| r.contains(*c)) {
                a.admission += 1;
            }
            if !cube.children.is_empty() && is_min != stops {
                a.minimality += 1;
            }
        }
        computed_min.sort_unstable();
        let mut recorded: Vec<CubeId> = r.minimal().collect();
        recorded.sort_unstable();
        if recorded != computed_min {
            a.labels += 1;
        }
        for &q in &r.m1 {
            if tree.cube(q)?.children.iter().all(|&c| good.is_good(c)) {
                a.labels += 1;
            }
        }
        for &q in &r.m2 {
            let cube = tree.cube(q)?;
            if !cube.children.iter().all(|&c| good.is_good(c)) {
                a.labels += 1;
            }
            if cube.children.is_empty() != r.floor.binary_search(&q).is_ok() {
                a.labels += 1;
            }
        }
    }
    for &root in tree.roots() {
        let sub = tree.subtree(root);
        let mut bad = 0.0;
        for &q in &sub {
            if good.is_good(q) {
                if owner[q].is_none() {
                    a.uncovered += 1;
                }
            } else {
                bad += tree.mass(cloud, q);
            }
        }
        a.packing.push(PackingRatio {
            root,
            ratio: bad / tree.mass(cloud, root),
        });
    }
    Ok(a)
}

/// Repeated evaluation of `h_S(x) = min_Q d(x, Q) + d(Q)` over the cubes of a region.
pub struct RegionDistance<'a> {
    tree: &'a CubeTree,
    cloud: &'a WeightedCloud,
    cubes: Vec<(CubeId, f64)>,
}

impl<'a> RegionDistance<'a> {
    pub fn new(region: &Region, tree: &'a CubeTree, cloud: &'a WeightedCloud) -> Self {
        let pts = cloud.points();
        let cubes = region
            .members
            .iter()
            .map(|&id| {
                let q = &tree.cubes[id];
                let c = &pts[q.center_idx];
                let rad = q.members.iter().map(|&i| dist(&pts[i], c)).fold(0.0, f64::max);
                (id, rad)
            })
            .collect();
        RegionDistance { tree, cloud, cubes }
    }

    pub fn h(&self, x: &HPoint) -> f64 {
        let pts = self.cloud.points();
        let mut cand: Vec<(f64, usize)> = self
            .cubes
            .iter()
            .enumerate()
            .map(|(j, &(id, rad))| {
                let q = &self.tree.cubes[id];
                ((dist(x, &pts[q.center_idx]) - rad).max(0.0) + q.diameter, j)
            })
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut best = f64::INFINITY;
        for (lb, j) in cand {
            if lb >= best {
                break;
            }
            let q = &self.tree.cubes[self.cubes[j].0];
            let reach = best - q.diameter;
            let hit = self
                .cloud
                .index()
                .nearest_filtered(pts, x, reach, |i| self.tree.owner(q.level, i) == Some(q.id));
            if let Some((_, d)) = hit {
                best = best.min(d + q.diameter);
            }
        }
        best
    }
}

pub fn region_h(region: &Region, cloud: &WeightedCloud, tree: &CubeTree, x: &HPoint) -> Result<f64> {
    if region.members.is_empty() {
        return Err(Error::InvalidArgument("empty region".into()));
    }
    crate::error::check_dim(cloud.n(), x.n())?;
    Ok(RegionDistance::new(region, tree, cloud).h(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRatio {
    pub region: usize,
    pub max_ratio: f64,
    pub pairs_tested: usize,
}

/// Largest `d(x,y) / d(Px, Py)` over sampled pairs of `K₀Q(S)` that are far apart
/// relative to `h_S`, with `P` the projection onto the reference plane.
pub fn projection_ratio(
    region: &Region,
    tree: &CubeTree,
    cloud: &WeightedCloud,
    d_audit: f64,
    k0: f64,
    max_pairs: usize,
    seed: u64,
) -> Result<ProjectionRatio> {
    let set = enlarge(tree, cloud, region.top, k0)?;
    let rd = RegionDistance::new(region, tree, cloud);
    let pts = cloud.points();
    let hs: Vec<f64> = par::map(&set, |&i| rd.h(&pts[i]));
    let proj: Vec<HPoint> = set.iter().map(|&i| project(&region.reference_plane, &pts[i])).collect();
    let m = set.len();
    let total_pairs = m * m.saturating_sub(1) / 2;
    let mut pairs = Vec::new();
    if total_pairs <= max_pairs {
        for a in 0..m {
            for b in a + 1..m {
                pairs.push((a, b));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while pairs.len() < max_pairs {
            let a = rng.random_range(0..m);
            let b = rng.random_range(0..m);
            if a != b {
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }
    let thresh = 1.0 / (d_audit * d_audit);
    let mut max_ratio: f64 = 1.0;
    let mut tested = 0;
    for (a, b) in pairs {
        let dxy = dist(&pts[set[a]], &pts[set[b]]);
        if !(dxy > thresh * hs[a].min(hs[b])) {
            continue;
        }
        tested += 1;
        let dp = dist(&proj[a], &proj[b]);
        let ratio = if dp > 0.0 { dxy / dp } else { f64::INFINITY };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(ProjectionRatio {
        region: region.id,
        max_ratio,
        pairs_tested: tested,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareFunctionCheck {
    pub region: usize,
    /// `∫_{K₀Q(S)} ∫_{h/K₀}^{K₀ d(Q(S))} β₁(x, K₀t)² dt/t dμ`, estimated.
    pub lhs: f64,
    /// `ε^{6k+1} μ(Q(S))`.
    pub rhs: f64,
    pub centers: usize,
}

/// Both sides of the square-function lower bound for an F3 region; `x` ranges over at
/// most `max_centers` evenly spaced points with mass rescaled, `t` over a half-octave grid.
pub fn square_function_check(
    region: &Region,
    tree: &CubeTree,
    cloud: &WeightedCloud,
    eps: f64,
    k0: f64,
    max_centers: usize,
) -> Result<SquareFunctionCheck> {
    let set = enlarge(tree, cloud, region.top, k0)?;
    let centers: Vec<usize> = if max_centers > 0 && set.len() > max_centers {
        (0..max_centers).map(|j| set[j * set.len() / max_centers]).collect()
    } else {
        set.clone()
    };
    let rescale = cloud.mass_of(&set) / cloud.mass_of(&centers);
    let rd = RegionDistance::new(region, tree, cloud);
    let top_d = tree.cube(region.top)?.diameter;
    let res = cloud.resolution();
    let step = 2f64.sqrt();
    let dlog = step.ln();
    let parts: Vec<Result<f64>> = par::map(&centers, |&i| {
        let x = cloud.point(i);
        let lo = (rd.h(x) / k0).max(2.0 * res / k0);
        let hi = k0 * top_d;
        let mut acc = 0.0;
        let mut t = hi;
        while t >= lo {
            let b = beta1_with(cloud, x, k0 * t, &FitOptions::screening())?;
            acc += b * b * dlog;
            t /= step;
        }
        Ok(cloud.weights()[i] * acc)
    });
    let mut lhs = 0.0;
    for p in parts {
        lhs += p?;
    }
    Ok(SquareFunctionCheck {
        region: region.id,
        lhs: lhs * rescale,
        rhs: eps.powi(6 * cloud.k() as i32 + 1) * tree.mass(cloud, region.top),
        centers: centers.len(),
    })
}
