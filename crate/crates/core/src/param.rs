//! Bilipschitz parametrization of a big piece of the cloud inside a ball.
//!
//! Distinguished cubes (bad cubes, region tops, and the non-floor minimal cubes of
//! regions) get nested k-cubes in Rᵏ whose sides shrink by `c₁` per level of
//! nesting. A point is sent through the projection onto its region plane and a
//! similarity into the slot of the smallest distinguished cube holding it.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::WeightedCloud;
use crate::corona::{GoodCubes, Region};
use crate::cubes::{CubeId, CubeTree};
use crate::error::{check_dim, Error, Result};
use crate::hgroup::{dist, HPoint};
use crate::hplanes::HPlane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamOptions {
    /// Side ratio between nested slots; `1/(16 D³ √k)` when absent.
    pub c1: Option<f64>,
    /// Strip width factor.
    pub tau: f64,
    /// Deepest admitted nesting level.
    pub max_depth: usize,
    pub k0: f64,
    /// Coverage target.
    pub eta: f64,
}

impl Default for ParamOptions {
    fn default() -> Self {
        ParamOptions {
            c1: None,
            tau: 0.05,
            max_depth: 6,
            k0: 10.0,
            eta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConstants {
    pub c1: f64,
    pub tau: f64,
    pub max_depth: usize,
    pub k0: f64,
    pub eta: f64,
    pub d_audit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Bad,
    Top,
    Minimal,
}

/// The k-cube `t(Q)` and the similarity `φ_Q` into its middle half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub cube: CubeId,
    pub tier: Tier,
    /// Number of distinguished cubes strictly containing this one.
    pub depth: usize,
    pub parent: Option<CubeId>,
    /// Corner relative to the parent's corner (absolute for roots).
    pub offset: Vec<f64>,
    /// Absolute corner; deep slots are below its rounding, use `offset` for geometry.
    pub corner: Vec<f64>,
    pub side: f64,
    /// Plane whose projection feeds `φ_Q`.
    pub plane: HPlane,
    /// Plane coordinates sent to the slot center.
    pub anchor: Vec<f64>,
    /// `c₁^depth / (4D)`.
    pub ratio: f64,
}

impl Slot {
    pub fn center(&self) -> Vec<f64> {
        self.corner.iter().map(|c| c + self.side / 2.0).collect()
    }

    /// `φ_Q(P_W(x))` relative to the slot corner.
    fn local(&self, x: &HPoint) -> Vec<f64> {
        let u = self.plane.coords_of(x);
        u.iter()
            .zip(&self.anchor)
            .map(|(a, b)| self.side / 2.0 + self.ratio * (a - b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigPieceAudit {
    pub bilip_lower: f64,
    pub bilip_upper: f64,
    /// `mass(B(z,r) ∖ F) / rᵏ`.
    pub coverage_ratio: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Removed {
    pub strips: usize,
    pub deep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parametrization {
    pub center: HPoint,
    pub radius: f64,
    /// Sorted cloud indices of `F`.
    pub domain: Vec<usize>,
    /// `f(x)` for each entry of `domain`.
    pub images: Vec<Vec<f64>>,
    /// Smallest distinguished cube holding each domain point.
    pub owners: Vec<CubeId>,
    /// Image relative to the owner's slot corner.
    pub locals: Vec<Vec<f64>>,
    /// Slots in cube id order.
    pub embedding: Vec<Slot>,
    /// Root slots sit on a grid of pitch `3αᵐ⁰`.
    pub m0: i32,
    pub constants: ParamConstants,
    pub removed: Removed,
    pub audit: Option<BigPieceAudit>,
}

impl Parametrization {
    pub fn evaluate(&self, x: usize) -> Result<&[f64]> {
        self.domain
            .binary_search(&x)
            .map(|i| self.images[i].as_slice())
            .map_err(|_| Error::Domain(format!("point {x} is not in the parametrized piece")))
    }

    pub fn slot(&self, cube: CubeId) -> Option<&Slot> {
        self.embedding
            .binary_search_by_key(&cube, |s| s.cube)
            .ok()
            .map(|i| &self.embedding[i])
    }

    /// `|f(x) - f(y)|` for domain positions `a` and `b`, summed from the common
    /// ancestor slot down so that tiny deep slots keep their relative precision.
    pub fn image_gap(&self, a: usize, b: usize) -> f64 {
        let chain = |mut q: CubeId| -> Vec<&Slot> {
            let mut out = Vec::new();
            while let Some(s) = self.slot(q) {
                out.push(s);
                match s.parent {
                    Some(p) => q = p,
                    None => break,
                }
            }
            out.reverse();
            out
        };
        let (ca, cb) = (chain(self.owners[a]), chain(self.owners[b]));
        let common = ca.iter().zip(&cb).take_while(|(x, y)| x.cube == y.cube).count();
        let k = self.locals[a].len();
        let rel = |c: &[&Slot], local: &[f64]| -> Vec<f64> {
            let mut v = local.to_vec();
            for s in c.iter().rev() {
                for (vi, o) in v.iter_mut().zip(&s.offset) {
                    *vi += o;
                }
            }
            v
        };
        let va = rel(&ca[common..], &self.locals[a]);
        let vb = rel(&cb[common..], &self.locals[b]);
        (0..k).map(|i| (va[i] - vb[i]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Gap between two sibling slots.
fn box_gap(a: &Slot, b: &Slot) -> f64 {
    a.offset
        .iter()
        .zip(&b.offset)
        .map(|(x, y)| {
            let d = (y - (x + a.side)).max(x - (y + b.side)).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn nested(inner: &Slot, outer: &Slot) -> bool {
    let tol = 1e-12 * outer.side;
    inner.offset.iter().all(|o| *o >= -tol && o + inner.side <= outer.side + tol)
}

/// Required gap between sibling slots. Under a region top the slots follow the
/// projected centers, and the gap scales with the cubes themselves:
/// `c₁^{ℓ+1}(d(R₁)+d(R₂)+dist(R₁,R₂))`; elsewhere it is `c₁^{ℓ+1}α^{j_Q}`.
/// `have` lets the set distance be skipped when the cheap upper bound already passes.
#[allow(clippy::too_many_arguments)]
fn sibling_gap(
    tree: &CubeTree,
    cloud: &WeightedCloud,
    c1: f64,
    depth: usize,
    tier: Tier,
    parent: CubeId,
    a: CubeId,
    b: CubeId,
    have: f64,
) -> f64 {
    let f = c1.powi(depth as i32 + 1);
    if tier != Tier::Top {
        return f * tree.scale(tree.cubes[parent].level);
    }
    let (qa, qb) = (&tree.cubes[a], &tree.cubes[b]);
    let pts = cloud.points();
    let upper = dist(&pts[qa.center_idx], &pts[qb.center_idx]);
    let base = qa.diameter + qb.diameter;
    if have >= f * (base + upper) {
        return f * (base + upper);
    }
    let (small, large) = if qa.members.len() <= qb.members.len() { (qa, qb) } else { (qb, qa) };
    let mut best = upper;
    for &i in &small.members {
        if let Some((_, d)) = cloud
            .index()
            .nearest_filtered(pts, &pts[i], best, |j| tree.owner(large.level, j) == Some(large.id))
        {
            best = best.min(d);
        }
    }
    f * (base + best)
}

pub fn build_parametrization(
    cloud: &WeightedCloud,
    tree: &CubeTree,
    good: &GoodCubes,
    regions: &[Region],
    center: &HPoint,
    radius: f64,
    opts: &ParamOptions,
) -> Result<Parametrization> {
    check_dim(cloud.n(), center.n())?;
    let k = cloud.k();
    if !(radius > 0.0) || radius > cloud.diameter() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "radius {radius} must be positive and at most the cloud diameter {}",
            cloud.diameter()
        )));
    }
    if !(opts.tau >= 0.0) || !(opts.eta > 0.0) || !(opts.k0 >= 1.0) {
        return Err(Error::Config("param needs tau >= 0, eta > 0 and K0 >= 1".into()));
    }
    let d = tree.d_audit;
    if !(d >= 1.0) || !d.is_finite() {
        return Err(Error::Config(format!("cube tree has no usable size constant (D = {d})")));
    }
    let c1 = opts.c1.unwrap_or(1.0 / (16.0 * d.powi(3) * (k as f64).sqrt()));
    if !(c1 > 0.0 && c1 < 1.0) {
        return Err(Error::Config(format!("c1 = {c1} must lie in (0, 1)")));
    }
    let alpha = tree.alpha;

    let ball = cloud.ball(center, radius);
    let mut roots: Vec<CubeId> = ball.iter().filter_map(|&i| tree.owner(tree.top_level, i)).collect();
    roots.sort_unstable();
    roots.dedup();
    let root_set: HashSet<CubeId> = roots.iter().copied().collect();

    // distinguished cubes and their ambient regions
    let mut tier: BTreeMap<CubeId, (Tier, Option<usize>)> = BTreeMap::new();
    for (ri, r) in regions.iter().enumerate() {
        if !root_set.contains(&r.root) {
            continue;
        }
        tier.insert(r.top, (Tier::Top, Some(ri)));
        let floor: HashSet<CubeId> = r.floor.iter().copied().collect();
        for q in r.minimal() {
            if q != r.top && !floor.contains(&q) {
                tier.insert(q, (Tier::Minimal, Some(ri)));
            }
        }
    }
    for &root in &roots {
        for q in tree.subtree(root) {
            if !good.is_good(q) {
                tier.insert(q, (Tier::Bad, None));
            }
        }
    }

    // depth and distinguished parent, parents first since ids run top-down
    let mut parent_of: HashMap<CubeId, Option<CubeId>> = HashMap::new();
    let mut depth: HashMap<CubeId, usize> = HashMap::new();
    for &q in tier.keys() {
        let p = tree.ancestors(q).into_iter().find(|a| tier.contains_key(a));
        let l = p.map_or(0, |p| depth[&p] + 1);
        parent_of.insert(q, p);
        depth.insert(q, l);
    }
    let mut children: BTreeMap<CubeId, Vec<CubeId>> = BTreeMap::new();
    for (&q, p) in &parent_of {
        if let Some(p) = p {
            children.entry(*p).or_default().push(q);
        }
    }
    for v in children.values_mut() {
        v.sort_unstable();
    }

    let pts = cloud.points();
    let plane_of = |q: CubeId| -> HPlane {
        match tier[&q].1 {
            Some(ri) => regions[ri].reference_plane.clone(),
            None => good.plane(q).clone(),
        }
    };
    let make_slot = |q: CubeId, offset: Vec<f64>, base: &[f64], side: f64| -> Result<Slot> {
        let cube = tree.cube(q)?;
        let plane = plane_of(q);
        let anchor = plane.coords_of(&pts[cube.center_idx]);
        let l = depth[&q];
        Ok(Slot {
            cube: q,
            tier: tier[&q].0,
            depth: l,
            parent: parent_of[&q],
            corner: base.iter().zip(&offset).map(|(a, b)| a + b).collect(),
            offset,
            side,
            plane,
            anchor,
            ratio: c1.powi(l as i32) / (4.0 * d),
        })
    };
    let side_of = |q: CubeId| -> f64 { c1.powi(depth[&q] as i32) * tree.scale(tree.cubes[q].level) };

    let mut slots: BTreeMap<CubeId, Slot> = BTreeMap::new();
    let m0 = tree.top_level;
    let pitch = 3.0 * alpha.powi(m0);
    let per_axis = (1..).find(|g: &usize| g.pow(k as u32) >= roots.len()).unwrap_or(1);
    for (i, &root) in roots.iter().enumerate() {
        let mut t = i;
        let corner: Vec<f64> = (0..k)
            .map(|_| {
                let c = (t % per_axis) as f64 * pitch;
                t /= per_axis;
                c
            })
            .collect();
        slots.insert(root, make_slot(root, corner, &vec![0.0; k], side_of(root))?);
    }

    let order: Vec<CubeId> = tier.keys().copied().collect();
    for &q in &order {
        let Some(kids) = children.get(&q) else { continue };
        // cubes below the depth cap get no slot and pass none down
        let Some(parent) = slots.get(&q).cloned() else { continue };
        if parent.depth >= opts.max_depth {
            continue;
        }
        let sep = c1.powi(parent.depth as i32 + 1) * tree.scale(tree.cubes[q].level);
        let mut placed = Vec::with_capacity(kids.len());
        if parent.tier == Tier::Top {
            for &r in kids {
                let s = side_of(r);
                let x_r = &pts[tree.cube(r)?.center_idx];
                let c = parent.local(x_r);
                placed.push(make_slot(r, c.iter().map(|v| v - s / 2.0).collect(), &parent.corner, s)?);
            }
        } else {
            let g = (1..).find(|g: &usize| g.pow(k as u32) >= kids.len()).unwrap_or(1);
            let smax = kids.iter().map(|&r| side_of(r)).fold(0.0, f64::max);
            let cell = smax + sep;
            if g as f64 * cell > parent.side {
                return Err(Error::Config(format!(
                    "c1 = {c1} is too large to pack {} child slots into the slot of cube {q}",
                    kids.len()
                )));
            }
            let margin = (parent.side - g as f64 * cell) / 2.0;
            for (i, &r) in kids.iter().enumerate() {
                let s = side_of(r);
                let mut t = i;
                let offset = (0..k)
                    .map(|_| {
                        let pos = (t % g) as f64;
                        t /= g;
                        margin + pos * cell + (cell - s) / 2.0
                    })
                    .collect();
                placed.push(make_slot(r, offset, &parent.corner, s)?);
            }
        }
        let depth_q = parent.depth;
        for (i, a) in placed.iter().enumerate() {
            if !nested(a, &parent) {
                return Err(Error::Config(format!("slot of cube {} leaves the slot of cube {q}; lower c1", a.cube)));
            }
            for b in &placed[..i] {
                let need = sibling_gap(tree, cloud, c1, depth_q, parent.tier, q, a.cube, b.cube, box_gap(a, b));
                if box_gap(a, b) < need * (1.0 - 1e-12) {
                    return Err(Error::Config(format!(
                        "slots of cubes {} and {} inside cube {q} are closer than {need:.3e}; lower c1",
                        b.cube, a.cube
                    )));
                }
            }
        }
        for s in placed {
            slots.insert(s.cube, s);
        }
    }

    // F: the ball minus boundary strips and deep cubes
    let levels: Vec<i32> = (tree.bottom_level..=tree.top_level).collect();
    let index = cloud.index();
    let mut removed = Removed::default();
    let verdicts: Vec<Option<(usize, CubeId, Vec<f64>)>> = crate::par::map(&ball, |&x| {
        let chain: Vec<CubeId> = levels
            .iter()
            .filter_map(|&l| tree.owner(l, x))
            .filter(|q| tier.contains_key(q))
            .collect();
        let Some(&smallest) = chain.first() else {
            return Some((1, 0, Vec::new()));
        };
        if depth[&smallest] > opts.max_depth {
            return Some((2, 0, Vec::new()));
        }
        for &q in &chain {
            let lvl = tree.cubes[q].level;
            let reach = opts.tau * tree.scale(lvl);
            let outside = index.nearest_filtered(pts, &pts[x], reach, |i| tree.owner(lvl, i) != Some(q));
            if outside.is_some() {
                return Some((1, 0, Vec::new()));
            }
        }
        Some((0, smallest, slots[&smallest].local(&pts[x])))
    });
    let mut kept: Vec<(usize, CubeId, Vec<f64>)> = Vec::new();
    for (&x, v) in ball.iter().zip(verdicts) {
        match v {
            Some((0, q, local)) => kept.push((x, q, local)),
            Some((2, _, _)) => removed.deep += 1,
            _ => removed.strips += 1,
        }
    }
    kept.sort_by_key(|p| p.0);
    let mut domain = Vec::with_capacity(kept.len());
    let mut owners = Vec::with_capacity(kept.len());
    let mut locals = Vec::with_capacity(kept.len());
    let mut images = Vec::with_capacity(kept.len());
    for (x, q, local) in kept {
        images.push(slots[&q].corner.iter().zip(&local).map(|(a, b)| a + b).collect());
        domain.push(x);
        owners.push(q);
        locals.push(local);
    }

    Ok(Parametrization {
        center: center.clone(),
        radius,
        domain,
        images,
        owners,
        locals,
        embedding: slots.into_values().collect(),
        m0,
        constants: ParamConstants {
            c1,
            tau: opts.tau,
            max_depth: opts.max_depth,
            k0: opts.k0,
            eta: opts.eta,
            d_audit: d,
        },
        removed,
        audit: None,
    })
}

/// Sampled distortion of `f` on `F` and the uncovered mass of the ball.
pub fn audit_bilipschitz_coverage(
    param: &Parametrization,
    cloud: &WeightedCloud,
    pair_samples: usize,
    seed: u64,
) -> Result<BigPieceAudit> {
    let k = cloud.k();
    let ball = cloud.ball(&param.center, param.radius);
    let covered = cloud.mass_of(&param.domain);
    let coverage_ratio = ((cloud.mass_of(&ball) - covered).max(0.0)) / param.radius.powi(k as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let m = param.domain.len();
    let mut pairs = 0;
    if m >= 2 {
        for _ in 0..pair_samples {
            let a = rng.random_range(0..m);
            let mut b = rng.random_range(0..m - 1);
            if b >= a {
                b += 1;
            }
            let dxy = dist(cloud.point(param.domain[a]), cloud.point(param.domain[b]));
            if dxy == 0.0 {
                continue;
            }
            let df = param.image_gap(a, b);
            lo = lo.min(df / dxy);
            hi = hi.max(df / dxy);
            pairs += 1;
        }
    }
    if pairs == 0 {
        lo = 0.0;
    }
    Ok(BigPieceAudit {
        bilip_lower: lo,
        bilip_upper: hi,
        coverage_ratio,
        pairs,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCheck {
    pub nesting_violations: usize,
    pub separation_violations: usize,
    pub side_law_violations: usize,
}

/// Re-checks nesting, sibling separation and the side law on a finished embedding.
pub fn check_embedding(param: &Parametrization, tree: &CubeTree, cloud: &WeightedCloud) -> EmbeddingCheck {
    let c1 = param.constants.c1;
    let mut out = EmbeddingCheck::default();
    let mut siblings: BTreeMap<Option<CubeId>, Vec<&Slot>> = BTreeMap::new();
    for s in &param.embedding {
        let want = c1.powi(s.depth as i32) * tree.scale(tree.cubes[s.cube].level);
        if (s.side - want).abs() > 1e-12 * want {
            out.side_law_violations += 1;
        }
        if let Some(p) = s.parent.and_then(|p| param.slot(p)) {
            if !nested(s, p) {
                out.nesting_violations += 1;
            }
        }
        siblings.entry(s.parent).or_default().push(s);
    }
    for (parent, group) in siblings {
        let p = parent.and_then(|p| param.slot(p));
        for (i, a) in group.iter().enumerate() {
            for b in &group[..i] {
                let gap = box_gap(a, b);
                let need = match p {
                    Some(p) => sibling_gap(tree, cloud, c1, p.depth, p.tier, p.cube, a.cube, b.cube, gap),
                    None => tree.scale(param.m0),
                };
                if gap < need * (1.0 - 1e-12) {
                    out.separation_violations += 1;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{generate, GenParams};
    use crate::corona::{build_stopping_regions, classify_good_cubes};
    use crate::cubes::build_cube_tree;

    fn pipeline(p: &GenParams) -> (WeightedCloud, CubeTree, GoodCubes, Vec<Region>) {
        let cloud = generate(p, 0).unwrap();
        let tree = build_cube_tree(&cloud, 2.0, 0).unwrap();
        let good = classify_good_cubes(&tree, &cloud, 0.05, 20.0).unwrap();
        let regions = build_stopping_regions(&tree, &good, 0.1).unwrap();
        (cloud, tree, good, regions)
    }

    #[test]
    fn plane_is_one_similarity() {
        let (cloud, tree, good, regions) = pipeline(&GenParams::plane(1, 1, 0.01, 1.0));
        let z = HPoint::origin(1);
        let p = build_parametrization(&cloud, &tree, &good, &regions, &z, 0.5, &ParamOptions::default()).unwrap();
        let a = audit_bilipschitz_coverage(&p, &cloud, 2000, 3).unwrap();
        assert!(a.coverage_ratio <= 0.5, "{a:?}");
        assert!(a.bilip_lower > 0.0 && a.bilip_upper.is_finite());
        assert_eq!(check_embedding(&p, &tree, &cloud), EmbeddingCheck::default());
        if p.embedding.len() == 1 {
            let r = p.embedding[0].ratio;
            assert!((a.bilip_upper - r).abs() < 1e-9 * r && (a.bilip_lower - r).abs() < 1e-9 * r, "{a:?}");
        }
    }

    #[test]
    fn zero_strips_cover_assigned_mass() {
        let (cloud, tree, good, regions) = pipeline(&GenParams::plane(1, 1, 0.01, 1.0));
        let z = HPoint::origin(1);
        let opts = ParamOptions {
            tau: 0.0,
            max_depth: 100,
            ..ParamOptions::default()
        };
        let p = build_parametrization(&cloud, &tree, &good, &regions, &z, 0.3, &opts).unwrap();
        assert_eq!(p.domain, cloud.ball(&z, 0.3).into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect::<Vec<_>>());
        assert_eq!(p.removed, Removed::default());
    }

    #[test]
    fn coverage_monotone_in_depth_and_tau() {
        let (cloud, tree, good, regions) = pipeline(&GenParams::two_planes(1, 1, 0.01, 1.0, 2.0));
        let z = HPoint::origin(1);
        let run = |tau: f64, m: usize| {
            let o = ParamOptions {
                tau,
                max_depth: m,
                ..ParamOptions::default()
            };
            build_parametrization(&cloud, &tree, &good, &regions, &z, 0.5, &o).unwrap().domain.len()
        };
        assert!(run(0.05, 2) <= run(0.05, 6));
        assert!(run(0.05, 6) <= run(0.01, 6));
        let p = build_parametrization(&cloud, &tree, &good, &regions, &z, 0.5, &ParamOptions::default()).unwrap();
        assert_eq!(check_embedding(&p, &tree, &cloud), EmbeddingCheck::default());
    }

    #[test]
    fn smaller_c1_lowers_bilip_lower() {
        let (cloud, tree, good, regions) = pipeline(&GenParams::two_planes(1, 1, 0.01, 1.0, 2.0));
        let z = HPoint::origin(1);
        let base = 1.0 / (16.0 * tree.d_audit.powi(3));
        let lower = |c1: f64| {
            let o = ParamOptions {
                c1: Some(c1),
                ..ParamOptions::default()
            };
            let p = build_parametrization(&cloud, &tree, &good, &regions, &z, 0.5, &o).unwrap();
            audit_bilipschitz_coverage(&p, &cloud, 3000, 1).unwrap().bilip_lower
        };
        let (a, b) = (lower(base), lower(base / 4.0));
        assert!(b <= a, "{b} > {a}");
    }

    #[test]
    fn evaluate_outside_domain_fails() {
        let (cloud, tree, good, regions) = pipeline(&GenParams::plane(1, 1, 0.01, 1.0));
        let z = HPoint::origin(1);
        let p = build_parametrization(&cloud, &tree, &good, &regions, &z, 0.2, &ParamOptions::default()).unwrap();
        let outside = (0..cloud.len()).find(|i| p.domain.binary_search(i).is_err()).unwrap();
        assert!(matches!(p.evaluate(outside), Err(Error::Domain(_))));
        assert!(p.evaluate(p.domain[0]).is_ok());
        assert!(build_parametrization(&cloud, &tree, &good, &regions, &z, 10.0, &ParamOptions::default()).is_err());
    }

    #[test]
    fn huge_c1_is_a_config_error() {
        let (cloud, tree, good, regions) = pipeline(&GenParams::two_planes(1, 1, 0.01, 1.0, 2.0));
        let o = ParamOptions {
            c1: Some(0.9),
            ..ParamOptions::default()
        };
        let r = build_parametrization(&cloud, &tree, &good, &regions, &HPoint::origin(1), 0.5, &o);
        assert!(matches!(r, Err(Error::Config(m)) if m.contains("cube")));
    }
}
