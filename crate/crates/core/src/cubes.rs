//! Christ–David style dyadic cubes built from nested farthest-point nets.
//!
//! A farthest-point traversal gives every point an insertion radius; the
//! level-j net is the set of points whose radius is at least αʲ, so nets are
//! nested automatically. Cubes are refined top-down by nearest net point.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::index::exact_diameter;
use crate::cloud::{BallTree, WeightedCloud};
use crate::error::{Error, Result};
use crate::hgroup::{dist, HPoint};
use crate::par;

pub type CubeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub id: CubeId,
    pub level: i32,
    /// Sorted cloud indices.
    pub members: Vec<usize>,
    /// Deepest member: farthest from the rest of the cloud.
    pub center_idx: usize,
    pub diameter: f64,
    pub parent: Option<CubeId>,
    pub children: Vec<CubeId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeTree {
    pub alpha: f64,
    pub top_level: i32,
    pub bottom_level: i32,
    pub seed: u64,
    pub d_audit: f64,
    pub cubes: Vec<Cube>,
    /// Cube ids per level, ordered by center index.
    pub levels: BTreeMap<i32, Vec<CubeId>>,
    #[serde(skip)]
    owners: Vec<Vec<CubeId>>,
}

impl PartialEq for CubeTree {
    fn eq(&self, o: &Self) -> bool {
        self.alpha == o.alpha
            && self.top_level == o.top_level
            && self.bottom_level == o.bottom_level
            && self.d_audit == o.d_audit
            && self.cubes == o.cubes
            && self.levels == o.levels
    }
}

impl CubeTree {
    pub fn cube(&self, id: CubeId) -> Result<&Cube> {
        self.cubes.get(id).ok_or(Error::UnknownCube(id))
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn scale(&self, level: i32) -> f64 {
        self.alpha.powi(level)
    }

    pub fn roots(&self) -> &[CubeId] {
        &self.levels[&self.top_level]
    }

    /// Cube of the given level containing a cloud point.
    pub fn owner(&self, level: i32, point: usize) -> Option<CubeId> {
        if level < self.bottom_level || level > self.top_level {
            return None;
        }
        self.owners
            .get((level - self.bottom_level) as usize)
            .and_then(|o| o.get(point).copied())
    }

    /// Restores lookup tables after deserialization.
    pub fn rebuild_owners(&mut self, n_points: usize) -> Result<()> {
        let nl = (self.top_level - self.bottom_level + 1) as usize;
        let mut owners = vec![vec![usize::MAX; n_points]; nl];
        for c in &self.cubes {
            let li = (c.level - self.bottom_level) as usize;
            for &m in &c.members {
                let slot = owners
                    .get_mut(li)
                    .and_then(|o| o.get_mut(m))
                    .ok_or_else(|| Error::Validation(format!("cube {} has out-of-range data", c.id)))?;
                *slot = c.id;
            }
        }
        self.owners = owners;
        Ok(())
    }

    pub fn from_json(s: &str, cloud: &WeightedCloud) -> Result<Self> {
        let mut t: CubeTree =
            serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("tree JSON: {e}")))?;
        t.rebuild_owners(cloud.len())?;
        Ok(t)
    }

    pub fn mass(&self, cloud: &WeightedCloud, id: CubeId) -> f64 {
        cloud.mass_of(&self.cubes[id].members)
    }

    /// All descendants of `id` including itself, in id order.
    pub fn subtree(&self, id: CubeId) -> Vec<CubeId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.cubes[out[i]].children);
            i += 1;
        }
        out.sort_unstable();
        out
    }

    /// Strict ancestors, nearest first.
    pub fn ancestors(&self, id: CubeId) -> Vec<CubeId> {
        let mut out = Vec::new();
        let mut cur = self.cubes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.cubes[p].parent;
        }
        out
    }

    pub fn is_ancestor_or_self(&self, anc: CubeId, id: CubeId) -> bool {
        let mut cur = Some(id);
        let target_level = self.cubes[anc].level;
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            if self.cubes[c].level >= target_level {
                return false;
            }
            cur = self.cubes[c].parent;
        }
        false
    }

    /// Per-level cube counts, coarsest first.
    pub fn level_counts(&self) -> Vec<(i32, usize)> {
        self.levels.iter().rev().map(|(l, v)| (*l, v.len())).collect()
    }
}

/// Farthest-point order with insertion radii, stopped once radii drop below `stop`.
/// Relative gap under which two candidate distances count as tied.
const FPS_TIE: f64 = 1e-3;

/// Near-ties (common on grids) go to the point with the smaller `priority`.
fn farthest_point_order(points: &[HPoint], start: usize, stop: f64, priority: &[u64]) -> Vec<(usize, f64)> {
    let m = points.len();
    let mut dmin = vec![f64::INFINITY; m];
    let mut order = Vec::new();
    let mut next = start;
    let mut radius = f64::INFINITY;
    loop {
        order.push((next, radius));
        dmin[next] = 0.0;
        let c = &points[next];
        let mut best = usize::MAX;
        let mut bd = -1.0_f64;
        for (i, p) in points.iter().enumerate() {
            let d = &mut dmin[i];
            if *d > 0.0 {
                let nd = dist(p, c);
                if nd < *d {
                    *d = nd;
                }
            }
            let tie = FPS_TIE * bd.max(0.0);
            if *d > bd + tie || (*d >= bd - tie && *d > 0.0 && priority[i] < priority[best]) {
                bd = bd.max(*d);
                best = i;
            }
        }
        if bd <= 0.0 || bd < stop {
            break;
        }
        next = best;
        radius = bd;
    }
    order
}

/// Nearest center for every member; ties go to the lower index.
fn split_by_centers(pts: &[HPoint], members: &[usize], centers: &[usize]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); centers.len()];
    if centers.len() <= 32 {
        for &x in members {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (ci, &c) in centers.iter().enumerate() {
                let d = dist(&pts[x], &pts[c]);
                if d < bd {
                    bd = d;
                    best = ci;
                }
            }
            groups[best].push(x);
        }
    } else {
        let sub: Vec<HPoint> = centers.iter().map(|&c| pts[c].clone()).collect();
        let tree = BallTree::build(&sub);
        for &x in members {
            let (ci, _) = tree
                .nearest_filtered(&sub, &pts[x], f64::INFINITY, |_| true)
                .expect("non-empty centers");
            groups[ci].push(x);
        }
    }
    groups
}

/// Net points inside a parent cube, completed so every member lies within
/// `s` of a center (members whose nearest net point sits in a neighbouring
/// cube would otherwise inflate a sibling).
fn child_centers(pts: &[HPoint], members: &[usize], parent_net: usize, radius_of: &[f64], s: f64) -> Vec<usize> {
    let mut centers: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&x| x == parent_net || radius_of[x] >= s)
        .collect();
    let mut gap: Vec<f64> = members
        .iter()
        .map(|&x| centers.iter().map(|&c| dist(&pts[x], &pts[c])).fold(f64::INFINITY, f64::min))
        .collect();
    loop {
        let mut far = None;
        let mut fd = -1.0;
        for (pos, &g) in gap.iter().enumerate() {
            if g >= s && g > fd {
                fd = g;
                far = Some(pos);
            }
        }
        let Some(pos) = far else { break };
        let c = members[pos];
        centers.push(c);
        for (g, &x) in gap.iter_mut().zip(members) {
            let d = dist(&pts[x], &pts[c]);
            if d < *g {
                *g = d;
            }
        }
    }
    centers.sort_unstable();
    centers
}

/// Cells whose deepest member is closer than `αʲ/MERGE_DEPTH` to the rest of the cloud
/// are folded into a sibling.
const MERGE_DEPTH: f64 = 3.0;

/// Folds shallow cells into the deep sibling with the nearest center.
fn merge_shallow(pts: &[HPoint], mut cells: Vec<(usize, Vec<usize>)>, depth: &[f64], min_depth: f64) -> Vec<(usize, Vec<usize>)> {
    let deep: Vec<bool> = depth.iter().map(|&d| d >= min_depth).collect();
    if !deep.iter().any(|&h| h) {
        // nothing to absorb into: keep the parent whole, centered at its deepest cell
        let best = (0..cells.len()).fold(0, |b, i| if depth[i] > depth[b] { i } else { b });
        let center = cells[best].0;
        let mut all: Vec<usize> = cells.into_iter().flat_map(|(_, g)| g).collect();
        all.sort_unstable();
        return vec![(center, all)];
    }
    let mut moved: Vec<Vec<usize>> = vec![Vec::new(); cells.len()];
    for i in 0..cells.len() {
        if deep[i] {
            continue;
        }
        let ci = cells[i].0;
        let mut target = usize::MAX;
        let mut td = f64::INFINITY;
        for (j, (cj, _)) in cells.iter().enumerate() {
            if deep[j] {
                let d = dist(&pts[ci], &pts[*cj]);
                if d < td {
                    td = d;
                    target = j;
                }
            }
        }
        let g = std::mem::take(&mut cells[i].1);
        moved[target].extend(g);
    }
    cells
        .into_iter()
        .zip(moved)
        .filter(|((_, g), _)| !g.is_empty())
        .map(|((c, mut g), extra)| {
            g.extend(extra);
            g.sort_unstable();
            (c, g)
        })
        .collect()
}

/// Builds the tree for levels `αʲ ∈ [2·resolution, diameter]`, plus one level above the diameter.
///
/// Level-j cubes refine their parent: the parent's members are split by
/// nearest center among the level-j net points the parent contains.
pub fn build_cube_tree(cloud: &WeightedCloud, alpha: f64, seed: u64) -> Result<CubeTree> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
    }
    let pts = cloud.points();
    let m = pts.len();
    let res = cloud.resolution();
    let diam = cloud.diameter();
    let bottom = (2.0 * res).log(alpha).ceil() as i32;
    let top = if diam > 0.0 {
        (diam.log(alpha).floor() as i32 + 1).max(bottom)
    } else {
        bottom
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..m);
    let priority: Vec<u64> = (0..m).map(|_| rng.random()).collect();
    let order = farthest_point_order(pts, start, alpha.powi(bottom), &priority);
    let mut radius_of = vec![0.0; m];
    for &(i, r) in &order {
        radius_of[i] = r;
    }

    // (level, net point, members, parent position in previous level)
    let mut by_level: Vec<Vec<(usize, Vec<usize>, Option<usize>)>> = Vec::new();
    by_level.push(vec![(start, (0..m).collect(), None)]);
    for level in (bottom..top).rev() {
        let s = alpha.powi(level);
        let prev = by_level.last().unwrap();
        let mut split: Vec<Vec<(usize, Vec<usize>)>> = Vec::with_capacity(prev.len());
        for (net, members, _) in prev.iter() {
            let centers = child_centers(pts, members, *net, radius_of.as_slice(), s);
            let groups = split_by_centers(pts, members, &centers);
            split.push(centers.into_iter().zip(groups).collect());
        }
        let cells: Vec<(usize, usize, &Vec<usize>)> = split
            .iter()
            .enumerate()
            .flat_map(|(pi, cs)| cs.iter().map(move |(c, g)| (pi, *c, g)))
            .collect();
        let mut owner = vec![usize::MAX; m];
        for (ci, (_, _, g)) in cells.iter().enumerate() {
            for &x in g.iter() {
                owner[x] = ci;
            }
        }
        let fine = if level - 2 > bottom { alpha.powi(level - 2) } else { 0.0 };
        let depths: Vec<f64> = par::map(&cells, |(_, c, g)| {
            let ci = owner[*c];
            g.iter()
                .filter(|&&x| x == *c || radius_of[x] >= fine)
                .map(|&x| {
                    cloud
                        .index()
                        .nearest_filtered(pts, &pts[x], s, |i| owner[i] != ci)
                        .map(|(_, d)| d)
                        .unwrap_or(f64::INFINITY)
                })
                .fold(0.0, f64::max)
        });
        let mut cur = Vec::new();
        let mut offset = 0;
        for (pi, cs) in split.into_iter().enumerate() {
            let d = &depths[offset..offset + cs.len()];
            offset += cs.len();
            for (c, g) in merge_shallow(pts, cs, d, s / MERGE_DEPTH) {
                cur.push((c, g, Some(pi)));
            }
        }
        cur.sort_by_key(|x| x.0);
        by_level.push(cur);
    }

    let mut cubes: Vec<Cube> = Vec::new();
    let mut levels = BTreeMap::new();
    let mut prev_ids: Vec<CubeId> = Vec::new();
    for (li, entries) in by_level.into_iter().enumerate() {
        let level = top - li as i32;
        let mut ids = Vec::with_capacity(entries.len());
        for (net, members, parent_pos) in entries {
            let id = cubes.len();
            let parent = parent_pos.map(|p| prev_ids[p]);
            if let Some(p) = parent {
                cubes[p].children.push(id);
            }
            cubes.push(Cube {
                id,
                level,
                members,
                center_idx: net,
                diameter: 0.0,
                parent,
                children: Vec::new(),
            });
            ids.push(id);
        }
        levels.insert(level, ids.clone());
        prev_ids = ids;
    }
    let diams: Vec<f64> = par::map(&cubes, |c| {
        if c.members.len() == m {
            diam
        } else {
            exact_diameter(pts, &c.members)
        }
    });
    for (c, d) in cubes.iter_mut().zip(diams) {
        c.diameter = d;
    }
    let mut tree = CubeTree {
        alpha,
        top_level: top,
        bottom_level: bottom,
        seed,
        d_audit: 0.0,
        cubes,
        levels,
        owners: Vec::new(),
    };
    tree.rebuild_owners(m)?;
    let centers = par::map(&tree.cubes, |c| deepest_member(&tree, cloud, c, &radius_of));
    for (c, x) in tree.cubes.iter_mut().zip(centers) {
        c.center_idx = x;
    }
    tree.d_audit = size_constants(&tree, cloud).d_audit;
    Ok(tree)
}

/// Member farthest from the rest of the cloud, searched among members that
/// are net points two levels down (all members near the bottom). The net
/// point of the cube wins ties.
fn deepest_member(tree: &CubeTree, cloud: &WeightedCloud, c: &Cube, radius_of: &[f64]) -> usize {
    let net = c.center_idx;
    if c.members.len() == cloud.len() {
        return net;
    }
    let pts = cloud.points();
    let fine = (c.level - 2).max(tree.bottom_level);
    let s_fine = if fine > tree.bottom_level { tree.scale(fine) } else { 0.0 };
    let cap = tree.scale(c.level);
    let depth = |x: usize| {
        cloud
            .index()
            .nearest_filtered(pts, &pts[x], cap, |i| tree.owner(c.level, i) != Some(c.id))
            .map(|(_, d)| d)
            .unwrap_or(f64::INFINITY)
    };
    let mut best = net;
    let mut bd = depth(net);
    for &x in &c.members {
        if x == net || radius_of[x] < s_fine {
            continue;
        }
        let d = depth(x);
        if d > bd {
            bd = d;
            best = x;
        }
    }
    best
}

/// Points within `(λ−1)·d(Q)` of some member of `Q`, together with the members, sorted.
pub fn enlarge(tree: &CubeTree, cloud: &WeightedCloud, id: CubeId, lambda: f64) -> Result<Vec<usize>> {
    if !(lambda > 1.0) {
        return Err(Error::InvalidArgument(format!("lambda must exceed 1, got {lambda}")));
    }
    let q = tree.cube(id)?;
    let reach = (lambda - 1.0) * q.diameter;
    Ok(enlarge_by(cloud, &q.members, q.center_idx, reach))
}

pub(crate) fn enlarge_by(cloud: &WeightedCloud, members: &[usize], center_idx: usize, reach: f64) -> Vec<usize> {
    let pts = cloud.points();
    if members.len() == cloud.len() {
        return members.to_vec();
    }
    let c = &pts[center_idx];
    let mut by_center: Vec<(f64, usize)> = members.iter().map(|&i| (dist(&pts[i], c), i)).collect();
    by_center.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let rad = by_center.last().map(|x| x.0).unwrap_or(0.0);
    let mut is_member = vec![false; cloud.len()];
    for &i in members {
        is_member[i] = true;
    }
    let mut out = members.to_vec();
    let slack = 1e-9 * (rad + reach) + 1e-300;
    cloud.index().visit_ball(pts, c, rad + reach + slack, &mut |i, dc| {
        if is_member[i] {
            return;
        }
        if dist(&pts[i], c) <= reach {
            out.push(i);
            return;
        }
        // only members in the annulus |d(m,c) − dc| ≤ reach can be within reach
        let lo = by_center.partition_point(|x| x.0 < dc - reach - slack);
        for &(dm, mi) in &by_center[lo..] {
            if dm > dc + reach + slack {
                break;
            }
            if dist(&pts[i], &pts[mi]) <= reach {
                out.push(i);
                return;
            }
        }
    });
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeConstants {
    /// max d(Q)/αʲ over all cubes.
    pub d4: f64,
    /// max αʲ / d(center, E∖Q) over all cubes (1 when no non-member lies within αʲ).
    pub d5: f64,
    /// max αʲ/d(Q) over cubes with αʲ ≥ 4·resolution.
    pub diam_lower: f64,
    /// max of mass(Q)/α^{jk} and α^{jk}/mass(Q) over cubes with αʲ ≥ 4·resolution.
    pub mass: f64,
    pub d_audit: f64,
}

fn size_constants(tree: &CubeTree, cloud: &WeightedCloud) -> SizeConstants {
    let k = cloud.k() as i32;
    let res = cloud.resolution();
    let pts = cloud.points();
    let per: Vec<(f64, f64, f64, f64)> = par::map(&tree.cubes, |c| {
        let s = tree.scale(c.level);
        let d4 = c.diameter / s;
        let center = &pts[c.center_idx];
        let near = cloud
            .index()
            .nearest_filtered(pts, center, s, |i| tree.owner(c.level, i) != Some(c.id));
        let d5 = match near {
            // closed balls: radius s/D must stay strictly below d
            Some((_, d)) if d > 0.0 => (s / d * (1.0 + 1e-9)).max(1.0),
            Some(_) => f64::INFINITY,
            None => 1.0,
        };
        let (dl, dm) = if s >= 4.0 * res {
            let mass = cloud.mass_of(&c.members);
            let sk = s.powi(k);
            (s / c.diameter, (mass / sk).max(sk / mass))
        } else {
            (0.0, 0.0)
        };
        (d4, d5, dl, dm)
    });
    let mut out = SizeConstants {
        d4: 0.0,
        d5: 1.0,
        diam_lower: 0.0,
        mass: 0.0,
        d_audit: 1.0,
    };
    for (a, b, c, d) in per {
        out.d4 = out.d4.max(a);
        out.d5 = out.d5.max(b);
        out.diam_lower = out.diam_lower.max(c);
        out.mass = out.mass.max(d);
    }
    out.d_audit = [1.0, out.d4, out.d5, out.diam_lower, out.mass].into_iter().fold(0.0, f64::max);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAudit {
    pub tau_grid: Vec<f64>,
    /// Worst boundary-mass ratio per grid value.
    pub ratios: Vec<f64>,
    /// Smallest D with ratio(t) ≤ D·t^{1/D} on the grid.
    pub d_fit: f64,
    /// Separately fitted power law ratio ≈ c·t^exponent.
    pub exponent: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeAudit {
    pub disjointness_violations: usize,
    pub nesting_violations: usize,
    pub coverage_violations: usize,
    pub sizes: SizeConstants,
    pub boundary: BoundaryAudit,
}

impl CubeAudit {
    pub fn exact_ok(&self) -> bool {
        self.disjointness_violations == 0 && self.nesting_violations == 0 && self.coverage_violations == 0
    }
}

pub fn audit_cube_axioms(tree: &CubeTree, cloud: &WeightedCloud, tau_grid: &[f64]) -> CubeAudit {
    let m = cloud.len();
    let mut disjoint = 0;
    let mut coverage = 0;
    for ids in tree.levels.values() {
        let mut count = vec![0u32; m];
        for &id in ids {
            for &x in &tree.cubes[id].members {
                if x < m {
                    count[x] += 1;
                }
            }
        }
        disjoint += count.iter().filter(|&&c| c > 1).count();
        coverage += count.iter().filter(|&&c| c == 0).count();
    }
    let mut nesting = 0;
    for c in &tree.cubes {
        match c.parent {
            Some(p) => {
                let pm = &tree.cubes[p].members;
                nesting += c.members.iter().filter(|x| pm.binary_search(x).is_err()).count();
                if tree.cubes[p].level != c.level + 1 {
                    nesting += 1;
                }
            }
            None => {
                if c.level != tree.top_level {
                    nesting += 1;
                }
            }
        }
    }
    let sizes = size_constants(tree, cloud);
    let boundary = boundary_audit(tree, cloud, tau_grid);
    CubeAudit {
        disjointness_violations: disjoint,
        nesting_violations: nesting,
        coverage_violations: coverage,
        sizes,
        boundary,
    }
}

fn boundary_audit(tree: &CubeTree, cloud: &WeightedCloud, tau_grid: &[f64]) -> BoundaryAudit {
    let pts = cloud.points();
    let res = cloud.resolution();
    let tmax = tau_grid.iter().cloned().fold(0.0, f64::max);
    let cubes: Vec<&Cube> = tree
        .cubes
        .iter()
        .filter(|c| c.level < tree.top_level && tree.scale(c.level) >= 4.0 * res && c.members.len() < cloud.len())
        .collect();
    let per: Vec<Vec<f64>> = par::map(&cubes, |c| {
        let s = tree.scale(c.level);
        let dists: Vec<(f64, f64)> = c
            .members
            .iter()
            .map(|&x| {
                let d = cloud
                    .index()
                    .nearest_filtered(pts, &pts[x], tmax * s, |i| tree.owner(c.level, i) != Some(c.id))
                    .map(|(_, d)| d)
                    .unwrap_or(f64::INFINITY);
                (d, cloud.weights()[x])
            })
            .collect();
        let mass: f64 = dists.iter().map(|x| x.1).sum();
        tau_grid
            .iter()
            .map(|t| dists.iter().filter(|(d, _)| *d <= t * s).map(|x| x.1).sum::<f64>() / mass)
            .collect()
    });
    let ratios: Vec<f64> = (0..tau_grid.len())
        .map(|i| per.iter().map(|r| r[i]).fold(0.0, f64::max))
        .collect();
    let holds = |d: f64| tau_grid.iter().zip(&ratios).all(|(t, r)| *r <= d * t.powf(1.0 / d));
    let d_fit = if ratios.iter().all(|r| *r == 0.0) {
        1.0
    } else if holds(1.0) {
        1.0
    } else {
        let mut hi = 2.0;
        while !holds(hi) && hi < 1e12 {
            hi *= 2.0;
        }
        let mut lo = hi / 2.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let pairs: Vec<(f64, f64)> = tau_grid
        .iter()
        .zip(&ratios)
        .filter(|(t, r)| **t > 0.0 && **r > 0.0)
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    let (exponent, c) = if pairs.len() >= 2 {
        let nx = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nx;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / nx;
        let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        (b, (my - b * mx).exp())
    } else {
        (0.0, 0.0)
    };
    BoundaryAudit {
        tau_grid: tau_grid.to_vec(),
        ratios,
        d_fit,
        exponent,
        c,
    }
}

pub fn default_tau_grid() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{generate, GenParams};

    #[test]
    fn single_point_tree() {
        let c = WeightedCloud::new(1, 0.1, vec![HPoint::origin(1)], vec![1.0]).unwrap();
        let t = build_cube_tree(&c, 2.0, 0).unwrap();
        assert!(t.cubes.iter().all(|q| q.members == vec![0]));
        assert_eq!(t.levels.len(), t.cubes.len());
        assert!(build_cube_tree(&c, 1.0, 0).is_err());
    }

    #[test]
    fn nesting_and_coverage_exact() {
        let c = generate(&GenParams::perturbed_plane(2, 2, 0.05, 1.0, 0.3), 4).unwrap();
        let t = build_cube_tree(&c, 2.0, 1).unwrap();
        let a = audit_cube_axioms(&t, &c, &default_tau_grid());
        assert!(a.exact_ok(), "{a:?}");
        assert!(a.sizes.d_audit.is_finite());
        assert_eq!(t.roots().len(), 1);
        for q in &t.cubes {
            if let Some(p) = q.parent {
                assert!(q.members.iter().all(|x| t.cubes[p].members.contains(x)));
            }
        }
    }

    #[test]
    fn d5_ball_inside_cube() {
        let c = generate(&GenParams::plane(1, 1, 0.01, 1.0), 0).unwrap();
        let t = build_cube_tree(&c, 2.0, 3).unwrap();
        for q in &t.cubes {
            let r = t.scale(q.level) / t.d_audit;
            let ball = c.ball(c.point(q.center_idx), r);
            assert!(ball.iter().all(|x| q.members.binary_search(x).is_ok()));
        }
    }

    #[test]
    fn deterministic_build_and_audit() {
        let c = generate(&GenParams::plane(1, 1, 0.02, 1.0), 0).unwrap();
        let a = build_cube_tree(&c, 2.0, 5).unwrap();
        let b = build_cube_tree(&c, 2.0, 5).unwrap();
        assert_eq!(a, b);
        let g = default_tau_grid();
        assert_eq!(audit_cube_axioms(&a, &c, &g), audit_cube_axioms(&b, &c, &g));
        let back = CubeTree::from_json(&serde_json::to_string(&a).unwrap(), &c).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.owner(a.bottom_level, 3), a.owner(a.bottom_level, 3));
    }

    #[test]
    fn enlarge_matches_scan() {
        let c = generate(&GenParams::perturbed_plane(1, 1, 0.02, 1.0, 0.3), 2).unwrap();
        let t = build_cube_tree(&c, 2.0, 0).unwrap();
        for id in (0..t.len()).step_by(7) {
            let q = &t.cubes[id];
            for lambda in [1.0 + 1e-9, 2.0, 3.5] {
                let got = enlarge(&t, &c, id, lambda).unwrap();
                let reach = (lambda - 1.0) * q.diameter;
                let want: Vec<usize> = (0..c.len())
                    .filter(|&i| {
                        q.members.binary_search(&i).is_ok()
                            || q.members.iter().any(|&m| dist(c.point(i), c.point(m)) <= reach)
                    })
                    .collect();
                assert_eq!(got, want);
            }
        }
        let all = enlarge(&t, &c, t.len() - 1, 1e6).unwrap();
        assert_eq!(all.len(), c.len());
        assert!(enlarge(&t, &c, 0, 1.0).is_err());
        assert!(matches!(enlarge(&t, &c, 10_000, 2.0), Err(Error::UnknownCube(_))));
    }
}
