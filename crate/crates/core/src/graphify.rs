//! Lipschitz graph model of a stopping-time region.
//!
//! The region is moved so its reference plane becomes `X_k`; then `P` keeps the
//! first `k` horizontal coordinates and `P^⊥` the other `2n-k`. The height `H`
//! drives a dyadic Whitney decomposition of a window in Rᵏ, each Whitney cube
//! borrows the plane of a nearby member cube as an affine map, and a C² partition
//! of unity blends them into `g`.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::WeightedCloud;
use crate::corona::{GoodCubes, Region, RegionDistance};
use crate::cubes::{enlarge, CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::hgroup::{apply_rotation, group_inv, mul, HPoint, Rotation};
use crate::hplanes::HPlane;

/// Whitney cubes satisfy `WHITNEY · d(R) ≤ inf_R H`.
const WHITNEY: f64 = 20.0;

/// Left translation followed by a rotation, carrying a plane onto `X_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub rotation: Rotation,
    /// Applied first, on the left.
    pub translation: HPoint,
}

impl Normalization {
    pub fn apply(&self, x: &HPoint) -> HPoint {
        apply_rotation(&self.rotation, &mul(&self.translation, x)).expect("dimension checked at construction")
    }
}

/// Isometry of Hⁿ taking `plane` onto the standard `X_k` through the origin.
///
/// The frame is read as `k` orthonormal vectors of Cⁿ (`z_j = x_j + i x_{j+n}`),
/// completed to a unitary basis `W`; the rotation is the real form of `W*`.
pub fn normalize_plane(plane: &HPlane) -> Result<Normalization> {
    let n = plane.n();
    let to_c = |v: &[f64]| -> Vec<Complex<f64>> { (0..n).map(|j| Complex::new(v[j], v[j + n])).collect() };
    let mut basis: Vec<Vec<Complex<f64>>> = plane.frame().columns().iter().map(|c| to_c(c)).collect();
    let hdot = |a: &[Complex<f64>], b: &[Complex<f64>]| -> Complex<f64> { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = vec![Complex::new(0.0, 0.0); n];
        v[e] = Complex::new(1.0, 0.0);
        for _ in 0..2 {
            for b in &basis {
                let c = hdot(b, &v);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
        }
        let nv = hdot(&v, &v).re.sqrt();
        if nv > 0.5 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    if basis.len() != n {
        return Err(Error::Internal("unitary completion of the frame failed".into()));
    }
    let re = DMatrix::from_fn(n, n, |r, c| basis[r][c].re);
    let im = DMatrix::from_fn(n, n, |r, c| -basis[r][c].im);
    let rotation = Rotation::from_unitary(&re, &im)
        .map_err(|e| Error::Internal(format!("frame completion is not unitary: {e}")))?;
    Ok(Normalization {
        rotation,
        translation: group_inv(plane.base()),
    })
}

pub fn normalize_region(region: &Region) -> Result<Normalization> {
    normalize_plane(&region.reference_plane)
}

/// `p ↦ linear·p + offset`, from Rᵏ to R²ⁿ⁻ᵏ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    /// Rows of the `(2n-k) × k` matrix.
    pub linear: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn eval(&self, p: &[f64]) -> Vec<f64> {
        self.linear
            .iter()
            .zip(&self.offset)
            .map(|(row, o)| o + row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Operator norm of the linear part.
    pub fn lipschitz(&self) -> f64 {
        if self.linear.is_empty() {
            return 0.0;
        }
        let k = self.linear[0].len();
        let m = DMatrix::from_fn(self.linear.len(), k, |r, c| self.linear[r][c]);
        m.singular_values().iter().cloned().fold(0.0, f64::max)
    }

    /// The plane (already normalized) as a graph over the first `k` coordinates.
    pub fn from_plane(plane: &HPlane) -> Result<AffineMap> {
        let k = plane.k();
        let m = 2 * plane.n();
        let f = plane.frame().to_matrix();
        let top = f.rows(0, k).into_owned();
        let bottom = f.rows(k, m - k).into_owned();
        let inv = top
            .try_inverse()
            .filter(|i| i.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Degenerate("plane is vertical over X_k".into()))?;
        let lin = &bottom * inv;
        let b = plane.base().horizontal();
        let offset = (0..m - k)
            .map(|r| b[k + r] - (0..k).map(|c| lin[(r, c)] * b[c]).sum::<f64>())
            .collect();
        let linear = (0..m - k).map(|r| (0..k).map(|c| lin[(r, c)]).collect()).collect();
        Ok(AffineMap { linear, offset })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCell {
    /// Side `2^exponent`.
    pub exponent: i32,
    /// Corner is `index · side`.
    pub index: Vec<i64>,
    /// Floor cell that never met the Whitney inequality.
    pub zero: bool,
    pub companion: CubeId,
    pub affine: AffineMap,
}

impl WhitneyCell {
    pub fn side(&self) -> f64 {
        2f64.powi(self.exponent)
    }

    pub fn diameter(&self) -> f64 {
        self.side() * (self.index.len() as f64).sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.index.iter().map(|&i| (i as f64 + 0.5) * s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub k0: f64,
    pub eps: f64,
    pub delta: f64,
    /// Companion cubes have `d(R)/c0 ≤ d(Q) ≤ c0·d(R)`; `8·K₀` when absent.
    pub companion_ratio: Option<f64>,
    pub max_cells: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            k0: 10.0,
            eps: 0.05,
            delta: 0.1,
            companion_ratio: None,
            max_cells: 400_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphModel {
    pub region: usize,
    pub n: usize,
    pub k: usize,
    pub normalization: Normalization,
    /// `P(x₀)` with `x₀` the center of the top cube.
    pub window_center: Vec<f64>,
    /// `K₀·d(Q(S))`.
    pub window_radius: f64,
    pub top_diameter: f64,
    pub cells: Vec<WhitneyCell>,
    /// Cloud indices with `h ≤ resolution`.
    pub zero_set: Vec<usize>,
    pub options: GraphOptions,
    /// Projected members with the smallest member-cube diameter holding them.
    #[serde(skip)]
    height_sites: Vec<(Vec<f64>, f64)>,
    #[serde(skip)]
    lookup: HashMap<(i32, Vec<i64>), usize>,
    #[serde(skip)]
    exponents: Vec<i32>,
}

impl GraphModel {
    /// `H(p) = min_Q dist(p, P(Q)) + d(Q)` over member cubes.
    pub fn height(&self, p: &[f64]) -> f64 {
        self.height_sites
            .iter()
            .map(|(q, w)| euclid(p, q) + w)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn in_window(&self, p: &[f64]) -> bool {
        euclid(p, &self.window_center) <= self.window_radius * (1.0 + 1e-12)
    }

    /// Whitney cells whose triple contains `p`, with their bump values.
    fn active(&self, p: &[f64]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let k = self.k;
        for &e in &self.exponents {
            let s = 2f64.powi(e);
            let base: Vec<i64> = p.iter().map(|x| (x / s).floor() as i64).collect();
            for code in 0..3usize.pow(k as u32) {
                let mut c = code;
                let idx: Vec<i64> = base
                    .iter()
                    .map(|b| {
                        let o = (c % 3) as i64 - 1;
                        c /= 3;
                        b + o
                    })
                    .collect();
                if let Some(&id) = self.lookup.get(&(e, idx)) {
                    let b = bump(&self.cells[id], p);
                    if b > 0.0 {
                        out.push((id, b));
                    }
                }
            }
        }
        out
    }

    pub fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: p.len(),
            });
        }
        let act = self.active(p);
        let total: f64 = act.iter().map(|a| a.1).sum();
        if !(total > 0.0) {
            return Err(Error::Domain(format!("point {p:?} is outside the graph window")));
        }
        let mut g = vec![0.0; 2 * self.n - self.k];
        for (id, b) in act {
            for (gi, ai) in g.iter_mut().zip(self.cells[id].affine.eval(p)) {
                *gi += b / total * ai;
            }
        }
        Ok(g)
    }

    /// `(P(x), P^⊥(x))` after normalization.
    pub fn split(&self, x: &HPoint) -> (Vec<f64>, Vec<f64>) {
        let y = self.normalization.apply(x);
        let h = y.horizontal();
        (h[..self.k].to_vec(), h[self.k..].to_vec())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn box_dist(p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| {
            let d = (l - x).max(x - h).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// C² step: 0 at 0, 1 at 1.
fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

/// Tensor bump equal to 1 on `2R` and 0 off `3R`.
fn bump(cell: &WhitneyCell, p: &[f64]) -> f64 {
    let half = cell.side() / 2.0;
    cell.center()
        .iter()
        .zip(p)
        .map(|(c, x)| 1.0 - smoothstep((x - c).abs() / half - 2.0))
        .product()
}

struct Cubelet {
    id: CubeId,
    diameter: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Positions into the projected site list.
    members: Vec<usize>,
}

pub fn build_graph_model(
    region: &Region,
    tree: &CubeTree,
    cloud: &WeightedCloud,
    good: &GoodCubes,
    opts: &GraphOptions,
) -> Result<GraphModel> {
    let n = cloud.n();
    let k = cloud.k();
    if region.members.is_empty() {
        return Err(Error::InvalidArgument("empty region".into()));
    }
    if !(opts.k0 >= 1.0) || !(opts.eps > 0.0) || !(opts.delta > 0.0) {
        return Err(Error::Config("graph options need K0 >= 1 and positive eps, delta".into()));
    }
    let norm = normalize_region(region)?;
    let top = tree.cube(region.top)?;
    let pts = cloud.points();
    let split = |x: &HPoint| -> Vec<f64> { norm.apply(x).horizontal()[..k].to_vec() };

    let mut site_of: HashMap<usize, usize> = HashMap::new();
    let mut sites: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut cubelets = Vec::with_capacity(region.members.len());
    for &id in &region.members {
        let q = tree.cube(id)?;
        let mut lo = vec![f64::INFINITY; k];
        let mut hi = vec![f64::NEG_INFINITY; k];
        let mut members = Vec::with_capacity(q.members.len());
        for &i in &q.members {
            let pos = *site_of.entry(i).or_insert_with(|| {
                sites.push((split(&pts[i]), f64::INFINITY));
                sites.len() - 1
            });
            let s = &mut sites[pos];
            s.1 = s.1.min(q.diameter);
            for j in 0..k {
                lo[j] = lo[j].min(s.0[j]);
                hi[j] = hi[j].max(s.0[j]);
            }
            members.push(pos);
        }
        cubelets.push(Cubelet {
            id,
            diameter: q.diameter,
            lo,
            hi,
            members,
        });
    }

    let center = split(&pts[top.center_idx]);
    let radius = (opts.k0 * top.diameter).max(cloud.resolution());
    let floor_exp = cloud.resolution().log2().floor() as i32;
    let raw = whitney_cells(&sites, &center, radius, floor_exp, opts.max_cells).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("region {}: {m}", region.id)),
        other => other,
    })?;

    let ratio = opts.companion_ratio.unwrap_or(8.0 * opts.k0);
    let positive: Vec<&Cubelet> = cubelets.iter().filter(|c| c.diameter > 0.0).collect();
    let largest = cubelets.iter().map(|c| c.diameter).fold(0.0, f64::max);
    let mut cells = Vec::with_capacity(raw.len());
    let mut planes: HashMap<CubeId, AffineMap> = HashMap::new();
    for (e, index, zero) in raw {
        let s = 2f64.powi(e);
        let lo: Vec<f64> = index.iter().map(|&i| i as f64 * s).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + s).collect();
        let dr = s * (k as f64).sqrt();
        let mut cand: Vec<&Cubelet> = positive
            .iter()
            .copied()
            .filter(|c| c.diameter >= dr / ratio && c.diameter <= ratio * dr)
            .collect();
        if cand.is_empty() {
            let pick = if largest <= dr / ratio { largest } else { 0.0 };
            cand = cubelets.iter().filter(|c| c.diameter == pick).collect();
        }
        let companion = nearest_cubelet(&cand, &sites, &lo, &hi, dr);
        let affine = match planes.get(&companion) {
            Some(a) => a.clone(),
            None => {
                let plane = good.plane(companion);
                let moved = HPlane::new(norm.apply(plane.base()), normalized_frame(&norm, plane)?)?;
                let a = AffineMap::from_plane(&moved)?;
                planes.insert(companion, a.clone());
                a
            }
        };
        cells.push(WhitneyCell {
            exponent: e,
            index,
            zero,
            companion,
            affine,
        });
    }

    let rd = RegionDistance::new(region, tree, cloud);
    let enlarged = enlarge(tree, cloud, region.top, opts.k0)?;
    let zero_set: Vec<usize> = enlarged
        .into_iter()
        .filter(|&i| rd.h(&pts[i]) <= cloud.resolution())
        .collect();

    let mut model = GraphModel {
        region: region.id,
        n,
        k,
        normalization: norm,
        window_center: center,
        window_radius: radius,
        top_diameter: top.diameter,
        cells,
        zero_set,
        options: opts.clone(),
        height_sites: sites,
        lookup: HashMap::new(),
        exponents: Vec::new(),
    };
    model.index_cells();
    Ok(model)
}

/// Maximal dyadic cubes meeting `B(center, radius)` with `WHITNEY·d(R) ≤ inf_R H`, where
/// `H(p) = min |p - site| + weight`. Cubes at `floor_exp` that still fail are kept as zero
/// cells. Sorted by `(exponent, index)`.
pub(crate) fn whitney_cells(
    sites: &[(Vec<f64>, f64)],
    center: &[f64],
    radius: f64,
    floor_exp: i32,
    max_cells: usize,
) -> Result<Vec<(i32, Vec<i64>, bool)>> {
    let k = center.len();
    // roots must fail the inequality so that accepted cubes are maximal
    let h_center = sites.iter().map(|(q, w)| euclid(center, q) + w).fold(f64::INFINITY, f64::min);
    let needed = if h_center.is_finite() {
        ((h_center + radius) / (WHITNEY * (k as f64).sqrt())).log2().floor() as i32 + 1
    } else {
        i32::MIN
    };
    let root_exp = ((2.0 * radius).log2().ceil() as i32).max(needed).max(floor_exp);
    let rs = 2f64.powi(root_exp);
    let lo_idx: Vec<i64> = center.iter().map(|c| ((c - radius) / rs).floor() as i64).collect();
    let hi_idx: Vec<i64> = center.iter().map(|c| ((c + radius) / rs).floor() as i64).collect();

    // dyadic recursion, passing down the sites that still violate the inequality
    let mut raw: Vec<(i32, Vec<i64>, bool)> = Vec::new();
    let all: Vec<usize> = (0..sites.len()).collect();
    let mut stack: Vec<(i32, Vec<i64>, Vec<usize>)> = Vec::new();
    let mut idx = lo_idx.clone();
    loop {
        stack.push((root_exp, idx.clone(), all.clone()));
        let mut d = 0;
        while d < k {
            idx[d] += 1;
            if idx[d] <= hi_idx[d] {
                break;
            }
            idx[d] = lo_idx[d];
            d += 1;
        }
        if d == k {
            break;
        }
    }
    while let Some((e, index, cand)) = stack.pop() {
        let s = 2f64.powi(e);
        let lo: Vec<f64> = index.iter().map(|&i| i as f64 * s).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + s).collect();
        if box_dist(center, &lo, &hi) > radius {
            continue;
        }
        let bound = WHITNEY * s * (k as f64).sqrt();
        let viol: Vec<usize> = cand
            .into_iter()
            .filter(|&i| box_dist(&sites[i].0, &lo, &hi) + sites[i].1 < bound)
            .collect();
        if viol.is_empty() {
            raw.push((e, index, false));
        } else if e <= floor_exp {
            raw.push((e, index, true));
        } else {
            for code in 0..(1usize << k) {
                let child: Vec<i64> = index.iter().enumerate().map(|(j, &i)| 2 * i + ((code >> j) & 1) as i64).collect();
                stack.push((e - 1, child, viol.clone()));
            }
        }
        if raw.len() + stack.len() > max_cells {
            return Err(Error::Config(format!("Whitney decomposition exceeds {max_cells} cells")));
        }
    }
    raw.sort();
    Ok(raw)
}

impl GraphModel {
    fn index_cells(&mut self) {
        let mut exps = BTreeSet::new();
        self.lookup.clear();
        for (i, c) in self.cells.iter().enumerate() {
            exps.insert(c.exponent);
            self.lookup.insert((c.exponent, c.index.clone()), i);
        }
        self.exponents = exps.into_iter().collect();
    }

    /// Restores the lookup tables after deserialization; heights need the region again.
    pub fn reattach(&mut self, region: &Region, tree: &CubeTree, cloud: &WeightedCloud) -> Result<()> {
        self.index_cells();
        let mut best: HashMap<usize, f64> = HashMap::new();
        for &id in &region.members {
            let q = tree.cube(id)?;
            for &i in &q.members {
                let e = best.entry(i).or_insert(f64::INFINITY);
                *e = e.min(q.diameter);
            }
        }
        let mut sites: Vec<(usize, f64)> = best.into_iter().collect();
        sites.sort_by_key(|s| s.0);
        self.height_sites = sites
            .into_iter()
            .map(|(i, w)| (self.split(cloud.point(i)).0, w))
            .collect();
        Ok(())
    }
}

fn normalized_frame(norm: &Normalization, plane: &HPlane) -> Result<crate::hplanes::IsotropicFrame> {
    let cols = plane
        .frame()
        .columns()
        .iter()
        .map(|c| apply_rotation(&norm.rotation, &HPoint::raw(c.clone(), 0.0)).map(|p| p.horizontal().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    crate::hplanes::IsotropicFrame::new(cols)
}

/// Member cube whose projection is closest to the box, ties to the size nearest `dr`.
fn nearest_cubelet(cand: &[&Cubelet], sites: &[(Vec<f64>, f64)], lo: &[f64], hi: &[f64], dr: f64) -> CubeId {
    let size_gap = |c: &Cubelet| (c.diameter.max(f64::MIN_POSITIVE) / dr).ln().abs();
    let mut order: Vec<(f64, usize)> = cand
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let (blo, bhi): (Vec<f64>, Vec<f64>) = (c.lo.clone(), c.hi.clone());
            let gap: f64 = lo
                .iter()
                .zip(hi)
                .zip(blo.iter().zip(&bhi))
                .map(|((l, h), (bl, bh))| {
                    let d = (bl - h).max(l - bh).max(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            (gap, j)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<(f64, f64, CubeId)> = None;
    for (lb, j) in order {
        if let Some((bd, _, _)) = best {
            if lb > bd {
                break;
            }
        }
        let c = cand[j];
        let mut d = f64::INFINITY;
        for &m in &c.members {
            d = d.min(box_dist(&sites[m].0, lo, hi));
            if d == 0.0 {
                break;
            }
        }
        let key = (d, size_gap(c), c.id);
        let better = match best {
            None => true,
            Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1 < b.1 || (key.1 == b.1 && key.2 < b.2))),
        };
        if better {
            best = Some(key);
        }
    }
    best.map(|b| b.2).expect("candidate list is never empty")
}

/// `t^{-k-1} inf_a ∫_{B(p,t)} |g - a|`, by quadrature on a grid of spacing `t/16`.
pub fn gamma_number(model: &GraphModel, p: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument("gamma scale must be positive".into()));
    }
    let k = model.k;
    let h = t / 16.0;
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for u in crate::cloud::generate::grid_coords(k, h, 2.0 * t) {
        if u.iter().map(|x| x * x).sum::<f64>().sqrt() > t {
            continue;
        }
        let q: Vec<f64> = p.iter().zip(&u).map(|(a, b)| a + b).collect();
        values.push(model.evaluate(&q)?);
        nodes.push(u);
    }
    if nodes.is_empty() {
        return Err(Error::Degenerate("empty quadrature grid".into()));
    }
    let cost = l1_affine_residual(&nodes, &values);
    Ok(cost * h.powi(k as i32) / t.powi(k as i32 + 1))
}

/// `min_a Σ |v_i - a(u_i)|` over affine `a`, by iteratively reweighted least squares.
pub(crate) fn l1_affine_residual(nodes: &[Vec<f64>], values: &[Vec<f64>]) -> f64 {
    let k = nodes[0].len();
    let m = values[0].len();
    let design = DMatrix::from_fn(nodes.len(), k + 1, |r, c| if c == 0 { 1.0 } else { nodes[r][c - 1] });
    let resid = |coef: &DMatrix<f64>| -> Vec<f64> {
        let fit = &design * coef;
        (0..nodes.len())
            .map(|r| (0..m).map(|c| (values[r][c] - fit[(r, c)]).powi(2)).sum::<f64>().sqrt())
            .collect()
    };
    let scale = values.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let mut w = vec![1.0_f64; nodes.len()];
    let mut best = f64::INFINITY;
    for _ in 0..100 {
        let a = DMatrix::from_fn(nodes.len(), k + 1, |r, c| design[(r, c)] * w[r].sqrt());
        let b = DMatrix::from_fn(nodes.len(), m, |r, c| values[r][c] * w[r].sqrt());
        let coef = match a.svd(true, true).solve(&b, 1e-14) {
            Ok(c) => c,
            Err(_) => break,
        };
        let r = resid(&coef);
        let total: f64 = r.iter().sum();
        if total >= best * (1.0 - 1e-10) {
            best = best.min(total);
            break;
        }
        best = total;
        if total <= 1e-14 * scale * nodes.len() as f64 {
            break;
        }
        w = r.iter().map(|x| 1.0 / x.max(1e-12 * scale)).collect();
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphAudit {
    pub region: usize,
    pub cells: usize,
    pub zero_cells: usize,
    /// Largest sampled `|g(p) - g(q)| / |p - q|`.
    pub lipschitz: f64,
    /// Largest Lipschitz constant among the affine pieces.
    pub affine_lipschitz: f64,
    /// `max |g| / (K₀ √δ d(Q(S)))`.
    pub sup_constant: f64,
    /// `max |A_i - A_j| / (√ε d(R_j))` on `100R_j` over cells with meeting `10R`.
    pub neighbor_constant: f64,
    /// Range of `H / d(R)` sampled on `10R` for non-floor cells.
    pub whitney_low: f64,
    pub whitney_high: f64,
    /// Largest `1 + dist(y, Q_i)/d(Q_i)` for points of `K₀Q(S)` over `R_i`.
    pub fiber_constant: f64,
    /// Largest `h(x) / H(P(x))` on member points.
    pub height_constant: f64,
    /// Largest `|P^⊥x - g(Px)| / (√ε h(x))` on member points with `h > resolution`.
    pub approximation_constant: f64,
    pub probes: usize,
}

pub fn audit_graph(
    model: &GraphModel,
    region: &Region,
    tree: &CubeTree,
    cloud: &WeightedCloud,
    probes: usize,
    seed: u64,
) -> Result<GraphAudit> {
    let k = model.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = &model.options;
    let pts = cloud.points();

    let in_ball = |rng: &mut ChaCha8Rng, c: &[f64], r: f64| -> Vec<f64> {
        loop {
            let u: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            if u.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                return c.iter().zip(&u).map(|(a, b)| a + r * b).collect();
            }
        }
    };

    // Lipschitz and sup over the window, pairs at log-uniform separations
    let mut lipschitz: f64 = 0.0;
    let mut sup: f64 = 0.0;
    let fine = 2f64.powi(model.cells.iter().map(|c| c.exponent).min().unwrap_or(0)) / 4.0;
    let coarse = model.window_radius;
    for _ in 0..probes {
        let p = in_ball(&mut rng, &model.window_center, model.window_radius);
        let sep = fine * (coarse / fine).powf(rng.random_range(0.0..1.0));
        let q: Vec<f64> = {
            let dir = in_ball(&mut rng, &vec![0.0; k], 1.0);
            let nd = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            p.iter().zip(&dir).map(|(a, d)| a + sep * d / nd).collect()
        };
        let gp = model.evaluate(&p)?;
        sup = sup.max(gp.iter().map(|x| x * x).sum::<f64>().sqrt());
        if let Ok(gq) = model.evaluate(&q) {
            let num = euclid(&gp, &gq);
            let den = euclid(&p, &q);
            if den > 0.0 {
                lipschitz = lipschitz.max(num / den);
            }
        }
    }
    let affine_lipschitz = model.cells.iter().map(|c| c.affine.lipschitz()).fold(0.0, f64::max);

    // neighbors and Whitney bounds on a sample of cells
    let sample: Vec<usize> = if model.cells.len() <= 300 {
        (0..model.cells.len()).collect()
    } else {
        (0..300).map(|_| rng.random_range(0..model.cells.len())).collect()
    };
    let mut neighbor: f64 = 0.0;
    let mut wlo = f64::INFINITY;
    let mut whi: f64 = 0.0;
    for &j in &sample {
        let cj = &model.cells[j];
        let (sj, centj) = (cj.side(), cj.center());
        for ci in &model.cells {
            let si = ci.side();
            let centi = ci.center();
            let meets = centi.iter().zip(&centj).all(|(a, b)| (a - b).abs() <= 5.0 * (si + sj));
            if !meets || ci.affine == cj.affine {
                continue;
            }
            let mut worst: f64 = 0.0;
            for code in 0..(1usize << k) {
                let v: Vec<f64> = centj
                    .iter()
                    .enumerate()
                    .map(|(d, c)| c + if (code >> d) & 1 == 1 { 50.0 * sj } else { -50.0 * sj })
                    .collect();
                worst = worst.max(euclid(&ci.affine.eval(&v), &cj.affine.eval(&v)));
            }
            neighbor = neighbor.max(worst / (o.eps.sqrt() * cj.diameter()));
        }
        if !cj.zero {
            for _ in 0..4 {
                let u: Vec<f64> = centj.iter().map(|c| c + 5.0 * sj * rng.random_range(-1.0..1.0)).collect();
                let r = model.height(&u) / cj.diameter();
                wlo = wlo.min(r);
                whi = whi.max(r);
            }
        }
    }
    if !wlo.is_finite() {
        wlo = 0.0;
    }

    // member points: fibers, h against H, approximation
    let top = tree.cube(region.top)?;
    let rd = RegionDistance::new(region, tree, cloud);
    let chosen: Vec<usize> = if top.members.len() <= probes {
        top.members.clone()
    } else {
        (0..probes).map(|_| top.members[rng.random_range(0..top.members.len())]).collect()
    };
    let mut fiber: f64 = 1.0;
    let mut height_c: f64 = 0.0;
    let mut approx: f64 = 0.0;
    for &i in &chosen {
        let (p, perp) = model.split(&pts[i]);
        let h = rd.h(&pts[i]);
        let hh = model.height(&p);
        if hh > 0.0 {
            height_c = height_c.max(h / hh);
        }
        if h > cloud.resolution() {
            let g = model.evaluate(&p)?;
            approx = approx.max(euclid(&perp, &g) / (o.eps.sqrt() * h));
        }
        if let Some(cell) = model.cell_containing(&p) {
            let q = tree.cube(model.cells[cell].companion)?;
            if q.diameter > 0.0 {
                let d = q.members.iter().map(|&m| crate::hgroup::dist(&pts[i], &pts[m])).fold(f64::INFINITY, f64::min);
                fiber = fiber.max(1.0 + d / q.diameter);
            }
        }
    }
    Ok(GraphAudit {
        region: model.region,
        cells: model.cells.len(),
        zero_cells: model.cells.iter().filter(|c| c.zero).count(),
        lipschitz,
        affine_lipschitz,
        sup_constant: sup / (o.k0 * o.delta.sqrt() * model.top_diameter.max(f64::MIN_POSITIVE)),
        neighbor_constant: neighbor,
        whitney_low: wlo,
        whitney_high: whi,
        fiber_constant: fiber,
        height_constant: height_c,
        approximation_constant: approx,
        probes,
    })
}

impl GraphModel {
    pub fn cell_containing(&self, p: &[f64]) -> Option<usize> {
        for &e in &self.exponents {
            let s = 2f64.powi(e);
            let idx: Vec<i64> = p.iter().map(|x| (x / s).floor() as i64).collect();
            if let Some(&id) = self.lookup.get(&(e, idx)) {
                return Some(id);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{generate, GenParams};
    use crate::corona::{build_stopping_regions, classify_good_cubes};
    use crate::cubes::build_cube_tree;
    use crate::hgroup::dist;
    use crate::hplanes::IsotropicFrame;

    fn random_plane(seed: u64, n: usize, k: usize) -> HPlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = IsotropicFrame::random(n, k, &mut rng).unwrap();
        let h: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        HPlane::new(HPoint::new(h, rng.random_range(-1.0..1.0)).unwrap(), frame).unwrap()
    }

    #[test]
    fn normalization_lands_on_standard_plane() {
        for (seed, n, k) in [(1, 1, 1), (2, 2, 1), (3, 2, 2), (4, 3, 2)] {
            let v = random_plane(seed, n, k);
            let nm = normalize_plane(&v).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<HPoint> = (0..6)
                .map(|_| v.point_at(&(0..k).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()))
                .collect();
            for x in &samples {
                let y = nm.apply(x);
                assert!(y.vertical().abs() < 1e-9);
                assert!(y.horizontal()[k..].iter().all(|c| c.abs() < 1e-9), "{y:?}");
            }
            for a in &samples {
                for b in &samples {
                    let (d0, d1) = (dist(a, b), dist(&nm.apply(a), &nm.apply(b)));
                    assert!((d0 - d1).abs() <= 1e-9 * (1.0 + d0));
                }
            }
        }
    }

    #[test]
    fn standard_plane_normalizes_to_identity() {
        let v = HPlane::new(HPoint::origin(2), IsotropicFrame::standard(2, 2).unwrap()).unwrap();
        let nm = normalize_plane(&v).unwrap();
        assert!((nm.rotation.matrix() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
        assert_eq!(nm.translation, HPoint::origin(2));
    }

    #[test]
    fn affine_map_reproduces_plane() {
        let v = random_plane(9, 2, 1);
        let a = AffineMap::from_plane(&v).unwrap();
        for u in [-1.0, 0.3, 2.0] {
            let x = v.point_at(&[u]);
            let h = x.horizontal();
            let g = a.eval(&h[..1]);
            for (gi, hi) in g.iter().zip(&h[1..]) {
                assert!((gi - hi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bump_profile() {
        let cell = WhitneyCell {
            exponent: 0,
            index: vec![0, 0],
            zero: false,
            companion: 0,
            affine: AffineMap {
                linear: vec![vec![0.0; 2]; 2],
                offset: vec![0.0; 2],
            },
        };
        assert_eq!(bump(&cell, &[0.5, 0.5]), 1.0);
        assert_eq!(bump(&cell, &[1.5, -0.49]), 1.0);
        assert_eq!(bump(&cell, &[2.0, 0.5]), 0.0);
        let mid = bump(&cell, &[1.75, 0.5]);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn constant_height_gives_one_level() {
        // one heavy site: H varies by a factor 1.001 over the window
        let c = 3.0;
        for k in [1usize, 2] {
            let center = vec![0.0; k];
            let cells = whitney_cells(&[(center.clone(), c)], &center, 1e-3 * c, -60, 1_000_000).unwrap();
            let root_k = (k as f64).sqrt();
            for (e, _, zero) in &cells {
                let s = 2f64.powi(*e);
                assert!(!zero);
                assert!(s > c / (40.0 * root_k) && s <= c / (20.0 * root_k), "side {s}");
            }
        }
    }

    fn plane_setup() -> (WeightedCloud, CubeTree, GoodCubes, Vec<Region>) {
        let cloud = generate(&GenParams::plane(1, 1, 0.01, 1.0), 0).unwrap();
        let tree = build_cube_tree(&cloud, 2.0, 0).unwrap();
        let good = classify_good_cubes(&tree, &cloud, 0.05, 20.0).unwrap();
        let regions = build_stopping_regions(&tree, &good, 0.1).unwrap();
        (cloud, tree, good, regions)
    }

    #[test]
    fn plane_cloud_graph_vanishes() {
        let (cloud, tree, good, regions) = plane_setup();
        let r = regions.iter().max_by_key(|r| r.members.len()).unwrap();
        let m = build_graph_model(r, &tree, &cloud, &good, &GraphOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = vec![m.window_center[0] + m.window_radius * rng.random_range(-1.0..1.0)];
            let g = m.evaluate(&p).unwrap();
            assert!(g.iter().all(|v| v.abs() < cloud.resolution()), "{g:?}");
        }
        let far = vec![m.window_center[0] + 10.0 * m.window_radius];
        assert!(matches!(m.evaluate(&far), Err(Error::Domain(_))));
        let audit = audit_graph(&m, r, &tree, &cloud, 200, 1).unwrap();
        assert!(audit.lipschitz <= 0.5 && audit.whitney_low >= 10.0 && audit.whitney_high <= 60.0, "{audit:?}");
    }

    #[test]
    fn height_is_lipschitz_and_below_h() {
        let (cloud, tree, good, regions) = plane_setup();
        let r = regions.iter().max_by_key(|r| r.members.len()).unwrap();
        let m = build_graph_model(r, &tree, &cloud, &good, &GraphOptions::default()).unwrap();
        let rd = RegionDistance::new(r, &tree, &cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let p = [rng.random_range(-2.0..2.0)];
            let q = [rng.random_range(-2.0..2.0)];
            assert!((m.height(&p) - m.height(&q)).abs() <= (p[0] - q[0]).abs() + 1e-12);
        }
        for &i in tree.cube(r.top).unwrap().members.iter().step_by(7) {
            let x = cloud.point(i);
            assert!(m.height(&m.split(x).0) <= rd.h(x) + 1e-12);
        }
    }

    #[test]
    fn single_bump_region_is_exact() {
        let (cloud, tree, good, regions) = plane_setup();
        let r = regions.iter().max_by_key(|r| r.members.len()).unwrap();
        let m = build_graph_model(r, &tree, &cloud, &good, &GraphOptions::default()).unwrap();
        // the largest cell's center sees only its own bump when neighbours are as large
        let j = (0..m.cells.len()).max_by_key(|&i| m.cells[i].exponent).unwrap();
        let c = m.cells[j].center();
        let act = m.active(&c);
        if act.len() == 1 {
            assert_eq!(m.evaluate(&c).unwrap(), m.cells[j].affine.eval(&c));
        }
    }

    #[test]
    fn l1_affine_matches_grid_search() {
        // v(u) = e·|u| on [-1, 1]
        let e = 0.3;
        let nodes: Vec<Vec<f64>> = (0..=40).map(|i| vec![-1.0 + i as f64 / 20.0]).collect();
        let values: Vec<Vec<f64>> = nodes.iter().map(|u| vec![e * u[0].abs()]).collect();
        let fast = l1_affine_residual(&nodes, &values);
        let mut best = f64::INFINITY;
        let mut span = (0.0, 0.5, 0.0, 0.5);
        for _ in 0..6 {
            let mut arg = (0.0, 0.0);
            for i in 0..=60 {
                for j in 0..=60 {
                    let a0 = span.0 - span.1 + 2.0 * span.1 * i as f64 / 60.0;
                    let a1 = span.2 - span.3 + 2.0 * span.3 * j as f64 / 60.0;
                    let c: f64 = nodes.iter().zip(&values).map(|(u, v)| (v[0] - a0 - a1 * u[0]).abs()).sum();
                    if c < best {
                        best = c;
                        arg = (a0, a1);
                    }
                }
            }
            span = (arg.0, span.1 / 5.0, arg.1, span.3 / 5.0);
        }
        assert!((fast - best).abs() <= 1e-3 * best, "irls {fast} grid {best}");
        let shifted: Vec<Vec<f64>> = nodes.iter().zip(&values).map(|(u, v)| vec![v[0] + 2.0 - 0.7 * u[0]]).collect();
        assert!((l1_affine_residual(&nodes, &shifted) - fast).abs() <= 1e-6 * fast);
    }

    #[test]
    fn gamma_vanishes_on_flat_graph() {
        let (cloud, tree, good, regions) = plane_setup();
        let r = regions.iter().max_by_key(|r| r.members.len()).unwrap();
        let m = build_graph_model(r, &tree, &cloud, &good, &GraphOptions::default()).unwrap();
        let g = gamma_number(&m, &m.window_center, 0.5).unwrap();
        assert!(g < 1e-9, "{g}");
        assert!(gamma_number(&m, &m.window_center, 0.0).is_err());
    }

    #[test]
    fn model_roundtrips_through_json() {
        let (cloud, tree, good, regions) = plane_setup();
        let r = regions.iter().max_by_key(|r| r.members.len()).unwrap();
        let m = build_graph_model(r, &tree, &cloud, &good, &GraphOptions::default()).unwrap();
        let mut back: GraphModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        back.reattach(r, &tree, &cloud).unwrap();
        let p = vec![m.window_center[0] + 0.1];
        assert_eq!(back.evaluate(&p).unwrap(), m.evaluate(&p).unwrap());
        assert_eq!(back.height(&p), m.height(&p));
    }
}
