//! Isotropic k-planes, horizontal projections and plane comparison constants.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hgroup::{conj, dist, symp, HPoint};

const FRAME_TOL: f64 = 1e-9;
const COLLAPSE_TOL: f64 = 1e-12;

/// Orthonormal columns in R²ⁿ with pairwise vanishing symplectic form.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct IsotropicFrame {
    columns: Vec<Vec<f64>>,
}

impl IsotropicFrame {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let k = columns.len();
        if k == 0 {
            return Err(Error::InvalidArgument("frame needs at least one column".into()));
        }
        let m = columns[0].len();
        if m == 0 || m % 2 != 0 {
            return Err(Error::InvalidArgument(format!("bad column length {m}")));
        }
        for c in &columns {
            check_dim(m, c.len())?;
        }
        if k > m / 2 {
            return Err(Error::InvalidArgument(format!(
                "isotropic frames have at most n = {} columns, got {k}",
                m / 2
            )));
        }
        for i in 0..k {
            for j in i..k {
                let ip = dot(&columns[i], &columns[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                if (ip - want).abs() > FRAME_TOL {
                    return Err(Error::Validation(format!(
                        "columns {i},{j} not orthonormal (inner product {ip})"
                    )));
                }
                let a = symp(&columns[i], &columns[j]);
                if a.abs() > FRAME_TOL {
                    return Err(Error::Validation(format!(
                        "columns {i},{j} not isotropic (A = {a})"
                    )));
                }
            }
        }
        Ok(IsotropicFrame { columns })
    }

    /// The standard frame e₁, …, e_k of R²ⁿ.
    pub fn standard(n: usize, k: usize) -> Result<Self> {
        let cols = (0..k)
            .map(|i| {
                let mut v = vec![0.0; 2 * n];
                v[i] = 1.0;
                v
            })
            .collect();
        IsotropicFrame::new(cols)
    }

    /// Random frame from Gaussian seeds.
    pub fn random<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<Self> {
        loop {
            let seeds: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..2 * n).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            match isotropic_gram_schmidt(&seeds, k) {
                Ok(f) => return Ok(f),
                Err(Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn n(&self) -> usize {
        self.columns[0].len() / 2
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// `Fᵀ v`.
    pub fn coords(&self, v: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| dot(c, v)).collect()
    }

    /// `F u`.
    pub fn combine(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.columns[0].len()];
        for (c, &w) in self.columns.iter().zip(u) {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        out
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let m = self.columns[0].len();
        DMatrix::from_fn(m, self.k(), |r, c| self.columns[c][r])
    }
}

impl<'de> Deserialize<'de> for IsotropicFrame {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let cols = Vec::<Vec<f64>>::deserialize(d)?;
        IsotropicFrame::new(cols).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormalizes seeds against the accepted columns and their symplectic
/// conjugates. Seeds whose residual collapses are skipped.
pub fn isotropic_gram_schmidt(seeds: &[Vec<f64>], k: usize) -> Result<IsotropicFrame> {
    let m = seeds.first().map(|s| s.len()).unwrap_or(0);
    if m == 0 || m % 2 != 0 {
        return Err(Error::InvalidArgument("seeds must have even positive length".into()));
    }
    if k == 0 || k > m / 2 {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got k = {k}")));
    }
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(k);
    // Orthonormal basis of span{b_i, J b_i}.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(2 * k);
    for seed in seeds {
        check_dim(m, seed.len())?;
        if accepted.len() == k {
            break;
        }
        let scale = norm(seed);
        if !(scale > 0.0) || !scale.is_finite() {
            continue;
        }
        let mut v: Vec<f64> = seed.iter().map(|x| x / scale).collect();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
        }
        let r = norm(&v);
        if r < COLLAPSE_TOL {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= r);
        let mut jv = conj(&v);
        for b in &basis {
            let c = dot(&jv, b);
            for (vi, bi) in jv.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let rj = norm(&jv);
        basis.push(v.clone());
        if rj > COLLAPSE_TOL {
            jv.iter_mut().for_each(|x| *x /= rj);
            basis.push(jv);
        }
        accepted.push(v);
    }
    if accepted.len() < k {
        return Err(Error::Degenerate(format!(
            "only {} of {k} isotropic directions survived",
            accepted.len()
        )));
    }
    IsotropicFrame::new(accepted)
}

/// Affine isotropic plane `τ_p(span F)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPlane {
    base: HPoint,
    frame: IsotropicFrame,
}

impl HPlane {
    pub fn new(base: HPoint, frame: IsotropicFrame) -> Result<Self> {
        check_dim(frame.n(), base.n())?;
        Ok(HPlane { base, frame })
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    pub fn frame(&self) -> &IsotropicFrame {
        &self.frame
    }

    pub fn k(&self) -> usize {
        self.frame.k()
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// `τ_p(F u)`.
    pub fn point_at(&self, u: &[f64]) -> HPoint {
        let fu = self.frame.combine(u);
        let p = self.base.horizontal();
        let vertical = self.base.vertical() + 2.0 * symp(p, &fu);
        let h = p.iter().zip(&fu).map(|(a, b)| a + b).collect();
        HPoint::raw(h, vertical)
    }

    /// Plane coordinates of the horizontal projection of `x`.
    pub fn coords_of(&self, x: &HPoint) -> Vec<f64> {
        let a: Vec<f64> = x
            .horizontal()
            .iter()
            .zip(self.base.horizontal())
            .map(|(a, b)| a - b)
            .collect();
        self.frame.coords(&a)
    }

    /// Same plane, stored with base `point_at(u)`.
    pub fn rebased(&self, u: &[f64]) -> HPlane {
        HPlane {
            base: self.point_at(u),
            frame: self.frame.clone(),
        }
    }

    pub fn contains(&self, x: &HPoint, tol: f64) -> bool {
        dist(x, &project(self, x)) <= tol
    }

    /// Point of the plane nearest to `x` together with the distance.
    pub fn nearest(&self, x: &HPoint) -> Result<(f64, HPoint)> {
        check_dim(self.n(), x.n())?;
        let ph = self.base.horizontal();
        let a: Vec<f64> = x.horizontal().iter().zip(ph).map(|(a, b)| a - b).collect();
        let s = self.frame.coords(&a);
        let fs = self.frame.combine(&s);
        let r2: f64 = a.iter().zip(&fs).map(|(u, v)| (u - v) * (u - v)).sum();
        let c0 = x.vertical() - self.base.vertical() - 2.0 * symp(ph, x.horizontal());
        let l: Vec<f64> = self
            .frame
            .columns()
            .iter()
            .map(|f| 2.0 * symp(&a, f))
            .collect();
        let c1 = c0 + dot(&l, &s);
        let ln = norm(&l);
        let (best, mu) = minimize_along_fiber(r2, c1, ln)?;
        let u: Vec<f64> = if ln > 0.0 {
            s.iter().zip(&l).map(|(si, li)| si + mu * li / ln).collect()
        } else {
            s
        };
        Ok((best, self.point_at(&u)))
    }
}

/// Minimizes `g(μ) = (r2 + μ²)² + (c1 + μ·ln)²` and returns `(g^{1/4}, μ)`.
fn minimize_along_fiber(r2: f64, c1: f64, ln: f64) -> Result<(f64, f64)> {
    let g = |mu: f64| {
        let h = r2 + mu * mu;
        let t = c1 + mu * ln;
        h * h + t * t
    };
    let p = r2 + 0.5 * ln * ln;
    let q = 0.5 * ln * c1;
    let mut mu = if p > 0.0 {
        let arg = 1.5 * q / p * (3.0 / p).sqrt();
        -2.0 * (p / 3.0).sqrt() * (arg.asinh() / 3.0).sinh()
    } else {
        0.0
    };
    // Newton polish on the cubic; keep only improvements
    for _ in 0..3 {
        let f = mu * mu * mu + p * mu + q;
        let df = 3.0 * mu * mu + p;
        if df <= 0.0 {
            break;
        }
        let next = mu - f / df;
        if !next.is_finite() || g(next) > g(mu) {
            break;
        }
        mu = next;
    }
    let proj_val = (r2 * r2 + c1 * c1).sqrt().sqrt();
    let mut best = g(mu).sqrt().sqrt();
    if !(best <= proj_val) {
        mu = 0.0;
        best = proj_val;
    }
    if best * 3.0 * (1.0 + 1e-12) + 1e-300 < proj_val {
        return Err(Error::Internal(format!(
            "point-plane distance {best} violates the projection bracket {proj_val}"
        )));
    }
    Ok((best, mu))
}

/// Orthonormal basis of the Euclidean complement of the frame in R²ⁿ.
pub(crate) fn complement_basis(frame: &IsotropicFrame) -> Vec<Vec<f64>> {
    let m = 2 * frame.n();
    let mut basis: Vec<Vec<f64>> = frame.columns().to_vec();
    let k = basis.len();
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&e, b);
                for (ei, bi) in e.iter_mut().zip(b) {
                    *ei -= c * bi;
                }
            }
        }
        let r = norm(&e);
        if r > 1e-8 {
            basis.push(e.iter().map(|x| x / r).collect());
        }
        if basis.len() == m {
            break;
        }
    }
    basis.split_off(k)
}

/// Allocation-free `dist_to_plane` for repeated queries against one plane.
pub(crate) struct PlaneDistance<'a> {
    plane: &'a HPlane,
    a: Vec<f64>,
    s: Vec<f64>,
    projected: bool,
}

impl<'a> PlaneDistance<'a> {
    pub(crate) fn new(plane: &'a HPlane) -> Self {
        PlaneDistance {
            plane,
            a: vec![0.0; 2 * plane.n()],
            s: vec![0.0; plane.k()],
            projected: false,
        }
    }

    /// Use `d(x, P_V x)` instead, which is within a factor 3 of the true distance.
    pub(crate) fn projected(mut self, on: bool) -> Self {
        self.projected = on;
        self
    }

    pub(crate) fn eval(&mut self, x: &HPoint) -> Result<f64> {
        let ph = self.plane.base.horizontal();
        let xh = x.horizontal();
        for ((a, xi), pi) in self.a.iter_mut().zip(xh).zip(ph) {
            *a = xi - pi;
        }
        let cols = self.plane.frame.columns();
        for (si, f) in self.s.iter_mut().zip(cols) {
            *si = dot(&self.a, f);
        }
        let mut r2 = 0.0;
        for j in 0..self.a.len() {
            let mut r = self.a[j];
            for (si, f) in self.s.iter().zip(cols) {
                r -= si * f[j];
            }
            r2 += r * r;
        }
        let mut ls = 0.0;
        let mut ll = 0.0;
        for (si, f) in self.s.iter().zip(cols) {
            let li = 2.0 * symp(&self.a, f);
            ls += li * si;
            ll += li * li;
        }
        let c1 = x.vertical() - self.plane.base.vertical() - 2.0 * symp(ph, xh) + ls;
        if self.projected {
            return Ok((r2 * r2 + c1 * c1).sqrt().sqrt());
        }
        minimize_along_fiber(r2, c1, ll.sqrt()).map(|(d, _)| d)
    }
}

/// Horizontal projection `P_V`.
pub fn project(v: &HPlane, x: &HPoint) -> HPoint {
    v.point_at(&v.coords_of(x))
}

/// `inf_{y ∈ V} d(x, y)`.
pub fn dist_to_plane(x: &HPoint, v: &HPlane) -> Result<f64> {
    v.nearest(x).map(|(d, _)| d)
}

/// Smallest `C ≥ 1` with `d(x,y) ≤ C d(P_W x, P_W y)` on `V`; infinite if `P_W` collapses `V`.
pub fn plane_angle(v: &HPlane, w: &HPlane) -> Result<f64> {
    check_dim(v.n(), w.n())?;
    check_dim(v.k(), w.k())?;
    let m = v.frame.to_matrix().transpose() * w.frame.to_matrix();
    let sv = m.singular_values();
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok((1.0 / smin).max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningPoints {
    pub points: Vec<HPoint>,
    /// Indices of the source points whose projections were chosen.
    pub sources: Vec<usize>,
    /// Achieved `min_i d(y_{i+1}, L_i) / diam`.
    pub separation: f64,
    /// Largest distance from a chosen point to its source point.
    pub max_offset: f64,
}

/// Greedy choice of `k+1` well-spread points of `V` near the given points.
pub fn spanning_points(
    points: &[HPoint],
    v: &HPlane,
    diam: f64,
    c_min: f64,
) -> Result<SpanningPoints> {
    let k = v.k();
    if points.is_empty() {
        return Err(Error::Degenerate("no points".into()));
    }
    if !(diam > 0.0) {
        return Err(Error::InvalidArgument("diameter must be positive".into()));
    }
    for q in points {
        check_dim(v.n(), q.n())?;
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|q| v.coords_of(q)).collect();
    let far = |from: &[f64]| -> usize {
        let mut best = 0;
        let mut bd = -1.0;
        for (i, c) in coords.iter().enumerate() {
            let d = sq_dist(c, from);
            if d > bd {
                bd = d;
                best = i;
            }
        }
        best
    };
    let first = far(&coords[0]);
    let mut chosen = vec![first];
    let mut separation = f64::INFINITY;
    // orthonormal basis of the span directions
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for _ in 0..k {
        let origin = &coords[chosen[0]];
        let mut best = 0;
        let mut bd = -1.0;
        for (i, c) in coords.iter().enumerate() {
            let d = residual(c, origin, &dirs).1;
            if d > bd {
                bd = d;
                best = i;
            }
        }
        let (res, dn) = residual(&coords[best], origin, &dirs);
        let sep = dn / diam;
        separation = separation.min(sep);
        if !(sep > c_min) {
            return Err(Error::Degenerate(format!(
                "no spanning point beyond separation {c_min} (best {sep:.3e})"
            )));
        }
        dirs.push(res.iter().map(|x| x / dn).collect());
        chosen.push(best);
    }
    let pts: Vec<HPoint> = chosen.iter().map(|&i| v.point_at(&coords[i])).collect();
    let max_offset = chosen
        .iter()
        .zip(&pts)
        .map(|(&i, y)| dist(&points[i], y))
        .fold(0.0, f64::max);
    Ok(SpanningPoints {
        points: pts,
        sources: chosen,
        separation,
        max_offset,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn residual(c: &[f64], origin: &[f64], dirs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let mut r: Vec<f64> = c.iter().zip(origin).map(|(a, b)| a - b).collect();
    for d in dirs {
        let t = dot(&r, d);
        for (ri, di) in r.iter_mut().zip(d) {
            *ri -= t * di;
        }
    }
    let n = norm(&r);
    (r, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(c: &[f64]) -> HPoint {
        HPoint::from_coords(c).unwrap()
    }

    #[test]
    fn reusable_distance_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=3 {
            for k in 1..=n {
                let f = IsotropicFrame::random(n, k, &mut rng).unwrap();
                let base: Vec<f64> = (0..2 * n + 1).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = HPlane::new(pt(&base), f).unwrap();
                let mut pd = PlaneDistance::new(&v);
                for _ in 0..50 {
                    let c: Vec<f64> = (0..2 * n + 1).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let x = pt(&c);
                    let a = dist_to_plane(&x, &v).unwrap();
                    let b = pd.eval(&x).unwrap();
                    assert!((a - b).abs() <= 1e-12 * (1.0 + a), "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn gram_schmidt_drops_conjugate() {
        let f = isotropic_gram_schmidt(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1).unwrap();
        assert_eq!(f.columns(), &[vec![1.0, 0.0]]);
        let s = IsotropicFrame::standard(3, 2).unwrap();
        let g = isotropic_gram_schmidt(s.columns(), 2).unwrap();
        assert_eq!(g, s);
        // e1 then e_{n+1}: second seed is entirely conjugate
        let e = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        assert!(matches!(
            isotropic_gram_schmidt(&[e(0), e(2)], 2),
            Err(Error::Degenerate(_))
        ));
        let h = isotropic_gram_schmidt(&[e(0), e(2), e(1)], 2).unwrap();
        assert_eq!(h.columns()[1], e(1));
    }

    #[test]
    fn projection_onto_standard_plane() {
        let v = HPlane::new(HPoint::origin(2), IsotropicFrame::standard(2, 1).unwrap()).unwrap();
        let x = pt(&[1.5, -2.0, 0.3, 0.7, 4.0]);
        let p = project(&v, &x);
        assert_eq!(p, pt(&[1.5, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn dist_examples() {
        let v = HPlane::new(HPoint::origin(1), IsotropicFrame::standard(1, 1).unwrap()).unwrap();
        assert_eq!(dist_to_plane(&pt(&[0.3, 0.0, 0.0]), &v).unwrap(), 0.0);
        // purely vertical offset: the plane point at u minimizes u⁴ + 1 at u = 0
        assert!((dist_to_plane(&pt(&[0.0, 0.0, 1.0]), &v).unwrap() - 1.0).abs() < 1e-15);
    }

    fn grid_oracle(x: &HPoint, v: &HPlane) -> f64 {
        let s = v.coords_of(x)[0];
        let r = dist(x, &project(v, x));
        let mut best = f64::INFINITY;
        let steps = 400_000;
        for i in 0..=steps {
            let u = s - 2.0 * r + 4.0 * r * i as f64 / steps as f64;
            best = best.min(dist(x, &v.point_at(&[u])));
        }
        best
    }

    #[test]
    fn dist_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let f = IsotropicFrame::random(1, 1, &mut rng).unwrap();
            let base = pt(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let v = HPlane::new(base, f).unwrap();
            let x = pt(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let d = dist_to_plane(&x, &v).unwrap();
            let o = grid_oracle(&x, &v);
            assert!(d <= o + 1e-12);
            assert!((d - o).abs() < 1e-4, "{d} vs {o}");
        }
    }

    #[test]
    fn angle_examples() {
        let v = HPlane::new(HPoint::origin(1), IsotropicFrame::standard(1, 1).unwrap()).unwrap();
        assert_eq!(plane_angle(&v, &v).unwrap(), 1.0);
        let th: f64 = 0.7;
        let w = HPlane::new(
            HPoint::origin(1),
            IsotropicFrame::new(vec![vec![th.cos(), th.sin()]]).unwrap(),
        )
        .unwrap();
        assert!((plane_angle(&v, &w).unwrap() - 1.0 / th.cos()).abs() < 1e-12);
        let perp = HPlane::new(HPoint::origin(1), IsotropicFrame::new(vec![vec![0.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(plane_angle(&v, &perp).unwrap(), f64::INFINITY);
    }

    #[test]
    fn spanning_examples() {
        let v = HPlane::new(HPoint::origin(2), IsotropicFrame::standard(2, 2).unwrap()).unwrap();
        let two = vec![v.point_at(&[0.0, 0.0]), v.point_at(&[1.0, 0.0])];
        let v1 = HPlane::new(HPoint::origin(1), IsotropicFrame::standard(1, 1).unwrap()).unwrap();
        let two1: Vec<HPoint> = two.iter().map(|p| pt(&[p.horizontal()[0], 0.0, 0.0])).collect();
        let sp = spanning_points(&two1, &v1, 1.0, 1e-3).unwrap();
        assert_eq!(sp.points.len(), 2);
        assert!((sp.separation - 1.0).abs() < 1e-15);
        let line: Vec<HPoint> = (0..5).map(|i| v.point_at(&[i as f64, 0.0])).collect();
        assert!(matches!(spanning_points(&line, &v, 4.0, 1e-3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn spanning_on_square_net() {
        let v = HPlane::new(HPoint::origin(2), IsotropicFrame::standard(2, 2).unwrap()).unwrap();
        let side = 1.0;
        let m = 6;
        let mut coords = Vec::new();
        for i in 0..=m {
            for j in 0..=m {
                coords.push(vec![side * i as f64 / m as f64, side * j as f64 / m as f64]);
            }
        }
        let pts: Vec<HPoint> = coords.iter().map(|c| v.point_at(c)).collect();
        let diam = side * 2f64.sqrt();
        let sp = spanning_points(&pts, &v, diam, 1e-3).unwrap();
        assert!(sp.separation * diam >= side / 4.0);
        // brute force: each greedy step picks a point maximizing the distance to the current span
        let o = &coords[sp.sources[0]];
        let c1 = &coords[sp.sources[1]];
        let best1 = coords.iter().map(|c| sq_dist(c, o)).fold(0.0, f64::max);
        assert!((sq_dist(c1, o) - best1).abs() < 1e-12);
        let dir: Vec<f64> = {
            let r: Vec<f64> = c1.iter().zip(o).map(|(a, b)| a - b).collect();
            let n = norm(&r);
            r.iter().map(|x| x / n).collect()
        };
        let best2 = coords
            .iter()
            .map(|c| residual(c, o, std::slice::from_ref(&dir)).1)
            .fold(0.0, f64::max);
        assert!((residual(&coords[sp.sources[2]], o, &[dir]).1 - best2).abs() < 1e-12);
    }
}
