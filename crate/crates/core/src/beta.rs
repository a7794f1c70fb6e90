//! Flatness numbers, isotropic plane fitting, Carleson sums and weak geometric lemma counts.

use std::cell::{Cell, RefCell};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::index::exact_diameter;
use crate::cloud::WeightedCloud;
use crate::cubes::{enlarge, CubeId, CubeTree};
use crate::error::{check_dim, Error, Result};
use crate::hgroup::{conj, dist, group_inv, group_mul, symp, HPoint};
use crate::hplanes::{complement_basis, dot, isotropic_gram_schmidt, HPlane, IsotropicFrame, PlaneDistance};
use crate::optim::{bfgs, nelder_mead, NmOptions};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Weighted sum of distances.
    L1,
    /// Largest distance.
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Score with `d(y, P_V y)` instead of the exact distance.
    pub projected_distance: bool,
    /// Stop as soon as a plane with cost at or below this is found.
    pub accept_below: Option<f64>,
    /// Sup fits on large sets stop refining once the working-set cost exceeds this.
    pub reject_above: Option<f64>,
    /// Sup fits try every restart and refine each through smoothed p-means.
    pub polish_sup: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            max_iter: 1000,
            rel_tol: 1e-10,
            projected_distance: false,
            accept_below: None,
            reject_above: None,
            polish_sup: true,
        }
    }
}

impl FitOptions {
    /// Looser stopping rule for bulk work where many fits are aggregated or thresholded.
    pub fn screening() -> Self {
        FitOptions {
            max_iter: 200,
            rel_tol: 1e-8,
            polish_sup: false,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub plane: HPlane,
    pub cost: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Best cost after each optimizer iteration, one trace per start.
    #[serde(skip)]
    pub history: Vec<Vec<f64>>,
}

/// Best isotropic `k`-plane for the indexed points.
pub fn fit_isotropic_plane(cloud: &WeightedCloud, indices: &[usize], mode: FitMode) -> Result<PlaneFit> {
    fit_isotropic_plane_with(cloud, indices, mode, &FitOptions::default())
}

pub fn fit_isotropic_plane_with(
    cloud: &WeightedCloud,
    indices: &[usize],
    mode: FitMode,
    opts: &FitOptions,
) -> Result<PlaneFit> {
    if indices.len() < cloud.k() + 1 {
        return Err(Error::Degenerate(format!(
            "plane fit needs at least {} points, got {}",
            cloud.k() + 1,
            indices.len()
        )));
    }
    fit_indexed(cloud, indices, mode, opts)
}

fn fit_indexed(cloud: &WeightedCloud, indices: &[usize], mode: FitMode, opts: &FitOptions) -> Result<PlaneFit> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::InvalidArgument(format!("point index {bad} out of range")));
    }
    let pts: Vec<&HPoint> = indices.iter().map(|&i| cloud.point(i)).collect();
    let w: Vec<f64> = indices.iter().map(|&i| cloud.weights()[i]).collect();
    fit_points(&pts, &w, cloud.k(), mode, opts)
}

/// Search space around an initial plane: frame tilts toward the complement,
/// base shifts across it, and a vertical offset.
struct Chart {
    frame0: IsotropicFrame,
    comp: Vec<Vec<f64>>,
    center: Vec<f64>,
    vertical0: f64,
    scale: f64,
}

impl Chart {
    fn dim(&self) -> usize {
        let m = self.comp.len();
        self.frame0.k() * m + m + 1
    }

    fn plane(&self, theta: &[f64]) -> Option<HPlane> {
        let k = self.frame0.k();
        let m = self.comp.len();
        let seeds: Vec<Vec<f64>> = self
            .frame0
            .columns()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut v = f.clone();
                for (j, c) in self.comp.iter().enumerate() {
                    let t = theta[i * m + j];
                    for (vi, ci) in v.iter_mut().zip(c) {
                        *vi += t * ci;
                    }
                }
                v
            })
            .collect();
        let frame = isotropic_gram_schmidt(&seeds, k).ok()?;
        let mut h = self.center.clone();
        for (j, c) in self.comp.iter().enumerate() {
            let t = self.scale * theta[k * m + j];
            for (hi, ci) in h.iter_mut().zip(c) {
                *hi += t * ci;
            }
        }
        let v = self.vertical0 + self.scale * self.scale * theta[k * m + m];
        let base = HPoint::new(h, v).ok()?;
        HPlane::new(base, frame).ok()
    }

    /// Step sizes for a plane whose distances are about `rel·scale`: tilts and shifts
    /// move distances linearly, the vertical offset only through a square root.
    fn step_scales(&self, rel: f64) -> Vec<f64> {
        let k = self.frame0.k();
        let m = self.comp.len();
        let lin = (2.0 * rel).clamp(1e-9, 0.25);
        let mut s = vec![lin; k * m];
        s.extend(std::iter::repeat_n(lin.min(0.1), m));
        s.push((4.0 * rel * rel).clamp(1e-12, 0.1));
        s
    }
}

/// Vertical residual of `x` against the plane through `(center, 0)` with frame `f`,
/// measured after moving along the plane to the horizontal foot of `x`.
fn vertical_residual(x: &HPoint, center: &[f64], f: &IsotropicFrame) -> f64 {
    let a: Vec<f64> = x.horizontal().iter().zip(center).map(|(p, c)| p - c).collect();
    let mut ls = 0.0;
    for col in f.columns() {
        ls += 2.0 * symp(&a, col) * dot(&a, col);
    }
    x.vertical() - 2.0 * symp(center, x.horizontal()) + ls
}

fn weighted_median(values: &[f64], w: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let half = 0.5 * w.iter().sum::<f64>();
    let mut acc = 0.0;
    for &i in &order {
        acc += w[i];
        if acc >= half {
            return values[i];
        }
    }
    values[order[order.len() - 1]]
}

/// Chart centred on a known plane, for warm starts.
fn chart_at(plane: &HPlane, pts: &[&HPoint]) -> Chart {
    let center = plane.base().horizontal().to_vec();
    let mut scale: f64 = 0.0;
    for p in pts {
        let a: Vec<f64> = p.horizontal().iter().zip(&center).map(|(x, c)| x - c).collect();
        scale = scale.max(dot(&a, &a).sqrt());
    }
    if !(scale > 0.0) || !scale.is_finite() {
        scale = 1.0;
    }
    Chart {
        comp: complement_basis(plane.frame()),
        frame0: plane.frame().clone(),
        center,
        vertical0: plane.base().vertical(),
        scale,
    }
}

fn initial_chart(pts: &[&HPoint], w: &[f64], k: usize, mode: FitMode) -> Result<Chart> {
    let n = pts[0].n();
    let m = 2 * n;
    let wsum: f64 = w.iter().sum();
    let mut center = vec![0.0; m];
    for (p, wi) in pts.iter().zip(w) {
        for (c, x) in center.iter_mut().zip(p.horizontal()) {
            *c += wi * x / wsum;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(m, m);
    let mut radius: f64 = 0.0;
    for (p, wi) in pts.iter().zip(w) {
        let a: Vec<f64> = p.horizontal().iter().zip(&center).map(|(x, c)| x - c).collect();
        radius = radius.max(dot(&a, &a).sqrt());
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] += wi * a[i] * a[j] / wsum;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let seeds: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().cloned().collect())
        .collect();
    let mut frame = isotropic_gram_schmidt(&seeds, k)?;
    for _ in 0..3 {
        match vertical_correction(pts, w, &center, &frame) {
            Some((f, c)) => {
                frame = f;
                center = c;
            }
            None => break,
        }
    }
    let resid: Vec<f64> = pts.iter().map(|p| vertical_residual(p, &center, &frame)).collect();
    let vertical0 = match mode {
        FitMode::L1 => weighted_median(&resid, w),
        FitMode::Linf => {
            let lo = resid.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = resid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        }
    };
    let spread = resid.iter().map(|r| (r - vertical0).abs()).fold(0.0, f64::max);
    let mut scale = radius.max(spread.sqrt());
    if !(scale > 0.0) || !scale.is_finite() {
        scale = 1.0;
    }
    let comp = complement_basis(&frame);
    Ok(Chart {
        frame0: frame,
        comp,
        center,
        vertical0,
        scale,
    })
}

/// One least-squares step on the vertical residuals. Over plane coordinates `s` they
/// look like `α + βᵀs + sᵀMs`: a tilt of the frame toward `JF` produces the symmetric
/// `M`, a shift of the base across `JF` produces `β`. Returns the frame and base that
/// cancel both to first order.
fn vertical_correction(
    pts: &[&HPoint],
    w: &[f64],
    center: &[f64],
    frame: &IsotropicFrame,
) -> Option<(IsotropicFrame, Vec<f64>)> {
    let k = frame.k();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let unknowns = 1 + k + pairs.len();
    if pts.len() < unknowns {
        return None;
    }
    let mut design = DMatrix::<f64>::zeros(pts.len(), unknowns);
    let mut rhs = nalgebra::DVector::<f64>::zeros(pts.len());
    for (r, (p, wi)) in pts.iter().zip(w).enumerate() {
        let a: Vec<f64> = p.horizontal().iter().zip(center).map(|(x, c)| x - c).collect();
        let s = frame.coords(&a);
        let sw = wi.sqrt();
        design[(r, 0)] = sw;
        for i in 0..k {
            design[(r, 1 + i)] = sw * s[i];
        }
        for (c, &(i, j)) in pairs.iter().enumerate() {
            let f = if i == j { 1.0 } else { 2.0 };
            design[(r, 1 + k + c)] = sw * f * s[i] * s[j];
        }
        rhs[r] = sw * vertical_residual(p, center, frame);
    }
    let sol = design.svd(true, true).solve(&rhs, 1e-12).ok()?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut quad = vec![vec![0.0; k]; k];
    for (c, &(i, j)) in pairs.iter().enumerate() {
        quad[i][j] = sol[1 + k + c];
        quad[j][i] = sol[1 + k + c];
    }
    let jf: Vec<Vec<f64>> = frame.columns().iter().map(|f| conj(f)).collect();
    let seeds: Vec<Vec<f64>> = frame
        .columns()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut v = f.clone();
            for (j, g) in jf.iter().enumerate() {
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi -= 0.5 * quad[i][j] * gi;
                }
            }
            v
        })
        .collect();
    let next = isotropic_gram_schmidt(&seeds, k).ok()?;
    let mut base = center.to_vec();
    for (j, g) in jf.iter().enumerate() {
        for (bi, gi) in base.iter_mut().zip(g) {
            *bi -= 0.25 * sol[1 + j] * gi;
        }
    }
    Some((next, base))
}

/// Sup fits on large sets run on a growing subset: farthest-point seeds plus the worst
/// violators of each round, until the subset optimum is also the optimum on everything.
const WORKING_SET: usize = 48;
const VIOLATORS_PER_ROUND: usize = 16;
const MAX_ROUNDS: usize = 8;

pub(crate) fn fit_points(pts: &[&HPoint], w: &[f64], k: usize, mode: FitMode, opts: &FitOptions) -> Result<PlaneFit> {
    if pts.is_empty() {
        return Err(Error::Degenerate("plane fit over an empty set".into()));
    }
    // The coordinate mean moves with left translations, so fitting around it keeps the
    // search itself translation invariant.
    let n = pts[0].n();
    let mut mean = vec![0.0; 2 * n + 1];
    let wsum: f64 = w.iter().sum();
    for (p, wi) in pts.iter().zip(w) {
        check_dim(n, p.n())?;
        for (m, c) in mean.iter_mut().zip(p.coords()) {
            *m += wi * c / wsum;
        }
    }
    let anchor = HPoint::from_coords(&mean)?;
    let back = group_inv(&anchor);
    let centered: Vec<HPoint> = pts.iter().map(|p| group_mul(&back, p)).collect::<Result<_>>()?;
    let refs: Vec<&HPoint> = centered.iter().collect();
    let mut fit = if mode == FitMode::Linf && pts.len() > 2 * WORKING_SET {
        fit_sup_working_set(&refs, w, k, opts)?
    } else {
        fit_direct(&refs, w, k, mode, opts, None)?
    };
    fit.plane = HPlane::new(group_mul(&anchor, fit.plane.base())?, fit.plane.frame().clone())?;
    Ok(fit)
}

fn fit_sup_working_set(pts: &[&HPoint], w: &[f64], k: usize, opts: &FitOptions) -> Result<PlaneFit> {
    let mut dmin = vec![f64::INFINITY; pts.len()];
    let mut in_set = vec![false; pts.len()];
    let mut set = Vec::with_capacity(WORKING_SET);
    let mut next = 0;
    while set.len() < WORKING_SET {
        set.push(next);
        in_set[next] = true;
        let c = pts[next];
        let mut far = (0, -1.0);
        for (i, p) in pts.iter().enumerate() {
            dmin[i] = dmin[i].min(dist(p, c));
            if !in_set[i] && dmin[i] > far.1 {
                far = (i, dmin[i]);
            }
        }
        next = far.0;
    }
    let mut best: Option<PlaneFit> = None;
    let mut iterations = 0;
    let warm = FitOptions { restarts: 1, ..*opts };
    for round in 0.. {
        let sub: Vec<&HPoint> = set.iter().map(|&i| pts[i]).collect();
        let sw: Vec<f64> = set.iter().map(|&i| w[i]).collect();
        let mut fit = match &best {
            None => fit_direct(&sub, &sw, k, FitMode::Linf, opts, None)?,
            Some(b) => fit_direct(&sub, &sw, k, FitMode::Linf, &warm, Some(&b.plane))?,
        };
        iterations += fit.iterations;
        let mut pd = PlaneDistance::new(&fit.plane).projected(opts.projected_distance);
        let mut d = Vec::with_capacity(pts.len());
        for p in pts {
            d.push(pd.eval(p)?);
        }
        let full = d.iter().cloned().fold(0.0, f64::max);
        let subset_cost = fit.cost;
        fit.cost = full;
        fit.iterations = iterations;
        if best.as_ref().is_none_or(|b| full < b.cost) {
            best = Some(fit);
        }
        // the subset optimum is itself approximate, so only a clear excess earns another round
        let settled = full <= subset_cost * (1.0 + 1e-3) || opts.accept_below.is_some_and(|a| full <= a);
        // more points can only raise the subset optimum
        let hopeless = opts.reject_above.is_some_and(|r| subset_cost > r);
        if settled || hopeless || set.len() == pts.len() || round + 1 == MAX_ROUNDS {
            break;
        }
        let mut out: Vec<usize> = (0..pts.len()).filter(|&i| !in_set[i]).collect();
        out.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
        for &i in out.iter().take(VIOLATORS_PER_ROUND) {
            set.push(i);
            in_set[i] = true;
        }
    }
    let mut b = best.expect("at least one round");
    b.iterations = iterations;
    Ok(b)
}

fn fit_direct(
    pts: &[&HPoint],
    w: &[f64],
    k: usize,
    mode: FitMode,
    opts: &FitOptions,
    warm: Option<&HPlane>,
) -> Result<PlaneFit> {
    if pts.is_empty() {
        return Err(Error::Degenerate("plane fit over an empty set".into()));
    }
    let n = pts[0].n();
    for p in pts {
        check_dim(n, p.n())?;
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("plane dimension {k} outside 1..={n}")));
    }
    let chart = match warm {
        Some(p) => chart_at(p, pts),
        None => initial_chart(pts, w, k, mode)?,
    };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    // a finite power swaps the sup for a smooth p-mean that the simplex can follow
    let power = Cell::new(f64::INFINITY);
    let mut cost = |theta: &[f64]| -> f64 {
        let Some(plane) = chart.plane(theta) else {
            return f64::INFINITY;
        };
        let mut pd = PlaneDistance::new(&plane).projected(opts.projected_distance);
        let mut acc = 0.0_f64;
        let mut ds = Vec::new();
        for (p, wi) in pts.iter().zip(w) {
            let d = match pd.eval(p) {
                Ok(d) => d,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    return f64::INFINITY;
                }
            };
            match mode {
                FitMode::L1 => acc += wi * d,
                FitMode::Linf if power.get().is_finite() => {
                    acc = acc.max(d);
                    ds.push(d);
                }
                FitMode::Linf => acc = acc.max(d),
            }
        }
        if mode == FitMode::Linf && power.get().is_finite() && acc > 0.0 {
            let p = power.get();
            let mean = ds.iter().map(|d| (d / acc).powf(p)).sum::<f64>() / ds.len() as f64;
            return acc * mean.powf(1.0 / p);
        }
        acc
    };
    // distances carry a quartic root, so rounding alone leaves about sqrt(eps)·scale
    let floor = match mode {
        FitMode::L1 => 1e-7 * chart.scale * w.iter().sum::<f64>(),
        FitMode::Linf => 1e-7 * chart.scale,
    };
    let target = floor.max(opts.accept_below.unwrap_or(0.0));
    let nm = NmOptions {
        max_iter: opts.max_iter,
        rel_tol: opts.rel_tol,
        target,
    };
    let dim = chart.dim();
    let start_cost = cost(&vec![0.0; dim]);
    let rel = match mode {
        FitMode::L1 => start_cost / (chart.scale * w.iter().sum::<f64>()),
        FitMode::Linf => start_cost / chart.scale,
    };
    let base_steps = chart.step_scales(if rel.is_finite() { rel } else { 1.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a09_e667);
    let mut best_theta = vec![0.0; dim];
    let mut best_cost = f64::INFINITY;
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut restarts_used = 0;
    let mut stale = 0;
    let mut ends = Vec::new();
    for r in 0..opts.restarts.max(1) {
        let shrink = 0.5_f64.powi(r.saturating_sub(1) as i32);
        let x0: Vec<f64> = if r == 0 {
            best_theta.clone()
        } else {
            best_theta
                .iter()
                .zip(&base_steps)
                .map(|(t, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t + s * shrink * z
                })
                .collect()
        };
        let steps: Vec<f64> = base_steps.iter().map(|s| s * shrink.max(0.05)).collect();
        let res = nelder_mead(&mut cost, &x0, &steps, &nm);
        ends.push(res.x.clone());
        restarts_used += 1;
        iterations += res.iterations;
        history.push(res.history);
        if res.value < best_cost * (1.0 - 1e-9) {
            best_cost = res.value;
            best_theta = res.x;
            stale = 0;
        } else {
            stale += 1;
        }
        if best_cost <= target || (stale >= 2 && (mode == FitMode::L1 || !opts.polish_sup)) {
            break;
        }
    }
    if mode == FitMode::Linf && opts.polish_sup && best_cost > target {
        // the sup landscape has several basins; follow each restart's end through the smoothing
        let h: Vec<f64> = base_steps.iter().map(|s| 1e-7 * s.max(1e-6)).collect();
        for start in ends {
            let mut x = start;
            for p in [16.0, 64.0, 256.0, 1024.0, 4096.0, 16384.0, 65536.0] {
                power.set(p);
                let (next, _, used) = bfgs(&mut cost, &x, &h, opts.max_iter);
                iterations += used;
                x = next;
            }
            power.set(f64::INFINITY);
            let res = nelder_mead(&mut cost, &x, &base_steps.iter().map(|s| 1e-3 * s).collect::<Vec<_>>(), &nm);
            iterations += res.iterations;
            if res.value < best_cost {
                best_cost = res.value;
                best_theta = res.x;
            }
        }
    }
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let plane = chart
        .plane(&best_theta)
        .ok_or_else(|| Error::Internal("plane fit ended on a degenerate frame".into()))?;
    Ok(PlaneFit {
        plane,
        cost: best_cost,
        iterations,
        restarts_used,
        history,
    })
}

/// `t^{-k-1} · inf_V Σ_{B(x,t)} w·d(y, V)`.
pub fn beta1(cloud: &WeightedCloud, x: &HPoint, t: f64) -> Result<f64> {
    beta1_with(cloud, x, t, &FitOptions::default())
}

pub fn beta1_with(cloud: &WeightedCloud, x: &HPoint, t: f64, opts: &FitOptions) -> Result<f64> {
    check_dim(cloud.n(), x.n())?;
    if !(t >= 2.0 * cloud.resolution()) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "scale {t} below twice the resolution {}",
            cloud.resolution()
        )));
    }
    let ball = cloud.ball(x, t);
    if ball.len() <= 1 {
        return Ok(0.0);
    }
    let fit = fit_indexed(cloud, &ball, FitMode::L1, opts)?;
    Ok(fit.cost / t.powi(cloud.k() as i32 + 1))
}

/// `d(F)^{-1} · inf_V sup_F d(y, V)`.
pub fn beta_inf(cloud: &WeightedCloud, indices: &[usize]) -> Result<f64> {
    beta_inf_with(cloud, indices, &FitOptions::default())
}

pub fn beta_inf_with(cloud: &WeightedCloud, indices: &[usize], opts: &FitOptions) -> Result<f64> {
    if indices.len() < 2 {
        return Err(Error::InvalidArgument("beta_inf is undefined below two points".into()));
    }
    let fit = fit_indexed(cloud, indices, FitMode::Linf, opts)?;
    let diam = exact_diameter(cloud.points(), indices);
    if diam <= 0.0 {
        return Ok(0.0);
    }
    Ok(fit.cost / diam)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlesonOptions {
    pub scales_per_octave: usize,
    /// Evaluate at most this many centers, evenly spaced, and rescale their mass.
    pub max_centers: Option<usize>,
    pub fit: FitOptions,
}

impl Default for CarlesonOptions {
    fn default() -> Self {
        CarlesonOptions {
            scales_per_octave: 2,
            max_centers: None,
            fit: FitOptions::screening(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlesonEstimate {
    pub x: HPoint,
    pub r: f64,
    pub normalized_sum: f64,
    /// Value the same sum takes when every `β₁(y,t)` sits at the sampling bound `2·resolution/t`.
    pub floor_estimate: f64,
    pub scales: usize,
    pub centers: usize,
}

/// Geometric scale grid `r·2^{-i/spo}` down to `2·resolution`, with its `dt/t` weight.
pub fn scale_grid(r: f64, resolution: f64, scales_per_octave: usize) -> (Vec<f64>, f64) {
    let spo = scales_per_octave.max(1) as f64;
    let mut ts = Vec::new();
    let mut i = 0;
    loop {
        let t = r * 2f64.powf(-(i as f64) / spo);
        if t < 2.0 * resolution * (1.0 - 1e-12) {
            break;
        }
        ts.push(t);
        i += 1;
    }
    (ts, std::f64::consts::LN_2 / spo)
}

/// `r^{-k} Σ_y w_y Σ_t β₁(y,t)² · ln(step)` over the cloud points in `B(x, r)`.
pub fn carleson_sum(cloud: &WeightedCloud, x: &HPoint, r: f64, scales_per_octave: usize) -> Result<CarlesonEstimate> {
    let opts = CarlesonOptions {
        scales_per_octave,
        ..CarlesonOptions::default()
    };
    carleson_sum_with(cloud, x, r, &opts)
}

pub fn carleson_sum_with(cloud: &WeightedCloud, x: &HPoint, r: f64, opts: &CarlesonOptions) -> Result<CarlesonEstimate> {
    check_dim(cloud.n(), x.n())?;
    let res = cloud.resolution();
    if !(r >= 2.0 * res) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("radius {r} below twice the resolution {res}")));
    }
    if opts.scales_per_octave == 0 {
        return Err(Error::InvalidArgument("scales_per_octave must be at least 1".into()));
    }
    let (ts, dlog) = scale_grid(r, res, opts.scales_per_octave);
    let ball = cloud.ball(x, r);
    let w = cloud.weights();
    let rk = r.powi(cloud.k() as i32);
    let floor_per_unit: f64 = ts.iter().map(|t| (2.0 * res / t).powi(2) * dlog).sum();
    let floor = cloud.mass_of(&ball) * floor_per_unit / rk;

    let centers: Vec<usize> = match opts.max_centers {
        Some(m) if m > 0 && ball.len() > m => (0..m).map(|j| ball[j * ball.len() / m]).collect(),
        _ => ball.clone(),
    };
    let rescale = if centers.is_empty() {
        0.0
    } else {
        cloud.mass_of(&ball) / cloud.mass_of(&centers)
    };
    let per_center: Vec<Result<f64>> = par::map(&centers, |&y| {
        let mut acc = 0.0;
        for &t in &ts {
            let b = beta1_with(cloud, cloud.point(y), t, &opts.fit)?;
            acc += b * b * dlog;
        }
        Ok(w[y] * acc)
    });
    let mut total = 0.0;
    for v in per_center {
        total += v?;
    }
    Ok(CarlesonEstimate {
        x: x.clone(),
        r,
        normalized_sum: total * rescale / rk,
        floor_estimate: floor,
        scales: ts.len(),
        centers: centers.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WglCube {
    pub id: CubeId,
    pub level: i32,
    pub beta_inf: f64,
    pub flagged: bool,
}

/// `β∞(λ₂Q)` for every cube of the subtree at `root`; sets with fewer than two points count as flat.
pub fn wgl_flags(
    tree: &CubeTree,
    cloud: &WeightedCloud,
    lambda1: f64,
    lambda2: f64,
    root: CubeId,
) -> Result<Vec<WglCube>> {
    if !(lambda1 > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda1 must be positive, got {lambda1}")));
    }
    if !(lambda2 > 1.0) {
        return Err(Error::InvalidArgument(format!("lambda2 must exceed 1, got {lambda2}")));
    }
    tree.cube(root)?;
    let ids = tree.subtree(root);
    let out: Vec<Result<WglCube>> = par::map(&ids, |&id| {
        let q = tree.cube(id)?;
        let set = enlarge(tree, cloud, id, lambda2)?;
        let b = if set.len() < 2 { 0.0 } else { beta_inf_with(cloud, &set, &FitOptions::screening())? };
        Ok(WglCube {
            id,
            level: q.level,
            beta_inf: b,
            flagged: b > lambda1,
        })
    });
    out.into_iter().collect()
}

/// Mass of the cubes below `root` with `β∞(λ₂Q) > λ₁`, relative to the mass of `root`.
pub fn wgl_count(tree: &CubeTree, cloud: &WeightedCloud, lambda1: f64, lambda2: f64, root: CubeId) -> Result<f64> {
    let flags = wgl_flags(tree, cloud, lambda1, lambda2, root)?;
    let bad: f64 = flags
        .iter()
        .filter(|c| c.flagged)
        .map(|c| tree.mass(cloud, c.id))
        .sum();
    Ok(bad / tree.mass(cloud, root))
}
