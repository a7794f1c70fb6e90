//! Weighted point clouds standing in for `𝓗ᵏ` restricted to a k-regular set.

pub mod generate;
pub mod index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hgroup::{dist, HPoint};
pub use generate::{generate, CloudKind, GenParams};
pub use index::BallTree;

#[derive(Debug, Clone)]
pub struct WeightedCloud {
    n: usize,
    k: usize,
    resolution: f64,
    points: Vec<HPoint>,
    weights: Vec<f64>,
    index: BallTree,
    diameter: f64,
}

#[derive(Serialize, Deserialize)]
struct CloudFile {
    n: usize,
    k: usize,
    resolution: f64,
    points: Vec<HPoint>,
    weights: Vec<f64>,
}

impl WeightedCloud {
    /// Validates weights and the net property `d(x,y) >= resolution/2`.
    pub fn new(k: usize, resolution: f64, points: Vec<HPoint>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Degenerate("empty cloud".into()));
        }
        let n = points[0].n();
        for p in &points {
            check_dim(n, p.n())?;
        }
        check_dim(points.len(), weights.len())?;
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= n = {n}, got {k}")));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight {i} is not positive and finite")));
        }
        let index = BallTree::build(&points);
        for (i, p) in points.iter().enumerate() {
            let mut clash = None;
            index.visit_ball(&points, p, resolution / 2.0, &mut |j, d| {
                if j != i && d < resolution / 2.0 && clash.is_none() {
                    clash = Some(j);
                }
            });
            if let Some(j) = clash {
                return Err(Error::Validation(format!(
                    "points {i} and {j} are closer than resolution/2"
                )));
            }
        }
        let diameter = diameter_with(&index, &points);
        Ok(WeightedCloud {
            n,
            k,
            resolution,
            points,
            weights,
            index,
            diameter,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: CloudFile =
            serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("cloud JSON: {e}")))?;
        let c = WeightedCloud::new(f.k, f.resolution, f.points, f.weights)?;
        check_dim(f.n, c.n)?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&CloudFile {
            n: self.n,
            k: self.k,
            resolution: self.resolution,
            points: self.points.clone(),
            weights: self.weights.clone(),
        })
        .expect("cloud serializes")
    }

    /// Rows `[x_1, ..., x_2n+1, weight]`.
    pub fn from_rows(k: usize, resolution: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let mut points = Vec::with_capacity(rows.len());
        let mut weights = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let (w, c) = r
                .split_last()
                .ok_or_else(|| Error::InvalidArgument(format!("row {i} is empty")))?;
            points.push(HPoint::from_coords(c).map_err(|e| Error::InvalidArgument(format!("row {i}: {e}")))?);
            weights.push(*w);
        }
        WeightedCloud::new(k, resolution, points, weights)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn points(&self) -> &[HPoint] {
        &self.points
    }
    pub fn point(&self, i: usize) -> &HPoint {
        &self.points[i]
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn diameter(&self) -> f64 {
        self.diameter
    }
    pub fn index(&self) -> &BallTree {
        &self.index
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mass_of(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.weights[i]).sum()
    }

    /// Closed ball `{i : d(x_i, center) <= r}`, sorted.
    pub fn ball(&self, center: &HPoint, r: f64) -> Vec<usize> {
        self.index.ball(&self.points, center, r)
    }

    /// Same cloud with every weight multiplied by `c`.
    pub fn scaled_weights(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument("weight scale must be positive".into()));
        }
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= c);
        Ok(out)
    }

    /// Applies an isometry to every point (the caller guarantees it is one).
    pub fn map_points(&self, f: impl Fn(&HPoint) -> HPoint) -> Result<Self> {
        let pts = self.points.iter().map(f).collect();
        WeightedCloud::new(self.k, self.resolution, pts, self.weights.clone())
    }
}

fn diameter_with(index: &BallTree, points: &[HPoint]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    // double sweep lower bound, then exact check of every point that could beat it
    let (a, _) = index.farthest(points, &points[0]).unwrap();
    let (b, mut best) = index.farthest(points, &points[a]).unwrap();
    let mut from_a: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist(p, &points[a]), i)).collect();
    from_a.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let radius_a = from_a[0].0;
    for &(da, i) in &from_a {
        if da + radius_a <= best {
            break;
        }
        if i == b {
            continue;
        }
        let (_, d) = index.farthest(points, &points[i]).unwrap();
        best = best.max(d);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub c_lower: f64,
    pub c_upper: f64,
    pub scale_range: (f64, f64),
    pub samples: usize,
    /// Ratio spread is unbounded (a zero-mass scale or a single point).
    pub irregular: bool,
}

/// Samples `mass(B(x,r)) / r^k` over cloud centers and log-uniform radii.
pub fn regularity(
    cloud: &WeightedCloud,
    n_samples: usize,
    seed: u64,
    scale_range: Option<(f64, f64)>,
) -> Result<RegularityReport> {
    let (lo, hi) = scale_range.unwrap_or((4.0 * cloud.resolution, cloud.diameter));
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("empty scale range [{lo}, {hi}]")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cloud.k as i32;
    let mut c_lower = f64::INFINITY;
    let mut c_upper: f64 = 0.0;
    for _ in 0..n_samples {
        let i = rng.random_range(0..cloud.len());
        let r = if hi > lo { (rng.random_range(lo.ln()..=hi.ln())).exp() } else { lo };
        let m = cloud.mass_of(&cloud.ball(&cloud.points[i], r));
        let ratio = m / r.powi(k);
        c_lower = c_lower.min(ratio);
        c_upper = c_upper.max(ratio);
    }
    let irregular = cloud.len() < 2 || !(c_lower > 0.0) || !(c_upper / c_lower).is_finite();
    Ok(RegularityReport {
        c_lower,
        c_upper,
        scale_range: (lo, hi),
        samples: n_samples,
        irregular,
    })
}
