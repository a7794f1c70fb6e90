//! Synthetic regular sets: planes, perturbed planes, two planes through a
//! common seam, and folded planes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BallTree, WeightedCloud};
use crate::error::{Error, Result};
use crate::hgroup::{conj, mul, HPoint};
use crate::hplanes::{complement_basis, norm, HPlane, IsotropicFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudKind {
    Plane,
    PerturbedPlane,
    TwoPlanes,
    CornerSet,
}

impl std::str::FromStr for CloudKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(CloudKind::Plane),
            "perturbed_plane" => Ok(CloudKind::PerturbedPlane),
            "two_planes" => Ok(CloudKind::TwoPlanes),
            "corner_set" => Ok(CloudKind::CornerSet),
            other => Err(Error::InvalidArgument(format!("unknown cloud kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub kind: CloudKind,
    pub n: usize,
    pub k: usize,
    /// Grid spacing; also the cloud resolution.
    pub resolution: f64,
    /// Side of the parameter box `[-side/2, side/2]^k`.
    pub side: f64,
    /// Transversal displacement bound, in units of `resolution`.
    pub amplitude: f64,
    /// Smooth displacement `sin(2π u₁ / wavelength)` instead of i.i.d. noise.
    pub wavelength: Option<f64>,
    /// Angle constant between the two generating planes.
    pub angle: f64,
    /// Generating plane; the standard `X_k` through the origin when absent.
    pub plane: Option<HPlane>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            kind: CloudKind::Plane,
            n: 1,
            k: 1,
            resolution: 0.01,
            side: 1.0,
            amplitude: 0.0,
            wavelength: None,
            angle: 2.0,
            plane: None,
        }
    }
}

impl GenParams {
    pub fn plane(n: usize, k: usize, resolution: f64, side: f64) -> Self {
        GenParams {
            n,
            k,
            resolution,
            side,
            ..Default::default()
        }
    }

    pub fn perturbed_plane(n: usize, k: usize, resolution: f64, side: f64, amplitude: f64) -> Self {
        GenParams {
            kind: CloudKind::PerturbedPlane,
            amplitude,
            ..GenParams::plane(n, k, resolution, side)
        }
    }

    pub fn two_planes(n: usize, k: usize, resolution: f64, side: f64, angle: f64) -> Self {
        GenParams {
            kind: CloudKind::TwoPlanes,
            angle,
            ..GenParams::plane(n, k, resolution, side)
        }
    }

    pub fn corner_set(n: usize, k: usize, resolution: f64, side: f64, angle: f64) -> Self {
        GenParams {
            kind: CloudKind::CornerSet,
            angle,
            ..GenParams::plane(n, k, resolution, side)
        }
    }

    pub fn base_plane(&self) -> Result<HPlane> {
        match &self.plane {
            Some(p) => {
                if p.n() != self.n || p.k() != self.k {
                    return Err(Error::InvalidArgument("generating plane has wrong n or k".into()));
                }
                Ok(p.clone())
            }
            None => HPlane::new(HPoint::origin(self.n), IsotropicFrame::standard(self.n, self.k)?),
        }
    }

    /// Second generator: the last frame column turned towards its symplectic conjugate.
    pub fn second_plane(&self) -> Result<HPlane> {
        let v = self.base_plane()?;
        if !(self.angle >= 1.0) || !self.angle.is_finite() {
            return Err(Error::InvalidArgument("angle constant must be finite and >= 1".into()));
        }
        let th = (1.0 / self.angle).acos();
        let mut cols = v.frame().columns().to_vec();
        let last = cols.pop().unwrap();
        let j = conj(&last);
        cols.push(last.iter().zip(&j).map(|(a, b)| th.cos() * a + th.sin() * b).collect());
        HPlane::new(v.base().clone(), IsotropicFrame::new(cols)?)
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got k={}, n={}", self.k, self.n)));
        }
        if !(self.resolution > 0.0) || !(self.side >= 0.0) || !self.side.is_finite() {
            return Err(Error::InvalidArgument("resolution and side must be positive".into()));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument("amplitude must be non-negative".into()));
        }
        if let Some(w) = self.wavelength {
            if !(w > 0.0) {
                return Err(Error::InvalidArgument("wavelength must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Grid coordinates of the parameter box, lexicographic with the first axis fastest.
pub fn grid_coords(k: usize, h: f64, side: f64) -> Vec<Vec<f64>> {
    let m = (side / h + 1e-9).floor() as usize + 1;
    let offset = (m - 1) as f64 * h / 2.0;
    let total = m.pow(k as u32);
    (0..total)
        .map(|mut t| {
            (0..k)
                .map(|_| {
                    let i = t % m;
                    t /= m;
                    i as f64 * h - offset
                })
                .collect()
        })
        .collect()
}

pub fn generate(params: &GenParams, seed: u64) -> Result<WeightedCloud> {
    params.validate()?;
    let h = params.resolution;
    let k = params.k;
    let v = params.base_plane()?;
    let grid = grid_coords(k, h, params.side);
    let points: Vec<HPoint> = match params.kind {
        CloudKind::Plane => grid.iter().map(|u| v.point_at(u)).collect(),
        CloudKind::PerturbedPlane => perturbed(&v, &grid, params, seed),
        CloudKind::TwoPlanes => {
            let w = params.second_plane()?;
            let first: Vec<HPoint> = grid.iter().map(|u| v.point_at(u)).collect();
            let second: Vec<HPoint> = grid.iter().map(|u| w.point_at(u)).collect();
            merge_nets(first, second, h)
        }
        CloudKind::CornerSet => {
            let w = params.second_plane()?;
            let first: Vec<HPoint> = grid.iter().filter(|u| u[k - 1] <= 0.0).map(|u| v.point_at(u)).collect();
            let second: Vec<HPoint> = grid.iter().filter(|u| u[k - 1] > 0.0).map(|u| w.point_at(u)).collect();
            merge_nets(first, second, h)
        }
    };
    let weights = vec![h.powi(k as i32); points.len()];
    WeightedCloud::new(k, h, points, weights).map_err(|e| match e {
        Error::Validation(m) => Error::InvalidArgument(format!("amplitude too large for the net property: {m}")),
        other => other,
    })
}

fn perturbed(v: &HPlane, grid: &[Vec<f64>], params: &GenParams, seed: u64) -> Vec<HPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let complement = complement_basis(v.frame());
    let scale = params.amplitude * params.resolution;
    // unit direction for the smooth mode
    let smooth_dir: Vec<f64> = {
        let mut d = vec![0.0; complement[0].len()];
        for c in &complement {
            for (di, ci) in d.iter_mut().zip(c) {
                *di += ci;
            }
        }
        let nd = norm(&d);
        d.iter().map(|x| x / nd).collect()
    };
    grid.iter()
        .map(|u| {
            let x = v.point_at(u);
            if scale == 0.0 {
                return x;
            }
            let w: Vec<f64> = match params.wavelength {
                Some(l) => {
                    let s = scale * (std::f64::consts::TAU * u[0] / l).sin();
                    smooth_dir.iter().map(|d| s * d).collect()
                }
                None => {
                    // uniform direction in the complement, radius uniform in [0, scale]
                    let coeffs: Vec<f64> = complement.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                    let cn = norm(&coeffs).max(1e-300);
                    let rad = scale * rng.random_range(0.0..=1.0);
                    let mut w = vec![0.0; complement[0].len()];
                    for (c, a) in complement.iter().zip(&coeffs) {
                        for (wi, ci) in w.iter_mut().zip(c) {
                            *wi += rad * a / cn * ci;
                        }
                    }
                    w
                }
            };
            mul(&x, &HPoint::raw(w, 0.0))
        })
        .collect()
}

/// Union of two nets, dropping points of the second within `h/2` of the first.
fn merge_nets(first: Vec<HPoint>, second: Vec<HPoint>, h: f64) -> Vec<HPoint> {
    let tree = BallTree::build(&first);
    let mut out = first.clone();
    for p in second {
        let clash = !first.is_empty() && tree.nearest_filtered(&first, &p, h / 2.0, |_| true).is_some();
        if !clash {
            out.push(p);
        }
    }
    out
}
