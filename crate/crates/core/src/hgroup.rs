//! Heisenberg group arithmetic and the Korányi gauge metric.
//!
//! Points of Hⁿ are stored as a horizontal vector in R²ⁿ plus a vertical
//! scalar. The group law is `x·y = (x'+y', x_v+y_v+2A(x',y'))`.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};

const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HPoint {
    horizontal: Vec<f64>,
    vertical: f64,
}

impl HPoint {
    pub fn new(horizontal: Vec<f64>, vertical: f64) -> Result<Self> {
        if horizontal.is_empty() || horizontal.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "horizontal part must have even positive length, got {}",
                horizontal.len()
            )));
        }
        if !vertical.is_finite() || horizontal.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(HPoint {
            horizontal,
            vertical,
        })
    }

    /// Builds a point from the flat layout `[x_1, ..., x_2n, x_2n+1]`.
    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        if coords.len() < 3 || coords.len() % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "a point needs odd length >= 3, got {}",
                coords.len()
            )));
        }
        let (h, v) = coords.split_at(coords.len() - 1);
        HPoint::new(h.to_vec(), v[0])
    }

    pub fn origin(n: usize) -> Self {
        HPoint {
            horizontal: vec![0.0; 2 * n],
            vertical: 0.0,
        }
    }

    pub(crate) fn raw(horizontal: Vec<f64>, vertical: f64) -> Self {
        debug_assert!(horizontal.len() % 2 == 0 && !horizontal.is_empty());
        HPoint {
            horizontal,
            vertical,
        }
    }

    pub fn n(&self) -> usize {
        self.horizontal.len() / 2
    }

    pub fn horizontal(&self) -> &[f64] {
        &self.horizontal
    }

    pub fn vertical(&self) -> f64 {
        self.vertical
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.horizontal.clone();
        c.push(self.vertical);
        c
    }

    /// Korányi gauge `(|x'|⁴ + x_v²)^{1/4}`.
    pub fn norm(&self) -> f64 {
        let h2: f64 = self.horizontal.iter().map(|v| v * v).sum();
        (h2 * h2 + self.vertical * self.vertical).sqrt().sqrt()
    }
}

impl Serialize for HPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = Vec::<f64>::deserialize(d)?;
        HPoint::from_coords(&c).map_err(D::Error::custom)
    }
}

/// `A(a,b) = Σ_i (a_{i+n} b_i − a_i b_{i+n})`.
pub fn symplectic_form(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.len() % 2 != 0 {
        return Err(Error::InvalidArgument("odd horizontal length".into()));
    }
    Ok(symp(a, b))
}

#[inline]
pub(crate) fn symp(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() / 2;
    let mut s = 0.0;
    for i in 0..n {
        s += a[i + n] * b[i] - a[i] * b[i + n];
    }
    s
}

fn same_n(x: &HPoint, y: &HPoint) -> Result<()> {
    check_dim(x.horizontal.len(), y.horizontal.len())
}

pub fn group_mul(x: &HPoint, y: &HPoint) -> Result<HPoint> {
    same_n(x, y)?;
    Ok(mul(x, y))
}

#[inline]
pub(crate) fn mul(x: &HPoint, y: &HPoint) -> HPoint {
    let h = x
        .horizontal
        .iter()
        .zip(&y.horizontal)
        .map(|(a, b)| a + b)
        .collect();
    HPoint {
        horizontal: h,
        vertical: x.vertical + y.vertical + 2.0 * symp(&x.horizontal, &y.horizontal),
    }
}

pub fn group_inv(x: &HPoint) -> HPoint {
    HPoint {
        horizontal: x.horizontal.iter().map(|v| -v).collect(),
        vertical: -x.vertical,
    }
}

/// `d(x,y) = ‖y⁻¹·x‖`.
pub fn koranyi_dist(x: &HPoint, y: &HPoint) -> Result<f64> {
    same_n(x, y)?;
    Ok(dist(x, y))
}

#[inline]
pub(crate) fn dist(x: &HPoint, y: &HPoint) -> f64 {
    dist_raw(&x.horizontal, x.vertical, &y.horizontal, y.vertical)
}

#[inline]
pub(crate) fn dist_raw(xh: &[f64], xv: f64, yh: &[f64], yv: f64) -> f64 {
    let n = xh.len() / 2;
    let mut h2 = 0.0;
    let mut a = 0.0;
    for i in 0..n {
        let (x1, x2, y1, y2) = (xh[i], xh[i + n], yh[i], yh[i + n]);
        let d1 = x1 - y1;
        let d2 = x2 - y2;
        h2 += d1 * d1 + d2 * d2;
        // A(-y', x') = -(A(y',x'))
        a += y2 * x1 - y1 * x2;
    }
    let t = xv - yv - 2.0 * a;
    (h2 * h2 + t * t).sqrt().sqrt()
}

/// Left translation `τ_p(x) = p·x`.
pub fn translate(p: &HPoint, x: &HPoint) -> Result<HPoint> {
    group_mul(p, x)
}

/// An orthogonal map of R²ⁿ preserving the symplectic form, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    matrix: DMatrix<f64>,
}

impl Rotation {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if m == 0 || m % 2 != 0 || matrix.ncols() != m {
            return Err(Error::Validation(format!(
                "rotation must be square of even size, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite rotation entry".into()));
        }
        let n = m / 2;
        let j = symplectic_matrix(n);
        let rt = matrix.transpose();
        let ortho = (&rt * &matrix - DMatrix::identity(m, m)).amax();
        let sympl = (&rt * &j * &matrix - &j).amax();
        if ortho > ROTATION_TOL || sympl > ROTATION_TOL {
            return Err(Error::Validation(format!(
                "not a rotation: orthogonality defect {ortho:.3e}, symplectic defect {sympl:.3e}"
            )));
        }
        Ok(Rotation { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Rotation {
            matrix: DMatrix::identity(2 * n, 2 * n),
        }
    }

    /// Real form of the unitary `U = re + i·im` acting on Cⁿ with `z_j = x_j + i x_{j+n}`.
    pub fn from_unitary(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<Self> {
        let n = re.nrows();
        if re.ncols() != n || im.nrows() != n || im.ncols() != n {
            return Err(Error::Validation("unitary blocks must be square and equal".into()));
        }
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = re[(r, c)];
                m[(r, c + n)] = -im[(r, c)];
                m[(r + n, c)] = im[(r, c)];
                m[(r + n, c + n)] = re[(r, c)];
            }
        }
        Rotation::new(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn transpose(&self) -> Rotation {
        Rotation {
            matrix: self.matrix.transpose(),
        }
    }

    pub(crate) fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let m = self.matrix.nrows();
        (0..m)
            .map(|r| (0..m).map(|c| self.matrix[(r, c)] * v[c]).sum())
            .collect()
    }
}

/// Matrix `J` with `A(x,y) = ⟨Jx, y⟩`.
pub(crate) fn symplectic_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i + n, i)] = -1.0;
        j[(i, i + n)] = 1.0;
    }
    j
}

/// `J v`, the symplectic conjugate with `A(x,y) = ⟨Jx,y⟩`.
pub(crate) fn conj(v: &[f64]) -> Vec<f64> {
    let n = v.len() / 2;
    let mut out = vec![0.0; v.len()];
    for i in 0..n {
        out[i] = v[i + n];
        out[i + n] = -v[i];
    }
    out
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = self.matrix.row_iter().map(|r| r.iter().cloned().collect()).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("rotation rows must form a square matrix"));
        }
        Rotation::new(DMatrix::from_fn(m, m, |r, c| rows[r][c])).map_err(D::Error::custom)
    }
}

pub fn apply_rotation(r: &Rotation, x: &HPoint) -> Result<HPoint> {
    check_dim(r.n(), x.n())?;
    Ok(HPoint {
        horizontal: r.apply_vec(&x.horizontal),
        vertical: x.vertical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[f64]) -> HPoint {
        HPoint::from_coords(c).unwrap()
    }

    #[test]
    fn symplectic_examples() {
        assert_eq!(symplectic_form(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(symplectic_form(&e1, &e2).unwrap(), 0.0);
        assert!(symplectic_form(&e1, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn conj_matches_form() {
        let a = [0.3, -1.2, 2.0, 0.7];
        let b = [1.1, 0.4, -0.5, 2.2];
        let ja = conj(&a);
        let ip: f64 = ja.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((ip - symp(&a, &b)).abs() < 1e-14);
    }

    #[test]
    fn mul_example() {
        let x = p(&[1.0, 0.0, 0.0]);
        let y = p(&[0.0, 1.0, 0.0]);
        assert_eq!(group_mul(&x, &y).unwrap(), p(&[1.0, 1.0, -2.0]));
    }

    #[test]
    fn inverse_and_dist_examples() {
        let x = p(&[1.0, 2.0, 3.0]);
        assert_eq!(group_inv(&x), p(&[-1.0, -2.0, -3.0]));
        assert_eq!(group_mul(&x, &group_inv(&x)).unwrap(), HPoint::origin(1));
        assert_eq!(koranyi_dist(&p(&[0.0, 0.0, 1.0]), &HPoint::origin(1)).unwrap(), 1.0);
        assert_eq!(koranyi_dist(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn json_layout() {
        let x = p(&[1.0, 2.0, 3.0]);
        assert_eq!(serde_json::to_string(&x).unwrap(), "[1.0,2.0,3.0]");
        assert!(serde_json::from_str::<HPoint>("[1.0,2.0]").is_err());
        assert!(serde_json::from_str::<HPoint>("[1.0]").is_err());
        let y: HPoint = serde_json::from_str("[1,2,3,4,5]").unwrap();
        assert_eq!(y.n(), 2);
    }

    #[test]
    fn bad_rotation_rejected() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 0)] = -1.0; // reflection: orthogonal but flips A
        assert!(Rotation::new(m).is_err());
        assert!(Rotation::new(DMatrix::identity(2, 2) * 2.0).is_err());
    }
}
