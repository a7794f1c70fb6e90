//! Derivative-free minimization (Nelder–Mead with dimension-adapted coefficients) and a
//! finite-difference BFGS for smooth objectives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct NmOptions {
    pub max_iter: usize,
    /// Stop when the simplex values agree to this relative spread.
    pub rel_tol: f64,
    /// Stop as soon as a value at or below this is seen.
    pub target: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct NmResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Best value after each iteration, starting with the initial simplex.
    pub history: Vec<f64>,
}

pub(crate) fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    opts: &NmOptions,
) -> NmResult {
    let dim = x0.len();
    let eval = |f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(f, x0);
    simplex.push((x0.to_vec(), v0));
    if dim == 0 || v0 <= opts.target {
        return NmResult {
            x: x0.to_vec(),
            value: v0,
            iterations: 0,
            history: vec![v0],
        };
    }
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(f, &x);
        simplex.push((x, v));
    }
    let nd = dim as f64;
    let (refl, expand, contract, shrink) = (1.0, 1.0 + 2.0 / nd, 0.75 - 0.5 / nd, 1.0 - 1.0 / nd);
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let mut history = vec![simplex[0].1];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if best <= opts.target {
            break;
        }
        if (worst - best).abs() <= opts.rel_tol * best.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nd;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(refl);
        let fr = eval(f, &xr);
        if fr < best {
            let xe = along(refl * expand);
            let fe = eval(f, &xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let x = along(refl * contract);
                let v = eval(f, &x);
                (x, v)
            } else {
                let x = along(-contract);
                let v = eval(f, &x);
                (x, v)
            };
            if fc < fr.min(worst) {
                simplex[dim] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x_best
                        .iter()
                        .zip(&item.0)
                        .map(|(b, xi)| b + shrink * (xi - b))
                        .collect();
                    let v = eval(f, &x);
                    *item = (x, v);
                }
            }
        }
        order(&mut simplex);
        history.push(simplex[0].1);
    }
    let (x, value) = simplex.swap_remove(0);
    NmResult {
        x,
        value,
        iterations,
        history,
    }
}

/// Quasi-Newton descent on a smooth objective, with central-difference gradients taken
/// at step `h[i]` per coordinate. Returns the best point, its value and the iterations used.
pub(crate) fn bfgs(f: &mut impl FnMut(&[f64]) -> f64, x0: &[f64], h: &[f64], max_iter: usize) -> (Vec<f64>, f64, usize) {
    let dim = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let grad = |x: &[f64], eval: &mut dyn FnMut(&[f64]) -> f64| -> Vec<f64> {
        let mut g = vec![0.0; dim];
        let mut y = x.to_vec();
        for i in 0..dim {
            y[i] = x[i] + h[i];
            let up = eval(&y);
            y[i] = x[i] - h[i];
            let down = eval(&y);
            y[i] = x[i];
            g[i] = (up - down) / (2.0 * h[i]);
        }
        g
    };
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    if !fx.is_finite() || dim == 0 {
        return (x, fx, 0);
    }
    let mut g = grad(&x, &mut eval);
    // inverse Hessian, started at the squared difference steps so directions stay well scaled
    let mut hinv = DMatrix::<f64>::zeros(dim, dim);
    let reset = |hinv: &mut DMatrix<f64>| {
        hinv.fill(0.0);
        for i in 0..dim {
            hinv[(i, i)] = h[i] * h[i] * 1e4;
        }
    };
    reset(&mut hinv);
    let mut iterations = 0;
    while iterations < max_iter {
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&hinv * &gv);
        let mut slope = dir.dot(&gv);
        if !(slope < 0.0) {
            reset(&mut hinv);
            dir = -(&hinv * &gv);
            slope = dir.dot(&gv);
            if !(slope < 0.0) {
                break;
            }
        }
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let y: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            let fy = eval(&y);
            if fy <= fx + 1e-4 * step * slope {
                next = Some((y, fy));
                break;
            }
            step *= 0.5;
        }
        let Some((y, fy)) = next else {
            break;
        };
        let gy = grad(&y, &mut eval);
        let s = DVector::from_iterator(dim, y.iter().zip(&x).map(|(a, b)| a - b));
        let t = DVector::from_iterator(dim, gy.iter().zip(&g).map(|(a, b)| a - b));
        let st = s.dot(&t);
        if st > 1e-300 {
            let rho = 1.0 / st;
            let id = DMatrix::<f64>::identity(dim, dim);
            let left = &id - rho * &s * t.transpose();
            let right = &id - rho * &t * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let gain = fx - fy;
        x = y;
        fx = fy;
        g = gy;
        if gain <= 1e-15 * fx.abs() {
            break;
        }
    }
    (x, fx, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> NmOptions {
        NmOptions {
            max_iter: 2000,
            rel_tol: 1e-14,
            target: f64::NEG_INFINITY,
        }
    }

    #[test]
    fn rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(&mut f, &[-1.2, 1.0], &[0.1, 0.1], &opts());
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn history_is_monotone() {
        let mut f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.3).powi(2)).sum::<f64>();
        let r = nelder_mead(&mut f, &[1.0; 5], &[0.5; 5], &opts());
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.value < 1e-8);
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, v, _) = bfgs(&mut f, &[-1.2, 1.0], &[1e-6, 1e-6], 500);
        assert!(v < 1e-10 && (x[0] - 1.0).abs() < 1e-5, "{x:?} {v}");
    }

    #[test]
    fn target_stops_early() {
        let mut calls = 0;
        let mut f = |x: &[f64]| {
            calls += 1;
            x[0] * x[0]
        };
        let o = NmOptions { target: 1.0, ..opts() };
        let r = nelder_mead(&mut f, &[0.5], &[0.1], &o);
        assert_eq!(r.iterations, 0);
        assert_eq!(calls, 1);
    }
}
