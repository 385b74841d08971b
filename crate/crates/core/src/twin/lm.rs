//! Damped least squares with a forward-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::exec::{self, Execution};

use super::TwinError;

pub(crate) struct LmProblem<'a> {
    pub residual: &'a (dyn Fn(&[f64]) -> Result<Vec<f64>, TwinError> + Sync),
    pub fd_step: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LmResult {
    pub x: Vec<f64>,
    /// Sum of squared residuals after each accepted step, starting point first.
    pub history: Vec<f64>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn clamp_into(x: &mut [f64], p: &LmProblem) {
    for (j, v) in x.iter_mut().enumerate() {
        *v = v.clamp(p.lower[j], p.upper[j]);
    }
}

pub(crate) fn levenberg_marquardt(
    p: &LmProblem,
    x0: &[f64],
    max_iters: usize,
    mode: Execution,
) -> Result<LmResult, TwinError> {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, p);
    let mut r = (p.residual)(&x)?;
    let mut f = sum_sq(&r);
    if !f.is_finite() {
        return Err(TwinError::Divergence);
    }
    let mut history = vec![f];
    let mut mu = 1e-3;
    for _ in 0..max_iters {
        let cols = exec::map_range(mode, n, |j| -> Result<Vec<f64>, TwinError> {
            let mut xp = x.clone();
            let mut h = p.fd_step[j];
            if xp[j] + h > p.upper[j] {
                h = -h;
            }
            xp[j] += h;
            let rp = (p.residual)(&xp)?;
            Ok(rp.iter().zip(&r).map(|(a, b)| (a - b) / h).collect())
        });
        let m = r.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col?.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        let rv = DVector::from_vec(r.clone());
        let g = jac.transpose() * &rv;
        if g.amax() <= 1e-14 * (1.0 + f) || f < 1e-24 {
            break;
        }
        let a = jac.transpose() * &jac;
        let mut accepted = false;
        while mu < 1e12 {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += mu * a[(j, j)].max(1e-9);
            }
            let step = match damped.clone().cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => match damped.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        mu *= 4.0;
                        continue;
                    }
                },
            };
            let mut xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp_into(&mut xn, p);
            let rn = (p.residual)(&xn)?;
            let fn_ = sum_sq(&rn);
            if fn_.is_finite() && fn_ < f {
                let rel = (f - fn_) / f.max(1e-300);
                x = xn;
                r = rn;
                f = fn_;
                history.push(f);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < 1e-12 {
                    return Ok(LmResult { x, history });
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(LmResult { x, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * 0.25).collect();
        let data: Vec<f64> = ts.iter().map(|t| 2.5 * (-0.7 * t).exp()).collect();
        let res = |x: &[f64]| -> Result<Vec<f64>, TwinError> {
            Ok(ts.iter().zip(&data).map(|(t, d)| x[0] * (-x[1] * t).exp() - d).collect())
        };
        let p = LmProblem {
            residual: &res,
            fd_step: vec![1e-7, 1e-7],
            lower: vec![0.0, 0.0],
            upper: vec![10.0, 10.0],
        };
        let out = levenberg_marquardt(&p, &[1.0, 0.1], 100, Execution::Sequential).unwrap();
        assert!((out.x[0] - 2.5).abs() < 1e-5 && (out.x[1] - 0.7).abs() < 1e-5, "{:?}", out.x);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fixed_point_takes_no_step() {
        let res = |x: &[f64]| -> Result<Vec<f64>, TwinError> { Ok(vec![x[0] - 1.0, 2.0 * (x[0] - 1.0)]) };
        let p = LmProblem {
            residual: &res,
            fd_step: vec![0.01],
            lower: vec![-5.0],
            upper: vec![5.0],
        };
        let out = levenberg_marquardt(&p, &[1.0], 50, Execution::Parallel).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.x, vec![1.0]);
    }
}
