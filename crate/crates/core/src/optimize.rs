//! Bounded derivative-free maximization in one dimension (Brent's method:
//! golden-section steps with parabolic interpolation).

use crate::error::{Error, Result};

/// Result of a bounded 1-D search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub arg: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Returns an argmax estimate of `objective` on `[lower, upper]` to within `tol`.
pub fn optimize_lambda_1d(objective: impl FnMut(f64) -> f64, lower: f64, upper: f64, tol: f64) -> Result<f64> {
    maximize_bounded(objective, lower, upper, tol, 200).map(|m| m.arg)
}

/// Brent maximization with an evaluation cap.
pub fn maximize_bounded(
    mut objective: impl FnMut(f64) -> f64,
    lower: f64,
    upper: f64,
    tol: f64,
    max_evals: usize,
) -> Result<Maximum> {
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid bracket [{lower}, {upper}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    // Internal tolerance is a third of the requested one; Brent's stopping
    // rule leaves the estimate within roughly twice the internal value.
    let t = tol / 3.0;
    let eps = f64::EPSILON.sqrt();

    let evals = std::cell::Cell::new(0usize);
    let mut f = |v: f64| -> Result<f64> {
        evals.set(evals.get() + 1);
        let y = objective(v);
        if y.is_finite() {
            Ok(-y)
        } else {
            Err(Error::NonFiniteObjective { at: v })
        }
    };

    let (mut a, mut b) = (lower, upper);
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);

    loop {
        let m = 0.5 * (a + b);
        let tol1 = eps * x.abs() + t;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) || evals.get() >= max_evals {
            break;
        }

        let mut parabolic = false;
        if e.abs() > tol1 {
            let mut r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            r = e;
            e = d;
            if p.abs() < (0.5 * q * r).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                parabolic = true;
            }
        }
        if !parabolic {
            e = if x < m { b - x } else { a - x };
            d = golden * e;
        }

        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = f(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(Maximum { arg: x, value: -fx, evaluations: evals.get() })
}
