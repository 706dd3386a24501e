//! Scalar and two-dimensional root finding used by the closed-form solvers.

use crate::error::{LfdError, Result};

/// Bisection on `[lo, hi]` for a function with a sign change.
///
/// Stops when `|f| <= ftol` or the bracket is narrower than `xtol` relative
/// to its midpoint; returns the best point found.
pub fn bisect(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    ftol: f64,
    xtol: f64,
    method: &str,
) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(LfdError::convergence(
            method,
            format!("no sign change on [{lo}, {hi}]"),
            vec![lo, hi, flo, fhi],
        ));
    }
    let mut best = if flo.abs() < fhi.abs() { (lo, flo) } else { (hi, fhi) };
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() < best.1.abs() {
            best = (mid, fm);
        }
        if fm.abs() <= ftol || (hi - lo) <= xtol * mid.abs().max(1e-300) {
            return Ok(best.0);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(best.0)
}

/// Damped Newton for a monotone scalar equation with a bisection fallback.
///
/// `f` returns `(value, derivative)`. Steps are halved until `|f|`
/// decreases; if that fails, the step leaves `[lo, hi]`, or the derivative
/// vanishes, the method switches to bisection on the bracket.
pub fn newton_bracketed(
    f: impl Fn(f64) -> (f64, f64),
    x0: f64,
    lo: f64,
    hi: f64,
    ftol: f64,
    method: &str,
) -> Result<(f64, usize)> {
    let mut x = x0.clamp(lo, hi);
    let (mut fx, mut dfx) = f(x);
    for iter in 0..100 {
        if fx.abs() <= ftol {
            return Ok((x, iter));
        }
        if !(dfx.abs() > 0.0) || !dfx.is_finite() {
            break;
        }
        let step = -fx / dfx;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = x + alpha * step;
            if cand >= lo && cand <= hi {
                let (fc, dfc) = f(cand);
                if fc.abs() < fx.abs() {
                    x = cand;
                    fx = fc;
                    dfx = dfc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if fx.abs() <= ftol {
        return Ok((x, 100));
    }
    let root = bisect(|t| f(t).0, lo, hi, ftol, 1e-15, method)?;
    Ok((root, 100))
}

/// Finds the root of a nondecreasing function of `log t` by bracketing and
/// bisection. The bracket `[t_lo, t_hi]` is widened geometrically until it
/// contains a sign change.
pub fn log_bisect_increasing(
    f: impl Fn(f64) -> f64,
    mut t_lo: f64,
    mut t_hi: f64,
    ftol: f64,
    method: &str,
) -> Result<f64> {
    for _ in 0..200 {
        if f(t_lo) <= 0.0 {
            break;
        }
        t_lo *= 0.5;
    }
    for _ in 0..200 {
        if f(t_hi) >= 0.0 {
            break;
        }
        t_hi *= 2.0;
    }
    let s = bisect(|s| f(s.exp()), t_lo.ln(), t_hi.ln(), ftol, 1e-16, method)?;
    Ok(s.exp())
}

/// Two-dimensional damped Newton with a forward-difference Jacobian.
///
/// Returns `None` when the iteration fails to reduce the residual norm below
/// `ftol`; callers then fall back to per-coordinate bisection.
pub fn newton_2d(
    f: impl Fn([f64; 2]) -> [f64; 2],
    x0: [f64; 2],
    ftol: f64,
) -> Option<[f64; 2]> {
    let norm = |v: [f64; 2]| v[0].abs().max(v[1].abs());
    let mut x = x0;
    let mut fx = f(x);
    for _ in 0..100 {
        if !fx[0].is_finite() || !fx[1].is_finite() {
            return None;
        }
        if norm(fx) <= ftol {
            return Some(x);
        }
        let h = 1e-7;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut xp = x;
            xp[j] += h * (1.0 + x[j].abs());
            let fp = f(xp);
            for i in 0..2 {
                jac[i][j] = (fp[i] - fx[i]) / (xp[j] - x[j]);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !(det.abs() > 1e-300) {
            return None;
        }
        let step = [
            -(jac[1][1] * fx[0] - jac[0][1] * fx[1]) / det,
            -(-jac[1][0] * fx[0] + jac[0][0] * fx[1]) / det,
        ];
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [x[0] + alpha * step[0], x[1] + alpha * step[1]];
            let fc = f(cand);
            if norm(fc) < norm(fx) {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    (norm(fx) <= ftol).then_some(x)
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
/// Returns `(argmax, max)`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let candidates = [(a, f(a)), (b, f(b)), (c, fc), (d, fd)];
    candidates
        .into_iter()
        .fold((a, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc })
}
