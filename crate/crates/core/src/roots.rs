//! Bracketed scalar root finding: bisection until the bracket is narrow, then
//! secant steps that are rejected whenever they leave the bracket.

/// Finds a root of `f` in `[lo, hi]` where `f(lo)` and `f(hi)` have opposite
/// signs (or one of them is zero). Returns `None` if the bracket is invalid or
/// the iteration budget runs out.
pub(crate) fn bracketed_root<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Option<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }

    for _ in 0..200 {
        let width = hi - lo;
        if width <= xtol {
            return Some(0.5 * (lo + hi));
        }
        // Secant candidate once the bracket is tight enough for the local
        // linearisation to be trustworthy.
        let mut x = 0.5 * (lo + hi);
        if width < 1e-3 {
            let s = lo - flo * (hi - lo) / (fhi - flo);
            let margin = 0.01 * width;
            if s.is_finite() && s > lo + margin && s < hi - margin {
                x = s;
            }
        }
        let fx = f(x);
        if !fx.is_finite() {
            return None;
        }
        if fx == 0.0 {
            return Some(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
    }
    None
}
