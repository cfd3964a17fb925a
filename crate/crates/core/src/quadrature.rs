//! Adaptive Simpson quadrature.

/// Absolute tolerance used by the equilibrium markup integrals.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Maximum bisection depth.
pub const DEFAULT_MAX_DEPTH: u32 = 40;

/// Integrates `f` over `[a, b]` with adaptive Simpson refinement.
///
/// Each subinterval is accepted once the Richardson error estimate
/// `|S_left + S_right - S_whole| / 15` falls below its share of `tol`
/// or the depth budget is exhausted. Returns 0 for empty ranges and
/// the negated integral when `b < a`.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return 0.0;
    }
    if b < a {
        return -adaptive_simpson(f, b, a, tol, max_depth);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0;
    refine(&f, Panel { a, m, b, fa, fm, fb, whole }, tol, max_depth)
}

/// [`adaptive_simpson`] with the crate defaults.
pub fn integrate<F>(f: F, a: f64, b: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    adaptive_simpson(f, a, b, DEFAULT_TOLERANCE, DEFAULT_MAX_DEPTH)
}

#[derive(Clone, Copy)]
struct Panel {
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn refine<F>(f: &F, p: Panel, tol: f64, depth: u32) -> f64
where
    F: Fn(f64) -> f64,
{
    let lm = 0.5 * (p.a + p.m);
    let rm = 0.5 * (p.m + p.b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (p.m - p.a) * (p.fa + 4.0 * flm + p.fm) / 6.0;
    let right = (p.b - p.m) * (p.fm + 4.0 * frm + p.fb) / 6.0;
    let delta = left + right - p.whole;
    // The midpoints stop being distinct well before depth 40 on short ranges.
    if depth == 0 || delta.abs() <= 15.0 * tol || lm <= p.a || rm >= p.b {
        return left + right + delta / 15.0;
    }
    let l = Panel { a: p.a, m: lm, b: p.m, fa: p.fa, fm: flm, fb: p.fm, whole: left };
    let r = Panel { a: p.m, m: rm, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right };
    refine(f, l, 0.5 * tol, depth - 1) + refine(f, r, 0.5 * tol, depth - 1)
}
