//! Small quadrature toolbox shared by the measure and payoff code.
//!
//! Everything here works on plain closures; nothing is adaptive across
//! breakpoints, so callers are expected to split their domain at known
//! kinks/atoms first and integrate cell by cell.

/// Abscissas (on [-1, 1]) and weights of the 3-point Gauss-Legendre rule.
const GL3_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_W: [f64; 3] = [
    0.555_555_555_555_555_6,
    0.888_888_888_888_888_9,
    0.555_555_555_555_555_6,
];

/// 3-point Gauss-Legendre on a single cell. Exact for quintics.
pub fn gauss3<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL3_X.iter().zip(GL3_W.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    (fa + 4.0 * fm + fb) * h / 6.0
}

fn adaptive_step<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`. The integrand should be continuous on the cell; kinks are handled
/// by refinement but cost extra evaluations.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_step(&mut f, a, b, fa, fm, fb, whole, tol.max(1e-15), 48)
}

/// Integrate over a domain split at the given (sorted, deduplicated)
/// breakpoints, with a per-cell tolerance share proportional to cell width.
pub fn integrate_cells<F: FnMut(f64) -> f64>(mut f: F, cells: &[f64], tol: f64) -> f64 {
    if cells.len() < 2 {
        return 0.0;
    }
    let span = cells[cells.len() - 1] - cells[0];
    if span <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for w in cells.windows(2) {
        let width = w[1] - w[0];
        if width <= 0.0 {
            continue;
        }
        let cell_tol = tol * (width / span).max(1e-6);
        acc += adaptive_simpson(&mut f, w[0], w[1], cell_tol);
    }
    acc
}

/// Sort, deduplicate (within `eps`) and clamp a breakpoint list to `[lo, hi]`,
/// always keeping `lo` and `hi` themselves.
pub fn normalize_breakpoints(points: &mut Vec<f64>, lo: f64, hi: f64, eps: f64) {
    points.retain(|p| p.is_finite() && *p > lo && *p < hi);
    points.push(lo);
    points.push(hi);
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup_by(|a, b| (*a - *b).abs() <= eps);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_matches_closed_forms() {
        let v = adaptive_simpson(|x| x * x, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-10);
        let v = adaptive_simpson(|x| (-x).exp(), 0.0, 20.0, 1e-12);
        assert!((v - (1.0 - (-20.0_f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn simpson_handles_kinks() {
        // |x - 1| on [0, 3] = 0.5 + 2
        let v = adaptive_simpson(|x| (x - 1.0_f64).abs(), 0.0, 3.0, 1e-11);
        assert!((v - 2.5).abs() < 1e-9);
    }

    #[test]
    fn gauss3_is_exact_for_cubics() {
        let v = gauss3(-1.0, 2.0, |x| x * x * x - 2.0 * x);
        // integral of x^3 - 2x on [-1, 2] = (16-1)/4 - (4-1) = 0.75
        assert!((v - 0.75).abs() < 1e-13);
    }

    #[test]
    fn cells_split_at_breakpoints() {
        let mut pts = vec![1.0, 1.0 + 1e-15, 2.0];
        normalize_breakpoints(&mut pts, 0.0, 3.0, 1e-12);
        assert_eq!(pts.len(), 4);
        let v = integrate_cells(|x| if x < 1.0 { 1.0 } else { 2.0 }, &pts, 1e-12);
        assert!((v - 5.0).abs() < 1e-10);
    }
}
