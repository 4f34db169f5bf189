//! One-dimensional minimization: coarse grid scan followed by golden-section
//! refinement inside the bracket around the best grid point.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a unimodal `f` on `[lo, hi]`, stopping once the
/// bracket is narrower than `width`. Returns `(argmin, min)`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, width: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    // 400 steps shrink any finite bracket below f64 resolution
    for _ in 0..400 {
        if hi - lo <= width {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Scans `grid` (sorted ascending), then refines with golden section between
/// the neighbours of the best point. Non-finite values count as `+inf`.
pub fn grid_then_golden<F: Fn(f64) -> f64>(f: F, grid: &[f64], width: f64) -> (f64, f64) {
    assert!(!grid.is_empty());
    let eval = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let (best, best_val) = grid.iter().enumerate().map(|(i, &x)| (i, eval(x))).fold(
        (0, f64::INFINITY),
        |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
    );
    if !best_val.is_finite() {
        return (grid[best], best_val);
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (x, v) = golden_section(eval, lo, hi, width);
    if v <= best_val {
        (x, v)
    } else {
        (grid[best], best_val)
    }
}

/// `count` points spaced evenly in log scale over `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}
