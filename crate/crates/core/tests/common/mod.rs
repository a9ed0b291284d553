//! Reference implementations shared by the oracle and acceptance suites.

/// Supremum of |ECDF − F| over a dense grid plus both sides of every sample point.
pub fn brute_force_ks(values: &[f64], x_min: f64, alpha: f64, grid: usize) -> f64 {
    let n = values.len() as f64;
    let cdf = |x: f64| 1.0 - (x / x_min).powf(1.0 - alpha);
    let below = |x: f64| values.iter().filter(|&&v| v < x).count() as f64 / n;
    let at_or_below = |x: f64| values.iter().filter(|&&v| v <= x).count() as f64 / n;
    let hi = values[values.len() - 1] * 4.0;
    let mut d: f64 = 0.0;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Walk the grid with a moving index so the dense pass stays linear.
    let mut idx = 0;
    for k in 0..=grid {
        let x = x_min + (hi - x_min) * k as f64 / grid as f64;
        while idx < sorted.len() && sorted[idx] <= x {
            idx += 1;
        }
        d = d.max((idx as f64 / n - cdf(x)).abs());
    }
    for &x in values {
        d = d.max((at_or_below(x) - cdf(x)).abs());
        d = d.max((below(x) - cdf(x)).abs());
    }
    d
}

pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}
