//! Simpson quadrature: adaptive for integrands given as closures, cumulative for samples.

/// Adaptive Simpson integral of `f` over `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    refine(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn refine(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
pub fn composite_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = (panels.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * k as f64);
    }
    sum * h / 3.0
}

/// Integral from node `origin` to every node of uniformly spaced samples with step `h`.
///
/// Pairs of intervals use Simpson's rule; a leftover single interval uses the
/// three-point rule on its neighbours, so the result is third-order accurate everywhere.
pub fn cumulative_simpson(values: &[f64], h: f64, origin: usize) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let mut acc = 0.0;
    let mut k = origin;
    while k + 1 < n {
        if k + 2 < n {
            out[k + 1] = acc + single_interval(values, k, k + 1, h);
            acc += h / 3.0 * (values[k] + 4.0 * values[k + 1] + values[k + 2]);
            out[k + 2] = acc;
            k += 2;
        } else {
            out[k + 1] = acc + single_interval(values, k, k + 1, h);
            k += 1;
        }
    }
    let mut acc = 0.0;
    let mut k = origin;
    while k >= 1 {
        if k >= 2 {
            out[k - 1] = acc - single_interval(values, k - 1, k, h);
            acc -= h / 3.0 * (values[k] + 4.0 * values[k - 1] + values[k - 2]);
            out[k - 2] = acc;
            k -= 2;
        } else {
            out[k - 1] = acc - single_interval(values, k - 1, k, h);
            k -= 1;
        }
    }
    out
}

/// Integral over `[x_lo, x_hi]` (adjacent nodes) from the quadratic through three nodes.
fn single_interval(v: &[f64], lo: usize, hi: usize, h: f64) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.5 * h * (v[lo] + v[hi]);
    }
    if hi + 1 < n {
        h / 12.0 * (5.0 * v[lo] + 8.0 * v[hi] - v[hi + 1])
    } else {
        h / 12.0 * (-v[lo - 1] + 8.0 * v[lo] + 5.0 * v[hi])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_simpson_on_smooth_integrand() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13, 50);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn composite_simpson_is_exact_on_cubics() {
        let v = composite_simpson(&|x: f64| x * x * x - x, 0.0, 2.0, 4);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cumulative_simpson_integrates_quadratics_exactly() {
        let h = 0.1;
        let xs: Vec<f64> = (0..12).map(|k| -0.5 + h * k as f64).collect();
        let vals: Vec<f64> = xs.iter().map(|x| 3.0 * x * x - 1.0).collect();
        let out = cumulative_simpson(&vals, h, 5);
        for (x, v) in xs.iter().zip(&out) {
            let exact = x * x * x - x;
            assert!((v - exact).abs() < 1e-13, "{x}: {v} vs {exact}");
        }
    }
}
