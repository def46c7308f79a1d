/// Compare an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar loss at a flat parameter vector. Returns the
/// maximum relative error over all coordinates, where the denominator is
/// floored at `1e-8` so near-zero gradients do not blow the ratio up.
pub fn grad_check<F>(f: F, x: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = (numeric.abs() + analytic[i].abs()).max(1e-8);
        let rel = (numeric - analytic[i]).abs() / denom;
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        // f(x) = sum x_i^2, grad = 2x
        let x = [0.3, -1.2, 2.5];
        let g = [0.6, -2.4, 5.0];
        let err = grad_check(|v| v.iter().map(|a| a * a).sum(), &x, &g, 1e-5);
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = [1.0, 2.0];
        let g = [2.0, 3.0]; // second component should be 4
        let err = grad_check(|v| v.iter().map(|a| a * a).sum(), &x, &g, 1e-5);
        assert!(err > 0.1, "err = {err}");
    }

    #[test]
    fn zero_gradient_uses_absolute_floor() {
        let x = [0.0];
        let g = [0.0];
        let err = grad_check(|v| v[0] * v[0], &x, &g, 1e-5);
        assert!(err < 1e-6, "err = {err}");
    }
}
