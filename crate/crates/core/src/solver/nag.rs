//! Nesterov's accelerated gradient with backtracking and a monotone
//! safeguard: whenever an accelerated step would increase the objective,
//! the iteration falls back to a plain gradient step from the current
//! iterate and resets the momentum.

const MAX_BACKTRACKS: usize = 60;

#[derive(Clone, Debug, Default)]
pub struct NagReport {
    /// Objective at the start and after each step.
    pub values: Vec<f64>,
    pub restarts: usize,
    /// Final inverse step size.
    pub lipschitz: f64,
}

/// Minimizes a smooth function from `x0`.
///
/// `value_grad` returns `f(x)` and writes `grad f(x)` into its second
/// argument; `value` returns `f(x)` only. `lipschitz` is the initial
/// curvature estimate (inverse step), doubled on every failed
/// sufficient-decrease test.
pub fn minimize<FG, F>(
    mut value_grad: FG,
    mut value: F,
    x0: &[f64],
    lipschitz: f64,
    iterations: usize,
) -> (Vec<f64>, NagReport)
where
    FG: FnMut(&[f64], &mut [f64]) -> f64,
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = value(&x);
    let mut y = x.clone();
    let mut grad = vec![0.0; n];
    let mut cand = vec![0.0; n];
    let mut momentum = 1.0f64;
    let mut lip = if lipschitz > 0.0 && lipschitz.is_finite() { lipschitz } else { 1.0 };
    let mut report = NagReport { values: vec![fx], ..Default::default() };

    for _ in 0..iterations {
        let fy = value_grad(&y, &mut grad);
        let mut fc = backtrack(&mut value, &y, fy, &grad, &mut lip, &mut cand);

        if fc > fx {
            // Accelerated step went uphill: take a gradient step from x instead.
            report.restarts += 1;
            let fx_now = value_grad(&x, &mut grad);
            fc = backtrack(&mut value, &x, fx_now, &grad, &mut lip, &mut cand);
            if fc > fx {
                // No descent available at machine precision.
                cand.copy_from_slice(&x);
                fc = fx;
            }
            momentum = 1.0;
            y.copy_from_slice(&cand);
        } else {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            for i in 0..n {
                y[i] = cand[i] + beta * (cand[i] - x[i]);
            }
            momentum = next;
        }
        x.copy_from_slice(&cand);
        fx = fc;
        report.values.push(fx);
    }
    report.lipschitz = lip;
    (x, report)
}

/// Finds `cand = base - grad / lip` satisfying the sufficient-decrease
/// condition `f(cand) <= f(base) - ||grad||^2 / (2 lip)`.
fn backtrack<F: FnMut(&[f64]) -> f64>(
    value: &mut F,
    base: &[f64],
    f_base: f64,
    grad: &[f64],
    lip: &mut f64,
    cand: &mut [f64],
) -> f64 {
    let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
    let mut fc = f_base;
    for _ in 0..MAX_BACKTRACKS {
        for i in 0..base.len() {
            cand[i] = base[i] - grad[i] / *lip;
        }
        fc = value(cand);
        let slack = 1e-12 * f_base.abs().max(1.0);
        if fc <= f_base - grad_sq / (2.0 * *lip) + slack {
            return fc;
        }
        *lip *= 2.0;
    }
    fc
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = 0.5 x^T A x - b^T x with A = diag(d).
    fn quad(d: &[f64], b: &[f64]) -> (impl FnMut(&[f64], &mut [f64]) -> f64, impl FnMut(&[f64]) -> f64) {
        let (d1, b1) = (d.to_vec(), b.to_vec());
        let (d2, b2) = (d.to_vec(), b.to_vec());
        (
            move |x: &[f64], g: &mut [f64]| {
                let mut f = 0.0;
                for i in 0..x.len() {
                    g[i] = d1[i] * x[i] - b1[i];
                    f += 0.5 * d1[i] * x[i] * x[i] - b1[i] * x[i];
                }
                f
            },
            move |x: &[f64]| (0..x.len()).map(|i| 0.5 * d2[i] * x[i] * x[i] - b2[i] * x[i]).sum(),
        )
    }

    #[test]
    fn converges_on_quadratic_and_is_monotone() {
        let d = [1.0, 4.0, 9.0, 0.5];
        let b = [1.0, -2.0, 3.0, 0.25];
        let (fg, f) = quad(&d, &b);
        let (x, report) = minimize(fg, f, &[0.0; 4], 0.1, 300);
        for i in 0..4 {
            assert!((x[i] - b[i] / d[i]).abs() < 1e-8);
        }
        for w in report.values.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(report.lipschitz >= 9.0);
    }

    #[test]
    fn exact_step_on_isotropic_quadratic() {
        let d = [2.0; 3];
        let b = [2.0, 4.0, -6.0];
        let (fg, f) = quad(&d, &b);
        let (x, _) = minimize(fg, f, &[0.0; 3], 2.0, 1);
        assert_eq!(x, vec![1.0, 2.0, -3.0]);
    }
}
