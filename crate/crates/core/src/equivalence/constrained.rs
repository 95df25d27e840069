//! Least squares under `||beta||_inf = delta` for the tested coefficients.

use nalgebra::{DMatrix, DVector};

use super::boxqp::solve_box_qp;
use crate::error::{Error, Result};
use crate::panel::PretrendFit;

/// Constrained estimate of the tested coefficients (length `T`).
pub fn constrained_estimate(fit: &PretrendFit, delta: f64) -> Result<DVector<f64>> {
    Ok(ConstrainedProblem::new(fit)?.solve(delta)?.0)
}

/// The sum of squared residuals as a function of the tested coefficients,
/// with nuisance coefficients profiled out:
/// `SSR(b) = SSR(b_hat) + n (b - b_hat)' H (b - b_hat)`, `H = (G^-1)_tt^-1`.
#[derive(Debug, Clone)]
pub(crate) struct ConstrainedProblem {
    beta_hat: DVector<f64>,
    coef: DVector<f64>,
    tested: Vec<usize>,
    metric: DMatrix<f64>,
    /// `(G^-1)_{.t} (G^-1)_tt^-1`: maps a tested shift to the full coefficient shift.
    lift: DMatrix<f64>,
}

impl ConstrainedProblem {
    pub(crate) fn new(fit: &PretrendFit) -> Result<Self> {
        let s_tt = fit.tested_block(&fit.gram_inv);
        let metric = s_tt
            .cholesky()
            .ok_or_else(|| Error::Numerical("tested covariance block is not positive definite".into()))?
            .inverse();
        let s_rows = fit.tested_rows(&fit.gram_inv);
        let lift = s_rows.transpose() * &metric;
        Ok(ConstrainedProblem {
            beta_hat: fit.beta_hat.clone(),
            coef: fit.coef.clone(),
            tested: fit.tested.clone(),
            metric,
            lift,
        })
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.beta_hat;
        d.dot(&(&self.metric * &d))
    }

    /// Returns the tested and the full coefficient vector.
    pub(crate) fn solve(&self, delta: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::validation(format!("threshold must be positive, got {delta}")));
        }
        let t = self.beta_hat.len();
        let lo = DVector::from_element(t, -delta);
        let hi = DVector::from_element(t, delta);
        let tested = if self.beta_hat.amax() >= delta {
            solve_box_qp(&self.metric, &self.beta_hat, &lo, &hi)?
        } else {
            // Interior box optimum: search the faces x_l = +-delta, in the
            // order (l ascending, + before -) so ties resolve deterministically.
            let mut best: Option<(f64, DVector<f64>)> = None;
            for l in 0..t {
                for sign in [1.0, -1.0] {
                    let (mut flo, mut fhi) = (lo.clone(), hi.clone());
                    flo[l] = sign * delta;
                    fhi[l] = sign * delta;
                    let x = solve_box_qp(&self.metric, &self.beta_hat, &flo, &fhi)?;
                    let v = self.objective(&x);
                    let better = match &best {
                        None => true,
                        Some((b, _)) => v < *b - 1e-12 * b.abs(),
                    };
                    if better {
                        best = Some((v, x));
                    }
                }
            }
            best.expect("at least one face").1
        };
        Ok((tested.clone(), self.lift_to_full(&tested)))
    }

    pub(crate) fn lift_to_full(&self, tested: &DVector<f64>) -> DVector<f64> {
        let d = tested - &self.beta_hat;
        let mut full = &self.coef + &self.lift * d;
        for (a, &j) in self.tested.iter().enumerate() {
            full[j] = tested[a];
        }
        full
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{fit_pretrend, PanelDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel(n: usize, periods: usize, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, periods, |_, _| rng.random_range(-1.0..1.0));
        PanelDataset::canonical(y, (0..n).map(|i| i % 2 == 0).collect(), periods - 1).unwrap()
    }

    fn ssr(fit: &PretrendFit, beta: &DVector<f64>) -> f64 {
        fit.residuals_at(beta).norm_squared()
    }

    #[test]
    fn single_coefficient_projects_to_signed_delta() {
        let fit = fit_pretrend(&panel(8, 2, 1)).unwrap();
        let b = fit.beta_hat[0];
        let big = 10.0 * b.abs();
        let c = constrained_estimate(&fit, big).unwrap();
        assert_eq!(c[0], big * b.signum());
    }

    #[test]
    fn feasible_estimate_is_kept() {
        let fit = fit_pretrend(&panel(10, 4, 2)).unwrap();
        let d = fit.beta_hat.amax();
        let c = constrained_estimate(&fit, d).unwrap();
        assert_eq!(c, fit.beta_hat);
    }

    #[test]
    fn two_coefficients_match_grid_search() {
        let fit = fit_pretrend(&panel(8, 3, 7)).unwrap();
        let delta = 2.0 * fit.beta_hat.amax();
        let c = constrained_estimate(&fit, delta).unwrap();
        assert!((c.amax() - delta).abs() < 1e-12);
        let mut best = f64::INFINITY;
        let steps = (2.0 * delta / 1e-3).ceil() as usize;
        for s in 0..=steps {
            let v = -delta + s as f64 * 1e-3;
            let v = v.min(delta);
            for p in [
                DVector::from_vec(vec![delta, v]),
                DVector::from_vec(vec![-delta, v]),
                DVector::from_vec(vec![v, delta]),
                DVector::from_vec(vec![v, -delta]),
            ] {
                best = best.min(ssr(&fit, &p));
            }
        }
        let got = ssr(&fit, &c);
        assert!(got <= best + 1e-12, "{got} > {best}");
        assert!(best - got < 1e-2);
    }

    #[test]
    fn matches_vertex_enumeration_when_outside_box() {
        // For three coefficients the box optimum can be checked against a
        // brute-force search over all 3^T sign/free patterns.
        for seed in 0..20 {
            let fit = fit_pretrend(&panel(9, 4, seed)).unwrap();
            let delta = 0.5 * fit.beta_hat.amax();
            let c = constrained_estimate(&fit, delta).unwrap();
            let p = ConstrainedProblem::new(&fit).unwrap();
            let mut best = f64::INFINITY;
            for pattern in 0..27usize {
                let mut code = pattern;
                let mut lo = DVector::from_element(3, -delta);
                let mut hi = DVector::from_element(3, delta);
                let mut fixed = vec![];
                for l in 0..3 {
                    match code % 3 {
                        0 => {}
                        1 => {
                            lo[l] = delta;
                            fixed.push(l)
                        }
                        _ => {
                            hi[l] = -delta;
                            fixed.push(l)
                        }
                    }
                    code /= 3;
                }
                // unconstrained on the free coordinates, then check feasibility
                let free: Vec<usize> = (0..3).filter(|l| !fixed.contains(l)).collect();
                let mut x = DVector::from_fn(3, |i, _| if lo[i] == hi[i] { lo[i] } else { 0.0 });
                for &i in &fixed {
                    x[i] = if lo[i] == delta { delta } else { -delta };
                }
                if !free.is_empty() {
                    let h = &p.metric;
                    let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
                    let rhs = DVector::from_fn(free.len(), |a, _| {
                        -fixed.iter().map(|&j| h[(free[a], j)] * (x[j] - fit.beta_hat[j])).sum::<f64>()
                    });
                    let step = hff.try_inverse().unwrap() * rhs;
                    for (a, &i) in free.iter().enumerate() {
                        x[i] = fit.beta_hat[i] + step[a];
                    }
                }
                if x.iter().all(|v| v.abs() <= delta + 1e-12) {
                    best = best.min(p.objective(&x));
                }
            }
            assert!((p.objective(&c) - best).abs() <= 1e-10 * (1.0 + best), "seed {seed}");
        }
    }

    #[test]
    fn profile_objective_equals_ssr_difference() {
        let fit = fit_pretrend(&panel(12, 4, 3)).unwrap();
        let p = ConstrainedProblem::new(&fit).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.3, 0.2]);
        let lhs = ssr(&fit, &p.lift_to_full(&x)) - ssr(&fit, &fit.coef);
        assert!((lhs - fit.n as f64 * p.objective(&x)).abs() < 1e-10);
    }
}
