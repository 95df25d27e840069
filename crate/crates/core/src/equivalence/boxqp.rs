//! Primal active-set solver for small strictly convex box-constrained QPs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimize `(x - c)' H (x - c)` subject to `lo <= x <= hi` elementwise.
///
/// `H` must be symmetric positive definite. Starts from the clamped
/// unconstrained optimum and alternates between equality-constrained
/// Newton steps on the free set and releasing the bound with the most
/// negative multiplier.
pub fn solve_box_qp(h: &DMatrix<f64>, c: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<DVector<f64>> {
    let k = c.len();
    if h.shape() != (k, k) || lo.len() != k || hi.len() != k {
        return Err(Error::validation("box QP dimensions do not agree"));
    }
    if lo.iter().zip(hi.iter()).any(|(l, u)| l > u) {
        return Err(Error::validation("box QP has an empty feasible set"));
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Bound {
        Free,
        Lower,
        Upper,
    }
    let mut x = DVector::from_fn(k, |i, _| c[i].clamp(lo[i], hi[i]));
    let mut state: Vec<Bound> = (0..k)
        .map(|i| {
            if lo[i] == hi[i] || x[i] == lo[i] && c[i] < lo[i] {
                Bound::Lower
            } else if x[i] == hi[i] && c[i] > hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    for _ in 0..(50 * (k + 1)) {
        let free: Vec<usize> = (0..k).filter(|&i| state[i] == Bound::Free).collect();
        // Newton target on the free set with the bound variables held fixed:
        // H_FF (y_F - c_F) = -H_FB (x_B - c_B).
        let mut target = x.clone();
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(free.len(), |a, _| {
                -(0..k).filter(|&j| state[j] != Bound::Free).map(|j| h[(free[a], j)] * (x[j] - c[j])).sum::<f64>()
            });
            let step = hff
                .cholesky()
                .ok_or_else(|| Error::Numerical("box QP Hessian is not positive definite".into()))?
                .solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                target[i] = c[i] + step[a];
            }
        }

        // Walk towards the target until the first free variable hits a bound.
        let mut t_max = 1.0;
        let mut blocking = None;
        for &i in &free {
            let d = target[i] - x[i];
            let room = if d > 0.0 { hi[i] - x[i] } else { lo[i] - x[i] };
            if d != 0.0 && room / d < t_max {
                t_max = (room / d).max(0.0);
                blocking = Some((i, if d > 0.0 { Bound::Upper } else { Bound::Lower }));
            }
        }
        for &i in &free {
            x[i] += t_max * (target[i] - x[i]);
        }
        if let Some((i, side)) = blocking {
            x[i] = if side == Bound::Upper { hi[i] } else { lo[i] };
            state[i] = side;
            continue;
        }

        // Optimal on the current face; check the multipliers of the bounds.
        let grad = h * (&x - c);
        let scale = grad.amax().max(1.0) * 1e-12;
        let worst = (0..k)
            .filter(|&i| lo[i] < hi[i])
            .filter_map(|i| match state[i] {
                Bound::Lower if grad[i] < -scale => Some((i, -grad[i])),
                Bound::Upper if grad[i] > scale => Some((i, grad[i])),
                _ => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, _)) => state[i] = Bound::Free,
            None => return Ok(x),
        }
    }
    Err(Error::Numerical("box QP active-set iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(h: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let d = x - c;
        (d.transpose() * h * d)[0]
    }

    #[test]
    fn interior_optimum_is_returned_unchanged() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DVector::from_vec(vec![0.1, -0.2]);
        let x = solve_box_qp(&h, &c, &DVector::from_element(2, -1.0), &DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(x, c);
    }

    #[test]
    fn matches_dense_grid_search() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let c = DVector::from_vec(vec![2.0, -0.3]);
        let (lo, hi) = (DVector::from_element(2, -1.0), DVector::from_element(2, 1.0));
        let x = solve_box_qp(&h, &c, &lo, &hi).unwrap();
        let mut best = f64::INFINITY;
        for a in 0..=400 {
            for b in 0..=400 {
                let p = DVector::from_vec(vec![-1.0 + a as f64 / 200.0, -1.0 + b as f64 / 200.0]);
                best = best.min(objective(&h, &c, &p));
            }
        }
        let got = objective(&h, &c, &x);
        assert!(got <= best + 1e-12 && got > best - 1e-3, "{got} vs {best}");
    }

    #[test]
    fn kkt_conditions_hold_on_random_problems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.random_range(1..7);
            let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let h = &a * a.transpose() + DMatrix::identity(k, k) * 0.1;
            let c = DVector::from_fn(k, |_, _| rng.random_range(-3.0..3.0));
            let lo = DVector::from_element(k, -1.0);
            let hi = DVector::from_element(k, 1.0);
            let x = solve_box_qp(&h, &c, &lo, &hi).unwrap();
            let g = &h * (&x - &c);
            for i in 0..k {
                assert!(x[i] >= -1.0 && x[i] <= 1.0);
                if x[i] > -1.0 && x[i] < 1.0 {
                    assert!(g[i].abs() < 1e-9, "{g}");
                } else if x[i] == -1.0 {
                    assert!(g[i] >= -1e-9);
                } else {
                    assert!(g[i] <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn degenerate_bounds_fix_variables() {
        let h = DMatrix::identity(2, 2);
        let c = DVector::from_vec(vec![0.5, 0.5]);
        let lo = DVector::from_vec(vec![0.2, -1.0]);
        let hi = DVector::from_vec(vec![0.2, 1.0]);
        let x = solve_box_qp(&h, &c, &lo, &hi).unwrap();
        assert_eq!(x[0], 0.2);
        assert!((x[1] - 0.5).abs() < 1e-14);
    }
}
