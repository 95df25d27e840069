//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use eqtrends::panel::PanelDataset;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Least-squares dummy-variable regression of `y` on unit dummies, time
/// dummies (first period dropped) and the given regressor columns.
pub struct Lsdv {
    /// Coefficients on the regressor columns.
    pub coef: DVector<f64>,
    /// `n x P` residuals.
    pub residuals: DMatrix<f64>,
    /// Regressors residualized on the dummies, one `n x P` matrix each.
    pub partialled: Vec<DMatrix<f64>>,
}

fn dummies(n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n * p, n + p - 1, |row, c| {
        let (i, t) = (row / p, row % p);
        let hit = if c < n { i == c } else { t == c - n + 1 };
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

fn stack(m: &DMatrix<f64>) -> DVector<f64> {
    let (n, p) = m.shape();
    DVector::from_fn(n * p, |row, _| m[(row / p, row % p)])
}

fn unstack(v: &DVector<f64>, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |i, t| v[i * p + t])
}

/// Normal equations solved by LU; the designs here have full column rank.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    (x.transpose() * x).lu().solve(&(x.transpose() * y)).expect("full column rank")
}

pub fn lsdv(y: &DMatrix<f64>, regressors: &[DMatrix<f64>]) -> Lsdv {
    let (n, p) = y.shape();
    let d = dummies(n, p);
    let k = regressors.len();
    let mut x = DMatrix::zeros(n * p, d.ncols() + k);
    x.columns_mut(0, d.ncols()).copy_from(&d);
    for (j, r) in regressors.iter().enumerate() {
        x.set_column(d.ncols() + j, &stack(r));
    }
    let yv = stack(y);
    let sol = least_squares(&x, &yv);
    let resid = &yv - &x * &sol;
    let coef = DVector::from_iterator(k, sol.iter().skip(d.ncols()).copied());
    let partialled = regressors
        .iter()
        .map(|r| {
            let rv = stack(r);
            let proj = &d * least_squares(&d, &rv);
            unstack(&(rv - proj), n, p)
        })
        .collect();
    Lsdv { coef, residuals: unstack(&resid, n, p), partialled }
}

/// Cluster sandwich with explicit loops over units, periods and indices,
/// built from the LSDV pieces. Returns the block for `tested`.
pub fn triple_loop_sandwich(l: &Lsdv, tested: &[usize]) -> DMatrix<f64> {
    let (n, p) = l.residuals.shape();
    let k = l.partialled.len();
    let mut g = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let mut s = vec![0.0; k];
        for t in 0..p {
            for a in 0..k {
                s[a] += l.partialled[a][(i, t)] * l.residuals[(i, t)];
                for b in 0..k {
                    g[(a, b)] += l.partialled[a][(i, t)] * l.partialled[b][(i, t)];
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    let nf = n as f64;
    let ginv = (g / nf).try_inverse().expect("invertible gram");
    let full = &ginv * (meat / nf) * &ginv;
    DMatrix::from_fn(tested.len(), tested.len(), |a, b| full[(tested[a], tested[b])])
}

/// Placebo columns `G_i D_l(t)` for a canonical panel restricted to
/// periods `0..=base`.
pub fn placebo_columns(treated: &[bool], p: usize) -> Vec<DMatrix<f64>> {
    (0..p - 1)
        .map(|l| DMatrix::from_fn(treated.len(), p, |i, t| if treated[i] && t == l { 1.0 } else { 0.0 }))
        .collect()
}

/// Random canonical panel with `t` placebo periods plus the base period.
pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize) -> PanelDataset {
    let p = t + 1;
    let treated: Vec<bool> = loop {
        let g: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let c = g.iter().filter(|&&x| x).count();
        if c > 0 && c < n {
            break g;
        }
    };
    let y = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
    PanelDataset::canonical(y, treated, t).expect("valid panel")
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
