//! Staggered adoption with time-invariant covariates.
//!
//! Cohort `r` is first treated in period `r`. The regression has unit and
//! time effects (absorbed by double-demeaning) and:
//!
//! * `iota_s' X_i D_s(t)` for every period `s` except the base period,
//! * a treatment cell `G_i^r D_s(t)` for every cohort `r` and `s >= r`,
//!   with covariate interactions `rho_{r,s}' Xdot_i G_i^r D_s(t)`,
//! * a placebo cell `G_i^m D_k(t)` for every cohort `m` and pre-adoption
//!   period `k < m`, `k != base`, with interactions `Xdot_i G_i^m D_k(t)`.
//!
//! `Xdot_i` is `X_i` centred by the sample mean of its cohort, so the
//! placebo coefficients are the cohort-average placebo effects. Terms that
//! do not vary over time (`kappa' X_i`, `zeta_r' X_i G_i^r`) are absorbed by
//! the unit effects. The base period is the one before the earliest
//! adoption.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{cluster_robust_cov, CovEstimate};
use crate::error::{Error, Result};
use crate::panel::{Cohort, PanelDataset, PretrendFit, TwfeDesign};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StaggeredOptions {
    /// Placebo cells `(cohort period index, period index)` left out of the
    /// model; their observations then serve as controls.
    pub pooled: Vec<(usize, usize)>,
    /// Use every period. By default periods from the latest adoption on are
    /// dropped: with no not-yet-treated cohort left, they only identify
    /// treatment cells and do not inform the placebo effects.
    pub full_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMean {
    pub cohort: i64,
    pub units: usize,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StaggeredDesign {
    design: TwfeDesign,
    cohorts: Vec<usize>,
    placebo_cells: Vec<(usize, usize)>,
    pooled_cells: Vec<(usize, usize)>,
    cohort_means: Vec<CohortMean>,
    centered: Option<DMatrix<f64>>,
    window: usize,
    time_labels: Vec<i64>,
}

/// Placebo estimates in label order `(cohort, period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboVector {
    pub values: DVector<f64>,
    pub labels: Vec<String>,
    /// `(cohort label, period label)` per entry.
    pub cells: Vec<(i64, i64)>,
}

pub fn build_staggered_design(ds: &PanelDataset, opts: &StaggeredOptions) -> Result<StaggeredDesign> {
    let cohort_of = ds.cohorts().ok_or_else(|| Error::validation("staggered design needs a cohort column"))?;
    if !cohort_of.contains(&Cohort::Never) {
        return Err(Error::validation("no never-treated units; the staggered design needs a never-treated cohort"));
    }
    let cohorts: Vec<usize> = cohort_of
        .iter()
        .filter_map(|c| match c {
            Cohort::Adopts(r) => Some(*r),
            Cohort::Never => None,
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let base = ds.base_period();
    let labels = ds.time_labels();
    let window = if opts.full_window { ds.n_periods() } else { *cohorts.last().expect("treated cohort exists") };
    let n = ds.n_units();

    let mut placebo_cells: Vec<(usize, usize)> =
        cohorts.iter().flat_map(|&m| (0..m.min(window)).filter(move |&k| k != base).map(move |k| (m, k))).collect();
    for cell in &opts.pooled {
        if !placebo_cells.contains(cell) {
            return Err(Error::validation(format!(
                "pooled cell (cohort {}, period {}) is not a placebo cell",
                labels.get(cell.0).copied().unwrap_or(cell.0 as i64),
                labels.get(cell.1).copied().unwrap_or(cell.1 as i64)
            )));
        }
    }
    placebo_cells.retain(|c| !opts.pooled.contains(c));
    if placebo_cells.is_empty() {
        return Err(Error::validation("every placebo cell is pooled; nothing left to test"));
    }

    // Covariates centred within cohort.
    let mut cohort_means = Vec::new();
    let centered = match ds.covariates() {
        None => None,
        Some(x) => {
            let mut xd = x.clone();
            for &r in &cohorts {
                let members: Vec<usize> = (0..n).filter(|&i| cohort_of[i] == Cohort::Adopts(r)).collect();
                if members.len() < 2 {
                    return Err(Error::validation(format!(
                        "cohort {} has a single unit; its covariate mean cannot be separated from the unit",
                        labels[r]
                    )));
                }
                let mean: Vec<f64> = (0..x.ncols())
                    .map(|j| members.iter().map(|&i| x[(i, j)]).sum::<f64>() / members.len() as f64)
                    .collect();
                for &i in &members {
                    for j in 0..x.ncols() {
                        xd[(i, j)] = x[(i, j)] - mean[j];
                    }
                }
                cohort_means.push(CohortMean { cohort: labels[r], units: members.len(), mean });
            }
            Some(xd)
        }
    };
    let names = ds.covariate_names();

    let y = ds.outcomes().columns(0, window).into_owned();
    let mut columns = Vec::new();
    let mut col_labels = Vec::new();
    let cell = |g: Cohort, s: usize, weight: &dyn Fn(usize) -> f64| {
        DMatrix::from_fn(n, window, |i, t| if t == s && cohort_of[i] == g { weight(i) } else { 0.0 })
    };
    for &(m, k) in &placebo_cells {
        columns.push(cell(Cohort::Adopts(m), k, &|_| 1.0));
        col_labels.push(format!("placebo[m={},k={}]", labels[m], labels[k]));
    }
    let tested: Vec<usize> = (0..placebo_cells.len()).collect();
    if let Some(xd) = &centered {
        for &(m, k) in &placebo_cells {
            for (j, name) in names.iter().enumerate() {
                columns.push(cell(Cohort::Adopts(m), k, &|i| xd[(i, j)]));
                col_labels.push(format!("placebo_x[m={},k={},{name}]", labels[m], labels[k]));
            }
        }
    }
    for &r in cohorts.iter().filter(|&&r| r < window) {
        for s in r..window {
            columns.push(cell(Cohort::Adopts(r), s, &|_| 1.0));
            col_labels.push(format!("att[r={},s={}]", labels[r], labels[s]));
            if let Some(xd) = &centered {
                for (j, name) in names.iter().enumerate() {
                    columns.push(cell(Cohort::Adopts(r), s, &|i| xd[(i, j)]));
                    col_labels.push(format!("att_x[r={},s={},{name}]", labels[r], labels[s]));
                }
            }
        }
    }
    if let Some(x) = ds.covariates() {
        for s in (0..window).filter(|&s| s != base) {
            for (j, name) in names.iter().enumerate() {
                columns.push(DMatrix::from_fn(n, window, |i, t| if t == s { x[(i, j)] } else { 0.0 }));
                col_labels.push(format!("time_x[s={},{name}]", labels[s]));
            }
        }
    }
    let design = TwfeDesign::new(y, columns, col_labels, tested)?;
    Ok(StaggeredDesign {
        design,
        cohorts,
        placebo_cells,
        pooled_cells: opts.pooled.clone(),
        cohort_means,
        centered,
        window,
        time_labels: labels.to_vec(),
    })
}

impl StaggeredDesign {
    pub fn design(&self) -> &TwfeDesign {
        &self.design
    }

    pub fn fit(&self) -> Result<PretrendFit> {
        self.design.fit()
    }

    /// Cohort adoption period indices.
    pub fn cohorts(&self) -> &[usize] {
        &self.cohorts
    }

    /// `(cohort, period)` index pairs of the tested placebo cells.
    pub fn placebo_cells(&self) -> &[(usize, usize)] {
        &self.placebo_cells
    }

    pub fn cohort_means(&self) -> &[CohortMean] {
        &self.cohort_means
    }

    /// Covariates after within-cohort centring (never-treated rows untouched).
    pub fn centered_covariates(&self) -> Option<&DMatrix<f64>> {
        self.centered.as_ref()
    }

    pub fn has_covariates(&self) -> bool {
        self.centered.is_some()
    }

    /// Number of periods used.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Observations that act as controls for the placebo comparisons:
    /// never-treated units plus any pooled placebo cells.
    pub fn control_set(&self) -> Vec<String> {
        let mut out = vec!["never-treated units, all periods".to_string()];
        out.extend(
            self.pooled_cells
                .iter()
                .map(|&(m, k)| format!("cohort {} in period {}", self.time_labels[m], self.time_labels[k])),
        );
        out
    }

    /// Cluster-robust covariance of the placebo block. Flagged unadjusted
    /// when covariates were centred at estimated cohort means.
    pub fn covariance(&self, fit: &PretrendFit) -> Result<CovEstimate> {
        let mut cov = cluster_robust_cov(fit)?;
        cov.unadjusted = self.has_covariates();
        Ok(cov)
    }
}

pub fn extract_placebo_vector(design: &StaggeredDesign, fit: &PretrendFit) -> PlaceboVector {
    let labels = &design.time_labels;
    PlaceboVector {
        values: fit.beta_hat.clone(),
        labels: fit.tested_labels(),
        cells: design.placebo_cells.iter().map(|&(m, k)| (labels[m], labels[k])).collect(),
    }
}
