//! Balanced panel data, two-way demeaning and pooled OLS of placebo effects.
//!
//! The canonical model regresses double-demeaned outcomes of periods
//! `1..=T+1` on the double-demeaned placebo regressors `G_i * 1{t = l}`,
//! `l = 1..=T`. Unit means always run over every included period while time
//! and grand means run over the unit subset being fitted, so the same code
//! serves the full-sample fit and the nested subsample fits behind the
//! self-normalized test.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adoption cohort of a unit in a staggered design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cohort {
    /// First treated in the given period (0-based period index).
    Adopts(usize),
    Never,
}

/// Treatment assignment per unit.
#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    /// Canonical two-group design: `true` for the eventually treated group.
    Group(Vec<bool>),
    /// Staggered adoption.
    Cohort(Vec<Cohort>),
}

/// A validated balanced panel in wide form.
///
/// Units are indexed `0..n` and periods `0..T_total` (period index `p`
/// is calendar period `p + 1`). The base period index equals the number of
/// pre-treatment placebo periods `T`.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    unit_labels: Vec<i64>,
    time_labels: Vec<i64>,
    outcomes: DMatrix<f64>,
    assignment: Assignment,
    covariates: Option<DMatrix<f64>>,
    covariate_names: Vec<String>,
    base_period: usize,
}

impl PanelDataset {
    /// Two-group panel. `outcomes` is `n x T_total`.
    pub fn canonical(outcomes: DMatrix<f64>, treated: Vec<bool>, base_period: usize) -> Result<Self> {
        let n = outcomes.nrows();
        if treated.len() != n {
            return Err(Error::validation(format!("group vector has {} entries for {} units", treated.len(), n)));
        }
        let n_treated = treated.iter().filter(|&&g| g).count();
        if n_treated == 0 || n_treated == n {
            return Err(Error::validation("both the treated and the control group must be non-empty"));
        }
        let ds = PanelDataset {
            unit_labels: (0..n as i64).collect(),
            time_labels: (1..=outcomes.ncols() as i64).collect(),
            outcomes,
            assignment: Assignment::Group(treated),
            covariates: None,
            covariate_names: Vec::new(),
            base_period,
        };
        ds.check_common()?;
        Ok(ds)
    }

    /// Staggered-adoption panel. The base period is the period right before
    /// the earliest adoption.
    pub fn staggered(
        outcomes: DMatrix<f64>,
        cohorts: Vec<Cohort>,
        covariates: Option<(DMatrix<f64>, Vec<String>)>,
    ) -> Result<Self> {
        let n = outcomes.nrows();
        let t_total = outcomes.ncols();
        if cohorts.len() != n {
            return Err(Error::validation(format!("cohort vector has {} entries for {} units", cohorts.len(), n)));
        }
        let first = cohorts
            .iter()
            .filter_map(|c| match c {
                Cohort::Adopts(p) => Some(*p),
                Cohort::Never => None,
            })
            .min()
            .ok_or_else(|| Error::validation("no unit is ever treated"))?;
        if let Some(p) = cohorts.iter().find_map(|c| match c {
            Cohort::Adopts(p) if *p >= t_total => Some(*p),
            _ => None,
        }) {
            return Err(Error::validation(format!("adoption period index {p} beyond the last period")));
        }
        if first < 2 {
            return Err(Error::validation("earliest adoption leaves no pre-treatment period besides the base period"));
        }
        let (cov, names) = match covariates {
            Some((x, names)) => {
                if x.nrows() != n || x.ncols() != names.len() {
                    return Err(Error::validation("covariate matrix does not match units/names"));
                }
                (Some(x), names)
            }
            None => (None, Vec::new()),
        };
        let ds = PanelDataset {
            unit_labels: (0..n as i64).collect(),
            time_labels: (1..=t_total as i64).collect(),
            outcomes,
            assignment: Assignment::Cohort(cohorts),
            covariates: cov,
            covariate_names: names,
            base_period: first - 1,
        };
        ds.check_common()?;
        Ok(ds)
    }

    /// Replace the reporting labels of units and periods.
    pub fn with_labels(mut self, unit_labels: Vec<i64>, time_labels: Vec<i64>) -> Result<Self> {
        if unit_labels.len() != self.n_units() || time_labels.len() != self.n_periods() {
            return Err(Error::validation("label vectors do not match panel dimensions"));
        }
        self.unit_labels = unit_labels;
        self.time_labels = time_labels;
        Ok(self)
    }

    fn check_common(&self) -> Result<()> {
        if self.n_units() < 2 {
            return Err(Error::validation("panel needs at least two units"));
        }
        if self.base_period == 0 || self.base_period >= self.n_periods() {
            return Err(Error::validation(format!(
                "base period index {} leaves no pre-treatment period (T_total = {})",
                self.base_period,
                self.n_periods()
            )));
        }
        if self.outcomes.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("outcomes contain non-finite values"));
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    /// Total number of periods `T_total`.
    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Number of placebo periods `T`; also the 0-based index of the base period.
    pub fn n_pre(&self) -> usize {
        self.base_period
    }

    pub fn base_period(&self) -> usize {
        self.base_period
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    /// Group indicators of a canonical panel.
    pub fn treated(&self) -> Option<&[bool]> {
        match &self.assignment {
            Assignment::Group(g) => Some(g),
            Assignment::Cohort(_) => None,
        }
    }

    pub fn cohorts(&self) -> Option<&[Cohort]> {
        match &self.assignment {
            Assignment::Cohort(c) => Some(c),
            Assignment::Group(_) => None,
        }
    }

    pub fn covariates(&self) -> Option<&DMatrix<f64>> {
        self.covariates.as_ref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn unit_labels(&self) -> &[i64] {
        &self.unit_labels
    }

    pub fn time_labels(&self) -> &[i64] {
        &self.time_labels
    }

    /// Period index of a time label.
    pub fn period_of_label(&self, label: i64) -> Option<usize> {
        self.time_labels.iter().position(|&t| t == label)
    }

    /// Keep the listed pre-treatment periods plus the base period and drop
    /// everything after the base period (canonical panels only).
    pub fn select_pre_periods(&self, periods: &[usize]) -> Result<PanelDataset> {
        let treated = self.treated().ok_or_else(|| Error::validation("period selection requires a two-group panel"))?;
        let chosen: BTreeSet<usize> = periods.iter().copied().collect();
        if chosen.is_empty() {
            return Err(Error::validation("no pre-treatment period selected"));
        }
        if let Some(&p) = chosen.iter().find(|&&p| p >= self.base_period) {
            let what = if p == self.base_period { "is the base period" } else { "is post-treatment" };
            return Err(Error::validation(format!(
                "period {} {what}; only periods before the base period can be tested",
                self.time_labels.get(p).copied().unwrap_or(p as i64 + 1)
            )));
        }
        let keep: Vec<usize> = chosen.iter().copied().chain([self.base_period]).collect();
        let outcomes = self.outcomes.select_columns(keep.iter());
        let ds = PanelDataset {
            unit_labels: self.unit_labels.clone(),
            time_labels: keep.iter().map(|&p| self.time_labels[p]).collect(),
            outcomes,
            assignment: Assignment::Group(treated.to_vec()),
            covariates: None,
            covariate_names: Vec::new(),
            base_period: keep.len() - 1,
        };
        Ok(ds)
    }

    /// Periods `1..=T+1` only.
    pub fn pretreatment(&self) -> Result<PanelDataset> {
        let all: Vec<usize> = (0..self.base_period).collect();
        self.select_pre_periods(&all)
    }

    /// Reorder units: unit `k` of the result is unit `order[k]` of `self`.
    pub fn permute_units(&self, order: &[usize]) -> Result<PanelDataset> {
        let n = self.n_units();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::validation("unit order is not a permutation"));
        }
        let outcomes = self.outcomes.select_rows(order.iter());
        let assignment = match &self.assignment {
            Assignment::Group(g) => Assignment::Group(order.iter().map(|&i| g[i]).collect()),
            Assignment::Cohort(c) => Assignment::Cohort(order.iter().map(|&i| c[i]).collect()),
        };
        Ok(PanelDataset {
            unit_labels: order.iter().map(|&i| self.unit_labels[i]).collect(),
            time_labels: self.time_labels.clone(),
            outcomes,
            assignment,
            covariates: self.covariates.as_ref().map(|x| x.select_rows(order.iter())),
            covariate_names: self.covariate_names.clone(),
            base_period: self.base_period,
        })
    }

    /// Same panel with outcomes replaced (dimensions must match).
    pub fn with_outcomes(&self, outcomes: DMatrix<f64>) -> Result<PanelDataset> {
        if outcomes.shape() != self.outcomes.shape() {
            return Err(Error::validation("outcome matrix shape mismatch"));
        }
        let mut ds = self.clone();
        ds.outcomes = outcomes;
        ds.check_common()?;
        Ok(ds)
    }
}

/// Column mapping for long-format CSV input.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub assignment: AssignmentColumn,
    /// Covariate columns for staggered input. `None` takes every column not
    /// otherwise mapped.
    pub covariates: Option<Vec<String>>,
    /// Time label of the base period for two-group input. Defaults to the
    /// last period.
    pub base_period: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignmentColumn {
    Group(String),
    Cohort(String),
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            assignment: AssignmentColumn::Group("group".into()),
            covariates: None,
            base_period: None,
        }
    }
}

impl PanelSchema {
    pub fn staggered() -> Self {
        PanelSchema { assignment: AssignmentColumn::Cohort("cohort".into()), ..PanelSchema::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RawAssign {
    Group(bool),
    Cohort(Option<i64>),
}

/// Read a long-format panel (`unit,time,outcome,group|cohort[,x..]`).
pub fn load_panel<R: Read>(source: R, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::validation(format!("missing column '{name}'")))
    };
    let unit_col = col(&schema.unit)?;
    let time_col = col(&schema.time)?;
    let outcome_col = col(&schema.outcome)?;
    let (assign_col, staggered) = match &schema.assignment {
        AssignmentColumn::Group(c) => (col(c)?, false),
        AssignmentColumn::Cohort(c) => (col(c)?, true),
    };
    let cov_cols: Vec<(usize, String)> = if staggered {
        match &schema.covariates {
            Some(names) => names.iter().map(|n| Ok((col(n)?, n.clone()))).collect::<Result<_>>()?,
            None => headers
                .iter()
                .enumerate()
                .filter(|(i, _)| ![unit_col, time_col, outcome_col, assign_col].contains(i))
                .map(|(i, h)| (i, h.to_string()))
                .collect(),
        }
    } else {
        Vec::new()
    };

    struct Row {
        unit: i64,
        time: i64,
        outcome: f64,
        assign: RawAssign,
        covs: Vec<f64>,
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_int = |i: usize, what: &str| -> Result<i64> {
            field(i)
                .parse::<i64>()
                .map_err(|_| Error::validation(format!("row {}: {what} '{}' is not an integer", line + 2, field(i))))
        };
        let parse_real = |i: usize, what: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::validation(format!("row {}: {what} '{}' is not a number", line + 2, field(i))))
        };
        let unit = parse_int(unit_col, "unit")?;
        let time = parse_int(time_col, "time")?;
        let outcome = parse_real(outcome_col, "outcome")?;
        let raw = field(assign_col);
        let assign = if staggered {
            match raw.to_ascii_lowercase().as_str() {
                "inf" | "never" | "infinity" => RawAssign::Cohort(None),
                _ => RawAssign::Cohort(Some(parse_int(assign_col, "cohort")?)),
            }
        } else {
            match raw.parse::<f64>() {
                Ok(v) if v == 0.0 => RawAssign::Group(false),
                Ok(v) if v == 1.0 => RawAssign::Group(true),
                _ => return Err(Error::validation(format!("row {}: non-binary group value '{raw}'", line + 2))),
            }
        };
        let covs = cov_cols.iter().map(|(i, name)| parse_real(*i, name)).collect::<Result<Vec<_>>>()?;
        rows.push(Row { unit, time, outcome, assign, covs });
    }
    if rows.is_empty() {
        return Err(Error::validation("input has no data rows"));
    }

    let units: Vec<i64> = rows.iter().map(|r| r.unit).collect::<BTreeSet<_>>().into_iter().collect();
    let times: Vec<i64> = rows.iter().map(|r| r.time).collect::<BTreeSet<_>>().into_iter().collect();
    let unit_idx: HashMap<i64, usize> = units.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let time_idx: HashMap<i64, usize> = times.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let (n, t_total) = (units.len(), times.len());

    let mut outcomes = DMatrix::from_element(n, t_total, f64::NAN);
    let mut seen = vec![false; n * t_total];
    let mut assign: Vec<Option<RawAssign>> = vec![None; n];
    let mut covs: Vec<Option<Vec<f64>>> = vec![None; n];
    for r in &rows {
        let (i, t) = (unit_idx[&r.unit], time_idx[&r.time]);
        if std::mem::replace(&mut seen[i * t_total + t], true) {
            return Err(Error::validation(format!("duplicate row for unit {} time {}", r.unit, r.time)));
        }
        outcomes[(i, t)] = r.outcome;
        match assign[i] {
            None => assign[i] = Some(r.assign),
            Some(a) if a != r.assign => {
                return Err(Error::validation(format!("unit {} changes its group/cohort over time", r.unit)))
            }
            _ => {}
        }
        match &covs[i] {
            None => covs[i] = Some(r.covs.clone()),
            Some(c) if c != &r.covs => {
                return Err(Error::validation(format!("time-varying covariate detected for unit {}", r.unit)))
            }
            _ => {}
        }
    }
    let missing: Vec<(String, String)> = (0..n)
        .flat_map(|i| (0..t_total).map(move |t| (i, t)))
        .filter(|&(i, t)| !seen[i * t_total + t])
        .map(|(i, t)| (units[i].to_string(), times[t].to_string()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Unbalanced { missing });
    }

    let assign: Vec<RawAssign> = assign.into_iter().map(|a| a.expect("every unit has a row")).collect();
    let ds = if staggered {
        let cohorts = assign
            .iter()
            .map(|a| match a {
                RawAssign::Cohort(None) => Ok(Cohort::Never),
                RawAssign::Cohort(Some(label)) => time_idx
                    .get(label)
                    .map(|&p| Cohort::Adopts(p))
                    .ok_or_else(|| Error::validation(format!("unknown cohort label {label}"))),
                RawAssign::Group(_) => unreachable!("staggered schema yields cohorts"),
            })
            .collect::<Result<Vec<_>>>()?;
        let covariates = if cov_cols.is_empty() {
            None
        } else {
            let k = cov_cols.len();
            let x = DMatrix::from_fn(n, k, |i, j| covs[i].as_ref().expect("row present")[j]);
            Some((x, cov_cols.iter().map(|(_, name)| name.clone()).collect()))
        };
        PanelDataset::staggered(outcomes, cohorts, covariates)?
    } else {
        let treated = assign.iter().map(|a| matches!(a, RawAssign::Group(true))).collect();
        let base = match schema.base_period {
            Some(label) => *time_idx
                .get(&label)
                .ok_or_else(|| Error::validation(format!("base period {label} is not a time label")))?,
            None => t_total - 1,
        };
        PanelDataset::canonical(outcomes, treated, base)?
    };
    ds.with_labels(units, times)
}

/// Double-demeaned outcomes and regressors of a unit subset.
#[derive(Debug, Clone)]
pub struct DemeanedPanel {
    /// `|subset| x P` demeaned outcomes.
    pub ddy: DMatrix<f64>,
    /// Stacked demeaned regressors: row `r * P + t` holds unit `subset[r]`
    /// in period `t`, one column per regressor.
    pub ddw: DMatrix<f64>,
    /// Indices (into the source panel) of the units used for demeaning.
    pub subset: Vec<usize>,
    pub periods: usize,
}

impl DemeanedPanel {
    pub fn n_units(&self) -> usize {
        self.subset.len()
    }

    /// `P x k` regressor block of the `r`-th unit of the subset.
    pub fn unit_regressors(&self, r: usize) -> DMatrixView<'_, f64> {
        self.ddw.rows(r * self.periods, self.periods)
    }
}

/// `v_it - mean_t(v_i.) - mean_subset(v_.t) + mean_subset(v_..)` for units in `subset`.
pub(crate) fn two_way_demean(values: &DMatrix<f64>, subset: &[usize]) -> DMatrix<f64> {
    let p = values.ncols();
    let m = subset.len() as f64;
    let mut time_means = vec![0.0; p];
    for &i in subset {
        for (t, tm) in time_means.iter_mut().enumerate() {
            *tm += values[(i, t)];
        }
    }
    time_means.iter_mut().for_each(|v| *v /= m);
    let grand = time_means.iter().sum::<f64>() / p as f64;
    DMatrix::from_fn(subset.len(), p, |r, t| {
        let i = subset[r];
        let unit_mean = (0..p).map(|s| values[(i, s)]).sum::<f64>() / p as f64;
        values[(i, t)] - unit_mean - time_means[t] + grand
    })
}

/// A two-way fixed-effects regression design in raw (un-demeaned) form.
///
/// Unit and time effects are absorbed by double-demeaning. `tested` lists
/// the coefficients the equivalence tests look at; all others are nuisance.
#[derive(Debug, Clone)]
pub struct TwfeDesign {
    y: DMatrix<f64>,
    columns: Vec<DMatrix<f64>>,
    labels: Vec<String>,
    tested: Vec<usize>,
}

impl TwfeDesign {
    pub fn new(y: DMatrix<f64>, columns: Vec<DMatrix<f64>>, labels: Vec<String>, tested: Vec<usize>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::validation("design has no regressors"));
        }
        if columns.iter().any(|c| c.shape() != y.shape()) || labels.len() != columns.len() {
            return Err(Error::validation("regressor shapes/labels do not match outcomes"));
        }
        if tested.is_empty() || tested.iter().any(|&j| j >= columns.len()) {
            return Err(Error::validation("tested coefficient set is empty or out of range"));
        }
        if y.ncols() < 2 {
            return Err(Error::validation("need at least two periods"));
        }
        Ok(TwfeDesign { y, columns, labels, tested })
    }

    /// Placebo design of a canonical panel on periods `1..=T+1`.
    pub fn pretrend(ds: &PanelDataset) -> Result<Self> {
        let treated = ds.treated().ok_or_else(|| {
            Error::validation("the canonical fit requires a two-group panel; use the staggered design")
        })?;
        let periods = ds.base_period() + 1;
        let y = ds.outcomes().columns(0, periods).into_owned();
        let n = ds.n_units();
        let columns = (0..ds.n_pre())
            .map(|l| DMatrix::from_fn(n, periods, |i, t| if treated[i] && t == l { 1.0 } else { 0.0 }))
            .collect();
        let labels = (0..ds.n_pre()).map(|l| format!("beta[{}]", ds.time_labels()[l])).collect();
        TwfeDesign::new(y, columns, labels, (0..ds.n_pre()).collect())
    }

    /// Group-by-period saturated design over all periods; the tested
    /// coefficients are the post-treatment cells.
    pub fn saturated(ds: &PanelDataset) -> Result<Self> {
        let treated = ds.treated().ok_or_else(|| Error::validation("saturated design requires a two-group panel"))?;
        let (n, periods, base) = (ds.n_units(), ds.n_periods(), ds.base_period());
        if periods <= base + 1 {
            return Err(Error::validation("panel has no post-treatment period"));
        }
        let cells: Vec<usize> = (0..periods).filter(|&t| t != base).collect();
        let columns = cells
            .iter()
            .map(|&l| DMatrix::from_fn(n, periods, |i, t| if treated[i] && t == l { 1.0 } else { 0.0 }))
            .collect();
        let labels = cells
            .iter()
            .map(|&l| {
                let kind = if l < base { "beta" } else { "att" };
                format!("{kind}[{}]", ds.time_labels()[l])
            })
            .collect();
        let tested = cells.iter().enumerate().filter(|(_, &l)| l > base).map(|(j, _)| j).collect();
        TwfeDesign::new(ds.outcomes().clone(), columns, labels, tested)
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_coefficients(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn tested(&self) -> &[usize] {
        &self.tested
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn columns(&self) -> &[DMatrix<f64>] {
        &self.columns
    }

    /// Double-demean outcomes and regressors over `subset` (sorted, unique).
    pub fn demean(&self, subset: &[usize]) -> Result<DemeanedPanel> {
        if subset.is_empty() {
            return Err(Error::validation("empty unit subset"));
        }
        if subset.windows(2).any(|w| w[0] >= w[1]) || subset.iter().any(|&i| i >= self.n_units()) {
            return Err(Error::validation("unit subset must be sorted, unique and in range"));
        }
        let p = self.n_periods();
        let ddy = two_way_demean(&self.y, subset);
        let mut ddw = DMatrix::zeros(subset.len() * p, self.columns.len());
        for (j, column) in self.columns.iter().enumerate() {
            let d = two_way_demean(column, subset);
            for r in 0..subset.len() {
                for t in 0..p {
                    ddw[(r * p + t, j)] = d[(r, t)];
                }
            }
        }
        Ok(DemeanedPanel { ddy, ddw, subset: subset.to_vec(), periods: p })
    }

    /// Pooled OLS on the double-demeaned data of all units.
    pub fn fit(&self) -> Result<PretrendFit> {
        let all: Vec<usize> = (0..self.n_units()).collect();
        self.fit_units(&all)
    }

    /// Pooled OLS on the double-demeaned data of a unit subset.
    pub fn fit_units(&self, subset: &[usize]) -> Result<PretrendFit> {
        let demeaned = self.demean(subset)?;
        PretrendFit::from_demeaned(demeaned, self.labels.clone(), self.tested.clone())
    }
}

/// Result of the pooled OLS regression on double-demeaned data.
#[derive(Debug, Clone)]
pub struct PretrendFit {
    /// Tested coefficients (the placebo effects), length `T`.
    pub beta_hat: DVector<f64>,
    /// All coefficients, tested and nuisance.
    pub coef: DVector<f64>,
    /// `n x P` residuals.
    pub residuals: DMatrix<f64>,
    /// `(1/n) sum_i W_i W_i'` over all coefficients.
    pub gram: DMatrix<f64>,
    pub gram_inv: DMatrix<f64>,
    pub n: usize,
    pub periods: usize,
    pub tested: Vec<usize>,
    pub labels: Vec<String>,
    pub demeaned: DemeanedPanel,
}

impl PretrendFit {
    fn from_demeaned(demeaned: DemeanedPanel, labels: Vec<String>, tested: Vec<usize>) -> Result<Self> {
        let x = &demeaned.ddw;
        let m = demeaned.n_units();
        let p = demeaned.periods;
        let k = x.ncols();
        if m * p <= k {
            return Err(Error::Rank(format!("{m} units x {p} periods cannot identify {k} coefficients")));
        }
        let norms: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
        let max_norm = norms.iter().cloned().fold(0.0, f64::max);
        if let Some(j) = norms.iter().position(|&v| v <= 1e-20 * max_norm.max(f64::MIN_POSITIVE)) {
            return Err(Error::Rank(format!(
                "regressor {} has no variation after demeaning (no treated units in that cell?)",
                labels[j]
            )));
        }
        let mf = m as f64;
        let gram = x.tr_mul(x) / mf;
        let y = DVector::from_iterator(
            m * p,
            (0..m).flat_map(|r| (0..p).map(move |t| (r, t))).map(|(r, t)| demeaned.ddy[(r, t)]),
        );
        let xty = x.tr_mul(&y) / mf;

        // Scale-free singularity check on the correlation form of the Gram matrix.
        let scale = DVector::from_iterator(k, (0..k).map(|j| gram[(j, j)].sqrt().recip()));
        let corr = DMatrix::from_fn(k, k, |a, b| gram[(a, b)] * scale[a] * scale[b]);
        let chol = corr
            .cholesky()
            .filter(|c| c.l_dirty().diagonal().iter().all(|&d| d * d > 1e-12))
            .ok_or_else(|| Error::Rank("placebo regressors are collinear".into()))?;
        let corr_inv = chol.inverse();
        let gram_inv = DMatrix::from_fn(k, k, |a, b| corr_inv[(a, b)] * scale[a] * scale[b]);
        let coef = &gram_inv * xty;

        let fitted = x * &coef;
        let residuals = DMatrix::from_fn(m, p, |r, t| demeaned.ddy[(r, t)] - fitted[r * p + t]);
        let beta_hat = DVector::from_iterator(tested.len(), tested.iter().map(|&j| coef[j]));
        Ok(PretrendFit { beta_hat, coef, residuals, gram, gram_inv, n: m, periods: p, tested, labels, demeaned })
    }

    /// Number of tested coefficients `T`.
    pub fn dim(&self) -> usize {
        self.tested.len()
    }

    pub fn tested_labels(&self) -> Vec<String> {
        self.tested.iter().map(|&j| self.labels[j].clone()).collect()
    }

    /// Residuals at an arbitrary full coefficient vector.
    pub fn residuals_at(&self, coef: &DVector<f64>) -> DMatrix<f64> {
        let p = self.periods;
        let fitted = &self.demeaned.ddw * coef;
        DMatrix::from_fn(self.n, p, |r, t| self.demeaned.ddy[(r, t)] - fitted[r * p + t])
    }

    /// Per-unit scores `W_i' u_i` (one row per unit) for residual matrix `u`.
    pub fn unit_scores(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.coef.len();
        let mut s = DMatrix::zeros(self.n, k);
        for r in 0..self.n {
            let w = self.demeaned.unit_regressors(r);
            for t in 0..self.periods {
                let e = u[(r, t)];
                if e != 0.0 {
                    for j in 0..k {
                        s[(r, j)] += w[(t, j)] * e;
                    }
                }
            }
        }
        s
    }

    /// Tested-by-tested block of a full `k x k` matrix.
    pub(crate) fn tested_block(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.dim();
        DMatrix::from_fn(t, t, |a, b| m[(self.tested[a], self.tested[b])])
    }

    /// Rows of a full matrix that belong to the tested coefficients.
    pub(crate) fn tested_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), m.ncols(), |a, b| m[(self.tested[a], b)])
    }
}

/// Double-demean a canonical panel restricted to `periods` (0-based indices,
/// must end with the base period) over the unit `subset`.
pub fn double_demean(ds: &PanelDataset, subset: &[usize], periods: &[usize]) -> Result<DemeanedPanel> {
    if subset.is_empty() {
        return Err(Error::validation("empty unit subset"));
    }
    let base = ds.base_period();
    if let Some(&p) = periods.iter().find(|&&p| p > base) {
        return Err(Error::validation(format!("period index {p} is post-treatment (base period index {base})")));
    }
    if !periods.contains(&base) {
        return Err(Error::validation("periods must include the base period"));
    }
    let pre: Vec<usize> = periods.iter().copied().filter(|&p| p != base).collect();
    let restricted = ds.select_pre_periods(&pre)?;
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    TwfeDesign::pretrend(&restricted)?.demean(&sorted)
}

/// Pooled OLS estimate of the placebo effects on periods `1..=T+1`.
pub fn fit_pretrend(ds: &PanelDataset) -> Result<PretrendFit> {
    TwfeDesign::pretrend(ds)?.fit()
}

/// Anything that can be refitted on a subset of units.
pub trait PlaceboModel: Sync {
    fn n_units(&self) -> usize;
    fn n_coefficients(&self) -> usize;
    fn fit_units(&self, subset: &[usize]) -> Result<PretrendFit>;
}

impl PlaceboModel for TwfeDesign {
    fn n_units(&self) -> usize {
        TwfeDesign::n_units(self)
    }

    fn n_coefficients(&self) -> usize {
        TwfeDesign::n_coefficients(self)
    }

    fn fit_units(&self, subset: &[usize]) -> Result<PretrendFit> {
        TwfeDesign::fit_units(self, subset)
    }
}

/// Default grid: discrete uniform measure on {1/5, 2/5, 3/5, 4/5} plus the full sample.
pub const DEFAULT_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Squared RMS of the placebo estimates over nested subsamples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequentialPath {
    pub grid: Vec<f64>,
    pub rms_sq: Vec<f64>,
    pub rms_sq_full: f64,
    pub v_hat: f64,
    pub permutation_seed: u64,
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::validation("grid needs at least one point below 1 and the point 1"));
    }
    if grid.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::validation("grid points must lie in (0, 1]"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("grid must be strictly increasing"));
    }
    if *grid.last().expect("non-empty") != 1.0 {
        return Err(Error::validation("last grid point must be 1"));
    }
    Ok(())
}

/// `floor(n * lambda)`, guarded against representation error in `lambda`.
pub(crate) fn subsample_size(n: usize, lambda: f64) -> usize {
    ((n as f64) * lambda + 1e-9).floor() as usize
}

/// Sequential path of a canonical panel.
pub fn sequential_rms_path(ds: &PanelDataset, grid: &[f64], seed: u64) -> Result<SequentialPath> {
    sequential_rms_path_for(&TwfeDesign::pretrend(ds)?, grid, seed)
}

/// Units are shuffled once by `seed`; the subsample at `lambda` is the first
/// `floor(n lambda)` shuffled units. The point `lambda = 1` uses all units
/// in their original order, so it reproduces the full-sample fit exactly.
pub fn sequential_rms_path_for<M: PlaceboModel + ?Sized>(model: &M, grid: &[f64], seed: u64) -> Result<SequentialPath> {
    validate_grid(grid)?;
    let n = model.n_units();
    let need = model.n_coefficients() + 2;
    let smallest = subsample_size(n, grid[0]);
    if smallest < need {
        return Err(Error::validation(format!(
            "smallest subsample has {smallest} units; at least {need} are needed for identification"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut rms_sq = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let subset: Vec<usize> = if lambda == 1.0 {
            (0..n).collect()
        } else {
            let mut s = order[..subsample_size(n, lambda)].to_vec();
            s.sort_unstable();
            s
        };
        let fit = model.fit_units(&subset)?;
        rms_sq.push(fit.beta_hat.norm_squared() / fit.dim() as f64);
    }
    let full = *rms_sq.last().expect("grid non-empty");
    let k = rms_sq.len() - 1;
    let v_hat = (rms_sq[..k].iter().map(|r| (r - full).powi(2)).sum::<f64>() / k as f64).sqrt();
    Ok(SequentialPath { grid: grid.to_vec(), rms_sq, rms_sq_full: full, v_hat, permutation_seed: seed })
}
