//! Data-generating processes and rejection-frequency studies.
//!
//! `Y_it = alpha_i + lambda_t + sum_l beta_l G_i D_l(t) + pi G_i D_{T+2}(t) + u_it`
//! over periods `1..=T+2`, with `alpha_i, lambda_t ~ N(0,1)`,
//! `G_i ~ Bernoulli(1/2)` and errors that are either iid standard normal or
//! a stationary AR(3) whose innovation standard deviation is `1 + G_i`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::cluster_robust_cov;
use crate::dist::{WQuantileTable, Z_975};
use crate::equivalence::{
    iu_max_test, mean_test, rms_confidence_interval, rms_test, BootstrapConfig, BootstrapEngine, BootstrapVariant,
    SearchConfig, TestKind,
};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::panel::{fit_pretrend, sequential_rms_path, PanelDataset, TwfeDesign, DEFAULT_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaPattern {
    AllAt { value: f64 },
    FirstAt { value: f64 },
    Zero,
}

impl BetaPattern {
    pub fn values(&self, t: usize) -> Vec<f64> {
        match *self {
            BetaPattern::AllAt { value } => vec![value; t],
            BetaPattern::FirstAt { value } => (0..t).map(|l| if l == 0 { value } else { 0.0 }).collect(),
            BetaPattern::Zero => vec![0.0; t],
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            BetaPattern::AllAt { value } => format!("beta_l={value} all l"),
            BetaPattern::FirstAt { value } => format!("beta_1={value}, rest 0"),
            BetaPattern::Zero => "beta=0".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorProcess {
    IidNormal,
    Ar3 {
        phi: [f64; 3],
        /// Innovation standard deviation `1 + G_i` instead of 1.
        #[serde(default = "yes")]
        heteroskedastic: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    None,
    /// Treated units get a shock `V_i ~ N(mu, 1)` in the base period.
    Ashenfelter {
        mu: f64,
    },
    /// Treated units drift by `psi * t`.
    LinearTrend {
        psi: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub n: usize,
    pub t: usize,
    pub beta: BetaPattern,
    #[serde(default)]
    pub pi_att: f64,
    pub errors: ErrorProcess,
    pub violation: Violation,
    pub alpha: f64,
    pub delta: f64,
    pub tau: f64,
    pub zeta: f64,
    pub reps: usize,
    pub seed: u64,
    pub bootstrap_b: usize,
    pub tests: Vec<TestKind>,
    /// Closed-form minimal thresholds (IU, mean, RMS).
    pub minimal_thresholds: bool,
    /// Bootstrap minimal thresholds (a bisection over the threshold per
    /// replication; expensive).
    pub bootstrap_thresholds: bool,
    pub grid: Vec<f64>,
}

impl Default for SimulationScenario {
    fn default() -> Self {
        SimulationScenario {
            n: 1000,
            t: 4,
            beta: BetaPattern::Zero,
            pi_att: 0.0,
            errors: ErrorProcess::Ar3 { phi: [0.5, 0.3, 0.1], heteroskedastic: true },
            violation: Violation::None,
            alpha: 0.05,
            delta: 1.0,
            tau: 1.0,
            zeta: 1.0,
            reps: 2000,
            seed: 1,
            bootstrap_b: 1000,
            tests: TestKind::ALL.to_vec(),
            minimal_thresholds: true,
            bootstrap_thresholds: false,
            grid: DEFAULT_GRID.to_vec(),
        }
    }
}

const MIN_REPS: usize = 200;
const BURN_IN: usize = 200;

impl SimulationScenario {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::validation("scenario needs at least one pre-treatment placebo period"));
        }
        if self.n < 4 {
            return Err(Error::validation("scenario needs at least four units"));
        }
        if self.reps < MIN_REPS {
            return Err(Error::validation(format!("{} replications are too few; use at least {MIN_REPS}", self.reps)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::validation("scenario alpha must lie in (0, 0.5)"));
        }
        if ![self.delta, self.tau, self.zeta].iter().all(|&x| x > 0.0 && x.is_finite()) {
            return Err(Error::validation("thresholds must be positive"));
        }
        if self.tests.is_empty() {
            return Err(Error::validation("scenario runs no tests"));
        }
        if let ErrorProcess::Ar3 { phi, .. } = self.errors {
            check_stationary(phi)?;
        }
        Ok(())
    }

    /// Placebo effects implied by the pattern and the violation.
    pub fn implied_beta(&self) -> Vec<f64> {
        let t = self.t;
        let mut b = self.beta.values(t);
        for (l, v) in b.iter_mut().enumerate() {
            *v += match self.violation {
                Violation::None => 0.0,
                Violation::Ashenfelter { mu } => -mu,
                Violation::LinearTrend { psi } => psi * (l as f64 + 1.0 - t as f64 - 1.0),
            };
        }
        b
    }

    /// Treatment effect the post-period estimator converges to.
    pub fn implied_pi_att(&self) -> f64 {
        self.pi_att
            + match self.violation {
                Violation::None => 0.0,
                Violation::Ashenfelter { mu } => -mu,
                Violation::LinearTrend { psi } => psi,
            }
    }

    pub fn label(&self) -> String {
        format!("n={} T={} {}", self.n, self.t, self.describe_design())
    }

    /// Beta pattern and violation, without the dimensions.
    pub fn describe_design(&self) -> String {
        match self.violation {
            Violation::None => self.beta.describe(),
            Violation::Ashenfelter { mu } => format!("{}, pre-period shock mean {mu}", self.beta.describe()),
            Violation::LinearTrend { psi } => format!("{}, linear trend slope {psi}", self.beta.describe()),
        }
    }
}

/// Roots of `1 - phi1 z - phi2 z^2 - phi3 z^3` outside the unit circle,
/// i.e. companion-matrix eigenvalues inside it.
pub fn check_stationary(phi: [f64; 3]) -> Result<()> {
    let companion = DMatrix::from_row_slice(3, 3, &[phi[0], phi[1], phi[2], 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let radius = companion.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if radius < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "AR(3) coefficients {phi:?} are not stationary (companion spectral radius {radius:.4})"
        )))
    }
}

/// One synthetic panel with `T + 2` periods; base period `T + 1`.
pub fn generate(scn: &SimulationScenario, rep: usize) -> Result<PanelDataset> {
    scn.validate()?;
    Ok(generate_unchecked(scn, &mut stream_rng(scn.seed, rep as u64)))
}

fn generate_unchecked(scn: &SimulationScenario, rng: &mut ChaCha8Rng) -> PanelDataset {
    let (n, t) = (scn.n, scn.t);
    let periods = t + 2;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let g: Vec<bool> = loop {
        let g: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let treated = g.iter().filter(|&&x| x).count();
        if treated > 0 && treated < n {
            break g;
        }
    };
    let alpha: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let lambda: Vec<f64> = (0..periods).map(|_| normal(rng)).collect();
    let beta = scn.beta.values(t);
    let mut y = DMatrix::zeros(n, periods);
    let mut u = vec![0.0; periods];
    for i in 0..n {
        let gi = if g[i] { 1.0 } else { 0.0 };
        match scn.errors {
            ErrorProcess::IidNormal => u.iter_mut().for_each(|v| *v = normal(rng)),
            ErrorProcess::Ar3 { phi, heteroskedastic } => {
                let sd = if heteroskedastic { 1.0 + gi } else { 1.0 };
                let mut lag = [0.0f64; 3];
                for s in 0..BURN_IN + periods {
                    let v = phi[0] * lag[0] + phi[1] * lag[1] + phi[2] * lag[2] + sd * normal(rng);
                    lag = [v, lag[0], lag[1]];
                    if s >= BURN_IN {
                        u[s - BURN_IN] = v;
                    }
                }
            }
        }
        match scn.violation {
            Violation::None => {}
            Violation::Ashenfelter { mu } => {
                let v = mu + normal(rng);
                u[t] += gi * v;
            }
            Violation::LinearTrend { psi } => {
                for (s, val) in u.iter_mut().enumerate() {
                    *val += psi * (s + 1) as f64 * gi;
                }
            }
        }
        for s in 0..periods {
            let mut v = alpha[i] + lambda[s] + u[s];
            if g[i] {
                if s < t {
                    v += beta[s];
                } else if s == t + 1 {
                    v += scn.pi_att;
                }
            }
            y[(i, s)] = v;
        }
    }
    PanelDataset::canonical(y, g, t).expect("generated panel is valid")
}

/// Outcome of one replication.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    /// Decisions in `TestKind::ALL` order; `None` for tests not run.
    pub reject: [Option<bool>; 5],
    pub minimal: [Option<f64>; 5],
    pub beta_hat: Vec<f64>,
    pub pi_hat: f64,
    pub pi_ci_covers: bool,
    pub all_insignificant: bool,
    pub rms_ci_covers: Option<bool>,
}

fn slot(kind: TestKind) -> usize {
    TestKind::ALL.iter().position(|&k| k == kind).expect("kind listed")
}

/// Run every configured procedure on replication `rep`.
pub fn run_replication(scn: &SimulationScenario, rep: usize, wtable: Option<&WQuantileTable>) -> Result<RepOutcome> {
    let ds = generate_unchecked(scn, &mut stream_rng(scn.seed, rep as u64));
    let mut out = RepOutcome::default();

    // Treatment effect from the group-by-period saturated model.
    let sat = TwfeDesign::saturated(&ds)?.fit()?;
    let sat_cov = cluster_robust_cov(&sat)?;
    out.pi_hat = sat.beta_hat[0];
    let pi_se = sat_cov.standard_errors(sat.n)[0];
    out.pi_ci_covers = (out.pi_hat - scn.pi_att).abs() <= Z_975 * pi_se;

    let pre = ds.pretreatment()?;
    let fit = fit_pretrend(&pre)?;
    let cov = cluster_robust_cov(&fit)?;
    let se = cov.standard_errors(fit.n);
    out.beta_hat = fit.beta_hat.iter().copied().collect();
    out.all_insignificant = (0..fit.dim()).all(|l| fit.beta_hat[l].abs() < Z_975 * se[l]);

    let search = SearchConfig::default();
    for &kind in &scn.tests {
        let k = slot(kind);
        match kind {
            TestKind::IuMax => {
                let r = iu_max_test(&fit, &cov, scn.delta, scn.alpha)?;
                out.reject[k] = Some(r.reject);
                out.minimal[k] = r.minimal_threshold.filter(|_| scn.minimal_thresholds);
            }
            TestKind::Mean => {
                let r = mean_test(&fit, &cov, scn.tau, scn.alpha)?;
                out.reject[k] = Some(r.reject);
                out.minimal[k] = r.minimal_threshold.filter(|_| scn.minimal_thresholds);
            }
            TestKind::Rms => {
                let table = wtable.ok_or_else(|| Error::validation("the RMS test needs a W quantile table"))?;
                let path = sequential_rms_path(&pre, &scn.grid, derive_seed(scn.seed ^ 0x5EC0, rep as u64))?;
                let r = rms_test(&path, scn.zeta, scn.alpha, table)?;
                out.reject[k] = Some(r.reject);
                out.minimal[k] = r.minimal_threshold.filter(|_| scn.minimal_thresholds);
                let ci = rms_confidence_interval(&path, scn.alpha, table)?;
                let implied = scn.implied_beta();
                let truth = implied.iter().map(|b| b * b).sum::<f64>() / implied.len() as f64;
                out.rms_ci_covers = Some(ci.contains(truth));
            }
            TestKind::BootMax | TestKind::ClusterBootMax => {
                let variant =
                    if kind == TestKind::BootMax { BootstrapVariant::Gaussian } else { BootstrapVariant::WildCluster };
                let cfg = BootstrapConfig {
                    b: scn.bootstrap_b,
                    variant,
                    seed: derive_seed(scn.seed ^ (0xB007 + k as u64), rep as u64),
                    exec: Execution::Sequential,
                    common_random_numbers: true,
                };
                let engine = BootstrapEngine::new(&fit, cfg)?;
                out.reject[k] = Some(engine.test(scn.delta, scn.alpha)?.reject);
                if scn.bootstrap_thresholds {
                    out.minimal[k] = Some(engine.minimal_threshold(scn.alpha, &search)?);
                }
            }
        }
    }
    Ok(out)
}

/// A proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub se: f64,
}

impl Rate {
    fn from_count(hits: usize, total: usize) -> Rate {
        let p = hits as f64 / total as f64;
        Rate { value: p, se: (p * (1.0 - p) / total as f64).sqrt() }
    }
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
}

impl MeanEstimate {
    fn from_values(v: &[f64]) -> MeanEstimate {
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        MeanEstimate { mean, se: (var / m).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub kind: TestKind,
    pub rejection_rate: Rate,
    pub mean_minimal_threshold: Option<MeanEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: SimulationScenario,
    pub tests: Vec<TestSummary>,
    pub beta_hat_mean: Vec<MeanEstimate>,
    pub pi_hat: MeanEstimate,
    pub pi_ci_coverage: Rate,
    pub all_insignificant: Rate,
    pub rms_ci_coverage: Option<Rate>,
    pub wtable_hash: Option<String>,
}

impl StudyReport {
    pub fn test(&self, kind: TestKind) -> Option<&TestSummary> {
        self.tests.iter().find(|s| s.kind == kind)
    }

    pub fn rate(&self, kind: TestKind) -> Option<Rate> {
        self.test(kind).map(|s| s.rejection_rate)
    }
}

/// Run all replications and aggregate. Replication `r` draws from stream
/// `r` of the scenario seed and aggregation walks the outcomes in
/// replication order, so the report is identical for any thread count.
pub fn run_study(scn: &SimulationScenario, wtable: Option<&WQuantileTable>, exec: Execution) -> Result<StudyReport> {
    scn.validate()?;
    if scn.tests.contains(&TestKind::Rms) {
        let table = wtable.ok_or_else(|| Error::validation("the RMS test needs a W quantile table"))?;
        table.check_grid(&scn.grid)?;
    }
    let outcomes: Vec<RepOutcome> =
        exec.map(scn.reps, |r| run_replication(scn, r, wtable)).into_iter().collect::<Result<_>>()?;
    Ok(aggregate(scn, &outcomes, wtable))
}

pub fn aggregate(scn: &SimulationScenario, outcomes: &[RepOutcome], wtable: Option<&WQuantileTable>) -> StudyReport {
    let m = outcomes.len();
    let tests = scn
        .tests
        .iter()
        .map(|&kind| {
            let k = slot(kind);
            let hits = outcomes.iter().filter(|o| o.reject[k] == Some(true)).count();
            let minimal: Vec<f64> = outcomes.iter().filter_map(|o| o.minimal[k]).collect();
            TestSummary {
                kind,
                rejection_rate: Rate::from_count(hits, m),
                mean_minimal_threshold: (!minimal.is_empty()).then(|| MeanEstimate::from_values(&minimal)),
            }
        })
        .collect();
    let beta_hat_mean = (0..scn.t)
        .map(|l| MeanEstimate::from_values(&outcomes.iter().map(|o| o.beta_hat[l]).collect::<Vec<_>>()))
        .collect();
    let pis: Vec<f64> = outcomes.iter().map(|o| o.pi_hat).collect();
    let rms_cov: Vec<bool> = outcomes.iter().filter_map(|o| o.rms_ci_covers).collect();
    StudyReport {
        scenario: scn.clone(),
        tests,
        beta_hat_mean,
        pi_hat: MeanEstimate::from_values(&pis),
        pi_ci_coverage: Rate::from_count(outcomes.iter().filter(|o| o.pi_ci_covers).count(), m),
        all_insignificant: Rate::from_count(outcomes.iter().filter(|o| o.all_insignificant).count(), m),
        rms_ci_coverage: (!rms_cov.is_empty())
            .then(|| Rate::from_count(rms_cov.iter().filter(|&&c| c).count(), rms_cov.len())),
        wtable_hash: wtable.filter(|_| scn.tests.contains(&TestKind::Rms)).map(|t| t.hash()),
    }
}

/// Scenario file: shared settings plus lists of `n`, `T` and beta patterns
/// whose cartesian product is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub n: Vec<usize>,
    pub t: Vec<usize>,
    pub beta: Vec<BetaPattern>,
    #[serde(default)]
    pub pi_att: f64,
    pub errors: ErrorProcess,
    /// One violation or a list of them.
    #[serde(default = "no_violation", deserialize_with = "one_or_many")]
    pub violation: Vec<Violation>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one")]
    pub zeta: f64,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_b")]
    pub bootstrap_b: usize,
    #[serde(default = "all_tests")]
    pub tests: Vec<TestKind>,
    #[serde(default = "yes")]
    pub minimal_thresholds: bool,
    #[serde(default)]
    pub bootstrap_thresholds: bool,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
}

fn no_violation() -> Vec<Violation> {
    vec![Violation::None]
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<Violation>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Violation),
        Many(Vec<Violation>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}
fn default_alpha() -> f64 {
    0.05
}
fn one() -> f64 {
    1.0
}
fn default_b() -> usize {
    1000
}
fn all_tests() -> Vec<TestKind> {
    TestKind::ALL.to_vec()
}
fn default_grid() -> Vec<f64> {
    DEFAULT_GRID.to_vec()
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("scenario file: {e}")))
    }

    /// Cartesian product in the order violation, beta pattern, n, T (T
    /// varies fastest).
    pub fn expand(&self) -> Result<Vec<SimulationScenario>> {
        let mut out = Vec::new();
        for (violation, beta) in self.violation.iter().flat_map(|v| self.beta.iter().map(move |b| (v, b))) {
            for &n in &self.n {
                for &t in &self.t {
                    let scn = SimulationScenario {
                        n,
                        t,
                        beta: *beta,
                        pi_att: self.pi_att,
                        errors: self.errors,
                        violation: *violation,
                        alpha: self.alpha,
                        delta: self.delta,
                        tau: self.tau,
                        zeta: self.zeta,
                        reps: self.reps,
                        seed: self.seed,
                        bootstrap_b: self.bootstrap_b,
                        tests: self.tests.clone(),
                        minimal_thresholds: self.minimal_thresholds,
                        bootstrap_thresholds: self.bootstrap_thresholds,
                        grid: self.grid.clone(),
                    };
                    scn.validate()?;
                    out.push(scn);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::validation("scenario file expands to no scenarios"));
        }
        Ok(out)
    }
}

/// Aligned text table: one column per scenario, rows for rejection rates,
/// mean minimal thresholds and the treatment-effect diagnostics.
pub fn render_table(title: &str, reports: &[StudyReport]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let header: Vec<String> = reports.iter().map(|r| format!("n={} T={}", r.scenario.n, r.scenario.t)).collect();
    let kinds: Vec<TestKind> =
        TestKind::ALL.iter().copied().filter(|k| reports.iter().any(|r| r.test(*k).is_some())).collect();
    for &k in &kinds {
        rows.push((
            format!("reject {}", k.name()),
            reports.iter().map(|r| r.rate(k).map_or("-".into(), |x| format!("{:.4} ({:.4})", x.value, x.se))).collect(),
        ));
    }
    for &k in &kinds {
        if reports.iter().any(|r| r.test(k).and_then(|s| s.mean_minimal_threshold).is_some()) {
            rows.push((
                format!("{}* {}", k.threshold_symbol(), k.name()),
                reports
                    .iter()
                    .map(|r| {
                        r.test(k)
                            .and_then(|s| s.mean_minimal_threshold)
                            .map_or("-".into(), |m| format!("{:.4}", m.mean))
                    })
                    .collect(),
            ));
        }
    }
    rows.push(("pi_hat".into(), reports.iter().map(|r| format!("{:.4}", r.pi_hat.mean)).collect()));
    rows.push(("CI coverage".into(), reports.iter().map(|r| format!("{:.4}", r.pi_ci_coverage.value)).collect()));
    rows.push(("#insig/M".into(), reports.iter().map(|r| format!("{:.4}", r.all_insignificant.value)).collect()));
    if reports.iter().any(|r| r.rms_ci_coverage.is_some()) {
        rows.push((
            "RMS CI coverage".into(),
            reports.iter().map(|r| r.rms_ci_coverage.map_or("-".into(), |c| format!("{:.4}", c.value))).collect(),
        ));
    }
    let first = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(4);
    let widths: Vec<usize> = (0..reports.len())
        .map(|j| rows.iter().map(|r| r.1[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let mut out = format!("{title}\n");
    let mut line = format!("{:<first$}", "");
    for (h, w) in header.iter().zip(&widths) {
        line.push_str(&format!("  {h:>w$}"));
    }
    out.push_str(line.trim_end());
    out.push('\n');
    for (name, cells) in &rows {
        let mut line = format!("{name:<first$}");
        for (c, w) in cells.iter().zip(&widths) {
            line.push_str(&format!("  {c:>w$}"));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(reps: usize) -> SimulationScenario {
        SimulationScenario {
            n: 60,
            t: 2,
            reps,
            bootstrap_b: 500,
            tests: vec![TestKind::IuMax, TestKind::Mean, TestKind::ClusterBootMax],
            ..SimulationScenario::default()
        }
    }

    #[test]
    fn stationarity_check() {
        assert!(check_stationary([0.5, 0.3, 0.1]).is_ok());
        assert!(check_stationary([0.6, 0.3, 0.2]).is_err());
        assert!(check_stationary([1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn generated_panel_shape() {
        let scn = small(200);
        let ds = generate(&scn, 3).unwrap();
        assert_eq!(ds.n_units(), 60);
        assert_eq!(ds.n_periods(), 4);
        assert_eq!(ds.base_period(), 2);
        let again = generate(&scn, 3).unwrap();
        assert_eq!(ds.outcomes(), again.outcomes());
    }

    #[test]
    fn implied_effects() {
        let mut scn = small(200);
        scn.t = 3;
        scn.violation = Violation::LinearTrend { psi: 0.1 };
        let b = scn.implied_beta();
        assert!((b[0] + 0.3).abs() < 1e-12 && (b[2] + 0.1).abs() < 1e-12);
        assert_eq!(scn.implied_pi_att(), 0.1);
        scn.violation = Violation::Ashenfelter { mu: 0.5 };
        assert_eq!(scn.implied_beta(), vec![-0.5; 3]);
    }

    #[test]
    fn study_is_thread_independent() {
        let scn = small(200);
        let a = run_study(&scn, None, Execution::Sequential).unwrap();
        let b = run_study(&scn, None, Execution::Parallel).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(render_table("t", &[a]).contains("reject mean"));
    }

    #[test]
    fn scenario_file_round_trip() {
        let text = r#"
            name = "demo"
            n = [100, 1000]
            t = [1, 4]
            beta = [{ kind = "all_at", value = 1.0 }]
            errors = { kind = "ar3", phi = [0.5, 0.3, 0.1] }
            reps = 2000
            seed = 7
        "#;
        let f = ScenarioFile::parse(text).unwrap();
        let s = f.expand().unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!((s[1].n, s[1].t), (100, 4));
        assert_eq!(s[0].errors, ErrorProcess::Ar3 { phi: [0.5, 0.3, 0.1], heteroskedastic: true });
        assert!(ScenarioFile::parse("n = [1]\nbogus = 2").is_err());
        let many = text.replace(
            "seed = 7",
            "seed = 7\nviolation = [{ kind = \"ashenfelter\", mu = 0.25 }, { kind = \"ashenfelter\", mu = 0.5 }]",
        );
        let s = ScenarioFile::parse(&many).unwrap().expand().unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s[7].violation, Violation::Ashenfelter { mu: 0.5 });
    }

    #[test]
    fn rms_without_table_is_refused() {
        let mut scn = small(200);
        scn.tests = vec![TestKind::Rms];
        assert!(run_study(&scn, None, Execution::Sequential).is_err());
    }
}
