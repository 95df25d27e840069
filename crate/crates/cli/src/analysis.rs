use std::fmt::Write as _;
use std::fs::File;

use eqtrends::covariance::{cluster_robust_cov, CovEstimate};
use eqtrends::dist::WQuantileTable;
use eqtrends::equivalence::{
    iu_max_test, mean_test, rms_test, BootstrapConfig, BootstrapEngine, BootstrapVariant, CriticalValue, SearchConfig,
    TestKind, TestResult,
};
use eqtrends::exec::derive_seed;
use eqtrends::panel::{
    load_panel, sequential_rms_path_for, AssignmentColumn, PanelDataset, PanelSchema, PretrendFit, TwfeDesign,
};
use eqtrends::staggered::{build_staggered_design, StaggeredOptions};
use eqtrends::{Error, Execution};
use serde::Serialize;

use crate::common::{
    cache_dir, invalid, parse_grid, resolve_seed, sha256_file, to_json, write_json, Provenance, WTableInfo,
};
use crate::{AnalysisArgs, Format};

const PERMUTATION_TAG: u64 = 0x5EC0;
const BOOTSTRAP_TAG: u64 = 0xB007;

#[derive(Debug, Serialize)]
struct Estimate {
    label: String,
    value: f64,
    se: f64,
}

#[derive(Debug, Serialize)]
struct DesignSummary {
    kind: &'static str,
    n_units: usize,
    periods: Vec<i64>,
    base_period: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    control_set: Option<Vec<String>>,
    covariates: Vec<String>,
    /// Standard errors ignore the estimation of cohort covariate means.
    covariance_unadjusted: bool,
}

#[derive(Debug, Serialize)]
struct EffectSummary {
    estimates: Vec<Estimate>,
    mean: f64,
}

#[derive(Debug, Serialize)]
struct MinimalThreshold {
    kind: TestKind,
    symbol: &'static str,
    value: f64,
}

#[derive(Debug, Serialize)]
struct AnalysisReport {
    command: &'static str,
    provenance: Provenance,
    design: DesignSummary,
    placebo_estimates: Vec<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    treatment_effect: Option<EffectSummary>,
    alpha: f64,
    tests: Vec<TestResult>,
    minimal_thresholds: Vec<MinimalThreshold>,
}

/// Parse `unit=..,time=..,outcome=..,group=..|cohort=..,covariates=a+b`.
pub fn parse_schema(spec: Option<&str>) -> Result<PanelSchema, Error> {
    let mut schema = PanelSchema::default();
    let Some(spec) = spec else { return Ok(schema) };
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) =
            part.split_once('=').ok_or_else(|| invalid(format!("schema entry '{part}' is not key=column")))?;
        let value = value.trim().to_string();
        match key.trim() {
            "unit" => schema.unit = value,
            "time" => schema.time = value,
            "outcome" => schema.outcome = value,
            "group" => schema.assignment = AssignmentColumn::Group(value),
            "cohort" => schema.assignment = AssignmentColumn::Cohort(value),
            "covariates" => schema.covariates = Some(value.split('+').map(|s| s.trim().to_string()).collect()),
            other => return Err(invalid(format!("unknown schema key '{other}'"))),
        }
    }
    Ok(schema)
}

const MONTHS: [&str; 12] = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];

/// A time label given as an integer or an English month name.
pub fn parse_time_label(s: &str) -> Result<i64, Error> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    let lower = s.to_ascii_lowercase();
    MONTHS
        .iter()
        .position(|m| lower.len() >= 3 && lower.starts_with(m))
        .map(|i| i as i64 + 1)
        .ok_or_else(|| invalid(format!("'{s}' is neither an integer time label nor a month name")))
}

/// Comma-separated labels and `a-b` ranges (inclusive).
pub fn parse_periods(s: &str) -> Result<Vec<i64>, Error> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-').filter(|(a, _)| !a.is_empty()) {
            Some((a, b)) => {
                let (a, b) = (parse_time_label(a)?, parse_time_label(b)?);
                if a > b {
                    return Err(invalid(format!("empty period range '{part}'")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_time_label(part)?),
        }
    }
    if out.is_empty() {
        return Err(invalid("no periods given"));
    }
    Ok(out)
}

fn parse_tests(spec: &str, variant: &str) -> Result<Vec<TestKind>, Error> {
    let mut kinds: Vec<TestKind> = if spec.trim().eq_ignore_ascii_case("all") {
        TestKind::ALL.to_vec()
    } else {
        spec.split(',').map(str::parse).collect::<Result<_, _>>()?
    };
    kinds.sort_by_key(|k| TestKind::ALL.iter().position(|x| x == k));
    kinds.dedup();
    match variant.trim().to_ascii_lowercase().as_str() {
        "both" => {}
        v => {
            let keep: BootstrapVariant = v.parse()?;
            kinds.retain(|k| match k {
                TestKind::BootMax => keep == BootstrapVariant::Gaussian,
                TestKind::ClusterBootMax => keep == BootstrapVariant::WildCluster,
                _ => true,
            });
        }
    }
    if kinds.is_empty() {
        return Err(invalid("no tests selected"));
    }
    Ok(kinds)
}

/// The fitted placebo model the tests run on.
struct Placebo {
    fit: PretrendFit,
    cov: CovEstimate,
    design: TwfeDesign,
    summary: DesignSummary,
    effect: Option<EffectSummary>,
}

fn estimates(labels: Vec<String>, values: &[f64], se: &[f64]) -> Vec<Estimate> {
    labels.into_iter().zip(values.iter().zip(se)).map(|(label, (&value, &se))| Estimate { label, value, se }).collect()
}

fn canonical_placebo(ds: &PanelDataset, periods: Option<&str>) -> Result<Placebo, Error> {
    let pre = match periods {
        Some(p) => {
            let idx = parse_periods(p)?
                .into_iter()
                .map(|l| ds.period_of_label(l).ok_or_else(|| invalid(format!("time label {l} not in the data"))))
                .collect::<Result<Vec<_>, _>>()?;
            ds.select_pre_periods(&idx)?
        }
        None => ds.pretreatment()?,
    };
    let design = TwfeDesign::pretrend(&pre)?;
    let fit = design.fit()?;
    let cov = cluster_robust_cov(&fit)?;
    let effect = if ds.base_period() + 1 < ds.n_periods() {
        let sat = TwfeDesign::saturated(ds)?.fit()?;
        let sat_cov = cluster_robust_cov(&sat)?;
        let se = sat_cov.standard_errors(sat.n);
        let values: Vec<f64> = sat.beta_hat.iter().copied().collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Some(EffectSummary { estimates: estimates(sat.tested_labels(), &values, se.as_slice()), mean })
    } else {
        None
    };
    let summary = DesignSummary {
        kind: "canonical",
        n_units: pre.n_units(),
        periods: pre.time_labels().to_vec(),
        base_period: pre.time_labels()[pre.base_period()],
        control_set: None,
        covariates: Vec::new(),
        covariance_unadjusted: false,
    };
    Ok(Placebo { fit, cov, design, summary, effect })
}

fn staggered_placebo(ds: &PanelDataset, args: &AnalysisArgs) -> Result<Placebo, Error> {
    if args.periods.is_some() {
        return Err(invalid("--periods applies to two-group input; use --pool for staggered input"));
    }
    let mut pooled = Vec::new();
    for cell in &args.pool {
        let (m, k) =
            cell.split_once(':').ok_or_else(|| invalid(format!("pooled cell '{cell}' is not cohort:period")))?;
        let idx = |s: &str| -> Result<usize, Error> {
            let l = parse_time_label(s)?;
            ds.period_of_label(l).ok_or_else(|| invalid(format!("time label {l} not in the data")))
        };
        pooled.push((idx(m)?, idx(k)?));
    }
    let opts = StaggeredOptions { pooled, full_window: args.full_window };
    let sd = build_staggered_design(ds, &opts)?;
    let fit = sd.fit()?;
    let cov = sd.covariance(&fit)?;
    let summary = DesignSummary {
        kind: "staggered",
        n_units: ds.n_units(),
        periods: ds.time_labels()[..sd.window()].to_vec(),
        base_period: ds.time_labels()[ds.base_period()],
        control_set: Some(sd.control_set()),
        covariates: ds.covariate_names().to_vec(),
        covariance_unadjusted: cov.unadjusted,
    };
    Ok(Placebo { fit, cov, design: sd.design().clone(), summary, effect: None })
}

pub fn run(args: &AnalysisArgs, thresholds_only: bool) -> Result<(), Error> {
    let kinds = parse_tests(&args.tests, &args.bootstrap_variant)?;
    if !(args.alpha > 0.0 && args.alpha < 0.5) {
        return Err(invalid(format!("--alpha must lie in (0, 0.5), got {}", args.alpha)));
    }
    let threshold_of = |k: TestKind| match k.threshold_symbol() {
        "delta" => args.delta,
        "tau" => args.tau,
        _ => args.zeta,
    };
    if !thresholds_only {
        if let Some(k) = kinds.iter().find(|k| threshold_of(**k).is_none()) {
            return Err(invalid(format!("test {} needs --{}", k.name(), k.threshold_symbol())));
        }
    }
    let grid = parse_grid(&args.grid)?;
    let (seed, seed_generated) = resolve_seed(args.seed);

    let mut schema = parse_schema(args.schema.as_deref())?;
    if let Some(b) = &args.base_period {
        schema.base_period = Some(parse_time_label(b)?);
    }
    let ds = load_panel(File::open(&args.input)?, &schema)?;
    let placebo = match schema.assignment {
        AssignmentColumn::Group(_) => canonical_placebo(&ds, args.periods.as_deref())?,
        AssignmentColumn::Cohort(_) => staggered_placebo(&ds, args)?,
    };

    let mut prov = Provenance::new(seed, seed_generated);
    prov.input = Some(args.input.display().to_string());
    prov.input_sha256 = Some(sha256_file(&args.input)?);
    if kinds.iter().any(|k| matches!(k, TestKind::BootMax | TestKind::ClusterBootMax)) {
        prov.bootstrap_b = Some(args.bootstrap_b);
    }
    let wtable = if kinds.contains(&TestKind::Rms) {
        prov.grid = Some(grid.clone());
        let (t, path) =
            WQuantileTable::load_or_simulate(&cache_dir(), &grid, args.w_reps, args.w_seed, Execution::Parallel)?;
        prov.wtable =
            Some(WTableInfo { hash: t.hash(), reps: t.reps, seed: t.seed, cache_file: path.display().to_string() });
        Some(t)
    } else {
        None
    };

    let fit = &placebo.fit;
    let search = SearchConfig::default();
    let mut tests = Vec::new();
    let mut minimal = Vec::new();
    for &kind in &kinds {
        // Closed-form tests need some threshold to run; the minimal
        // threshold does not depend on it.
        let thr = threshold_of(kind).unwrap_or(1.0);
        let (result, min) = match kind {
            TestKind::IuMax => {
                let r = iu_max_test(fit, &placebo.cov, thr, args.alpha)?;
                let m = r.minimal_threshold;
                (r, m)
            }
            TestKind::Mean => {
                let r = mean_test(fit, &placebo.cov, thr, args.alpha)?;
                let m = r.minimal_threshold;
                (r, m)
            }
            TestKind::Rms => {
                let path = sequential_rms_path_for(&placebo.design, &grid, derive_seed(seed, PERMUTATION_TAG))?;
                let r = rms_test(&path, thr, args.alpha, wtable.as_ref().expect("table loaded for rms"))?;
                let m = r.minimal_threshold;
                (r, m)
            }
            TestKind::BootMax | TestKind::ClusterBootMax => {
                let variant =
                    if kind == TestKind::BootMax { BootstrapVariant::Gaussian } else { BootstrapVariant::WildCluster };
                let cfg = BootstrapConfig {
                    b: args.bootstrap_b,
                    variant,
                    seed: derive_seed(seed, BOOTSTRAP_TAG + variant as u64),
                    exec: Execution::Parallel,
                    common_random_numbers: true,
                };
                let engine = BootstrapEngine::new(fit, cfg)?;
                let r = engine.test(thr, args.alpha)?;
                let m = if thresholds_only { Some(engine.minimal_threshold(args.alpha, &search)?) } else { None };
                (r, m)
            }
        };
        if let Some(value) = min {
            minimal.push(MinimalThreshold { kind, symbol: kind.threshold_symbol(), value });
        }
        if !thresholds_only {
            tests.push(result);
        }
    }

    let se = placebo.cov.standard_errors(fit.n);
    let report = AnalysisReport {
        command: if thresholds_only { "thresholds" } else { "test" },
        provenance: prov,
        design: placebo.summary,
        placebo_estimates: estimates(
            fit.tested_labels(),
            &fit.beta_hat.iter().copied().collect::<Vec<_>>(),
            se.as_slice(),
        ),
        treatment_effect: placebo.effect,
        alpha: args.alpha,
        tests,
        minimal_thresholds: minimal,
    };
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    match args.format {
        Format::Json => println!("{}", to_json(&report)?),
        Format::Text => print!("{}", render(&report)),
    }
    Ok(())
}

fn render(r: &AnalysisReport) -> String {
    let mut s = String::new();
    let d = &r.design;
    let _ =
        writeln!(s, "{} design: {} units, periods {:?}, base period {}", d.kind, d.n_units, d.periods, d.base_period);
    if let Some(c) = &d.control_set {
        let _ = writeln!(s, "controls: {}", c.join("; "));
    }
    if !d.covariates.is_empty() {
        let _ = writeln!(s, "covariates: {}", d.covariates.join(", "));
    }
    if d.covariance_unadjusted {
        let _ = writeln!(s, "note: standard errors do not account for estimated cohort covariate means");
    }
    let width = r.placebo_estimates.iter().map(|e| e.label.len()).max().unwrap_or(0);
    let _ = writeln!(s, "\nplacebo estimates");
    for e in &r.placebo_estimates {
        let _ = writeln!(s, "  {:<width$}  {:>10.4}  (se {:.4})", e.label, e.value, e.se);
    }
    if let Some(eff) = &r.treatment_effect {
        let _ = writeln!(s, "\ntreatment effect estimates");
        for e in &eff.estimates {
            let _ = writeln!(s, "  {:<width$}  {:>10.4}  (se {:.4})", e.label, e.value, e.se);
        }
    }
    if !r.tests.is_empty() {
        let _ = writeln!(s, "\ntests at alpha = {}", r.alpha);
        for t in &r.tests {
            let crit = match &t.critical_value {
                CriticalValue::Scalar(c) => format!("{c:.4}"),
                CriticalValue::PerCoordinate(c) => {
                    format!("[{}]", c.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", "))
                }
            };
            let thr = format!("{}={}", t.kind.threshold_symbol(), t.threshold);
            let _ = writeln!(
                s,
                "  {:<17} {thr:<12} stat {:.4}  crit {}  {}",
                t.kind.name(),
                t.statistic,
                crit,
                if t.reject { "equivalence concluded" } else { "not rejected" }
            );
        }
    }
    if !r.minimal_thresholds.is_empty() {
        let _ = writeln!(s, "\nminimal thresholds");
        for m in &r.minimal_thresholds {
            let _ = write!(s, "  {:<17} {}* = {:.4}", m.kind.name(), m.symbol, m.value);
            if let Some(eff) = &r.treatment_effect {
                let size = eff.mean.abs();
                if size > 0.0 {
                    let _ = write!(s, "   ({:.2} x |mean treatment effect| {:.4})", m.value / size, size);
                }
            }
            s.push('\n');
        }
    }
    let p = &r.provenance;
    let _ = writeln!(s, "\nseed {}{}  {}", p.seed, if p.seed_generated { " (generated)" } else { "" }, p.software);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periods_and_months() {
        assert_eq!(parse_periods("june").unwrap(), vec![6]);
        assert_eq!(parse_periods("may,june").unwrap(), vec![5, 6]);
        assert_eq!(parse_periods("april-june").unwrap(), vec![4, 5, 6]);
        assert_eq!(parse_periods("-3").unwrap(), vec![-3]);
        assert!(parse_periods("juice").is_err());
    }

    #[test]
    fn schema_keys() {
        let s = parse_schema(Some("unit=id, time=t, outcome=y, cohort=first, covariates=a+b")).unwrap();
        assert_eq!(s.unit, "id");
        assert_eq!(s.assignment, AssignmentColumn::Cohort("first".into()));
        assert_eq!(s.covariates, Some(vec!["a".to_string(), "b".to_string()]));
        assert!(parse_schema(Some("colour=red")).is_err());
    }

    #[test]
    fn test_selection() {
        assert_eq!(parse_tests("rms,iu,iu", "both").unwrap(), vec![TestKind::IuMax, TestKind::Rms]);
        assert_eq!(parse_tests("all", "wild").unwrap().len(), 4);
        assert!(parse_tests("boot", "wild").is_err());
    }
}
