use std::path::PathBuf;

use eqtrends::dist::{default_levels, simulate_w_quantile, WQuantileTable};
use eqtrends::equivalence::TestKind;
use eqtrends::simulate::{render_table, run_study, ScenarioFile, StudyReport};
use eqtrends::{Error, Execution};
use serde::Serialize;

use crate::common::{cache_dir, parse_grid, to_json, write_json, Provenance, WTableInfo};
use crate::{Format, SimulateArgs, WquantilesArgs};

#[derive(Serialize)]
struct SimulationOutput {
    provenance: Provenance,
    name: String,
    reports: Vec<StudyReport>,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let mut file = ScenarioFile::parse(&text)?;
    if let Some(s) = args.seed {
        file.seed = s;
    }
    if let Some(r) = args.reps {
        file.reps = r;
    }
    let scenarios = file.expand()?;
    let mut prov = Provenance::new(file.seed, false);
    prov.input = Some(args.scenario.display().to_string());
    prov.input_sha256 = Some(crate::common::sha256_file(&args.scenario)?);
    prov.bootstrap_b = Some(file.bootstrap_b);
    prov.grid = Some(file.grid.clone());

    let wtable = if file.tests.contains(&TestKind::Rms) {
        let (t, path) =
            WQuantileTable::load_or_simulate(&cache_dir(), &file.grid, args.w_reps, args.w_seed, Execution::Parallel)?;
        prov.wtable =
            Some(WTableInfo { hash: t.hash(), reps: t.reps, seed: t.seed, cache_file: path.display().to_string() });
        Some(t)
    } else {
        None
    };
    let reports =
        scenarios.iter().map(|s| run_study(s, wtable.as_ref(), Execution::Parallel)).collect::<Result<Vec<_>, _>>()?;
    let title = if file.name.is_empty() { "simulation".to_string() } else { file.name.clone() };
    let table = render_groups(&title, &reports);
    let output = SimulationOutput { provenance: prov, name: file.name.clone(), reports };
    if let Some(out) = &args.out {
        write_json(out, &output)?;
    }
    match args.format {
        Format::Json => println!("{}", to_json(&output)?),
        Format::Text => {
            print!("{table}");
            println!("seed {}  reps {}", file.seed, file.reps);
        }
    }
    Ok(())
}

/// One table per beta pattern and violation, columns over (n, T).
fn render_groups(title: &str, reports: &[StudyReport]) -> String {
    let mut out = String::new();
    let mut start = 0;
    while start < reports.len() {
        let head = &reports[start].scenario;
        let end = start
            + reports[start..]
                .iter()
                .take_while(|r| r.scenario.beta == head.beta && r.scenario.violation == head.violation)
                .count();
        out.push_str(&render_table(&format!("{title}: {}", head.describe_design()), &reports[start..end]));
        out.push('\n');
        start = end;
    }
    out
}

#[derive(Serialize)]
struct WOutput<'a> {
    provenance: Provenance,
    file: String,
    hash: String,
    q05: f64,
    table: &'a WQuantileTable,
}

pub fn wquantiles(args: &WquantilesArgs) -> Result<(), Error> {
    let grid = parse_grid(&args.grid)?;
    let table = simulate_w_quantile(&grid, &default_levels(), args.reps, args.seed, Execution::Parallel)?;
    let path: PathBuf = match &args.out {
        Some(p) => p.clone(),
        None => cache_dir().join(WQuantileTable::cache_file_name(&grid, args.reps, args.seed)),
    };
    table.save(&path)?;
    let q05 = table.quantile(0.05)?;
    let hash = table.hash();
    match args.format {
        Format::Text => {
            println!("Q(0.05) = {q05:.4}");
            println!("Q(0.025) = {:.4}  Q(0.975) = {:.4}", table.quantile(0.025)?, table.quantile(0.975)?);
            println!("reps {}  seed {}  grid {:?}", table.reps, table.seed, table.grid);
            println!("hash {hash}");
            println!("written to {}", path.display());
        }
        Format::Json => {
            let mut prov = Provenance::new(args.seed, false);
            prov.grid = Some(grid);
            let out = WOutput { provenance: prov, file: path.display().to_string(), hash, q05, table: &table };
            println!("{}", to_json(&out)?);
        }
    }
    Ok(())
}
