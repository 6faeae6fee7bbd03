use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use crt_hte_core::power::{omega4, DropoutBracket, DropoutDesign, DropoutSpec};
use crt_hte_core::rng::derive_seed;
use crt_hte_core::sim::tolerance::check_record;
use crt_hte_core::sim::{
    operating_characteristics, reproduce_table, Scenario, SimulationSettings, TableRecord,
    DEFAULT_RHOS,
};
use crt_hte_core::ModelParams;
use serde::{Deserialize, Serialize};

use crate::Run;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Design JSON for `--custom`.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Validation table to reproduce.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), conflicts_with = "custom")]
    pub table: Option<u8>,
    /// Simulate the design in `--config` instead of a table.
    #[arg(long, requires = "config")]
    pub custom: bool,
    /// True interaction effects for `--custom`; comma separated.
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    /// Drop-out rate for `--custom`.
    #[arg(long)]
    pub rate: Option<f64>,
    /// ICC values; defaults to the config's `rho`, else 0.05,0.5,0.95.
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<f64>,
    /// Replicates per cell; 0 gives analytic columns only.
    #[arg(long, default_value_t = 2000)]
    pub replicates: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

pub const HEADER: [&str; 17] = [
    "table",
    "q",
    "theta",
    "delta",
    "rate",
    "rho",
    "m_bar",
    "psi",
    "cse",
    "predicted_power",
    "esd",
    "se_bar",
    "type1",
    "power",
    "replicates",
    "failed",
    "seed",
];

fn custom(
    args: &SimulateArgs,
    run: &Run,
    settings: &SimulationSettings,
) -> Result<Vec<TableRecord>> {
    let cfg = run.config()?;
    let design = match args.rate {
        Some(_) => cfg.dropout_design()?,
        None => cfg.design()?,
    };
    let p = design.p();
    if args.delta.len() != p {
        bail!("--delta needs {p} value(s), one per subgroup");
    }
    let rhos = match (&args.rho[..], cfg.rho) {
        ([], Some(r)) => vec![r],
        ([], None) => DEFAULT_RHOS.to_vec(),
        (r, _) => r.to_vec(),
    };
    let seed = derive_seed(settings.seed, 0);
    let s = SimulationSettings { seed, ..*settings };
    let mut out = Vec::with_capacity(rhos.len());
    for rho in rhos {
        let params = ModelParams::new(0.0, 0.0, vec![0.0; p], args.delta.clone(), rho)?;
        let mut scenario = Scenario::new(design.clone(), params)?;
        let summary = design.summary();
        let cse = match args.rate {
            Some(r) => {
                let drop = DropoutSpec::new(r)?;
                scenario = scenario.with_dropout(drop)?;
                let dd = DropoutDesign::from_pattern(
                    drop,
                    design.clusters(),
                    summary.theta[0],
                    summary.sigma_eps,
                    scenario.psi,
                    DropoutBracket::General,
                );
                (scenario.psi * summary.sigma_eps.powi(2) * dd.bracket(summary.m_bar)
                    / (summary.clusters as f64 * summary.m_bar * (1.0 - r)))
                    .sqrt()
            }
            None => omega4(&summary, scenario.psi)?.std_errors()[0],
        };
        let mut rec = TableRecord {
            table: 0,
            q: 0,
            theta: summary.theta[0],
            delta: args.delta[0],
            rate: args.rate,
            rho,
            m_bar: summary.m_bar,
            psi: scenario.psi,
            cse,
            predicted_power: scenario.predicted_power(settings.alpha)?,
            esd: None,
            se_bar: None,
            type1: None,
            power: None,
            replicates: 0,
            failed: 0,
            seed,
        };
        if settings.replicates > 0 {
            let oc = operating_characteristics(&scenario, &s)?;
            rec.esd = Some(oc.esd);
            rec.se_bar = Some(oc.se_bar);
            rec.type1 = Some(oc.type1);
            rec.power = Some(oc.power);
            rec.replicates = oc.replicates;
            rec.failed = oc.failed;
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn simulate(args: &SimulateArgs, run: &Run) -> Result<String> {
    let settings = SimulationSettings {
        replicates: args.replicates,
        alpha: args.alpha,
        seed: args.seed,
        threads: run.threads,
    };
    let records = match (args.table, args.custom) {
        (Some(id), false) => {
            let rhos = if args.rho.is_empty() {
                DEFAULT_RHOS.to_vec()
            } else {
                args.rho.clone()
            };
            reproduce_table(id, &settings, &rhos)?
        }
        (None, true) => custom(args, run, &settings)?,
        _ => bail!("choose one of --table <1-4> or --custom"),
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(HEADER)?;
    let mut outside = Vec::new();
    let mut checks = 0;
    for rec in &records {
        w.serialize(rec)?;
        for c in check_record(rec, args.alpha) {
            checks += 1;
            if !c.pass {
                outside.push(format!(
                    "table={} q={} theta={} delta={} rate={} rho={}: {} {} outside [{}, {}]",
                    rec.table,
                    rec.q,
                    rec.theta,
                    rec.delta,
                    rec.rate.map_or(String::new(), |r| r.to_string()),
                    rec.rho,
                    c.name,
                    c.observed,
                    c.lower,
                    c.upper
                ));
            }
        }
    }
    let mut out = format!("# params_sha256={}\n", run.params_sha256);
    out.push_str(std::str::from_utf8(&w.into_inner()?)?);
    out.push_str(&format!(
        "# summary: {checks} checks, {} outside tolerance\n",
        outside.len()
    ));
    for line in &outside {
        out.push_str(&format!("# outside tolerance: {line}\n"));
    }
    if !outside.is_empty() {
        eprintln!("{} of {checks} checks outside tolerance", outside.len());
    }
    Ok(out)
}
