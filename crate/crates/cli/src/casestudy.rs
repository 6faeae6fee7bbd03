use anyhow::Result;
use clap::{Args, ValueEnum};
use crt_hte_core::casestudy::{theta_sweep, Study, Variant};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::Run;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyName {
    Recode,
    Partner,
    Epic,
    /// The drop-out trial's planned design; same as `epic --variant equal`.
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Equal,
    Extreme,
    #[value(alias = "no-dropout")]
    Nodropout,
    ThetaSweep,
}

impl From<VariantName> for Variant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Equal => Variant::Equal,
            VariantName::Extreme => Variant::Extreme,
            VariantName::Nodropout => Variant::NoDropout,
            VariantName::ThetaSweep => Variant::ThetaSweep,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CaseStudyArgs {
    #[arg(value_enum)]
    pub name: StudyName,
    #[arg(long, value_enum, default_value_t = VariantName::Equal)]
    pub variant: VariantName,
    /// Effect grid `lo:hi:step`; the study's default grid when absent.
    #[arg(long)]
    pub deltas: Option<String>,
    /// Report the 80%-power detectable effect as JSON instead of the curve.
    #[arg(long)]
    pub threshold: bool,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn casestudy(args: &CaseStudyArgs, run: &Run) -> Result<String> {
    let (study, variant) = match args.name {
        StudyName::Recode => (Study::Recode, args.variant.into()),
        StudyName::Partner => (Study::Partner, args.variant.into()),
        StudyName::Epic => (Study::Epic, args.variant.into()),
        StudyName::Dropout => (Study::Epic, Variant::Equal),
    };
    if args.threshold {
        let t = study.threshold(variant)?;
        let body = json!({
            "study": study.name(),
            "variant": variant,
            "exact": t.exact,
            "reported": t.reported,
            "resolution": t.resolution,
            "params_sha256": run.params_sha256,
        });
        return Ok(serde_json::to_string_pretty(&body)? + "\n");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    if variant == Variant::ThetaSweep {
        if !study.variants().contains(&variant) {
            study.power(variant, 1.0)?;
        }
        w.write_record(["theta", "delta", "power", "required_m_bar"])?;
        for p in theta_sweep()? {
            w.write_record([
                p.theta.to_string(),
                p.delta.to_string(),
                p.power.to_string(),
                p.required_m_bar.to_string(),
            ])?;
        }
    } else {
        let deltas = match &args.deltas {
            Some(spec) => crate::commands::parse_grid(spec)?,
            None => study.default_deltas(),
        };
        w.write_record([
            "study",
            "variant",
            "delta",
            "power",
            "required_m_bar",
            "required_rounded",
        ])?;
        let vname = serde_json::to_value(variant)?;
        for p in study.curve(variant, &deltas)? {
            w.write_record([
                study.name().to_string(),
                vname.as_str().unwrap_or_default().to_string(),
                p.delta.to_string(),
                p.power.to_string(),
                opt(p.required.map(|r| r.m_bar)),
                opt(p.required.and_then(|r| r.rounded)),
            ])?;
        }
    }
    let mut out = format!("# params_sha256={}\n", run.params_sha256);
    out.push_str(std::str::from_utf8(&w.into_inner()?)?);
    Ok(out)
}
