use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use crt_hte_core::power::{
    dropout_finite_size_constant, dropout_min_size, dropout_power, min_avg_cluster_size,
    power_chisq, power_wald_1d, DesignSkeleton, DropoutBracket, DropoutDesign, DropoutSpec,
    PowerRequest, Rounding,
};
use crt_hte_core::randomization::{
    psi_approx, psi_exact_with_cap, psi_sampled, DEFAULT_ENUMERATION_CAP,
};
use crt_hte_core::{ClusterSizes, DesignSummary, Error, PsiEstimate};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::Run;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiChoice {
    /// Exact enumeration under the cap, else the series, else sampling.
    Auto,
    Exact,
    /// Series; exact or sampled when the arms are unequal.
    Series,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundMode {
    Nearest,
    Up,
}

impl RoundMode {
    pub fn with(self, multiple: u64) -> Rounding {
        match self {
            RoundMode::Nearest => Rounding::nearest(multiple),
            RoundMode::Up => Rounding::up(multiple),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bracket {
    General,
    Reduced,
}

impl From<Bracket> for DropoutBracket {
    fn from(b: Bracket) -> Self {
        match b {
            Bracket::General => DropoutBracket::General,
            Bracket::Reduced => DropoutBracket::Reduced,
        }
    }
}

/// Settings of the Monte Carlo fallback for `psi`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PsiOptions {
    /// Largest number of assignments to enumerate.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub cap: u64,
    /// Assignments drawn by the sampled method.
    #[arg(long, default_value_t = 200_000)]
    pub samples: u64,
}

pub fn resolve_psi(
    sizes: &ClusterSizes,
    i1: usize,
    choice: PsiChoice,
    opts: &PsiOptions,
    seed: u64,
) -> crt_hte_core::Result<PsiEstimate> {
    let sampled = || psi_sampled(sizes, i1, opts.samples, seed);
    match choice {
        PsiChoice::Exact => psi_exact_with_cap(sizes, i1, opts.cap),
        PsiChoice::Sampled => sampled(),
        PsiChoice::Auto => match psi_exact_with_cap(sizes, i1, opts.cap) {
            Err(Error::EnumerationTooLarge { .. }) => match psi_approx(sizes, i1) {
                Err(Error::UnequalArms { .. } | Error::TooFewClusters { .. }) => sampled(),
                other => other,
            },
            other => other,
        },
        PsiChoice::Series => match psi_approx(sizes, i1) {
            Err(Error::UnequalArms { .. } | Error::TooFewClusters { .. }) => {
                resolve_psi(sizes, i1, PsiChoice::Auto, opts, seed)
            }
            other => other,
        },
    }
}

fn report(run: &Run, mut body: serde_json::Value) -> Result<String> {
    body["params_sha256"] = json!(run.params_sha256);
    Ok(serde_json::to_string_pretty(&body)? + "\n")
}

fn scalar_theta(theta: &[f64]) -> Result<f64> {
    match theta {
        [t] => Ok(*t),
        _ => Err(Error::NotUnivariate(theta.len()).into()),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PsiArgs {
    /// Design JSON.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PsiChoice::Auto)]
    pub method: PsiChoice,
    #[command(flatten)]
    pub psi: PsiOptions,
    /// Seed of the sampled method.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn psi(args: &PsiArgs, run: &Run) -> Result<String> {
    let cfg = run.config()?;
    let sizes = cfg.sizes()?;
    let est = resolve_psi(&sizes, cfg.i1, args.method, &args.psi, args.seed)?;
    report(
        run,
        json!({
            "clusters": sizes.len(),
            "i1": cfg.i1,
            "psi": est.value,
            "method": est.method,
            "cv2": est.cv2,
            "kurtosis": est.kurtosis,
            "assignments_evaluated": est.assignments_evaluated,
            "std_error": est.std_error,
        }),
    )
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PowerArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Interaction effects, one per subgroup; comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "sweep")]
    pub delta: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = PsiChoice::Series)]
    pub psi_method: PsiChoice,
    #[command(flatten)]
    pub psi: PsiOptions,
    /// Power curve over `lo:hi:step` as CSV; single subgroup only.
    #[arg(long)]
    pub sweep: Option<String>,
}

pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [lo, hi, step] if step > 0.0 && hi >= lo => Ok(crt_hte_core::casestudy::grid(lo, hi, step)),
        _ => bail!("grid must be lo:hi:step with step > 0 and hi >= lo, got {spec}"),
    }
}

pub fn power(args: &PowerArgs, run: &Run) -> Result<String> {
    let cfg = run.config()?;
    let design = cfg.design()?;
    let summary = design.summary();
    let est = resolve_psi(
        design.clusters(),
        design.i1(),
        args.psi_method,
        &args.psi,
        0,
    )?;
    if let Some(spec) = &args.sweep {
        scalar_theta(design.theta())?;
        let mut out = format!("# params_sha256={}\n", run.params_sha256);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["delta", "power"])?;
        for d in parse_grid(spec)? {
            let p = power_wald_1d(d, &summary, est.value, args.alpha)?;
            w.write_record([d.to_string(), p.to_string()])?;
        }
        out.push_str(std::str::from_utf8(&w.into_inner()?)?);
        return Ok(out);
    }
    let (test, power) = if args.delta.len() == 1 {
        (
            "wald",
            power_wald_1d(args.delta[0], &summary, est.value, args.alpha)?,
        )
    } else {
        (
            "chisq",
            power_chisq(&args.delta, &summary, est.value, args.alpha)?,
        )
    };
    report(
        run,
        json!({
            "clusters": design.num_clusters(),
            "m_bar": design.clusters().mean(),
            "theta": design.theta(),
            "sigma_eps": design.sigma_eps(),
            "delta": args.delta,
            "alpha": args.alpha,
            "psi": est.value,
            "psi_method": est.method,
            "test": test,
            "power": power,
        }),
    )
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleSizeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub delta: f64,
    /// Target power.
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Round the average size to a multiple of this.
    #[arg(long, default_value_t = 1)]
    pub round: u64,
    #[arg(long, value_enum, default_value_t = RoundMode::Nearest)]
    pub rounding: RoundMode,
    #[arg(long, value_enum, default_value_t = PsiChoice::Series)]
    pub psi_method: PsiChoice,
    #[command(flatten)]
    pub psi: PsiOptions,
}

pub fn samplesize(args: &SampleSizeArgs, run: &Run) -> Result<String> {
    let cfg = run.config()?;
    let design = cfg.design()?;
    let theta = scalar_theta(design.theta())?;
    let est = resolve_psi(
        design.clusters(),
        design.i1(),
        args.psi_method,
        &args.psi,
        0,
    )?;
    let req = PowerRequest::new(vec![args.delta], args.alpha, args.power)?;
    let skel = DesignSkeleton {
        clusters: design.num_clusters(),
        theta,
        sigma_eps: design.sigma_eps(),
    };
    let sol = min_avg_cluster_size(&req, &skel, est.value, args.rounding.with(args.round))?;
    let summary = DesignSummary::new(
        skel.clusters,
        sol.rounded as f64,
        vec![theta],
        skel.sigma_eps,
    )?;
    report(
        run,
        json!({
            "clusters": skel.clusters,
            "theta": theta,
            "sigma_eps": skel.sigma_eps,
            "delta": args.delta,
            "alpha": args.alpha,
            "target_power": args.power,
            "psi": est.value,
            "psi_method": est.method,
            "m_bar_raw": sol.raw,
            "m_bar": sol.rounded,
            "total": sol.rounded * skel.clusters as u64,
            "predicted_power": power_wald_1d(args.delta, &summary, est.value, args.alpha)?,
        }),
    )
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DropoutArgs {
    /// Design JSON whose sizes give the relative cluster-size pattern.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Drop-out rate in (0, 1).
    #[arg(long)]
    pub rate: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub round: u64,
    #[arg(long, value_enum, default_value_t = RoundMode::Nearest)]
    pub rounding: RoundMode,
    /// Finite-size constant used to solve for the planned size.
    #[arg(long, value_enum, default_value_t = Bracket::Reduced)]
    pub size_bracket: Bracket,
    /// Finite-size constant used to predict power at the rounded size.
    #[arg(long, value_enum, default_value_t = Bracket::General)]
    pub power_bracket: Bracket,
    #[arg(long, value_enum, default_value_t = PsiChoice::Series)]
    pub psi_method: PsiChoice,
    #[command(flatten)]
    pub psi: PsiOptions,
}

pub fn dropout(args: &DropoutArgs, run: &Run) -> Result<String> {
    let cfg = run.config()?;
    let design = cfg.dropout_design()?;
    let theta = scalar_theta(design.theta())?;
    let pattern = design.clusters();
    let est = resolve_psi(pattern, design.i1(), args.psi_method, &args.psi, 0)?;
    let spec = DropoutSpec::new(args.rate)?;
    let build = |b: Bracket| {
        DropoutDesign::from_pattern(
            spec,
            pattern,
            theta,
            design.sigma_eps(),
            est.value,
            b.into(),
        )
    };
    let req = PowerRequest::new(vec![args.delta], args.alpha, args.power)?;
    let sol = dropout_min_size(
        &build(args.size_bracket),
        &req,
        args.rounding.with(args.round),
    )?;
    let m = sol.rounded as f64;
    report(
        run,
        json!({
            "clusters": pattern.len(),
            "theta": theta,
            "sigma_eps": design.sigma_eps(),
            "rate": args.rate,
            "delta": args.delta,
            "alpha": args.alpha,
            "target_power": args.power,
            "psi": est.value,
            "psi_method": est.method,
            "size_bracket": args.size_bracket,
            "power_bracket": args.power_bracket,
            "finite_size_constant": {
                "general": dropout_finite_size_constant(pattern, DropoutBracket::General),
                "reduced": dropout_finite_size_constant(pattern, DropoutBracket::Reduced),
            },
            "m_bar_raw": sol.raw,
            "m_bar": sol.rounded,
            "expected_analysed": m * (1.0 - args.rate) * pattern.len() as f64,
            "predicted_power": dropout_power(&build(args.power_bracket), m, args.delta, args.alpha)?,
        }),
    )
}
