//! Batch front end: every command writes one primary artifact (to `--out` or
//! stdout) plus, when writing to a file, a `<out>.manifest.json` recording
//! how it was produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dosedesign::constructors::{identify_named, is_e_optimal_extended, is_e_optimal_standard};
use dosedesign::criteria::{self, avg_contrast_coefficients, dose_contrast_coefficients};
use dosedesign::design::{is_feasible, DesignKind, ModelSpec};
use dosedesign::io::{self, Format, PolytopeClass, PolytopeSpec};
use dosedesign::optimizer::{maximize, Objective, SolverConfig, StepRule};
use dosedesign::oracle::brute_force_best_e;
use dosedesign::verify::{
    certify_c_default, certify_e_default, CertificationResult, CERTIFICATION_TOL,
};
use dosedesign::{Design, DesignError, NamedDesignKind};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const EXIT_SUCCESS: u8 = 0;
pub const EXIT_NEGATIVE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dosedesign",
    version,
    about = "Optimal approximate designs for dose-escalation studies"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Output format for designs and reports; defaults to the extension of --out.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
    /// Seed for randomized starts.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Certification tolerance (certify) or stopping gap (optimize).
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Standard,
    Extended,
}

impl From<KindArg> for DesignKind {
    fn from(k: KindArg) -> DesignKind {
        match k {
            KindArg::Standard => DesignKind::Standard,
            KindArg::Extended => DesignKind::Extended,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Base,
    EOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    A,
    D,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StepRuleArg {
    Exact,
    Harmonic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a closed-form design.
    Construct {
        /// senn, uniform-extended or highest-dose-extended
        name: String,
        #[arg(long)]
        n: usize,
    },
    /// Report every criterion for a design file.
    Evaluate { design: PathBuf },
    /// Check an optimality claim at every vertex of the design polytope.
    Certify {
        design: PathBuf,
        /// `e`, `c:<comma-separated coefficients>`, `c:avg` or `c:dose=<i>`
        #[arg(long)]
        claim: String,
    },
    /// Maximize a criterion over a design polytope.
    Optimize(OptimizeArgs),
    /// Brute-force the E-optimal design on a grid (n ≤ 3).
    Oracle {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "standard")]
        kind: KindArg,
        #[arg(long, default_value_t = 40)]
        resolution: usize,
        #[arg(long, default_value_t = 40)]
        refine: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    /// Polytope description (JSON); overrides --n, --kind and --class.
    #[arg(long)]
    pub polytope: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value = "extended")]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "base")]
    pub class: ClassArg,
    #[arg(long, value_enum)]
    pub objective: ObjectiveArg,
    /// Solver settings (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub step_rule: Option<StepRuleArg>,
    /// Number of randomized starts, seeded from --seed onwards.
    #[arg(long)]
    pub starts: Option<usize>,
}

/// Reproducibility record written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: BTreeMap<String, Value>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub tool_version: String,
}

/// A finished command before anything is written.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub command: &'static str,
    pub primary: String,
    /// Secondary artifacts as (file suffix, contents), written only with --out.
    pub extra: Vec<(&'static str, String)>,
    pub inputs: BTreeMap<String, Value>,
    /// False for violated claims and non-converged runs.
    pub positive: bool,
    pub summary: String,
}

impl CommandOutput {
    pub fn exit_code(&self) -> u8 {
        if self.positive {
            EXIT_SUCCESS
        } else {
            EXIT_NEGATIVE
        }
    }
}

fn output_format(global: &GlobalArgs) -> Format {
    match (global.format, &global.out) {
        (Some(f), _) => f.into(),
        (None, Some(p)) => Format::from_path(p),
        (None, None) => Format::Json,
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

pub fn cmd_construct(name: &str, n: usize, format: Format) -> anyhow::Result<CommandOutput> {
    let kind: NamedDesignKind = name.parse()?;
    let d = kind.build(n)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("name".into(), json!(kind.cli_name()));
    inputs.insert("n".into(), json!(n));
    Ok(CommandOutput {
        command: "construct",
        primary: io::design_to_string(&d, format),
        extra: Vec::new(),
        inputs,
        positive: true,
        summary: format!("{} design, n = {n}", kind.cli_name()),
    })
}

/// Criteria plus feasibility and class membership; criteria are null for
/// infeasible designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub kind: DesignKind,
    pub feasible: bool,
    pub named_design: Option<String>,
    pub is_e_optimal_standard: Option<bool>,
    pub is_e_optimal_extended: Option<bool>,
    pub e: Option<f64>,
    pub a: Option<f64>,
    pub d: Option<f64>,
    pub mv: Option<f64>,
    pub avg_contrast: Option<f64>,
    pub lv: Option<Vec<f64>>,
}

pub fn evaluation_report(d: &Design) -> anyhow::Result<EvaluationReport> {
    let report = if is_feasible(d) {
        Some(criteria::evaluate(d)?)
    } else {
        None
    };
    let standard = d.kind() == DesignKind::Standard;
    Ok(EvaluationReport {
        n: d.n(),
        kind: d.kind(),
        feasible: report.is_some(),
        named_design: identify_named(d).map(|k| k.cli_name().to_string()),
        is_e_optimal_standard: if standard {
            Some(is_e_optimal_standard(d)?)
        } else {
            None
        },
        is_e_optimal_extended: if standard {
            None
        } else {
            Some(is_e_optimal_extended(d)?)
        },
        e: report.as_ref().map(|r| r.e),
        a: report.as_ref().map(|r| r.a),
        d: report.as_ref().map(|r| r.d),
        mv: report.as_ref().map(|r| r.mv),
        avg_contrast: report.as_ref().map(|r| r.avg_contrast),
        lv: report.and_then(|r| r.lv),
    })
}

fn evaluation_csv(r: &EvaluationReport, stages: usize) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let flag = |v: Option<bool>| v.map_or(String::new(), |x| x.to_string());
    let mut header = String::from("n,kind,feasible,named_design,is_e_optimal_standard,is_e_optimal_extended,e,a,d,mv,avg_contrast");
    let mut row = format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.n,
        r.kind,
        r.feasible,
        r.named_design.clone().unwrap_or_default(),
        flag(r.is_e_optimal_standard),
        flag(r.is_e_optimal_extended),
        opt(r.e),
        opt(r.a),
        opt(r.d),
        opt(r.mv),
        opt(r.avg_contrast)
    );
    for k in 0..stages {
        header.push_str(&format!(",lv{}", k + 1));
        row.push(',');
        row.push_str(&opt(r.lv.as_ref().and_then(|v| v.get(k).copied())));
    }
    format!("{header}\n{row}\n")
}

pub fn cmd_evaluate(design: &Path, format: Format) -> anyhow::Result<CommandOutput> {
    let d = io::read_design(design).with_context(|| format!("reading {}", design.display()))?;
    let report = evaluation_report(&d)?;
    let stages = d.n() + usize::from(d.kind() == DesignKind::Extended);
    let primary = match format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => evaluation_csv(&report, stages),
    };
    let summary = match report.e {
        Some(e) => format!("feasible, E = {e}"),
        None => "infeasible design".to_string(),
    };
    let mut inputs = BTreeMap::new();
    inputs.insert("design".into(), path_value(design));
    Ok(CommandOutput {
        command: "evaluate",
        primary,
        extra: Vec::new(),
        inputs,
        positive: true,
        summary,
    })
}

/// `e`, `c:avg`, `c:dose=<i>` or `c:<v1>,<v2>,...` over the full parameter.
pub enum ClaimArg {
    E,
    C(DVector<f64>),
}

pub fn parse_claim(text: &str, spec: &ModelSpec) -> anyhow::Result<ClaimArg> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("e") {
        return Ok(ClaimArg::E);
    }
    let Some(body) = text.strip_prefix("c:").or_else(|| text.strip_prefix("C:")) else {
        bail!("claim must be 'e' or 'c:<vector>', got '{text}'");
    };
    if body == "avg" {
        return Ok(ClaimArg::C(avg_contrast_coefficients(spec)));
    }
    if let Some(dose) = body.strip_prefix("dose=") {
        let dose: usize = dose.parse().context("dose index")?;
        if dose == 0 || dose > spec.n() {
            bail!("dose must be in 1..={}", spec.n());
        }
        return Ok(ClaimArg::C(dose_contrast_coefficients(spec, dose)));
    }
    let values = body
        .split(',')
        .map(|v| {
            io::parse_rational(v)
                .map(|r| *r.numer() as f64 / *r.denom() as f64)
                .or_else(|_| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| anyhow!("bad coefficient '{v}'"))
                })
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    if values.len() != spec.parameter_dim() {
        bail!(
            "coefficient vector has {} entries, the model has {} parameters",
            values.len(),
            spec.parameter_dim()
        );
    }
    Ok(ClaimArg::C(DVector::from_vec(values)))
}

pub fn certify(
    d: &Design,
    claim: &ClaimArg,
    tolerance: f64,
) -> anyhow::Result<CertificationResult> {
    let r = match claim {
        ClaimArg::E => certify_e_default(d)?,
        ClaimArg::C(c) => certify_c_default(d, c)?,
    };
    Ok(r.with_tolerance(tolerance))
}

pub fn cmd_certify(design: &Path, claim: &str, tolerance: f64) -> anyhow::Result<CommandOutput> {
    let d = io::read_design(design).with_context(|| format!("reading {}", design.display()))?;
    let parsed = parse_claim(claim, &d.spec())?;
    let mut result = certify(&d, &parsed, tolerance)?;
    result.claim.design = design.display().to_string();
    let mut inputs = BTreeMap::new();
    inputs.insert("design".into(), path_value(design));
    inputs.insert("claim".into(), json!(claim));
    inputs.insert("tolerance".into(), json!(tolerance));
    Ok(CommandOutput {
        command: "certify",
        primary: serde_json::to_string_pretty(&result)? + "\n",
        extra: Vec::new(),
        inputs,
        positive: result.is_certified(),
        summary: format!(
            "{:?}, worst gap {:e} over {} vertices",
            result.status, result.worst_gap, result.vertices_checked
        ),
    })
}

/// Assembles the polytope and solver settings for `optimize`.
pub fn optimize_setup(
    args: &OptimizeArgs,
    global: &GlobalArgs,
) -> anyhow::Result<(PolytopeSpec, SolverConfig)> {
    let poly = match &args.polytope {
        Some(p) => io::polytope_spec_from_json(&std::fs::read_to_string(p)?)?,
        None => PolytopeSpec {
            n: args
                .n
                .ok_or_else(|| anyhow!("either --polytope or --n is required"))?,
            kind: args.kind.into(),
            class: match args.class {
                ClassArg::Base => PolytopeClass::Base,
                ClassArg::EOptimal => PolytopeClass::EOptimal,
            },
            equalities: Vec::new(),
        },
    };
    let mut config: SolverConfig = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| DesignError::Parse(e.to_string()))?,
        None => SolverConfig::default(),
    };
    if let Some(m) = args.max_iters {
        config.max_iters = m;
    }
    if let Some(r) = args.step_rule {
        config.step_rule = match r {
            StepRuleArg::Exact => StepRule::ExactLineSearch,
            StepRuleArg::Harmonic => StepRule::Harmonic,
        };
    }
    if let Some(tol) = global.tolerance {
        config.stopping_gap = tol;
    }
    if let Some(k) = args.starts {
        config.seeds = (0..k as u64).map(|i| global.seed.wrapping_add(i)).collect();
    }
    config.validate()?;
    Ok((poly, config))
}

pub fn cmd_optimize(
    poly: &PolytopeSpec,
    objective: ObjectiveArg,
    config: &SolverConfig,
    format: Format,
) -> anyhow::Result<CommandOutput> {
    let polytope = poly.build()?;
    let obj = match objective {
        ObjectiveArg::A => Objective::A,
        ObjectiveArg::D => Objective::D,
        ObjectiveArg::E => Objective::E,
    };
    let result = maximize(&polytope, &obj, config)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("polytope".into(), serde_json::to_value(poly)?);
    inputs.insert("objective".into(), json!(format!("{objective:?}")));
    inputs.insert("config".into(), serde_json::to_value(config)?);
    let mut extra = vec![(".log.csv", io::run_log_to_csv(&result.log))];
    if let Some(cert) = &result.certification {
        extra.push((
            ".certificate.json",
            serde_json::to_string_pretty(cert)? + "\n",
        ));
    }
    Ok(CommandOutput {
        command: "optimize",
        primary: io::design_to_string(&result.design, format),
        extra,
        inputs,
        positive: result.converged,
        summary: format!(
            "{objective:?} value {} gap {:e} after {} iterations{}",
            result.value,
            result.gap,
            result.iterations,
            if result.converged {
                ""
            } else {
                " (not converged)"
            }
        ),
    })
}

pub fn cmd_oracle(
    n: usize,
    kind: KindArg,
    resolution: usize,
    refine: usize,
    format: Format,
) -> anyhow::Result<CommandOutput> {
    let spec = ModelSpec::new(n, kind.into())?;
    let r = brute_force_best_e(spec, resolution, refine)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("n".into(), json!(n));
    inputs.insert("kind".into(), json!(DesignKind::from(kind)));
    inputs.insert("resolution".into(), json!(resolution));
    inputs.insert("refine".into(), json!(refine));
    Ok(CommandOutput {
        command: "oracle",
        primary: io::design_to_string(&r.design, format),
        extra: Vec::new(),
        inputs,
        positive: true,
        summary: format!(
            "E value {} (grid {}) over {} grid points",
            r.value, r.grid_value, r.grid_points
        ),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes the artifacts and, with `--out`, the manifest. Returns the paths
/// written.
pub fn emit(
    out: &CommandOutput,
    global: &GlobalArgs,
    argv: &[String],
) -> anyhow::Result<Vec<PathBuf>> {
    let Some(path) = &global.out else {
        print!("{}", out.primary);
        return Ok(Vec::new());
    };
    let mut written = vec![path.clone()];
    std::fs::write(path, &out.primary).with_context(|| format!("writing {}", path.display()))?;
    for (suffix, contents) in &out.extra {
        let p = with_suffix(path, suffix);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
    }
    let mut inputs = out.inputs.clone();
    inputs.insert("argv".into(), json!(argv));
    let manifest = RunManifest {
        command: out.command.to_string(),
        inputs,
        outputs: written.iter().map(|p| p.display().to_string()).collect(),
        seed: global.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mpath = with_suffix(path, ".manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n")?;
    written.push(mpath);
    Ok(written)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli, argv: &[String]) -> u8 {
    match execute(cli) {
        Ok(out) => match emit(&out, &cli.global, argv) {
            Ok(_) => {
                eprintln!("{}", out.summary);
                out.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_INPUT
            }
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<CommandOutput> {
    let g = &cli.global;
    let format = output_format(g);
    match &cli.command {
        Command::Construct { name, n } => cmd_construct(name, *n, format),
        Command::Evaluate { design } => cmd_evaluate(design, format),
        Command::Certify { design, claim } => {
            cmd_certify(design, claim, g.tolerance.unwrap_or(CERTIFICATION_TOL))
        }
        Command::Optimize(args) => {
            let (poly, config) = optimize_setup(args, g)?;
            cmd_optimize(&poly, args.objective, &config, format)
        }
        Command::Oracle {
            n,
            kind,
            resolution,
            refine,
        } => cmd_oracle(*n, *kind, *resolution, *refine, format),
    }
}
