//! Batch command line front end: parses an experiment configuration,
//! dispatches to the library, and emits CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 2 validation, 3 budget/precision (partial results
//! are still written and flagged), 4 bound-check violation in strict mode.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use cocycle_lab::arithmetic::{rational_from_f64, Irrational};
use cocycle_lab::cocycle::{self, CocycleMap};
use cocycle_lab::duality;
use cocycle_lab::growth::{self, EnvelopeSpec};
use cocycle_lab::kam::{self, KamConfig, KamStatus};
use cocycle_lab::spectrum;
use cocycle_lab::{Error, Result};

/// Frequency argument: `golden`, `silver`, or `cf:a1,a2,...` (all a_i >= 1).
#[derive(Clone, Debug)]
struct AlphaArg {
    spec: String,
    value: Irrational,
}

impl FromStr for AlphaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<AlphaArg, String> {
        let value = match s {
            "golden" => Irrational::golden(),
            "silver" => Irrational::silver(),
            _ => {
                let Some(body) = s.strip_prefix("cf:") else {
                    return Err(format!(
                        "unknown frequency '{s}' (expected golden, silver, or cf:a1,a2,...)"
                    ));
                };
                let mut cf = Vec::new();
                for part in body.split(',') {
                    let a: i64 = part
                        .trim()
                        .parse()
                        .map_err(|_| format!("cf coefficient '{part}' is not an integer"))?;
                    if a < 1 {
                        return Err("cf coefficients must be ≥ 1".into());
                    }
                    cf.push(a as u64);
                }
                Irrational::from_cf(&cf).map_err(|e| e.to_string())?
            }
        };
        Ok(AlphaArg { spec: s.to_string(), value })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Precision {
    Double,
    Extended,
}

#[derive(Args, Clone, Debug)]
struct OutputOpts {
    /// Output file; defaults to <command>.csv (<command>.json for kam).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; defaults to the extension of --out.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Floating point precision (COCYCLE_LAB_PRECISION overrides).
    #[arg(long, global = true, value_enum, default_value = "double")]
    precision: Precision,
    /// Fail with exit code 4 on bound-check violations instead of warning.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Parser, Debug)]
#[command(
    name = "cocycle-lab",
    version,
    about = "Numerical laboratory for quasiperiodic SL(2,R) cocycles and the almost Mathieu operator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    output: OutputOpts,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Gap lengths and decay rates at the two deepest approximants.
    Gaps {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        alpha: AlphaArg,
        /// Largest approximant denominator to use.
        #[arg(long, default_value_t = 100)]
        qmax: i64,
        /// Largest |k| of the gap labels reported.
        #[arg(long, default_value_t = 6)]
        kmax: i64,
    },
    /// Phase-averaged Lyapunov exponent at one or more energies.
    Lyapunov {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        alpha: AlphaArg,
        /// Energy or comma-separated list of energies.
        #[arg(long = "E")]
        energy: String,
        /// Optional energy grid lo:hi:count appended to --E.
        #[arg(long = "E-grid")]
        energy_grid: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        n: i64,
        #[arg(long, default_value_t = 16)]
        phases: usize,
    },
    /// Fibered rotation number at one or more energies.
    Rotation {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        alpha: AlphaArg,
        /// Energy or comma-separated list of energies.
        #[arg(long = "E")]
        energy: String,
        #[arg(long = "E-grid")]
        energy_grid: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        n: i64,
    },
    /// Structured KAM iteration trace for a perturbative AMO cocycle.
    Kam {
        #[arg(long)]
        lambda: f64,
        #[arg(long = "E")]
        energy: f64,
        #[arg(long)]
        alpha: AlphaArg,
        #[arg(long, default_value_t = 6)]
        budget: usize,
        /// Initial analytic strip width.
        #[arg(long, default_value_t = 0.2)]
        h: f64,
        /// Target strip width.
        #[arg(long = "h-tilde", default_value_t = 0.06)]
        h_tilde: f64,
    },
    /// Dual lattice eigenvector extracted from a reducible KAM run.
    Dual {
        #[arg(long)]
        lambda: f64,
        #[arg(long = "E")]
        energy: f64,
        #[arg(long)]
        alpha: AlphaArg,
        #[arg(long, default_value_t = 8)]
        budget: usize,
        #[arg(long, default_value_t = 0.2)]
        h: f64,
        #[arg(long = "h-tilde", default_value_t = 0.06)]
        h_tilde: f64,
        /// Half-width of the doubled-lattice index window.
        #[arg(long, default_value_t = 64)]
        umax: i64,
    },
    /// Measured transfer-matrix growth against the resonance envelope.
    Growth {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        alpha: AlphaArg,
        #[arg(long = "E")]
        energy: f64,
        /// Envelope window scale.
        #[arg(long)]
        eps: f64,
        /// Resonance qualification exponent.
        #[arg(long)]
        eps0: f64,
        /// Largest iterate.
        #[arg(long = "N", default_value_t = 100_000)]
        n_max: i64,
    },
    /// Predicted growth envelope f(n) without the measured profile.
    GrowthEnvelope {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        alpha: AlphaArg,
        #[arg(long = "E")]
        energy: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        eps0: f64,
        #[arg(long = "N", default_value_t = 100_000)]
        n_max: i64,
        /// Iterates used for the rotation number estimate.
        #[arg(long, default_value_t = 400_000)]
        n_rot: i64,
    },
    /// Resonance scan of a rotation number against a frequency.
    Resonances {
        #[arg(long)]
        alpha: AlphaArg,
        /// Rotation number in [0, 1/2].
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        eps0: f64,
        /// Largest |l| scanned.
        #[arg(long, default_value_t = 256)]
        kmax: i64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gaps { .. } => "gaps",
            Command::Lyapunov { .. } => "lyapunov",
            Command::Rotation { .. } => "rotation",
            Command::Kam { .. } => "kam",
            Command::Dual { .. } => "dual",
            Command::Growth { .. } => "growth",
            Command::GrowthEnvelope { .. } => "growth-envelope",
            Command::Resonances { .. } => "resonances",
        }
    }

    fn default_format(&self) -> Format {
        match self {
            Command::Kam { .. } => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Everything a command produces besides its exit status.
struct Artifact {
    /// Echo of the command parameters, in declaration order.
    params: Vec<(&'static str, String)>,
    /// Derived scalars worth echoing in the header / meta block.
    extra_meta: Vec<(&'static str, Value)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    /// JSON payload; defaults to the row table when `None`.
    json_data: Option<Value>,
    /// Bound-check violations: warnings by default, exit 4 in strict mode.
    violations: Vec<String>,
    /// A computation budget ran out; results are partial (exit 3).
    partial: bool,
}

impl Artifact {
    fn new(params: Vec<(&'static str, String)>) -> Artifact {
        Artifact {
            params,
            extra_meta: Vec::new(),
            columns: Vec::new(),
            rows: Vec::new(),
            json_data: None,
            violations: Vec::new(),
            partial: false,
        }
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn parse_energies(list: &str, grid: Option<&str>) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in list.split(',') {
        let e: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("--E: '{part}' is not a number")))?;
        out.push(e);
    }
    if let Some(g) = grid {
        let fields: Vec<&str> = g.split(':').collect();
        if fields.len() != 3 {
            return Err(Error::Invalid("--E-grid expects lo:hi:count".into()));
        }
        let lo: f64 = fields[0]
            .parse()
            .map_err(|_| Error::Invalid("--E-grid: lo is not a number".into()))?;
        let hi: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Invalid("--E-grid: hi is not a number".into()))?;
        let count: usize = fields[2]
            .parse()
            .map_err(|_| Error::Invalid("--E-grid: count is not an integer".into()))?;
        if count < 2 || hi <= lo {
            return Err(Error::Invalid("--E-grid needs hi > lo and count >= 2".into()));
        }
        for i in 0..count {
            out.push(lo + (hi - lo) * i as f64 / (count - 1) as f64);
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid("--E: at least one energy is required".into()));
    }
    Ok(out)
}

fn run_command(command: &Command) -> Result<Artifact> {
    match command {
        Command::Gaps { lambda, alpha, qmax, kmax } => {
            let table = spectrum::gap_decay_experiment(*lambda, &alpha.value, *qmax, *kmax)?;
            let mut art = Artifact::new(vec![
                ("lambda", fmt_f64(*lambda)),
                ("alpha", alpha.spec.clone()),
                ("qmax", qmax.to_string()),
                ("kmax", kmax.to_string()),
            ]);
            art.extra_meta = vec![
                ("approximant", json!(format!("{}/{}", table.p, table.q))),
                ("cross_check", json!(format!("{}/{}", table.p_prev, table.q_prev))),
            ];
            art.columns =
                vec!["k", "m", "length", "rate", "length_prev", "stable", "below_floor"];
            art.rows = table
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.k.to_string(),
                        r.m.to_string(),
                        fmt_f64(r.length),
                        fmt_f64(r.rate),
                        r.length_prev.map(fmt_f64).unwrap_or_default(),
                        r.stable.to_string(),
                        r.below_floor.to_string(),
                    ]
                })
                .collect();
            art.json_data = Some(serde_json::to_value(&table).expect("serializable table"));
            Ok(art)
        }
        Command::Lyapunov { lambda, alpha, energy, energy_grid, n, phases } => {
            if *phases == 0 {
                return Err(Error::Invalid("--phases must be >= 1".into()));
            }
            let energies = parse_energies(energy, energy_grid.as_deref())?;
            let thetas: Vec<f64> =
                (0..*phases).map(|i| i as f64 / *phases as f64).collect();
            let af = alpha.value.approx_f64();
            let mut art = Artifact::new(vec![
                ("lambda", fmt_f64(*lambda)),
                ("alpha", alpha.spec.clone()),
                ("E", energy.clone()),
                ("n", n.to_string()),
                ("phases", phases.to_string()),
            ]);
            art.columns = vec!["energy", "lyapunov", "spread"];
            for e in energies {
                let est = cocycle::lyapunov(&CocycleMap::amo(*lambda, e), af, *n, &thetas)?;
                art.rows.push(vec![fmt_f64(e), fmt_f64(est.value), fmt_f64(est.spread)]);
            }
            Ok(art)
        }
        Command::Rotation { lambda, alpha, energy, energy_grid, n } => {
            let energies = parse_energies(energy, energy_grid.as_deref())?;
            let af = alpha.value.approx_f64();
            let mut art = Artifact::new(vec![
                ("lambda", fmt_f64(*lambda)),
                ("alpha", alpha.spec.clone()),
                ("E", energy.clone()),
                ("n", n.to_string()),
            ]);
            art.columns = vec!["energy", "rho", "error_bar"];
            for e in energies {
                let est = cocycle::rotation_number(&CocycleMap::amo(*lambda, e), af, *n, 0.0)?;
                art.rows.push(vec![fmt_f64(e), fmt_f64(est.value), fmt_f64(est.error_bar)]);
            }
            Ok(art)
        }
        Command::Kam { lambda, energy, alpha, budget, h, h_tilde } => {
            let (a0, f0) = kam::amo_local_pair(*lambda, *energy)?;
            let cfg = KamConfig::for_alpha(&alpha.value);
            let trace = kam::kam_iterate(&a0, &f0, &alpha.value, *h, *h_tilde, *budget, &cfg)?;
            let mut art = Artifact::new(vec![
                ("lambda", fmt_f64(*lambda)),
                ("E", fmt_f64(*energy)),
                ("alpha", alpha.spec.clone()),
                ("budget", budget.to_string()),
                ("h", fmt_f64(*h)),
                ("h_tilde", fmt_f64(*h_tilde)),
            ]);
            for step in &trace.steps {
                for c in step.checks.iter().filter(|c| !c.ok) {
                    art.violations.push(format!(
                        "step {}: bound '{}' violated (lhs {:.6e} > rhs {:.6e})",
                        step.j, c.name, c.lhs, c.rhs
                    ));
                }
            }
            art.partial = trace.status == KamStatus::BudgetExhausted;
            if trace.status == KamStatus::Diverged {
                art.violations.push("iteration diverged before the budget ran out".into());
            }
            art.extra_meta = vec![
                ("status", serde_json::to_value(trace.status).expect("status")),
                ("final_ln_eps", json!(trace.final_ln_eps)),
                ("resonant_indices", json!(trace.resonant_indices)),
                ("degree", json!(trace.conjugacy.degree())),
            ];
            art.columns = vec![
                "j", "h", "ln_eps", "deg", "resonance", "y_norm", "conj_sup", "modeled",
            ];
            art.rows = trace
                .steps
                .iter()
                .map(|s| {
                    vec![
                        s.j.to_string(),
                        fmt_f64(s.h),
                        fmt_f64(s.ln_eps),
                        s.deg.to_string(),
                        s.resonance.map(|r| r.to_string()).unwrap_or_default(),
                        fmt_f64(s.y_norm),
                        fmt_f64(s.conj_sup),
                        s.modeled.to_string(),
                    ]
                })
                .collect();
            art.json_data = Some(serde_json::to_value(&trace).expect("serializable trace"));
            Ok(art)
        }
        Command::Dual { lambda, energy, alpha, budget, h, h_tilde, umax } => {
            let (a0, f0) = kam::amo_local_pair(*lambda, *energy)?;
            let cfg = KamConfig::for_alpha(&alpha.value);
            let trace = kam::kam_iterate(&a0, &f0, &alpha.value, *h, *h_tilde, *budget, &cfg)?;
            if trace.status != KamStatus::ConvergedReducible {
                return Err(Error::Precision(format!(
                    "kam run ended with status {:?}; no reducible conjugacy to dualize \
                     (raise --budget or move E)",
                    trace.status
                )));
            }
            let (b, x) = duality::rotation_reduced(&trace.conjugacy, &trace.final_constant)?;
            let vec = duality::dual_eigenvector(&b, *umax)?;
            let residual = duality::dual_residual_phased(
                &vec,
                *lambda,
                &alpha.value,
                *energy,
                x,
            )?;
            let mut art = Artifact::new(vec![
                ("lambda", fmt_f64(*lambda)),
                ("E", fmt_f64(*energy)),
                ("alpha", alpha.spec.clone()),
                ("budget", budget.to_string()),
                ("h", fmt_f64(*h)),
                ("h_tilde", fmt_f64(*h_tilde)),
                ("umax", umax.to_string()),
            ]);
            art.extra_meta = vec![
                ("degree", json!(b.degree())),
                ("fiber_phase", json!(x)),
                ("dual_residual", json!(residual)),
                ("center_candidates", json!(vec.center_candidates)),
            ];
            art.columns = vec!["u", "re", "im", "abs"];
            art.rows = vec
                .values
                .iter()
                .map(|(&u, v)| {
                    vec![u.to_string(), fmt_f64(v.re), fmt_f64(v.im), fmt_f64(v.norm())]
                })
                .collect();
            Ok(art)
        }
        Command::Growth { lambda, alpha, energy, eps, eps0, n_max } => {
            let report =
                growth::growth_report(*lambda, &alpha.value, *energy, *eps, *eps0, *n_max)?;
            let mut art = Artifact::new(vec![
                ("lambda", fmt_f64(*lambda)),
                ("alpha", alpha.spec.clone()),
                ("E", fmt_f64(*energy)),
                ("eps", fmt_f64(*eps)),
                ("eps0", fmt_f64(*eps0)),
                ("N", n_max.to_string()),
            ]);
            for r in report.rows.iter().filter(|r| !r.verdict) {
                art.violations.push(format!(
                    "n = {}: measured exponent {:.4} outside envelope band {:.4} +/- {}",
                    r.n, r.exponent, r.f, report.eps_tol
                ));
            }
            art.extra_meta = vec![
                ("rho", json!(report.rho.value)),
                ("rho_error_bar", json!(report.rho.error_bar)),
                ("ell", json!(report.envelope.ell)),
                ("eta", json!(report.envelope.eta)),
                ("eps_tol", json!(report.eps_tol)),
                ("max_exponent", json!(report.max_exponent())),
            ];
            art.columns = vec!["n", "exponent", "exponent_op", "f", "verdict"];
            art.rows = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        fmt_f64(r.exponent),
                        fmt_f64(r.exponent_op),
                        fmt_f64(r.f),
                        r.verdict.to_string(),
                    ]
                })
                .collect();
            art.json_data = Some(serde_json::to_value(&report).expect("serializable report"));
            Ok(art)
        }
        Command::GrowthEnvelope { lambda, alpha, energy, eps, eps0, n_max, n_rot } => {
            let af = alpha.value.approx_f64();
            let rho = cocycle::rotation_number(&CocycleMap::amo(*lambda, *energy), af, *n_rot, 0.0)?;
            let env = EnvelopeSpec::build(*lambda, &alpha.value, rho.value, *eps, *eps0, 256)?;
            let mut art = Artifact::new(vec![
                ("lambda", fmt_f64(*lambda)),
                ("alpha", alpha.spec.clone()),
                ("E", fmt_f64(*energy)),
                ("eps", fmt_f64(*eps)),
                ("eps0", fmt_f64(*eps0)),
                ("N", n_max.to_string()),
                ("n_rot", n_rot.to_string()),
            ]);
            art.extra_meta = vec![
                ("rho", json!(rho.value)),
                ("rho_error_bar", json!(rho.error_bar)),
                ("ell", json!(env.ell)),
                ("eta", json!(env.eta.iter().map(|&e| fmt_f64(e)).collect::<Vec<_>>())),
                (
                    "peaks",
                    json!((0..env.ell.len()).map(|j| env.peak(j)).collect::<Vec<_>>()),
                ),
            ];
            art.columns = vec!["n", "f", "in_window"];
            if *n_max < 2 {
                return Err(Error::Invalid("--N must be >= 2".into()));
            }
            let count = 240usize;
            let lo = 2f64.ln();
            let hi = (*n_max as f64).ln();
            let mut last = 0i64;
            for i in 0..count {
                let n = (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp().round()
                    as i64;
                let n = n.clamp(2, *n_max);
                if n == last {
                    continue;
                }
                last = n;
                match env.envelope_f(n) {
                    Ok(f) => art.rows.push(vec![n.to_string(), fmt_f64(f), "true".into()]),
                    Err(_) => art.rows.push(vec![n.to_string(), String::new(), "false".into()]),
                }
            }
            Ok(art)
        }
        Command::Resonances { alpha, rho, eps0, kmax } => {
            let seq = alpha.value.resonances(&rational_from_f64(*rho)?, *eps0, *kmax)?;
            let mut art = Artifact::new(vec![
                ("alpha", alpha.spec.clone()),
                ("rho", fmt_f64(*rho)),
                ("eps0", fmt_f64(*eps0)),
                ("kmax", kmax.to_string()),
            ]);
            art.extra_meta = vec![("count", json!(seq.entries.len()))];
            art.columns = vec!["ell", "log_norm", "eta", "exact"];
            art.rows = seq
                .entries
                .iter()
                .map(|r| {
                    vec![
                        r.ell.to_string(),
                        r.log_norm.map(fmt_f64).unwrap_or_default(),
                        r.eta.map(fmt_f64).unwrap_or_default(),
                        r.log_norm.is_none().to_string(),
                    ]
                })
                .collect();
            art.json_data = Some(serde_json::to_value(&seq).expect("serializable scan"));
            Ok(art)
        }
    }
}

/// RFC-4180 field quoting; the `#` header block above the table is a comment
/// convention for plot tools, not part of the CSV body.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(meta: &[(String, String)], art: &Artifact) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let _ = writeln!(
        out,
        "{}",
        art.columns.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",")
    );
    for row in &art.rows {
        let _ = writeln!(
            out,
            "{}",
            row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",")
        );
    }
    out
}

fn render_json(meta: &[(String, String)], art: &Artifact) -> String {
    let mut meta_map = serde_json::Map::new();
    for (k, v) in meta {
        meta_map.insert(k.clone(), Value::String(v.clone()));
    }
    for (k, v) in &art.extra_meta {
        meta_map.insert((*k).to_string(), v.clone());
    }
    let data = art.json_data.clone().unwrap_or_else(|| {
        let rows: Vec<Value> = art
            .rows
            .iter()
            .map(|row| {
                let mut obj = serde_json::Map::new();
                for (c, f) in art.columns.iter().zip(row) {
                    obj.insert((*c).to_string(), Value::String(f.clone()));
                }
                Value::Object(obj)
            })
            .collect();
        Value::Array(rows)
    });
    let doc = json!({ "meta": Value::Object(meta_map), "data": data });
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable document");
    s.push('\n');
    s
}

fn effective_precision(cli_precision: Precision) -> Result<Precision> {
    match std::env::var("COCYCLE_LAB_PRECISION") {
        Ok(v) => match v.to_ascii_lowercase().as_str() {
            "double" => Ok(Precision::Double),
            "extended" => Ok(Precision::Extended),
            other => Err(Error::Invalid(format!(
                "COCYCLE_LAB_PRECISION: '{other}' is not a precision (double | extended)"
            ))),
        },
        Err(_) => Ok(cli_precision),
    }
}

fn run(cli: &Cli) -> Result<i32> {
    let precision = effective_precision(cli.output.precision)?;
    if precision == Precision::Extended {
        return Err(Error::Unsupported(
            "extended precision is not available in this build; use --precision double"
                .into(),
        ));
    }
    let name = cli.command.name();
    let format = match (&cli.output.format, &cli.output.out) {
        (Some(f), _) => *f,
        (None, Some(p)) => match p.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            _ => cli.command.default_format(),
        },
        (None, None) => cli.command.default_format(),
    };
    let out_path = cli.output.out.clone().unwrap_or_else(|| {
        PathBuf::from(format!(
            "{name}.{}",
            match format {
                Format::Csv => "csv",
                Format::Json => "json",
            }
        ))
    });

    let art = run_command(&cli.command)?;

    let mut meta: Vec<(String, String)> = vec![
        (
            "artifact".into(),
            format!("cocycle-lab v{}", env!("CARGO_PKG_VERSION")),
        ),
        ("command".into(), name.to_string()),
        ("precision".into(), "double".into()),
        ("strict".into(), cli.output.strict.to_string()),
    ];
    for (k, v) in &art.params {
        meta.push((format!("param {k}"), v.clone()));
    }
    if art.partial {
        meta.push(("partial".into(), "true".into()));
    }
    let body = match format {
        Format::Csv => {
            let mut m = meta.clone();
            for (k, v) in &art.extra_meta {
                let text = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                m.push(((*k).to_string(), text));
            }
            render_csv(&m, &art)
        }
        Format::Json => {
            let mut m = meta.clone();
            if art.partial {
                // Already present; keep the key unique for the JSON map.
                m.retain(|(k, _)| k != "partial");
                m.push(("partial".into(), "true".into()));
            }
            render_json(&m, &art)
        }
    };
    std::fs::write(&out_path, body)?;
    eprintln!("wrote {} ({} rows)", out_path.display(), art.rows.len());

    for v in &art.violations {
        eprintln!("bound violation: {v}");
    }
    if cli.output.strict && !art.violations.is_empty() {
        eprintln!(
            "strict mode: {} bound violation(s); failing",
            art.violations.len()
        );
        return Ok(4);
    }
    if art.partial {
        eprintln!("computation budget exhausted; results are partial");
        return Ok(3);
    }
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
