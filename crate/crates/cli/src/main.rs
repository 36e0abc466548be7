use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vstruct_core::asymptotics::{crossover_root, detectability, Side};
use vstruct_core::exact_moments::ExactMoments;
use vstruct_core::montecarlo::{simulate, McConfig};
use vstruct_core::oracle::{enumerate_moments, DEFAULT_N_MAX, RECONCILE_TOL};
use vstruct_core::params_io::{ParamPoint, ParamSources};
use vstruct_core::special_sums::{hyp_form, lower_bound_threshold, pos_binom_recip, pos_binom_recip_peak};
use vstruct_core::sweep::{run_sweep, threads_from_env, write_csv, write_csv_file, SweepSpec};
use vstruct_core::{relative_deviation, DegeneracyPolicy, Error};

mod report;

use report::{Format, Report, RunHeader};

#[derive(Parser, Debug)]
#[command(name = "vstruct", version, about = "Finite-sample moments of causal effect estimators for X -> Y <- Z")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Parameter file, key=value or JSON; may be repeated (JSON wins on conflicts)
    #[arg(long = "params-file", global = true, value_name = "PATH")]
    params_files: Vec<PathBuf>,
    /// Single parameter override, e.g. `--param c=0.1`; beats every file
    #[arg(long = "param", global = true, value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Write the result here instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: VSTRUCT_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact means and variances of both estimators
    Exact {
        #[arg(long)]
        n: u64,
    },
    /// Grid sweep to CSV
    Sweep {
        #[arg(long, value_name = "PATH")]
        spec: PathBuf,
    },
    /// Monte Carlo estimate of both estimators' moments
    Mc {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 100_000)]
        replicates: u64,
        #[arg(long, default_value = "drop")]
        policy: DegeneracyPolicy,
    },
    /// Moments by full enumeration of the multinomial outcomes
    Oracle {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value = "paper-convention")]
        policy: DegeneracyPolicy,
    },
    /// Crossover strength, detectability thresholds and regime labels
    Regimes {
        #[arg(long)]
        n: u64,
        /// Also locate the finite-N zero of the variance gap on both sides of C = 0
        #[arg(long)]
        crossover: bool,
    },
    /// Evaluate the binomial reciprocal sum S(m, z)
    #[command(hide = true)]
    Sums {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        z: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn load_point(global: &Global) -> Result<ParamPoint, Failure> {
    let mut sources = ParamSources::new();
    for path in &global.params_files {
        sources.add_file(path)?;
    }
    for p in &global.params {
        sources.set(p)?;
    }
    if sources.is_empty() {
        return Err(Failure::Usage(
            "no parameters given; use --params-file or --param".into(),
        ));
    }
    let point = sources.resolve();
    for w in sources.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(point?)
}

fn threads(global: &Global) -> Result<usize, Failure> {
    match global.threads {
        Some(t) => Ok(t),
        None => Ok(threads_from_env()?),
    }
}

fn emit(global: &Global, text: &str) -> Outcome {
    match &global.out {
        Some(path) => std::fs::write(path, text).map_err(|source| {
            Failure::Core(Error::Io {
                path: path.clone(),
                source,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn finish(global: &Global, header: &RunHeader, report: &Report) -> Outcome {
    let format = global.format.unwrap_or(Format::Text);
    if format == Format::Csv {
        for line in header.lines() {
            eprintln!("# {line}");
        }
    }
    emit(global, &report.render(format, header))
}

fn cmd_exact(global: &Global, n: u64) -> Outcome {
    let point = load_point(global)?;
    let p = point.params()?;
    let exact = ExactMoments::default();
    let mut r = Report::new();
    r.int("N", n)
        .num("true_effect", p.true_effect())
        .num("E_R", exact.mean_raw(&p)?)
        .num("V_R", exact.var_raw(&p, n)?)
        .num("E_M", exact.mean_marginal(&p)?)
        .num("V_M", exact.var_marginal(&p, n)?)
        .num("delta", exact.delta_relative(&p, n)?)
        .num("V_M_thirteen_term", exact.var_marginal_thirteen_term(&p, n)?)
        .num("V_M_empty_stratum_term", exact.empty_stratum_correction(&p, n)?);
    let bounds = exact.var_raw_bounds(&p, n)?;
    r.opt("V_R_lower_bound", bounds.lower).num("V_R_upper_bound", bounds.upper);
    let header = RunHeader {
        params: Some(point),
        ..RunHeader::new("exact")
    }
    .with("degeneracy", "paper-convention");
    finish(global, &header, &r)
}

fn cmd_sweep(global: &Global, spec_path: &Path) -> Outcome {
    let spec = SweepSpec::from_file(spec_path)?;
    let workers = threads(global)?;
    let out = run_sweep(&spec, workers)?;
    let columns = spec.columns();
    let header = RunHeader::new("sweep")
        .with("spec", spec_path.display())
        .with("rows", out.summary.rows)
        .with("invalid_rows", out.summary.invalid_rows);
    let format = global.format.unwrap_or(Format::Csv);
    let target = global.out.clone().or_else(|| spec.output.clone());

    match format {
        Format::Csv => {
            match &target {
                Some(path) => write_csv_file(&out.rows, &columns, path)?,
                None => {
                    let stdout = std::io::stdout();
                    write_csv(&out.rows, &columns, stdout.lock())?;
                }
            }
            let mut err = std::io::stderr().lock();
            for line in header.lines() {
                let _ = writeln!(err, "# {line}");
            }
            if let Some(path) = &target {
                let _ = writeln!(err, "# wrote {}", path.display());
            }
            for c in &out.summary.contour {
                let _ = writeln!(
                    err,
                    "# zero crossing: {}={:.6} {}={:.6} (c_star {:.6})",
                    out.summary.outer_axis,
                    c.outer,
                    out.summary.inner_axis.as_deref().unwrap_or("-"),
                    c.crossing,
                    c.c_star
                );
            }
            Ok(())
        }
        Format::Json => {
            let doc = serde_json::json!({
                "run": header.to_json(),
                "summary": out.summary,
                "rows": out.rows,
            });
            let text = format!("{}\n", serde_json::to_string_pretty(&doc).expect("serialisable"));
            match target {
                Some(path) => std::fs::write(&path, text)
                    .map_err(|source| Failure::Core(Error::Io { path, source })),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Format::Text => {
            let mut text: String = header.lines().iter().map(|l| format!("# {l}\n")).collect();
            text.push_str(&format!(
                "{:>12}  {:>12}  {:>12}\n",
                out.summary.outer_axis,
                out.summary.inner_axis.as_deref().unwrap_or("-"),
                "c_star"
            ));
            for c in &out.summary.contour {
                text.push_str(&format!("{:>12.6}  {:>12.6}  {:>12.6}\n", c.outer, c.crossing, c.c_star));
            }
            emit(global, &text)
        }
    }
}

fn cmd_mc(global: &Global, n: u32, replicates: u64, policy: DegeneracyPolicy) -> Outcome {
    let point = load_point(global)?;
    let p = point.params()?;
    let cfg = McConfig::new(replicates, n, global.seed)
        .policy(policy)
        .threads(threads(global)?);
    let res = simulate(&p, &cfg)?;
    let exact = ExactMoments::default();
    let mut r = Report::new();
    r.int("N", u64::from(n)).int("replicates", replicates);
    for (name, s, exact_var) in [
        ("R", &res.raw, exact.var_raw(&p, u64::from(n)).ok()),
        ("M", &res.marginal, exact.var_marginal(&p, u64::from(n)).ok()),
    ] {
        r.num(&format!("mean_{name}"), s.mean)
            .num(&format!("var_{name}"), s.variance)
            .num(&format!("var_{name}_se"), s.variance_se)
            .int(&format!("degenerate_{name}"), s.degenerate)
            .int(&format!("used_{name}"), s.used)
            .opt(&format!("exact_var_{name}"), exact_var)
            .opt(
                &format!("z_var_{name}"),
                exact_var.map(|v| (s.variance - v) / s.variance_se),
            );
    }
    let header = RunHeader {
        params: Some(point),
        seed: Some(global.seed),
        ..RunHeader::new("mc")
    }
    .with("degeneracy", policy)
    .with("rng", "chacha8, stream = replicate index");
    finish(global, &header, &r)
}

fn cmd_oracle(global: &Global, n: u32, policy: DegeneracyPolicy) -> Outcome {
    let point = load_point(global)?;
    let p = point.params()?;
    let o = enumerate_moments(&p, n, policy)?;
    let mut r = Report::new();
    r.int("N", u64::from(n))
        .int("outcomes", o.outcomes)
        .num("total_probability", o.total_probability)
        .num("degenerate_probability_R", o.degenerate_probability_raw)
        .num("degenerate_probability_M", o.degenerate_probability_marginal);
    let raw = o.raw.as_ref();
    let marg = o.marginal.as_ref();
    r.opt("E_R", raw.map(|x| x.mean))
        .opt("V_R", raw.map(|x| x.variance))
        .opt("C_R1_R0", raw.map(|x| x.cov_r1_r0))
        .opt("E_M", marg.map(|x| x.mean))
        .opt("V_M", marg.map(|x| x.variance));
    if policy == DegeneracyPolicy::PaperConvention {
        let exact = ExactMoments::default();
        let nn = u64::from(n);
        let checks = [
            ("E_R", raw.map(|x| x.mean), exact.mean_raw(&p).ok()),
            ("V_R", raw.map(|x| x.variance), exact.var_raw(&p, nn).ok()),
            ("E_M", marg.map(|x| x.mean), exact.mean_marginal(&p).ok()),
            ("V_M", marg.map(|x| x.variance), exact.var_marginal(&p, nn).ok()),
        ];
        let mut agree = true;
        for (name, oracle, closed) in checks {
            r.opt(&format!("closed_form_{name}"), closed);
            let dev = match (oracle, closed) {
                (Some(a), Some(b)) => Some(relative_deviation(a, b)),
                _ => None,
            };
            agree &= dev.is_some_and(|d| d <= RECONCILE_TOL);
            r.opt(&format!("deviation_{name}"), dev);
        }
        r.flag("closed_forms_agree", agree);
    }
    let header = RunHeader {
        params: Some(point),
        ..RunHeader::new("oracle")
    }
    .with("degeneracy", policy)
    .with("enumeration_limit", DEFAULT_N_MAX);
    finish(global, &header, &r)
}

fn cmd_regimes(global: &Global, n: u64, crossover: bool) -> Outcome {
    let point = load_point(global)?;
    let rq = point.reparam().ok_or_else(|| {
        Failure::Core(Error::Domain(
            "conditionals do not share one C across X strata; give q0, q1, c".into(),
        ))
    })?;
    let rep = detectability(&rq, n)?;
    let mut r = Report::new();
    r.int("N", n)
        .num("C", rq.c)
        .num("vR_expansion", rep.vr_expansion)
        .num("vM_expansion", rep.vm_expansion)
        .num("delta_leading", rep.delta_leading)
        .num("delta_exact", rep.delta_exact)
        .num("c_star", rep.c_star)
        .num("c_aic", rep.c_aic)
        .num("c_bic", rep.c_bic)
        .num("e_delta_loglik", rep.e_delta_loglik)
        .opt("e_delta_loglik_exact_kl", rep.e_delta_loglik_exact_kl)
        .num("e_delta_aic", rep.e_delta_aic)
        .num("e_delta_bic", rep.e_delta_bic)
        .text("regime_aic", rep.regime_aic.as_str())
        .text("regime_bic", rep.regime_bic.as_str());
    if crossover {
        r.opt("crossover_positive", crossover_root(&rq, n, Side::Positive)?)
            .opt("crossover_negative", crossover_root(&rq, n, Side::Negative)?.map(|c| -c));
    }
    let header = RunHeader {
        params: Some(point),
        ..RunHeader::new("regimes")
    }
    .with("variance_gap", rep.method.variance_gap)
    .with("threshold_form", "quadratic");
    finish(global, &header, &r)
}

fn cmd_sums(global: &Global, m: u64, z: f64) -> Outcome {
    let mut r = Report::new();
    r.int("m", m).num("z", z).num("S", pos_binom_recip(m, z)?);
    for shift in 0..=2u8 {
        if u64::from(shift) < m {
            r.num(&format!("hyp_form_shift{shift}"), hyp_form(m, shift, z)?);
        }
    }
    let (zp, sp) = pos_binom_recip_peak(m)?;
    r.num("lower_bound_threshold", lower_bound_threshold(m))
        .num("peak_z", zp)
        .num("peak_S", sp);
    finish(global, &RunHeader::new("sums"), &r)
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::Exact { n } => cmd_exact(g, *n),
        Command::Sweep { spec } => cmd_sweep(g, spec),
        Command::Mc {
            n,
            replicates,
            policy,
        } => cmd_mc(g, *n, *replicates, *policy),
        Command::Oracle { n, policy } => cmd_oracle(g, *n, *policy),
        Command::Regimes { n, crossover } => cmd_regimes(g, *n, *crossover),
        Command::Sums { m, z } => cmd_sums(g, *m, *z),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
