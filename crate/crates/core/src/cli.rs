//! Command-line interface. [`run_cli`] parses arguments, runs a subcommand
//! and returns the process exit status: 0 on success, 1 on validation or
//! solver failures, 2 on usage errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::benchmark::{redistribute_surplus, solve_benchmark, BenchmarkConfig, Redistribution};
use crate::bnb::{solve_bnb, DEFAULT_ALPHA, DEFAULT_NODE_LIMIT};
use crate::error::{Error, Result};
use crate::heuristic::solve_heuristic;
use crate::envelope::build_envelopes;
use crate::lp::{build_relaxation, relaxation_upper_bound};
use crate::report::{cdf_json, edr_cdf, json_num, metrics_report, read_plan, sig, write_cdf_csv, write_plan, MetricsReport};
use crate::scenario::{generate_scenario, Attribute, GeneratorConfig, Marginals, Params, Scenario, TauSource};
use crate::stats::{correlation_table, DEFAULT_COLS, DEFAULT_ROWS};
use crate::utility::{validate_feasibility, AllocationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarginalsKind {
    Survey,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RedistributeArg {
    Global,
    PerArea,
    None,
}

#[derive(Debug, Parser)]
#[command(name = "commrestore", version, about = "Post-disaster communication resource allocation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Parameter file (`key = value` lines); flags below override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Total deployable capacity in Gbps.
    #[arg(long, global = true)]
    pub smax_gbps: Option<f64>,
    /// Freeze-out in slots.
    #[arg(long, global = true)]
    pub delta: Option<usize>,
    /// Sigmoid steepness per Mbps.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Attribute supplying the utility weight.
    #[arg(long, global = true, value_parser = parse_tau)]
    pub tau: Option<TauSource>,
    /// Number of slots.
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Target relative gap for branch and bound.
    #[arg(long, global = true, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Every guaranteed user must be served by its deadline.
    #[arg(long, global = true)]
    pub strict_phi: bool,
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    /// Household CSV.
    #[arg(long, value_name = "FILE")]
    pub scenario: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic household file.
    Generate {
        #[arg(long, default_value_t = 10)]
        areas: usize,
        #[arg(long, default_value_t = 2)]
        min_users: usize,
        #[arg(long, default_value_t = 8)]
        max_users: usize,
        #[arg(long, value_enum, default_value_t = MarginalsKind::Survey)]
        marginals: MarginalsKind,
        /// Probability that hardship follows vulnerability.
        #[arg(long, default_value_t = 0.0)]
        hardship_link: f64,
        /// Probability that tolerance falls with vulnerability.
        #[arg(long, default_value_t = 0.0)]
        tolerance_link: f64,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the rounding heuristic and report metrics.
    Solve {
        #[command(flatten)]
        input: ScenarioArg,
        #[command(flatten)]
        outputs: ReportOutputs,
        #[arg(long, value_name = "FILE")]
        trace_out: Option<PathBuf>,
    },
    /// Relaxation bound, heuristic objective and branch-and-bound bounds.
    Bound {
        #[command(flatten)]
        input: ScenarioArg,
        #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
        node_limit: usize,
        #[arg(long, value_name = "FILE")]
        progress_out: Option<PathBuf>,
        /// Best plan found by branch and bound.
        #[arg(long, value_name = "FILE")]
        plan_out: Option<PathBuf>,
        /// Root relaxation in tabular text form.
        #[arg(long, value_name = "FILE")]
        lp_out: Option<PathBuf>,
    },
    /// Run the admission benchmark and report metrics.
    Benchmark {
        #[command(flatten)]
        input: ScenarioArg,
        #[command(flatten)]
        outputs: ReportOutputs,
        #[arg(long, value_enum, default_value_t = RedistributeArg::Global)]
        redistribute: RedistributeArg,
    },
    /// EDR distributions of both solvers, per group.
    Compare {
        #[command(flatten)]
        input: ScenarioArg,
        /// Grouping attribute; defaults to the weight attribute.
        #[arg(long, value_parser = parse_attribute)]
        group_by: Option<Attribute>,
        #[arg(long, value_enum, default_value_t = RedistributeArg::Global)]
        redistribute: RedistributeArg,
    },
    /// Correlations between household attributes.
    Correlate {
        #[command(flatten)]
        input: ScenarioArg,
    },
    /// Check a plan file against the scenario's constraints.
    Validate {
        #[command(flatten)]
        input: ScenarioArg,
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ReportOutputs {
    #[arg(long, value_name = "FILE")]
    pub plan_out: Option<PathBuf>,
    /// Per-user metrics.
    #[arg(long, value_name = "FILE")]
    pub users_out: Option<PathBuf>,
    /// Per-group aggregates.
    #[arg(long, value_name = "FILE")]
    pub groups_out: Option<PathBuf>,
    /// Utility per area.
    #[arg(long, value_name = "FILE")]
    pub areas_out: Option<PathBuf>,
    /// Utility per slot.
    #[arg(long, value_name = "FILE")]
    pub slots_out: Option<PathBuf>,
    /// Grouping attribute; defaults to the weight attribute.
    #[arg(long, value_parser = parse_attribute)]
    pub group_by: Option<Attribute>,
}

fn parse_tau(s: &str) -> std::result::Result<TauSource, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_attribute(s: &str) -> std::result::Result<Attribute, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl GlobalArgs {
    pub fn params(&self) -> Result<Params> {
        let mut p = match &self.params {
            Some(path) => Params::load(path)?,
            None => Params::default(),
        };
        if let Some(v) = self.smax_gbps {
            p.smax_mbps = v * 1000.0;
        }
        if let Some(v) = self.delta {
            p.delta = v;
        }
        if let Some(v) = self.theta {
            p.theta = v;
        }
        if let Some(v) = self.tau {
            p.tau_source = v;
        }
        if let Some(v) = self.horizon {
            p.horizon = v;
        }
        p.validate()?;
        Ok(p)
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn io_to(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn emit_summary(out: &mut dyn Write, format: Format, rows: &[(&str, String)], extra: Option<Value>) -> Result<()> {
    let stdout = Path::new("<stdout>");
    match format {
        Format::Csv => {
            writeln!(out, "metric,value").map_err(io_to(stdout))?;
            for (k, v) in rows {
                writeln!(out, "{k},{v}").map_err(io_to(stdout))?;
            }
        }
        Format::Json => {
            let mut obj = serde_json::Map::new();
            for (k, v) in rows {
                let value = match (v.parse::<i64>(), v.parse::<f64>()) {
                    (Ok(n), _) => Value::from(n),
                    (_, Ok(x)) if v.chars().any(|c| c.is_ascii_digit()) => json_num(x),
                    _ if v.is_empty() => Value::Null,
                    _ => Value::String(v.clone()),
                };
                obj.insert((*k).to_string(), value);
            }
            if let Some(Value::Object(more)) = extra {
                obj.extend(more);
            }
            let text = serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values serialize");
            writeln!(out, "{text}").map_err(io_to(stdout))?;
        }
    }
    Ok(())
}

fn write_reports(scenario: &Scenario, plan: &AllocationPlan, report: &MetricsReport, outputs: &ReportOutputs) -> Result<()> {
    if let Some(path) = &outputs.plan_out {
        write_file(path, |w| write_plan(scenario, plan, w))?;
    }
    if let Some(path) = &outputs.users_out {
        write_file(path, |w| report.write_users_csv(w).map_err(io_to(path)))?;
    }
    if let Some(path) = &outputs.groups_out {
        write_file(path, |w| report.write_groups_csv(w).map_err(io_to(path)))?;
    }
    if let Some(path) = &outputs.areas_out {
        write_file(path, |w| report.write_areas_csv(w).map_err(io_to(path)))?;
    }
    if let Some(path) = &outputs.slots_out {
        write_file(path, |w| report.write_slots_csv(w).map_err(io_to(path)))?;
    }
    Ok(())
}

fn redistribution(arg: RedistributeArg) -> Option<Redistribution> {
    match arg {
        RedistributeArg::Global => Some(Redistribution::Global),
        RedistributeArg::PerArea => Some(Redistribution::PerArea),
        RedistributeArg::None => None,
    }
}

fn benchmark_plan(scenario: &Scenario, strict: bool, redistribute: RedistributeArg) -> Result<(AllocationPlan, usize, bool)> {
    let config = BenchmarkConfig {
        strict,
        ..BenchmarkConfig::default()
    };
    let mut plan = solve_benchmark(scenario, &config)?;
    if let Some(mode) = redistribution(redistribute) {
        plan = redistribute_surplus(scenario, &plan, mode);
    }
    Ok((plan.to_allocation_plan(scenario), plan.served_count, plan.optimal))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let g = &cli.global;
    let params = g.params()?;
    let load = |input: &ScenarioArg| Scenario::load(&input.scenario, params);
    let default_group = Attribute::from(params.tau_source);
    match &cli.command {
        Command::Generate {
            areas,
            min_users,
            max_users,
            marginals,
            hardship_link,
            tolerance_link,
            out: path,
        } => {
            let marginals = match marginals {
                MarginalsKind::Survey => Marginals::survey_like(params.horizon),
                MarginalsKind::Uniform => Marginals::uniform(params.horizon),
            };
            let mut config = GeneratorConfig::new(g.seed, *areas, (*min_users, *max_users), marginals);
            config.hardship_link = *hardship_link;
            config.tolerance_link = *tolerance_link;
            let scenario = generate_scenario(&config, params)?;
            let emit = |w: &mut dyn Write| -> Result<()> {
                match g.format {
                    Format::Csv => scenario.write_csv(w),
                    Format::Json => {
                        let text = serde_json::to_string_pretty(&scenario.households).expect("households serialize");
                        writeln!(w, "{text}").map_err(io_to(Path::new("<output>")))
                    }
                }
            };
            match path {
                Some(p) => write_file(p, emit)?,
                None => emit(out)?,
            }
        }
        Command::Solve { input, outputs, trace_out } => {
            let scenario = load(input)?;
            let trace = solve_heuristic(&scenario)?;
            let plan = &trace.final_plan;
            let report = metrics_report(&scenario, plan, outputs.group_by.unwrap_or(default_group), Some(trace.upper_bound));
            write_reports(&scenario, plan, &report, outputs)?;
            if let Some(path) = trace_out {
                write_file(path, |w| trace.write_csv(&scenario, w).map_err(io_to(path)))?;
            }
            let mut rows = report.summary();
            rows.push(("iterations", trace.iterations.len().to_string()));
            rows.push(("served_areas", plan.serve_slots().iter().flatten().count().to_string()));
            let extra = (g.format == Format::Json).then(|| json!({ "report": report.to_json() }));
            emit_summary(out, g.format, &rows, extra)?;
        }
        Command::Bound {
            input,
            node_limit,
            progress_out,
            plan_out,
            lp_out,
        } => {
            let scenario = load(input)?;
            if let Some(path) = lp_out {
                let envelopes = build_envelopes(&scenario)?;
                let lp = build_relaxation(&scenario, &envelopes, &Default::default());
                write_file(path, |w| lp.write_text(w).map_err(io_to(path)))?;
            }
            let relaxation = relaxation_upper_bound(&scenario)?;
            let heuristic = solve_heuristic(&scenario)?;
            let bnb = solve_bnb(&scenario, g.alpha, *node_limit)?;
            if let Some(path) = progress_out {
                write_file(path, |w| bnb.write_progress_csv(w).map_err(io_to(path)))?;
            }
            if let Some(path) = plan_out {
                write_file(path, |w| write_plan(&scenario, &bnb.best_plan, w))?;
            }
            let heuristic_gap = if relaxation > 0.0 {
                (relaxation - heuristic.true_objective) / relaxation
            } else {
                0.0
            };
            let rows = vec![
                ("relaxation_upper_bound", sig(relaxation)),
                ("heuristic_objective", sig(heuristic.true_objective)),
                ("heuristic_gap", sig(heuristic_gap)),
                ("bnb_lower_bound", sig(bnb.lower_bound)),
                ("bnb_upper_bound", sig(bnb.upper_bound)),
                ("bnb_gap", sig(bnb.gap_alpha)),
                ("bnb_nodes", bnb.nodes_explored.to_string()),
                (
                    "bnb_status",
                    serde_json::to_value(bnb.status)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                ),
            ];
            emit_summary(out, g.format, &rows, None)?;
        }
        Command::Benchmark {
            input,
            outputs,
            redistribute,
        } => {
            let scenario = load(input)?;
            let (plan, served, optimal) = benchmark_plan(&scenario, g.strict_phi, *redistribute)?;
            let report = metrics_report(&scenario, &plan, outputs.group_by.unwrap_or(default_group), None);
            write_reports(&scenario, &plan, &report, outputs)?;
            let mut rows = report.summary();
            rows.push(("served_count", served.to_string()));
            rows.push(("optimal", optimal.to_string()));
            let extra = (g.format == Format::Json).then(|| json!({ "report": report.to_json() }));
            emit_summary(out, g.format, &rows, extra)?;
        }
        Command::Compare {
            input,
            group_by,
            redistribute,
        } => {
            let scenario = load(input)?;
            let heuristic = solve_heuristic(&scenario)?;
            let (bench, _, _) = benchmark_plan(&scenario, g.strict_phi, *redistribute)?;
            let group = Some(group_by.unwrap_or(default_group));
            let mut rows = edr_cdf(&scenario, &heuristic.final_plan, "heuristic", group);
            rows.extend(edr_cdf(&scenario, &bench, "benchmark", group));
            let stdout = Path::new("<stdout>");
            match g.format {
                Format::Csv => write_cdf_csv(&rows, &mut *out).map_err(io_to(stdout))?,
                Format::Json => {
                    let text = serde_json::to_string_pretty(&cdf_json(&rows)).expect("JSON values serialize");
                    writeln!(out, "{text}").map_err(io_to(stdout))?;
                }
            }
        }
        Command::Correlate { input } => {
            let scenario = load(input)?;
            let report = correlation_table(&scenario, &DEFAULT_ROWS, &DEFAULT_COLS);
            let stdout = Path::new("<stdout>");
            match g.format {
                Format::Csv => report.write_csv(&mut *out).map_err(io_to(stdout))?,
                Format::Json => {
                    let text = serde_json::to_string_pretty(&report.to_json()).expect("JSON values serialize");
                    writeln!(out, "{text}").map_err(io_to(stdout))?;
                }
            }
        }
        Command::Validate { input, plan } => {
            let scenario = load(input)?;
            let file = File::open(plan).map_err(|e| Error::io(plan, e))?;
            let parsed = read_plan(&scenario, file)?;
            let violations = validate_feasibility(&scenario, &parsed);
            let stdout = Path::new("<stdout>");
            match g.format {
                Format::Csv => {
                    writeln!(out, "kind,message").map_err(io_to(stdout))?;
                    for v in &violations {
                        writeln!(out, "{},{}", v.kind.tag(), v.message.replace(',', ";")).map_err(io_to(stdout))?;
                    }
                }
                Format::Json => {
                    let list: Vec<Value> = violations
                        .iter()
                        .map(|v| json!({"kind": v.kind.tag(), "message": v.message}))
                        .collect();
                    let text = serde_json::to_string_pretty(&json!({ "violations": list })).expect("JSON values serialize");
                    writeln!(out, "{text}").map_err(io_to(stdout))?;
                }
            }
            if !violations.is_empty() {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Runs the CLI on `args` (including the program name).
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Argument(_) => 2,
                _ => 1,
            }
        }
    }
}
