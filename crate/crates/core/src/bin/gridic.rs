use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridic::engine::{IntegrationMethod, SolverConfig};
use gridic::grid::{solve_power_flow, PowerFlowOptions};
use gridic::netlist::export_spice_netlist;
use gridic::oracle::{compare_series, default_tolerances, run_reference_dae, Tolerances};
use gridic::scenario::cdf::parse_cdf;
use gridic::scenario::{
    case_to_json, compile_case, parse_case, read_csv, run_scenario, write_csv, write_csv_to, Case, ProbeSpec,
    ScenarioConfig,
};

const USAGE: u8 = 1;
const CONVERGENCE: u8 = 2;
const MISMATCH: u8 = 3;

/// Power-system transient stability through behavioral circuit simulation.
#[derive(Debug, Parser)]
#[command(name = "gridic", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the power flow and print bus voltages and injections.
    Powerflow {
        #[command(flatten)]
        case: CaseArgs,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the transient scenario and write the probed channels as CSV.
    Run {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Integrate with the direct DAE reference instead of the circuit.
        #[arg(long)]
        reference: bool,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compile the case and export the SPICE-dialect netlist.
    Netlist {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two CSV runs channel by channel.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// `PREFIX=TOL` per channel prefix, or a bare `TOL` for every
        /// channel. Without any, |V| 1e-2, ω 1e-3 and δ 0.05 apply.
        #[arg(long = "tol")]
        tolerances: Vec<String>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Convert an IEEE Common Data Format file to a JSON case.
    ConvertCdf {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CaseArgs {
    /// Case file (JSON).
    #[arg(long)]
    case: PathBuf,
    /// Start the power flow from the voltages stored in the case.
    #[arg(long)]
    seed_voltages: bool,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 20.0)]
    tstop: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// `trap` or `be`.
    #[arg(long, default_value = "trap")]
    method: IntegrationMethod,
    /// Extra channel, `NAME=EXPR` (e.g. `v4=sqrt(V(bus4_re)^2+V(bus4_im)^2)`).
    #[arg(long = "probe")]
    probes: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, e: impl Display) -> Failure {
    Failure {
        code,
        message: e.to_string(),
    }
}

impl CaseArgs {
    fn load(&self) -> Result<Case, Failure> {
        let bytes = std::fs::read(&self.case).map_err(|e| fail(USAGE, format!("{}: {e}", self.case.display())))?;
        parse_case(&bytes).map_err(|e| fail(USAGE, format!("{}: {e}", self.case.display())))
    }

    fn power_flow(&self) -> PowerFlowOptions {
        PowerFlowOptions {
            use_seed: self.seed_voltages,
            ..Default::default()
        }
    }
}

impl SimArgs {
    fn config(&self, pf: PowerFlowOptions) -> Result<ScenarioConfig, Failure> {
        let extra_probes = self
            .probes
            .iter()
            .map(|p| {
                let (name, expr) = p
                    .split_once('=')
                    .ok_or_else(|| fail(USAGE, format!("--probe `{p}`: expected NAME=EXPR")))?;
                Ok(ProbeSpec {
                    name: name.trim().to_string(),
                    expr: expr.trim().to_string(),
                })
            })
            .collect::<Result<_, Failure>>()?;
        Ok(ScenarioConfig {
            solver: SolverConfig {
                dt: self.dt,
                t_stop: self.tstop,
                method: self.method,
                ..Default::default()
            },
            power_flow: pf,
            extra_probes,
        })
    }
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| fail(USAGE, format!("{}: {e}", p.display()))),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            // A closed pipe (`| head`) is the reader's choice, not an error.
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(fail(USAGE, e)),
            _ => Ok(()),
        },
    }
}

fn parse_tolerances(specs: &[String]) -> Result<Tolerances, Failure> {
    if specs.is_empty() {
        return Ok(default_tolerances());
    }
    let mut t = Tolerances::new();
    for s in specs {
        let bad = || fail(USAGE, format!("--tol `{s}`: expected PREFIX=TOL or TOL"));
        t = match s.split_once('=') {
            Some((prefix, tol)) => t.with(prefix.trim(), tol.trim().parse().map_err(|_| bad())?),
            None => t.with_default(s.trim().parse().map_err(|_| bad())?),
        };
    }
    Ok(t)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Powerflow { case, out } => {
            let c = case.load()?;
            let code = |e: gridic::grid::GridError| {
                let conv = matches!(e, gridic::grid::GridError::Divergence { .. } | gridic::grid::GridError::SingularJacobian(_));
                fail(if conv { CONVERGENCE } else { USAGE }, e)
            };
            let pf = solve_power_flow(&c.network, &case.power_flow()).map_err(code)?;
            eprintln!("converged in {} iterations, mismatch {:.2e}", pf.iterations, pf.max_mismatch);
            let base = c.network.base_mva;
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(["bus", "vmag", "angle_deg", "p_mw", "q_mvar"]).map_err(|e| fail(USAGE, e))?;
            let mut table = format!(
                "{:>5} {:>9} {:>10} {:>10} {:>10}\n",
                "bus", "|V|", "angle", "P inj MW", "Q inj MVAr"
            );
            for (k, id) in pf.ids.iter().enumerate() {
                let (v, s) = (pf.voltages[k], pf.injections[k] * base);
                table += &format!(
                    "{id:>5} {:>9.5} {:>10.4} {:>10.3} {:>10.3}\n",
                    v.norm(),
                    v.arg().to_degrees(),
                    s.re,
                    s.im
                );
                w.write_record([
                    id.to_string(),
                    v.norm().to_string(),
                    v.arg().to_degrees().to_string(),
                    s.re.to_string(),
                    s.im.to_string(),
                ])
                .map_err(|e| fail(USAGE, e))?;
            }
            write_text(None, &table)?;
            if let Some(p) = out {
                let bytes = w.into_inner().map_err(|e| fail(USAGE, e))?;
                std::fs::write(&p, bytes).map_err(|e| fail(USAGE, format!("{}: {e}", p.display())))?;
            }
            Ok(())
        }
        Command::Run {
            case,
            sim,
            reference,
            out,
        } => {
            let c = case.load()?;
            let cfg = sim.config(case.power_flow())?;
            let started = std::time::Instant::now();
            let series = if reference {
                run_reference_dae(&c, &cfg).map_err(|e| {
                    let code = if e.is_convergence_failure() { CONVERGENCE } else { USAGE };
                    fail(code, e)
                })?
            } else {
                let out = run_scenario(&c, &cfg).map_err(|e| {
                    let code = if e.is_convergence_failure() { CONVERGENCE } else { USAGE };
                    fail(code, e)
                })?;
                eprintln!(
                    "{} steps, {} Newton iterations, operating point within {:.1e} of the power flow",
                    out.steps, out.newton_iterations, out.dc_mismatch
                );
                out.series
            };
            eprintln!(
                "simulated {} s in {:.3} s wall clock",
                cfg.solver.t_stop,
                started.elapsed().as_secs_f64()
            );
            match out {
                Some(p) => write_csv(&series, &p).map_err(|e| fail(USAGE, format!("{}: {e}", p.display()))),
                None => {
                    let mut buf = Vec::new();
                    write_csv_to(&series, &mut buf).map_err(|e| fail(USAGE, e))?;
                    write_text(None, &String::from_utf8(buf).expect("CSV is UTF-8"))
                }
            }
        }
        Command::Netlist { case, out } => {
            let c = case.load()?;
            let compiled = compile_case(&c, &case.power_flow()).map_err(|e| {
                let code = if e.is_convergence_failure() { CONVERGENCE } else { USAGE };
                fail(code, e)
            })?;
            let text = export_spice_netlist(&compiled.netlist).map_err(|e| fail(USAGE, e))?;
            write_text(out.as_deref(), &text)
        }
        Command::Compare {
            a,
            b,
            tolerances,
            json,
        } => {
            let tol = parse_tolerances(&tolerances)?;
            let read = |p: &Path| read_csv(p).map_err(|e| fail(USAGE, format!("{}: {e}", p.display())));
            let report = compare_series(&read(&a)?, &read(&b)?, &tol).map_err(|e| fail(USAGE, e))?;
            let text = if json { report.to_json() } else { report.to_string() };
            write_text(None, &format!("{text}\n"))?;
            if report.passed() {
                Ok(())
            } else {
                Err(fail(MISMATCH, "deviation above tolerance"))
            }
        }
        Command::ConvertCdf { input, out } => {
            let text =
                std::fs::read_to_string(&input).map_err(|e| fail(USAGE, format!("{}: {e}", input.display())))?;
            let cdf = parse_cdf(&text).map_err(|e| fail(USAGE, format!("{}: {e}", input.display())))?;
            write_text(out.as_deref(), &case_to_json(&cdf.case))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
