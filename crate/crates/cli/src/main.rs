use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eba_core::epistemic::{Formula, System};
use eba_core::exchange::LocalState;
use eba_core::metrics::{bits_sent, decision_round_table, run_scenario, Report};
use eba_core::protocols::{concrete, ActionProtocol, Kbp};
use eba_core::simulator::{enumerate_runs, generate_run, trace_lines};
use eba_core::verification::{
    check_domination, check_eba, check_implements_on, check_safety_on, check_zero_chains_runs, detect_zero_chains,
    Domination, Status, Verdict,
};
use eba_core::{ContextId, FailurePattern, Params, Scenario, Value};
use serde_json::json;

#[derive(Parser)]
#[command(name = "eba", version, about = "Eventual Byzantine agreement under sending omissions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its report.
    Simulate(SimulateArgs),
    /// Enumerate every run of a protocol and summarise decision rounds and traffic.
    Enumerate {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a property over the enumerated run set.
    Check {
        property: Property,
        #[command(flatten)]
        system: SystemArgs,
        /// Knowledge-based program for `implements`; defaults to p1 in fip, p0 elsewhere.
        #[arg(long)]
        kbp: Option<KbpArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two protocols on corresponding runs.
    Dominate {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, value_parser = parse_context)]
        context: ContextId,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a formula at one point of the enumerated system.
    Eval {
        /// Prefix syntax, e.g. "(K 2 (exists 0))".
        #[arg(long)]
        formula: String,
        /// Scenario whose run supplies the point; the system is the one of its protocol.
        #[arg(long, conflicts_with = "run")]
        scenario: Option<PathBuf>,
        /// Run index in the enumerated system instead of a scenario.
        #[arg(long, requires = "context")]
        run: Option<usize>,
        #[arg(long)]
        time: usize,
        #[arg(long, value_parser = parse_context)]
        context: Option<ContextId>,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with_all = ["context", "protocol", "n", "t", "inits"])]
    scenario: Option<PathBuf>,
    #[arg(long, value_parser = parse_context)]
    context: Option<ContextId>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// Initial values as a bit string, e.g. 0111; the run is failure-free.
    #[arg(long)]
    inits: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Line-oriented JSON trace, one object per time.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Directory for each agent's final communication graph in DOT (fip only).
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct SystemArgs {
    #[arg(long, value_parser = parse_context)]
    context: ContextId,
    #[arg(long)]
    protocol: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: usize,
    #[arg(long)]
    horizon: Option<usize>,
}

impl SystemArgs {
    fn params(&self) -> Params {
        Params { n: self.n, t: self.t }
    }

    fn horizon(&self) -> usize {
        self.horizon.unwrap_or(Scenario::default_horizon(self.t))
    }

    fn enumerate(&self) -> Result<System> {
        let protocol = concrete(&self.protocol, self.context)?;
        Ok(enumerate_runs(protocol, self.context, self.params(), self.horizon(), None)?)
    }

    fn header(&self, system: &System) -> serde_json::Value {
        json!({
            "protocol": self.protocol,
            "context": self.context,
            "n": self.n,
            "t": self.t,
            "horizon": self.horizon(),
            "runs": system.runs().len(),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Property {
    Eba,
    Implements,
    Safety,
    Chains,
}

#[derive(Clone, Copy, ValueEnum)]
enum KbpArg {
    P0,
    P1,
}

fn parse_context(s: &str) -> std::result::Result<ContextId, String> {
    s.parse().map_err(|e: eba_core::Error| e.to_string())
}

fn parse_inits(bits: &str) -> Result<Vec<Value>> {
    bits.chars()
        .map(|c| match c {
            '0' => Ok(Value::Zero),
            '1' => Ok(Value::One),
            other => bail!("initial values must be 0 or 1, got `{other}`"),
        })
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n")).with_context(|| format!("cannot write {}", path.display())),
        None => print(text),
    }
}

/// A reader that closes the pipe early is not an error.
fn print(text: &str) -> Result<()> {
    match writeln!(io::stdout(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("JSON values serialize")
}

fn verdict_exit(verdicts: &[Verdict]) -> ExitCode {
    if verdicts.iter().any(|v| v.status == Status::Fail) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let (run, report) = match &args.scenario {
        Some(path) => run_scenario(path)?,
        None => {
            let (Some(context), Some(protocol), Some(t), Some(inits)) =
                (args.context, &args.protocol, args.t, &args.inits)
            else {
                bail!("simulate needs --scenario, or --context, --protocol, --t and --inits");
            };
            let inits = parse_inits(inits)?;
            let n = args.n.unwrap_or(inits.len());
            if n != inits.len() {
                bail!("--n {n} does not match {} initial values", inits.len());
            }
            let horizon = args.horizon.unwrap_or(Scenario::default_horizon(t));
            let scenario = Scenario {
                n,
                t,
                context,
                protocol: protocol.clone(),
                inits,
                pattern: FailurePattern::failure_free(n, horizon),
                horizon,
                relax_bounds: false,
            };
            let run = generate_run(&scenario)?;
            let report = Report::for_run(&run);
            (run, report)
        }
    };
    if let Some(path) = &args.dump {
        let mut text = trace_lines(&run).join("\n");
        text.push('\n');
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(dir) = &args.dot {
        if run.header.context != ContextId::Fip {
            bail!("communication graphs exist only in the fip context");
        }
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for i in 0..run.n() {
            let LocalState::Fip(s) = run.state(run.horizon(), i) else { unreachable!() };
            let path = dir.join(format!("agent{}.dot", i + 1));
            fs::write(&path, s.graph.to_dot()).with_context(|| format!("cannot write {}", path.display()))?;
        }
    }
    emit(args.out.as_deref(), &report.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn enumerate(system_args: SystemArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    let system = system_args.enumerate()?;
    let bits: Vec<usize> = system.runs().iter().map(bits_sent).collect();
    let mut summary = system_args.header(&system);
    summary["decision_rounds"] = serde_json::to_value(decision_round_table(&system))?;
    summary["bits_sent"] = json!({
        "min": bits.iter().min(),
        "max": bits.iter().max(),
    });
    emit(out.as_deref(), &pretty(&summary))?;
    Ok(ExitCode::SUCCESS)
}

fn check(property: Property, system_args: SystemArgs, kbp: Option<KbpArg>, out: Option<PathBuf>) -> Result<ExitCode> {
    let system = system_args.enumerate()?;
    let verdicts = match property {
        Property::Eba => check_eba(&system)?,
        Property::Implements => {
            let kbp = match kbp {
                Some(KbpArg::P0) => Kbp::P0,
                Some(KbpArg::P1) => Kbp::P1,
                None if system_args.context == ContextId::Fip => Kbp::P1,
                None => Kbp::P0,
            };
            vec![check_implements_on(&system, kbp)?]
        }
        Property::Safety => check_safety_on(&system)?,
        Property::Chains => vec![check_zero_chains_runs(system.runs())],
    };
    let mut result = system_args.header(&system);
    result["verdicts"] = serde_json::to_value(&verdicts)?;
    if let Property::Chains = property {
        let chains: usize = system.runs().iter().map(|r| detect_zero_chains(r).len()).sum();
        result["chains"] = json!(chains);
    }
    emit(out.as_deref(), &pretty(&result))?;
    for v in &verdicts {
        eprintln!("{v}");
    }
    Ok(verdict_exit(&verdicts))
}

fn dominate(a: &str, b: &str, context: ContextId, params: Params, horizon: usize, out: Option<PathBuf>) -> Result<ExitCode> {
    let (pa, pb): (Arc<dyn ActionProtocol>, Arc<dyn ActionProtocol>) = (concrete(a, context)?, concrete(b, context)?);
    let report = check_domination(pa, pb, context, params, horizon)?;
    emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    eprintln!("{} vs {}: {}", report.a, report.b, report.outcome);
    Ok(match report.outcome {
        Domination::Disqualified { .. } => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    })
}

#[allow(clippy::too_many_arguments)]
fn eval(
    formula: &str,
    scenario: Option<PathBuf>,
    run: Option<usize>,
    time: usize,
    context: Option<ContextId>,
    protocol: Option<String>,
    n: Option<usize>,
    t: Option<usize>,
    horizon: Option<usize>,
) -> Result<ExitCode> {
    let phi = Formula::parse(formula)?;
    let (system, index) = match (scenario, run) {
        (Some(path), None) => {
            let (record, _) = run_scenario(&path)?;
            let system_args = SystemArgs {
                context: record.header.context,
                protocol: record.header.protocol.clone(),
                n: record.n(),
                t: record.header.t,
                horizon: Some(record.horizon()),
            };
            let system = system_args.enumerate()?;
            let index = system
                .find_run(&record)
                .context("the scenario's run is missing from the enumerated system")?;
            (system, index)
        }
        (None, Some(index)) => {
            let (Some(context), Some(protocol), Some(n), Some(t)) = (context, protocol, n, t) else {
                bail!("--run needs --context, --protocol, --n and --t");
            };
            let system = SystemArgs { context, protocol, n, t, horizon }.enumerate()?;
            (system, index)
        }
        _ => bail!("eval needs --scenario or --run"),
    };
    let value = match system.eval(&phi, index, time) {
        Ok(v) => json!(v),
        Err(eba_core::Error::Undefined { .. }) => json!("undefined"),
        Err(e) => return Err(e.into()),
    };
    let result = json!({
        "formula": phi.to_string(),
        "run": index,
        "time": time,
        "value": value,
    });
    print(&pretty(&result))?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Enumerate { system, out } => enumerate(system, out),
        Command::Check {
            property,
            system,
            kbp,
            out,
        } => check(property, system, kbp, out),
        Command::Dominate {
            a,
            b,
            context,
            n,
            t,
            horizon,
            out,
        } => dominate(&a, &b, context, Params { n, t }, horizon.unwrap_or(Scenario::default_horizon(t)), out),
        Command::Eval {
            formula,
            scenario,
            run,
            time,
            context,
            protocol,
            n,
            t,
            horizon,
        } => eval(&formula, scenario, run, time, context, protocol, n, t, horizon),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
