use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synchro::harness::{export_csv, plan, run_comparison, run_model, write_csv, Scenario};
use synchro::models::{HighOrderConfig, HighOrderModel, ModelKind, IDX};
use synchro::network::LoadDemand;
use synchro::params::{derive_constants, MachineParameters};
use synchro::solver::Method;
use synchro::Result;

#[derive(Parser)]
#[command(name = "synchro", version, about = "Synchronous-machine model hierarchy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run models through a scenario and write their trajectories as CSV.
    Simulate(RunArgs),
    /// Run the high-order reference and the selected models, then score them.
    Compare(RunArgs),
    /// Solve the high-order equilibrium for a load.
    Equilibrium {
        #[command(flatten)]
        params: ParamsArg,
        #[arg(long, default_value_t = 0.05)]
        p_load: f64,
        #[arg(long, default_value_t = 0.0)]
        q_load: f64,
        /// Bus voltage magnitude to hold [pu].
        #[arg(long, default_value_t = 1.0)]
        target: f64,
    },
    /// Print the derived constants.
    Constants {
        #[command(flatten)]
        params: ParamsArg,
    },
    /// Check a parameter set against the physical invariants.
    Validate {
        #[command(flatten)]
        params: ParamsArg,
    },
}

#[derive(Args)]
struct ParamsArg {
    /// Built-in parameter set (`tableII`) or a path to a parameter file.
    #[arg(long, default_value = "tableII")]
    params: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    params: ParamsArg,
    /// Built-in scenario (`case1`, `case2`, `case2-compressed`) or a path.
    #[arg(long, default_value = "case1")]
    scenario: String,
    /// Comma-separated model list.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step size for every model [s].
    #[arg(long)]
    dt: Option<f64>,
    /// `rk4` or `trapezoidal`.
    #[arg(long)]
    method: Option<String>,
    /// Simulated time [s]; later events are dropped.
    #[arg(long)]
    duration: Option<f64>,
}

fn load_params(arg: &ParamsArg) -> Result<MachineParameters> {
    match MachineParameters::builtin(&arg.params) {
        Some(p) => p,
        None => MachineParameters::load(Path::new(&arg.params)),
    }
}

fn load_scenario(args: &RunArgs) -> Result<Scenario> {
    let mut s = match Scenario::builtin(&args.scenario) {
        Some(s) => s,
        None => Scenario::load(Path::new(&args.scenario))?,
    };
    if let Some(models) = &args.models {
        s.models = models.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if let Some(dt) = args.dt {
        s = s.with_dt(dt);
    }
    if let Some(m) = &args.method {
        s = s.with_method(m.parse::<Method>()?);
    }
    if let Some(d) = args.duration {
        s = s.with_duration(d);
    }
    s.check()?;
    Ok(s)
}

fn csv_path(dir: &Path, scenario: &Scenario, kind: ModelKind) -> PathBuf {
    dir.join(format!("{}-{}.csv", scenario.name, kind.name()))
}

fn simulate(args: &RunArgs, out: &mut impl Write) -> Result<()> {
    let p = load_params(&args.params)?;
    let mut scenario = load_scenario(args)?;
    if args.models.is_none() {
        scenario.models = vec![ModelKind::HighOrder];
    }
    let plan = plan(&p, &scenario)?;
    for &kind in &scenario.models {
        let run = run_model(kind, &p, &plan, &scenario)?;
        match &args.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = csv_path(dir, &scenario, kind);
                export_csv(&run.samples, &path)?;
                writeln!(out, "{kind}: {} samples -> {}", run.samples.len(), path.display())?;
            }
            None => {
                if scenario.models.len() > 1 {
                    writeln!(out, "# {kind}")?;
                }
                write_csv(&run.samples, &mut *out)?;
            }
        }
    }
    Ok(())
}

fn compare(args: &RunArgs, out: &mut impl Write) -> Result<()> {
    let p = load_params(&args.params)?;
    let mut scenario = load_scenario(args)?;
    if args.models.is_none() {
        scenario.models = ModelKind::REDUCED.to_vec();
    }
    let cmp = run_comparison(&p, &scenario)?;
    let report = cmp.report.to_document();
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        export_csv(&cmp.reference.samples, &csv_path(dir, &scenario, ModelKind::HighOrder))?;
        for run in &cmp.runs {
            export_csv(&run.samples, &csv_path(dir, &scenario, run.kind))?;
        }
        std::fs::write(dir.join(format!("{}-rmse.csv", scenario.name)), &report)?;
    }
    out.write_all(report.as_bytes())?;
    Ok(())
}

fn equilibrium(params: &ParamsArg, load: LoadDemand, target: f64, out: &mut impl Write) -> Result<()> {
    let p = load_params(params)?;
    let model = HighOrderModel::new(&p, HighOrderConfig::default())?;
    let op = synchro::harness::high_order_equilibrium(&model, &load, target)?;
    writeln!(out, "V_r_s = {:.17e}", op.sp.v_ref)?;
    writeln!(out, "P_c = {:.17e}", op.sp.p_c)?;
    writeln!(out, "P_r_s = {:.17e}", op.sp.p_r(&p))?;
    writeln!(out, "V_l = {:.17e}", op.bus.v_l)?;
    writeln!(out, "delta_l = {:.17e}", op.bus.delta_l)?;
    writeln!(out, "V_s = {:.17e}", op.v_s)?;
    for (name, v) in IDX::NAMES.iter().zip(op.x.x) {
        writeln!(out, "{name} = {v:.17e}")?;
    }
    writeln!(out, "residual = {:.3e}", op.residual)?;
    writeln!(out, "bus_residual = {:.3e}", op.bus_residual)?;
    Ok(())
}

fn execute(cli: Cli, out: &mut impl Write) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(&args, out),
        Command::Compare(args) => compare(&args, out),
        Command::Equilibrium {
            params,
            p_load,
            q_load,
            target,
        } => equilibrium(&params, LoadDemand::new(p_load, q_load), target, out),
        Command::Constants { params } => {
            let p = load_params(&params)?;
            out.write_all(derive_constants(&p)?.to_document().as_bytes())?;
            Ok(())
        }
        Command::Validate { params } => {
            let p = load_params(&params)?;
            let report = p.validate();
            if report.is_ok() {
                writeln!(out, "ok")?;
                Ok(())
            } else {
                for v in &report.violations {
                    writeln!(out, "{}: {}", v.rule, v.detail)?;
                }
                report.into_result()
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use synchro::Error;

    #[test]
    fn bad_method_is_a_usage_error() {
        let args = RunArgs {
            params: ParamsArg { params: "tableII".into() },
            scenario: "case1".into(),
            models: None,
            out: None,
            dt: None,
            method: Some("euler".into()),
            duration: None,
        };
        let e = load_scenario(&args).unwrap_err();
        assert!(matches!(e, Error::Invalid(_)));
        assert!(!e.is_numerical());
    }

    #[test]
    fn duration_override_drops_later_events() {
        let args = RunArgs {
            params: ParamsArg { params: "tableII".into() },
            scenario: "case2".into(),
            models: Some(vec!["elemental".into()]),
            out: None,
            dt: Some(2e-3),
            method: None,
            duration: Some(100.0),
        };
        let s = load_scenario(&args).unwrap();
        assert_eq!(s.events.len(), 1);
        assert_eq!(s.models, vec![ModelKind::Elemental]);
        assert_eq!(s.reduced.record_every, 5);
    }
}
