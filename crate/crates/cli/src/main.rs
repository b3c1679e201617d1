use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sislab_core::harness::scenario::{asymptotics_report, audit_report, compare_report};
use sislab_core::harness::{
    run_scenario, simulate, sweep, write_bundle, Bundle, HarnessError, Scenario, ScenarioConfig, SweepOptions,
    SweepRegime,
};
use sislab_core::spectral::{compute_lambda0, compute_r0, SpectralResult};

#[derive(Parser)]
#[command(name = "sislab", version, about = "Spatial SIS model: equilibria, thresholds and small-diffusion limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time-march the initial state under the configured stopping rule.
    Simulate(Common),
    /// Compute the equilibrium with R0, lambda0, audits and indicator masks.
    Equilibrium(Common),
    /// Basic reproduction number (p = 1 only).
    R0(Common),
    /// Principal eigenvalue of the linearized infection operator.
    Lambda0(Common),
    /// Predicted limit profile for a small-diffusion regime.
    Asymptotics(Regime),
    /// Equilibria along a decreasing sequence of diffusion rates.
    Sweep(SweepArgs),
    /// Sign conditions and a priori bounds at the equilibrium.
    Audit(Common),
    /// Distance between the equilibrium and a regime's limit profile.
    Compare(Regime),
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Indicator mask thresholds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
}

#[derive(Args)]
struct Regime {
    #[command(flatten)]
    common: Common,
    /// dI, dS or both.
    #[arg(long)]
    regime: String,
    /// Limiting ratio d_I / d_S for the `both` regime.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    regime: Regime,
    /// Decreasing diffusion rates, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    values: Vec<f64>,
    /// Record wall time per row (the table is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

fn load(common: &Common) -> Result<Scenario, HarnessError> {
    let mut cfg = ScenarioConfig::from_path(&common.config)?;
    if let Some(d) = &common.delta {
        cfg.toggles.mask_deltas = d.clone();
    }
    Ok(cfg.build()?)
}

fn out_dir(common: &Common, sc: &Scenario) -> Option<PathBuf> {
    common.out.clone().or_else(|| sc.config.output_dir.clone())
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn emit<T: Serialize>(summary: &T, bundle: &Bundle, dir: Option<&Path>) -> Result<(), HarnessError> {
    if let Some(dir) = dir {
        for p in write_bundle(bundle, dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    print_json(summary);
    Ok(())
}

#[derive(Serialize)]
struct SpectralSummary {
    name: String,
    quantity: &'static str,
    value: f64,
    residual: f64,
    iterations: usize,
    d_s: f64,
    d_i: f64,
}

fn spectral(common: &Common, quantity: &'static str) -> Result<(), HarnessError> {
    let sc = load(common)?;
    let c = &sc.coefficients;
    let result: Result<SpectralResult, _> = if quantity == "R0" { compute_r0(c) } else { compute_lambda0(c) };
    let r = result.map_err(|e| HarnessError::Compute {
        context: format!("{quantity} of '{}'", sc.config.name),
        source: e.into(),
    })?;
    let summary = SpectralSummary {
        name: sc.config.name.clone(),
        quantity,
        value: r.eigenvalue,
        residual: r.residual,
        iterations: r.iterations,
        d_s: r.d_s,
        d_i: r.d_i,
    };
    let mut bundle = Bundle::new();
    bundle.add_json(format!("{}.json", quantity.to_lowercase()), &summary);
    bundle.add_field("eigenfunction.csv", &sc.domain, r.eigenfield.values());
    emit(&summary, &bundle, out_dir(common, &sc).as_deref())
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Simulate(common) => {
            let sc = load(&common)?;
            let (summary, bundle) = simulate(&sc)?;
            emit(&summary, &bundle, out_dir(&common, &sc).as_deref())?;
        }
        Command::Equilibrium(common) => {
            let sc = load(&common)?;
            let out = run_scenario(&sc)?;
            emit(&out.summary, &out.bundle, out_dir(&common, &sc).as_deref())?;
        }
        Command::R0(common) => spectral(&common, "R0")?,
        Command::Lambda0(common) => spectral(&common, "lambda0")?,
        Command::Asymptotics(args) => {
            let sc = load(&args.common)?;
            let regime = SweepRegime::parse(&args.regime, args.sigma)?;
            let (summary, _, bundle) = asymptotics_report(&sc, regime)?;
            emit(&summary, &bundle, out_dir(&args.common, &sc).as_deref())?;
        }
        Command::Sweep(args) => {
            let sc = load(&args.regime.common)?;
            let regime = SweepRegime::parse(&args.regime.regime, args.regime.sigma)?;
            let table = sweep(&sc, regime, &args.values, &SweepOptions { timing: args.timing })?;
            let mut bundle = Bundle::new();
            bundle.add("sweep.csv", table.to_csv().into_bytes());
            bundle.add_json("sweep.json", &table);
            emit(&table, &bundle, out_dir(&args.regime.common, &sc).as_deref())?;
            if !table.passed() {
                eprintln!("sweep assertions failed (trend {:?}, R0 monotone {:?})", table.trend, table.r0_monotone);
                return Ok(false);
            }
        }
        Command::Audit(common) => {
            let sc = load(&common)?;
            let summary = audit_report(&sc)?;
            let mut bundle = Bundle::new();
            bundle.add_json("audit.json", &summary);
            emit(&summary, &bundle, out_dir(&common, &sc).as_deref())?;
            if !summary.all_pass {
                eprintln!("audit found violated inequalities");
                return Ok(false);
            }
        }
        Command::Compare(args) => {
            let sc = load(&args.common)?;
            let regime = SweepRegime::parse(&args.regime, args.sigma)?;
            let summary = compare_report(&sc, regime)?;
            let mut bundle = Bundle::new();
            bundle.add_json("compare.json", &summary);
            emit(&summary, &bundle, out_dir(&args.common, &sc).as_deref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
