use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use helioinv::bench::{format_table, BenchConfig};
use helioinv::commands::{self, Diagnostic, DiagnoseArgs, InvertArgs};
use helioinv::config::{MethodName, ParameterGrid, ParameterRule, TargetLocation};
use helioinv::{CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "helioinv", version, about = "Synthetic subsurface flow inversions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate kernels, noise covariances, a true flow and noisy travel times.
    Synth {
        /// Experiment configuration (JSON); the built-in desk problem when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Invert travel times written by `synth`.
    Invert(InvertCli),
    /// Averaging kernels, cross-talk, depth profiles and noise variances of an inversion.
    Diagnose(DiagnoseCli),
    /// Numerical self-checks of the minimax filter and the risk formulas.
    Riskbench {
        #[arg(long, default_value_t = 200)]
        problems: usize,
        #[arg(long, default_value_t = 100_000)]
        candidates: usize,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the rows as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InvertCli {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    /// Restrict the estimate to divergence-free flows.
    #[arg(long, conflicts_with = "no_mass_conservation")]
    mass_conservation: bool,
    #[arg(long)]
    no_mass_conservation: bool,
    /// Fixed regularization parameter (alpha, mu or kappa).
    #[arg(long, group = "rule")]
    param: Option<f64>,
    /// Choose the parameter by the discrepancy principle.
    #[arg(long, group = "rule")]
    discrepancy: bool,
    /// Choose the parameter so the noise variance at the target equals this value.
    #[arg(long, group = "rule")]
    match_variance: Option<f64>,
    /// Target component (0 = x, 1 = y, 2 = z) for variance matching.
    #[arg(long)]
    target_component: Option<usize>,
    /// Target depth in Mm for variance matching.
    #[arg(long, allow_hyphen_values = true)]
    target_depth: Option<f64>,
    #[arg(long)]
    grid_lo: Option<f64>,
    #[arg(long)]
    grid_hi: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
}

#[derive(Args)]
struct DiagnoseCli {
    /// Directory written by `synth`.
    #[arg(long)]
    input: PathBuf,
    /// Directory written by `invert`.
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    averaging_kernel: bool,
    #[arg(long)]
    crosstalk: bool,
    #[arg(long)]
    depth_profile: bool,
    #[arg(long)]
    variance: bool,
    #[arg(long, default_value_t = 2)]
    component: usize,
    #[arg(long, default_value_t = -3.5, allow_hyphen_values = true)]
    depth: f64,
    /// Source component for cross-talk.
    #[arg(long, default_value_t = 0)]
    from: usize,
}

fn invert_args(c: InvertCli) -> CliResult<InvertArgs> {
    let rule = match (c.param, c.discrepancy, c.match_variance) {
        (Some(p), _, _) => Some(ParameterRule::Fixed(p)),
        (_, true, _) => Some(ParameterRule::Discrepancy),
        (_, _, Some(v)) => Some(ParameterRule::MatchVariance(v)),
        _ => None,
    };
    let grid = match (c.grid_lo, c.grid_hi, c.grid_n) {
        (None, None, None) => None,
        (lo, hi, n) => {
            let d = ParameterGrid::default_for(c.method.unwrap_or(MethodName::Pinsker));
            Some(ParameterGrid { lo: lo.unwrap_or(d.lo), hi: hi.unwrap_or(d.hi), n: n.unwrap_or(d.n) })
        }
    };
    let target = match (c.target_component, c.target_depth) {
        (None, None) => None,
        (b, z) => {
            let d = TargetLocation::default();
            Some(TargetLocation { component: b.unwrap_or(d.component), depth: z.unwrap_or(d.depth) })
        }
    };
    let mass_conservation = match (c.mass_conservation, c.no_mass_conservation) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    };
    Ok(InvertArgs { input: c.input, output: c.output, method: c.method, mass_conservation, rule, grid, target })
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Synth { config, output, seed } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::desk(1),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = output
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| CliError::Config("no output directory: pass --output or set output_dir".into()))?;
            let m = commands::synth(&cfg, &out)?;
            println!("synth: wrote {} files to {} (config {})", m.provenance.files.len(), out.display(), m.provenance.config_hash);
        }
        Command::Invert(c) => {
            let r = commands::invert(&invert_args(c)?)?;
            let s = &r.selection;
            println!(
                "invert: {} {} = {:.6e} ({}), residual {:.6e} / expected {:.6e}, div residual {:.3e}",
                r.method.parameter_name(),
                if r.mass_conservation { "(mass-conserving)" } else { "" },
                s.parameter,
                s.rule,
                r.whitened_residual,
                r.expected_residual,
                r.div_residual
            );
        }
        Command::Diagnose(c) => {
            let mut diagnostics = Vec::new();
            for (on, d) in [
                (c.averaging_kernel, Diagnostic::AveragingKernel),
                (c.crosstalk, Diagnostic::Crosstalk),
                (c.depth_profile, Diagnostic::DepthProfile),
                (c.variance, Diagnostic::Variance),
            ] {
                if on {
                    diagnostics.push(d);
                }
            }
            if diagnostics.is_empty() {
                return Err(CliError::Config(
                    "choose at least one of --averaging-kernel, --crosstalk, --depth-profile, --variance".into(),
                ));
            }
            let args = DiagnoseArgs {
                input: c.input,
                estimate: c.estimate,
                output: c.output,
                diagnostics,
                component: c.component,
                depth: c.depth,
                from: c.from,
            };
            let r = commands::diagnose(&args)?;
            if let Some(b) = &r.bias_identity {
                println!("diagnose: bias identity {} (residual {:.3e})", b.status, b.residual);
                if b.status != "pass" {
                    return Ok(ExitCode::from(3));
                }
            } else {
                println!("diagnose: wrote {} files", r.provenance.files.len());
            }
        }
        Command::Riskbench { problems, candidates, draws, seed, output } => {
            let rows = commands::riskbench(&BenchConfig { problems, candidates, draws, seed }, output.as_deref())?;
            print!("{}", format_table(&rows));
            if rows.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("HELIOINV_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Config(format!("HELIOINV_THREADS={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
