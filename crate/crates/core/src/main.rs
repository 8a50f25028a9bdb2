use clap::{Args, Parser, Subcommand, ValueEnum};
use cogrelay::commands::{cmd_region, cmd_simulate, cmd_validate, CliError, SimPoint};
use cogrelay::config::{bundled, ExperimentSpec, RegionSpec};
use cogrelay::model::{Access, Scheme};
use cogrelay::simulator::Variant;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cogrelay", version, about = "Stable-throughput regions of cooperative cognitive relaying")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep stability-region boundaries and write one CSV per region.
    Region(RegionArgs),
    /// Simulate one operating point and compare with the closed forms.
    Simulate(SimulateArgs),
    /// Check inner-bound points are stable and outer-exterior points are not.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled experiment: fig2, fig3 or fig4.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RegionArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated schemes; replaces the configured regions with a
    /// single region named `selected`.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Tie rho to epsilon for `--schemes`.
    #[arg(long, requires = "schemes")]
    tie_rho: bool,
    #[arg(long)]
    grid_step: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AccessArg {
    Ordered,
    Ra,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    lambda1: f64,
    #[arg(long)]
    lambda2: f64,
    /// `original` or a dominant scheme name.
    #[arg(long, default_value = "original")]
    variant: String,
    /// Access mode of the original system.
    #[arg(long, value_enum, default_value = "ordered")]
    access: AccessArg,
    #[arg(long)]
    slots: Option<u64>,
    /// Write a JSON-lines trace of the first slots to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    p2: Option<f64>,
    #[arg(long)]
    f1: Option<f64>,
    #[arg(long)]
    f2: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    /// Points inside the inner bound (and outside the outer bound).
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    grid_step: Option<f64>,
}

fn load(common: &Common) -> Result<ExperimentSpec, CliError> {
    if let Some(n) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match (&common.config, &common.preset) {
        (Some(path), _) => Ok(ExperimentSpec::load(path)?),
        (None, Some(name)) => {
            let text = bundled(name).ok_or_else(|| CliError::Usage(format!("unknown preset '{name}'")))?;
            Ok(ExperimentSpec::from_toml(text)?)
        }
        (None, None) => Err(CliError::Usage("give --config or --preset".into())),
    }
}

fn set_grid_step(spec: &mut ExperimentSpec, step: Option<f64>) -> Result<(), CliError> {
    if let Some(s) = step {
        if !(s > 0.0 && s <= 1.0) {
            return Err(CliError::Usage(format!("--grid-step must lie in (0, 1], got {s}")));
        }
        spec.grid_step = s;
    }
    Ok(())
}

fn save(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: dir.join(name),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(name), text).map_err(|source| CliError::Io {
        path: dir.join(name),
        source,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Region(a) => {
            let mut spec = load(&a.common)?;
            set_grid_step(&mut spec, a.grid_step)?;
            if let Some(seed) = a.common.seed {
                spec.search.seed = seed;
            }
            if let Some(schemes) = a.schemes {
                spec.regions = vec![RegionSpec {
                    name: "selected".into(),
                    schemes,
                    tie_rho_to_epsilon: a.tie_rho,
                }];
            }
            for (rs, region) in cmd_region(&spec, &a.common.out)? {
                let feasible = region.samples.iter().filter(|s| s.lambda_1_max.is_some()).count();
                println!(
                    "{}: {} grid points, {} feasible -> {}",
                    rs.name,
                    region.samples.len(),
                    feasible,
                    a.common.out.join(format!("{}.csv", rs.name)).display()
                );
            }
            Ok(())
        }
        Command::Simulate(a) => {
            let spec = load(&a.common)?;
            let variant = if a.variant.eq_ignore_ascii_case("original") {
                Variant::Original(match a.access {
                    AccessArg::Ordered => Access::Ordered,
                    AccessArg::Ra => Access::RandomAccess,
                })
            } else {
                Variant::Dominant(a.variant.parse::<Scheme>().map_err(|e| CliError::Usage(e.to_string()))?)
            };
            let mut policy = spec.policy;
            for (slot, v) in [
                (&mut policy.epsilon, a.eps),
                (&mut policy.rho, a.rho),
                (&mut policy.p1, a.p1),
                (&mut policy.p2, a.p2),
                (&mut policy.f1, a.f1),
                (&mut policy.f2, a.f2),
                (&mut policy.alpha1, a.alpha1),
                (&mut policy.alpha2, a.alpha2),
            ] {
                if let Some(v) = v {
                    *slot = v;
                }
            }
            let point = SimPoint {
                lambda_1: a.lambda1,
                lambda_2: a.lambda2,
                variant,
                policy,
            };
            let slots = a.slots.unwrap_or(spec.simulation.slots);
            let seed = a.common.seed.unwrap_or(spec.simulation.seed);
            let report = cmd_simulate(&spec, &point, slots, seed, a.trace.as_deref())?;
            print!("{}", report.text);
            save(&a.common.out, "simulate.txt", &report.text)?;
            if !report.primary_feasible {
                return Err(CliError::PrimaryInfeasible {
                    lambda_p: spec.system.lambda_p,
                    mu_p: cogrelay::model::primary_service_rate(&spec.system, &point.policy),
                });
            }
            Ok(())
        }
        Command::Validate(a) => {
            let mut spec = load(&a.common)?;
            set_grid_step(&mut spec, a.grid_step)?;
            if let Some(k) = a.points {
                spec.validate.points = k;
            }
            let slots = a.slots.unwrap_or(spec.simulation.slots);
            let seed = a.common.seed.unwrap_or(spec.simulation.seed);
            let summary = cmd_validate(&spec, slots, seed)?;
            let text = summary.render();
            print!("{text}");
            save(&a.common.out, "validate.txt", &text)?;
            if !summary.passed() {
                return Err(CliError::Validation("some inner point is not stable or some exterior point is".into()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
