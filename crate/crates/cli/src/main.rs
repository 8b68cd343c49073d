use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use quasi_hrbf::cover::CoverParams;
use quasi_hrbf::exact::ExactOptions;
use quasi_hrbf::io::{load_obj, load_points, PointFormat};
use quasi_hrbf::pipeline::{
    run_noise_bench, run_reconstruct, run_select_centers, run_verify_bound, with_threads, NoiseBenchConfig,
    ReconConfig, VerifyConfig, NOISE_MIN_FRAGMENT_AREA, NOISE_SCHEDULE,
};
use quasi_hrbf::synth::{icosphere, sphere_points};

#[derive(Parser)]
#[command(
    name = "qhrbf",
    version,
    about = "Surface reconstruction from oriented points by quasi-interpolated HRBFs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a mesh (OBJ or PLY) from oriented points (XYZ or PLY).
    Reconstruct(ReconstructArgs),
    /// Compare closed-form coefficients with the exact regularized solution.
    VerifyBound(VerifyArgs),
    /// Reconstruct at several noise levels and report surface distances.
    NoiseBench(NoiseArgs),
    /// Select a spherical cover of the input and write it as CSV.
    SelectCenters(SelectArgs),
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Write key=value diagnostics here.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[command(flatten)]
    recon: ReconArgs,
}

#[derive(Args)]
struct ReconArgs {
    /// Support amplifier (at least 1).
    #[arg(short, long, default_value_t = 1.0)]
    s: f64,
    /// Voxel width in normalized coordinates.
    #[arg(short, long, default_value_t = 0.01)]
    width: f64,
    /// Select centers by spherical covering before tuning.
    #[arg(long)]
    center_select: bool,
    /// Use the smallest support radius for every center.
    #[arg(long)]
    noisy_mode: bool,
    /// Regularization weight instead of the admissible minimum.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 10)]
    min_fragment_faces: usize,
    #[arg(short, long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ReconArgs {
    fn config(&self) -> ReconConfig {
        ReconConfig {
            s: self.s,
            width: self.width,
            center_select: self.center_select,
            noisy_mode: self.noisy_mode,
            eta_override: self.eta,
            min_fragment_faces: self.min_fragment_faces,
            threads: self.threads,
            seed: self.seed,
            ..ReconConfig::default()
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// CSV output; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(short, long, default_value_t = 1.0)]
    s: f64,
    #[arg(long)]
    noisy_mode: bool,
    #[arg(long)]
    eta: Option<f64>,
    /// Use a random subset of this many points.
    #[arg(long)]
    subset: Option<usize>,
    /// Largest point count accepted by the exact solver.
    #[arg(long, default_value_t = ExactOptions::default().cap)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NoiseArgs {
    /// Oriented points; a uniformly sampled unit sphere when omitted.
    #[arg(short, long, requires = "reference")]
    input: Option<PathBuf>,
    /// Ground-truth OBJ mesh for the distances.
    #[arg(short, long)]
    reference: Option<PathBuf>,
    /// Sphere sample count when no input is given.
    #[arg(long, default_value_t = 20_000)]
    sphere_points: usize,
    /// Comma-separated `delta:s` pairs.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<Levels>,
    #[arg(short, long, default_value_t = 0.01)]
    width: f64,
    /// Remove fragments with less area than this, in normalized units.
    #[arg(long, default_value_t = NOISE_MIN_FRAGMENT_AREA)]
    min_fragment_area: f64,
    /// Distance samples per direction.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Keep per-center supports on noisy inputs.
    #[arg(long)]
    adaptive_support: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(short, long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Cover CSV (x,y,z,nx,ny,nz,r).
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the selected points (XYZ or PLY).
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, default_value_t = CoverParams::default().g_min)]
    g_min: f64,
    #[arg(long, default_value_t = CoverParams::default().q_err)]
    q_err: f64,
    #[arg(long, default_value_t = CoverParams::default().varpi)]
    varpi: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone)]
struct Levels(Vec<(f64, f64)>);

fn parse_levels(text: &str) -> Result<Levels, String> {
    text.split(',')
        .map(|pair| {
            let (d, s) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected delta:s, got {pair:?}"))?;
            let d = d.trim().parse::<f64>().map_err(|e| format!("{d:?}: {e}"))?;
            let s = s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?;
            Ok((d, s))
        })
        .collect::<Result<_, String>>()
        .map(Levels)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Reconstruct(args) => {
            let cfg = args.recon.config();
            let rec = run_reconstruct(&args.input, &args.output, args.diagnostics.as_deref(), &cfg)?;
            log::info!(
                "{} faces, {} boundary edges, {} centers",
                rec.mesh.faces.len(),
                rec.mesh.boundary_edge_count(),
                rec.model.len()
            );
            if args.diagnostics.is_none() {
                eprint!("{}", rec.diagnostics.to_text());
            }
        }
        Command::VerifyBound(args) => {
            let cfg = VerifyConfig {
                s: args.s,
                noisy_mode: args.noisy_mode,
                eta_override: args.eta,
                subset: args.subset,
                seed: args.seed,
                exact: ExactOptions {
                    cap: args.cap,
                    ..ExactOptions::default()
                },
            };
            let report = run_verify_bound(&args.input, args.output.as_deref(), &cfg)?;
            if report.applicable() && !report.holds {
                bail!(
                    "bound violated: measured {:e} exceeds {:e}",
                    report.measured_inf_error,
                    report.bound_value.unwrap_or(f64::NAN)
                );
            }
        }
        Command::NoiseBench(args) => {
            let (points, reference) = match (&args.input, &args.reference) {
                (Some(input), Some(reference)) => {
                    let load = || -> quasi_hrbf::Result<_> {
                        let points = load_points(input, PointFormat::detect(input)?)?.points;
                        Ok((points, load_obj(reference)?))
                    };
                    load().map_err(|e| e.in_stage("load"))?
                }
                (None, None) => (sphere_points(args.sphere_points, 1.0, args.seed), icosphere(1.0, 6)),
                (None, Some(_)) => bail!("--reference needs --input"),
                (Some(_), None) => unreachable!("clap enforces --reference with --input"),
            };
            let cfg = NoiseBenchConfig {
                levels: args.levels.map_or_else(|| NOISE_SCHEDULE.to_vec(), |l| l.0),
                recon: ReconConfig {
                    width: args.width,
                    seed: args.seed,
                    ..ReconConfig::default()
                },
                noisy_mode: !args.adaptive_support,
                min_fragment_area: args.min_fragment_area,
                distance_samples: args.samples,
                seed: args.seed,
                ..NoiseBenchConfig::default()
            };
            with_threads(args.threads, || {
                run_noise_bench(&points, &reference, args.output.as_deref(), &cfg)
            })??;
        }
        Command::SelectCenters(args) => {
            let params = CoverParams {
                g_min: args.g_min,
                q_err: args.q_err,
                varpi: args.varpi,
                ..CoverParams::default()
            };
            let cover = run_select_centers(&args.input, &args.output, args.points.as_deref(), &params, args.seed)?;
            log::info!("{} centers selected", cover.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
