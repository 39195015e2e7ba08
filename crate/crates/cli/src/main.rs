//! `sosm`: manufactured-solution studies, the mixing case and mesh export.
//!
//! Exit codes: 0 success, 1 `--check` failure, 2 configuration error,
//! 3 nonconvergence, 4 numerical or I/O failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sosm_core::assembly::Family;
use sosm_core::cases::{run_mixing, MixingConfig, MixingRun};
use sosm_core::error::Error;
use sosm_core::exec::Execution;
use sosm_core::io::{save_vtk, solution_fields, FieldUnits};
use sosm_core::mesh::{junction_mesh, save_mesh, unit_square_mesh, Diagonal, JunctionGeometry};
use sosm_core::solver::{postprocess, PicardHistory, PicardOptions};
use sosm_core::verify::{
    rates, run_mms_level, write_rates_csv, ConvergenceRecord, ManufacturedCase, MmsLevel,
    MmsParameters,
};

#[derive(Parser)]
#[command(
    name = "sosm",
    version,
    about = "Mixed finite elements for multicomponent Stokes flow"
)]
struct Cli {
    /// Run every cell loop on one thread.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study on the unit square.
    Mms(MmsArgs),
    /// Benzene-cyclohexane mixing in a T-junction.
    Mix(MixArgs),
    /// Writes a mesh file.
    Mesh(MeshArgs),
}

#[derive(Args)]
struct MmsArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=2))]
    family: u32,
    /// Mesh resolutions, cells per side.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    levels: Vec<usize>,
    /// Augmentation parameter.
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Picard tolerance.
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
    /// Picard under-relaxation.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Fail (exit 1) unless the observed rates and iteration counts meet
    /// their thresholds.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MixArgs {
    /// TOML file with `MixingConfig` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `max_iter` from the config.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct MeshArgs {
    /// Unit square with this many cells per side.
    #[arg(long, conflicts_with = "junction")]
    square: Option<usize>,
    #[arg(long, default_value = "right")]
    diagonal: Diagonal,
    /// T-junction with default arm sizes.
    #[arg(long)]
    junction: bool,
    /// Target edge length of the junction mesh.
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::MissingTag(_) => 2,
            Error::PicardNonConvergence(_) | Error::NonConvergence { .. } => 3,
            _ => 4,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 4,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| {
        let exec = if cli.serial {
            Execution::Serial
        } else {
            Execution::Parallel
        };
        match &cli.command {
            Command::Mms(args) => cmd_mms(args, exec),
            Command::Mix(args) => cmd_mix(args, exec),
            Command::Mesh(args) => cmd_mesh(args),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// `SOSM_THREADS` caps the rayon pool.
fn configure_threads() -> Outcome {
    let Ok(value) = std::env::var("SOSM_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Failure::config(format!(
                "SOSM_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::config(e.to_string()))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: 4,
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn cmd_mms(args: &MmsArgs, exec: Execution) -> Outcome {
    if args.levels.is_empty() || args.levels.contains(&0) {
        return Err(Failure::config("--levels needs positive mesh sizes"));
    }
    if args.levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::config("--levels must increase strictly"));
    }
    if args.check && args.levels.len() < 3 {
        return Err(Failure::config(format!(
            "--check needs convergence rates, which need at least 3 levels (got {})",
            args.levels.len()
        )));
    }
    if !(args.gamma > 0.0) {
        return Err(Failure::config(format!(
            "--gamma {} must be positive",
            args.gamma
        )));
    }
    let opts = PicardOptions {
        tolerance: args.eps,
        relaxation: args.theta,
        max_iter: args.max_iter,
        ..Default::default()
    };
    opts.validate()?;
    let family = Family::from_index(args.family)?;
    let case = ManufacturedCase::standard(MmsParameters {
        gamma: args.gamma,
        ..Default::default()
    });
    create_dir(&args.out)?;

    let mut records = Vec::new();
    for &n in &args.levels {
        let level = run_mms_level(&case, family, n, Diagonal::Right, &opts, exec).map_err(|e| {
            if let Error::PicardNonConvergence(h) = &e {
                let path = args.out.join(format!("picard_history_n{n}.csv"));
                if write_history(h, &path).is_ok() {
                    eprintln!("history written to {}", path.display());
                }
            }
            Failure::from(e)
        })?;
        info!(
            "n = {n}: {} Picard iterations",
            level.record.picard_iterations
        );
        write_level_vtk(&case, &level, &args.out.join(format!("mms_n{n}.vtk")))?;
        records.push(level.record);
    }

    write_rates_csv(
        &records,
        BufWriter::new(File::create(args.out.join("rates.csv"))?),
    )?;
    write_levels_csv(&records, &args.out.join("levels.csv"))?;
    if args.check {
        check_mms(&records)?;
    }
    Ok(())
}

fn write_level_vtk(case: &ManufacturedCase, level: &MmsLevel, path: &Path) -> Outcome {
    let model = case.model();
    let state = &level.outcome.state;
    let sol = &level.outcome.solution;
    let derived = postprocess(&level.mesh, &level.spaces, &model, state, sol, 0.0)?;
    let fields = solution_fields(
        &level.mesh,
        &level.spaces,
        state,
        sol,
        &derived,
        FieldUnits::default(),
    );
    save_vtk(&level.mesh, &fields, path)?;
    Ok(())
}

/// One row per level: `n`, `h`, Picard iterations, then every error column.
fn write_levels_csv(records: &[ConvergenceRecord], path: &Path) -> Outcome {
    let mut out = BufWriter::new(File::create(path)?);
    let names: Vec<String> = records[0]
        .fields()
        .into_iter()
        .map(|(name, _)| name)
        .collect();
    writeln!(out, "h,picard_iterations,{}", names.join(","))?;
    for r in records {
        let errors: Vec<String> = r.fields().iter().map(|(_, e)| format!("{e:.9e}")).collect();
        writeln!(
            out,
            "{:.9e},{},{}",
            r.h,
            r.picard_iterations,
            errors.join(",")
        )?;
    }
    out.flush()?;
    Ok(())
}

fn check_mms(records: &[ConvergenceRecord]) -> Outcome {
    let mut problems = Vec::new();
    for rate in rates(records)? {
        let name = rate.field.as_str();
        let threshold = match name {
            "tau" | "p" => 1.8,
            _ if name.starts_with("mu_") => 1.8,
            _ if name.starts_with("v_") || name.starts_with("d_") => 0.9,
            _ => continue,
        };
        if !(rate.slope >= threshold) {
            problems.push(format!("{name} slope {:.3} < {threshold}", rate.slope));
        }
    }
    for r in records {
        if !(5..=10).contains(&r.picard_iterations) {
            problems.push(format!(
                "h = {:.4}: {} Picard iterations",
                r.h, r.picard_iterations
            ));
        }
    }
    if problems.is_empty() {
        info!("check passed");
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("check failed: {}", problems.join("; ")),
        })
    }
}

fn load_mixing_config(path: Option<&Path>) -> Result<MixingConfig, Failure> {
    let Some(path) = path else {
        return Ok(MixingConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Failure::config(format!("{}: {}", path.display(), e.message())))
}

fn cmd_mix(args: &MixArgs, exec: Execution) -> Outcome {
    let mut cfg = load_mixing_config(args.config.as_deref())?;
    if let Some(k) = args.max_iter {
        cfg.max_iter = k;
    }
    cfg.validate()?;
    create_dir(&args.out)?;
    let history_path = args.out.join("picard_history.csv");
    let run = match run_mixing(&cfg, exec) {
        Ok(run) => run,
        Err(Error::PicardNonConvergence(h)) => {
            write_history(&h, &history_path)?;
            eprintln!("history written to {}", history_path.display());
            return Err(Error::PicardNonConvergence(h).into());
        }
        Err(e) => return Err(e.into()),
    };
    write_history(&run.outcome.history, &history_path)?;
    save_vtk(&run.mesh, &run.vtk_fields(), &args.out.join("mixing.vtk"))?;
    write_diagnostics(&run, &args.out.join("diagnostics.csv"))?;
    info!(
        "converged in {} iterations; net mass flux {:.2e}",
        run.diagnostics.picard_iterations, run.diagnostics.net_mass_flux
    );
    Ok(())
}

fn write_history(history: &PicardHistory, path: &Path) -> Outcome {
    let mut out = BufWriter::new(File::create(path)?);
    history.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_diagnostics(run: &MixingRun, path: &Path) -> Outcome {
    let d = &run.diagnostics;
    let mut rows: Vec<(String, f64)> = vec![
        ("benzene_speed".into(), d.benzene_speed),
        ("picard_iterations".into(), d.picard_iterations as f64),
        ("net_mass_flux".into(), d.net_mass_flux),
        ("species_balance_benzene".into(), d.species_balance[0]),
        ("species_balance_cyclohexane".into(), d.species_balance[1]),
        ("mass_average_defect".into(), d.mass_average_defect),
        ("species_slip_max".into(), d.species_slip_max),
        ("gibbs_duhem".into(), d.gibbs_duhem),
        ("pressure_roughness".into(), d.pressure_roughness),
        ("outlet_benzene_fraction".into(), d.outlet_benzene_fraction),
    ];
    for (species, name) in ["benzene", "cyclohexane"].iter().enumerate() {
        for (tag, flux) in &d.species_flux[species] {
            rows.push((format!("flux_{name}_{tag}"), *flux));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "quantity,value")?;
    for (k, v) in rows {
        writeln!(out, "{k},{v:.9e}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_mesh(args: &MeshArgs) -> Outcome {
    let mesh = match (args.square, args.junction) {
        (Some(n), false) => unit_square_mesh(n, args.diagonal)?,
        (None, true) => junction_mesh(&JunctionGeometry {
            h: args.h,
            ..Default::default()
        })?,
        _ => return Err(Failure::config("choose one of --square N or --junction")),
    };
    save_mesh(&mesh, &args.out)?;
    info!(
        "{} vertices, {} cells",
        mesh.num_vertices(),
        mesh.num_cells()
    );
    Ok(())
}
