use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use ssbolt::config::{load_config, SolverConfig};
use ssbolt::eigen::{perturbation_series, verify_eigen_bounds, EigenSolution, EigenBounds, PerturbationSeries};
use ssbolt::error::{Error, Result};
use ssbolt::matrix::SymMat;
use ssbolt::output::{field_csv, render, to_json_string, trajectory_csv, write_text, Format};
use ssbolt::verify::{exit_code, run_verify, Pipeline};

#[derive(Parser)]
#[command(name = "ssbolt", version, about = "Self-similar profiles of the Boltzmann equation with linear drift, Maxwell molecules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the grid-parallel stages.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for beta and B; optionally compare with the perturbation series.
    Eigen {
        #[command(flatten)]
        common: Common,
        /// Order of the perturbation series.
        #[arg(long)]
        series: Option<usize>,
    },
    /// Compute the self-similar profile.
    Profile {
        #[command(flatten)]
        common: Common,
    },
    /// Evolve the configured initial data and measure convergence to the profile.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Write every N-th snapshot field as CSV.
        #[arg(long)]
        dump_every: Option<usize>,
    },
    /// Second-moment dynamics and the randomized relaxation sweep.
    Moments {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full check pipeline.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

struct Run {
    config: SolverConfig,
    out: Option<PathBuf>,
    format: Format,
}

impl Run {
    fn new(c: &Common) -> Result<Self> {
        if let Some(n) = c.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| Error::config("threads", e.to_string()))?;
        }
        let mut config = load_config(&c.config)?;
        if let Some(s) = c.seed {
            config.seed = s;
        }
        if let Some(dir) = &c.out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Run {
            config,
            out: c.out.clone(),
            format: c.format.parse()?,
        })
    }

    fn ext(&self) -> &'static str {
        match self.format {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }

    /// Writes `text` to `<out>/<name>`, or prints it.
    fn emit(&self, name: &str, text: &str) -> Result<()> {
        match &self.out {
            Some(dir) => {
                let path = dir.join(name);
                info!("writing {}", path.display());
                write_text(&path, text)
            }
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn emit_report<T: Serialize>(&self, stem: &str, value: &T) -> Result<()> {
        self.emit(&format!("{stem}.{}", self.ext()), &render(value, self.format)?)
    }

    /// Extra file, written only with `--out`.
    fn side_file(&self, name: &str, text: &str) -> Result<()> {
        match &self.out {
            Some(dir) => write_text(&dir.join(name), text),
            None => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct EigenReport {
    solution: EigenSolution,
    bounds: EigenBounds,
    series: Option<SeriesReport>,
}

#[derive(Serialize)]
struct SeriesReport {
    series: PerturbationSeries,
    beta_sum: f64,
    difference: f64,
}

fn eigen(common: &Common, order: Option<usize>) -> Result<i32> {
    let run = Run::new(common)?;
    let p = Pipeline::new(run.config.clone())?;
    let solution = p.eigen()?;
    let bounds = verify_eigen_bounds(&p.a, p.theta(), &solution);
    let series = match order {
        Some(n) => {
            let s = perturbation_series(&p.a, p.theta(), n).map_err(|e| e.at("series"))?;
            let sum = s.beta_sum(n);
            Some(SeriesReport {
                difference: (sum - solution.beta).abs(),
                beta_sum: sum,
                series: s,
            })
        }
        None => None,
    };
    run.emit_report(
        "eigen",
        &EigenReport {
            solution,
            bounds,
            series,
        },
    )?;
    Ok(0)
}

#[derive(Serialize)]
struct ProfileReport {
    beta: f64,
    b: SymMat,
    iterations: usize,
    converged: bool,
    final_residual: f64,
    residuals: Vec<f64>,
    contraction_estimates: Vec<f64>,
    regime_valid: bool,
}

fn profile(common: &Common) -> Result<i32> {
    let run = Run::new(common)?;
    let p = Pipeline::new(run.config.clone())?;
    let eig = p.eigen()?;
    let res = p.profile(&eig)?;
    let report = ProfileReport {
        beta: res.beta,
        b: res.b_used.clone(),
        iterations: res.iterations,
        converged: res.converged,
        final_residual: res.final_residual,
        residuals: res.residuals.clone(),
        contraction_estimates: res.contraction_estimates.clone(),
        regime_valid: res.regime_valid,
    };
    match (run.format, &run.out) {
        (Format::Csv, None) => run.emit("profile.csv", &field_csv(&res.psi))?,
        _ => {
            run.emit_report("profile", &report)?;
            run.side_file("profile_field.csv", &field_csv(&res.psi))?;
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct EvolveFooter<'a> {
    c_squared: f64,
    c_squared_calibrated: f64,
    convergence: &'a ssbolt::dynamics::RateReport,
}

fn evolve(common: &Common, dump_every: Option<usize>) -> Result<i32> {
    let run = Run::new(common)?;
    let p = Pipeline::new(run.config.clone())?;
    let eig = p.eigen()?;
    let prof = p.profile(&eig)?;
    let dyn_run = p.dynamics(&eig, &prof.psi)?;
    let conv = &dyn_run.convergence;
    let footer = EvolveFooter {
        c_squared: dyn_run.c_squared,
        c_squared_calibrated: dyn_run.c_squared_calibrated,
        convergence: conv,
    };
    let rows: Vec<Vec<f64>> = (0..conv.times.len())
        .map(|i| {
            vec![
                conv.times[i],
                conv.distances[i],
                conv.direct_distances[i],
                dyn_run.moment_distances[i],
            ]
        })
        .collect();
    let csv = trajectory_csv(&["t", "D", "D_direct", "moment_distance"], &rows, &footer)?;
    match run.format {
        Format::Csv => run.emit("trajectory.csv", &csv)?,
        Format::Json => {
            run.emit("trajectory.json", &to_json_string(&footer)?)?;
            run.side_file("trajectory.csv", &csv)?;
        }
    }
    if let Some(n) = dump_every.filter(|&n| n > 0) {
        if run.out.is_none() {
            return Err(Error::config("dump-every", "needs --out"));
        }
        for (i, (t, f)) in dyn_run.trajectory.times.iter().zip(&dyn_run.trajectory.fields).enumerate() {
            if i % n == 0 {
                info!("dumping snapshot t = {t}");
                run.side_file(&format!("snapshot_{i:05}.csv"), &field_csv(f))?;
            }
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct MomentsReport {
    g0: Option<SymMat>,
    c_squared: Option<f64>,
    times: Vec<f64>,
    g: Vec<SymMat>,
    sweep: ssbolt::verify::MomentSummary,
}

fn moments(common: &Common) -> Result<i32> {
    let run = Run::new(common)?;
    let p = Pipeline::new(run.config.clone())?;
    let eig = p.eigen()?;
    let sweep = p.moments(&eig)?;
    let g0 = run.config.dynamics.initial.g0(&eig.b)?;
    let dy = &run.config.dynamics;
    let steps = (dy.t_final / dy.snapshot_every).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dy.t_final / steps as f64).collect();
    let (g, c2) = match &g0 {
        Some(g0) => {
            let states = ssbolt::dynamics::moment_ode_solve(g0, &p.a, eig.beta, p.theta(), &times)?;
            let c2 = ssbolt::dynamics::project_c_squared(g0, &p.a, eig.beta, p.theta())?;
            (states.into_iter().map(|s| s.g).collect(), Some(c2))
        }
        None => (Vec::new(), None),
    };
    let report = MomentsReport {
        g0,
        c_squared: c2,
        times,
        g,
        sweep,
    };
    run.emit_report("moments", &report)?;
    Ok(0)
}

fn verify(common: &Common) -> Result<i32> {
    let run = Run::new(common)?;
    let report = run_verify(&run.config)?;
    run.emit_report("verify", &report)?;
    for f in report.failures() {
        eprintln!("check failed: {f}");
    }
    Ok(if report.passed { 0 } else { 1 })
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Eigen { common, series } => eigen(common, *series),
        Command::Profile { common } => profile(common),
        Command::Evolve { common, dump_every } => evolve(common, *dump_every),
        Command::Moments { common } => moments(common),
        Command::Verify { common } => verify(common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
