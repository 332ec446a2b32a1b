use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use accel_diffeo::experiment::{run_experiment, write_trace, ExperimentSpec};
use accel_diffeo::field::warp;
use accel_diffeo::io::{load_flow, load_pgm, save_flow, save_pgm};
use accel_diffeo::potential::gradient_oracle;
use accel_diffeo::synth::{add_salt_pepper, gen_rect_pair, gen_square_pair};
use accel_diffeo::{run, GridSpec, Scheme, SolverConfig};

/// Accelerated diffeomorphic image registration.
#[derive(Parser)]
#[command(name = "accel-diffeo", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register I1 onto I0 so that I1 warped by the map matches I0.
    Register(RegisterArgs),
    /// Write a synthetic image pair (and ground-truth flow when known).
    Gen(GenArgs),
    /// Run an experiment spec and write its CSVs.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare the analytic gradient with finite differences.
    CheckGrad {
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Describe a PGM or DFLO file.
    Info { path: PathBuf },
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    i0: PathBuf,
    #[arg(long)]
    i1: PathBuf,
    #[arg(long, default_value = "agd")]
    scheme: Scheme,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    p: Option<u32>,
    #[arg(long = "C", alias = "c")]
    c: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    safety: Option<f64>,
    #[arg(long)]
    eps_visc: Option<f64>,
    /// Recorded in the trace header; the solver itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_flow: Option<PathBuf>,
    #[arg(long)]
    out_warped: Option<PathBuf>,
    #[arg(long)]
    out_trace: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 50)]
    size: usize,
    #[arg(long, default_value_t = 20)]
    square: usize,
    /// Horizontal shift in pixels.
    #[arg(long, default_value_t = 10, allow_hyphen_values = true)]
    shift: isize,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    shift_y: isize,
    /// Rectangle `WxH` drawn in I1 instead of the translated square.
    #[arg(long)]
    rect: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<accel_diffeo::Error> for Failure {
    fn from(e: accel_diffeo::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Register(a) => register(a),
        Command::Gen(a) => gen(a),
        Command::Experiment { spec, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let report = run_experiment(&spec, &out)?;
            for r in &report.rows {
                println!(
                    "{:<13} size={} alpha={} noise={} status={} iters={} potential={:.6e}",
                    r.scheme, r.config.size, r.config.alpha, r.config.noise, r.status, r.iterations, r.final_potential
                );
            }
            println!("summary: {}", report.summary_path.display());
            Ok(())
        }
        Command::CheckGrad {
            alpha,
            seed,
            grid,
            pairs,
            eps,
        } => {
            if !(alpha >= 0.0 && eps > 0.0) {
                return Err(Failure::Usage("alpha must be >= 0 and eps > 0".into()));
            }
            let err = gradient_oracle(grid, alpha, seed, pairs, eps)?;
            println!("max relative error: {err:.3e}");
            Ok(())
        }
        Command::Info { path } => info(path),
    }
}

fn register(a: RegisterArgs) -> Result<(), Failure> {
    let i0 = load_pgm(&a.i0)?;
    let i1 = load_pgm(&a.i1)?;
    let mut cfg = SolverConfig::new(a.scheme, a.alpha);
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.c {
        cfg.c = v;
    }
    if let Some(v) = a.tol {
        cfg.tol = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = a.safety {
        cfg.safety = v;
    }
    if let Some(v) = a.eps_visc {
        cfg.eps_visc = v;
    }
    let outcome = run(&i0, &i1, &cfg)?.map_err(|e| Failure::Numerical(e.to_string()))?;
    let last = outcome.trace.last().expect("trace starts with the initial state");
    println!(
        "{} {} after {} iterations, potential {:.6e}",
        cfg.scheme,
        if outcome.converged { "converged" } else { "stopped" },
        outcome.iterations(),
        last.potential
    );
    if let Some(p) = &a.out_flow {
        save_flow(&outcome.phi, p)?;
    }
    if let Some(p) = &a.out_warped {
        save_pgm(&warp(&i1, &outcome.phi)?, p)?;
    }
    if let Some(p) = &a.out_trace {
        let header = format!(
            "# i0 = {}\n# i1 = {}\n# scheme = {}\n# alpha = {}\n# p = {}\n# c = {}\n# tol = {}\n# max_iters = {}\n# safety = {}\n# eps_visc = {}\n# seed = {}\n",
            a.i0.display(),
            a.i1.display(),
            cfg.scheme,
            cfg.alpha,
            cfg.p,
            cfg.c,
            cfg.tol,
            cfg.max_iters,
            cfg.safety,
            cfg.eps_visc,
            a.seed
        );
        write_trace(&outcome, &header, p)?;
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<(), Failure> {
    let grid = GridSpec::square(a.size)?;
    let shift = (a.shift, a.shift_y);
    let pair = match &a.rect {
        Some(r) => {
            let (w, h) = r
                .split_once(['x', 'X'])
                .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
                .ok_or_else(|| Failure::Usage(format!("--rect must be WxH, got '{r}'")))?;
            gen_rect_pair(grid, a.square, w, h, shift)?
        }
        None => gen_square_pair(grid, a.square, shift)?,
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Usage(format!("{}: {e}", a.out_dir.display())))?;
    let i0 = add_salt_pepper(&pair.i0, a.noise, a.seed)?;
    let i1 = add_salt_pepper(&pair.i1, a.noise, a.seed.wrapping_add(1))?;
    save_pgm(&i0, a.out_dir.join("i0.pgm"))?;
    save_pgm(&i1, a.out_dir.join("i1.pgm"))?;
    if let Some(gt) = &pair.gt_flow {
        save_flow(gt, a.out_dir.join("gt.dflo"))?;
    }
    println!("wrote pair to {}", a.out_dir.display());
    Ok(())
}

fn info(path: PathBuf) -> Result<(), Failure> {
    let bytes = std::fs::read(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"DFLO") {
        let m = load_flow(&path)?;
        let g = m.grid();
        let max = m.displacement().max_norm();
        println!("flow {}x{}, max displacement {max:.4}", g.width, g.height);
    } else {
        let f = load_pgm(&path)?;
        let g = f.grid();
        println!("image {}x{}, range [{:.4}, {:.4}]", g.width, g.height, f.min(), f.max());
    }
    Ok(())
}
