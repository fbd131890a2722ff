//! `qpf`: builds quasilattices, runs the expansion and the operator
//! diagnostics, solves for quasipatterns and renders them.
//!
//! Exit status is 0 on success, 2 when a command ran but reported
//! violations (or did not converge), 1 on errors and 64 on usage errors.

mod commands;
mod parse;

use std::fs::{self, File, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::parse::{parse_kcut, parse_real, UsageError};

const LOCK_NAME: &str = ".qpf.lock";

#[derive(Parser, Debug)]
#[command(name = "qpf", version, about = "Quasipattern solutions of the Swift-Hohenberg equation")]
struct Cli {
    /// Directory that receives every output file
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Seed for randomized diagnostics; recorded in their outputs
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct AtlasArgs {
    /// Symmetry order (2q-fold rotations)
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(4..=16))]
    pub q: u32,

    /// Largest word length kept
    #[arg(long)]
    pub nmax: u32,

    /// Radius cut |k| ≤ kcut; accepts `sqrt(5)`
    #[arg(long, value_parser = parse_kcut)]
    pub kcut: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Atlas JSON and shell census CSV
    Lattice {
        #[command(flatten)]
        atlas: AtlasArgs,
        /// Random product pairs for the algebra-norm monitor (0 skips it)
        #[arg(long, default_value_t = 0)]
        monitor_pairs: usize,
        /// Support bound N ≤ max_word of the monitored fields
        #[arg(long, default_value_t = 4)]
        monitor_word: u32,
        /// Sobolev index of the monitor
        #[arg(long, default_value_t = 3.0)]
        sobolev: f64,
    },
    /// Per-shell minima of ||k|² - 1|
    Divisors {
        #[command(flatten)]
        atlas: AtlasArgs,
    },
    /// Asymptotic expansion bundle
    Expand {
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(4..=16))]
        q: u32,
    },
    /// Spectral splitting labels and the disjointness report
    Split {
        #[command(flatten)]
        atlas: AtlasArgs,
        #[arg(long)]
        eps: f64,
        /// Constant in δ = C ε^{1/2}
        #[arg(long, default_value_t = 2.0)]
        c: f64,
    },
    /// Eigenvalues of the 2q×2q disc blocks over sector samples
    Blocks {
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(4..=16))]
        q: u32,
        /// Comma-separated list of ε
        #[arg(long, value_parser = parse_real, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
    },
    /// Newton solve of the truncated equation at one λ
    Solve {
        #[command(flatten)]
        atlas: AtlasArgs,
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        #[command(flatten)]
        newton: NewtonArgs,
        #[arg(long, value_enum, default_value_t = Init::Asymptotic)]
        init: Init,
        /// Field or solution JSON used with `--init file`
        #[arg(long)]
        init_file: Option<PathBuf>,
        #[arg(long, default_value = "solution.json")]
        out: PathBuf,
        /// Also write a PGM image of the solution
        #[arg(long)]
        render: Option<PathBuf>,
        #[command(flatten)]
        image: ImageArgs,
    },
    /// Newton continuation along an evenly spaced λ path
    Continue {
        #[command(flatten)]
        atlas: AtlasArgs,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[command(flatten)]
        newton: NewtonArgs,
        /// Solution file for the last point of the path
        #[arg(long, default_value = "branch_end.json")]
        out: PathBuf,
    },
    /// PGM image of a field or solution file
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "pattern.pgm")]
        out: PathBuf,
        #[command(flatten)]
        image: ImageArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct NewtonArgs {
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Initial damping factor in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ImageArgs {
    /// Half-width of the square sampled in physical space
    #[arg(long, default_value_t = 40.0)]
    pub window: f64,
    /// Pixels per side
    #[arg(long, default_value_t = 512)]
    pub resolution: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Asymptotic,
    Zero,
    File,
}

/// What a command found, as opposed to whether it ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    Violations,
}

/// Removes the lock file when the command finishes.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => anyhow::bail!(
                "{} is locked by another run (remove {} if none is active)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("QPF_THREADS") else { return Ok(()) };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(UsageError(format!("QPF_THREADS must be a positive integer, got {raw:?}")).into()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

pub struct Ctx {
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Ctx {
    /// Relative paths land in the output directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    pub fn write(&self, name: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name.as_ref());
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn create(&self, name: &Path) -> Result<(PathBuf, File)> {
        let path = self.path(name);
        let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        Ok((path, f))
    }
}

fn run(cli: Cli) -> Result<Status> {
    init_threads()?;
    let _lock = DirLock::acquire(&cli.out_dir)?;
    let ctx = Ctx { out_dir: cli.out_dir, seed: cli.seed };
    match cli.command {
        Command::Lattice { atlas, monitor_pairs, monitor_word, sobolev } => {
            commands::lattice(&ctx, &atlas, monitor_pairs, monitor_word, sobolev)
        }
        Command::Divisors { atlas } => commands::divisors(&ctx, &atlas),
        Command::Expand { q } => commands::expand(&ctx, q),
        Command::Split { atlas, eps, c } => commands::split(&ctx, &atlas, eps, c),
        Command::Blocks { q, eps, points, c } => commands::blocks(&ctx, q, &eps, points, c),
        Command::Solve { atlas, lambda, newton, init, init_file, out, render, image } => {
            let init = match (init, init_file) {
                (Init::File, None) => return Err(UsageError("--init file needs --init-file <PATH>".into()).into()),
                (Init::File, Some(p)) => commands::Start::File(p),
                (_, Some(_)) => return Err(UsageError("--init-file is only used with --init file".into()).into()),
                (Init::Asymptotic, None) => commands::Start::Asymptotic,
                (Init::Zero, None) => commands::Start::Zero,
            };
            commands::solve(&ctx, &atlas, lambda, &newton, init, &out, render.as_deref(), &image)
        }
        Command::Continue { atlas, from, to, steps, newton, out } => {
            commands::continuation(&ctx, &atlas, from, to, steps, &newton, &out)
        }
        Command::Render { input, out, image } => commands::render(&ctx, &input, &out, &image),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Violations) => ExitCode::from(2),
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(64)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
