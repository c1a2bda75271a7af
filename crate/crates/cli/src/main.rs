//! `rmmimo`: pattern decomposition, channel estimation, precoder design and
//! seeded Monte-Carlo sweeps from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rmmimo_core::estimator::write_estimate;
use rmmimo_core::harness::{
    self, emit_results, estimate_once, export_pattern_samples, precode_once, run_sweep, trial_seed, write_timing, Experiment,
    ExperimentConfig, Scale,
};
use rmmimo_core::precoder::write_solution;
use rmmimo_core::sphharm::{
    baseline_pattern, fit_pattern, max_degree, pattern_nmse, project_pattern, quadrature_grid, read_pattern_csv,
    reconstruct_pattern, BaselinePattern, DEFAULT_GRID,
};
use rmmimo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rmmimo", version, about = "Pattern-reconfigurable massive MIMO experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with `ExperimentConfig` fields; missing keys keep the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Restrict to these schemes (repeatable).
    #[arg(long = "scheme", global = true)]
    schemes: Vec<String>,
    /// Precoding sweeps: skip the estimated-eCSI runs.
    #[arg(long, global = true)]
    perfect_ecsi: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Isotropic,
    Dipole,
    #[value(name = "38901")]
    Tgpp38901,
    Downtilt,
}

impl From<PatternArg> for BaselinePattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Isotropic => BaselinePattern::Isotropic,
            PatternArg::Dipole => BaselinePattern::Dipole,
            PatternArg::Tgpp38901 => BaselinePattern::Tgpp38901,
            PatternArg::Downtilt => BaselinePattern::Downtilt,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Spherical-harmonic coefficients of a pattern and the truncation NMSE.
    Decompose {
        /// Built-in element pattern.
        #[arg(long, value_enum, conflicts_with = "input")]
        pattern: Option<PatternArg>,
        /// `theta,phi,gain` samples (radians) fitted by least squares.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Truncation K.
        #[arg(long, default_value_t = 225)]
        k: usize,
    },
    /// Estimate every user's channel from one synthetic uplink.
    Estimate {
        /// Also write the dense eCSI estimate of each user.
        #[arg(long)]
        ecsi: bool,
    },
    /// Single- and multi-mode precoder design on one perfect-eCSI draw.
    Precode,
    /// Monte-Carlo sweep from the configuration.
    Sweep,
    /// Sample the designed EM patterns on a grid for plotting.
    ExportPattern {
        #[arg(long, default_value_t = DEFAULT_GRID.0)]
        n_theta: usize,
        #[arg(long, default_value_t = DEFAULT_GRID.1)]
        n_phi: usize,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let scale = match c.scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    };
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::from_file(path, scale)?,
        None => ExperimentConfig::for_scale(scale),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = c.trials {
        cfg.trials = trials;
    }
    if !c.schemes.is_empty() {
        cfg.schemes = c.schemes.clone();
    }
    if c.perfect_ecsi {
        cfg.estimated_ecsi = false;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn decompose(out: &Path, pattern: Option<PatternArg>, input: Option<&Path>, k: usize) -> Result<()> {
    let (alpha, nmse) = match input {
        Some(path) => {
            let (dirs, gains) = read_pattern_csv(path)?;
            let alpha = fit_pattern(&dirs, &gains, k)?;
            let fitted = reconstruct_pattern(&alpha, &dirs);
            (alpha, pattern_nmse(&gains, &fitted, &vec![1.0; gains.len()])?)
        }
        None => {
            let p: BaselinePattern = pattern.unwrap_or(PatternArg::Dipole).into();
            let c_max = max_degree(k.max(1)) as usize;
            let grid = quadrature_grid(DEFAULT_GRID.0.max(2 * c_max + 2), DEFAULT_GRID.1.max(4 * c_max + 2))?;
            let samples = grid.sample(|d| baseline_pattern(p, d));
            let alpha = project_pattern(&samples, k)?;
            let rebuilt = reconstruct_pattern(&alpha, &samples.directions);
            (alpha, pattern_nmse(&samples.gains, &rebuilt, &samples.weights)?)
        }
    };
    create_dir(out)?;
    let path = out.join("coefficients.csv");
    let mut text = String::from("k,alpha\n");
    for (i, a) in alpha.alpha.iter().enumerate() {
        text.push_str(&format!("{},{a:e}\n", i + 1));
    }
    std::fs::write(&path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
    println!("K = {k}: reconstruction NMSE {nmse:.3e} ({:.2} dB)", harness::db(nmse));
    println!("coefficients -> {}", path.display());
    Ok(())
}

fn estimate(cfg: &ExperimentConfig, out: &Path, with_ecsi: bool) -> Result<()> {
    let rows = harness::estimation_trial(cfg, 0, None, 0, trial_seed(cfg.seed, 0));
    for r in &rows {
        match (&r.error, r.nmse_s_db, r.nmse_e_db) {
            (Some(e), _, _) => println!("{:<13} failed: {e}", r.scheme),
            (None, Some(s), Some(e)) => println!("{:<13} NMSE-S {s:8.2} dB  NMSE-E {e:8.2} dB  {}", r.scheme, r.flags),
            _ => {}
        }
    }
    let (estimates, _) = estimate_once(cfg)?;
    for (u, est) in estimates.iter().enumerate() {
        write_estimate(&out.join(format!("ue{u}")), est, with_ecsi)?;
    }
    println!("estimates -> {}", out.display());
    Ok(())
}

fn precode(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (sm, mm) = precode_once(cfg)?;
    for (name, sol) in [("sm", &sm), ("mm", &mm)] {
        write_solution(&out.join(name), sol)?;
        println!(
            "{name}: SE {:.4} bits/s/Hz after {} iterations ({} rejected){}",
            sol.se_trace.last().copied().unwrap_or(0.0),
            sol.iterations,
            sol.rejected,
            if sol.stagnated { ", stagnated" } else { "" }
        );
    }
    println!("precoders -> {}", out.display());
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let kind = match cfg.experiment {
        Experiment::Estimation => "estimation",
        Experiment::Precoding => "precoding",
    };
    eprintln!("{kind} sweep '{}': {} point(s) × {} trial(s)", cfg.scenario, cfg.points().len(), cfg.trials);
    let records = run_sweep(cfg)?;
    let summary = emit_results(&records, cfg, out)?;
    write_timing(&records, &out.join("timing.csv"))?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    for row in &summary.rows {
        let value = row.value.map(|v| format!("{v}")).unwrap_or_else(|| "-".into());
        let label = if row.ecsi.is_empty() { row.scheme.clone() } else { format!("{}/{}", row.scheme, row.ecsi) };
        let mut line = format!("{value:>8}  {label:<22}");
        if let Some(s) = row.nmse_s_db {
            line.push_str(&format!(" NMSE-S {:8.2} ± {:.2} dB", s.mean, s.stderr));
        }
        if let Some(e) = row.nmse_e_db {
            line.push_str(&format!(" NMSE-E {:8.2} ± {:.2} dB", e.mean, e.stderr));
        }
        if let Some(se) = row.se {
            line.push_str(&format!(" SE {:8.4} ± {:.4}", se.mean, se.stderr));
        }
        println!("{line}");
    }
    if failed > 0 {
        eprintln!("{failed} row(s) failed; see the error column of results.csv");
    }
    println!("results -> {}", out.display());
    Ok(())
}

fn export_pattern(cfg: &ExperimentConfig, out: &Path, grid: (usize, usize)) -> Result<()> {
    let (sm, mm) = precode_once(cfg)?;
    create_dir(out)?;
    for (name, sol) in [("sm", &sm), ("mm", &mm)] {
        let path = out.join(format!("pattern_{name}.csv"));
        export_pattern_samples(&sol.em, grid, &path)?;
        println!("{name} pattern samples -> {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.common.out.clone();
    match cli.command {
        Command::Decompose { pattern, input, k } => decompose(&out, pattern, input.as_deref(), k),
        Command::Estimate { ecsi } => estimate(&load_config(&cli.common)?, &out, ecsi),
        Command::Precode => precode(&load_config(&cli.common)?, &out),
        Command::Sweep => sweep(&load_config(&cli.common)?, &out),
        Command::ExportPattern { n_theta, n_phi } => export_pattern(&load_config(&cli.common)?, &out, (n_theta, n_phi)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
