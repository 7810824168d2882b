//! `levy-parametrix` command-line front end.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levy_parametrix::coefficient_model::{CoefficientModel, Regime};
use levy_parametrix::parametrix::{DensityGrid, Parametrix};
use levy_parametrix::stable_kernels::{build_profile, default_radius_max, StableProfile};
use levy_parametrix::stable_sim;
use levy_parametrix::verification::{write_json_lines, Verifier};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn run(e: impl std::fmt::Display) -> Self {
        CliError::Run(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "levy-parametrix", version, about = "Parametrix densities for stable-driven SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transition density on a grid and the truncation certificate.
    Density(Common),
    /// Euler ensemble and its kernel density estimate.
    Simulate(Common),
    /// Run the verification suites; exits 1 when a check fails.
    Verify(Common),
    /// Tabulate the stable profile.
    ProfileBuild(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; all logical cores by default.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
    /// Series tolerance.
    #[arg(long, value_name = "X")]
    tol: Option<f64>,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse::<Regime>().map_err(|e| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(r) = self.regime {
            cfg.regime = Some(r);
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|source| CliError::Io { path, source })
}

fn finish(mut w: BufWriter<File>, name: &Path) -> Result<(), CliError> {
    w.flush().map_err(|source| CliError::Io { path: name.to_path_buf(), source })
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(CliError::run)?;
    writeln!(w).map_err(|source| CliError::Io { path: dir.join(name), source })?;
    finish(w, &dir.join(name))
}

fn profile(cfg: &RunConfig, model: &CoefficientModel) -> Result<StableProfile, CliError> {
    let alpha = model.alpha();
    if let Some(path) = &cfg.profile.cache {
        if path.exists() {
            let p = StableProfile::load(path).map_err(CliError::run)?;
            if p.alpha() == alpha && p.resolution() == cfg.profile.resolution {
                log::info!("profile loaded from {}", path.display());
                return Ok(p);
            }
            log::warn!("cached profile at {} does not match; rebuilding", path.display());
        }
    }
    let radius = cfg.profile.radius_max.unwrap_or_else(|| default_radius_max(alpha));
    let p = build_profile(alpha, 1, cfg.profile.resolution, radius).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = &cfg.profile.cache {
        p.save(path).map_err(CliError::run)?;
    }
    Ok(p)
}

fn cmd_profile_build(cfg: &RunConfig) -> Result<bool, CliError> {
    let model = cfg.build_model()?;
    let p = profile(cfg, &model)?;
    let name = format!("profile_alpha{}.csv", model.alpha());
    let mut w = create(&cfg.out, &name)?;
    p.write_csv(&mut w).map_err(CliError::run)?;
    finish(w, &cfg.out.join(&name))?;
    println!("profile alpha={} mass={:.9} -> {}", model.alpha(), p.mass(), cfg.out.join(name).display());
    Ok(true)
}

fn cmd_density(cfg: &RunConfig) -> Result<bool, CliError> {
    let model = cfg.build_model()?;
    let p = profile(cfg, &model)?;
    let px = Parametrix::new(&model, &p, model.regime(), &cfg.parametrix_config()).map_err(CliError::run)?;
    let ys = cfg.density.y.clone().unwrap_or_else(|| px.lattice().interior_nodes().to_vec());
    let mut grid: Option<DensityGrid> = None;
    for &t in &cfg.density.times {
        let g = px.density_grid(t, &cfg.density.x, &ys).map_err(CliError::run)?;
        match &mut grid {
            None => grid = Some(g),
            Some(all) => {
                all.times.extend(g.times);
                all.values.extend(g.values);
            }
        }
    }
    if let Some(grid) = grid {
        let mut w = create(&cfg.out, "density.csv")?;
        grid.write_csv(&mut w).map_err(CliError::run)?;
        finish(w, &cfg.out.join("density.csv"))?;
    }
    let cert = px.certificate();
    write_json(&cfg.out, "certificate.json", cert)?;
    if !cert.certified {
        log::warn!("series tail bound 10^{:.1} is above tolerance {:e}", cert.log10_tail_bound, cert.tol);
    }
    println!(
        "density regime={} alpha={} k_max={} certified={} -> {}",
        px.regime(),
        model.alpha(),
        cert.k_max,
        cert.certified,
        cfg.out.display()
    );
    Ok(true)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<bool, CliError> {
    let model = cfg.build_model()?;
    let s = &cfg.simulation;
    let ens = stable_sim::simulate(&model, s.x0, s.horizon, s.n_steps, s.n_paths, s.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut w = create(&cfg.out, "ensemble.csv")?;
    ens.write_csv(&mut w).map_err(|source| CliError::Io { path: cfg.out.join("ensemble.csv"), source })?;
    finish(w, &cfg.out.join("ensemble.csv"))?;
    let nodes: Vec<f64> = (0..cfg.lattice.nodes)
        .map(|i| cfg.lattice.lo + (cfg.lattice.hi - cfg.lattice.lo) * i as f64 / (cfg.lattice.nodes - 1) as f64)
        .collect();
    let emp = stable_sim::empirical_density(&ens, &nodes, s.bandwidth, s.seed).map_err(CliError::run)?;
    let mut w = create(&cfg.out, "empirical_density.csv")?;
    let io = |source| CliError::Io { path: cfg.out.join("empirical_density.csv"), source };
    writeln!(w, "y,value,std_error").map_err(io)?;
    for k in 0..emp.nodes.len() {
        writeln!(w, "{},{},{}", emp.nodes[k], emp.values[k], emp.std_errors[k]).map_err(io)?;
    }
    finish(w, &cfg.out.join("empirical_density.csv"))?;
    println!(
        "simulate paths={} aborted={} bandwidth={} mass={:.6} -> {}",
        ens.n_paths,
        ens.aborted,
        emp.bandwidth,
        emp.mass(),
        cfg.out.display()
    );
    Ok(true)
}

fn cmd_verify(cfg: &RunConfig) -> Result<bool, CliError> {
    let model = cfg.build_model()?;
    let p = profile(cfg, &model)?;
    let px = Parametrix::new(&model, &p, model.regime(), &cfg.parametrix_config()).map_err(CliError::run)?;
    let vcfg = cfg.verify_config();
    let verifier = Verifier::new(&px, &vcfg).map_err(CliError::run)?;
    let reports = verifier.run_all().map_err(CliError::run)?;
    let mut w = create(&cfg.out, "report.jsonl")?;
    write_json_lines(&reports, &mut w).map_err(|source| CliError::Io { path: cfg.out.join("report.jsonl"), source })?;
    finish(w, &cfg.out.join("report.jsonl"))?;
    write_json(&cfg.out, "certificate.json", px.certificate())?;
    for r in &reports {
        println!("{} {}/{} measured={:e}", if r.pass { "PASS" } else { "FAIL" }, r.suite, r.check, r.measured);
    }
    Ok(reports.iter().all(|r| r.pass))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&RunConfig) -> Result<bool, CliError>) = match &cli.command {
        Command::Density(c) => (c, cmd_density),
        Command::Simulate(c) => (c, cmd_simulate),
        Command::Verify(c) => (c, cmd_verify),
        Command::ProfileBuild(c) => (c, cmd_profile_build),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match common.resolve().and_then(|cfg| run(&cfg)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
