mod cache;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moire_core::config::{RelaxationConfig, RunConfig, ValidationSampling};
use moire_core::engine::{default_lambda, TruncationConfig, DEFAULT_TAU};
use moire_core::geometry::commensurate_supercell;
use moire_core::observables::{bands, dos, gamma_convergence, KPath};
use moire_core::oracle::{cross_validate, probe_momenta};
use moire_core::relaxation::{relax, ElasticityTensor, GsfeModel, RelaxOptions};
use moire_core::Error;
use serde_json::json;

use output::RunWriter;

#[derive(Parser)]
#[command(name = "moire", version, about = "Twisted-bilayer band structures, DOS and convergence studies")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Directory for sampled-coupling caches; reused across runs when the keys match.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Print the effective configuration with all defaults and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve for the displacement field.
    Relax,
    /// Band structure along K–Γ–M–K′ of the moiré zone.
    Bands,
    /// Gaussian-smeared density of states.
    Dos,
    /// Γ-point convergence sweeps in Λ and τ.
    Converge,
    /// Compare against the real-space supercell at a commensurate angle.
    Validate,
    /// Sample the interlayer coupling for both valleys into the cache.
    SampleCache,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Relax => "relax",
            Command::Bands => "bands",
            Command::Dos => "dos",
            Command::Converge => "converge",
            Command::Validate => "validate",
            Command::SampleCache => "sample-cache",
        }
    }
}

const TEMPLATE: &str = r#"{"geometry": {"theta_deg": 1.1}}"#;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn config_error(field: &str, message: &str) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn run(cli: &Cli) -> moire_core::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(p) if cli.print_config => {
            let mut c = RunConfig::parse(&std::fs::read_to_string(p)?)?;
            c.resolve_paths(p.parent().unwrap_or(std::path::Path::new(".")));
            c
        }
        Some(p) => RunConfig::load(p)?,
        None if cli.print_config => RunConfig::parse(TEMPLATE)?,
        None => return Err(config_error("--config", "a configuration file is required")),
    };
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(config_error("<command>", "missing subcommand (relax, bands, dos, converge, validate, sample-cache)"));
    };
    let out_dir = cli.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let canonical = serde_json::to_string(&cfg)?;
    let mut w = RunWriter::new(&out_dir, command.name(), &canonical)?;
    w.write("config.json", (serde_json::to_string_pretty(&cfg)? + "\n").as_bytes())?;
    let cache_dir = cli.cache_dir.as_deref();

    match command {
        Command::Relax => {
            let geom = cfg.geometry()?;
            let (gsfe, elast, opts) = match &cfg.relaxation {
                RelaxationConfig::Solve { gsfe, elasticity, options } => (gsfe.clone(), *elasticity, options.clone()),
                _ => (GsfeModel::graphene_illustrative(), ElasticityTensor::graphene(), RelaxOptions::default()),
            };
            let r = relax(&gsfe, &elast, &geom, &opts)?;
            w.lap("relax");
            w.write_json("displacement.json", &r.field.to_json())?;
            w.write_json(
                "relax_report.json",
                &json!({
                    "energy": r.energy,
                    "iterations": r.report.iterations,
                    "gradient_norm": r.report.gradient_norm,
                    "converged": r.report.converged,
                    "modes": r.field.modes.len(),
                    "l2_norm": r.field.l2_norm(),
                }),
            )?;
        }
        Command::Bands => {
            let engine = cfg.engine()?;
            w.lap("setup");
            let valley = cfg.observables.path.valley;
            let h = cache::hamiltonian(&engine, valley, cache_dir)?;
            w.lap("assemble");
            let path = KPath::moire(&engine.geom, valley, cfg.observables.path.points_per_segment)?;
            let b = bands(&h, &path)?;
            w.lap("diagonalize");
            w.write("bands.csv", b.to_csv().as_bytes())?;
            w.write_json(
                "bands_meta.json",
                &json!({
                    "labels": path.labels,
                    "vertices": path.vertices,
                    "vertex_indices": path.vertex_indices(),
                    "dim": h.dim(),
                    "lambda": engine.truncation.lambda,
                    "tau": engine.truncation.tau,
                    "middle_bandwidth": b.middle_bandwidth(),
                }),
            )?;
        }
        Command::Dos => {
            let engine = cfg.engine()?;
            let opts = &cfg.observables.dos;
            let h1 = cache::hamiltonian(&engine, 1, cache_dir)?;
            let h2 = if opts.both_valleys { Some(cache::hamiltonian(&engine, 2, cache_dir)?) } else { None };
            w.lap("assemble");
            let hs: Vec<_> = std::iter::once(&h1).chain(h2.as_ref()).collect();
            let d = dos(&hs, opts)?;
            w.lap("dos");
            w.write_json("dos.json", &d)?;
        }
        Command::Converge => {
            let engine = cfg.engine()?;
            let g0 = engine.geom.moire_reciprocal_length();
            let lambdas: Vec<f64> = cfg.convergence.lambda_units.iter().map(|x| x * g0).collect();
            let report = gamma_convergence(&engine, &lambdas, &cfg.convergence.tau)?;
            w.lap("sweeps");
            for (name, fit) in [("Λ", &report.gamma_lambda), ("τ", &report.gamma_tau)] {
                if let Some(d) = &fit.diagnostic {
                    log::warn!("{name} sweep: {d}");
                }
            }
            w.write_json("convergence.json", &report)?;
        }
        Command::Validate => {
            let v = &cfg.validation;
            let cell = commensurate_supercell(v.m, v.n, &cfg.monolayer(), cfg.geometry.convention)?;
            let model = cfg.model()?;
            let u = cfg.displacement(&cell.geometry)?;
            let trunc = TruncationConfig {
                lambda: Some(v.lambda_scale * default_lambda(&cell.geometry)),
                tau: Some(v.tau_scale * DEFAULT_TAU),
                ..cfg.truncation.clone()
            };
            let ks = match v.sampling {
                ValidationSampling::Path => KPath::moire(&cell.geometry, 1, v.kpoints)?.sample().1,
                ValidationSampling::Probe => {
                    let sc_recip = 2.0 * std::f64::consts::PI * cell.supercell.inverse().transpose();
                    probe_momenta(&sc_recip, v.kpoints, cfg.seed)
                }
            };
            let report = cross_validate(&cell, &model, u.as_ref(), &trunc, &ks, v.window, v.dos_epsilon)?;
            w.lap("validate");
            w.write_json("validation.json", &report)?;
        }
        Command::SampleCache => {
            let engine = cfg.engine()?;
            let dir = cache_dir.map(PathBuf::from).unwrap_or_else(|| out_dir.join("cache"));
            let mut files = Vec::new();
            for valley in [1, 2] {
                let (_, reused) = cache::sample(&engine, valley, Some(&dir))?;
                let path = cache::cache_path(&dir, &engine, valley);
                files.push(json!({"valley": valley, "file": path, "reused": reused}));
            }
            w.lap("sample");
            w.write_json("cache_index.json", &files)?;
        }
    }
    let manifest = w.finish()?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}
