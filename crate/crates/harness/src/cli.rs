use std::ffi::OsString;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use opwalk_core::env::{compute_backbone, generate_environment};
use opwalk_core::geometry::LatticeGeometry;

use crate::config::{ExperimentConfig, Format, Kind};
use crate::envfile::{read_window, write_window};
use crate::error::{HarnessError, Result};
use crate::experiments::validate;
use crate::run::{run, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "opwalk", version, about = "Directed random walks on the backbone of supercritical oriented percolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Survival probability of the origin over a grid of p with Wilson
    /// intervals. The smallest p whose lower bound exceeds the floor is the
    /// supercritical working point.
    SurvivalScan(RunArgs),
    /// Quenched local limit theorem: sum_x |P_omega(X_n = x) - P(X_n = x)
    /// phi(shifted omega)| tends to 0 for almost every environment.
    Llt(RunArgs),
    /// Concentration of the invariant density: averages of phi over cubes
    /// of side M tend to 1.
    Concentration(RunArgs),
    /// Quenched and annealed masses of boxes of side N^(theta/2) agree at
    /// the scale of the events G1, G2 and G4 with probability close to 1.
    BoxEvents(RunArgs),
    /// Two walks in one environment come within ln^2 N of each other at
    /// most N^(1/2 + eps) times before N, with high probability.
    Encounters(RunArgs),
    /// The annealed law's sup decays like n^(-d/2) and its space and time
    /// differences like n^(-(d+1)/2).
    Derivative(RunArgs),
    /// Annealed and quenched probabilities of a displacement beyond
    /// sqrt(n) ln^3 N are negligible.
    Displacement(RunArgs),
    /// Environment seen from the particle: the chain with one-step kernel g,
    /// compared with the exact one-step expectation of a cylinder event.
    EnvChain(RunArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the default config of an experiment kind.
    Init {
        #[arg(value_enum)]
        kind: Kind,
    },
    /// Binary environment windows.
    #[command(subcommand)]
    Env(EnvCommand),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML config; defaults for the subcommand's kind when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Use the exact annealed law (p = 0 or p = 1 only).
    #[arg(long)]
    analytic_annealed: bool,
}

#[derive(Subcommand, Debug)]
enum EnvCommand {
    /// Generate a Bernoulli window and write it in OPBW1 format.
    Dump {
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long)]
        half_width: i64,
        #[arg(long, default_value_t = 0)]
        t_min: i64,
        #[arg(long)]
        t_max: i64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe an OPBW1 file.
    Info { path: PathBuf },
}

/// Applies command-line overrides to the config for `kind`.
fn resolve(kind: Kind, a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.kind() != kind {
        return Err(HarnessError::Invalid(vec![format!("config is for kind {}, not {kind}", cfg.kind())]));
    }
    if let Some(s) = a.seed {
        cfg.experiment.seed = s;
    }
    if let Some(r) = a.replicas {
        cfg.experiment.replicas = r;
    }
    if let Some(t) = a.threads {
        cfg.experiment.threads = Some(t);
    }
    if let Some(o) = &a.out {
        cfg.output.dir = o.clone();
    }
    if let Some(f) = a.format {
        cfg.output.format = f;
    }
    if a.analytic_annealed {
        cfg.experiment.analytic_annealed = true;
    }
    Ok(cfg)
}

fn run_kind(kind: Kind, a: &RunArgs) -> Result<()> {
    let cfg = resolve(kind, a)?;
    let v = validate(&cfg).map_err(HarnessError::Invalid)?;
    let opts = RunOptions::from_config(v.config());
    let record = run(&v, &opts)?;
    println!(
        "{}: {} records in {} ({} resumed), {:.2}s",
        kind,
        record.replica_count,
        cfg.output.dir.display(),
        record.resumed,
        record.wall_clock_seconds
    );
    for r in &record.summary {
        let v = r.value.map_or("-".to_string(), |v| format!("{v:.6}"));
        let se = r.stderr.map_or(String::new(), |s| format!(" se {s:.2e}"));
        let ci = match (r.ci_low, r.ci_high) {
            (Some(a), Some(b)) => format!(" ci [{a:.4}, {b:.4}]"),
            _ => String::new(),
        };
        println!("  {} {} = {v}{se}{ci} (count {})", r.statistic, r.param, r.count);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SurvivalScan(a) => run_kind(Kind::SurvivalScan, &a),
        Command::Llt(a) => run_kind(Kind::Llt, &a),
        Command::Concentration(a) => run_kind(Kind::Concentration, &a),
        Command::BoxEvents(a) => run_kind(Kind::BoxEvents, &a),
        Command::Encounters(a) => run_kind(Kind::Encounters, &a),
        Command::Derivative(a) => run_kind(Kind::Derivative, &a),
        Command::Displacement(a) => run_kind(Kind::Displacement, &a),
        Command::EnvChain(a) => run_kind(Kind::EnvChain, &a),
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            validate(&cfg).map_err(HarnessError::Invalid)?;
            println!("{}: ok ({})", config.display(), cfg.kind());
            Ok(())
        }
        Command::Init { kind } => {
            print!("{}", ExperimentConfig::defaults(kind).to_toml_string());
            Ok(())
        }
        Command::Env(EnvCommand::Dump { d, half_width, t_min, t_max, p, seed, out }) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(HarnessError::Invalid(vec!["p out of [0,1]".into()]));
            }
            let g = LatticeGeometry::new(d, half_width, t_min, t_max).map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
            let env = generate_environment(g, p, seed)?;
            let file = crate::run::create(&out)?;
            write_window(BufWriter::new(file), &env).map_err(|e| HarnessError::io(&out, e))?;
            println!("{}: {} sites, {} open", out.display(), g.site_count(), env.open_count());
            Ok(())
        }
        Command::Env(EnvCommand::Info { path }) => {
            let file = std::fs::File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
            let env = read_window(std::io::BufReader::new(file)).map_err(|e| HarnessError::io(&path, e))?;
            let g = env.geometry();
            let bb = compute_backbone(&env, g.t_max())?;
            println!(
                "d {} half_width {} t {}..={} provenance {:?} sites {} open {} backbone {}",
                g.dim(),
                g.half_width(),
                g.t_min(),
                g.t_max(),
                env.provenance(),
                g.site_count(),
                env.open_count(),
                bb.backbone_count()
            );
            Ok(())
        }
    }
}

/// Entry point; returns the process exit code (0 success, 2 invalid
/// configuration or usage, 1 runtime failure).
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_names_the_statement_of_each_kind() {
        let cmd = Cli::command();
        for k in Kind::ALL {
            let sub = cmd.find_subcommand(k.name()).unwrap_or_else(|| panic!("no subcommand {k}"));
            let about = sub.get_about().unwrap().to_string();
            assert!(about.len() > 30, "{k}: {about}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with(["opwalk", "nonsense"]), 2);
        assert_eq!(main_with(["opwalk", "llt", "--config", "/nonexistent/x.toml"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[experiment]\nkind = \"llt\"\nseed = 1\nreplicas = 2\n[geometry]\np = 1.5\n").unwrap();
        let p = path.to_str().unwrap();
        assert_eq!(main_with(["opwalk", "validate", "--config", p]), 2);
        assert_eq!(main_with(["opwalk", "llt", "--config", p]), 2);
        assert_eq!(main_with(["opwalk", "encounters", "--config", p]), 2);
    }
}
