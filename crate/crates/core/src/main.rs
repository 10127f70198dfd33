use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evadv::bench::{self, RunConfig};
use evadv::Error;

#[derive(Debug, Parser)]
#[command(name = "evadv", version, about = "Adversarial attacks on event-stream classifiers")]
struct Cli {
    /// TOML run configuration. Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData,
    /// Train the victim classifier.
    TrainVictim,
    /// Run the attack campaign against the trained victim.
    Attack(AblationFlags),
    /// Score stored attack results under the configured defenses.
    Defend(AblationFlags),
    /// Merge result tables of several runs.
    Report {
        /// Run directories to merge.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Destination directory.
        #[arg(long = "to", default_value = "report")]
        to: PathBuf,
    },
}

#[derive(Debug, Args)]
struct AblationFlags {
    /// Skip perturbation diffusion
    #[arg(long)]
    no_diffusion: bool,
    /// Diffuse over temporal neighbors only
    #[arg(long)]
    no_spatial: bool,
    /// Diffuse over spatial neighbors only
    #[arg(long)]
    no_temporal: bool,
    /// Let temporal neighbors precede the event
    #[arg(long)]
    no_causal: bool,
    /// Keep the learning rate fixed
    #[arg(long)]
    no_adaptive_lr: bool,
}

impl AblationFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let a = &mut cfg.attack.ablation;
        a.diffusion &= !self.no_diffusion;
        a.spatial &= !self.no_spatial;
        a.temporal &= !self.no_temporal;
        a.causal &= !self.no_causal;
        a.adaptive_lr &= !self.no_adaptive_lr;
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    match &cli.command {
        Command::Attack(f) | Command::Defend(f) => f.apply(&mut cfg),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    match &cli.command {
        Command::GenData => {
            let m = bench::cmd_gen_data(cfg)?;
            println!("wrote {} samples to {}", m.entries.len(), bench::data_dir(cfg).display());
        }
        Command::TrainVictim => {
            let m = bench::cmd_train_victim(cfg)?;
            println!(
                "train accuracy {:.4}, val accuracy {}",
                m.train_accuracy,
                m.val_accuracy.map_or("n/a".into(), |v| format!("{v:.4}"))
            );
        }
        Command::Attack(_) => {
            println!("{}", bench::ATTACK_CSV_HEADER);
            for row in bench::cmd_attack(cfg)? {
                println!("{}", row.to_csv());
            }
        }
        Command::Defend(_) => {
            println!("{}", bench::DEFEND_CSV_HEADER);
            for row in bench::cmd_defend(cfg)? {
                println!("{}", row.to_csv());
            }
        }
        Command::Report { runs, to } => {
            let s = bench::cmd_report(runs, to)?;
            println!(
                "merged {} attack rows, {} defense rows, {} event dumps into {}",
                s.attack_rows,
                s.defend_rows,
                s.dumps,
                to.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
