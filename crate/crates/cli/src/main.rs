use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weightflow::config::RunConfig;
use weightflow::par::init_threads;
use weightflow::pipeline::Pipeline;

#[derive(Parser, Debug)]
#[command(name = "weightflow", version, about = "Generate neural network weights with flow matching")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the population of networks.
    MakePopulation,
    /// Align every network to a reference.
    Canonicalize {
        #[arg(long)]
        reference_index: Option<usize>,
    },
    /// Fit the PCA used as flow latent space.
    FitPca,
    /// Train the flow-matching model.
    TrainFlow,
    /// Sample new networks.
    Generate {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Accuracy, diversity and distance metrics.
    Evaluate,
    /// Write report.md and the IoU-vs-accuracy CSV.
    Report {
        /// Another run directory to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Every stage in order.
    Run,
}

fn pipeline(cli: &Cli, command: &Command) -> weightflow::Result<Pipeline> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| weightflow::Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match command {
        Command::Canonicalize {
            reference_index: Some(r),
        } => cfg.canonicalize.reference_index = *r,
        Command::Generate { count: Some(c) } => cfg.generate.count = *c,
        _ => {}
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{:?}", cfg.task).to_lowercase()));
    Pipeline::new(cfg, out)
}

fn run(cli: &Cli) -> weightflow::Result<()> {
    let p = pipeline(cli, &cli.command)?;
    match &cli.command {
        Command::MakePopulation => {
            let pop = p.make_population()?;
            println!("trained {} networks into {}", pop.len(), p.root().join("population").display());
        }
        Command::Canonicalize { .. } => {
            let pop = p.canonicalize()?;
            println!("aligned {} networks", pop.len());
        }
        Command::FitPca => match p.fit_pca()? {
            Some(m) => println!(
                "{} components, explained variance ratio {:.4}",
                m.n_components(),
                m.explained_variance_ratio()
            ),
            None => println!("pca disabled"),
        },
        Command::TrainFlow => {
            let losses = p.train_flow()?;
            if let Some(l) = losses.last() {
                println!("{} iterations, final loss {l:.6e}", losses.len());
            }
        }
        Command::Generate { .. } => {
            let g = p.generate()?;
            println!("generated {} networks", g.len());
        }
        Command::Evaluate => {
            let s = p.evaluate()?;
            let (m, sd) = weightflow::metrics::mean_std(&s.generated_accuracy);
            println!("generated accuracy {:.2} ± {:.2}", 100.0 * m, 100.0 * sd);
        }
        Command::Report { compare } => {
            let r = p.report(compare.as_deref())?;
            print!("{}", r.markdown);
        }
        Command::Run => {
            let r = p.run_all()?;
            print!("{}", r.markdown);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
