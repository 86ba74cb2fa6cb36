use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use codeattack::attacks::{Engine, PriorityTable};
use codeattack::campaign::{
    compare_engines, metrics_from_traces, priorities_to_toml, run_campaign, CampaignConfig, CampaignError,
    EngineSettings,
};
use codeattack::candidates::Strategy;
use codeattack::corpus::TaskKind;
use codeattack::victim::{Backend, RemoteClient, RemoteConfig};

#[derive(Parser)]
#[command(name = "codeattack", version, about = "Black-box adversarial attacks on code models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one engine over a dataset.
    Attack {
        #[command(flatten)]
        overrides: Box<Overrides>,
    },
    /// Run two engines on the same targets and test the differences.
    Compare {
        /// Config for the first engine (the one tested for being better).
        config_a: PathBuf,
        /// Config for the second engine.
        config_b: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Recompute the report and table from a traces.jsonl file.
    Metrics {
        traces: PathBuf,
        /// Embed through the model service instead of the local fallback.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "campaign")]
        label: String,
    },
    /// Print the default configuration, engine settings, and priority tables.
    Defaults {
        #[arg(long, value_parser = parse_via_serde::<TaskKind>)]
        task: Option<TaskKind>,
        #[arg(long, value_parser = parse_via_serde::<Engine>)]
        engine: Option<Engine>,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML config; flags below override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_via_serde::<TaskKind>)]
    task: Option<TaskKind>,
    #[arg(long, value_parser = |s: &str| s.parse::<Engine>())]
    engine: Option<Engine>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long, value_parser = parse_via_serde::<Backend>)]
    backend: Option<Backend>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, value_parser = parse_via_serde::<Strategy>)]
    strategy: Option<Strategy>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    k_cand: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    crossover_rate: Option<f64>,
    #[arg(long)]
    priorities: Option<PathBuf>,
}

fn parse_via_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

impl Overrides {
    fn resolve(self) -> Result<CampaignConfig, CampaignError> {
        let mut c = match &self.config {
            Some(path) => CampaignConfig::load(path)?,
            None => CampaignConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set! {
            task => task,
            engine => engine,
            dataset => dataset,
            output => output,
            seed => seed,
            workers => workers,
            sample_seed => sample_seed,
            backend => victim.backend,
            endpoint => victim.endpoint,
        }
        macro_rules! set_opt {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if self.$flag.is_some() { c.$($field).+ = self.$flag; })*
            };
        }
        set_opt! {
            limit => limit,
            strategy => candidates.strategy,
            embeddings => candidates.embeddings,
            max_iter => params.max_iter,
            k_cand => params.k_cand,
            n => params.n,
            max_depth => params.max_depth,
            beam => params.beam,
            population => params.population,
            crossover_rate => params.crossover_rate,
            priorities => params.priorities,
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CampaignError> {
    match cli.command {
        Command::Attack { overrides } => {
            let config = (*overrides).resolve()?;
            let result = run_campaign(&config)?;
            print!("{}", result.report.to_table(config.engine.as_str()));
            eprintln!(
                "{} loaded, {} skipped, {} attackable; outputs in {}",
                result.loaded,
                result.skipped.len(),
                result.records.len(),
                config.output.display()
            );
        }
        Command::Compare {
            config_a,
            config_b,
            output,
        } => {
            let a = CampaignConfig::load(config_a)?;
            let b = CampaignConfig::load(config_b)?;
            print!("{}", compare_engines(&a, &b, &output)?.to_table());
        }
        Command::Metrics {
            traces,
            endpoint,
            label,
        } => {
            let client = endpoint.map(|endpoint| {
                RemoteClient::new(RemoteConfig {
                    endpoint,
                    ..RemoteConfig::default()
                })
            });
            let report = metrics_from_traces(&traces, client.as_ref())?;
            print!("{}", report.to_jsonl(true));
            print!("{}", report.to_table(&label));
        }
        Command::Defaults { task, engine } => {
            let tasks = task.map_or(TaskKind::ALL.to_vec(), |t| vec![t]);
            let engines = engine.map_or(Engine::ALL.to_vec(), |e| vec![e]);
            let base = CampaignConfig {
                task: tasks[0],
                engine: engines[0],
                ..CampaignConfig::default()
            };
            println!("# campaign config\n{}", base.to_toml());
            for &task in &tasks {
                for &engine in &engines {
                    let settings = EngineSettings::defaults(engine, task);
                    let text = toml::to_string_pretty(&settings).expect("settings serialize");
                    println!("# {engine} on {task}\n{text}");
                }
            }
            let tables: Vec<_> = tasks.iter().map(|&t| (t, PriorityTable::default_for(t))).collect();
            print!("# priority tables\n{}", priorities_to_toml(&tables));
        }
    }
    Ok(())
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
