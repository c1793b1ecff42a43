use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use blockindex::controller::search::{search_with, write_trace_csv, Evaluator, TrainConfig};
use blockindex::controller::{Layout, Model};
use blockindex::error::{Error, Result};
use blockindex::incremental::{
    drifting_workloads, modes, prepare, run_episodes, write_episode_csv, EpisodeConfig, OutlierConfig,
};
use blockindex::stats::DatasetStats;
use blockindex::tree::BuildOptions;
use blockindex::workload::{
    distributions, gen_keys, read_keys, read_workload, run_workload, write_keys, write_workload, CostMode,
    Generator, WorkloadOp, WorkloadSpec,
};
use blockindex::{ParameterIndex, PhysicalIndex};

#[derive(Parser)]
#[command(name = "blockindex", version, about = "Build, benchmark and tune block-structured indexes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a binary key file drawn from a named distribution.
    GenData {
        #[arg(long, default_value = "uniform64")]
        dist: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a JSON-lines workload over a key file.
    GenWorkload {
        #[arg(long)]
        keys: PathBuf,
        /// w1..w4 or mix:LOOKUPS:RANGES:INSERTS:DELETES
        #[arg(long, default_value = "w1")]
        spec: String,
        /// Divides the per-workload op counts.
        #[arg(long, default_value_t = 1000)]
        scale: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write drifting episode workloads `episode-<i>.jsonl` into a directory.
    GenEpisodes {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 4000)]
        inserts: usize,
        #[arg(long, default_value_t = 4000)]
        lookups: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build an index from a config and report its structure.
    Build {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Search for a config with the controller.
    Search {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Start from a saved policy instead of a fresh one.
        #[arg(long)]
        init_model: Option<PathBuf>,
    },
    /// Run a workload against a config and write per-kind costs.
    Bench {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value = "visit-count")]
        cost_mode: CostMode,
        #[command(flatten)]
        build: BuildArgs,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a sequence of episode workloads under one adaptation mode.
    Episodes {
        #[arg(long)]
        keys: PathBuf,
        /// Episode workload files in order.
        #[arg(long, num_args = 1.., required = true)]
        workload: Vec<PathBuf>,
        /// default, inc or trained
        #[arg(long, default_value = "inc")]
        mode: String,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 4)]
        retune_epochs: usize,
        #[arg(long, default_value_t = 3)]
        tau: usize,
        #[arg(long, default_value_t = 0.5)]
        omega: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct BuildArgs {
    /// Block capacity.
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.8)]
    mu: f64,
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
    /// reinforce or ppo
    #[arg(long, default_value = "reinforce")]
    updater: String,
    /// Storage budget in MiB; 0 disables it.
    #[arg(long, default_value_t = 64)]
    budget_mb: u64,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "visit-count")]
    cost_mode: CostMode,
    /// Threads used to benchmark each batch of candidates.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            rho: self.rho,
            sigma: self.sigma,
            epsilon: self.epsilon,
            batch: self.batch,
            epochs: self.epochs,
            mu: self.mu,
            phi: self.phi,
            updater: self.updater.clone(),
            budget_bytes: (self.budget_mb > 0).then_some(self.budget_mb << 20),
            seed: seed(self.seed)?,
            m: self.m,
            mode: self.cost_mode,
            workers: self.workers.max(1),
            ..TrainConfig::default()
        })
    }
}

/// `NIS_SEED` takes precedence over any seed flag.
fn seed(flag: u64) -> Result<u64> {
    match std::env::var("NIS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Malformed(format!("NIS_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn read_config(path: &Path, m: usize) -> Result<ParameterIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ParameterIndex::parse(&text, m)
}

fn build_index(keys: &[u64], config: &ParameterIndex, b: &BuildArgs) -> Result<PhysicalIndex> {
    let opts = BuildOptions {
        m: b.m,
        seed: seed(b.seed)?,
        ..BuildOptions::default()
    };
    PhysicalIndex::from_keys(config, keys, &DatasetStats::from_keys(keys), &opts)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { dist, n, seed: s, out } => {
            let d = distributions().get(&dist)?;
            write_keys(&out, &gen_keys(d.as_ref(), n, seed(s)?))
        }
        Command::GenWorkload {
            keys,
            spec,
            scale,
            seed: s,
            out,
        } => {
            let keys = read_keys(&keys)?;
            let spec: WorkloadSpec = spec.parse()?;
            let generator = Generator {
                scale: scale.max(1),
                ..Generator::default()
            };
            if keys.is_empty() && spec.mix(scale.max(1)).total() > 0 {
                return Err(Error::Malformed("cannot sample a workload from an empty key file".into()));
            }
            write_workload(&out, &generator.generate(spec, &keys, seed(s)?))
        }
        Command::GenEpisodes {
            keys,
            episodes,
            inserts,
            lookups,
            seed: s,
            out_dir,
        } => {
            let keys = read_keys(&keys)?;
            if keys.is_empty() {
                return Err(Error::Malformed("cannot drift from an empty key file".into()));
            }
            create_dir(&out_dir)?;
            for (i, ops) in drifting_workloads(&keys, episodes, inserts, lookups, seed(s)?).iter().enumerate() {
                write_workload(&out_dir.join(format!("episode-{i}.jsonl")), ops)?;
            }
            Ok(())
        }
        Command::Build { keys, config, build } => {
            let keys = read_keys(&keys)?;
            let config = read_config(&config, build.m)?;
            let start = Instant::now();
            let index = build_index(&keys, &config, &build)?;
            let elapsed = start.elapsed();
            let blocks_per_group = index.block_count() as f64 / index.group_count().max(1) as f64;
            println!("depth {}", index.depth());
            println!("groups {}", index.group_count());
            println!("blocks {}", index.block_count());
            println!("blocks_per_group {blocks_per_group}");
            println!("keys {}", index.key_count());
            println!("c_s {}", index.space_utilization());
            println!("bytes {}", index.size_bytes());
            eprintln!("build_ms {:.3}", elapsed.as_secs_f64() * 1e3);
            Ok(())
        }
        Command::Search {
            keys,
            workload,
            out_dir,
            train,
            init_model,
        } => {
            let keys = read_keys(&keys)?;
            let ops = read_workload(&workload)?;
            let cfg = train.config()?;
            let layout = Layout::new(cfg.values.clone());
            let model = match init_model {
                Some(p) => Model::load(&p, layout)?,
                None => Model::new(layout, cfg.hidden, cfg.seed),
            };
            let mut eval = Evaluator::new(&keys, &ops, &cfg);
            let found = search_with(&mut eval, &cfg, model)?;
            create_dir(&out_dir)?;
            let best_path = out_dir.join("best.cfg");
            fs::write(&best_path, found.best.to_text()).map_err(|e| Error::io(&best_path, e))?;
            write_trace_csv(&found.candidates, create(&out_dir.join("trace.csv"))?)?;
            found.model.save(&out_dir.join("policy.bin"))?;
            let mut index = PhysicalIndex::from_keys(&found.best, &keys, &eval.stats, &cfg.build_options())?;
            let mut report = run_workload(&mut index, &ops, cfg.mode);
            report.c_b = Some(eval.c_b);
            report.write_csv(create(&out_dir.join("bench.csv"))?)?;
            println!(
                "best reward {} c_t {} c_s {} depth {} groups {}",
                found.best_eval.reward,
                found.best_eval.c_t,
                found.best_eval.c_s,
                found.best_eval.depth,
                found.best_eval.groups
            );
            Ok(())
        }
        Command::Bench {
            keys,
            config,
            workload,
            cost_mode,
            build,
            out,
        } => {
            let keys = read_keys(&keys)?;
            let config = read_config(&config, build.m)?;
            let ops: Vec<WorkloadOp> = read_workload(&workload)?;
            let mut index = build_index(&keys, &config, &build)?;
            let report = run_workload(&mut index, &ops, cost_mode);
            match out {
                Some(p) => report.write_csv(create(&p)?),
                None => report.write_csv(std::io::stdout().lock()),
            }
        }
        Command::Episodes {
            keys,
            workload,
            mode,
            train,
            retune_epochs,
            tau,
            omega,
            out,
        } => {
            let keys = read_keys(&keys)?;
            let episodes = workload.iter().map(|p| read_workload(p)).collect::<Result<Vec<_>>>()?;
            let mut mode = modes().get(&mode)?;
            let search = train.config()?;
            let outliers = OutlierConfig { tau, omega };
            outliers.validate()?;
            let cfg = EpisodeConfig {
                retune: TrainConfig {
                    epochs: retune_epochs,
                    seed: search.seed.wrapping_add(1),
                    ..search.clone()
                },
                search,
                outliers,
                ..EpisodeConfig::default()
            };
            let prepared = prepare(&keys, &episodes[0], &cfg)?;
            let rows = run_episodes(&prepared, &episodes, mode.as_mut(), &cfg)?;
            match out {
                Some(p) => write_episode_csv(&rows, create(&p)?),
                None => write_episode_csv(&rows, std::io::stdout().lock()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
