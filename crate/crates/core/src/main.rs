use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rmfs_core::bench::{
    format_table1, format_table2, run_matrix, save_results, train_and_save, BenchConfig, ResultRow,
};
use rmfs_core::demand::{generate_orders, write_orders_csv};

#[derive(Parser)]
#[command(name = "rmfs", version, about = "Storage-policy experiments for robotic mobile fulfillment warehouses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the evaluation demand stream of every skewness value as CSV.
    Generate(Common),
    /// Train the agent for every skewness value; writes weights and training curves.
    Train(Common),
    /// Evaluate the configured policies on the shared instance; writes results.csv.
    Eval(Common),
    /// Baselines and greedy agent over the skewness sweep.
    Table1(Common),
    /// SL and agent with rollouts over the horizon sweep.
    Table2(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration with [layout], [sim], [demand], [agent] and [experiment] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed for `train`, evaluation seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Expected orders per episode (keeps the per-minute rate).
    #[arg(long)]
    orders: Option<f64>,
    /// Comma-separated skewness values.
    #[arg(long, value_delimiter = ',')]
    skewness: Option<Vec<f64>>,
    /// Comma-separated rollout horizons for `base+rollout` policies.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Comma-separated policy names, e.g. `sl,agent+rollout:h=20`.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
}

impl Common {
    fn config(&self, seed_is_training: bool) -> Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(path) => BenchConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => BenchConfig::default(),
        };
        if let Some(n) = self.orders {
            cfg = cfg.with_total_orders(n);
        }
        if let Some(seed) = self.seed {
            if seed_is_training {
                cfg.experiment.training_seed = seed;
            } else {
                cfg.experiment.eval_seed = seed;
            }
        }
        if let Some(out) = &self.out {
            cfg.experiment.out_dir = out.clone();
        }
        if let Some(e) = self.episodes {
            cfg.agent.episodes = e;
        }
        if let Some(s) = &self.skewness {
            cfg.experiment.skewness = s.clone();
        }
        if let Some(h) = &self.horizons {
            cfg.experiment.horizons = h.clone();
        }
        if let Some(p) = &self.policies {
            cfg.experiment.policies = p.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate(c) => generate(&c.config(false)?),
        Command::Train(c) => train(&c.config(true)?),
        Command::Eval(c) => {
            let cfg = c.config(false)?;
            let rows = evaluate(&cfg, "results.csv")?;
            print!("{}", format_table1(&rows));
            if rows.iter().any(|r| r.h.is_some()) {
                print!("{}", format_table2(&rows));
            }
            Ok(())
        }
        Command::Table1(c) => {
            let mut cfg = c.config(false)?;
            if c.policies.is_none() {
                cfg.experiment.policies = ["random", "class", "sl", "agent"].map(String::from).to_vec();
            }
            print!("{}", format_table1(&evaluate(&cfg, "table1.csv")?));
            Ok(())
        }
        Command::Table2(c) => {
            let mut cfg = c.config(false)?;
            if c.policies.is_none() {
                cfg.experiment.policies = ["sl+rollout", "agent+rollout"].map(String::from).to_vec();
            }
            print!("{}", format_table2(&evaluate(&cfg, "table2.csv")?));
            Ok(())
        }
    }
}

fn generate(cfg: &BenchConfig) -> Result<()> {
    let dir = &cfg.experiment.out_dir;
    fs::create_dir_all(dir)?;
    for &s in &cfg.experiment.skewness {
        let orders = generate_orders(&cfg.demand_for(s, cfg.experiment.eval_seed))?;
        let path = dir.join(format!("orders_s{s}.csv"));
        write_orders_csv(&orders, fs::File::create(&path)?)?;
        println!("{} orders -> {}", orders.len(), path.display());
    }
    Ok(())
}

fn train(cfg: &BenchConfig) -> Result<()> {
    for &s in &cfg.experiment.skewness {
        let start = Instant::now();
        let outcome = train_and_save(cfg, s, &mut |p| {
            println!("s={s} episode {} gain {:.2}% ({:.0}s)", p.episode, p.gain_percent, start.elapsed().as_secs_f64())
        })?;
        println!(
            "s={s}: {} steps, average cost {:.3}, weights -> {}",
            outcome.steps,
            outcome.avg_reward,
            cfg.experiment.weights_path(s).display()
        );
    }
    Ok(())
}

fn evaluate(cfg: &BenchConfig, file: &str) -> Result<Vec<ResultRow>> {
    let rows = run_matrix(cfg)?;
    let path = cfg.experiment.out_dir.join(file);
    save_results(&rows, &path)?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(rows)
}
