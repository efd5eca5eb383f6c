use std::io::stdout;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cal_core::cal::ContrastCondition;
use cal_core::data::Vocab;
use cal_core::train::ExperimentConfig;
use clap::{Args, Parser, Subcommand};

use cal_harness::experiments::{self, Objective, Runner};
use cal_harness::outputs::{self, print_table, write_file};
use cal_harness::{config, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "cal",
    version,
    about = "Contrastive token re-weighting workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; keys not given keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config path, e.g. `--set optim.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long)]
    out: Option<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!(
                "output_dir={}",
                serde_json::Value::String(out.clone())
            ));
        }
        config::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Args)]
struct FromCheckpoint {
    /// Defaults to `<output_dir>/checkpoint.bin`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl FromCheckpoint {
    fn path(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| Path::new(&cfg.output_dir).join("checkpoint.bin"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, manifest and checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on the eval corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: FromCheckpoint,
    },
    /// Accuracy against caption-swap ratio for the baseline and the weighted loss.
    SweepNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// The four clamp settings plus the baseline.
    GridClamp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// One run per contrast condition.
    GridCondition {
        #[command(flatten)]
        common: Common,
        /// Also run a patch mask covering the whole prefix.
        #[arg(long)]
        full_mask: bool,
    },
    /// Per-token weight report for one eval sample.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: FromCheckpoint,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Histogram of logit deltas over sampled eval captions.
    Histogram {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: FromCheckpoint,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Step time with and without the contrastive pass.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
    },
    /// Write the train and eval corpora as JSONL.
    GenData(Common),
}

fn out_dir(cfg: &ExperimentConfig) -> &Path {
    Path::new(&cfg.output_dir)
}

fn emit<R: AsRef<[String]>>(dir: &Path, name: &str, header: &[&str], rows: &[R]) -> Result<()> {
    write_file(
        &dir.join(format!("{name}.csv")),
        outputs::table_csv(header, rows)?,
    )?;
    print_table(&mut stdout(), header, rows).map_err(HarnessError::io("<stdout>"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load()?;
            let out = Runner::new(true).run(&cfg)?;
            let last = out.last();
            println!(
                "step {} loss {:.6} acc_overall {} acc_correlated {} separation_auc {}",
                last.step,
                last.train_loss,
                opt(last.acc_overall),
                opt(last.acc_correlated),
                opt(last.separation_auc)
            );
        }
        Command::Eval { common, ckpt } => {
            let cfg = common.load()?;
            let params = experiments::load_params(&ckpt.path(&cfg), &cfg.model)?;
            let record = experiments::eval(&cfg, &params)?.record(cfg.optim.steps, f64::NAN, 0);
            let csv = outputs::metrics_csv(std::slice::from_ref(&record))?;
            write_file(&out_dir(&cfg).join("eval.csv"), &csv)?;
            print!("{}", String::from_utf8_lossy(&csv));
        }
        Command::SweepNoise {
            common,
            ratios,
            seeds,
        } => {
            let cfg = common.load()?;
            let sweep = experiments::sweep_noise(&mut Runner::new(true), &cfg, &ratios, seeds)?;
            let dir = out_dir(&cfg);
            write_file(
                &dir.join("sweep_noise.json"),
                serde_json::to_string_pretty(&sweep)?,
            )?;
            emit(
                dir,
                "sweep_noise",
                &experiments::NoiseSweep::HEADER,
                &sweep.table(),
            )?;
            for o in [Objective::Baseline, Objective::Cal] {
                println!("degradation {} {}", o.as_str(), opt(sweep.degradation(o)));
            }
        }
        Command::GridClamp { common, seeds } => {
            let cfg = common.load()?;
            let grid = experiments::grid_clamp(&mut Runner::new(true), &cfg, seeds)?;
            let dir = out_dir(&cfg);
            write_file(
                &dir.join("grid_clamp.json"),
                serde_json::to_string_pretty(&grid)?,
            )?;
            emit(
                dir,
                "grid_clamp",
                &experiments::ClampGrid::HEADER,
                &grid.table(),
            )?;
            println!("pooled_std {}", grid.pooled_std());
        }
        Command::GridCondition { common, full_mask } => {
            let cfg = common.load()?;
            let mut conditions = experiments::standard_conditions();
            if full_mask {
                conditions.push(ContrastCondition::PatchMask { ratio: 1.0 });
            }
            let rows = experiments::grid_condition(&mut Runner::new(true), &cfg, &conditions)?;
            let dir = out_dir(&cfg);
            write_file(
                &dir.join("grid_condition.json"),
                serde_json::to_string_pretty(&rows)?,
            )?;
            emit(
                dir,
                "grid_condition",
                &experiments::CONDITION_HEADER,
                &experiments::condition_table(&rows),
            )?;
        }
        Command::Heatmap {
            common,
            ckpt,
            sample,
        } => {
            let cfg = common.load()?;
            let params = experiments::load_params(&ckpt.path(&cfg), &cfg.model)?;
            let report = experiments::heatmap(&cfg, &params, sample)?;
            let vocab = Vocab::standard();
            let dir = out_dir(&cfg);
            let json = outputs::heatmap_json(&report, &vocab)?;
            write_file(&dir.join(format!("heatmap_{sample}.json")), &json)?;
            write_file(
                &dir.join(format!("heatmap_{sample}.csv")),
                outputs::heatmap_csv(&report, &vocab)?,
            )?;
            println!("{json}");
        }
        Command::Histogram {
            common,
            ckpt,
            samples,
        } => {
            let cfg = common.load()?;
            let params = experiments::load_params(&ckpt.path(&cfg), &cfg.model)?;
            let h = experiments::weight_histogram(&cfg, &params, samples)?;
            let dir = out_dir(&cfg);
            write_file(
                &dir.join("histogram.json"),
                serde_json::to_string_pretty(&h)?,
            )?;
            write_file(&dir.join("histogram.csv"), outputs::histogram_csv(&h)?)?;
            println!(
                "tokens {} below {} {} fraction {} ci {:?}",
                h.total,
                h.threshold,
                h.below_threshold,
                opt(h.fraction_below),
                h.fraction_ci
            );
        }
        Command::Bench {
            common,
            trials,
            warmup,
        } => {
            let cfg = common.load()?;
            let o = experiments::bench_overhead(&cfg, trials, warmup)?;
            write_file(
                &out_dir(&cfg).join("bench.json"),
                serde_json::to_string_pretty(&o)?,
            )?;
            println!(
                "without {:.6}s ± {:.6}  with {:.6}s ± {:.6}  ratio {:.4} over {} trials",
                o.mean_without, o.std_without, o.mean_with, o.std_with, o.ratio, o.trials
            );
        }
        Command::GenData(common) => {
            let cfg = common.load()?;
            let (train, eval, tp, ep) = experiments::gen_data(&cfg, out_dir(&cfg))?;
            println!(
                "{} samples ({} swapped pairs) -> {}\n{} samples -> {}",
                train.len(),
                train.corruption_log.len(),
                tp.display(),
                eval.len(),
                ep.display()
            );
        }
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
