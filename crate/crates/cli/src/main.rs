use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use ifsynth::config::{parse_config, ExperimentConfig};
use ifsynth::env::{labeled, SyntheticExample};
use ifsynth::influence::{records, write_records_csv};
use ifsynth::io::{read_json, read_jsonl, write_json, write_jsonl};
use ifsynth::optimizer::TrainingTrajectory;
use ifsynth::pipeline::{
    files, write_run, write_stats_csv, Experiment, MetricsReport, PolicyFile, SftReport,
    TargetFile, WarmupReport,
};

#[derive(Parser, Debug)]
#[command(name = "ifsynth", version, about = "Influence-guided synthetic data generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "ifsynth-out")]
    out: PathBuf,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write seed documents, validation and test sets.
    GenCorpus,
    /// Synthesize the initial pool and warm up the target.
    Warmup,
    /// Score a dataset against a warm-up trajectory.
    Score {
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Train the rubric policy with GRPO.
    TrainPrompter {
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Synthesize datasets from the initial and trained policies.
    Synthesize {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fine-tune a fresh target on a dataset.
    Sft {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a saved target on the validation and test sets.
    Eval {
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Influence against downstream accuracy over random subsets.
    Correlate {
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run every stage and write the full experiment directory.
    Report,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::Warmup => "warmup",
            Command::Score { .. } => "score",
            Command::TrainPrompter { .. } => "train-prompter",
            Command::Synthesize { .. } => "synthesize",
            Command::Sft { .. } => "sft",
            Command::Eval { .. } => "eval",
            Command::Correlate { .. } => "correlate",
            Command::Report => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet {
        log::LevelFilter::Error
    } else if cli.common.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    let stage = cli.command.stage();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {stage}: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg.resolve(common.seed)?)
}

struct Ctx {
    out: PathBuf,
    exp: Experiment,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = given.clone().unwrap_or_else(|| self.path(default));
        if !p.exists() {
            bail!("missing input {}", p.display());
        }
        Ok(p)
    }

    fn trajectory(&self, given: &Option<PathBuf>) -> Result<TrainingTrajectory> {
        let p = self.input(given, files::TRAJECTORY)?;
        read_json(&p).with_context(|| format!("reading {}", p.display()))
    }

    fn dataset(&self, p: &Path) -> Result<Vec<SyntheticExample>> {
        read_jsonl(p).with_context(|| format!("reading {}", p.display()))
    }

    /// Existing report with the current config, or a fresh one.
    fn report(&self) -> MetricsReport {
        let mut r: MetricsReport = read_json(&self.path(files::REPORT))
            .unwrap_or_else(|_| MetricsReport::new(self.exp.config.clone()));
        if r.config != self.exp.config {
            r = MetricsReport::new(self.exp.config.clone());
        }
        r
    }

    fn save_report(&self, r: &MetricsReport) -> Result<()> {
        r.validate()?;
        Ok(write_json(&self.path(files::REPORT), r)?)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    std::fs::create_dir_all(&cli.common.out)
        .with_context(|| format!("creating {}", cli.common.out.display()))?;
    write_json(&cli.common.out.join(files::CONFIG), &config)?;
    let ctx = Ctx {
        out: cli.common.out.clone(),
        exp: Experiment::new(config)?,
    };
    let exp = &ctx.exp;

    match &cli.command {
        Command::GenCorpus => {
            write_jsonl(&ctx.path(files::SEEDS), &exp.corpus.seeds)?;
            write_jsonl(&ctx.path(files::VALIDATION), &exp.corpus.validation)?;
            write_jsonl(&ctx.path(files::TEST), &exp.corpus.test)?;
            info!(
                "{} seeds, {} validation, {} test examples",
                exp.corpus.seeds.len(),
                exp.corpus.validation.len(),
                exp.corpus.test.len()
            );
        }
        Command::Warmup => {
            let w = exp.warmup()?;
            write_json(&ctx.path(files::TRAJECTORY), &w.trajectory)?;
            write_jsonl(&ctx.path(files::POOL), &w.pool)?;
            write_json(
                &ctx.path(files::INITIAL_POLICY),
                &PolicyFile::new(exp.policy, w.initial_policy.clone()),
            )?;
            let mut r = ctx.report();
            r.warmup = Some(WarmupReport {
                pool_size: w.pool.len(),
                warmup_size: w.warmup_size,
                val_loss_by_epoch: w.val_losses.clone(),
                trajectory_id: w.trajectory.id(),
            });
            ctx.save_report(&r)?;
            info!("validation loss by epoch {:?}", w.val_losses);
        }
        Command::Score { pool, trajectory } => {
            let traj = ctx.trajectory(trajectory)?;
            let pool = ctx.dataset(&ctx.input(pool, files::POOL)?)?;
            if pool.is_empty() {
                bail!("pool is empty");
            }
            let scores = exp.scorer(&traj)?.score_all(exp.config.execution, &labeled(&pool))?;
            let ids: Vec<String> = pool.iter().map(|x| x.id.clone()).collect();
            let recs = records(&ids, &scores)?;
            write_records_csv(
                File::create(ctx.path(files::INFLUENCE))?,
                &recs,
                exp.config.influence.variant,
                &traj.id(),
            )?;
            info!("scored {} candidates", recs.len());
        }
        Command::TrainPrompter { trajectory } => {
            let traj = ctx.trajectory(trajectory)?;
            if exp.config.rl.updates == 0 {
                warn!("no updates requested");
            }
            let out = exp.train_prompter(&traj)?;
            write_json(&ctx.path(files::POLICY), &PolicyFile::new(exp.policy, out.policy.clone()))?;
            write_jsonl(&ctx.path(files::ROLLOUTS), &out.rollouts)?;
            write_stats_csv(File::create(ctx.path(files::STATS))?, &out.stats)?;
            let mut r = ctx.report();
            r.rl = Some(exp.rl_report(&out)?);
            if let Some(rl) = &r.rl {
                info!(
                    "reward first window {:?}, last window {:?}",
                    rl.first_window_mean, rl.last_window_mean
                );
            }
            ctx.save_report(&r)?;
        }
        Command::Synthesize { policy, n } => {
            let p: PolicyFile = read_json(&ctx.input(policy, files::POLICY)?)?;
            if p.spec != exp.policy {
                bail!("policy file does not match the configured policy shape");
            }
            let n = n.unwrap_or(exp.config.synthesis.size);
            let pre = exp.synthesize_pre(n)?;
            let post = exp.synthesize_post(&p.params, n)?;
            write_jsonl(&ctx.path(files::DATASET_PRE), &pre)?;
            write_jsonl(&ctx.path(files::DATASET_POST), &post)?;
            let traj_path = ctx.path(files::TRAJECTORY);
            if traj_path.exists() {
                let traj: TrainingTrajectory = read_json(&traj_path)?;
                let mut r = ctx.report();
                let s = exp.synthesis_report(&traj, &pre, &post)?;
                info!("mean influence pre {} post {}", s.pre_mean_if, s.post_mean_if);
                r.synthesis = Some(s);
                ctx.save_report(&r)?;
            }
        }
        Command::Sft { dataset } => {
            let seed = exp.sft_seed();
            let mut accs = Vec::new();
            let paths = match dataset {
                Some(p) => vec![p.clone()],
                None => vec![
                    ctx.input(&None, files::DATASET_PRE)?,
                    ctx.input(&None, files::DATASET_POST)?,
                ],
            };
            for p in &paths {
                let out = exp.sft_and_eval(&ctx.dataset(p)?, seed)?;
                info!("{}: test accuracy {}", p.display(), out.test_accuracy);
                accs.push(out);
            }
            let last = accs.last().expect("at least one dataset");
            write_json(&ctx.path(files::TARGET), &TargetFile::new(exp.classifier, last.params.clone()))?;
            if let [pre, post] = accs.as_slice() {
                let mut r = ctx.report();
                r.sft = Some(SftReport {
                    pre_test_accuracy: pre.test_accuracy,
                    post_test_accuracy: post.test_accuracy,
                    pre_val_accuracy: pre.val_accuracy,
                    post_val_accuracy: post.val_accuracy,
                });
                ctx.save_report(&r)?;
            }
        }
        Command::Eval { target } => {
            let t: TargetFile = read_json(&ctx.input(target, files::TARGET)?)?;
            if t.spec != exp.classifier {
                bail!("target file does not match the configured classifier shape");
            }
            let test = t.spec.accuracy(&t.params, &exp.test())?;
            let val = t.spec.accuracy(&t.params, &exp.validation())?;
            write_json(
                &ctx.path(files::EVAL),
                &serde_json::json!({"test_accuracy": test, "val_accuracy": val}),
            )?;
            info!("test accuracy {test}, validation accuracy {val}");
        }
        Command::Correlate { trajectory } => {
            let traj = if trajectory.is_some() || ctx.path(files::TRAJECTORY).exists() {
                ctx.trajectory(trajectory)?
            } else {
                exp.warmup()?.trajectory
            };
            let c = &exp.config.correlate;
            let pool = exp.correlation_pool()?;
            let report = exp.correlate_if_accuracy(&pool, &traj, c.subset_size, c.trials)?;
            if report.degenerate {
                warn!("correlation undefined for this run");
            }
            info!("pearson_r {:?} spearman_rho {:?}", report.pearson_r, report.spearman_rho);
            let mut r = ctx.report();
            r.correlation = Some(report);
            ctx.save_report(&r)?;
        }
        Command::Report => {
            if exp.config.rl.updates == 0 {
                warn!("no updates requested");
            }
            let run = exp.run_all()?;
            write_run(&ctx.out, exp, &run)?;
            info!("wrote {}", ctx.out.display());
        }
    }
    Ok(())
}
