//! Command-line front end. The `wsc` binary is a thin wrapper around [`run`].

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::{Config, Variant};
use crate::data::generate_dataset;
use crate::error::{Error, Result};
use crate::experiment::{evaluate_state, run_experiment, run_sweep, wins, EvalSet};
use crate::labelkit::{mean_label_entropy, LabelVocabulary, MarginalStats};
use crate::reportconv::io::convert_jsonl;
use crate::reportconv::RuleSet;
use crate::trainer::{grad_check_run, TrainState};

/// Gradient checks pass when every relative error is at most this.
pub const GRAD_CHECK_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "wsc", version, about = "Label-weighted contrastive pre-training on synthetic paired data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed (and data seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set optimizer.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Category list: one name per line plus `#normal NAME` and `#others NAME`.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Converter rules JSON.
    #[arg(long, global = true)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label reports: JSONL `{"id","text"}` in, `{"id","labels","bits"}` out.
    Convert {
        /// Input JSONL; `-` reads stdin.
        input: PathBuf,
    },
    /// Generate a synthetic dataset as JSONL.
    Gendata,
    /// Train one model and write its run directory.
    Train,
    /// Train every variant at every mLE target and seed.
    Sweep,
    /// Compare analytic gradients with central differences on toy dimensions.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Training steps taken before the check, so the queue is populated.
        #[arg(long, default_value_t = 2)]
        warm_steps: u64,
    },
    /// Evaluate a checkpoint on the held-out split of its config's data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also fit the linear probe.
        #[arg(long)]
        probe: bool,
    },
}

fn load_assets(c: &Common) -> Result<(LabelVocabulary, RuleSet)> {
    let vocab = match &c.vocab {
        Some(p) => LabelVocabulary::parse(&fs::read_to_string(p)?)?,
        None => LabelVocabulary::default_33(),
    };
    let rules = match &c.rules {
        Some(p) => RuleSet::load(p, &vocab)?,
        None => RuleSet::bundled(&vocab)?,
    };
    Ok((vocab, rules))
}

/// Config file (or `base`), then `--seed`, then `--set` overrides.
pub fn effective_config(c: &Common, base: Config, sweep: bool) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => base,
    };
    if let Some(s) = c.seed {
        cfg.experiment.seed = s;
        cfg.data.seed = s;
        if sweep {
            cfg.experiment.seeds = vec![s];
        }
    }
    cfg.with_overrides(&c.overrides)
}

fn echo_config(out: Option<&Path>, cfg: &Config) -> Result<()> {
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("config.json"), cfg.to_json()?)?;
    }
    Ok(())
}

fn require_out(c: &Common, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn cmd_convert(c: &Common, input: &Path) -> Result<ExitCode> {
    let (vocab, rules) = load_assets(c)?;
    let reader: Box<dyn io::BufRead> = if input == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(fs::File::open(input)?))
    };
    let summary = match &c.out {
        Some(o) => {
            fs::create_dir_all(o)?;
            let f = io::BufWriter::new(fs::File::create(o.join("labels.jsonl"))?);
            convert_jsonl(reader, f, &rules, &vocab)?
        }
        None => convert_jsonl(reader, io::stdout().lock(), &rules, &vocab)?,
    };
    let mut err = io::stderr().lock();
    for (line, msg) in &summary.failed {
        writeln!(err, "line {line}: {msg}")?;
    }
    writeln!(
        err,
        "converted {}, failed {}, truncated {}",
        summary.converted,
        summary.failed.len(),
        summary.truncated
    )?;
    Ok(if summary.converted == 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_gendata(c: &Common) -> Result<ExitCode> {
    let cfg = effective_config(c, Config::default(), false)?;
    let (vocab, rules) = load_assets(c)?;
    let out = require_out(c, "data");
    let ds = generate_dataset(&cfg.data, &vocab, &rules)?;
    echo_config(Some(&out), &cfg)?;
    fs::write(out.join("data.jsonl"), ds.to_jsonl()?)?;
    let mle = mean_label_entropy(&MarginalStats::from_labels(&ds.labels())?, &vocab)?;
    println!("records {} distinct classes {} mLE {mle:.4}", ds.len(), ds.class_labels.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(c: &Common) -> Result<ExitCode> {
    let cfg = effective_config(c, Config::default(), false)?;
    let (vocab, rules) = load_assets(c)?;
    let out = require_out(c, "runs/train");
    let outcome = run_experiment(&cfg, &vocab, &rules, Some(&out))?;
    let m = outcome.last();
    println!(
        "epoch {} loss {:.4} R@1 {:.4} prompt R@1 {:.4} zero-shot AUC {:.4} mAP {:.4}",
        m.epoch, m.train_loss, m.recall_at_1, m.prompt_recall_at_1, m.zero_shot_auc, m.zero_shot_map
    );
    info!("run written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(c: &Common) -> Result<ExitCode> {
    let cfg = effective_config(c, Config::desk_sweep(), true)?;
    let (vocab, rules) = load_assets(c)?;
    let out = require_out(c, "runs/sweep");
    let rows = run_sweep(&cfg, &vocab, &rules, Some(&out))?;
    let has = |v| cfg.experiment.variants.contains(&v);
    for &t in &cfg.experiment.mle_targets {
        let mut line = format!("mLE {t:.3}");
        if has(Variant::Sa) && has(Variant::Baseline) {
            let (w, n) = wins(&rows, t, Variant::Sa, Variant::Baseline, |r| r.prompt_recall_at_1);
            line.push_str(&format!("  SA>=baseline {w}/{n}"));
        }
        if has(Variant::SaBe) && has(Variant::Sa) {
            let (w, n) = wins(&rows, t, Variant::SaBe, Variant::Sa, |r| r.prompt_recall_at_1);
            line.push_str(&format!("  SA+BE>=SA {w}/{n}"));
        }
        println!("{line}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(c: &Common, epsilon: f64, warm_steps: u64) -> Result<ExitCode> {
    let cfg = effective_config(c, Config::grad_check_toy(), false)?;
    let (vocab, rules) = load_assets(c)?;
    echo_config(c.out.as_deref(), &cfg)?;
    let r = grad_check_run(&cfg, cfg.experiment.seed, warm_steps, epsilon, &vocab, &rules)?;
    let pass = r.max_rel_error <= GRAD_CHECK_THRESHOLD;
    println!(
        "max relative error {:.3e} at {} ({} parameters, threshold {GRAD_CHECK_THRESHOLD:e}): {}",
        r.max_rel_error,
        r.worst_param,
        r.num_params,
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(o) = &c.out {
        fs::write(o.join("gradcheck.json"), serde_json::to_string_pretty(&r)?)?;
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_eval(c: &Common, checkpoint: &Path, probe: bool) -> Result<ExitCode> {
    let mut cfg = effective_config(c, Config::default(), false)?;
    let (vocab, rules) = load_assets(c)?;
    let state = TrainState::load(checkpoint)?;
    cfg.experiment.linear_probe = probe;
    let ds = generate_dataset(&cfg.data, &vocab, &rules)?;
    let (train, test) = ds.split(cfg.data.test_fraction)?;
    if state.online.image.dims().input_dim != cfg.data.input_dim {
        return Err(Error::Config(format!(
            "checkpoint expects input_dim {}, config has {}",
            state.online.image.dims().input_dim,
            cfg.data.input_dim
        )));
    }
    let eval = EvalSet::new(&cfg, &train, &test, &rules, &vocab)?;
    let m = evaluate_state(&state, &cfg, &eval, probe)?;
    let json = serde_json::to_string_pretty(&m)?;
    if let Some(o) = &c.out {
        echo_config(Some(o), &cfg)?;
        fs::write(o.join("eval.json"), &json)?;
    }
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

pub fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.command {
        Command::Convert { input } => cmd_convert(c, input),
        Command::Gendata => cmd_gendata(c),
        Command::Train => cmd_train(c),
        Command::Sweep => cmd_sweep(c),
        Command::Gradcheck { epsilon, warm_steps } => cmd_gradcheck(c, *epsilon, *warm_steps),
        Command::Eval { checkpoint, probe } => cmd_eval(c, checkpoint, *probe),
    }
}

/// Parses `std::env::args`, sets up logging from `WSC_LOG_LEVEL` and runs the
/// subcommand. Errors print to stderr and exit with status 1.
pub fn run() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("WSC_LOG_LEVEL", "warn")).try_init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
