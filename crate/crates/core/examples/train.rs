//! Trains one model on synthetic data and prints the per-epoch metrics.
//!
//! ```text
//! cargo run --release --example train -- experiment.epochs=5 loss.label_weighting=false
//! ```

use wsc_core::config::Config;
use wsc_core::experiment::run_experiment;
use wsc_core::labelkit::LabelVocabulary;
use wsc_core::reportconv::RuleSet;

fn main() -> wsc_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WSC_LOG_LEVEL", "warn")).init();
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = Config::desk_sweep()
        .with_overrides(&["data.mle_target=0.075", "experiment.epochs=5"])?
        .with_overrides(&overrides)?;
    let vocab = LabelVocabulary::default_33();
    let rules = RuleSet::bundled(&vocab)?;
    let out = run_experiment(&cfg, &vocab, &rules, None)?;
    println!("training mLE {:.4}", out.mle_achieved);
    println!("{:>5} {:>8} {:>7} {:>7} {:>7} {:>7}", "epoch", "loss", "tau", "R@1", "pR@1", "zsAUC");
    for m in &out.history {
        println!(
            "{:>5} {:>8.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            m.epoch, m.train_loss, m.tau, m.recall_at_1, m.prompt_recall_at_1, m.zero_shot_auc
        );
    }
    Ok(())
}
