//! Label-entropy sweep comparing the loss variants.
//!
//! ```text
//! cargo run --release --example mle_sweep -- experiment.seeds=[0,1]
//! ```
//! Arguments are `key.path=value` overrides applied on top of the desk sweep preset.

use std::time::Instant;

use wsc_core::config::{Config, Variant};
use wsc_core::experiment::{run_sweep, wins};
use wsc_core::labelkit::LabelVocabulary;
use wsc_core::reportconv::RuleSet;

fn main() -> wsc_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WSC_LOG_LEVEL", "info")).init();
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = Config::desk_sweep().with_overrides(&overrides)?;
    let vocab = LabelVocabulary::default_33();
    let rules = RuleSet::bundled(&vocab)?;

    let t0 = Instant::now();
    let rows = run_sweep(&cfg, &vocab, &rules, None)?;
    println!("sweep finished in {:.1}s", t0.elapsed().as_secs_f64());

    println!(
        "{:>7} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "mLE", "seed", "variant", "R@1", "dR@1", "lR@1", "pR@1", "zs-AUC", "zs-mAP"
    );
    for r in &rows {
        println!(
            "{:>7.3} {:>5} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.mle_target,
            r.seed,
            r.variant.name(),
            r.recall_at_1,
            r.distinct_recall_at_1,
            r.label_recall_at_1,
            r.prompt_recall_at_1,
            r.zero_shot_auc,
            r.zero_shot_map
        );
    }
    for &t in &cfg.experiment.mle_targets {
        let (a, n) = wins(&rows, t, Variant::Sa, Variant::Baseline, |r| r.recall_at_1);
        let (b, _) = wins(&rows, t, Variant::SaBe, Variant::Sa, |r| r.recall_at_1);
        let (c, _) = wins(&rows, t, Variant::Sa, Variant::Baseline, |r| r.distinct_recall_at_1);
        let (d, _) = wins(&rows, t, Variant::SaBe, Variant::Sa, |r| r.distinct_recall_at_1);
        let (e, _) = wins(&rows, t, Variant::Sa, Variant::Baseline, |r| r.zero_shot_auc);
        let (f, _) = wins(&rows, t, Variant::SaBe, Variant::Sa, |r| r.zero_shot_auc);
        let (g, _) = wins(&rows, t, Variant::Sa, Variant::Baseline, |r| r.label_recall_at_1);
        let (h, _) = wins(&rows, t, Variant::SaBe, Variant::Sa, |r| r.label_recall_at_1);
        let (i, _) = wins(&rows, t, Variant::Sa, Variant::Baseline, |r| r.prompt_recall_at_1);
        let (j, _) = wins(&rows, t, Variant::SaBe, Variant::Sa, |r| r.prompt_recall_at_1);
        println!(
            "mLE {t:.3}: R@1 SA>=base {a}/{n} SABE>=SA {b}/{n} | dR@1 {c}/{n} {d}/{n} | lR@1 {g}/{n} {h}/{n} | pR@1 {i}/{n} {j}/{n} | zsAUC {e}/{n} {f}/{n}"
        );
    }
    Ok(())
}
