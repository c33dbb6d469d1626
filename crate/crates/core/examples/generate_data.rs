//! Generates a small synthetic paired dataset and prints a few records.
//!
//! ```text
//! cargo run --example generate_data -- data.mle_target=0.05 data.size=200
//! ```

use wsc_core::config::Config;
use wsc_core::data::generate_dataset;
use wsc_core::labelkit::{mean_label_entropy, LabelVocabulary, MarginalStats};
use wsc_core::reportconv::RuleSet;

fn main() -> wsc_core::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = Config::default().with_overrides(&["data.size=500", "data.mle_target=0.1"])?;
    cfg = cfg.with_overrides(&overrides)?;
    let vocab = LabelVocabulary::default_33();
    let rules = RuleSet::bundled(&vocab)?;
    let ds = generate_dataset(&cfg.data, &vocab, &rules)?;
    let mle = mean_label_entropy(&MarginalStats::from_labels(&ds.labels())?, &vocab)?;
    println!("{} records, achieved mLE {mle:.4}", ds.len());
    for r in ds.records.iter().take(5) {
        println!("{} class {:>2} {:<40} {:?}", r.id, r.class, r.text, vocab.names_of(&r.label));
    }
    Ok(())
}
