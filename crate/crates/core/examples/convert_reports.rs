//! Labels a few reports with the bundled rules and shows the per-phrase trace.
//!
//! ```text
//! cargo run --example convert_reports -- "双眼糖网，建议FFA检查"
//! ```

use wsc_core::labelkit::LabelVocabulary;
use wsc_core::reportconv::{convert_detailed, Report, RuleSet};

fn main() -> wsc_core::Result<()> {
    let vocab = LabelVocabulary::default_33();
    let rules = RuleSet::bundled(&vocab)?;
    let mut texts: Vec<String> = std::env::args().skip(1).collect();
    if texts.is_empty() {
        texts = ["双眼糖网，建议FFA检查", "RNFLD，杯盘比大于0.5", "A/V约1:2；未见出血", "眼底未见明显异常", "视盘边界清"]
            .map(String::from)
            .to_vec();
    }
    for (k, text) in texts.iter().enumerate() {
        let report = Report::truncated(format!("r{k}"), text, rules.max_length());
        let c = convert_detailed(&report, &rules, &vocab)?;
        println!("{text}\n  -> {:?}", vocab.names_of(&c.label));
        for p in &c.phrases {
            let ents: Vec<String> = p
                .entities
                .iter()
                .map(|e| match e.value {
                    Some(v) => format!("{} {} {v}", e.name, e.descriptor),
                    None => format!("{} {}", e.name, e.descriptor),
                })
                .collect();
            let note = if p.filtered { " (filtered)" } else { "" };
            println!("     {} => {}{note} {:?}", p.phrase, p.standardized, ents);
        }
    }
    Ok(())
}
