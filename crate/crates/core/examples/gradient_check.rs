//! Finite-difference check of the full training objective on toy dimensions.

use wsc_core::config::Config;
use wsc_core::labelkit::LabelVocabulary;
use wsc_core::reportconv::RuleSet;
use wsc_core::trainer::grad_check_run;

fn main() -> wsc_core::Result<()> {
    let vocab = LabelVocabulary::default_33();
    let rules = RuleSet::bundled(&vocab)?;
    let cfg = Config::grad_check_toy();
    for eps in [1e-3, 1e-4, 1e-5] {
        let r = grad_check_run(&cfg, 0, 2, eps, &vocab, &rules)?;
        println!(
            "eps {eps:e}: max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
            r.max_rel_error, r.worst_param, r.analytic, r.numeric
        );
    }
    Ok(())
}
