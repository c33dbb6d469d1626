use wsc_core::config::Config;
use wsc_core::labelkit::LabelVocabulary;
use wsc_core::reportconv::RuleSet;
use wsc_core::trainer::grad_check_run;

#[test]
fn central_differences_converge_quadratically() {
    let v = LabelVocabulary::default_33();
    let r = RuleSet::bundled(&v).unwrap();
    let cfg = Config::grad_check_toy();
    // large steps so truncation error dominates round-off
    let errs: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&eps| grad_check_run(&cfg, 1, 2, eps, &v, &r).unwrap().max_rel_error)
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..5.5).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn degenerate_batch_without_noise() {
    let v = LabelVocabulary::default_33();
    let r = RuleSet::bundled(&v).unwrap();
    let cfg = Config::grad_check_toy()
        .with_overrides(&["data.noise=0", "data.augment_noise=0", "data.detail_levels=0", "data.class_spread=0"])
        .unwrap();
    for seed in 0..3 {
        let rep = grad_check_run(&cfg, seed, 2, 1e-5, &v, &r).unwrap();
        assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
    }
}

#[test]
fn random_batches_five_seeds() {
    let v = LabelVocabulary::default_33();
    let r = RuleSet::bundled(&v).unwrap();
    let cfg = Config::grad_check_toy();
    for seed in 100..105 {
        for settings in [["loss.label_weighting=true", "queue.enabled=true"], ["loss.label_weighting=false", "queue.enabled=false"]] {
            let c = cfg.with_overrides(&settings).unwrap();
            let rep = grad_check_run(&c, seed, 2, 1e-5, &v, &r).unwrap();
            assert!(rep.max_rel_error <= 1e-6, "{settings:?} {rep:?}");
        }
    }
}
