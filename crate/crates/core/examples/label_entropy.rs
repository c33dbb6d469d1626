//! Mean label entropy of the reference corpus counts and of calibrated marginals.

use wsc_core::data::calibrate_mle;
use wsc_core::labelkit::{mean_entropy_of_proportions, mean_label_entropy, LabelVocabulary, MarginalStats};

fn main() -> wsc_core::Result<()> {
    let vocab = LabelVocabulary::default_33();
    let reference = MarginalStats::reference();
    println!("reference corpus mLE: {:.4}", mean_label_entropy(&reference, &vocab)?);
    for target in [0.05, 0.075, 0.1, 0.125, 0.15] {
        let m = calibrate_mle(target, &vocab)?;
        println!(
            "target {target:.3}: achieved {:.4}, p(normal) {:.4}, p(other) {:.5}",
            mean_entropy_of_proportions(&m),
            m[vocab.normal_index()],
            m[(vocab.normal_index() + 1) % vocab.len()]
        );
    }
    Ok(())
}
