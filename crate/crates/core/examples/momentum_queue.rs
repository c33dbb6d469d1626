//! Momentum encoder convergence and FIFO queue behaviour, then a few training
//! steps showing the warm-up flag and queue growth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wsc_core::config::Config;
use wsc_core::data::generate_dataset;
use wsc_core::encoders::{momentum_update_in_place, EncoderPair, MomentumPair};
use wsc_core::labelkit::LabelVocabulary;
use wsc_core::reportconv::RuleSet;
use wsc_core::trainer::{train_step, BatchSource, StepSettings, TrainState};

fn main() -> wsc_core::Result<()> {
    let cfg = Config::grad_check_toy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let online = EncoderPair::init(cfg.model.image_dims(6), cfg.model.text_dims(), &mut rng)?;
    let start = EncoderPair::init(cfg.model.image_dims(6), cfg.model.text_dims(), &mut rng)?;
    let mut mom = MomentumPair::from_online(&start, 0.75)?;
    for k in 1..=5 {
        momentum_update_in_place(&online, &mut mom)?;
        let gap: f64 = mom.image.flat().iter().zip(online.image.flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("momentum step {k}: max |p' - p| = {gap:.6}");
    }

    let vocab = LabelVocabulary::default_33();
    let rules = RuleSet::bundled(&vocab)?;
    let ds = generate_dataset(&cfg.data, &vocab, &rules)?;
    let src = BatchSource::new(&ds, &cfg, 0)?;
    let mut st = TrainState::init(&cfg, cfg.data.input_dim, 0)?;
    for t in 0..4 {
        let m = train_step(&mut st, &src.batch_at(t), &vocab, StepSettings::from(&cfg))?;
        println!(
            "step {t}: total {:.4} queue terms {:.4}/{:.4} warm-up {} queue {}/{}",
            m.total, m.loss_mom_i2t, m.loss_mom_t2i, m.warmup, m.queue_len, cfg.queue.capacity
        );
    }
    Ok(())
}
