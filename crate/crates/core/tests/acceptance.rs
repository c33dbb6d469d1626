//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line (visible with `--nocapture`).

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsc_core::config::{Config, Variant};
use wsc_core::data::generate_dataset;
use wsc_core::encoders::{momentum_update_in_place, EncoderPair, MomentumPair};
use wsc_core::evalkit::{auc, map_score, retrieval_metrics, ScoreTable};
use wsc_core::experiment::{run_sweep, wins, SweepRow};
use wsc_core::labelkit::{mean_entropy_of_proportions, mean_label_entropy, LabelVocabulary, MarginalStats, MultiHotLabel};
use wsc_core::memqueue::MemoryQueue;
use wsc_core::numerics::Matf;
use wsc_core::reportconv::io::convert_jsonl;
use wsc_core::reportconv::{convert, Report, RuleSet};
use wsc_core::trainer::{grad_check_run, train_step, BatchSource, StepSettings, TrainState};
use wsc_core::wscloss::{wsc_grad_sigma, wsc_loss, Direction, SimilarityBundle};

fn assets() -> (LabelVocabulary, RuleSet) {
    let v = LabelVocabulary::default_33();
    let r = RuleSet::bundled(&v).unwrap();
    (v, r)
}

fn report(n: u8, pass: bool, detail: String) {
    eprintln!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn random_z(rng: &mut ChaCha8Rng, n: usize) -> Matf {
    Matf::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0))
}

fn random_s(rng: &mut ChaCha8Rng, n: usize) -> Matf {
    let mut s = Matf::from_fn(n, n, |_, _| rng.random_range(0.0..=1.0));
    for i in 0..n {
        s.set(i, i, 1.0);
    }
    s
}

#[test]
fn criterion_1_mle_of_reference_counts() {
    let t0 = Instant::now();
    let (v, _) = assets();
    let stats = MarginalStats::reference();
    let mle = mean_label_entropy(&stats, &v).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let mut p = stats.proportions();
    p.remove(v.others_index());
    let without_others = mean_entropy_of_proportions(&p);
    let pass = (0.135..=0.155).contains(&mle) && secs < 1.0;
    report(
        1,
        pass,
        format!("mLE {mle:.6} over 33 categories ({without_others:.6} without others; published 0.1423) in {secs:.3}s"),
    );
}

#[test]
fn criterion_2_total_loss_gradients() {
    let t0 = Instant::now();
    let (v, r) = assets();
    let cfg = Config::grad_check_toy();
    let mut worst = 0.0f64;
    let mut params = 0;
    for seed in 0..10 {
        let rep = grad_check_run(&cfg, seed, 2, 1e-5, &v, &r).unwrap();
        worst = worst.max(rep.max_rel_error);
        params = rep.num_params;
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        2,
        worst <= 1e-6 && secs < 60.0,
        format!("max relative error {worst:.3e} over 10 seeds, {params} parameters each, {secs:.1}s"),
    );
}

#[test]
fn criterion_3_reduces_to_infonce() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..12);
        let tau = rng.random_range(0.01..1.0);
        let z = random_z(&mut rng, n);
        let b = SimilarityBundle::new(z.clone(), Matf::identity(n), tau).unwrap();
        for (dir, zz) in [(Direction::ImageToText, z.clone()), (Direction::TextToImage, z.transpose())] {
            // softmax cross-entropy with the diagonal as the target class
            let mut ce = 0.0;
            for i in 0..n {
                let row: Vec<f64> = zz.row(i).iter().map(|x| x / tau).collect();
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                ce += lse - row[i];
            }
            ce /= n as f64;
            worst = worst.max((wsc_loss(&b, dir) - ce).abs());
        }
    }
    report(3, worst <= 1e-10, format!("max |wsc - infonce| {worst:.3e} on 100 bundles"));
}

#[test]
fn criterion_4_sigma_gradient_sign_and_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let (mut sign_bad, mut mono_bad) = (0usize, 0usize);
    for _ in 0..1000 {
        let n = rng.random_range(2..9);
        let tau = rng.random_range(0.01..1.0);
        let z = random_z(&mut rng, n);
        let s = random_s(&mut rng, n);
        let b = SimilarityBundle::new(z.clone(), s.clone(), tau).unwrap();
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let g = wsc_grad_sigma(&b, dir);
            sign_bad += (0..n).filter(|&i| -g.get(i, i) < 0.0).count();
        }
        let i = rng.random_range(0..n);
        let j = (i + rng.random_range(1..n)) % n;
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let (gi, gj) = match dir {
                Direction::ImageToText => (i, j),
                Direction::TextToImage => (j, i),
            };
            let mut prev = f64::INFINITY;
            for &x in &grid {
                let mut s2 = s.clone();
                s2.set(i, j, x);
                let g = wsc_grad_sigma(&SimilarityBundle::new(z.clone(), s2, tau).unwrap(), dir);
                let a = g.get(gi, gj).abs();
                // when (1-s)·exp(..) dominates the denominator the magnitude is
                // flat to within rounding, so allow a few ulps
                if a > prev * (1.0 + 8.0 * f64::EPSILON) {
                    mono_bad += 1;
                }
                prev = a;
            }
        }
    }
    report(
        4,
        sign_bad == 0 && mono_bad == 0,
        format!("1000 bundles: {sign_bad} negative diagonal entries, {mono_bad} increases along s grids"),
    );
}

/// Pushes batches of the given sizes and compares against a bounded deque.
fn queue_fifo_holds(batches: &[usize], cap: usize) -> bool {
    let mut q = MemoryQueue::new(cap, 1).unwrap();
    let mut model: VecDeque<f64> = VecDeque::new();
    let mut next = 0.0;
    for k in batches {
        let vals: Vec<f64> = (0..*k).map(|t| next + t as f64).collect();
        next += *k as f64;
        let m = Matf::from_fn(*k, 1, |r, _| vals[r]);
        let labels = vec![MultiHotLabel::from_bits(vec![true]); *k];
        q.push_batch(&m, &m, &labels).unwrap();
        for x in vals {
            model.push_back(x);
            if model.len() > cap {
                model.pop_front();
            }
        }
        let got: Vec<f64> = q.entries().map(|e| e.image[0]).collect();
        if got != model.iter().copied().collect::<Vec<_>>() || q.len() > cap {
            return false;
        }
    }
    true
}

fn momentum_closed_form_error() -> f64 {
    let cfg = Config::grad_check_toy();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let online = EncoderPair::init(cfg.model.image_dims(6), cfg.model.text_dims(), &mut rng).unwrap();
    let other = EncoderPair::init(cfg.model.image_dims(6), cfg.model.text_dims(), &mut rng).unwrap();
    let m = 0.75;
    let mut mom = MomentumPair::from_online(&other, m).unwrap();
    let p0: Vec<f64> = [mom.image.flat(), mom.text.flat()].concat();
    let p: Vec<f64> = [online.image.flat(), online.text.flat()].concat();
    let mut worst = 0.0f64;
    for k in 1..=60 {
        momentum_update_in_place(&online, &mut mom).unwrap();
        let cur: Vec<f64> = [mom.image.flat(), mom.text.flat()].concat();
        let mk = m.powi(k);
        for ((c, a), b) in cur.iter().zip(&p).zip(&p0) {
            worst = worst.max((c - (a + mk * (b - a))).abs());
        }
    }
    worst
}

fn resume_is_bit_exact() -> bool {
    let (v, r) = assets();
    let cfg = Config::grad_check_toy();
    let ds = generate_dataset(&cfg.data, &v, &r).unwrap();
    let src = BatchSource::new(&ds, &cfg, 11).unwrap();
    let s = StepSettings::from(&cfg);
    let mut a = TrainState::init(&cfg, cfg.data.input_dim, 11).unwrap();
    for t in 0..5 {
        train_step(&mut a, &src.batch_at(t), &v, s).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    a.save(&path).unwrap();
    let mut b = TrainState::load(&path).unwrap();
    let mut trace_a = Vec::new();
    let mut trace_b = Vec::new();
    for t in 5..15 {
        trace_a.push(train_step(&mut a, &src.batch_at(t), &v, s).unwrap());
        let batch = src.batch_at(b.step);
        trace_b.push(train_step(&mut b, &batch, &v, s).unwrap());
    }
    trace_a == trace_b && a == b
}

#[test]
fn criterion_5_momentum_queue_and_resume() {
    let closed = momentum_closed_form_error();
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(256));
    let strategy = (1usize..12, proptest::collection::vec(0usize..15, 1..20));
    let fifo = runner
        .run(&strategy, |(cap, batches)| {
            prop_assert!(queue_fifo_holds(&batches, cap));
            Ok(())
        })
        .is_ok();
    let resume = resume_is_bit_exact();
    report(
        5,
        closed <= 1e-12 && fifo && resume,
        format!("closed-form error {closed:.3e}, FIFO properties {fifo}, bit-exact resume {resume}"),
    );
}

#[test]
fn criterion_6_false_negative_trend() {
    let (v, r) = assets();
    let cfg = Config::desk_sweep();
    let t0 = Instant::now();
    let rows = run_sweep(&cfg, &v, &r, None).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let targets = &cfg.experiment.mle_targets;
    let prompt: fn(&SweepRow) -> f64 = |r| r.prompt_recall_at_1;
    let strict: fn(&SweepRow) -> f64 = |r| r.recall_at_1;
    let mut pass = secs < 900.0;
    let mut detail = Vec::new();
    for &t in targets.iter() {
        let (sa, n) = wins(&rows, t, Variant::Sa, Variant::Baseline, prompt);
        let (sabe, _) = wins(&rows, t, Variant::SaBe, Variant::Sa, prompt);
        let (sa_strict, _) = wins(&rows, t, Variant::Sa, Variant::Baseline, strict);
        let gated = t <= targets[1];
        if gated {
            pass &= sa >= 4 && sabe >= 4;
        }
        detail.push(format!(
            "mLE {t}: SA>=baseline {sa}/{n}, SA+BE>=SA {sabe}/{n}{} [in-batch pair R@1 SA>=baseline {sa_strict}/{n}]",
            if gated { "" } else { " (not gated)" }
        ));
    }
    for d in &detail {
        eprintln!("  {d}");
    }
    report(6, pass, format!("prompt-to-image recall@1, {} runs in {secs:.0}s", rows.len()));
}

#[test]
fn criterion_7_converter_golden_files() {
    let (v, r) = assets();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let input = std::fs::read(dir.join("reports.jsonl")).unwrap();
    let expected = std::fs::read(dir.join("labels.jsonl")).unwrap();
    let run = || {
        let mut out = Vec::new();
        let s = convert_jsonl(input.as_slice(), &mut out, &r, &v).unwrap();
        assert!(s.failed.is_empty());
        out
    };
    let (a, b) = (run(), run());
    let names = |text: &str| -> Vec<String> {
        let l = convert(&Report::new("x", text, 100).unwrap(), &r, &v).unwrap();
        v.names_of(&l).into_iter().map(String::from).collect()
    };
    let examples = [
        ("双眼糖网", vec!["diabetic retinopathy"]),
        ("RNFLD", vec!["nerve fiber layer defect"]),
        ("建议FFA检查", vec!["others"]),
        ("双眼糖网，建议FFA检查", vec!["diabetic retinopathy"]),
        ("杯盘比大于0.5", vec!["large optic cup"]),
        ("动静脉比小于2:3", vec!["thin arteries"]),
    ];
    let named = examples.iter().all(|(t, want)| names(t) == *want);
    report(
        7,
        a == expected && a == b && named,
        format!(
            "golden match {}, byte-identical reruns {}, worked examples {named}",
            a == expected,
            a == b
        ),
    );
}

fn oracle_auc(s: &[f64], g: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in (0..s.len()).filter(|&i| g[i]) {
        for q in (0..s.len()).filter(|&i| !g[i]) {
            den += 1.0;
            num += if s[p] > s[q] {
                1.0
            } else if s[p] == s[q] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn oracle_ap(s: &[f64], g: &[bool]) -> f64 {
    // position of item i: items strictly above it plus equal-score items with a lower index
    let pos = |i: usize| (0..s.len()).filter(|&j| s[j] > s[i] || (s[j] == s[i] && j < i)).count() + 1;
    let pos_items: Vec<usize> = (0..s.len()).filter(|&i| g[i]).collect();
    let mut total = 0.0;
    for &i in &pos_items {
        let k = pos(i);
        let hits = pos_items.iter().filter(|&&j| pos(j) <= k).count();
        total += hits as f64 / k as f64;
    }
    total / pos_items.len() as f64
}

#[test]
fn criterion_8_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut tables = 0;
    while tables < 50 {
        let (items, classes) = (rng.random_range(3..10), rng.random_range(1..5));
        // coarse scores so ties occur
        let scores = Matf::from_fn(items, classes, |_, _| (rng.random_range(0..5) as f64) / 4.0);
        let gold: Vec<Vec<bool>> = (0..items).map(|_| (0..classes).map(|_| rng.random_bool(0.4)).collect()).collect();
        let table = ScoreTable::new(scores.clone(), gold.clone()).unwrap();
        let (Ok(a), Ok(m)) = (auc(&table), map_score(&table)) else { continue };
        tables += 1;
        let (mut oa, mut om, mut k) = (0.0, 0.0, 0.0);
        for c in 0..classes {
            let s: Vec<f64> = (0..items).map(|i| scores.get(i, c)).collect();
            let g: Vec<bool> = (0..items).map(|i| gold[i][c]).collect();
            let pos = g.iter().filter(|&&b| b).count();
            if pos == 0 || pos == items {
                assert!(a.per_class[c].is_none());
                continue;
            }
            let (x, y) = (oracle_auc(&s, &g), oracle_ap(&s, &g));
            worst = worst.max((a.per_class[c].unwrap() - x).abs());
            worst = worst.max((m.per_class[c].unwrap() - y).abs());
            oa += x;
            om += y;
            k += 1.0;
        }
        worst = worst.max((a.mean - oa / k).abs()).max((m.mean - om / k).abs());

        let n = rng.random_range(2..9);
        let z = Matf::from_fn(n, n, |_, _| (rng.random_range(0..6) as f64) / 5.0);
        let got = retrieval_metrics(&z).unwrap();
        for (zz, dir) in [(z.clone(), got.i2t), (z.transpose(), got.t2i)] {
            let mut ranks = Vec::new();
            for i in 0..n {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&p, &q| zz.get(i, q).total_cmp(&zz.get(i, p)).then(p.cmp(&q)));
                ranks.push(order.iter().position(|&j| j == i).unwrap() + 1);
            }
            let r1 = ranks.iter().filter(|&&r| r == 1).count() as f64 / n as f64;
            let r5 = ranks.iter().filter(|&&r| r <= 5).count() as f64 / n as f64;
            let mr = ranks.iter().sum::<usize>() as f64 / n as f64;
            worst = worst
                .max((dir.recall_at_1 - r1).abs())
                .max((dir.recall_at_5 - r5).abs())
                .max((dir.mean_rank - mr).abs());
        }
    }
    report(8, worst <= 1e-12, format!("max deviation {worst:.3e} over {tables} tables"));
}
