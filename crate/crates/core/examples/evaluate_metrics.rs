//! Retrieval and multi-label ranking metrics on small hand-made tables.

use wsc_core::evalkit::{auc, class_recall_at_1, map_score, retrieval_metrics, ScoreTable};
use wsc_core::numerics::Matf;

fn main() -> wsc_core::Result<()> {
    let z = Matf::from_rows(
        &[vec![0.9, 0.2, 0.1], vec![0.3, 0.4, 0.8], vec![0.0, 0.1, 0.7]],
        3,
    )?;
    let r = retrieval_metrics(&z)?;
    println!("image->text {:?}\ntext->image {:?}", r.i2t, r.t2i);

    let scores = Matf::from_rows(&[vec![0.9, 0.2], vec![0.6, 0.6], vec![0.3, 0.8], vec![0.1, 0.4]], 2)?;
    let gold = vec![vec![true, false], vec![true, true], vec![false, true], vec![false, false]];
    let table = ScoreTable::new(scores, gold)?;
    println!("AUC {:?}", auc(&table)?);
    println!("mAP {:?}", map_score(&table)?);
    println!("class recall@1 {:?}", class_recall_at_1(&table)?);
    Ok(())
}
