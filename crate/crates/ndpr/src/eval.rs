//! Precision/recall/F over recovered pronouns, per-tag breakdown, and the
//! ablation grid over model variants.
//!
//! A prediction counts as correct only when both the token position and the
//! pronoun type match the gold tag. "None" positions never enter the
//! precision/recall numerators or denominators.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::data::{Example, TagSet};
use crate::model::Model;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TagStats {
    pub tag: String,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// Micro-averaged over all non-None predictions and golds.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_dropped_pronouns: usize,
    pub predicted_dropped_pronouns: usize,
    pub correct: usize,
    pub per_tag: Vec<TagStats>,
    /// confusion[gold][predicted] over every token position.
    pub confusion: Vec<Vec<usize>>,
    /// Supplementary diagnostic: position-only credit, ignoring the type.
    pub position_precision: f64,
    pub position_recall: f64,
    pub position_f1: f64,
}

pub fn prf(correct: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted > 0 { correct as f64 / predicted as f64 } else { 0.0 };
    let r = if gold > 0 { correct as f64 / gold as f64 } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Score aligned (gold, predicted) tag sequences.
pub fn score_predictions(
    pairs: &[(Vec<usize>, Vec<usize>)],
    tags: &TagSet,
) -> EvalReport {
    let t = tags.len();
    let mut confusion = vec![vec![0usize; t]; t];
    let mut position_correct = 0usize;
    for (gold, pred) in pairs {
        assert_eq!(gold.len(), pred.len(), "prediction/gold length mismatch");
        for (&g, &p) in gold.iter().zip(pred) {
            confusion[g][p] += 1;
            if g != 0 && p != 0 {
                position_correct += 1;
            }
        }
    }
    let gold_total: usize = confusion.iter().enumerate().filter(|(g, _)| *g != 0).map(|(_, row)| row.iter().sum::<usize>()).sum();
    let pred_total: usize = (1..t).map(|p| confusion.iter().map(|row| row[p]).sum::<usize>()).sum();
    let correct: usize = (1..t).map(|i| confusion[i][i]).sum();

    let (precision, recall, f1) = prf(correct, pred_total, gold_total);
    let (pp, pr, pf) = prf(position_correct, pred_total, gold_total);

    let per_tag = (1..t)
        .map(|i| {
            let gold: usize = confusion[i].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            let correct = confusion[i][i];
            let (p, r, f) = prf(correct, predicted, gold);
            TagStats {
                tag: tags.name(i).to_string(),
                gold,
                predicted,
                correct,
                precision: p,
                recall: r,
                f1: f,
            }
        })
        .collect();

    EvalReport {
        precision,
        recall,
        f1,
        gold_dropped_pronouns: gold_total,
        predicted_dropped_pronouns: pred_total,
        correct,
        per_tag,
        confusion,
        position_precision: pp,
        position_recall: pr,
        position_f1: pf,
    }
}

/// Tag every example with the model and score against gold.
pub fn evaluate(
    model: &Model,
    params: &ParamSet,
    examples: &[Example],
    tags: &TagSet,
) -> EvalReport {
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = examples
        .iter()
        .map(|ex| (ex.tags.clone(), model.predict(params, ex).0))
        .collect();
    score_predictions(&pairs, tags)
}

/// Render the report in the headline percent format plus a per-tag table.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "P(%)  R(%)  F\n{:.2} {:.2} {:.2}\n",
        100.0 * report.precision,
        100.0 * report.recall,
        100.0 * report.f1
    ));
    out.push_str(&format!(
        "gold DPs: {}  predicted: {}  correct: {}\n",
        report.gold_dropped_pronouns, report.predicted_dropped_pronouns, report.correct
    ));
    out.push_str(&format!(
        "position-only (diagnostic): P {:.2}% R {:.2}% F {:.2}\n",
        100.0 * report.position_precision,
        100.0 * report.position_recall,
        100.0 * report.position_f1
    ));
    out.push_str("per tag:\n");
    for t in &report.per_tag {
        if t.gold == 0 && t.predicted == 0 {
            continue;
        }
        out.push_str(&format!(
            "  {:<20} gold {:>5}  pred {:>5}  P {:>6.2}%  R {:>6.2}%  F {:>5.2}\n",
            t.tag,
            t.gold,
            t.predicted,
            100.0 * t.precision,
            100.0 * t.recall,
            100.0 * t.f1
        ));
    }
    out
}

/// One row of the variant grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRow {
    pub variant: String,
    pub seed: u64,
    pub report: EvalReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags() -> TagSet {
        TagSet::default_conversational()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let pairs = vec![(vec![0, 3, 0], vec![0, 3, 0]), (vec![5, 0], vec![5, 0])];
        let r = score_predictions(&pairs, &tags());
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.gold_dropped_pronouns, 2);
    }

    #[test]
    fn all_none_predictions_score_zero_by_convention() {
        let pairs = vec![(vec![0, 3, 4], vec![0, 0, 0])];
        let r = score_predictions(&pairs, &tags());
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.predicted_dropped_pronouns, 0);
    }

    #[test]
    fn one_hit_one_miss_one_spurious_gives_half() {
        // 2 gold DPs; model recovers one exactly and adds one spurious DP.
        let pairs = vec![(vec![3, 0, 4, 0], vec![3, 0, 0, 5])];
        let r = score_predictions(&pairs, &tags());
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn wrong_type_at_right_position_counts_only_for_position_diagnostic() {
        let pairs = vec![(vec![3, 0], vec![4, 0])];
        let r = score_predictions(&pairs, &tags());
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.position_f1, 1.0);
    }

    #[test]
    fn per_tag_counts_follow_confusion_matrix() {
        let pairs = vec![(vec![3, 3, 4, 0], vec![3, 4, 4, 0])];
        let r = score_predictions(&pairs, &tags());
        let t3 = &r.per_tag[2]; // tag id 3 is per_tag index 2
        assert_eq!((t3.gold, t3.predicted, t3.correct), (2, 1, 1));
        let t4 = &r.per_tag[3];
        assert_eq!((t4.gold, t4.predicted, t4.correct), (1, 2, 1));
        assert_eq!(r.confusion[3][4], 1);
        // None row excluded from totals.
        assert_eq!(r.gold_dropped_pronouns, 3);
        assert_eq!(r.predicted_dropped_pronouns, 3);
    }

    #[test]
    fn bounds_hold() {
        let pairs = vec![(vec![0, 1, 2, 3], vec![1, 1, 0, 2])];
        let r = score_predictions(&pairs, &tags());
        for v in [r.precision, r.recall, r.f1, r.position_precision, r.position_recall] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn report_formats_headline_percentages() {
        let pairs = vec![(vec![3, 0], vec![3, 0])];
        let text = format_report(&score_predictions(&pairs, &tags()));
        assert!(text.contains("P(%)  R(%)  F"));
        assert!(text.contains("100.00 100.00 100.00"));
    }
}
