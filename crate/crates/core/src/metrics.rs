//! Confusion matrices, per-class precision / recall / F1 and top-k accuracy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Prediction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    /// `None` when the class occurs in neither truth nor predictions.
    pub f1: Option<f64>,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: usize,
    pub samples: usize,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassScores>,
    /// Mean F1 over classes that occur in truth or predictions.
    pub macro_f1: f64,
    pub top1: f64,
    pub top5: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Classes ordered by descending probability, ties by ascending index.
fn ranking(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx
}

impl ClassificationReport {
    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        let probs: Vec<Vec<f64>> = predicted
            .iter()
            .map(|&p| {
                let mut v = vec![0.0; classes];
                if p < classes {
                    v[p] = 1.0;
                }
                v
            })
            .collect();
        if let Some(&bad) = predicted.iter().find(|&&p| p >= classes) {
            return Err(Error::Index(format!("prediction {bad} outside [0, {classes})")));
        }
        Self::from_distributions(truth, &probs, classes)
    }

    /// Top-1 is the argmax of each distribution.
    pub fn from_distributions(truth: &[usize], probs: &[Vec<f64>], classes: usize) -> Result<Self> {
        if truth.len() != probs.len() {
            return Err(Error::shape("metrics", &[truth.len()], &[probs.len()]));
        }
        if classes == 0 {
            return Err(Error::Config("metrics need at least one class".into()));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut top5_hits = 0;
        for (&t, p) in truth.iter().zip(probs) {
            if t >= classes {
                return Err(Error::Index(format!("label {t} outside [0, {classes})")));
            }
            if p.len() != classes {
                return Err(Error::shape("metrics", &[classes], &[p.len()]));
            }
            confusion[t][argmax(p)] += 1;
            if ranking(p).iter().take(5).any(|&c| c == t) {
                top5_hits += 1;
            }
        }
        let mut per_class = Vec::with_capacity(classes);
        let mut f1_sum = 0.0;
        let mut present = 0;
        for c in 0..classes {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if support + predicted == 0 {
                None
            } else {
                Some(ratio(2 * tp, support + predicted))
            };
            if let Some(v) = f1 {
                f1_sum += v;
                present += 1;
            }
            per_class.push(ClassScores {
                precision,
                recall,
                f1,
                support,
            });
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        Ok(ClassificationReport {
            classes,
            samples: truth.len(),
            confusion,
            per_class,
            macro_f1: if present == 0 { 0.0 } else { f1_sum / present as f64 },
            top1: ratio(correct, truth.len()),
            top5: ratio(top5_hits, truth.len()),
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.top1
    }

    fn write_table(&self, out: &mut String, title: &str, names: &[&str]) {
        let _ = writeln!(
            out,
            "{title}: macro F1 {:.4}  top-1 {:.4}  top-5 {:.4}  (n = {})",
            self.macro_f1, self.top1, self.top5, self.samples
        );
        let _ = writeln!(out, "  {:<12} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for (c, s) in self.per_class.iter().enumerate() {
            let name = names.get(c).map_or_else(|| c.to_string(), |n| n.to_string());
            let f1 = s.f1.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "  {:<12} {:>9.4} {:>9.4} {:>9} {:>8}",
                name, s.precision, s.recall, f1, s.support
            );
        }
        let _ = writeln!(out, "  confusion (rows = truth):");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            let _ = writeln!(out, "  {}", cells.join(""));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub activity: ClassificationReport,
    /// Absent when no object carries an affordance label.
    pub affordance: Option<ClassificationReport>,
}

/// Ground truth needed to score predictions of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTruth {
    pub activity: usize,
    /// `(instance, affordance)` for labeled objects.
    pub affordances: Vec<(usize, usize)>,
}

impl MetricsReport {
    pub fn evaluate(
        predictions: &[Prediction],
        truth: &[VideoTruth],
        activities: usize,
        affordances: usize,
    ) -> Result<Self> {
        if predictions.len() != truth.len() {
            return Err(Error::shape("evaluate", &[predictions.len()], &[truth.len()]));
        }
        let act_truth: Vec<usize> = truth.iter().map(|t| t.activity).collect();
        let act_probs: Vec<Vec<f64>> = predictions.iter().map(|p| p.activity.clone()).collect();
        let activity = ClassificationReport::from_distributions(&act_truth, &act_probs, activities)?;

        let mut aff_truth = Vec::new();
        let mut aff_probs = Vec::new();
        for (p, t) in predictions.iter().zip(truth) {
            for &(m, label) in &t.affordances {
                let dist = p
                    .affordances
                    .iter()
                    .find(|(k, _)| *k == m)
                    .ok_or_else(|| Error::Data(format!("video {}: no prediction for instance {m}", p.video_id)))?;
                aff_truth.push(label);
                aff_probs.push(dist.1.clone());
            }
        }
        let affordance = if aff_truth.is_empty() {
            None
        } else {
            Some(ClassificationReport::from_distributions(&aff_truth, &aff_probs, affordances)?)
        };
        Ok(MetricsReport { activity, affordance })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_table(&self, activity_names: &[&str], affordance_names: &[&str]) -> String {
        let mut out = String::new();
        self.activity.write_table(&mut out, "sub-activity", activity_names);
        if let Some(a) = &self.affordance {
            a.write_table(&mut out, "affordance", affordance_names);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_sample_hand_case() {
        let r = ClassificationReport::from_labels(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(r.per_class[0].f1, Some(2.0 / 3.0));
        assert_eq!(r.per_class[1].f1, Some(2.0 / 3.0));
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn all_correct_and_all_wrong() {
        let r = ClassificationReport::from_labels(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        let r = ClassificationReport::from_labels(&[0, 1, 1], &[2, 2, 2], 3).unwrap();
        assert_eq!(r.macro_f1, 0.0);
        assert_eq!(r.per_class[2].precision, 0.0);
    }

    #[test]
    fn absent_class_is_not_averaged() {
        let r = ClassificationReport::from_labels(&[0, 0], &[0, 0], 4).unwrap();
        assert_eq!(r.per_class[3].f1, None);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn top5_covers_small_class_counts() {
        let r = ClassificationReport::from_distributions(&[2], &[vec![0.5, 0.3, 0.2]], 3).unwrap();
        assert_eq!((r.top1, r.top5), (0.0, 1.0));
        let p = vec![0.3, 0.2, 0.15, 0.12, 0.11, 0.07, 0.05];
        let r = ClassificationReport::from_distributions(&[5, 4], &[p.clone(), p], 7).unwrap();
        assert_eq!(r.top5, 0.5);
    }
}
