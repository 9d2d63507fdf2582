//! Confusion matrices, per-class precision/recall/F1 and their aggregation
//! across splits.
//!
//! A rate whose denominator is zero is reported as 0 and listed in
//! [`ClassificationReport::zero_division`].

use serde::{Deserialize, Serialize};

use super::CvError;
use crate::data::{Label, LabeledPatch};
use crate::model::{predict, Model};
use crate::tensor::Tape;
use crate::transformer::Pass;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True members of the class in the evaluated set.
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Rates that hit a zero denominator, e.g. `"precision:spinach"`.
    pub zero_division: Vec<String>,
    /// Macro F1 of each split.
    pub split_f1: Vec<f64>,
    pub f1_mean: f64,
    /// Population standard deviation of `split_f1`.
    pub f1_std: f64,
    /// Population standard deviation of each class's F1 across splits.
    pub class_f1_std: Vec<f64>,
    pub train_size: usize,
    /// Mean cross-entropy on the evaluated set.
    pub loss: f64,
}

fn class_name(c: usize) -> String {
    Label::from_index(c).map_or_else(|| format!("class{c}"), |l| l.name().to_string())
}

fn ratio(num: u64, den: u64, flag: String, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(flag);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Report for one evaluated set from true and predicted class indices.
pub fn evaluate_predictions(
    truth: &[usize],
    predicted: &[usize],
    num_classes: usize,
) -> Result<ClassificationReport, CvError> {
    if truth.is_empty() {
        return Err(CvError::Empty("evaluation"));
    }
    assert_eq!(truth.len(), predicted.len(), "one prediction per sample");
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let mut flags = Vec::new();
    let mut classes = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted_c: u64 = confusion.iter().map(|row| row[c]).sum();
        let name = class_name(c);
        let precision = ratio(tp, predicted_c, format!("precision:{name}"), &mut flags);
        let recall = ratio(tp, support, format!("recall:{name}"), &mut flags);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            flags.push(format!("f1:{name}"));
            0.0
        };
        classes.push(ClassMetrics {
            class: name,
            precision,
            recall,
            f1,
            support,
        });
    }
    let k = num_classes as f64;
    let macro_f1 = classes.iter().map(|c| c.f1).sum::<f64>() / k;
    let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(ClassificationReport {
        macro_precision: classes.iter().map(|c| c.precision).sum::<f64>() / k,
        macro_recall: classes.iter().map(|c| c.recall).sum::<f64>() / k,
        macro_f1,
        accuracy: correct as f64 / truth.len() as f64,
        confusion,
        class_f1_std: vec![0.0; num_classes],
        classes,
        zero_division: flags,
        split_f1: vec![macro_f1],
        f1_mean: macro_f1,
        f1_std: 0.0,
        train_size: 0,
        loss: 0.0,
    })
}

/// Classifies `patches` in batches and reports metrics plus mean cross-entropy.
pub fn evaluate(model: &Model, patches: &[&LabeledPatch], batch_size: usize) -> Result<ClassificationReport, CvError> {
    if patches.is_empty() {
        return Err(CvError::Empty("evaluation"));
    }
    let num_classes = model.architecture().num_classes();
    let mut truth = Vec::with_capacity(patches.len());
    let mut predicted = Vec::with_capacity(patches.len());
    let mut loss_sum = 0.0;
    for chunk in patches.chunks(batch_size.max(1)) {
        let images = model.batch(chunk.iter().copied())?;
        let labels: Vec<usize> = chunk.iter().map(|p| p.label.index()).collect();
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &images, false, &mut Pass::default())?;
        let loss = tape.cross_entropy(f.logits, &labels)?;
        loss_sum += tape.value(loss).item() * chunk.len() as f64;
        let logits = tape.value(f.logits);
        for (i, &t) in labels.iter().enumerate() {
            truth.push(t);
            predicted.push(predict(logits.row(i)));
        }
    }
    let mut report = evaluate_predictions(&truth, &predicted, num_classes)?;
    report.loss = loss_sum / patches.len() as f64;
    Ok(report)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Combines split reports: rates are averaged, confusion matrices summed and
/// spreads are population standard deviations over the splits.
pub fn aggregate_reports(reports: &[ClassificationReport]) -> Result<ClassificationReport, CvError> {
    let first = reports.first().ok_or(CvError::Empty("report"))?;
    let num_classes = first.classes.len();
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for r in reports {
        for (row, src) in confusion.iter_mut().zip(&r.confusion) {
            row.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    let column = |f: &dyn Fn(&ClassificationReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let mut classes = Vec::with_capacity(num_classes);
    let mut class_f1_std = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let (f1, f1_std) = mean_std(&column(&|r| r.classes[c].f1));
        class_f1_std.push(f1_std);
        classes.push(ClassMetrics {
            class: first.classes[c].class.clone(),
            precision: mean_std(&column(&|r| r.classes[c].precision)).0,
            recall: mean_std(&column(&|r| r.classes[c].recall)).0,
            f1,
            support: reports.iter().map(|r| r.classes[c].support).sum(),
        });
    }
    let split_f1 = column(&|r| r.macro_f1);
    let (f1_mean, f1_std) = mean_std(&split_f1);
    let zero_division = reports
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.zero_division.iter().map(move |f| format!("split{i}:{f}")))
        .collect();
    Ok(ClassificationReport {
        confusion,
        classes,
        macro_precision: mean_std(&column(&|r| r.macro_precision)).0,
        macro_recall: mean_std(&column(&|r| r.macro_recall)).0,
        macro_f1: f1_mean,
        accuracy: mean_std(&column(&|r| r.accuracy)).0,
        zero_division,
        split_f1,
        f1_mean,
        f1_std,
        class_f1_std,
        train_size: (reports.iter().map(|r| r.train_size).sum::<usize>() as f64 / reports.len() as f64).round()
            as usize,
        loss: mean_std(&column(&|r| r.loss)).0,
    })
}

impl ClassificationReport {
    /// Per-class table rows plus a `macro` row, as CSV with columns
    /// `class,k,precision,recall,f1_mean,f1_std`.
    pub fn table3_rows(&self, k: usize) -> String {
        let mut out = String::new();
        for (c, m) in self.classes.iter().enumerate() {
            out.push_str(&format!(
                "{},{k},{:.6},{:.6},{:.6},{:.6}\n",
                m.class, m.precision, m.recall, m.f1, self.class_f1_std[c]
            ));
        }
        out.push_str(&format!(
            "macro,{k},{:.6},{:.6},{:.6},{:.6}\n",
            self.macro_precision, self.macro_recall, self.f1_mean, self.f1_std
        ));
        out
    }

    /// Human-readable per-class table.
    pub fn pretty(&self) -> String {
        let mut out = format!(
            "{:<14} {:>9} {:>9} {:>9} {:>8}\n",
            "class", "precision", "recall", "f1", "support"
        );
        for m in &self.classes {
            out.push_str(&format!(
                "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
                m.class, m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!(
            "{:<14} {:>9.4} {:>9.4} {:>9.4}\naccuracy {:.4}  loss {:.4}\n",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1, self.accuracy, self.loss
        ));
        if self.split_f1.len() > 1 {
            out.push_str(&format!(
                "F1 over {} splits: {:.4} ± {:.4}\n",
                self.split_f1.len(),
                self.f1_mean,
                self.f1_std
            ));
        }
        out
    }
}

pub const TABLE3_HEADER: &str = "class,k,precision,recall,f1_mean,f1_std\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let truth = [0, 1, 2, 3, 4, 0];
        let r = evaluate_predictions(&truth, &truth, 5).unwrap();
        assert!(r
            .classes
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!(r.accuracy, 1.0);
        assert!(r.zero_division.is_empty());
    }

    #[test]
    fn hand_worked_class() {
        // class 0: TP 8, FP 2, FN 0
        let mut truth = vec![0; 8];
        let mut pred = vec![0; 8];
        truth.extend([1, 1]);
        pred.extend([0, 0]);
        let r = evaluate_predictions(&truth, &pred, 5).unwrap();
        assert!((r.classes[0].precision - 0.8).abs() < 1e-15);
        assert_eq!(r.classes[0].recall, 1.0);
        assert!((r.classes[0].f1 - 2.0 * 0.8 / 1.8).abs() < 1e-15);
        assert!(r.zero_division.contains(&"precision:beet".to_string()));
        assert!(r.zero_division.contains(&"recall:spinach".to_string()));
    }

    #[test]
    fn aggregation_examples() {
        let one = evaluate_predictions(&[0, 1], &[0, 1], 2).unwrap();
        let agg = aggregate_reports(&vec![one.clone(); 5]).unwrap();
        assert_eq!((agg.f1_mean, agg.f1_std), (1.0, 0.0));
        let zero = evaluate_predictions(&[0, 1], &[1, 0], 2).unwrap();
        let agg = aggregate_reports(&[one, zero]).unwrap();
        assert_eq!((agg.f1_mean, agg.f1_std), (0.5, 0.5));
        assert!(aggregate_reports(&[]).is_err());
    }
}
