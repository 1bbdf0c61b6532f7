//! Dice overlap, confusion-matrix metrics and the Wald interval.
//!
//! The positive class is COVID. Metrics whose denominator is zero are
//! reported as 0.0 so macro F1 is always defined.

use std::fmt;

use crate::error::{Error, Result};
use crate::imaging::Mask;
use crate::pipeline::Label;

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.0.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidArgument(format!(
            "dice of {:?} and {:?} masks",
            a.dims(),
            b.dims()
        )));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x && y);
        total += usize::from(x) + usize::from(y);
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Mean and minimum dice over `(predicted, truth)` pairs.
pub fn dice_summary<'a>(
    pairs: impl IntoIterator<Item = (&'a Mask, &'a Mask)>,
) -> Result<(f64, f64)> {
    let scores = pairs
        .into_iter()
        .map(|(p, t)| dice(p, t))
        .collect::<Result<Vec<_>>>()?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("dice summary of zero pairs".into()));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((mean, min))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same outcomes with the other class treated as positive.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(predicted: &[Label], truth: &[Label]) -> Result<ConfusionCounts> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (Label::Covid, Label::Covid) => c.tp += 1,
            (Label::Covid, Label::NonCovid) => c.fp += 1,
            (Label::NonCovid, Label::NonCovid) => c.tn += 1,
            (Label::NonCovid, Label::Covid) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_positive: f64,
    pub f1_negative: f64,
    pub macro_f1: f64,
    /// Wald half-width of the macro F1 over `counts.total()` samples.
    pub ci_halfwidth: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub const Z_95: f64 = 1.96;

pub fn report(c: ConfusionCounts) -> Result<MetricsReport> {
    let n = c.total();
    if n == 0 {
        return Err(Error::InvalidArgument("metrics of zero samples".into()));
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let npv = ratio(c.tn, c.tn + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    let f1_positive = harmonic(precision, recall);
    let f1_negative = harmonic(npv, specificity);
    let macro_f1 = (f1_positive + f1_negative) / 2.0;
    Ok(MetricsReport {
        counts: c,
        accuracy: ratio(c.tp + c.tn, n),
        precision,
        recall,
        f1_positive,
        f1_negative,
        macro_f1,
        ci_halfwidth: wald_ci(macro_f1, n, Z_95)?,
    })
}

/// Wald half-width `z * sqrt(score * (1 - score) / n)`.
pub fn wald_ci(score: f64, n: u64, z: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "confidence interval with n = 0".into(),
        ));
    }
    Ok(z * (score * (1.0 - score) / n as f64).sqrt())
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "tp,fp,tn,fn,accuracy,precision,recall,f1_covid,f1_noncovid,macro_f1,ci_halfwidth";

    pub fn csv_row(&self) -> String {
        let c = self.counts;
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1_positive,
            self.f1_negative,
            self.macro_f1,
            self.ci_halfwidth
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.counts;
        writeln!(f, "                 pred COVID  pred non-COVID")?;
        writeln!(f, "true COVID       {:>10}  {:>14}", c.tp, c.fn_)?;
        writeln!(f, "true non-COVID   {:>10}  {:>14}", c.fp, c.tn)?;
        writeln!(f)?;
        let rows = [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("F1 (COVID)", self.f1_positive),
            ("F1 (non-COVID)", self.f1_negative),
            ("macro F1", self.macro_f1),
        ];
        for (name, v) in rows {
            writeln!(f, "{name:<16} {v:.4}")?;
        }
        write!(
            f,
            "macro F1 95% CI  {:.4} +/- {:.4}",
            self.macro_f1, self.ci_halfwidth
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: usize, y0: usize, side: usize) -> Mask {
        Mask::from_fn(10, 10, |x, y| {
            (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
        })
    }

    #[test]
    fn dice_cases() {
        let a = square(0, 0, 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &square(5, 5, 2)).unwrap(), 0.0);
        assert_eq!(dice(&a, &square(1, 0, 2)).unwrap(), 0.5);
        assert_eq!(dice(&Mask::empty(3, 3), &Mask::empty(3, 3)).unwrap(), 1.0);
        assert!(dice(&a, &Mask::empty(3, 3)).is_err());
    }

    #[test]
    fn dice_summary_cases() {
        let a = square(0, 0, 2);
        let b = square(1, 0, 2);
        assert_eq!(dice_summary([(&a, &a), (&a, &b)]).unwrap(), (0.75, 0.5));
        assert_eq!(dice_summary([(&b, &a)]).unwrap(), (0.5, 0.5));
        assert!(dice_summary(std::iter::empty()).is_err());
    }

    #[test]
    fn confusion_cases() {
        use Label::*;
        let truth: Vec<_> = (0..10)
            .map(|i| if i < 5 { Covid } else { NonCovid })
            .collect();
        let c = confusion(&[Covid; 10], &truth).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 5,
                fp: 5,
                tn: 0,
                fn_: 0
            }
        );
        assert_eq!(confusion(&truth, &truth).unwrap().fp, 0);
        assert_eq!(confusion(&[], &[]).unwrap(), ConfusionCounts::default());
        assert!(confusion(&[Covid], &[]).is_err());
    }

    #[test]
    fn report_zero_total_is_error() {
        assert!(report(ConfusionCounts::default()).is_err());
    }

    #[test]
    fn wald_cases() {
        assert!((wald_ci(0.87, 69921, Z_95).unwrap() - 0.0025).abs() <= 1e-4);
        assert!((wald_ci(0.81, 106862, Z_95).unwrap() - 0.00235).abs() <= 1e-4);
        assert_eq!(wald_ci(0.0, 17, Z_95).unwrap(), 0.0);
        assert!(wald_ci(0.5, 0, Z_95).is_err());
    }

    proptest! {
        #[test]
        fn report_in_unit_interval(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
            let c = ConfusionCounts { tp, fp, tn, fn_ };
            prop_assume!(c.total() > 0);
            let r = report(c).unwrap();
            for v in [r.accuracy, r.precision, r.recall, r.f1_positive, r.f1_negative, r.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let s = report(c.swapped()).unwrap();
            prop_assert_eq!(s.macro_f1, r.macro_f1);
        }

        #[test]
        fn wald_peaks_at_half(p in 0.0f64..=1.0, n in 1u64..10_000) {
            let at = wald_ci(p, n, Z_95).unwrap();
            prop_assert!(at <= wald_ci(0.5, n, Z_95).unwrap());
            if p > 0.0 && p < 1.0 {
                prop_assert!(wald_ci(p, n + 1, Z_95).unwrap() < at);
            }
        }

        #[test]
        fn dice_symmetric(bits_a in proptest::collection::vec(any::<bool>(), 36),
                          bits_b in proptest::collection::vec(any::<bool>(), 36)) {
            let a = Mask::new(6, 6, bits_a).unwrap();
            let b = Mask::new(6, 6, bits_b).unwrap();
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }
    }
}
