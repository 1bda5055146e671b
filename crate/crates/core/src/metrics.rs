//! Saliency evaluation: precision/recall at 256 integer thresholds, the
//! precision-weighted F-measure, and mean absolute error.

use std::io::Write;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const THRESHOLDS: usize = 256;
/// β² of the F-measure; values below 1 weight precision above recall.
pub const BETA_SQ: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Indexed by threshold `0..=255`.
    pub pr: Vec<PrPoint>,
    pub max_f: f64,
    pub mae: f64,
}

/// How per-image results are combined into a dataset score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FAggregation {
    /// Average the PR curves over images, then take the maximum F-measure.
    #[default]
    MeanCurve,
    /// Average the per-image maximum F-measures.
    MeanOfMax,
}

/// `round(255·s)` clamped to the byte range.
pub fn quantize(s: f64) -> u8 {
    (255.0 * s).round().clamp(0.0, 255.0) as u8
}

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs groundtruth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

fn check_binary(gt: &Tensor) -> Result<()> {
    if let Some((i, v)) = gt.data().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidGroundtruth(format!(
            "groundtruth value {v} at index {i} is not 0 or 1"
        )));
    }
    Ok(())
}

/// Precision and recall at every threshold `t ∈ 0..=255`, counting a pixel
/// as positive when `quantize(pred) >= t`. Precision is 1 when nothing is
/// predicted positive; recall is 1 when the groundtruth is empty.
pub fn pr_curve(pred: &Tensor, gt: &Tensor) -> Result<Vec<PrPoint>> {
    check_pair(pred, gt)?;
    check_binary(gt)?;
    let mut pos = [0u64; THRESHOLDS];
    let mut neg = [0u64; THRESHOLDS];
    for (&s, &g) in pred.data().iter().zip(gt.data()) {
        let q = quantize(s) as usize;
        if g == 1.0 {
            pos[q] += 1;
        } else {
            neg[q] += 1;
        }
    }
    let total_pos: u64 = pos.iter().sum();
    let mut out = vec![
        PrPoint {
            precision: 0.0,
            recall: 0.0
        };
        THRESHOLDS
    ];
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..THRESHOLDS).rev() {
        tp += pos[t];
        fp += neg[t];
        out[t] = PrPoint {
            precision: if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            },
            recall: if total_pos == 0 {
                1.0
            } else {
                tp as f64 / total_pos as f64
            },
        };
    }
    Ok(out)
}

/// `(1 + β²)·P·R / (β²·P + R)`, defined as 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let denom = beta_sq * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / denom
    }
}

pub fn max_f_measure(pr: &[PrPoint]) -> f64 {
    pr.iter()
        .map(|p| f_measure(p.precision, p.recall, BETA_SQ))
        .fold(0.0, f64::max)
}

pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_pair(pred, gt)?;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(s, g)| (s - g).abs()).sum();
    Ok(sum / pred.len() as f64)
}

pub fn evaluate(pred: &Tensor, gt: &Tensor) -> Result<MetricsReport> {
    let pr = pr_curve(pred, gt)?;
    Ok(MetricsReport {
        max_f: max_f_measure(&pr),
        mae: mae(pred, gt)?,
        pr,
    })
}

/// Dataset-level report from per-image reports.
pub fn aggregate(reports: &[MetricsReport], mode: FAggregation) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero reports".into()));
    }
    let n = reports.len() as f64;
    let mut pr = vec![
        PrPoint {
            precision: 0.0,
            recall: 0.0
        };
        THRESHOLDS
    ];
    for r in reports {
        for (acc, p) in pr.iter_mut().zip(&r.pr) {
            acc.precision += p.precision;
            acc.recall += p.recall;
        }
    }
    for p in &mut pr {
        p.precision /= n;
        p.recall /= n;
    }
    let max_f = match mode {
        FAggregation::MeanCurve => max_f_measure(&pr),
        FAggregation::MeanOfMax => reports.iter().map(|r| r.max_f).sum::<f64>() / n,
    };
    let mae = reports.iter().map(|r| r.mae).sum::<f64>() / n;
    Ok(MetricsReport { pr, max_f, mae })
}

/// Writes `threshold,precision,recall` with one row per threshold.
pub fn write_pr_csv(mut w: impl Write, pr: &[PrPoint]) -> std::io::Result<()> {
    writeln!(w, "threshold,precision,recall")?;
    for (t, p) in pr.iter().enumerate() {
        writeln!(w, "{t},{:.6},{:.6}", p.precision, p.recall)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor {
        Tensor::from_vec(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn perfect_map() {
        let gt = t(&[1.0, 0.0, 0.0, 1.0, 1.0]);
        let pr = pr_curve(&gt, &gt).unwrap();
        for p in &pr[1..] {
            assert_eq!((p.precision, p.recall), (1.0, 1.0));
        }
        assert_eq!(max_f_measure(&pr), 1.0);
        assert_eq!(mae(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_prediction() {
        let gt = t(&[1.0, 0.0, 0.0, 0.0]);
        let pred = t(&[0.0; 4]);
        let pr = pr_curve(&pred, &gt).unwrap();
        assert!(pr[1..].iter().all(|p| p.recall == 0.0));
        // only t = 0 marks everything positive: P = density, R = 1
        assert!((max_f_measure(&pr) - f_measure(0.25, 1.0, BETA_SQ)).abs() < 1e-15);
    }

    #[test]
    fn f_measure_values() {
        assert!((f_measure(0.5, 0.5, BETA_SQ) - 0.5).abs() < 1e-15);
        assert_eq!(f_measure(1.0, 0.0, BETA_SQ), 0.0);
        assert_eq!(f_measure(0.0, 0.0, BETA_SQ), 0.0);
        assert!((f_measure(0.8, 0.6, BETA_SQ) - 0.742857).abs() < 1e-6);
    }

    #[test]
    fn mae_values() {
        assert_eq!(mae(&t(&[1.0; 4]), &t(&[0.0; 4])).unwrap(), 1.0);
        assert_eq!(mae(&t(&[0.5, 0.5, 1.0, 0.0]), &t(&[1.0, 0.0, 1.0, 0.0])).unwrap(), 0.25);
    }

    #[test]
    fn empty_groundtruth_convention() {
        let pr = pr_curve(&t(&[0.0, 0.9]), &t(&[0.0, 0.0])).unwrap();
        assert!(pr.iter().all(|p| p.recall == 1.0));
        assert_eq!(pr[255].precision, 1.0);
        assert_eq!(pr[0].precision, 0.0);
    }

    #[test]
    fn non_binary_groundtruth_is_rejected() {
        assert!(matches!(
            pr_curve(&t(&[0.3, 0.2]), &t(&[0.5, 1.0])),
            Err(Error::InvalidGroundtruth(_))
        ));
        assert!(matches!(
            pr_curve(&t(&[0.3]), &t(&[0.0, 1.0])),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let gt = t(&[1.0, 0.0]);
        let pr = pr_curve(&t(&[0.7, 0.2]), &gt).unwrap();
        let mut buf = Vec::new();
        write_pr_csv(&mut buf, &pr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 257);
        assert_eq!(lines[0], "threshold,precision,recall");
        assert_eq!(lines[1], "0,0.500000,1.000000");
        assert_eq!(lines[256], "255,1.000000,0.000000");
    }

    #[test]
    fn aggregation_modes() {
        let gt = t(&[1.0, 0.0, 1.0, 0.0]);
        let a = evaluate(&t(&[0.9, 0.1, 0.8, 0.2]), &gt).unwrap();
        let b = evaluate(&t(&[0.2, 0.9, 0.8, 0.1]), &gt).unwrap();
        let curve = aggregate(&[a.clone(), b.clone()], FAggregation::MeanCurve).unwrap();
        let per_image = aggregate(&[a.clone(), b.clone()], FAggregation::MeanOfMax).unwrap();
        assert!((per_image.max_f - (a.max_f + b.max_f) / 2.0).abs() < 1e-15);
        assert!(curve.max_f <= per_image.max_f + 1e-12);
        assert!((curve.mae - (a.mae + b.mae) / 2.0).abs() < 1e-15);
    }
}
