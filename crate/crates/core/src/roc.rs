//! Voxel-level ROC and AUC with half-credit ties (Mann-Whitney).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive. The origin uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub curve: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::validation(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    Ok((n_pos, n_neg))
}

fn sorted_pairs(scores: &[f64], labels: &[bool]) -> Vec<(f64, bool)> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    // total_cmp separates -0.0 and 0.0, but tie groups below use `==`
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Iterate tie groups of an ascending-sorted list as `(score, pos, neg)`.
fn tie_groups(pairs: &[(f64, bool)]) -> impl Iterator<Item = (f64, u64, u64)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= pairs.len() {
            return None;
        }
        let s = pairs[i].0;
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        Some((s, pos, neg))
    })
}

/// AUC in O(n log n). Counts are kept as doubled integers, so the result
/// is exactly `(#{pos > neg} + #{ties} / 2) / (n_pos * n_neg)` rounded once.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let pairs = sorted_pairs(scores, labels);
    let mut neg_below = 0u128;
    let mut twice_u = 0u128;
    for (_, pos, neg) in tie_groups(&pairs) {
        twice_u += 2 * pos as u128 * neg_below + pos as u128 * neg as u128;
        neg_below += neg as u128;
    }
    Ok(twice_u as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// O(n²) pairwise reference for [`auc`].
pub fn auc_bruteforce(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let mut twice_u = 0u128;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            if sp > sn {
                twice_u += 2;
            } else if sp == sn {
                twice_u += 1;
            }
        }
    }
    Ok(twice_u as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// ROC curve swept from the highest score down; each tie group is one point.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let auc_value = auc(scores, labels)?;
    let pairs = sorted_pairs(scores, labels);
    let groups: Vec<_> = tie_groups(&pairs).collect();
    let mut curve = Vec::with_capacity(groups.len() + 1);
    curve.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(s, pos, neg) in groups.iter().rev() {
        tp += pos;
        fp += neg;
        curve.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(RocResult {
        auc: auc_value,
        curve,
        n_pos,
        n_neg,
    })
}

impl RocResult {
    pub fn trapezoid_area(&self) -> f64 {
        self.curve
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::validation(format!("csv: {e}"));
        w.write_record(["threshold", "fpr", "tpr"])
            .map_err(csv_err)?;
        for p in &self.curve {
            w.write_record([
                p.threshold.to_string(),
                p.fpr.to_string(),
                p.tpr.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::validation(format!("csv flush: {e}")))?;
        Ok(())
    }

    /// Summary without the curve.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "auc": self.auc,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_points": self.curve.len(),
        })
    }
}

/// Scores and labels for tumour-vs-healthy delineation within the breast:
/// positives are `tumour ∩ breast`, negatives `breast \ tumour`.
pub fn delineation_samples(
    modality: &ScalarVolume,
    tumour: &MaskVolume,
    breast: &MaskVolume,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if modality.shape() != tumour.shape() || modality.shape() != breast.shape() {
        return Err(Error::validation("modality and masks must share a shape"));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, &v) in modality.data().iter().enumerate() {
        if breast.is_set(i) {
            scores.push(v);
            labels.push(tumour.is_set(i));
        }
    }
    Ok((scores, labels))
}

/// AUC of `modality` separating tumour from healthy breast. Not
/// orientation-corrected: inverted contrast reports below 0.5.
pub fn delineation_auc(
    modality: &ScalarVolume,
    tumour: &MaskVolume,
    breast: &MaskVolume,
) -> Result<f64> {
    let (scores, labels) = delineation_samples(modality, tumour, breast)?;
    auc(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Shape3, Unit};
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&l| l == 1).collect()
    }

    #[test]
    fn worked_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = labels(&[0, 0, 1, 1]);
        assert_eq!(auc(&s, &l).unwrap(), 0.75);
        assert_eq!(auc_bruteforce(&s, &l).unwrap(), 0.75);
    }

    #[test]
    fn perfect_and_tied() {
        let l = labels(&[0, 0, 1, 1]);
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &l).unwrap(), 1.0);
        assert_eq!(auc(&[5.0; 4], &l).unwrap(), 0.5);
    }

    #[test]
    fn bruteforce_two_point() {
        assert_eq!(auc_bruteforce(&[1.0, 2.0], &labels(&[0, 1])).unwrap(), 1.0);
        assert_eq!(auc_bruteforce(&[2.0, 1.0], &labels(&[0, 1])).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc(&[1.0, 2.0], &labels(&[1, 1])),
            Err(Error::UndefinedAuc(_))
        ));
        assert!(matches!(
            auc_bruteforce(&[1.0], &labels(&[0])),
            Err(Error::UndefinedAuc(_))
        ));
        assert!(auc(&[1.0], &labels(&[0, 1])).is_err());
        assert!(auc(&[f64::NAN, 1.0], &labels(&[0, 1])).is_err());
    }

    #[test]
    fn signed_zeros_tie() {
        let l = labels(&[0, 1]);
        assert_eq!(auc(&[0.0, -0.0], &l).unwrap(), 0.5);
    }

    #[test]
    fn curve_perfect_passes_top_left() {
        let r = roc_curve(&[0.1, 0.2, 0.8, 0.9], &labels(&[0, 0, 1, 1])).unwrap();
        assert!(r.curve.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(r.curve.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(r.curve.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn curve_binary_scores_three_points() {
        let r = roc_curve(&[0.0, 1.0, 1.0, 0.0, 1.0], &labels(&[0, 1, 0, 1, 1])).unwrap();
        assert_eq!(r.curve.len(), 3);
        assert!((r.trapezoid_area() - r.auc).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_points() {
        let r = roc_curve(&[0.0, 1.0], &labels(&[0, 1])).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "threshold,fpr,tpr\ninf,0,0\n1,0,1\n0,1,1\n");
    }

    fn vol(data: Vec<f64>) -> ScalarVolume {
        ScalarVolume::new(Shape3::new(1, 1, data.len()).unwrap(), Unit::Signal, data).unwrap()
    }

    fn mask(data: &[u8]) -> MaskVolume {
        MaskVolume::new(Shape3::new(1, 1, data.len()).unwrap(), data.to_vec()).unwrap()
    }

    #[test]
    fn delineation_uses_breast_only() {
        // voxel 0 is tumour outside the breast and must be ignored
        let m = vol(vec![-100.0, 5.0, 6.0, 1.0, 2.0, 99.0]);
        let tumour = mask(&[1, 1, 1, 0, 0, 0]);
        let breast = mask(&[0, 1, 1, 1, 1, 0]);
        assert_eq!(delineation_auc(&m, &tumour, &breast).unwrap(), 1.0);
        let inverted = vol(m.data().iter().map(|v| -v).collect());
        assert_eq!(delineation_auc(&inverted, &tumour, &breast).unwrap(), 0.0);
        assert_eq!(
            delineation_auc(&vol(vec![3.0; 6]), &tumour, &breast).unwrap(),
            0.5
        );
    }

    #[test]
    fn delineation_empty_class() {
        let m = vol(vec![1.0, 2.0]);
        assert!(matches!(
            delineation_auc(&m, &mask(&[0, 0]), &mask(&[1, 1])),
            Err(Error::UndefinedAuc(_))
        ));
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((-64i32..64).prop_map(|q| q as f64 / 8.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_bruteforce((s, l) in scored()) {
            let fast = auc(&s, &l);
            let slow = auc_bruteforce(&s, &l);
            match (fast, slow) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "mismatch {other:?}"),
            }
        }

        #[test]
        fn monotone_invariance((s, l) in scored()) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let base = auc(&s, &l).unwrap();
            let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            let affine: Vec<f64> = s.iter().map(|v| 3.0 * v + 7.0).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert_eq!(auc(&exp, &l).unwrap(), base);
            prop_assert_eq!(auc(&affine, &l).unwrap(), base);
            prop_assert!((auc(&neg, &l).unwrap() - (1.0 - base)).abs() <= 1e-12);
        }

        #[test]
        fn trapezoid_equals_auc((s, l) in scored()) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let r = roc_curve(&s, &l).unwrap();
            prop_assert!((r.trapezoid_area() - r.auc).abs() <= 1e-12);
            prop_assert!(r.curve.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        }
    }
}
